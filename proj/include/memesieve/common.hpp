#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

namespace memesieve {

inline constexpr std::string_view kCodeVersion = "0.3.1";

enum class ErrorKind {
  invalid_input,
  dimension_mismatch,
  config_mismatch,
  not_found,
  io,
  backend_unavailable,
  backend_failure,
  divergence,
};

std::string_view to_string(ErrorKind kind);

// Every library failure is reported through this type so the CLI can map it
// onto an exit code and a machine-readable error record.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

  // 1 for bad inputs/configuration, 2 for failures while running.
  int exit_code() const noexcept;

 private:
  ErrorKind kind_;
};

// FNV-1a 64-bit. Used for content digests and stable seed derivation; not a
// cryptographic hash.
class Fnv1a {
 public:
  void update(std::span<const std::uint8_t> bytes);
  void update(std::string_view text);
  template <typename T>
  void update_pod(const T& value) {
    update(std::span(reinterpret_cast<const std::uint8_t*>(&value), sizeof(T)));
  }
  std::uint64_t value() const noexcept { return state_; }
  std::string hex() const;

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::string to_hex(std::uint64_t value);
std::string digest_bytes(std::span<const std::uint8_t> bytes);
std::string digest_text(std::string_view text);
std::string digest_file(const std::filesystem::path& path);

std::uint64_t splitmix64(std::uint64_t& state);
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

// Fans a root seed out into independent streams keyed by a stable name.
std::uint64_t derive_seed(std::uint64_t root, std::string_view name);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view content);

}  // namespace memesieve
