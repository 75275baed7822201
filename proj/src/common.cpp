#include "memesieve/common.hpp"

#include <array>
#include <fstream>
#include <sstream>

namespace memesieve {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_input: return "invalid_input";
    case ErrorKind::dimension_mismatch: return "dimension_mismatch";
    case ErrorKind::config_mismatch: return "config_mismatch";
    case ErrorKind::not_found: return "not_found";
    case ErrorKind::io: return "io";
    case ErrorKind::backend_unavailable: return "backend_unavailable";
    case ErrorKind::backend_failure: return "backend_failure";
    case ErrorKind::divergence: return "divergence";
  }
  return "unknown";
}

int Error::exit_code() const noexcept {
  switch (kind_) {
    case ErrorKind::backend_unavailable:
    case ErrorKind::backend_failure:
    case ErrorKind::divergence:
      return 2;
    default:
      return 1;
  }
}

void Fnv1a::update(std::span<const std::uint8_t> bytes) {
  for (std::uint8_t b : bytes) {
    state_ ^= b;
    state_ *= 0x100000001b3ULL;
  }
}

void Fnv1a::update(std::string_view text) {
  update(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string Fnv1a::hex() const { return to_hex(state_); }

std::string to_hex(std::uint64_t value) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kDigits[value & 0xF];
    value >>= 4;
  }
  return out;
}

std::string digest_bytes(std::span<const std::uint8_t> bytes) {
  Fnv1a h;
  h.update(bytes);
  return h.hex();
}

std::string digest_text(std::string_view text) {
  Fnv1a h;
  h.update(text);
  return h.hex();
}

std::string digest_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::not_found, "cannot open " + path.string());
  Fnv1a h;
  std::array<char, 1 << 14> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    auto n = static_cast<std::size_t>(in.gcount());
    h.update(std::span(reinterpret_cast<const std::uint8_t*>(buf.data()), n));
  }
  return h.hex();
}

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t s = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
  return splitmix64(s);
}

std::uint64_t derive_seed(std::uint64_t root, std::string_view name) {
  Fnv1a h;
  h.update(name);
  return mix_seed(root, h.value());
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::not_found, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
}

}  // namespace memesieve
