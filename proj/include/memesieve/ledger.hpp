#pragma once

#include <chrono>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace memesieve {

// One line of ledger.jsonl per command invocation.
struct LedgerEntry {
  std::string command;
  std::vector<std::pair<std::string, std::string>> inputs;   // path, digest
  std::vector<std::pair<std::string, std::string>> outputs;  // path, digest
  std::string config_digest;
  std::uint64_t seed = 0;
  std::string status = "ok";
  std::string error;
  double wall_seconds = 0.0;
};

// Appends one JSON line under an exclusive flock; never rewrites earlier
// lines. Creates the file and its directory when missing.
void append_ledger(const std::filesystem::path& ledger, const LedgerEntry& entry);

// $MEMESIEVE_HOME, or ./memesieve-home when unset.
std::filesystem::path memesieve_home();

// Digest of a file, or of every regular file under a directory (sorted by
// relative path).
std::string digest_path(const std::filesystem::path& path);

}  // namespace memesieve
