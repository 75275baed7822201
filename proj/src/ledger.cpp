#include "memesieve/ledger.hpp"

#include <json.hpp>

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstdlib>
#include <cstring>
#include <ctime>

#include "memesieve/common.hpp"

namespace memesieve {

namespace {

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

void append_ledger(const std::filesystem::path& ledger, const LedgerEntry& entry) {
  if (ledger.has_parent_path()) std::filesystem::create_directories(ledger.parent_path());
  nlohmann::ordered_json j;
  j["timestamp"] = utc_timestamp();
  j["command"] = entry.command;
  j["code_version"] = std::string(kCodeVersion);
  j["config_digest"] = entry.config_digest;
  j["seed"] = entry.seed;
  j["inputs"] = nlohmann::ordered_json::array();
  for (const auto& [path, digest] : entry.inputs) j["inputs"].push_back({{"path", path}, {"digest", digest}});
  j["outputs"] = nlohmann::ordered_json::array();
  for (const auto& [path, digest] : entry.outputs) j["outputs"].push_back({{"path", path}, {"digest", digest}});
  j["status"] = entry.status;
  if (!entry.error.empty()) j["error"] = entry.error;
  j["wall_seconds"] = entry.wall_seconds;
  const std::string line = j.dump() + "\n";

  const int fd = ::open(ledger.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd < 0) throw Error(ErrorKind::io, "cannot open ledger " + ledger.string() + ": " + std::strerror(errno));
  if (::flock(fd, LOCK_EX) != 0) {
    ::close(fd);
    throw Error(ErrorKind::io, "cannot lock ledger " + ledger.string());
  }
  std::size_t written = 0;
  while (written < line.size()) {
    const ssize_t n = ::write(fd, line.data() + written, line.size() - written);
    if (n < 0) {
      if (errno == EINTR) continue;
      ::flock(fd, LOCK_UN);
      ::close(fd);
      throw Error(ErrorKind::io, "failed writing ledger " + ledger.string());
    }
    written += static_cast<std::size_t>(n);
  }
  ::flock(fd, LOCK_UN);
  ::close(fd);
}

std::filesystem::path memesieve_home() {
  const char* env = std::getenv("MEMESIEVE_HOME");
  return env && *env ? std::filesystem::path(env) : std::filesystem::path("memesieve-home");
}

std::string digest_path(const std::filesystem::path& path) {
  if (!std::filesystem::is_directory(path)) return digest_file(path);
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(path)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  Fnv1a h;
  for (const auto& f : files) {
    h.update(f.lexically_relative(path).generic_string());
    h.update(digest_file(f));
  }
  return h.hex();
}

}  // namespace memesieve
