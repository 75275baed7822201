#include <json.hpp>

#include <cstring>
#include <fstream>
#include <map>

#include "memesieve/common.hpp"
#include "memesieve/ita_model.hpp"

namespace memesieve {

using json = nlohmann::json;

namespace {

constexpr char kMagic[8] = {'I', 'T', 'A', 'C', 'K', 'P', 'T', '\0'};

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw Error(ErrorKind::invalid_input, "truncated checkpoint " + path.string());
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ItaModel& model) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot write checkpoint " + path.string());

  json meta;
  meta["config"] = json::parse(model.config().to_json());
  meta["has_head"] = model.has_head();
  const std::string meta_text = meta.dump();

  std::size_t count = 0;
  model.parameters().for_each([&](const std::string&, ParamGroup, const Eigen::MatrixXd&) { ++count; });

  out.write(kMagic, sizeof(kMagic));
  put(out, kCheckpointFormatVersion);
  put(out, static_cast<std::uint32_t>(meta_text.size()));
  out.write(meta_text.data(), static_cast<std::streamsize>(meta_text.size()));
  put(out, static_cast<std::uint32_t>(count));
  model.parameters().for_each([&](const std::string& name, ParamGroup, const Eigen::MatrixXd& m) {
    put(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put(out, static_cast<std::uint64_t>(m.rows()));
    put(out, static_cast<std::uint64_t>(m.cols()));
    // Row-major on disk regardless of Eigen's storage order.
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) put(out, m(r, c));
    }
  });
  if (!out) throw Error(ErrorKind::io, "failed writing checkpoint " + path.string());
}

ItaModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::not_found, "checkpoint not found: " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
    throw Error(ErrorKind::invalid_input, "not an .itackpt checkpoint: " + path.string());
  }
  const auto version = get<std::uint32_t>(in, path);
  if (version != kCheckpointFormatVersion) {
    throw Error(ErrorKind::invalid_input, "unsupported checkpoint format version " + std::to_string(version));
  }
  const auto meta_len = get<std::uint32_t>(in, path);
  std::string meta_text(meta_len, '\0');
  in.read(meta_text.data(), meta_len);
  json meta = json::parse(meta_text, nullptr, false);
  if (meta.is_discarded()) throw Error(ErrorKind::invalid_input, "corrupt checkpoint metadata in " + path.string());
  const auto config = ItaConfig::from_json(meta.at("config").dump());
  const bool has_head = meta.value("has_head", false);

  std::map<std::string, Eigen::MatrixXd> arrays;
  const auto count = get<std::uint32_t>(in, path);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = get<std::uint32_t>(in, path);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const auto rows = get<std::uint64_t>(in, path);
    const auto cols = get<std::uint64_t>(in, path);
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = get<double>(in, path);
    }
    arrays.emplace(std::move(name), std::move(m));
  }

  ItaParameters params;
  params.layers.resize(static_cast<std::size_t>(config.num_layers));
  params.has_head = has_head;
  params.for_each([&](const std::string& name, ParamGroup, Eigen::MatrixXd& m) {
    auto it = arrays.find(name);
    if (it == arrays.end()) throw Error(ErrorKind::invalid_input, "checkpoint is missing parameter " + name);
    m = std::move(it->second);
  });
  return ItaModel(config, std::move(params));
}

ItaModel load_checkpoint(const std::filesystem::path& path, const ItaConfig& expected) {
  auto model = load_checkpoint(path);
  if (!(model.config() == expected)) {
    throw Error(ErrorKind::config_mismatch, "checkpoint " + path.string() + " has ItaConfig " + model.config().to_json() +
                                                " but the run expects " + expected.to_json());
  }
  return model;
}

}  // namespace memesieve
