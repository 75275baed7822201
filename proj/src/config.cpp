#include "memesieve/config.hpp"

#include <json.hpp>
#include <yaml-cpp/yaml.h>

#include <functional>
#include <map>
#include <sstream>

#include "memesieve/cmgen.hpp"
#include "memesieve/common.hpp"

namespace memesieve {

using ordered_json = nlohmann::ordered_json;

RunConfig::RunConfig() { cmgen.positive_prompt = std::string(kPositiveCaptionPrompt); }

namespace {

[[noreturn]] void bad(const std::string& key, const std::string& what) {
  throw Error(ErrorKind::invalid_input, "config key '" + key + "': " + what);
}

template <typename T>
T scalar(const YAML::Node& node, const std::string& key) {
  if (!node.IsScalar()) bad(key, "expected a scalar");
  try {
    return node.as<T>();
  } catch (const YAML::Exception&) {
    bad(key, "cannot parse '" + node.Scalar() + "'");
  }
}

using Setter = std::function<void(const YAML::Node&, const std::string&)>;

template <typename T>
Setter set(T& field) {
  return [&field](const YAML::Node& n, const std::string& key) { field = scalar<T>(n, key); };
}

void apply_section(const YAML::Node& node, const std::string& section, const std::map<std::string, Setter>& keys) {
  if (!node.IsMap()) bad(section, "expected a mapping");
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    const auto it = keys.find(key);
    if (it == keys.end()) bad(section + "." + key, "unknown key");
    it->second(kv.second, section + "." + key);
  }
}

void apply(const YAML::Node& root, RunConfig& c) {
  if (!root || root.IsNull()) return;
  if (!root.IsMap()) throw Error(ErrorKind::invalid_input, "config document must be a mapping");

  std::map<std::string, Setter> encoder{{"backend", set(c.encoder.backend)},
                                        {"mock_seed", set(c.encoder.mock_seed)},
                                        {"reference_store", set(c.encoder.reference_store)}};
  std::map<std::string, Setter> cmgen{{"positive_prompt", set(c.cmgen.positive_prompt)},
                                      {"inpainter", set(c.cmgen.inpainter)},
                                      {"captioner", set(c.cmgen.captioner)},
                                      {"text_to_image", set(c.cmgen.text_to_image)},
                                      {"generated_height", set(c.cmgen.generated_height)},
                                      {"generated_width", set(c.cmgen.generated_width)}};
  std::map<std::string, Setter> filters{
      {"text", set(c.filters.text)},
      {"image", set(c.filters.image)},
      {"skin_threshold", set(c.filters.skin_threshold)},
      {"lexicon", [&c](const YAML::Node& n, const std::string& key) {
         if (!n.IsSequence()) bad(key, "expected a list of words");
         c.filters.lexicon.clear();
         for (const auto& w : n) c.filters.lexicon.push_back(scalar<std::string>(w, key));
       }}};
  std::map<std::string, Setter> triplets{{"truncate_text", set(c.triplets.truncate_text)}};
  std::map<std::string, Setter> train{
      {"num_layers", set(c.model.num_layers)},
      {"num_heads", set(c.model.num_heads)},
      {"dropout", set(c.model.dropout)},
      {"margin", set(c.train.margin)},
      {"pretrain_lr", set(c.train.pretrain_lr)},
      {"finetune_lr", set(c.train.finetune_lr)},
      {"epochs", set(c.train.epochs)},
      {"adam_eps", set(c.train.adam_eps)},
      {"batch_size", set(c.train.batch_size)},
      {"squared_distance", set(c.train.squared_distance)},
      {"head_only", set(c.train.head_only)},
      {"max_steps", set(c.train.max_steps)},
      {"adam_betas", [&c](const YAML::Node& n, const std::string& key) {
         if (!n.IsSequence() || n.size() != 2) bad(key, "expected [beta1, beta2]");
         c.train.beta1 = scalar<double>(n[0], key);
         c.train.beta2 = scalar<double>(n[1], key);
       }}};
  std::map<std::string, Setter> seg{{"top_k", set(c.seg.top_k)},
                                    {"lambda", set(c.seg.lambda)},
                                    {"strict", set(c.seg.strict)},
                                    {"proposer", set(c.seg.proposer)},
                                    {"luminance_delta", set(c.seg.luminance_delta)},
                                    {"min_object_pixels", set(c.seg.min_object_pixels)}};
  std::map<std::string, Setter> eval{{"threshold", set(c.eval.threshold)}, {"runs", set(c.eval.runs)}};

  for (const auto& kv : root) {
    const auto key = kv.first.as<std::string>();
    const YAML::Node& v = kv.second;
    if (key == "seed") c.seed = scalar<std::uint64_t>(v, key);
    else if (key == "output_dir") c.output_dir = scalar<std::string>(v, key);
    else if (key == "encoder") apply_section(v, key, encoder);
    else if (key == "cmgen") apply_section(v, key, cmgen);
    else if (key == "filters") apply_section(v, key, filters);
    else if (key == "triplets") apply_section(v, key, triplets);
    else if (key == "train") apply_section(v, key, train);
    else if (key == "seg") apply_section(v, key, seg);
    else if (key == "eval") apply_section(v, key, eval);
    else bad(key, "unknown section");
  }
}

void validate(const RunConfig& c) {
  if (c.encoder.backend != "mock" && c.encoder.backend != "reference") bad("encoder.backend", "expected mock or reference");
  for (const auto* b : {&c.cmgen.inpainter, &c.cmgen.captioner, &c.cmgen.text_to_image}) {
    if (*b != "mock") bad("cmgen", "only the mock generation backends are built in (got '" + *b + "')");
  }
  if (c.cmgen.positive_prompt.empty()) bad("cmgen.positive_prompt", "must not be empty");
  if (c.cmgen.generated_height < 16 || c.cmgen.generated_width < 16) bad("cmgen.generated_height", "must be >= 16");
  if (c.filters.text != "lexicon") bad("filters.text", "expected lexicon");
  if (c.filters.image != "skin_tone") bad("filters.image", "expected skin_tone");
  if (!(c.filters.skin_threshold >= 0.0 && c.filters.skin_threshold <= 1.0)) bad("filters.skin_threshold", "must lie in [0, 1]");
  if (c.model.num_layers < 1) bad("train.num_layers", "must be >= 1");
  if (c.model.num_heads < 1) bad("train.num_heads", "must be >= 1");
  if (!(c.model.dropout >= 0.0 && c.model.dropout < 1.0)) bad("train.dropout", "must lie in [0, 1)");
  c.train.validate();
  if (c.seg.top_k < 1) bad("seg.top_k", "must be >= 1");
  if (!(c.seg.lambda >= 0.0 && c.seg.lambda <= 1.0)) bad("seg.lambda", "must lie in [0, 1]");
  if (c.seg.proposer != "luminance") bad("seg.proposer", "expected luminance");
  if (!(c.eval.threshold >= 0.0 && c.eval.threshold <= 1.0)) bad("eval.threshold", "must lie in [0, 1]");
  if (c.eval.runs < 1) bad("eval.runs", "must be >= 1");
}

}  // namespace

RunConfig load_run_config(const std::optional<std::filesystem::path>& file, const std::vector<std::string>& overrides) {
  YAML::Node root;
  if (file) {
    try {
      root = YAML::Load(read_text_file(*file));
    } catch (const YAML::Exception& e) {
      throw Error(ErrorKind::invalid_input, "cannot parse config " + file->string() + ": " + e.what());
    }
    if (root.IsNull()) root = YAML::Node(YAML::NodeType::Map);
    if (!root.IsMap()) throw Error(ErrorKind::invalid_input, "config document must be a mapping");
  } else {
    root = YAML::Node(YAML::NodeType::Map);
  }
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw Error(ErrorKind::invalid_input, "override '" + o + "' is not key=value");
    const std::string path = o.substr(0, eq);
    YAML::Node value;
    try {
      value = YAML::Load(o.substr(eq + 1));
    } catch (const YAML::Exception& e) {
      throw Error(ErrorKind::invalid_input, "cannot parse override '" + o + "': " + e.what());
    }
    const auto dot = path.find('.');
    if (dot == std::string::npos) {
      root[path] = value;
    } else {
      const std::string section = path.substr(0, dot);
      if (root[section] && !root[section].IsMap()) bad(section, "expected a mapping");
      root[section][path.substr(dot + 1)] = value;
    }
  }
  RunConfig c;
  apply(root, c);
  validate(c);
  return c;
}

std::string RunConfig::to_json() const {
  ordered_json j;
  j["seed"] = seed;
  j["output_dir"] = output_dir;
  j["encoder"] = {{"backend", encoder.backend}, {"mock_seed", encoder.mock_seed}, {"reference_store", encoder.reference_store}};
  j["cmgen"] = {{"positive_prompt", cmgen.positive_prompt}, {"inpainter", cmgen.inpainter},
                {"captioner", cmgen.captioner},             {"text_to_image", cmgen.text_to_image},
                {"generated_height", cmgen.generated_height}, {"generated_width", cmgen.generated_width}};
  j["filters"] = {{"text", filters.text}, {"lexicon", filters.lexicon}, {"image", filters.image},
                  {"skin_threshold", filters.skin_threshold}};
  j["triplets"] = {{"truncate_text", triplets.truncate_text}};
  j["train"] = {{"num_layers", model.num_layers},
                {"num_heads", model.num_heads},
                {"dropout", model.dropout},
                {"margin", train.margin},
                {"pretrain_lr", train.pretrain_lr},
                {"finetune_lr", train.finetune_lr},
                {"epochs", train.epochs},
                {"adam_betas", {train.beta1, train.beta2}},
                {"adam_eps", train.adam_eps},
                {"batch_size", train.batch_size},
                {"squared_distance", train.squared_distance},
                {"head_only", train.head_only},
                {"max_steps", train.max_steps}};
  j["seg"] = {{"top_k", seg.top_k},       {"lambda", seg.lambda},
              {"strict", seg.strict},     {"proposer", seg.proposer},
              {"luminance_delta", seg.luminance_delta}, {"min_object_pixels", seg.min_object_pixels}};
  j["eval"] = {{"threshold", eval.threshold}, {"runs", eval.runs}};
  return j.dump(2);
}

std::string RunConfig::digest() const { return digest_text(to_json()); }

ItaConfig RunConfig::ita_config(const EncoderShape& shape) const {
  auto c = ItaConfig::for_encoder(shape, model.num_layers, model.num_heads);
  c.dropout = model.dropout;
  c.validate();
  return c;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t = train;
  t.seed = seed;
  t.threshold = eval.threshold;
  return t;
}

SegConfig RunConfig::seg_config(const EncoderShape& shape) const {
  auto s = SegConfig::for_shape(shape);
  s.top_k = seg.top_k;
  s.lambda = seg.lambda;
  s.strict = seg.strict;
  return s;
}

std::string default_config_yaml() {
  const RunConfig c;
  std::ostringstream out;
  out << "seed: " << c.seed << "\n"
      << "encoder:\n  backend: " << c.encoder.backend << "\n  mock_seed: " << c.encoder.mock_seed
      << "\n  reference_store: \"\"\n"
      << "cmgen:\n  positive_prompt: \"" << c.cmgen.positive_prompt << "\"\n  inpainter: mock\n  captioner: mock\n"
      << "  text_to_image: mock\n  generated_height: " << c.cmgen.generated_height
      << "\n  generated_width: " << c.cmgen.generated_width << "\n"
      << "filters:\n  text: lexicon\n  lexicon: []\n  image: skin_tone\n  skin_threshold: " << c.filters.skin_threshold << "\n"
      << "triplets:\n  truncate_text: true\n"
      << "train:\n  num_layers: " << c.model.num_layers << "\n  num_heads: " << c.model.num_heads
      << "\n  dropout: " << c.model.dropout << "\n  margin: " << c.train.margin << "\n  pretrain_lr: " << c.train.pretrain_lr
      << "\n  finetune_lr: " << c.train.finetune_lr << "\n  epochs: " << c.train.epochs << "\n  adam_betas: ["
      << c.train.beta1 << ", " << c.train.beta2 << "]\n  adam_eps: " << c.train.adam_eps
      << "\n  batch_size: " << c.train.batch_size << "\n  squared_distance: false\n  head_only: false\n  max_steps: 0\n"
      << "seg:\n  top_k: " << c.seg.top_k << "\n  lambda: " << c.seg.lambda << "\n  strict: false\n  proposer: luminance\n"
      << "  luminance_delta: " << c.seg.luminance_delta << "\n  min_object_pixels: " << c.seg.min_object_pixels << "\n"
      << "eval:\n  threshold: " << c.eval.threshold << "\n  runs: " << c.eval.runs << "\n";
  return out.str();
}

}  // namespace memesieve
