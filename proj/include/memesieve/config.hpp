#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "memesieve/encoder.hpp"
#include "memesieve/ita_model.hpp"
#include "memesieve/segmentation.hpp"
#include "memesieve/training.hpp"

namespace memesieve {

struct CmgenSection {
  std::string positive_prompt;
  std::string inpainter = "mock";
  std::string captioner = "mock";
  std::string text_to_image = "mock";
  int generated_height = 64;
  int generated_width = 64;
};

struct FiltersSection {
  std::string text = "lexicon";
  std::vector<std::string> lexicon;
  std::string image = "skin_tone";
  double skin_threshold = 0.5;
};

struct TripletsSection {
  bool truncate_text = true;  // cut over-long captions to L_T instead of skipping the meme
};

// Model shape; lives under the train section of the file.
struct ModelSection {
  int num_layers = 6;
  int num_heads = 8;
  double dropout = 0.0;
};

struct SegSection {
  int top_k = 5;
  double lambda = 0.5;
  bool strict = false;
  std::string proposer = "luminance";
  double luminance_delta = 0.2;
  int min_object_pixels = 16;
};

struct EvalSection {
  double threshold = 0.5;
  int runs = 1;
};

// Resolved run configuration. Sources, lowest precedence first: built-in
// defaults, the YAML file, then key=value overrides (flags map onto these).
struct RunConfig {
  std::uint64_t seed = 0;
  std::string output_dir;
  EncoderConfig encoder;
  CmgenSection cmgen;
  FiltersSection filters;
  TripletsSection triplets;
  ModelSection model;
  TrainConfig train;
  SegSection seg;
  EvalSection eval;

  RunConfig();

  std::string to_json() const;  // stable key order, pretty-printed
  std::string digest() const;

  ItaConfig ita_config(const EncoderShape& shape) const;
  TrainConfig train_config() const;  // train section with the global seed and eval threshold
  SegConfig seg_config(const EncoderShape& shape) const;
};

// Unknown sections or keys, and values of the wrong type, are invalid_input
// errors naming the offending key.
RunConfig load_run_config(const std::optional<std::filesystem::path>& file, const std::vector<std::string>& overrides);

// The default configuration as YAML, for `memesieve show-config --defaults`.
std::string default_config_yaml();

}  // namespace memesieve
