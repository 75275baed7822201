#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "memesieve/encoder.hpp"
#include "memesieve/image.hpp"
#include "memesieve/training.hpp"

namespace memesieve {

// Procedural memes for tests and smoke runs. Hateful memes carry a dark red
// emblem and (usually) a lexicon word; benign ones a bright green disc and
// neutral text. Every meme has a white caption banner across the top whose
// rows form the caption mask.
struct SyntheticMeme {
  std::string id;
  ImageInput image;
  Mask caption_mask;
  std::string text;
  int label = 0;
};

struct SyntheticOptions {
  int height = 64;
  int width = 64;
  double skin_background_rate = 0.15;  // share of memes on a skin-tone background
  double offensive_text_rate = 0.7;    // share of hateful memes whose text hits the lexicon
};

// Words the synthetic hateful captions draw from; also the default lexicon
// written into generated configs.
const std::vector<std::string>& synthetic_lexicon();

SyntheticMeme make_synthetic_meme(const std::string& id, int label, std::uint64_t seed,
                                  const SyntheticOptions& options = {});

// Labels alternate 0/1 so the corpus is balanced.
std::vector<SyntheticMeme> make_synthetic_corpus(int count, std::uint64_t seed, const std::string& prefix = "meme",
                                                 const SyntheticOptions& options = {}, int forced_label = -1);

// Writes images/, masks/ and corpus.jsonl under dir; returns the manifest path.
std::filesystem::path write_synthetic_corpus(const std::filesystem::path& dir, const std::vector<SyntheticMeme>& memes,
                                             const std::string& manifest_name = "corpus.jsonl");

// Encoded triplets whose variants are drawn from fresh synthetic memes of
// each class.
std::vector<TripletExample> synthetic_triplets(const DualEncoder& encoder, int count, std::uint64_t seed);
std::vector<LabeledExample> synthetic_labeled(const DualEncoder& encoder, int count, std::uint64_t seed);

}  // namespace memesieve
