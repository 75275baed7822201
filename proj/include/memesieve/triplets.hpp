#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "memesieve/cmgen.hpp"

namespace memesieve {

struct FilterVerdict {
  int y_text = 0;   // 1 = offensive text
  int y_image = 0;  // 1 = NSFW image
  bool operator==(const FilterVerdict&) const = default;
};

class TextFilter {
 public:
  virtual ~TextFilter() = default;
  virtual std::string name() const = 0;
  virtual int offensive(std::string_view text) const = 0;
};

class ImageFilter {
 public:
  virtual ~ImageFilter() = default;
  virtual std::string name() const = 0;
  virtual int nsfw(const ImageInput& image) const = 0;
};

// Flags text containing any lexicon word (case-insensitive, whole words).
class LexiconTextFilter final : public TextFilter {
 public:
  explicit LexiconTextFilter(std::vector<std::string> words);
  std::string name() const override { return "lexicon"; }
  int offensive(std::string_view text) const override;

 private:
  std::vector<std::string> words_;
};

// Flags images whose share of skin-tone pixels exceeds the threshold.
class SkinToneImageFilter final : public ImageFilter {
 public:
  explicit SkinToneImageFilter(double threshold = 0.5) : threshold_(threshold) {}
  std::string name() const override { return "skin-tone"; }
  int nsfw(const ImageInput& image) const override;
  static double skin_fraction(const ImageInput& image);

 private:
  double threshold_;
};

FilterVerdict filter_meme(const MemeRecord& meme, const TextFilter& text_filter, const ImageFilter& image_filter);

enum class NonHateCombo { generated_pair, original_image, original_text };  // (I+,T+), (I,T+), (I+,T)
enum class HateCombo { retrieved_pair, original_image, original_text };     // (I-,T-), (I,T-), (I-,T)

std::string_view combo_tag(NonHateCombo c);
std::string_view combo_tag(HateCombo c);

// Eligible sets in a fixed order; the first entry is always eligible.
std::vector<NonHateCombo> eligible_nonhateful(const FilterVerdict& verdict);
std::vector<HateCombo> eligible_hateful(const FilterVerdict& verdict);

// Uniform over the eligible set.
NonHateCombo sample_nonhateful(const FilterVerdict& verdict, std::mt19937_64& rng);
HateCombo sample_hateful(const FilterVerdict& verdict, std::mt19937_64& rng);

struct PairSource {
  std::string image_path;
  std::string text;
};

struct SelectedPair {
  std::string combo;
  PairSource source;
};

SelectedPair assemble_nonhateful(const PairSource& anchor, const PairSource& generated, const FilterVerdict& verdict,
                                 std::mt19937_64& rng);
SelectedPair assemble_hateful(const PairSource& anchor, const PairSource& retrieved, const FilterVerdict& verdict,
                              std::mt19937_64& rng);

struct TripletRecord {
  std::string id;
  int label = 0;
  PairSource anchor;
  SelectedPair nonhate;
  SelectedPair hate;
  FilterVerdict verdict;
  std::uint64_t seed = 0;
  std::string reference_id;
  double reference_distance = 0.0;
  std::string provenance_digest;
};

struct SkippedMeme {
  std::string id;
  std::string reason;
};

struct TripletManifest {
  std::vector<TripletRecord> records;
  std::vector<SkippedMeme> skipped;
  std::string config_digest;

  std::size_t count() const { return records.size(); }
};

struct TripletBuildContext {
  const GenerationBackends* backends = nullptr;
  const TextFilter* text_filter = nullptr;
  const ImageFilter* image_filter = nullptr;
  const ReferenceIndex* index = nullptr;
  const DualEncoder* encoder = nullptr;
  std::filesystem::path output_dir;  // generated/{id}/ lands here; paths in records are relative to it
  std::filesystem::path corpus_dir;  // base for the anchors' relative image paths
  std::filesystem::path index_dir;   // base for reference image paths
  std::string config_digest;
};

// separate -> generate positive -> retrieve negative -> filter -> assemble,
// per meme in input order. Memes that fail are skipped and recorded.
TripletManifest build_triplets(const std::vector<MemeRecord>& corpus, const TripletBuildContext& ctx, std::uint64_t seed);

// JSONL: a header line {"kind":"header",...} then one record per line.
void write_triplet_manifest(const std::filesystem::path& path, const TripletManifest& manifest);
TripletManifest read_triplet_manifest(const std::filesystem::path& path);

}  // namespace memesieve
