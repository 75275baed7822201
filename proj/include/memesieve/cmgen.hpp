#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "memesieve/encoder.hpp"
#include "memesieve/image.hpp"

namespace memesieve {

inline constexpr std::string_view kPositiveCaptionPrompt =
    "Please generate a positive and descriptive caption for the provided image";

struct MemeRecord {
  std::string id;
  ImageInput image;
  Mask caption_mask;  // 1 = caption pixel
  std::string text;
  std::optional<int> label;
  std::string image_path;  // as written in the source manifest, may be empty
};

void validate_record(const MemeRecord& record);

// Reads a corpus manifest (JSONL with id, image_path, mask_path, text and an
// optional label). Relative paths resolve against the manifest's directory.
std::vector<MemeRecord> read_corpus(const std::filesystem::path& manifest);

class Inpainter {
 public:
  virtual ~Inpainter() = default;
  virtual std::string name() const = 0;
  virtual ImageInput inpaint(const ImageInput& image, const Mask& mask) const = 0;
};

class Captioner {
 public:
  virtual ~Captioner() = default;
  virtual std::string name() const = 0;
  virtual std::string caption(const ImageInput& image, std::string_view prompt) const = 0;
};

class TextToImage {
 public:
  virtual ~TextToImage() = default;
  virtual std::string name() const = 0;
  virtual ImageInput generate(std::string_view text) const = 0;
};

// Fills every 8-connected masked region with the per-channel mean of the
// unmasked pixels that touch it (its one-pixel border ring). Pixels outside
// the mask are copied unchanged.
class MockInpainter final : public Inpainter {
 public:
  std::string name() const override { return "mock-ring-mean"; }
  ImageInput inpaint(const ImageInput& image, const Mask& mask) const override;
};

// Chooses a caption template from a hash of the quantised pixels.
class MockCaptioner final : public Captioner {
 public:
  explicit MockCaptioner(std::uint64_t seed = 0) : seed_(seed) {}
  std::string name() const override { return "mock-template"; }
  std::string caption(const ImageInput& image, std::string_view prompt) const override;

 private:
  std::uint64_t seed_;
};

// Procedural stripes and blobs seeded by a hash of the caption.
class MockTextToImage final : public TextToImage {
 public:
  MockTextToImage(std::uint64_t seed = 0, int height = 64, int width = 64)
      : seed_(seed), height_(height), width_(width) {}
  std::string name() const override { return "mock-procedural"; }
  ImageInput generate(std::string_view text) const override;

 private:
  std::uint64_t seed_;
  int height_;
  int width_;
};

struct GenerationBackends {
  std::shared_ptr<const Inpainter> inpainter;
  std::shared_ptr<const Captioner> captioner;
  std::shared_ptr<const TextToImage> text_to_image;
  std::string positive_prompt = std::string(kPositiveCaptionPrompt);
  std::uint64_t seed = 0;
};

GenerationBackends mock_backends(std::uint64_t seed, int generated_height = 64, int generated_width = 64);

// I' = inpainter(I, M). An all-ones mask leaves nothing to inpaint from.
ImageInput separate_modalities(const MemeRecord& meme, const GenerationBackends& backends);

struct GenerationProvenance {
  std::string source_id;
  std::string inpainter;
  std::string captioner;
  std::string text_to_image;
  std::string prompt;
  std::uint64_t seed = 0;
  std::string purified_digest;
  std::string image_digest;

  std::string to_json() const;
};

struct PositivePair {
  ImageInput image;  // I+
  std::string text;  // T+
  GenerationProvenance provenance;
};

// T+ = captioner(I', prompt); I+ = text_to_image(T+). Backend exceptions are
// rethrown as backend_failure naming the meme.
PositivePair generate_positive(const ImageInput& purified, const GenerationBackends& backends,
                               const std::string& meme_id);

struct ReferenceEntry {
  std::string id;
  std::string text;
  std::string image_path;
  std::optional<ImageInput> image;  // kept when built in memory
};

struct Neighbor {
  std::size_t index = 0;
  double distance = 0.0;
};

// Exact Euclidean nearest-neighbour search over image embeddings.
class ReferenceIndex {
 public:
  ReferenceIndex() = default;
  ReferenceIndex(std::vector<ReferenceEntry> entries, Eigen::MatrixXd embeddings);

  std::size_t size() const { return entries_.size(); }
  int dim() const { return static_cast<int>(embeddings_.cols()); }
  const ReferenceEntry& entry(std::size_t i) const { return entries_.at(i); }
  const Eigen::MatrixXd& embeddings() const { return embeddings_; }

  void add(ReferenceEntry entry, const Eigen::VectorXd& embedding);

  // Linear scan; ties go to the lowest index.
  Neighbor nearest(const Eigen::VectorXd& query) const;

  // embeddings.npy plus metadata.jsonl (id, text, image_path).
  void save(const std::filesystem::path& dir) const;
  static ReferenceIndex load(const std::filesystem::path& dir);

 private:
  std::vector<ReferenceEntry> entries_;
  Eigen::MatrixXd embeddings_;  // [N x d]
};

ReferenceIndex build_reference_index(const std::vector<MemeRecord>& hateful, const DualEncoder& encoder);

struct RetrievedNegative {
  Neighbor neighbor;
  const ReferenceEntry* entry = nullptr;
};

// r* over image embeddings only; text never enters the search.
RetrievedNegative retrieve_negative(const ImageInput& purified, const ReferenceIndex& index, const DualEncoder& encoder);

}  // namespace memesieve
