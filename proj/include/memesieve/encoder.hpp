#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "memesieve/image.hpp"

namespace memesieve {

struct TextInput {
  std::vector<std::int32_t> tokens;
  std::vector<std::string> pieces;  // display form of each token, same length as tokens
  std::string raw_text;
};

// Shape metadata a dual-encoder backend declares about itself.
struct EncoderShape {
  std::string name;
  int embed_dim = 0;          // d: pooled vectors and text token rows
  int image_dim = 0;          // d_i: image patch rows
  int image_positions = 0;    // o: class position + patches
  int max_text_tokens = 0;    // L_T
  int native_resolution = 0;  // square input side the backend consumes
  int vocab_size = 0;

  int patch_count() const { return image_positions - 1; }
  bool operator==(const EncoderShape&) const = default;
};

EncoderShape clip_vit_base_patch32_shape();
EncoderShape mock_encoder_shape();

struct EmbeddingBundle {
  Eigen::VectorXd image_pooled;  // [d]
  Eigen::VectorXd text_pooled;   // [d]
  Eigen::MatrixXd image_seq;     // [o x d_i], row 0 is the class embedding
  Eigen::MatrixXd text_seq;      // [l x d], last row is the end-of-sequence token
};

void validate_bundle(const EmbeddingBundle& bundle, const EncoderShape& shape);
bool bitwise_equal(const EmbeddingBundle& a, const EmbeddingBundle& b);

// Keeps the first max_tokens - 1 tokens and re-appends the final
// (end-of-sequence) token. Ingestion calls this explicitly; the encoder
// itself rejects over-long text.
TextInput truncate_to_max(const TextInput& text, int max_tokens);

// Frozen image-text dual encoder. Implementations are immutable after
// construction, so every method is safe to call concurrently.
class DualEncoder {
 public:
  virtual ~DualEncoder() = default;

  virtual const EncoderShape& shape() const = 0;
  virtual std::string name() const = 0;
  virtual TextInput tokenize(std::string_view text) const = 0;
  virtual std::uint64_t parameter_checksum() const = 0;

  EmbeddingBundle encode(const ImageInput& image, const TextInput& text) const;
  Eigen::VectorXd encode_image(const ImageInput& image) const;

 protected:
  struct ImageEmbedding {
    Eigen::MatrixXd seq;
    Eigen::VectorXd pooled;
  };
  struct TextEmbedding {
    Eigen::MatrixXd seq;
    Eigen::VectorXd pooled;
  };

  // Resizes to the native resolution. The source (H, W) stays with the
  // caller's MemeRecord for heatmap upscaling.
  virtual ImageInput prepare_image(const ImageInput& image) const;
  virtual ImageEmbedding embed_image(const ImageInput& image) const = 0;
  virtual TextEmbedding embed_text(const TextInput& text) const = 0;

 private:
  void validate_text(const TextInput& text) const;
};

// Deterministic stand-in: a seeded random linear patch embedder for images
// and hashed token vectors with a causal running mean for text. Similar
// images land close together, so synthetic classes stay separable, and a
// hash of the input bytes perturbs the class position so distinct images
// never collide.
class MockDualEncoder final : public DualEncoder {
 public:
  explicit MockDualEncoder(std::uint64_t seed, EncoderShape shape = mock_encoder_shape());

  const EncoderShape& shape() const override { return shape_; }
  std::string name() const override { return "mock"; }
  TextInput tokenize(std::string_view text) const override;
  std::uint64_t parameter_checksum() const override;

  static constexpr std::int32_t kStartToken = 1;
  static constexpr std::int32_t kEndToken = 2;

 protected:
  ImageEmbedding embed_image(const ImageInput& image) const override;
  TextEmbedding embed_text(const TextInput& text) const override;

 private:
  Eigen::VectorXd hashed_vector(std::uint64_t key, int dim) const;

  std::uint64_t seed_;
  EncoderShape shape_;
  int patch_side_;
  Eigen::MatrixXd patch_projection_;   // [patch_side^2 * 3 x d_i]
  Eigen::MatrixXd position_;           // [o x d_i]
  Eigen::VectorXd class_embedding_;    // [d_i]
  Eigen::MatrixXd visual_projection_;  // [d_i x d]
  Eigen::MatrixXd text_projection_;    // [d x d]
};

// Adapter over embeddings exported offline from a real frozen encoder (store
// format in README.md). Lookups miss with backend_unavailable.
//
// Store layout:
//   encoder.json  declared EncoderShape
//   images.jsonl  {"key": image_digest(original), "seq": [[...]], "pooled": [...]}
//   texts.jsonl   {"text": raw, "tokens": [...], "pieces": [...], "seq": [[...]], "pooled": [...]}
class PrecomputedDualEncoder final : public DualEncoder {
 public:
  explicit PrecomputedDualEncoder(const std::filesystem::path& store_dir);

  const EncoderShape& shape() const override { return shape_; }
  std::string name() const override { return "reference:" + shape_.name; }
  TextInput tokenize(std::string_view text) const override;
  std::uint64_t parameter_checksum() const override { return checksum_; }

 protected:
  // Exported embeddings already went through the source encoder's own
  // preprocessing, so lookups key on the original pixels.
  ImageInput prepare_image(const ImageInput& image) const override { return image; }
  ImageEmbedding embed_image(const ImageInput& image) const override;
  TextEmbedding embed_text(const TextInput& text) const override;

 private:
  struct TextEntry {
    TextInput input;
    TextEmbedding embedding;
  };

  EncoderShape shape_;
  std::uint64_t checksum_ = 0;
  std::unordered_map<std::string, ImageEmbedding> images_;
  std::unordered_map<std::string, TextEntry> texts_;
};

struct EncoderConfig {
  std::string backend = "mock";  // mock | reference
  std::uint64_t mock_seed = 0;
  std::string reference_store;
};

std::unique_ptr<DualEncoder> make_encoder(const EncoderConfig& config);

}  // namespace memesieve
