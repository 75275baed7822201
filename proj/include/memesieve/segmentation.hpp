#pragma once

#include <Eigen/Dense>

#include <memory>
#include <string>
#include <vector>

#include "memesieve/image.hpp"
#include "memesieve/ita_model.hpp"

namespace memesieve {

struct SegConfig {
  int top_k = 5;
  double lambda = 0.5;       // object threshold, applied after max-normalisation
  int patch_count = 0;       // L_I = o - 1
  int max_text_tokens = 0;   // L_T
  bool strict = false;       // divide by actual counts instead of L_T / L_I

  static SegConfig for_shape(const EncoderShape& shape);
  void validate() const;
};

struct TokenScore {
  int index = 0;  // position within the text sequence
  double score = 0.0;
};

struct ObjectScore {
  Mask mask;
  double phi = 0.0;
};

struct SegmentationResult {
  Heatmap heatmap;
  std::vector<double> patch_scores;
  std::vector<TokenScore> token_scores;
  std::vector<TokenScore> selected_tokens;
  std::vector<ObjectScore> object_scores;
  std::vector<std::size_t> selected_objects;  // indices into object_scores
};

// Element-wise mean over the layer axis.
Eigen::MatrixXd average_attention(const AttentionStack& stack);

// Patch j (positions 1..L_I, class position skipped): sum of its attention
// onto the l text positions divided by L_T (or l when strict).
std::vector<double> text_aware_image_attention(const Eigen::MatrixXd& avg, int text_positions, const SegConfig& cfg);

// Text token t: sum of its attention onto patch positions 1..L_I divided
// by L_I.
std::vector<double> image_aware_text_attention(const Eigen::MatrixXd& avg, int text_positions, const SegConfig& cfg);

// Reshapes L_I scores to a sqrt(L_I) square grid, upsamples with
// corner-aligned bilinear interpolation and divides by the maximum. An
// all-zero input stays all zero. Scores must be non-negative.
Heatmap upscale_heatmap(const std::vector<double>& patch_scores, int height, int width);

// k highest scores, descending, ties to the lower index.
std::vector<TokenScore> topk_tokens(const std::vector<double>& scores, int k);

// Phi = mean heatmap value over mask pixels; selected when Phi > lambda.
std::vector<ObjectScore> score_objects(const Heatmap& heatmap, const std::vector<Mask>& masks);
std::vector<std::size_t> select_objects(const std::vector<ObjectScore>& scores, double lambda);

class MaskProposer {
 public:
  virtual ~MaskProposer() = default;
  virtual std::string name() const = 0;
  virtual std::vector<Mask> propose(const ImageInput& image) const = 0;
};

// 4-connected components of pixels whose luminance differs from the image
// median by more than `delta`, keeping components of at least min_pixels.
class LuminanceMaskProposer final : public MaskProposer {
 public:
  LuminanceMaskProposer(double delta = 0.2, int min_pixels = 16) : delta_(delta), min_pixels_(min_pixels) {}
  std::string name() const override { return "luminance-components"; }
  std::vector<Mask> propose(const ImageInput& image) const override;

 private:
  double delta_;
  int min_pixels_;
};

// Heatmap, token ranking and object selection from one captured stack.
SegmentationResult segment_attention(const AttentionStack& stack, const SegConfig& cfg, int height, int width,
                                     const std::vector<Mask>& masks);

}  // namespace memesieve
