#include "memesieve/segmentation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "memesieve/common.hpp"

namespace memesieve {

SegConfig SegConfig::for_shape(const EncoderShape& shape) {
  SegConfig c;
  c.patch_count = shape.patch_count();
  c.max_text_tokens = shape.max_text_tokens;
  return c;
}

void SegConfig::validate() const {
  if (top_k < 1) throw Error(ErrorKind::invalid_input, "seg.top_k must be >= 1");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw Error(ErrorKind::invalid_input, "seg.lambda must lie in [0, 1]");
  if (patch_count < 1 || max_text_tokens < 1) throw Error(ErrorKind::invalid_input, "SegConfig needs L_I and L_T");
}

Eigen::MatrixXd average_attention(const AttentionStack& stack) {
  if (stack.layers.empty()) throw Error(ErrorKind::invalid_input, "attention stack is empty");
  Eigen::MatrixXd sum = stack.layers.front();
  for (std::size_t i = 1; i < stack.layers.size(); ++i) {
    if (stack.layers[i].rows() != sum.rows() || stack.layers[i].cols() != sum.cols()) {
      throw Error(ErrorKind::dimension_mismatch, "attention layers differ in shape");
    }
    sum += stack.layers[i];
  }
  return sum / static_cast<double>(stack.layers.size());
}

namespace {

void check_layout(const Eigen::MatrixXd& avg, int text_positions, const SegConfig& cfg) {
  const int o = cfg.patch_count + 1;
  if (text_positions < 1 || text_positions > cfg.max_text_tokens) {
    throw Error(ErrorKind::dimension_mismatch, "text length " + std::to_string(text_positions) + " outside [1, L_T=" +
                                                   std::to_string(cfg.max_text_tokens) + "]");
  }
  if (avg.rows() != o + text_positions || avg.cols() != o + text_positions) {
    throw Error(ErrorKind::dimension_mismatch, "attention matrix is " + std::to_string(avg.rows()) + "x" +
                                                   std::to_string(avg.cols()) + ", expected " +
                                                   std::to_string(o + text_positions) + " square");
  }
}

}  // namespace

std::vector<double> text_aware_image_attention(const Eigen::MatrixXd& avg, int text_positions, const SegConfig& cfg) {
  check_layout(avg, text_positions, cfg);
  const int o = cfg.patch_count + 1;
  const double denom = cfg.strict ? text_positions : cfg.max_text_tokens;
  std::vector<double> out(static_cast<std::size_t>(cfg.patch_count));
  for (int j = 1; j <= cfg.patch_count; ++j) {
    double s = 0.0;
    for (int t = 0; t < text_positions; ++t) s += avg(j, o + t);
    out[static_cast<std::size_t>(j - 1)] = s / denom;
  }
  return out;
}

std::vector<double> image_aware_text_attention(const Eigen::MatrixXd& avg, int text_positions, const SegConfig& cfg) {
  check_layout(avg, text_positions, cfg);
  const int o = cfg.patch_count + 1;
  std::vector<double> out(static_cast<std::size_t>(text_positions));
  for (int t = 0; t < text_positions; ++t) {
    double s = 0.0;
    for (int j = 1; j <= cfg.patch_count; ++j) s += avg(o + t, j);
    out[static_cast<std::size_t>(t)] = s / cfg.patch_count;
  }
  return out;
}

Heatmap upscale_heatmap(const std::vector<double>& patch_scores, int height, int width) {
  if (height < 1 || width < 1) throw Error(ErrorKind::invalid_input, "heatmap size must be positive");
  const auto n = static_cast<int>(patch_scores.size());
  const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n))));
  if (n < 1 || side * side != n) {
    throw Error(ErrorKind::invalid_input, "patch count " + std::to_string(n) + " is not a perfect square");
  }
  for (double s : patch_scores) {
    if (!std::isfinite(s) || s < 0.0) throw Error(ErrorKind::invalid_input, "patch scores must be finite and >= 0");
  }
  auto grid = [&](int r, int c) { return patch_scores[static_cast<std::size_t>(r * side + c)]; };
  // Corner alignment: output pixel 0 samples grid 0, the last pixel samples grid side-1.
  auto source = [side](int i, int extent) {
    return extent == 1 || side == 1 ? 0.0 : static_cast<double>(i) * (side - 1) / (extent - 1);
  };
  Heatmap out(height, width);
  double peak = 0.0;
  for (int y = 0; y < height; ++y) {
    const double sy = source(y, height);
    const int y0 = std::min(static_cast<int>(sy), side - 1);
    const int y1 = std::min(y0 + 1, side - 1);
    const double fy = sy - y0;
    for (int x = 0; x < width; ++x) {
      const double sx = source(x, width);
      const int x0 = std::min(static_cast<int>(sx), side - 1);
      const int x1 = std::min(x0 + 1, side - 1);
      const double fx = sx - x0;
      const double top = (1.0 - fx) * grid(y0, x0) + fx * grid(y0, x1);
      const double bottom = (1.0 - fx) * grid(y1, x0) + fx * grid(y1, x1);
      const double v = (1.0 - fy) * top + fy * bottom;
      out.at(y, x) = v;
      peak = std::max(peak, v);
    }
  }
  if (peak > 0.0) {
    for (double& v : out.values) v /= peak;
  }
  return out;
}

std::vector<TokenScore> topk_tokens(const std::vector<double>& scores, int k) {
  if (k < 1) throw Error(ErrorKind::invalid_input, "top-k needs k >= 1");
  std::vector<TokenScore> all;
  all.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) all.push_back(TokenScore{static_cast<int>(i), scores[i]});
  const auto keep = std::min(all.size(), static_cast<std::size_t>(k));
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep), all.end(),
                    [](const TokenScore& a, const TokenScore& b) {
                      return a.score != b.score ? a.score > b.score : a.index < b.index;
                    });
  all.resize(keep);
  return all;
}

std::vector<ObjectScore> score_objects(const Heatmap& heatmap, const std::vector<Mask>& masks) {
  std::vector<ObjectScore> out;
  out.reserve(masks.size());
  for (std::size_t i = 0; i < masks.size(); ++i) {
    const Mask& m = masks[i];
    if (m.height != heatmap.height || m.width != heatmap.width) {
      throw Error(ErrorKind::dimension_mismatch, "object mask " + std::to_string(i) + " does not match the heatmap size");
    }
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t p = 0; p < m.data.size(); ++p) {
      if (!m.data[p]) continue;
      sum += heatmap.values[p];
      ++count;
    }
    if (count == 0) throw Error(ErrorKind::invalid_input, "object mask " + std::to_string(i) + " is empty");
    out.push_back(ObjectScore{m, sum / static_cast<double>(count)});
  }
  return out;
}

std::vector<std::size_t> select_objects(const std::vector<ObjectScore>& scores, double lambda) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i].phi > lambda) out.push_back(i);
  }
  return out;
}

std::vector<Mask> LuminanceMaskProposer::propose(const ImageInput& image) const {
  validate_image(image);
  const int h = image.height;
  const int w = image.width;
  std::vector<double> lum(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const auto i = static_cast<std::size_t>(y) * w + x;
      lum[i] = image.channels == 3
                   ? 0.299 * image.at(y, x, 0) + 0.587 * image.at(y, x, 1) + 0.114 * image.at(y, x, 2)
                   : image.at(y, x, 0);
    }
  }
  auto sorted = lum;
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(sorted.size() / 2), sorted.end());
  const double median = sorted[sorted.size() / 2];

  std::vector<std::uint8_t> fg(lum.size());
  for (std::size_t i = 0; i < lum.size(); ++i) fg[i] = std::abs(lum[i] - median) > delta_ ? 1 : 0;
  std::vector<char> seen(lum.size(), 0);
  std::vector<Mask> out;
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < fg.size(); ++start) {
    if (!fg[start] || seen[start]) continue;
    Mask m(h, w);
    std::size_t count = 0;
    stack.push_back(start);
    seen[start] = 1;
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      m.data[p] = 1;
      ++count;
      const int y = static_cast<int>(p / static_cast<std::size_t>(w));
      const int x = static_cast<int>(p % static_cast<std::size_t>(w));
      const int ny[4] = {y - 1, y + 1, y, y};
      const int nx[4] = {x, x, x - 1, x + 1};
      for (int k = 0; k < 4; ++k) {
        if (ny[k] < 0 || ny[k] >= h || nx[k] < 0 || nx[k] >= w) continue;
        const auto q = static_cast<std::size_t>(ny[k]) * w + nx[k];
        if (fg[q] && !seen[q]) {
          seen[q] = 1;
          stack.push_back(q);
        }
      }
    }
    if (count >= static_cast<std::size_t>(min_pixels_)) out.push_back(std::move(m));
  }
  return out;
}

SegmentationResult segment_attention(const AttentionStack& stack, const SegConfig& cfg, int height, int width,
                                     const std::vector<Mask>& masks) {
  cfg.validate();
  if (stack.image_positions != cfg.patch_count + 1) {
    throw Error(ErrorKind::dimension_mismatch, "captured attention has " + std::to_string(stack.image_positions) +
                                                   " image positions, config expects " +
                                                   std::to_string(cfg.patch_count + 1));
  }
  SegmentationResult r;
  const Eigen::MatrixXd avg = average_attention(stack);
  r.patch_scores = text_aware_image_attention(avg, stack.text_positions, cfg);
  r.heatmap = upscale_heatmap(r.patch_scores, height, width);
  const auto token_scores = image_aware_text_attention(avg, stack.text_positions, cfg);
  for (std::size_t i = 0; i < token_scores.size(); ++i) r.token_scores.push_back({static_cast<int>(i), token_scores[i]});
  r.selected_tokens = topk_tokens(token_scores, cfg.top_k);
  r.object_scores = score_objects(r.heatmap, masks);
  r.selected_objects = select_objects(r.object_scores, cfg.lambda);
  return r;
}

}  // namespace memesieve
