#pragma once

// Independent reference computations shared by the unit tests and the
// acceptance binary. Nothing here calls the code it checks.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "memesieve/image.hpp"
#include "memesieve/ita_model.hpp"

namespace oracles {

// Per-pixel masked mean.
inline double masked_mean(const memesieve::Heatmap& h, const memesieve::Mask& m) {
  double sum = 0.0;
  long n = 0;
  for (int y = 0; y < h.height; ++y) {
    for (int x = 0; x < h.width; ++x) {
      if (m.at(y, x)) {
        sum += h.at(y, x);
        ++n;
      }
    }
  }
  return sum / static_cast<double>(n);
}

// Random heatmap in [0, 1] and a random non-empty mask (a jittered
// rectangle with holes) of the same size.
inline std::pair<memesieve::Heatmap, memesieve::Mask> random_heatmap_and_mask(std::mt19937_64& rng, int h, int w) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  memesieve::Heatmap heat(h, w);
  for (double& v : heat.values) v = u(rng);
  memesieve::Mask mask(h, w);
  std::uniform_int_distribution<int> ry(0, h - 1), rx(0, w - 1);
  const int y0 = ry(rng), y1 = ry(rng), x0 = rx(rng), x1 = rx(rng);
  for (int y = std::min(y0, y1); y <= std::max(y0, y1); ++y) {
    for (int x = std::min(x0, x1); x <= std::max(x0, x1); ++x) mask.at(y, x) = u(rng) < 0.8 ? 1 : 0;
  }
  mask.at(y0, x0) = 1;
  return {std::move(heat), std::move(mask)};
}

// One-layer stack whose image patch `patch` (0-based, class position
// excluded) sends most of its mass to the text positions; every other row
// is near uniform. Rows are stochastic.
inline memesieve::AttentionStack concentrated_stack(int patch_count, int text_positions, int patch) {
  const int o = patch_count + 1;
  const int n = o + text_positions;
  Eigen::MatrixXd a = Eigen::MatrixXd::Constant(n, n, 1.0 / n);
  const int row = patch + 1;
  a.row(row).setConstant(0.1 / (n - text_positions));
  a.row(row).tail(text_positions).setConstant(0.9 / text_positions);
  memesieve::AttentionStack s;
  s.layers.push_back(a);
  s.image_positions = o;
  s.text_positions = text_positions;
  return s;
}

// Pixel rectangle covered by grid cell `patch` of a side x side grid laid
// over an H x W image.
struct Footprint {
  int y0, y1, x0, x1;  // half-open
  bool contains(int y, int x) const { return y >= y0 && y < y1 && x >= x0 && x < x1; }
};

inline Footprint patch_footprint(int patch, int side, int height, int width) {
  const int r = patch / side;
  const int c = patch % side;
  return Footprint{r * height / side, (r + 1) * height / side, c * width / side, (c + 1) * width / side};
}

inline std::pair<int, int> argmax_pixel(const memesieve::Heatmap& h) {
  const auto it = std::max_element(h.values.begin(), h.values.end());
  const auto i = static_cast<int>(it - h.values.begin());
  return {i / h.width, i % h.width};
}

// Full stable sort, descending score, ascending index on ties.
inline std::vector<int> sorted_indices(const std::vector<double>& scores) {
  std::vector<int> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return scores[a] > scores[b]; });
  return idx;
}

// Linear scan, first minimum wins.
struct BruteNeighbor {
  std::size_t index = 0;
  double distance = 0.0;
};

inline BruteNeighbor brute_nearest(const std::vector<Eigen::VectorXd>& entries, const Eigen::VectorXd& query) {
  BruteNeighbor best{0, std::numeric_limits<double>::infinity()};
  for (std::size_t i = 0; i < entries.size(); ++i) {
    double s = 0.0;
    for (Eigen::Index k = 0; k < query.size(); ++k) s += (entries[i][k] - query[k]) * (entries[i][k] - query[k]);
    const double d = std::sqrt(s);
    if (d < best.distance) best = {i, d};
  }
  return best;
}

// Fleiss' kappa written out term by term.
inline double fleiss(const std::vector<std::vector<int>>& counts) {
  const double items = static_cast<double>(counts.size());
  const double raters = std::accumulate(counts[0].begin(), counts[0].end(), 0.0);
  const std::size_t cats = counts[0].size();
  double p_bar = 0.0;
  std::vector<double> p_j(cats, 0.0);
  for (const auto& row : counts) {
    double agree = 0.0;
    for (std::size_t j = 0; j < cats; ++j) {
      agree += row[j] * (row[j] - 1.0);
      p_j[j] += row[j];
    }
    p_bar += agree / (raters * (raters - 1.0));
  }
  p_bar /= items;
  double p_e = 0.0;
  for (double p : p_j) p_e += (p / (items * raters)) * (p / (items * raters));
  return (p_bar - p_e) / (1.0 - p_e);
}

// Combination tables for the non-hateful and hateful slots. The generated
// and retrieved pairs are always allowed; the original image may be reused
// for a non-hateful pair only when it is clean and for a hateful pair only
// when it is flagged, and the same for the original text.
inline std::set<std::string> eligible_nonhate_tags(int y_image, int y_text) {
  std::set<std::string> s{"I+T+"};
  if (y_image == 0) s.insert("IT+");
  if (y_text == 0) s.insert("I+T");
  return s;
}

inline std::set<std::string> eligible_hate_tags(int y_image, int y_text) {
  std::set<std::string> s{"I-T-"};
  if (y_image == 1) s.insert("IT-");
  if (y_text == 1) s.insert("I-T");
  return s;
}

}  // namespace oracles
