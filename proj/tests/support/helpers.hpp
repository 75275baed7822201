#pragma once

#include <Eigen/Dense>

#include <random>

#include "memesieve/encoder.hpp"

namespace testing_helpers {

inline Eigen::MatrixXd random_matrix(std::mt19937_64& rng, int rows, int cols, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

inline memesieve::EmbeddingBundle random_bundle(std::mt19937_64& rng, int o, int d_i, int l, int d) {
  memesieve::EmbeddingBundle b;
  b.image_seq = random_matrix(rng, o, d_i);
  b.text_seq = random_matrix(rng, l, d);
  b.image_pooled = random_matrix(rng, d, 1);
  b.text_pooled = random_matrix(rng, d, 1);
  return b;
}

}  // namespace testing_helpers
