#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <random>
#include <vector>

#include "helpers.hpp"
#include "memesieve/common.hpp"
#include "memesieve/encoder.hpp"
#include "memesieve/evaluation.hpp"
#include "memesieve/ita_model.hpp"

using namespace memesieve;
using testing_helpers::random_bundle;
using testing_helpers::random_matrix;
using Grid = std::vector<std::vector<double>>;

namespace {

// Deterministic, non-repeating fill so every parameter is distinct.
void fill_pattern(ItaParameters& p) {
  int k = 0;
  p.for_each([&](const std::string&, ParamGroup, Eigen::MatrixXd& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = 0.45 * std::sin(1.37 * ++k + 0.2);
    }
  });
}

Grid to_grid(const Eigen::MatrixXd& m) {
  Grid g(static_cast<std::size_t>(m.rows()), std::vector<double>(static_cast<std::size_t>(m.cols())));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) g[r][c] = m(r, c);
  }
  return g;
}

Grid matmul(const Grid& a, const Grid& b) {
  Grid out(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < b[0].size(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < b.size(); ++k) s += a[i][k] * b[k][j];
      out[i][j] = s;
    }
  }
  return out;
}

void add_row(Grid& a, const Grid& bias) {
  for (auto& row : a) {
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += bias[0][j];
  }
}

double scalar_gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

Grid scalar_layer_norm(const Grid& x, const Grid& gain, const Grid& bias) {
  Grid out = x;
  for (std::size_t r = 0; r < x.size(); ++r) {
    double mean = 0.0;
    for (double v : x[r]) mean += v;
    mean /= static_cast<double>(x[r].size());
    double var = 0.0;
    for (double v : x[r]) var += (v - mean) * (v - mean);
    var /= static_cast<double>(x[r].size());
    for (std::size_t c = 0; c < x[r].size(); ++c) {
      out[r][c] = (x[r][c] - mean) / std::sqrt(var + 1e-5) * gain[0][c] + bias[0][c];
    }
  }
  return out;
}

// Single-head, one-layer forward written out with plain loops.
std::vector<double> scalar_forward(const ItaParameters& p, const EmbeddingBundle& b) {
  Grid x = matmul(to_grid(b.image_seq), to_grid(p.image_projection));
  for (const auto& row : to_grid(b.text_seq)) x.push_back(row);
  const std::size_t n = x.size();
  for (const auto& lp : p.layers) {
    const Grid q = matmul(x, to_grid(lp.query));
    const Grid k = matmul(x, to_grid(lp.key));
    const Grid v = matmul(x, to_grid(lp.value));
    const double scale = 1.0 / std::sqrt(static_cast<double>(q[0].size()));
    Grid attn(n, std::vector<double>(n));
    for (std::size_t i = 0; i < n; ++i) {
      double total = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < q[0].size(); ++c) s += q[i][c] * k[j][c];
        attn[i][j] = std::exp(s * scale);
        total += attn[i][j];
      }
      for (auto& a : attn[i]) a /= total;
    }
    Grid mixed = matmul(matmul(attn, v), to_grid(lp.out));
    add_row(mixed, to_grid(lp.out_bias));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < x[i].size(); ++c) mixed[i][c] += x[i][c];
    }
    const Grid hidden = scalar_layer_norm(mixed, to_grid(lp.norm1_gain), to_grid(lp.norm1_bias));
    Grid inner = matmul(hidden, to_grid(lp.ffn_in));
    add_row(inner, to_grid(lp.ffn_in_bias));
    for (auto& row : inner) {
      for (auto& val : row) val = scalar_gelu(val);
    }
    Grid ffn = matmul(inner, to_grid(lp.ffn_out));
    add_row(ffn, to_grid(lp.ffn_out_bias));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < ffn[i].size(); ++c) ffn[i][c] += hidden[i][c];
    }
    x = scalar_layer_norm(ffn, to_grid(lp.norm2_gain), to_grid(lp.norm2_bias));
  }
  const std::size_t d = x[0].size();
  Grid z(1, std::vector<double>(2 * d));
  for (std::size_t c = 0; c < d; ++c) {
    z[0][c] = x[0][c] + b.image_pooled[static_cast<Eigen::Index>(c)];
    z[0][d + c] = x[n - 1][c] + b.text_pooled[static_cast<Eigen::Index>(c)];
  }
  Grid h = matmul(z, to_grid(p.decoder_in));
  add_row(h, to_grid(p.decoder_in_bias));
  for (auto& val : h[0]) val = scalar_gelu(val);
  Grid out = matmul(h, to_grid(p.decoder_out));
  add_row(out, to_grid(p.decoder_out_bias));
  return out[0];
}

}  // namespace

TEST_CASE("config validation") {
  auto c = ItaConfig::for_dims(8, 6, 2, 3);
  CHECK_THROWS_AS(c.validate(), Error);  // 8 not divisible by 3
  c = ItaConfig::for_dims(8, 6, 0, 1);
  CHECK_THROWS_AS(c.validate(), Error);
  c = ItaConfig::for_dims(8, 6, 2, 2);
  c.dropout = 1.0;
  CHECK_THROWS_AS(c.validate(), Error);
  c.dropout = 0.1;
  CHECK_NOTHROW(c.validate());
  CHECK(ItaConfig::from_json(c.to_json()) == c);
}

TEST_CASE("project_and_fuse") {
  std::mt19937_64 rng(5);
  SUBCASE("identity projection copies image rows") {
    ItaModel model(ItaConfig::for_dims(4, 4, 1, 1), 1);
    model.mutable_parameters().image_projection = Eigen::MatrixXd::Identity(4, 4);
    const auto b = random_bundle(rng, 3, 4, 2, 4);
    const auto f = model.project_and_fuse(b);
    CHECK(f.rows.rows() == 5);
    CHECK(f.rows.topRows(3) == b.image_seq);
    CHECK(f.rows.bottomRows(2) == b.text_seq);
  }
  SUBCASE("zero image sequence gives zero image rows") {
    ItaModel model(ItaConfig::for_dims(4, 3, 1, 1), 1);
    auto b = random_bundle(rng, 3, 3, 2, 4);
    b.image_seq.setZero();
    CHECK(model.project_and_fuse(b).rows.topRows(3).isZero(0.0));
  }
  SUBCASE("hand-multiplied 2x3 by 3x3") {
    ItaModel model(ItaConfig::for_dims(3, 3, 1, 1), 1);
    Eigen::MatrixXd w(3, 3);
    w << 1, 2, 0, 0, 1, -1, 3, 0, 1;
    model.mutable_parameters().image_projection = w;
    EmbeddingBundle b;
    b.image_seq.resize(2, 3);
    b.image_seq << 1, 0, 2, -1, 1, 1;
    b.text_seq = Eigen::MatrixXd::Ones(1, 3);
    b.image_pooled = Eigen::VectorXd::Zero(3);
    b.text_pooled = Eigen::VectorXd::Zero(3);
    const auto f = model.project_and_fuse(b);
    // row 0: [1*1+2*3, 1*2, -0+2*1] = [7, 2, 2]; row 1: [-1+3, -2+1, -1+1] = [2, -1, 0]
    CHECK(f.rows(0, 0) == 7.0);
    CHECK(f.rows(0, 1) == 2.0);
    CHECK(f.rows(0, 2) == 2.0);
    CHECK(f.rows(1, 0) == 2.0);
    CHECK(f.rows(1, 1) == -1.0);
    CHECK(f.rows(1, 2) == 0.0);
  }
  SUBCASE("shape mismatch") {
    ItaModel model(ItaConfig::for_dims(4, 3, 1, 1), 1);
    const auto b = random_bundle(rng, 3, 5, 2, 4);
    CHECK_THROWS_AS(model.project_and_fuse(b), Error);
  }
}

TEST_CASE("forward matches a scalar reimplementation on a tiny config") {
  ItaModel model(ItaConfig::for_dims(4, 3, 1, 1), 0);
  fill_pattern(model.mutable_parameters());
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 5; ++trial) {
    const auto b = random_bundle(rng, 3, 3, 2, 4);
    const auto expected = scalar_forward(model.parameters(), b);
    const auto h = model.forward(b, false).joint;
    REQUIRE(h.size() == 4);
    for (int i = 0; i < 4; ++i) CHECK(h[i] == doctest::Approx(expected[static_cast<std::size_t>(i)]).epsilon(1e-12));
  }
}

TEST_CASE("attention rows are stochastic") {
  ItaModel model(ItaConfig::for_dims(8, 6, 2, 2), 3);
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    const auto b = random_bundle(rng, 5, 6, 1 + trial % 4, 8);
    const auto r = model.forward(b, true);
    REQUIRE(r.attention.has_value());
    REQUIRE(r.attention->layers.size() == 2);
    for (const auto& a : r.attention->layers) {
      CHECK(a.rows() == 5 + 1 + trial % 4);
      CHECK(a.minCoeff() >= 0.0);
      CHECK(a.maxCoeff() <= 1.0);
      for (Eigen::Index row = 0; row < a.rows(); ++row) CHECK(std::abs(a.row(row).sum() - 1.0) < 1e-5);
    }
  }
}

TEST_CASE("forward is deterministic and capture is observation-only") {
  ItaModel model(ItaConfig::for_dims(8, 6, 2, 2), 4);
  std::mt19937_64 rng(29);
  const auto b = random_bundle(rng, 5, 6, 3, 8);
  const auto a = model.forward(b, false).joint;
  const auto c = model.forward(b, true);
  CHECK(a == c.joint);
  CHECK(a == model.forward(b, false).joint);
  CHECK_FALSE(model.forward(b, false).attention.has_value());
}

TEST_CASE("pooling reads the class position and the end-of-sequence position") {
  ItaModel model(ItaConfig::for_dims(8, 6, 2, 2), 6);
  std::mt19937_64 rng(31);
  const auto b = random_bundle(rng, 5, 6, 4, 8);
  const auto t = model.forward_trace(b, nullptr);
  const Eigen::RowVectorXd image_side = t.output.row(0) + b.image_pooled.transpose();
  const Eigen::RowVectorXd text_side = t.output.row(t.output.rows() - 1) + b.text_pooled.transpose();
  CHECK(t.decoder_input.head(8).isApprox(image_side, 1e-14));
  CHECK(t.decoder_input.tail(8).isApprox(text_side, 1e-14));
}

// The fusion stack has no position embedding of its own; order reaches it
// through the encoder's contextual text rows, so swaps happen before encoding.
TEST_CASE("swapping distinct text tokens changes H") {
  MockDualEncoder enc(3);
  ItaModel model(ItaConfig::for_encoder(enc.shape(), 2, 2), 8);
  const ImageInput image(32, 32, 3, 0.4F);
  const auto text = enc.tokenize("cats chase red dots");
  const auto h = model.forward(enc.encode(image, text), false).joint;
  auto swapped = text;
  std::swap(swapped.tokens[1], swapped.tokens[3]);
  CHECK_FALSE(model.forward(enc.encode(image, swapped), false).joint.isApprox(h, 1e-9));

  const auto repeated = enc.tokenize("dots chase dots");
  auto repeated_swapped = repeated;
  std::swap(repeated_swapped.tokens[1], repeated_swapped.tokens[3]);
  CHECK(model.forward(enc.encode(image, repeated), false).joint ==
        model.forward(enc.encode(image, repeated_swapped), false).joint);
}

TEST_CASE("classification head") {
  ItaModel model(ItaConfig::for_dims(8, 6, 1, 2), 9);
  std::mt19937_64 rng(41);
  const auto b = random_bundle(rng, 5, 6, 3, 8);
  CHECK_THROWS_AS(model.classify(b), Error);
  model.attach_head();
  CHECK(model.classify(b) == 0.5);
  model.mutable_parameters().head_weight = random_matrix(rng, 8, 1, 5.0);
  for (int i = 0; i < 20; ++i) {
    const double p = model.classify(random_bundle(rng, 5, 6, 3, 8));
    CHECK(p > 0.0);
    CHECK(p < 1.0);
  }
}

TEST_CASE("parameter counts") {
  // d=4, d_i=3, one layer, one head, ffn 16:
  //   W_I 12; attention 3*16 + 16 + 4; norms 16; ffn 64+16+64+4; decoder 32+4+16+4.
  ItaModel model(ItaConfig::for_dims(4, 3, 1, 1), 0);
  const std::size_t stack = 12 + (48 + 16 + 4) + 16 + (64 + 16 + 64 + 4) + (32 + 4 + 16 + 4);
  CHECK(stack == 300);
  CHECK(model.parameter_count() == stack);
  model.attach_head();
  CHECK(model.parameter_count() == stack + 5);
  model.set_trainable(ParamGroup::head, false);
  CHECK(model.parameter_count() == stack);
  model.set_trainable(ParamGroup::head, true);
  model.set_trainable(ParamGroup::stack, false);
  CHECK(model.parameter_count() == 5);
  CHECK(model.total_parameter_count() == stack + 5);

  ItaModel reference(ItaConfig::for_encoder(clip_vit_base_patch32_shape()), 0);
  reference.attach_head();
  MESSAGE("reference configuration trainable parameters: " << reference.parameter_count() << " (published figure "
                                                           << reference::kTrainableParametersMillions << "M)");
  CHECK(reference.parameter_count() > 3'610'000);
}

TEST_CASE("non-finite activations abort as divergence") {
  ItaModel model(ItaConfig::for_dims(8, 6, 1, 2), 10);
  model.mutable_parameters().decoder_out(0, 0) = std::numeric_limits<double>::infinity();
  std::mt19937_64 rng(43);
  try {
    (void)model.forward(random_bundle(rng, 5, 6, 3, 8), false);
    FAIL("expected divergence");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::divergence);
    CHECK(e.exit_code() == 2);
  }
}

TEST_CASE("checkpoint round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "memesieve_ckpt_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "model.itackpt";
  ItaModel model(ItaConfig::for_dims(8, 6, 2, 2), 12);
  model.attach_head();
  std::mt19937_64 rng(47);
  model.mutable_parameters().head_weight = random_matrix(rng, 8, 1);
  save_checkpoint(path, model);
  const auto loaded = load_checkpoint(path, model.config());
  CHECK(loaded.parameters().checksum() == model.parameters().checksum());
  CHECK(loaded.has_head());
  const auto b = random_bundle(rng, 5, 6, 3, 8);
  CHECK(loaded.classify(b) == model.classify(b));

  try {
    (void)load_checkpoint(path, ItaConfig::for_dims(8, 6, 3, 2));
    FAIL("expected config mismatch");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::config_mismatch);
  }
  std::filesystem::remove_all(dir);
}
