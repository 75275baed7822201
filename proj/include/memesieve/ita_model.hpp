#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "memesieve/encoder.hpp"

namespace memesieve {

struct ItaConfig {
  int num_layers = 6;
  int embed_dim = 512;       // d
  int image_dim = 768;       // d_i
  int key_dim = 512;         // d_k, split across heads
  int num_heads = 8;
  int ffn_dim = 2048;        // position-wise feed-forward width inside each block
  int decoder_hidden = 512;
  int output_dim = 512;      // d_h
  double dropout = 0.0;

  // d_k = d_h = decoder_hidden = d and ffn_dim = 4d.
  static ItaConfig for_dims(int embed_dim, int image_dim, int num_layers = 6, int num_heads = 8);
  static ItaConfig for_encoder(const EncoderShape& shape, int num_layers = 6, int num_heads = 8);

  int head_dim() const { return key_dim / num_heads; }
  void validate() const;
  std::string to_json() const;
  static ItaConfig from_json(std::string_view text);
  bool operator==(const ItaConfig&) const = default;
};

enum class ParamGroup { stack, head };

struct LayerParameters {
  Eigen::MatrixXd query;      // [d x d_k]
  Eigen::MatrixXd key;        // [d x d_k]
  Eigen::MatrixXd value;      // [d x d_k]
  Eigen::MatrixXd out;        // [d_k x d]
  Eigen::MatrixXd out_bias;   // [1 x d]
  Eigen::MatrixXd norm1_gain, norm1_bias;  // [1 x d]
  Eigen::MatrixXd ffn_in;     // [d x ffn]
  Eigen::MatrixXd ffn_in_bias;
  Eigen::MatrixXd ffn_out;    // [ffn x d]
  Eigen::MatrixXd ffn_out_bias;
  Eigen::MatrixXd norm2_gain, norm2_bias;
};

struct ItaParameters {
  Eigen::MatrixXd image_projection;  // W_I [d_i x d]
  std::vector<LayerParameters> layers;
  Eigen::MatrixXd decoder_in;        // [2d x hidden]
  Eigen::MatrixXd decoder_in_bias;
  Eigen::MatrixXd decoder_out;       // [hidden x d_h]
  Eigen::MatrixXd decoder_out_bias;
  bool has_head = false;
  Eigen::MatrixXd head_weight;       // [d_h x 1]
  Eigen::MatrixXd head_bias;         // [1 x 1]

  // Visits every parameter array in a fixed order as (name, group, matrix).
  template <typename Fn>
  void for_each(Fn&& fn) {
    visit(*this, fn);
  }
  template <typename Fn>
  void for_each(Fn&& fn) const {
    visit(*this, fn);
  }

  ItaParameters zeros_like() const;
  std::uint64_t checksum() const;

 private:
  template <typename Self, typename Fn>
  static void visit(Self& self, Fn& fn) {
    fn("image_projection", ParamGroup::stack, self.image_projection);
    for (std::size_t i = 0; i < self.layers.size(); ++i) {
      auto& l = self.layers[i];
      const std::string p = "layers." + std::to_string(i) + ".";
      fn(p + "query", ParamGroup::stack, l.query);
      fn(p + "key", ParamGroup::stack, l.key);
      fn(p + "value", ParamGroup::stack, l.value);
      fn(p + "out", ParamGroup::stack, l.out);
      fn(p + "out_bias", ParamGroup::stack, l.out_bias);
      fn(p + "norm1_gain", ParamGroup::stack, l.norm1_gain);
      fn(p + "norm1_bias", ParamGroup::stack, l.norm1_bias);
      fn(p + "ffn_in", ParamGroup::stack, l.ffn_in);
      fn(p + "ffn_in_bias", ParamGroup::stack, l.ffn_in_bias);
      fn(p + "ffn_out", ParamGroup::stack, l.ffn_out);
      fn(p + "ffn_out_bias", ParamGroup::stack, l.ffn_out_bias);
      fn(p + "norm2_gain", ParamGroup::stack, l.norm2_gain);
      fn(p + "norm2_bias", ParamGroup::stack, l.norm2_bias);
    }
    fn("decoder_in", ParamGroup::stack, self.decoder_in);
    fn("decoder_in_bias", ParamGroup::stack, self.decoder_in_bias);
    fn("decoder_out", ParamGroup::stack, self.decoder_out);
    fn("decoder_out_bias", ParamGroup::stack, self.decoder_out_bias);
    if (self.has_head) {
      fn("head_weight", ParamGroup::head, self.head_weight);
      fn("head_bias", ParamGroup::head, self.head_bias);
    }
  }
};

// X = [image_seq * W_I ; text_seq], image rows first.
struct FusedSequence {
  Eigen::MatrixXd rows;
  int image_positions = 0;
  int text_positions = 0;
};

// One head-averaged (o+l) x (o+l) softmax matrix per layer.
struct AttentionStack {
  std::vector<Eigen::MatrixXd> layers;
  int image_positions = 0;
  int text_positions = 0;
};

struct ForwardResult {
  Eigen::VectorXd joint;  // H
  std::optional<AttentionStack> attention;
};

struct LayerTrace {
  Eigen::MatrixXd input;
  Eigen::MatrixXd q, k, v;
  std::vector<Eigen::MatrixXd> probs;  // per head
  Eigen::MatrixXd context;             // concatenated head outputs
  Eigen::MatrixXd attn_drop;           // dropout scale mask, empty when inactive
  Eigen::MatrixXd norm1_hat;
  Eigen::VectorXd norm1_inv_std;
  Eigen::MatrixXd hidden;              // LN1 output
  Eigen::MatrixXd ffn_pre;
  Eigen::MatrixXd ffn_act;
  Eigen::MatrixXd ffn_drop;
  Eigen::MatrixXd norm2_hat;
  Eigen::VectorXd norm2_inv_std;
};

// Everything backward() needs from one forward pass.
struct ForwardTrace {
  Eigen::MatrixXd image_seq;
  int image_positions = 0;
  int text_positions = 0;
  std::vector<LayerTrace> layers;
  Eigen::MatrixXd output;       // X^L
  Eigen::RowVectorXd decoder_input;
  Eigen::RowVectorXd decoder_pre;
  Eigen::RowVectorXd decoder_act;
  Eigen::VectorXd joint;
};

class ItaModel {
 public:
  // Initialises weights from N(0, 2/(fan_in+fan_out)), biases zero, layer
  // norms to identity. No classification head is attached.
  ItaModel(const ItaConfig& config, std::uint64_t seed);
  ItaModel(const ItaConfig& config, ItaParameters parameters);

  const ItaConfig& config() const { return config_; }
  const ItaParameters& parameters() const { return params_; }
  ItaParameters& mutable_parameters() { return params_; }

  FusedSequence project_and_fuse(const EmbeddingBundle& bundle) const;

  // Inference pass (no dropout). Throws divergence on non-finite values.
  ForwardResult forward(const EmbeddingBundle& bundle, bool capture) const;

  // Training pass. Dropout is active when rng is non-null and dropout > 0.
  ForwardTrace forward_trace(const EmbeddingBundle& bundle, std::mt19937_64* rng) const;

  // Accumulates dLoss/dparams into grads given dLoss/dH.
  void backward(const ForwardTrace& trace, const Eigen::VectorXd& grad_joint, ItaParameters& grads) const;

  bool has_head() const { return params_.has_head; }
  void attach_head();  // zero-initialised
  void remove_head();
  double head_logit(const Eigen::VectorXd& joint) const;
  // Returns dLoss/dH and accumulates head gradients given dLoss/dlogit.
  Eigen::VectorXd backward_head(const Eigen::VectorXd& joint, double grad_logit, ItaParameters& grads) const;
  double classify(const EmbeddingBundle& bundle) const;

  void set_trainable(ParamGroup group, bool trainable);
  bool trainable(ParamGroup group) const;

  // Trainable scalars only; the frozen encoder is never counted.
  std::size_t parameter_count() const;
  std::size_t total_parameter_count() const;

 private:
  ItaConfig config_;
  ItaParameters params_;
  bool stack_trainable_ = true;
  bool head_trainable_ = true;
};

double sigmoid(double x);

// .itackpt: magic, format version, config + metadata JSON, then named
// float64 arrays. Loading against an expected config that differs is a
// config_mismatch error naming both.
inline constexpr std::uint32_t kCheckpointFormatVersion = 1;
void save_checkpoint(const std::filesystem::path& path, const ItaModel& model);
ItaModel load_checkpoint(const std::filesystem::path& path);
ItaModel load_checkpoint(const std::filesystem::path& path, const ItaConfig& expected);

}  // namespace memesieve
