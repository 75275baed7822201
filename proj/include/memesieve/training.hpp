#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "memesieve/encoder.hpp"
#include "memesieve/ita_model.hpp"

namespace memesieve {

struct TrainConfig {
  double margin = 1.0;  // epsilon of the triplet hinge
  double pretrain_lr = 1e-4;
  double finetune_lr = 1e-5;
  int epochs = 4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_size = 32;
  std::uint64_t seed = 0;
  bool squared_distance = false;  // ablation: squared Euclidean in the hinge
  bool head_only = false;         // fine-tune only the classification head
  long max_steps = 0;             // 0 = no cap
  double threshold = 0.5;         // predict hateful when probability > threshold

  void validate() const;
  std::string to_json() const;
};

struct ContrastivePair {
  Eigen::VectorXd positive;
  Eigen::VectorXd negative;
};

// The positive shares the anchor's label: y=1 pairs with the hateful
// variant, y=0 with the non-hateful one.
ContrastivePair assign_roles(const Eigen::VectorXd& nonhate, const Eigen::VectorXd& hate, int label);

struct TripletLossTerms {
  double loss = 0.0;
  double positive_distance = 0.0;
  double negative_distance = 0.0;
  Eigen::VectorXd grad_anchor;
  Eigen::VectorXd grad_positive;
  Eigen::VectorXd grad_negative;
};

// max(0, d(H,H+) - d(H,H-) + margin). Gradients are exactly zero when the
// hinge is inactive (including the boundary).
TripletLossTerms triplet_loss_terms(const Eigen::VectorXd& anchor, const Eigen::VectorXd& positive,
                                    const Eigen::VectorXd& negative, double margin, bool squared = false);
double triplet_loss(const Eigen::VectorXd& anchor, const Eigen::VectorXd& positive, const Eigen::VectorXd& negative,
                    double margin, bool squared = false);

// -log P(y), with P(y) clamped below at 1e-12.
double classification_loss(double prob_hateful, int label);

struct TripletExample {
  std::string id;
  EmbeddingBundle anchor;
  EmbeddingBundle nonhate;
  EmbeddingBundle hate;
  int label = 0;
};

struct LabeledExample {
  std::string id;
  EmbeddingBundle bundle;
  int label = 0;
};

struct EpochLog {
  int epoch = 0;
  long step = 0;
  double loss = 0.0;    // mean per example
  double metric = 0.0;  // pretrain: fraction with d(H,H+) < d(H,H-); finetune: held-out accuracy
  double f1 = 0.0;      // finetune only: held-out macro-F1
};

// Everything needed to continue a run bit-identically.
struct TrainState {
  int epoch = 0;  // completed epochs
  long step = 0;
  long optimizer_steps = 0;
  bool moments_ready = false;
  ItaParameters first_moment;
  ItaParameters second_moment;
  std::string rng_state;
  std::vector<EpochLog> history;

  void save(const std::filesystem::path& path) const;
  static TrainState load(const std::filesystem::path& path);
};

class AdamOptimizer {
 public:
  AdamOptimizer(double beta1, double beta2, double eps) : beta1_(beta1), beta2_(beta2), eps_(eps) {}
  // Updates trainable groups of the model in place; frozen groups and their
  // moments are left untouched.
  void step(ItaModel& model, const ItaParameters& grads, double lr, TrainState& state) const;

 private:
  double beta1_, beta2_, eps_;
};

struct TrainHooks {
  // Called after every optimizer step with the global step count.
  std::function<void(long step, const ItaModel& model)> after_step;
};

// Mini-batch Adam on the triplet loss only; the head, if any, stays frozen.
// Runs epochs [state.epoch, stop_epoch) where stop_epoch defaults to
// cfg.epochs. Throws divergence naming the batch ids on a non-finite loss.
TrainState pretrain(const std::vector<TripletExample>& data, ItaModel& model, const TrainConfig& cfg,
                    TrainState state = {}, int stop_epoch = -1, const TrainHooks& hooks = {});

// Binary cross-entropy on the head (and the stack unless head_only). A head
// is attached if missing. epochs=0 is an evaluation-only pass.
TrainState finetune(const std::vector<LabeledExample>& train, const std::vector<LabeledExample>& heldout,
                    ItaModel& model, const TrainConfig& cfg, TrainState state = {}, int stop_epoch = -1,
                    const TrainHooks& hooks = {});

// Fraction of triplets whose anchor is closer to its role-assigned positive.
double triplet_separation(const std::vector<TripletExample>& data, const ItaModel& model);

struct ClassifiedExample {
  std::string id;
  double probability = 0.0;
  int predicted = 0;
  int label = 0;
};
std::vector<ClassifiedExample> classify_all(const std::vector<LabeledExample>& data, const ItaModel& model,
                                            double threshold = 0.5);

void write_loss_csv(const std::filesystem::path& path, const std::vector<EpochLog>& history);

}  // namespace memesieve
