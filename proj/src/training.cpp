#include "memesieve/training.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "memesieve/common.hpp"
#include "memesieve/evaluation.hpp"

namespace memesieve {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using json = nlohmann::json;

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorKind::invalid_input, "TrainConfig: " + m); };
  if (!(margin > 0.0)) fail("margin must be > 0");
  if (pretrain_lr < 0.0 || finetune_lr < 0.0) fail("learning rates must be non-negative");
  if (epochs < 0) fail("epochs must be >= 0");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) fail("adam betas must be in [0,1)");
  if (max_steps < 0) fail("max_steps must be >= 0");
}

std::string TrainConfig::to_json() const {
  json j{{"margin", margin},       {"pretrain_lr", pretrain_lr}, {"finetune_lr", finetune_lr},
         {"epochs", epochs},       {"adam_betas", {beta1, beta2}}, {"adam_eps", adam_eps},
         {"batch_size", batch_size}, {"seed", seed},             {"squared_distance", squared_distance},
         {"head_only", head_only}, {"max_steps", max_steps},     {"threshold", threshold}};
  return j.dump();
}

ContrastivePair assign_roles(const VectorXd& nonhate, const VectorXd& hate, int label) {
  if (label != 0 && label != 1) throw Error(ErrorKind::invalid_input, "label must be 0 or 1");
  return label == 1 ? ContrastivePair{hate, nonhate} : ContrastivePair{nonhate, hate};
}

TripletLossTerms triplet_loss_terms(const VectorXd& anchor, const VectorXd& positive, const VectorXd& negative,
                                    double margin, bool squared) {
  if (anchor.size() != positive.size() || anchor.size() != negative.size()) {
    throw Error(ErrorKind::dimension_mismatch, "triplet_loss: vectors differ in length");
  }
  TripletLossTerms t;
  const VectorXd to_pos = anchor - positive;
  const VectorXd to_neg = anchor - negative;
  const double sq_pos = to_pos.squaredNorm();
  const double sq_neg = to_neg.squaredNorm();
  t.positive_distance = std::sqrt(sq_pos);
  t.negative_distance = std::sqrt(sq_neg);
  const double dp = squared ? sq_pos : t.positive_distance;
  const double dn = squared ? sq_neg : t.negative_distance;
  const double raw = dp - dn + margin;
  t.grad_anchor = VectorXd::Zero(anchor.size());
  t.grad_positive = VectorXd::Zero(anchor.size());
  t.grad_negative = VectorXd::Zero(anchor.size());
  if (!(raw > 0.0)) return t;
  t.loss = raw;
  // d||a-b|| / da = (a-b)/||a-b||; the subgradient at a coincident point is 0.
  VectorXd gp = squared ? VectorXd(2.0 * to_pos)
                        : (t.positive_distance > 0.0 ? VectorXd(to_pos / t.positive_distance) : VectorXd::Zero(anchor.size()));
  VectorXd gn = squared ? VectorXd(2.0 * to_neg)
                        : (t.negative_distance > 0.0 ? VectorXd(to_neg / t.negative_distance) : VectorXd::Zero(anchor.size()));
  t.grad_anchor = gp - gn;
  t.grad_positive = -gp;
  t.grad_negative = gn;
  return t;
}

double triplet_loss(const VectorXd& anchor, const VectorXd& positive, const VectorXd& negative, double margin,
                    bool squared) {
  return triplet_loss_terms(anchor, positive, negative, margin, squared).loss;
}

double classification_loss(double prob_hateful, int label) {
  if (label != 0 && label != 1) throw Error(ErrorKind::invalid_input, "label must be 0 or 1");
  const double p = label == 1 ? prob_hateful : 1.0 - prob_hateful;
  return -std::log(std::max(p, 1e-12));
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kStateMagic[8] = {'I', 'T', 'A', 'S', 'T', 'A', 'T', 'E'};

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw Error(ErrorKind::invalid_input, "truncated training state");
  return v;
}

void put_string(std::ostream& out, const std::string& s) {
  put(out, static_cast<std::uint64_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in) {
  const auto n = get<std::uint64_t>(in);
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw Error(ErrorKind::invalid_input, "truncated training state");
  return s;
}

void put_params(std::ostream& out, const ItaParameters& p) {
  put(out, static_cast<std::uint32_t>(p.layers.size()));
  put(out, static_cast<std::uint8_t>(p.has_head));
  p.for_each([&](const std::string&, ParamGroup, const MatrixXd& m) {
    put(out, static_cast<std::uint64_t>(m.rows()));
    put(out, static_cast<std::uint64_t>(m.cols()));
    out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
  });
}

ItaParameters get_params(std::istream& in) {
  ItaParameters p;
  p.layers.resize(get<std::uint32_t>(in));
  p.has_head = get<std::uint8_t>(in) != 0;
  p.for_each([&](const std::string&, ParamGroup, MatrixXd& m) {
    const auto rows = get<std::uint64_t>(in);
    const auto cols = get<std::uint64_t>(in);
    m.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
  });
  if (!in) throw Error(ErrorKind::invalid_input, "truncated training state");
  return p;
}

std::string save_rng(const std::mt19937_64& rng) {
  std::ostringstream ss;
  ss << rng;
  return ss.str();
}

std::mt19937_64 restore_rng(const std::string& state, std::uint64_t fresh_seed) {
  std::mt19937_64 rng(fresh_seed);
  if (!state.empty()) {
    std::istringstream ss(state);
    ss >> rng;
    if (!ss) throw Error(ErrorKind::invalid_input, "corrupt RNG state in training state");
  }
  return rng;
}

std::string batch_ids(const std::vector<std::size_t>& order, std::size_t begin, std::size_t end,
                      const auto& data) {
  std::string ids;
  for (std::size_t i = begin; i < end; ++i) {
    if (!ids.empty()) ids += ",";
    ids += data[order[i]].id;
  }
  return ids;
}

// Restores a model's trainable flags when a phase finishes or throws.
class TrainableGuard {
 public:
  explicit TrainableGuard(ItaModel& model)
      : model_(model), stack_(model.trainable(ParamGroup::stack)), head_(model.trainable(ParamGroup::head)) {}
  ~TrainableGuard() {
    model_.set_trainable(ParamGroup::stack, stack_);
    model_.set_trainable(ParamGroup::head, head_);
  }
  TrainableGuard(const TrainableGuard&) = delete;
  TrainableGuard& operator=(const TrainableGuard&) = delete;

 private:
  ItaModel& model_;
  bool stack_;
  bool head_;
};

}  // namespace

void TrainState::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot write training state " + path.string());
  out.write(kStateMagic, sizeof(kStateMagic));
  put(out, static_cast<std::int32_t>(epoch));
  put(out, static_cast<std::int64_t>(step));
  put(out, static_cast<std::int64_t>(optimizer_steps));
  put(out, static_cast<std::uint8_t>(moments_ready));
  put_string(out, rng_state);
  put(out, static_cast<std::uint64_t>(history.size()));
  for (const auto& h : history) {
    put(out, static_cast<std::int32_t>(h.epoch));
    put(out, static_cast<std::int64_t>(h.step));
    put(out, h.loss);
    put(out, h.metric);
    put(out, h.f1);
  }
  if (moments_ready) {
    put_params(out, first_moment);
    put_params(out, second_moment);
  }
}

TrainState TrainState::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::not_found, "training state not found: " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kStateMagic, sizeof(magic)) != 0) {
    throw Error(ErrorKind::invalid_input, "not a training state file: " + path.string());
  }
  TrainState s;
  s.epoch = get<std::int32_t>(in);
  s.step = get<std::int64_t>(in);
  s.optimizer_steps = get<std::int64_t>(in);
  s.moments_ready = get<std::uint8_t>(in) != 0;
  s.rng_state = get_string(in);
  const auto n = get<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < n; ++i) {
    EpochLog h;
    h.epoch = get<std::int32_t>(in);
    h.step = get<std::int64_t>(in);
    h.loss = get<double>(in);
    h.metric = get<double>(in);
    h.f1 = get<double>(in);
    s.history.push_back(h);
  }
  if (s.moments_ready) {
    s.first_moment = get_params(in);
    s.second_moment = get_params(in);
  }
  return s;
}

void AdamOptimizer::step(ItaModel& model, const ItaParameters& grads, double lr, TrainState& state) const {
  if (!state.moments_ready || state.first_moment.has_head != model.has_head()) {
    state.first_moment = model.parameters().zeros_like();
    state.second_moment = model.parameters().zeros_like();
    state.moments_ready = true;
  }
  const long t = ++state.optimizer_steps;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t));

  std::vector<MatrixXd*> values;
  std::vector<ParamGroup> groups;
  model.mutable_parameters().for_each([&](const std::string&, ParamGroup g, MatrixXd& m) {
    values.push_back(&m);
    groups.push_back(g);
  });
  std::vector<const MatrixXd*> grad_list;
  grads.for_each([&](const std::string&, ParamGroup, const MatrixXd& m) { grad_list.push_back(&m); });
  std::vector<MatrixXd*> m1;
  std::vector<MatrixXd*> m2;
  state.first_moment.for_each([&](const std::string&, ParamGroup, MatrixXd& m) { m1.push_back(&m); });
  state.second_moment.for_each([&](const std::string&, ParamGroup, MatrixXd& m) { m2.push_back(&m); });
  if (grad_list.size() != values.size() || m1.size() != values.size()) {
    throw Error(ErrorKind::dimension_mismatch, "optimizer state does not match model parameters");
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!model.trainable(groups[i])) continue;
    const MatrixXd& g = *grad_list[i];
    *m1[i] = beta1_ * *m1[i] + (1.0 - beta1_) * g;
    *m2[i] = beta2_ * *m2[i] + (1.0 - beta2_) * g.cwiseProduct(g);
    const MatrixXd update = (m1[i]->array() / c1) / ((m2[i]->array() / c2).sqrt() + eps_);
    *values[i] -= lr * update;
  }
}

// ---------------------------------------------------------------------------

TrainState pretrain(const std::vector<TripletExample>& data, ItaModel& model, const TrainConfig& cfg,
                    TrainState state, int stop_epoch, const TrainHooks& hooks) {
  cfg.validate();
  if (data.empty()) throw Error(ErrorKind::invalid_input, "pretrain: triplet set is empty");
  TrainableGuard guard(model);
  model.set_trainable(ParamGroup::stack, true);
  model.set_trainable(ParamGroup::head, false);

  const int last = stop_epoch < 0 ? cfg.epochs : std::min(stop_epoch, cfg.epochs);
  auto rng = restore_rng(state.rng_state, derive_seed(cfg.seed, "pretrain"));
  const AdamOptimizer adam(cfg.beta1, cfg.beta2, cfg.adam_eps);
  const auto batch = static_cast<std::size_t>(cfg.batch_size);

  for (int epoch = state.epoch; epoch < last; ++epoch) {
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);

    double epoch_loss = 0.0;
    std::size_t satisfied = 0;
    std::size_t seen = 0;
    bool capped = false;
    for (std::size_t begin = 0; begin < order.size(); begin += batch) {
      const std::size_t end = std::min(order.size(), begin + batch);
      ItaParameters grads = model.parameters().zeros_like();
      double batch_loss = 0.0;
      for (std::size_t i = begin; i < end; ++i) {
        const auto& ex = data[order[i]];
        auto anchor = model.forward_trace(ex.anchor, &rng);
        auto nonhate = model.forward_trace(ex.nonhate, &rng);
        auto hate = model.forward_trace(ex.hate, &rng);
        const ForwardTrace& pos = ex.label == 1 ? hate : nonhate;
        const ForwardTrace& neg = ex.label == 1 ? nonhate : hate;
        auto terms = triplet_loss_terms(anchor.joint, pos.joint, neg.joint, cfg.margin, cfg.squared_distance);
        if (!std::isfinite(terms.loss)) {
          throw Error(ErrorKind::divergence, "non-finite triplet loss at epoch " + std::to_string(epoch) + ", step " +
                                                 std::to_string(state.step) + "; batch ids: " +
                                                 batch_ids(order, begin, end, data));
        }
        batch_loss += terms.loss;
        satisfied += terms.positive_distance < terms.negative_distance ? 1 : 0;
        if (terms.loss > 0.0) {
          model.backward(anchor, terms.grad_anchor, grads);
          model.backward(pos, terms.grad_positive, grads);
          model.backward(neg, terms.grad_negative, grads);
        }
      }
      epoch_loss += batch_loss;
      seen += end - begin;
      adam.step(model, grads, cfg.pretrain_lr, state);
      ++state.step;
      if (hooks.after_step) hooks.after_step(state.step, model);
      if (cfg.max_steps > 0 && state.step >= cfg.max_steps) {
        capped = true;
        break;
      }
    }
    state.history.push_back(EpochLog{epoch + 1, state.step, epoch_loss / static_cast<double>(seen),
                                     static_cast<double>(satisfied) / static_cast<double>(seen), 0.0});
    state.rng_state = save_rng(rng);
    if (capped) break;
    state.epoch = epoch + 1;
  }
  return state;
}

namespace {

EpochLog evaluate_split(const std::vector<LabeledExample>& split, const ItaModel& model, double threshold, int epoch,
                        long step, double loss) {
  PredictionSet preds;
  for (const auto& c : classify_all(split, model, threshold)) preds.items.push_back({c.predicted, c.label, c.probability});
  return EpochLog{epoch, step, loss, accuracy(preds), f1_breakdown(preds).macro};
}

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

}  // namespace

TrainState finetune(const std::vector<LabeledExample>& train, const std::vector<LabeledExample>& heldout,
                    ItaModel& model, const TrainConfig& cfg, TrainState state, int stop_epoch,
                    const TrainHooks& hooks) {
  cfg.validate();
  if (train.empty()) throw Error(ErrorKind::invalid_input, "finetune: training set is empty");
  for (const auto& ex : train) {
    if (ex.label != 0 && ex.label != 1) throw Error(ErrorKind::invalid_input, "finetune: label of " + ex.id + " is not binary");
  }
  if (!model.has_head()) model.attach_head();
  TrainableGuard guard(model);
  model.set_trainable(ParamGroup::stack, !cfg.head_only);
  model.set_trainable(ParamGroup::head, true);
  const auto& eval_split = heldout.empty() ? train : heldout;

  const int last = stop_epoch < 0 ? cfg.epochs : std::min(stop_epoch, cfg.epochs);
  if (cfg.epochs == 0) {
    state.history.push_back(evaluate_split(eval_split, model, cfg.threshold, 0, state.step, 0.0));
    return state;
  }

  auto rng = restore_rng(state.rng_state, derive_seed(cfg.seed, "finetune"));
  const AdamOptimizer adam(cfg.beta1, cfg.beta2, cfg.adam_eps);
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  const bool stack_grads = !cfg.head_only;

  for (int epoch = state.epoch; epoch < last; ++epoch) {
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    std::size_t seen = 0;
    bool capped = false;
    for (std::size_t begin = 0; begin < order.size(); begin += batch) {
      const std::size_t end = std::min(order.size(), begin + batch);
      ItaParameters grads = model.parameters().zeros_like();
      for (std::size_t i = begin; i < end; ++i) {
        const auto& ex = train[order[i]];
        auto trace = model.forward_trace(ex.bundle, &rng);
        const double logit = model.head_logit(trace.joint);
        const double loss = ex.label == 1 ? softplus(-logit) : softplus(logit);
        if (!std::isfinite(loss)) {
          throw Error(ErrorKind::divergence, "non-finite classification loss at epoch " + std::to_string(epoch) +
                                                 ", step " + std::to_string(state.step) + "; batch ids: " +
                                                 batch_ids(order, begin, end, train));
        }
        epoch_loss += loss;
        const VectorXd grad_joint = model.backward_head(trace.joint, sigmoid(logit) - ex.label, grads);
        if (stack_grads) model.backward(trace, grad_joint, grads);
      }
      seen += end - begin;
      adam.step(model, grads, cfg.finetune_lr, state);
      ++state.step;
      if (hooks.after_step) hooks.after_step(state.step, model);
      if (cfg.max_steps > 0 && state.step >= cfg.max_steps) {
        capped = true;
        break;
      }
    }
    state.history.push_back(
        evaluate_split(eval_split, model, cfg.threshold, epoch + 1, state.step, epoch_loss / static_cast<double>(seen)));
    state.rng_state = save_rng(rng);
    if (capped) break;
    state.epoch = epoch + 1;
  }
  return state;
}

double triplet_separation(const std::vector<TripletExample>& data, const ItaModel& model) {
  if (data.empty()) throw Error(ErrorKind::invalid_input, "triplet_separation: empty set");
  std::size_t ok = 0;
  for (const auto& ex : data) {
    auto a = model.forward(ex.anchor, false).joint;
    auto roles = assign_roles(model.forward(ex.nonhate, false).joint, model.forward(ex.hate, false).joint, ex.label);
    ok += (a - roles.positive).norm() < (a - roles.negative).norm() ? 1 : 0;
  }
  return static_cast<double>(ok) / static_cast<double>(data.size());
}

std::vector<ClassifiedExample> classify_all(const std::vector<LabeledExample>& data, const ItaModel& model,
                                            double threshold) {
  std::vector<ClassifiedExample> out;
  out.reserve(data.size());
  for (const auto& ex : data) {
    const double p = model.classify(ex.bundle);
    out.push_back(ClassifiedExample{ex.id, p, p > threshold ? 1 : 0, ex.label});
  }
  return out;
}

void write_loss_csv(const std::filesystem::path& path, const std::vector<EpochLog>& history) {
  std::ostringstream out;
  out.precision(10);
  out << "epoch,step,loss,metric\n";
  for (const auto& h : history) out << h.epoch << ',' << h.step << ',' << h.loss << ',' << h.metric << '\n';
  write_text_file(path, out.str());
}

}  // namespace memesieve
