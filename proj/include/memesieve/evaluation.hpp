#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace memesieve {

struct Prediction {
  int predicted = 0;
  int truth = 0;
  double probability = 0.0;
};

struct PredictionSet {
  std::vector<Prediction> items;
  std::string dataset;
  std::uint64_t seed = 0;
};

double accuracy(const PredictionSet& preds);

struct F1Breakdown {
  double hateful = 0.0;
  double benign = 0.0;
  double macro = 0.0;
  // Classes absent from both predictions and truth; each scored as F1 = 0.
  std::vector<int> absent_classes;
};

F1Breakdown f1_breakdown(const PredictionSet& preds);
// Unweighted mean of the two per-class F1 scores. Warns on stderr when a
// class is absent from both predictions and truth.
double macro_f1(const PredictionSet& preds);

struct RunAverage {
  int runs = 0;
  double mean_accuracy = 0.0;
  double mean_f1 = 0.0;
  double std_accuracy = 0.0;  // sample standard deviation, 0 for a single run
  double std_f1 = 0.0;
};

struct RunResult {
  double accuracy = 0.0;
  double f1 = 0.0;
};

RunAverage five_run_average(const std::vector<RunResult>& runs);

struct TransferCell {
  std::string train_set;
  std::string test_set;
  double accuracy = 0.0;
  double f1 = 0.0;
};

// Produces predictions of the model trained on `train_set` over `test_set`.
// Should throw not_found naming the missing checkpoint or dataset.
using TransferEvaluator = std::function<PredictionSet(const std::string& train_set, const std::string& test_set)>;

// Row-major grid: every training set (including any combined row the caller
// lists) against every test set.
std::vector<TransferCell> transfer_matrix(const std::vector<std::string>& train_sets,
                                          const std::vector<std::string>& test_sets,
                                          const TransferEvaluator& evaluate);
void write_transfer_csv(const std::filesystem::path& path, const std::vector<TransferCell>& cells);

struct RubricRow {
  std::string meme_id;
  std::string annotator;
  int correctness = 0;
  int relevance = 0;
};

struct RubricSheet {
  std::vector<RubricRow> rows;
};

// CSV with header meme_id,annotator,correctness,relevance.
RubricSheet read_rubric_csv(const std::filesystem::path& path);

struct RubricRates {
  std::size_t items = 0;
  double correctness = 0.0;
  double relevance = 0.0;
};

// Majority vote per item across exactly three annotators, then the mean over
// items, per criterion.
RubricRates rubric_aggregate(const RubricSheet& sheet);

enum class RubricCriterion { correctness, relevance };

// items x 2 category counts (votes for 0, votes for 1), items in first-seen order.
std::vector<std::vector<int>> rubric_counts(const RubricSheet& sheet, RubricCriterion criterion);

// Fleiss' kappa over an items x categories count matrix. Every item must
// carry the same number of ratings (>= 2). Returns exactly 1 when observed
// agreement is perfect; throws invalid_input when chance agreement is 1 but
// observed agreement is not (kappa undefined).
double fleiss_kappa(const std::vector<std::vector<int>>& counts);

// Published reference numbers. They need the licensed datasets or the raw
// annotation sheets to reproduce and are kept here as documentation targets.
namespace reference {
inline constexpr double kHatefulMemesAccuracy = 73.45;
inline constexpr double kHatefulMemesF1 = 71.64;
inline constexpr double kHarmCAccuracy = 83.62;
inline constexpr double kHarmCF1 = 83.07;
inline constexpr double kHarmPAccuracy = 88.78;
inline constexpr double kHarmPF1 = 88.53;
inline constexpr double kCorrectnessKappa = 0.7572;
inline constexpr double kRelevanceKappa = 0.6122;
inline constexpr long kHatefulMemesTrainingMemes = 8500;
inline constexpr long kReferenceHatefulMemes = 33844;
inline constexpr long kTripletPairs = 42344;
inline constexpr double kTrainableParametersMillions = 3.61;
}  // namespace reference

}  // namespace memesieve
