#include "memesieve/evaluation.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "memesieve/common.hpp"

namespace memesieve {

namespace {

void require_nonempty(const PredictionSet& preds) {
  if (preds.items.empty()) throw Error(ErrorKind::invalid_input, "prediction set is empty");
  for (const auto& p : preds.items) {
    if ((p.predicted != 0 && p.predicted != 1) || (p.truth != 0 && p.truth != 1)) {
      throw Error(ErrorKind::invalid_input, "labels must be binary");
    }
  }
}

double class_f1(long tp, long fp, long fn) {
  const long denom = 2 * tp + fp + fn;
  return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

}  // namespace

double accuracy(const PredictionSet& preds) {
  require_nonempty(preds);
  std::size_t correct = 0;
  for (const auto& p : preds.items) correct += p.predicted == p.truth ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(preds.items.size());
}

F1Breakdown f1_breakdown(const PredictionSet& preds) {
  require_nonempty(preds);
  long tp = 0;
  long fp = 0;
  long tn = 0;
  long fn = 0;
  for (const auto& p : preds.items) {
    if (p.predicted == 1 && p.truth == 1) ++tp;
    else if (p.predicted == 1) ++fp;
    else if (p.truth == 0) ++tn;
    else ++fn;
  }
  F1Breakdown out;
  // For the benign class the roles of the confusion cells swap.
  out.hateful = class_f1(tp, fp, fn);
  out.benign = class_f1(tn, fn, fp);
  if (tp + fp + fn == 0) out.absent_classes.push_back(1);
  if (tn + fn + fp == 0) out.absent_classes.push_back(0);
  out.macro = 0.5 * (out.hateful + out.benign);
  return out;
}

double macro_f1(const PredictionSet& preds) {
  auto b = f1_breakdown(preds);
  for (int c : b.absent_classes) {
    std::cerr << "warning: class " << c << " absent from predictions and labels"
              << (preds.dataset.empty() ? "" : " in " + preds.dataset) << "; scored as F1=0\n";
  }
  return b.macro;
}

RunAverage five_run_average(const std::vector<RunResult>& runs) {
  if (runs.empty()) throw Error(ErrorKind::invalid_input, "need at least one run to average");
  RunAverage out;
  out.runs = static_cast<int>(runs.size());
  for (const auto& r : runs) {
    out.mean_accuracy += r.accuracy;
    out.mean_f1 += r.f1;
  }
  const auto n = static_cast<double>(runs.size());
  out.mean_accuracy /= n;
  out.mean_f1 /= n;
  if (runs.size() > 1) {
    double sa = 0.0;
    double sf = 0.0;
    for (const auto& r : runs) {
      sa += (r.accuracy - out.mean_accuracy) * (r.accuracy - out.mean_accuracy);
      sf += (r.f1 - out.mean_f1) * (r.f1 - out.mean_f1);
    }
    out.std_accuracy = std::sqrt(sa / (n - 1));
    out.std_f1 = std::sqrt(sf / (n - 1));
  }
  return out;
}

std::vector<TransferCell> transfer_matrix(const std::vector<std::string>& train_sets,
                                          const std::vector<std::string>& test_sets,
                                          const TransferEvaluator& evaluate) {
  std::vector<TransferCell> cells;
  cells.reserve(train_sets.size() * test_sets.size());
  for (const auto& train : train_sets) {
    for (const auto& test : test_sets) {
      auto preds = evaluate(train, test);
      if (preds.dataset.empty()) preds.dataset = test;
      cells.push_back(TransferCell{train, test, accuracy(preds), macro_f1(preds)});
    }
  }
  return cells;
}

void write_transfer_csv(const std::filesystem::path& path, const std::vector<TransferCell>& cells) {
  std::ostringstream out;
  out << "train_set,test_set,accuracy,macro_f1\n";
  out.precision(10);
  for (const auto& c : cells) out << c.train_set << ',' << c.test_set << ',' << c.accuracy << ',' << c.f1 << '\n';
  write_text_file(path, out.str());
}

RubricSheet read_rubric_csv(const std::filesystem::path& path) {
  std::istringstream in(read_text_file(path));
  std::string line;
  RubricSheet sheet;
  bool header = true;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (header) {
      header = false;
      if (fields.size() != 4 || fields[0] != "meme_id" || fields[1] != "annotator" || fields[2] != "correctness" ||
          fields[3] != "relevance") {
        throw Error(ErrorKind::invalid_input, "rubric CSV header must be meme_id,annotator,correctness,relevance");
      }
      continue;
    }
    if (fields.size() != 4) {
      throw Error(ErrorKind::invalid_input, path.string() + ":" + std::to_string(lineno) + ": expected 4 fields");
    }
    auto binary = [&](const std::string& v) {
      if (v != "0" && v != "1") {
        throw Error(ErrorKind::invalid_input, path.string() + ":" + std::to_string(lineno) + ": scores must be 0 or 1");
      }
      return v == "1" ? 1 : 0;
    };
    sheet.rows.push_back(RubricRow{fields[0], fields[1], binary(fields[2]), binary(fields[3])});
  }
  return sheet;
}

namespace {

struct ItemVotes {
  std::vector<int> correctness;
  std::vector<int> relevance;
};

std::vector<std::pair<std::string, ItemVotes>> group_by_item(const RubricSheet& sheet) {
  std::vector<std::pair<std::string, ItemVotes>> items;
  std::map<std::string, std::size_t> index;
  for (const auto& row : sheet.rows) {
    auto [it, inserted] = index.emplace(row.meme_id, items.size());
    if (inserted) items.emplace_back(row.meme_id, ItemVotes{});
    auto& votes = items[it->second].second;
    votes.correctness.push_back(row.correctness);
    votes.relevance.push_back(row.relevance);
  }
  return items;
}

}  // namespace

RubricRates rubric_aggregate(const RubricSheet& sheet) {
  auto items = group_by_item(sheet);
  if (items.empty()) throw Error(ErrorKind::invalid_input, "rubric sheet has no items");
  RubricRates out;
  out.items = items.size();
  for (const auto& [id, votes] : items) {
    if (votes.correctness.size() != 3) {
      throw Error(ErrorKind::invalid_input, "item " + id + " has " + std::to_string(votes.correctness.size()) +
                                                " annotations; exactly 3 are required");
    }
    auto majority = [](const std::vector<int>& v) { return (v[0] + v[1] + v[2]) >= 2 ? 1 : 0; };
    out.correctness += majority(votes.correctness);
    out.relevance += majority(votes.relevance);
  }
  out.correctness /= static_cast<double>(items.size());
  out.relevance /= static_cast<double>(items.size());
  return out;
}

std::vector<std::vector<int>> rubric_counts(const RubricSheet& sheet, RubricCriterion criterion) {
  std::vector<std::vector<int>> counts;
  for (const auto& [id, votes] : group_by_item(sheet)) {
    const auto& v = criterion == RubricCriterion::correctness ? votes.correctness : votes.relevance;
    std::vector<int> row(2, 0);
    for (int s : v) ++row[static_cast<std::size_t>(s)];
    counts.push_back(row);
  }
  return counts;
}

double fleiss_kappa(const std::vector<std::vector<int>>& counts) {
  if (counts.empty()) throw Error(ErrorKind::invalid_input, "fleiss_kappa needs at least one item");
  const std::size_t categories = counts.front().size();
  if (categories < 2) throw Error(ErrorKind::invalid_input, "fleiss_kappa needs at least two categories");
  long raters = -1;
  std::vector<double> category_totals(categories, 0.0);
  double mean_agreement = 0.0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const auto& row = counts[i];
    if (row.size() != categories) throw Error(ErrorKind::invalid_input, "ragged rating matrix");
    long n = 0;
    double sq = 0.0;
    for (std::size_t j = 0; j < categories; ++j) {
      if (row[j] < 0) throw Error(ErrorKind::invalid_input, "negative rating count");
      n += row[j];
      sq += static_cast<double>(row[j]) * row[j];
      category_totals[j] += row[j];
    }
    if (raters < 0) raters = n;
    if (n != raters) {
      throw Error(ErrorKind::invalid_input, "item " + std::to_string(i) + " has " + std::to_string(n) +
                                                " ratings, expected " + std::to_string(raters));
    }
    if (raters < 2) throw Error(ErrorKind::invalid_input, "fleiss_kappa needs at least two raters per item");
    mean_agreement += (sq - static_cast<double>(n)) / (static_cast<double>(n) * (n - 1));
  }
  const auto items = static_cast<double>(counts.size());
  mean_agreement /= items;
  double chance = 0.0;
  for (double total : category_totals) {
    const double p = total / (items * static_cast<double>(raters));
    chance += p * p;
  }
  if (mean_agreement == 1.0) return 1.0;
  if (chance == 1.0) {
    throw Error(ErrorKind::invalid_input, "Fleiss' kappa undefined: chance agreement is 1 with imperfect observed agreement");
  }
  return (mean_agreement - chance) / (1.0 - chance);
}

}  // namespace memesieve
