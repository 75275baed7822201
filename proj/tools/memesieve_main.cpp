// memesieve: build-triplets, pretrain, finetune, classify, segment, eval.
#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "memesieve/cmgen.hpp"
#include "memesieve/common.hpp"
#include "memesieve/config.hpp"
#include "memesieve/encoder.hpp"
#include "memesieve/evaluation.hpp"
#include "memesieve/ita_model.hpp"
#include "memesieve/ledger.hpp"
#include "memesieve/render.hpp"
#include "memesieve/segmentation.hpp"
#include "memesieve/training.hpp"
#include "memesieve/triplets.hpp"

namespace fs = std::filesystem;
using namespace memesieve;
using ordered_json = nlohmann::ordered_json;

namespace {

struct GlobalOptions {
  std::string config_file;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string ledger;
  std::string out;
};

// Shared state of one command invocation.
class Run {
 public:
  Run(std::string command, const GlobalOptions& g, std::vector<std::string> flag_overrides)
      : command_(std::move(command)), start_(std::chrono::steady_clock::now()) {
    auto overrides = g.overrides;
    for (auto& o : flag_overrides) overrides.push_back(std::move(o));
    if (g.seed) overrides.push_back("seed=" + std::to_string(*g.seed));
    cfg = load_run_config(g.config_file.empty() ? std::nullopt : std::optional<fs::path>(g.config_file), overrides);
    if (!g.config_file.empty()) add_input(g.config_file);
    out = !g.out.empty() ? fs::path(g.out)
          : !cfg.output_dir.empty() ? fs::path(cfg.output_dir)
                                    : memesieve_home() / "runs" / command_;
    ledger_ = g.ledger.empty() ? memesieve_home() / "ledger.jsonl" : fs::path(g.ledger);
    entry_.command = command_;
    entry_.config_digest = cfg.digest();
    entry_.seed = cfg.seed;
  }

  RunConfig cfg;
  fs::path out;

  const DualEncoder& encoder() {
    if (!encoder_) encoder_ = make_encoder(cfg.encoder);
    return *encoder_;
  }

  void add_input(const fs::path& p) { entry_.inputs.emplace_back(p.string(), fs::exists(p) ? digest_path(p) : ""); }
  void add_output(const fs::path& p) { outputs_.push_back(p); }

  void prepare_output() {
    fs::create_directories(out);
    write_text_file(out / "resolved_config.json", cfg.to_json() + "\n");
    add_output(out / "resolved_config.json");
  }

  void finish(const std::string& status, const std::string& error = "") {
    entry_.status = status;
    entry_.error = error;
    for (const auto& p : outputs_) entry_.outputs.emplace_back(p.string(), fs::exists(p) ? digest_path(p) : "");
    entry_.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    append_ledger(ledger_, entry_);
  }

  const std::string& command() const { return command_; }

 private:
  std::string command_;
  std::chrono::steady_clock::time_point start_;
  fs::path ledger_;
  LedgerEntry entry_;
  std::vector<fs::path> outputs_;
  std::unique_ptr<DualEncoder> encoder_;
};

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

std::string relative_or_absolute(const fs::path& target, const fs::path& base) {
  return fs::weakly_canonical(target).lexically_relative(fs::weakly_canonical(base)).generic_string();
}

TextInput prepare_text(const DualEncoder& enc, const std::string& text, bool truncate) {
  auto t = enc.tokenize(text);
  return truncate ? truncate_to_max(t, enc.shape().max_text_tokens) : t;
}

class BundleCache {
 public:
  BundleCache(const DualEncoder& enc, bool truncate) : enc_(enc), truncate_(truncate) {}

  EmbeddingBundle encode(const fs::path& image_path, const std::string& text) {
    auto it = images_.find(image_path.string());
    if (it == images_.end()) it = images_.emplace(image_path.string(), read_png(image_path)).first;
    return enc_.encode(it->second, prepare_text(enc_, text, truncate_));
  }

 private:
  const DualEncoder& enc_;
  bool truncate_;
  std::map<std::string, ImageInput> images_;
};

std::vector<LabeledExample> labeled_examples(Run& run, const fs::path& corpus) {
  run.add_input(corpus);
  std::vector<LabeledExample> out;
  for (const auto& r : read_corpus(corpus)) {
    if (!r.label) throw Error(ErrorKind::invalid_input, "meme " + r.id + " in " + corpus.string() + " has no label");
    out.push_back(LabeledExample{r.id, run.encoder().encode(r.image, prepare_text(run.encoder(), r.text, run.cfg.triplets.truncate_text)),
                                 *r.label});
  }
  return out;
}

ItaModel load_or_init(Run& run, const std::string& init) {
  const auto ita = run.cfg.ita_config(run.encoder().shape());
  if (init.empty()) return ItaModel(ita, derive_seed(run.cfg.seed, "init"));
  run.add_input(init);
  return load_checkpoint(init, ita);
}

void write_run_json(Run& run, const ItaModel& model, const TrainState& state, const std::string& phase) {
  ordered_json j;
  j["command"] = run.command();
  j["phase"] = phase;
  j["code_version"] = std::string(kCodeVersion);
  j["seed"] = run.cfg.seed;
  j["config"] = ordered_json::parse(run.cfg.to_json());
  j["encoder"] = {{"name", run.encoder().name()}, {"parameter_checksum", to_hex(run.encoder().parameter_checksum())}};
  j["model"] = {{"config", ordered_json::parse(model.config().to_json())},
                {"trainable_parameters", model.parameter_count()},
                {"checksum", to_hex(model.parameters().checksum())}};
  j["epochs_completed"] = state.epoch;
  j["steps"] = state.step;
  j["history"] = ordered_json::array();
  for (const auto& h : state.history) {
    j["history"].push_back({{"epoch", h.epoch}, {"step", h.step}, {"loss", h.loss}, {"metric", h.metric}, {"f1", h.f1}});
  }
  write_text_file(run.out / "run.json", j.dump(2) + "\n");
  run.add_output(run.out / "run.json");
}

// ---------------------------------------------------------------------------

int cmd_build_triplets(Run& run, const std::string& corpus_path, const std::string& reference_path,
                       const std::string& index_path) {
  run.prepare_output();
  run.add_input(corpus_path);
  const auto corpus = read_corpus(corpus_path);
  const fs::path index_dir = index_path.empty() ? run.out / "index" : fs::path(index_path);

  ReferenceIndex index;
  if (!index_path.empty()) {
    run.add_input(index_path);
    index = ReferenceIndex::load(index_dir);
  } else if (!reference_path.empty()) {
    run.add_input(reference_path);
    auto refs = read_corpus(reference_path);
    for (auto& r : refs) {
      r.image_path = relative_or_absolute(resolve(fs::path(reference_path).parent_path(), r.image_path), index_dir);
    }
    if (!refs.empty()) {
      index = build_reference_index(refs, run.encoder());
      index.save(index_dir);
      run.add_output(index_dir);
    }
  }
  if (corpus.empty()) {
    std::cerr << "warning: corpus " << corpus_path << " is empty; writing an empty manifest\n";
  } else if (index.size() == 0) {
    throw Error(ErrorKind::invalid_input, "a non-empty reference set (--reference or --index) is required");
  }

  const auto& c = run.cfg;
  auto backends = mock_backends(derive_seed(c.seed, "cmgen"), c.cmgen.generated_height, c.cmgen.generated_width);
  backends.positive_prompt = c.cmgen.positive_prompt;
  LexiconTextFilter text_filter(c.filters.lexicon);
  SkinToneImageFilter image_filter(c.filters.skin_threshold);

  TripletBuildContext ctx;
  ctx.backends = &backends;
  ctx.text_filter = &text_filter;
  ctx.image_filter = &image_filter;
  ctx.index = &index;
  ctx.encoder = &run.encoder();
  ctx.output_dir = run.out;
  ctx.corpus_dir = fs::path(corpus_path).parent_path();
  ctx.index_dir = index_dir;
  ctx.config_digest = c.digest();
  const auto manifest = build_triplets(corpus, ctx, derive_seed(c.seed, "triplets"));
  write_triplet_manifest(run.out / "triplets.jsonl", manifest);
  run.add_output(run.out / "triplets.jsonl");
  if (fs::exists(run.out / "generated")) run.add_output(run.out / "generated");
  for (const auto& s : manifest.skipped) std::cerr << "warning: skipped " << s.id << ": " << s.reason << "\n";

  ordered_json summary{{"manifest", (run.out / "triplets.jsonl").string()},
                       {"count", manifest.count()},
                       {"skipped", manifest.skipped.size()}};
  std::cout << summary.dump() << "\n";
  return 0;
}

int cmd_pretrain(Run& run, const std::string& triplets_path, const std::string& init, const std::string& resume) {
  run.prepare_output();
  run.add_input(triplets_path);
  const auto manifest = read_triplet_manifest(triplets_path);
  if (manifest.records.empty()) throw Error(ErrorKind::invalid_input, "triplet manifest " + triplets_path + " is empty");
  const fs::path base = fs::path(triplets_path).parent_path();
  BundleCache cache(run.encoder(), run.cfg.triplets.truncate_text);
  std::vector<TripletExample> data;
  for (const auto& r : manifest.records) {
    data.push_back(TripletExample{r.id, cache.encode(resolve(base, r.anchor.image_path), r.anchor.text),
                                  cache.encode(resolve(base, r.nonhate.source.image_path), r.nonhate.source.text),
                                  cache.encode(resolve(base, r.hate.source.image_path), r.hate.source.text), r.label});
  }

  ItaModel model = load_or_init(run, init);
  TrainState state;
  if (!resume.empty()) {
    run.add_input(resume);
    state = TrainState::load(resume);
  }
  state = pretrain(data, model, run.cfg.train_config(), state);
  save_checkpoint(run.out / "model.itackpt", model);
  state.save(run.out / "train_state.bin");
  write_loss_csv(run.out / "loss.csv", state.history);
  write_run_json(run, model, state, "pretrain");
  for (const char* f : {"model.itackpt", "train_state.bin", "loss.csv"}) run.add_output(run.out / f);

  ordered_json summary{{"checkpoint", (run.out / "model.itackpt").string()},
                       {"triplets", data.size()},
                       {"epochs", state.epoch},
                       {"final_loss", state.history.empty() ? 0.0 : state.history.back().loss},
                       {"separation", triplet_separation(data, model)}};
  std::cout << summary.dump() << "\n";
  return 0;
}

int cmd_finetune(Run& run, const std::string& data_path, const std::string& heldout_path, const std::string& init,
                 const std::string& resume) {
  run.prepare_output();
  const auto train = labeled_examples(run, data_path);
  const auto heldout = heldout_path.empty() ? std::vector<LabeledExample>{} : labeled_examples(run, heldout_path);
  ItaModel model = load_or_init(run, init);
  TrainState state;
  if (!resume.empty()) {
    run.add_input(resume);
    state = TrainState::load(resume);
  }
  state = finetune(train, heldout, model, run.cfg.train_config(), state);
  save_checkpoint(run.out / "model.itackpt", model);
  state.save(run.out / "train_state.bin");
  write_loss_csv(run.out / "loss.csv", state.history);
  write_run_json(run, model, state, "finetune");
  for (const char* f : {"model.itackpt", "train_state.bin", "loss.csv"}) run.add_output(run.out / f);

  const auto& last = state.history.back();
  ordered_json summary{{"checkpoint", (run.out / "model.itackpt").string()},
                       {"examples", train.size()},
                       {"epochs", state.epoch},
                       {"eval_split", heldout.empty() ? "train" : "heldout"},
                       {"accuracy", last.metric},
                       {"f1", last.f1}};
  std::cout << summary.dump() << "\n";
  return 0;
}

ItaModel load_classifier(Run& run, const std::string& checkpoint) {
  run.add_input(checkpoint);
  auto model = load_checkpoint(checkpoint, run.cfg.ita_config(run.encoder().shape()));
  if (!model.has_head()) throw Error(ErrorKind::invalid_input, "checkpoint " + checkpoint + " has no classification head");
  return model;
}

int cmd_classify(Run& run, const std::string& checkpoint, const std::string& data_path, const std::string& image,
                 const std::string& text, const std::string& id) {
  if (data_path.empty() == image.empty()) throw Error(ErrorKind::invalid_input, "pass either --data or --image/--text");
  run.prepare_output();
  const auto model = load_classifier(run, checkpoint);
  const double threshold = run.cfg.eval.threshold;
  std::string lines;
  auto emit = [&](const std::string& meme_id, const EmbeddingBundle& bundle, std::optional<int> truth) {
    const double p = model.classify(bundle);
    ordered_json j{{"id", meme_id}, {"prob", p}, {"label", p > threshold ? 1 : 0}};
    if (truth) j["truth"] = *truth;
    lines += j.dump() + "\n";
  };
  if (!data_path.empty()) {
    run.add_input(data_path);
    for (const auto& r : read_corpus(data_path)) {
      emit(r.id, run.encoder().encode(r.image, prepare_text(run.encoder(), r.text, run.cfg.triplets.truncate_text)), r.label);
    }
  } else {
    run.add_input(image);
    emit(id.empty() ? fs::path(image).stem().string() : id,
         run.encoder().encode(read_png(image), prepare_text(run.encoder(), text, run.cfg.triplets.truncate_text)), std::nullopt);
  }
  write_text_file(run.out / "predictions.jsonl", lines);
  run.add_output(run.out / "predictions.jsonl");
  std::cout << lines;
  return 0;
}

int cmd_segment(Run& run, const std::string& checkpoint, const std::string& image_path, const std::string& text,
                const std::string& id) {
  run.prepare_output();
  run.add_input(checkpoint);
  run.add_input(image_path);
  const auto model = load_checkpoint(checkpoint, run.cfg.ita_config(run.encoder().shape()));
  const ImageInput image = read_png(image_path);
  const TextInput tokens = prepare_text(run.encoder(), text, run.cfg.triplets.truncate_text);
  const EmbeddingBundle bundle = run.encoder().encode(image, tokens);
  const auto forward = model.forward(bundle, true);

  LuminanceMaskProposer proposer(run.cfg.seg.luminance_delta, run.cfg.seg.min_object_pixels);
  const auto masks = proposer.propose(image);
  const auto seg_cfg = run.cfg.seg_config(run.encoder().shape());
  const auto result = segment_attention(*forward.attention, seg_cfg, image.height, image.width, masks);

  write_heatmap_png16(run.out / "heatmap.png", result.heatmap);
  write_npy(run.out / "heatmap.npy", result.heatmap);

  ordered_json tok;
  tok["id"] = id.empty() ? fs::path(image_path).stem().string() : id;
  tok["text"] = text;
  tok["top_k"] = seg_cfg.top_k;
  tok["tokens"] = ordered_json::array();
  for (const auto& t : result.token_scores) {
    tok["tokens"].push_back({{"index", t.index}, {"piece", tokens.pieces[static_cast<std::size_t>(t.index)]}, {"score", t.score}});
  }
  tok["selected"] = ordered_json::array();
  std::vector<int> selected_indices;
  for (const auto& t : result.selected_tokens) {
    tok["selected"].push_back({{"index", t.index}, {"piece", tokens.pieces[static_cast<std::size_t>(t.index)]}, {"score", t.score}});
    selected_indices.push_back(t.index);
  }
  if (model.has_head()) tok["prob"] = model.classify(bundle);
  write_text_file(run.out / "tokens.json", tok.dump(2) + "\n");

  ordered_json obj;
  obj["lambda"] = seg_cfg.lambda;
  obj["proposer"] = proposer.name();
  obj["objects"] = ordered_json::array();
  fs::create_directories(run.out / "objects");
  for (std::size_t i = 0; i < result.object_scores.size(); ++i) {
    const auto& o = result.object_scores[i];
    std::ostringstream name;
    name << "objects/object_" << i << ".png";
    write_mask_png(run.out / name.str(), o.mask);
    const bool chosen = std::find(result.selected_objects.begin(), result.selected_objects.end(), i) != result.selected_objects.end();
    obj["objects"].push_back({{"index", i}, {"mask", name.str()}, {"pixels", o.mask.count()}, {"phi", o.phi}, {"selected", chosen}});
  }
  write_text_file(run.out / "objects.json", obj.dump(2) + "\n");

  write_png(run.out / "overlay.png", render_overlay(image, result.heatmap, tokens.pieces, selected_indices));
  for (const char* f : {"heatmap.png", "heatmap.npy", "tokens.json", "objects.json", "objects", "overlay.png"}) {
    run.add_output(run.out / f);
  }
  std::cout << tok.dump() << "\n";
  return 0;
}

PredictionSet predict(const ItaModel& model, const std::vector<LabeledExample>& data, double threshold,
                      const std::string& tag, std::uint64_t seed) {
  PredictionSet preds;
  preds.dataset = tag;
  preds.seed = seed;
  for (const auto& c : classify_all(data, model, threshold)) preds.items.push_back({c.predicted, c.label, c.probability});
  return preds;
}

std::pair<std::string, std::string> split_tag(const std::string& s, const char* flag) {
  const auto eq = s.find('=');
  if (eq == std::string::npos || eq == 0) throw Error(ErrorKind::invalid_input, std::string(flag) + " expects TAG=PATH, got " + s);
  return {s.substr(0, eq), s.substr(eq + 1)};
}

int cmd_eval(Run& run, const std::string& checkpoint, const std::string& data_path, const std::string& train_path,
             const std::vector<std::string>& models, const std::vector<std::string>& datasets, bool transfer,
             const std::string& kappa_sheet) {
  run.prepare_output();
  std::ostringstream summary;
  std::ostringstream fmt;
  fmt.precision(10);

  if (!kappa_sheet.empty()) {
    run.add_input(kappa_sheet);
    const auto sheet = read_rubric_csv(kappa_sheet);
    const auto rates = rubric_aggregate(sheet);
    const double kc = fleiss_kappa(rubric_counts(sheet, RubricCriterion::correctness));
    const double kr = fleiss_kappa(rubric_counts(sheet, RubricCriterion::relevance));
    fmt << "criterion,majority_rate,fleiss_kappa\n"
        << "correctness," << rates.correctness << ',' << kc << '\n'
        << "relevance," << rates.relevance << ',' << kr << '\n';
    write_text_file(run.out / "kappa.csv", fmt.str());
    run.add_output(run.out / "kappa.csv");
    summary << "items: " << rates.items << "\n" << fmt.str();
    ordered_json j{{"items", rates.items},
                   {"correctness", {{"rate", rates.correctness}, {"kappa", kc}}},
                   {"relevance", {{"rate", rates.relevance}, {"kappa", kr}}}};
    std::cout << j.dump() << "\n";
  } else if (transfer) {
    if (models.empty() || datasets.empty()) throw Error(ErrorKind::invalid_input, "--transfer needs --model and --dataset");
    std::vector<std::string> train_tags, test_tags;
    std::map<std::string, std::string> model_paths, data_paths;
    for (const auto& m : models) {
      auto [tag, path] = split_tag(m, "--model");
      train_tags.push_back(tag);
      model_paths[tag] = path;
    }
    for (const auto& d : datasets) {
      auto [tag, path] = split_tag(d, "--dataset");
      test_tags.push_back(tag);
      data_paths[tag] = path;
    }
    std::map<std::string, std::vector<LabeledExample>> loaded;
    auto cells = transfer_matrix(train_tags, test_tags, [&](const std::string& tr, const std::string& te) {
      const auto& ckpt = model_paths.at(tr);
      if (!fs::exists(ckpt)) throw Error(ErrorKind::not_found, "checkpoint for '" + tr + "' not found: " + ckpt);
      const auto& dpath = data_paths.at(te);
      if (!fs::exists(dpath)) throw Error(ErrorKind::not_found, "dataset '" + te + "' not found: " + dpath);
      if (!loaded.count(te)) loaded[te] = labeled_examples(run, dpath);
      const auto model = load_classifier(run, ckpt);
      return predict(model, loaded[te], run.cfg.eval.threshold, te, run.cfg.seed);
    });
    write_transfer_csv(run.out / "transfer.csv", cells);
    run.add_output(run.out / "transfer.csv");
    summary << read_text_file(run.out / "transfer.csv");
    std::cout << read_text_file(run.out / "transfer.csv");
  } else {
    if (checkpoint.empty() || data_path.empty()) throw Error(ErrorKind::invalid_input, "eval needs --checkpoint and --data");
    const auto test = labeled_examples(run, data_path);
    const int runs = run.cfg.eval.runs;
    if (runs > 1 && train_path.empty()) {
      throw Error(ErrorKind::invalid_input, "--runs > 1 needs --train so each seeded run fine-tunes its own model");
    }
    std::vector<RunResult> results;
    fmt << "run,seed,accuracy,macro_f1\n";
    if (runs == 1 && train_path.empty()) {
      const auto model = load_classifier(run, checkpoint);
      const auto preds = predict(model, test, run.cfg.eval.threshold, data_path, run.cfg.seed);
      results.push_back({accuracy(preds), macro_f1(preds)});
      fmt << 0 << ',' << run.cfg.seed << ',' << results.back().accuracy << ',' << results.back().f1 << '\n';
    } else {
      const auto train = labeled_examples(run, train_path);
      run.add_input(checkpoint);
      for (int i = 0; i < runs; ++i) {
        const std::uint64_t seed = run.cfg.seed + static_cast<std::uint64_t>(i);
        auto model = load_checkpoint(checkpoint, run.cfg.ita_config(run.encoder().shape()));
        auto tc = run.cfg.train_config();
        tc.seed = seed;
        finetune(train, {}, model, tc);
        const auto preds = predict(model, test, run.cfg.eval.threshold, data_path, seed);
        results.push_back({accuracy(preds), macro_f1(preds)});
        fmt << i << ',' << seed << ',' << results.back().accuracy << ',' << results.back().f1 << '\n';
      }
    }
    const auto avg = five_run_average(results);
    write_text_file(run.out / "metrics.csv", fmt.str());
    run.add_output(run.out / "metrics.csv");
    summary.precision(10);
    summary << "runs: " << avg.runs << "\naccuracy: " << avg.mean_accuracy << " (sd " << avg.std_accuracy
            << ")\nmacro_f1: " << avg.mean_f1 << " (sd " << avg.std_f1 << ")\n";
    ordered_json j{{"runs", avg.runs},
                   {"accuracy", avg.mean_accuracy},
                   {"accuracy_sd", avg.std_accuracy},
                   {"f1", avg.mean_f1},
                   {"f1_sd", avg.std_f1}};
    std::cout << j.dump() << "\n";
  }
  write_text_file(run.out / "summary.txt", summary.str());
  run.add_output(run.out / "summary.txt");
  return 0;
}

void emit_error(const std::string& command, const std::string& kind, const std::string& message, int code) {
  ordered_json j;
  j["error"] = {{"command", command}, {"kind", kind}, {"message", message}, {"exit_code", code}};
  std::cerr << j.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"memesieve: contrastive triplets, image-text alignment training and attention segmentation for memes"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalOptions g;
  app.add_option("--config", g.config_file, "YAML run configuration");
  app.add_option("--set", g.overrides, "Override a config key, e.g. --set train.epochs=2")->take_all();
  app.add_option("--seed", g.seed, "Root seed for the command");
  app.add_option("--ledger", g.ledger, "Ledger file (default $MEMESIEVE_HOME/ledger.jsonl)");
  app.add_option("--out", g.out, "Output directory");

  std::string corpus, reference, index;
  auto* build = app.add_subcommand("build-triplets", "Generate counterparts and assemble the triplet manifest");
  build->add_option("--corpus", corpus, "Corpus manifest (JSONL)")->required();
  build->add_option("--reference", reference, "Hateful reference memes (JSONL) used to build the retrieval index");
  build->add_option("--index", index, "Existing reference index directory");

  std::string triplets, init, resume;
  std::optional<int> epochs;
  auto* pre = app.add_subcommand("pretrain", "Contrastive pre-training on a triplet manifest");
  pre->add_option("--triplets", triplets, "Triplet manifest")->required();
  pre->add_option("--init", init, "Start from this checkpoint");
  pre->add_option("--resume", resume, "Continue from a saved training state");
  pre->add_option("--epochs", epochs, "Override train.epochs");

  std::string data, heldout;
  bool head_only = false;
  auto* fine = app.add_subcommand("finetune", "Fine-tune the classification head (and stack) on labelled memes");
  fine->add_option("--data", data, "Labelled corpus manifest")->required();
  fine->add_option("--heldout", heldout, "Held-out corpus for per-epoch metrics");
  fine->add_option("--init", init, "Start from this checkpoint");
  fine->add_option("--resume", resume, "Continue from a saved training state");
  fine->add_option("--epochs", epochs, "Override train.epochs");
  fine->add_flag("--head-only", head_only, "Train only the classification head");

  std::string checkpoint, image, text, id;
  auto* cls = app.add_subcommand("classify", "Score memes with a fine-tuned checkpoint");
  cls->add_option("--checkpoint", checkpoint, "Checkpoint with a classification head")->required();
  cls->add_option("--data", data, "Corpus manifest to score");
  cls->add_option("--image", image, "Single meme image (PNG)");
  cls->add_option("--text", text, "Single meme text");
  cls->add_option("--id", id, "Identifier for the single meme");

  std::optional<int> top_k;
  auto* seg = app.add_subcommand("segment", "Attention heatmap, ranked tokens, objects and overlay for one meme");
  seg->add_option("--checkpoint", checkpoint, "Checkpoint")->required();
  seg->add_option("--image", image, "Meme image (PNG)")->required();
  seg->add_option("--text", text, "Meme text")->required();
  seg->add_option("--id", id, "Meme identifier");
  seg->add_option("--top-k", top_k, "Override seg.top_k");

  std::string train_data, kappa;
  std::optional<int> runs;
  std::vector<std::string> models, datasets;
  bool transfer = false;
  auto* ev = app.add_subcommand("eval", "Metrics, seeded multi-run averages, transfer grids and rubric agreement");
  ev->add_option("--checkpoint", checkpoint, "Checkpoint to evaluate (the starting point when --train is given)");
  ev->add_option("--data", data, "Labelled test corpus");
  ev->add_option("--train", train_data, "Fine-tune on this corpus once per seeded run");
  ev->add_option("--runs", runs, "Override eval.runs");
  ev->add_flag("--transfer", transfer, "Cross-dataset grid from --model TAG=CKPT and --dataset TAG=CORPUS");
  ev->add_option("--model", models, "Training-set tag and checkpoint, TAG=PATH");
  ev->add_option("--dataset", datasets, "Test-set tag and corpus, TAG=PATH");
  ev->add_option("--kappa", kappa, "Rubric CSV (meme_id,annotator,correctness,relevance)");

  bool defaults = false;
  auto* show = app.add_subcommand("show-config", "Print the resolved configuration");
  show->add_flag("--defaults", defaults, "Print the default configuration as YAML instead");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    emit_error("", "invalid_input", e.what(), 1);
    return 1;
  }

  const auto* sub = app.get_subcommands().front();
  const std::string command = sub->get_name();
  std::vector<std::string> flag_overrides;
  if (epochs) flag_overrides.push_back("train.epochs=" + std::to_string(*epochs));
  if (head_only) flag_overrides.push_back("train.head_only=true");
  if (top_k) flag_overrides.push_back("seg.top_k=" + std::to_string(*top_k));
  if (runs) flag_overrides.push_back("eval.runs=" + std::to_string(*runs));

  std::unique_ptr<Run> run;
  try {
    run = std::make_unique<Run>(command, g, flag_overrides);
    if (command == "show-config") {
      if (defaults) {
        std::cout << default_config_yaml();
        return 0;
      }
      std::cout << run->cfg.to_json() << "\n";
      return 0;
    }
    int rc = 0;
    if (command == "build-triplets") rc = cmd_build_triplets(*run, corpus, reference, index);
    else if (command == "pretrain") rc = cmd_pretrain(*run, triplets, init, resume);
    else if (command == "finetune") rc = cmd_finetune(*run, data, heldout, init, resume);
    else if (command == "classify") rc = cmd_classify(*run, checkpoint, data, image, text, id);
    else if (command == "segment") rc = cmd_segment(*run, checkpoint, image, text, id);
    else if (command == "eval") rc = cmd_eval(*run, checkpoint, data, train_data, models, datasets, transfer, kappa);
    run->finish("ok");
    return rc;
  } catch (const Error& e) {
    emit_error(command, std::string(to_string(e.kind())), e.what(), e.exit_code());
    if (run) {
      try {
        run->finish("error", e.what());
      } catch (const std::exception&) {
      }
    }
    return e.exit_code();
  } catch (const std::exception& e) {
    emit_error(command, "runtime", e.what(), 2);
    if (run) {
      try {
        run->finish("error", e.what());
      } catch (const std::exception&) {
      }
    }
    return 2;
  }
}
