#include <doctest.h>

#include <json.hpp>

#include <filesystem>
#include <sstream>
#include <thread>

#include "memesieve/cmgen.hpp"
#include "memesieve/common.hpp"
#include "memesieve/config.hpp"
#include "memesieve/ledger.hpp"

using namespace memesieve;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const char* name) {
  auto dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string error_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    CHECK(e.exit_code() == 1);
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("defaults") {
  const auto c = load_run_config(std::nullopt, {});
  CHECK(c.seed == 0);
  CHECK(c.encoder.backend == "mock");
  CHECK(c.encoder.mock_seed == 0);
  CHECK(c.cmgen.positive_prompt == kPositiveCaptionPrompt);
  CHECK(c.model.num_layers == 6);
  CHECK(c.model.num_heads == 8);
  CHECK(c.seg.top_k == 5);
  CHECK(c.seg.lambda == 0.5);
  CHECK(c.eval.threshold == 0.5);
  CHECK(c.eval.runs == 1);
  CHECK(c.triplets.truncate_text);
}

TEST_CASE("file then overrides") {
  const auto dir = scratch("memesieve_config_test");
  write_text_file(dir / "run.yaml",
                  "seed: 7\n"
                  "train:\n  epochs: 3\n  num_layers: 2\n  adam_betas: [0.8, 0.95]\n"
                  "filters:\n  lexicon: [foo, bar]\n"
                  "seg:\n  top_k: 9\n");
  const auto c = load_run_config(dir / "run.yaml", {"seg.top_k=2", "seed=11", "eval.runs=5"});
  CHECK(c.seed == 11);
  CHECK(c.train.epochs == 3);
  CHECK(c.model.num_layers == 2);
  CHECK(c.train.beta1 == 0.8);
  CHECK(c.train.beta2 == 0.95);
  CHECK(c.filters.lexicon == std::vector<std::string>{"foo", "bar"});
  CHECK(c.seg.top_k == 2);
  CHECK(c.eval.runs == 5);

  const auto shape = mock_encoder_shape();
  CHECK(c.ita_config(shape).num_layers == 2);
  CHECK(c.ita_config(shape).embed_dim == shape.embed_dim);
  CHECK(c.ita_config(shape).image_dim == shape.image_dim);
  CHECK(c.train_config().seed == 11);
  CHECK(c.seg_config(shape).patch_count == shape.patch_count());
  CHECK(c.seg_config(shape).top_k == 2);
  fs::remove_all(dir);
}

TEST_CASE("unknown keys and bad values are rejected by name") {
  CHECK(error_of([] { load_run_config(std::nullopt, {"train.bogus=1"}); }).find("train.bogus") != std::string::npos);
  CHECK(error_of([] { load_run_config(std::nullopt, {"nosuch.key=1"}); }).find("nosuch") != std::string::npos);
  CHECK(error_of([] { load_run_config(std::nullopt, {"seg.top_k=abc"}); }).find("seg.top_k") != std::string::npos);
  CHECK(error_of([] { load_run_config(std::nullopt, {"seg.lambda=1.5"}); }).find("seg.lambda") != std::string::npos);
  CHECK(error_of([] { load_run_config(std::nullopt, {"train.dropout=1"}); }).find("dropout") != std::string::npos);
  CHECK(error_of([] { load_run_config(std::nullopt, {"encoder.backend=gpu"}); }).find("encoder.backend") != std::string::npos);
  CHECK_FALSE(error_of([] { load_run_config(std::nullopt, {"no-equals-sign"}); }).empty());

  const auto dir = scratch("memesieve_config_bad");
  write_text_file(dir / "bad.yaml", "seed: [1, 2\n");
  CHECK_FALSE(error_of([&] { load_run_config(dir / "bad.yaml", {}); }).empty());
  write_text_file(dir / "list.yaml", "- 1\n- 2\n");
  CHECK_FALSE(error_of([&] { load_run_config(dir / "list.yaml", {}); }).empty());
  CHECK_FALSE(error_of([&] { load_run_config(dir / "missing.yaml", {}); }).empty());
  fs::remove_all(dir);
}

TEST_CASE("resolved config serialisation") {
  const auto a = load_run_config(std::nullopt, {"seed=3"});
  const auto b = load_run_config(std::nullopt, {"seed=3"});
  CHECK(a.to_json() == b.to_json());
  CHECK(a.digest() == b.digest());
  CHECK(a.digest() != load_run_config(std::nullopt, {"seed=4"}).digest());
  const auto j = nlohmann::json::parse(a.to_json());
  for (const char* section : {"encoder", "cmgen", "filters", "triplets", "train", "seg", "eval"}) CHECK(j.contains(section));
  CHECK(j.at("seed") == 3);
  CHECK(a.to_json().find("time") == std::string::npos);
}

TEST_CASE("default YAML loads back to the defaults") {
  const auto dir = scratch("memesieve_config_default");
  write_text_file(dir / "default.yaml", default_config_yaml());
  CHECK(load_run_config(dir / "default.yaml", {}).to_json() == RunConfig().to_json());
  fs::remove_all(dir);
}

TEST_CASE("ledger appends whole lines") {
  const auto dir = scratch("memesieve_ledger_test");
  const auto path = dir / "sub" / "ledger.jsonl";
  LedgerEntry e;
  e.command = "pretrain";
  e.inputs = {{"a.jsonl", "0123"}};
  e.outputs = {{"model.itackpt", "4567"}};
  e.config_digest = "cafe";
  e.seed = 9;
  append_ledger(path, e);
  e.status = "error";
  e.error = "boom";
  append_ledger(path, e);

  std::vector<std::thread> threads;
  for (int t = 0; t < 4; ++t) {
    threads.emplace_back([&path, t] {
      LedgerEntry x;
      x.command = "worker" + std::to_string(t);
      for (int i = 0; i < 25; ++i) append_ledger(path, x);
    });
  }
  for (auto& th : threads) th.join();

  std::istringstream in(read_text_file(path));
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.contains("timestamp"));
    CHECK(j.contains("code_version"));
    if (n == 0) {
      CHECK(j.at("command") == "pretrain");
      CHECK(j.at("inputs")[0].at("digest") == "0123");
      CHECK(j.at("seed") == 9);
    }
    if (n == 1) CHECK(j.at("error") == "boom");
    ++n;
  }
  CHECK(n == 102);
  fs::remove_all(dir);
}

TEST_CASE("directory digests") {
  const auto dir = scratch("memesieve_digest_test");
  write_text_file(dir / "x" / "b.txt", "two");
  write_text_file(dir / "x" / "a.txt", "one");
  write_text_file(dir / "y" / "a.txt", "one");
  write_text_file(dir / "y" / "b.txt", "two");
  CHECK(digest_path(dir / "x") == digest_path(dir / "y"));
  write_text_file(dir / "y" / "b.txt", "three");
  CHECK(digest_path(dir / "x") != digest_path(dir / "y"));
  CHECK(digest_path(dir / "x" / "a.txt") == digest_file(dir / "x" / "a.txt"));
  fs::remove_all(dir);
}
