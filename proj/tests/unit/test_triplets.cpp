#include <doctest.h>

#include <filesystem>
#include <map>
#include <random>

#include "memesieve/common.hpp"
#include "memesieve/ledger.hpp"
#include "memesieve/synthetic.hpp"
#include "memesieve/triplets.hpp"
#include "oracles.hpp"

using namespace memesieve;
namespace fs = std::filesystem;

namespace {

const std::vector<FilterVerdict> kVerdicts{{0, 0}, {0, 1}, {1, 0}, {1, 1}};  // {y_text, y_image}

fs::path scratch(const char* name) {
  auto dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

struct Fixture {
  MockDualEncoder encoder{0};
  GenerationBackends backends = mock_backends(5);
  LexiconTextFilter text_filter{synthetic_lexicon()};
  SkinToneImageFilter image_filter{0.5};
  ReferenceIndex index;
  fs::path root;
  std::vector<MemeRecord> corpus;

  Fixture(const char* name, int count) : root(scratch(name)) {
    corpus = read_corpus(write_synthetic_corpus(root / "corpus", make_synthetic_corpus(count, 3)));
    auto refs = read_corpus(write_synthetic_corpus(root / "refs", make_synthetic_corpus(12, 4, "ref", {}, 1)));
    for (auto& r : refs) r.image_path = "../refs/" + r.image_path;
    index = build_reference_index(refs, encoder);
  }
  ~Fixture() { fs::remove_all(root); }

  TripletBuildContext context(const fs::path& out) const {
    TripletBuildContext ctx;
    ctx.backends = &backends;
    ctx.text_filter = &text_filter;
    ctx.image_filter = &image_filter;
    ctx.index = &index;
    ctx.encoder = &encoder;
    ctx.output_dir = out;
    ctx.corpus_dir = root / "corpus";
    ctx.index_dir = root / "index";
    ctx.config_digest = "test";
    return ctx;
  }
};

}  // namespace

TEST_CASE("eligible sets match the combination table") {
  for (const auto& v : kVerdicts) {
    std::set<std::string> nh, h;
    for (auto c : eligible_nonhateful(v)) nh.insert(std::string(combo_tag(c)));
    for (auto c : eligible_hateful(v)) h.insert(std::string(combo_tag(c)));
    CHECK(nh == oracles::eligible_nonhate_tags(v.y_image, v.y_text));
    CHECK(h == oracles::eligible_hate_tags(v.y_image, v.y_text));
    CHECK(eligible_nonhateful(v).front() == NonHateCombo::generated_pair);
    CHECK(eligible_hateful(v).front() == HateCombo::retrieved_pair);
  }
}

TEST_CASE("seeded draws never leave the eligible set") {
  for (const auto& v : kVerdicts) {
    const auto nh_ok = oracles::eligible_nonhate_tags(v.y_image, v.y_text);
    const auto h_ok = oracles::eligible_hate_tags(v.y_image, v.y_text);
    std::set<std::string> nh_seen, h_seen;
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
      std::mt19937_64 rng(seed);
      const auto nh = std::string(combo_tag(sample_nonhateful(v, rng)));
      const auto h = std::string(combo_tag(sample_hateful(v, rng)));
      CHECK(nh_ok.count(nh) == 1);
      CHECK(h_ok.count(h) == 1);
      nh_seen.insert(nh);
      h_seen.insert(h);
    }
    CHECK(nh_seen == nh_ok);  // every eligible combo is reachable
    CHECK(h_seen == h_ok);
  }
  std::mt19937_64 rng(9);
  for (int i = 0; i < 200; ++i) {
    CHECK(sample_nonhateful({1, 1}, rng) == NonHateCombo::generated_pair);
    CHECK(sample_hateful({0, 0}, rng) == HateCombo::retrieved_pair);
  }
}

TEST_CASE("uniform frequencies over 10,000 draws") {
  std::mt19937_64 rng(12345);
  std::map<NonHateCombo, int> nh;
  std::map<HateCombo, int> h;
  for (int i = 0; i < 10000; ++i) {
    ++nh[sample_nonhateful({0, 0}, rng)];
    ++h[sample_hateful({1, 1}, rng)];
  }
  REQUIRE(nh.size() == 3);
  REQUIRE(h.size() == 3);
  for (const auto& [combo, n] : nh) CHECK(std::abs(n / 10000.0 - 1.0 / 3.0) < 0.02);
  for (const auto& [combo, n] : h) CHECK(std::abs(n / 10000.0 - 1.0 / 3.0) < 0.02);
}

TEST_CASE("pair sources follow the combo") {
  const PairSource anchor{"anchor.png", "T"};
  const PairSource generated{"positive.png", "T+"};
  const PairSource retrieved{"reference.png", "T-"};
  for (const auto& v : kVerdicts) {
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
      std::mt19937_64 rng(seed);
      const auto nh = assemble_nonhateful(anchor, generated, v, rng);
      const auto h = assemble_hateful(anchor, retrieved, v, rng);
      if (nh.combo == "I+T+") CHECK((nh.source.image_path == "positive.png" && nh.source.text == "T+"));
      if (nh.combo == "IT+") CHECK((nh.source.image_path == "anchor.png" && nh.source.text == "T+"));
      if (nh.combo == "I+T") CHECK((nh.source.image_path == "positive.png" && nh.source.text == "T"));
      if (v.y_image == 1) CHECK(nh.source.image_path != "anchor.png");
      CHECK(h.source.text != "T+");
      if (h.combo == "I-T-") CHECK((h.source.image_path == "reference.png" && h.source.text == "T-"));
      if (h.combo == "IT-") CHECK((h.source.image_path == "anchor.png" && h.source.text == "T-"));
      if (h.combo == "I-T") CHECK((h.source.image_path == "reference.png" && h.source.text == "T"));
    }
  }
}

TEST_CASE("filters") {
  LexiconTextFilter lex({"slur1", "Vermin"});
  CHECK(lex.offensive("a perfectly clean sentence") == 0);
  CHECK(lex.offensive("they are slur1 honestly") == 1);
  CHECK(lex.offensive("VERMIN!") == 1);
  CHECK(lex.offensive("slur10 is not a whole-word hit") == 0);
  CHECK(LexiconTextFilter({}).offensive("slur1") == 0);

  SkinToneImageFilter skin(0.5);
  CHECK(SkinToneImageFilter::skin_fraction(ImageInput(8, 8, 3, 0.0F)) == 0.0);
  CHECK(skin.nsfw(ImageInput(8, 8, 3, 0.0F)) == 0);
  ImageInput tone(8, 8, 3);
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) {
      const bool on = y < 5;  // 40 of 64 pixels
      tone.at(y, x, 0) = on ? 0.85F : 0.1F;
      tone.at(y, x, 1) = on ? 0.60F : 0.1F;
      tone.at(y, x, 2) = on ? 0.45F : 0.1F;
    }
  }
  CHECK(SkinToneImageFilter::skin_fraction(tone) == doctest::Approx(40.0 / 64.0));
  CHECK(skin.nsfw(tone) == 1);
  CHECK(SkinToneImageFilter(0.7).nsfw(tone) == 0);

  MemeRecord meme;
  meme.id = "x";
  meme.image = tone;
  meme.caption_mask = Mask(8, 8);
  meme.text = "slur1 here";
  CHECK(filter_meme(meme, lex, skin) == FilterVerdict{1, 1});
}

TEST_CASE("build_triplets") {
  Fixture fx("memesieve_triplets_build", 8);
  SUBCASE("one record per meme, deterministic files") {
    const auto out_a = fx.root / "a";
    const auto out_b = fx.root / "b";
    const auto m1 = build_triplets(fx.corpus, fx.context(out_a), 77);
    const auto m2 = build_triplets(fx.corpus, fx.context(out_b), 77);
    CHECK(m1.count() == 8);
    CHECK(m1.skipped.empty());
    write_triplet_manifest(out_a / "triplets.jsonl", m1);
    write_triplet_manifest(out_b / "triplets.jsonl", m2);
    CHECK(digest_file(out_a / "triplets.jsonl") == digest_file(out_b / "triplets.jsonl"));
    CHECK(digest_path(out_a / "generated") == digest_path(out_b / "generated"));
    for (const auto& r : m1.records) {
      CHECK(oracles::eligible_nonhate_tags(r.verdict.y_image, r.verdict.y_text).count(r.nonhate.combo) == 1);
      CHECK(oracles::eligible_hate_tags(r.verdict.y_image, r.verdict.y_text).count(r.hate.combo) == 1);
      CHECK(fs::exists(out_a / "generated" / r.id / "provenance.json"));
      CHECK(fs::exists(out_a / r.anchor.image_path));
      CHECK(fs::exists(out_a / r.nonhate.source.image_path));
      CHECK(fs::exists(out_a / r.hate.source.image_path));
      CHECK_FALSE(r.reference_id.empty());
    }
    const auto back = read_triplet_manifest(out_a / "triplets.jsonl");
    CHECK(back.count() == 8);
    CHECK(back.records[3].hate.combo == m1.records[3].hate.combo);
    CHECK(back.records[3].seed == m1.records[3].seed);
    CHECK(back.config_digest == "test");

    const auto other = build_triplets(fx.corpus, fx.context(fx.root / "c"), 78);
    bool differs = false;
    for (std::size_t i = 0; i < other.records.size(); ++i) differs |= other.records[i].seed != m1.records[i].seed;
    CHECK(differs);
  }
  SUBCASE("empty corpus") {
    const auto m = build_triplets({}, fx.context(fx.root / "empty"), 1);
    CHECK(m.count() == 0);
    write_triplet_manifest(fx.root / "empty" / "triplets.jsonl", m);
    CHECK(read_triplet_manifest(fx.root / "empty" / "triplets.jsonl").count() == 0);
  }
  SUBCASE("failing memes are skipped and recorded") {
    auto corpus = fx.corpus;
    corpus[1].caption_mask = Mask(corpus[1].image.height, corpus[1].image.width, 1);
    corpus[2].label.reset();
    const auto m = build_triplets(corpus, fx.context(fx.root / "skip"), 77);
    CHECK(m.count() == 6);
    REQUIRE(m.skipped.size() == 2);
    CHECK(m.skipped[0].id == corpus[1].id);
    CHECK(m.skipped[1].id == corpus[2].id);
    write_triplet_manifest(fx.root / "skip" / "triplets.jsonl", m);
    const auto back = read_triplet_manifest(fx.root / "skip" / "triplets.jsonl");
    CHECK(back.skipped.size() == 2);
  }
  SUBCASE("missing dependencies") {
    auto ctx = fx.context(fx.root / "x");
    ctx.index = nullptr;
    CHECK_THROWS_AS(build_triplets(fx.corpus, ctx, 1), Error);
  }
}
