#include <doctest.h>

#include <json.hpp>

#include <filesystem>
#include <random>
#include <set>

#include "helpers.hpp"
#include "memesieve/cmgen.hpp"
#include "memesieve/common.hpp"
#include "memesieve/synthetic.hpp"
#include "oracles.hpp"

using namespace memesieve;
namespace fs = std::filesystem;

namespace {

ImageInput ramp4x4() {
  ImageInput img(4, 4, 3);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) {
      const float v = static_cast<float>(y * 4 + x) / 16.0F;
      img.at(y, x, 0) = v;
      img.at(y, x, 1) = 0.2F;
      img.at(y, x, 2) = 1.0F - v;
    }
  }
  return img;
}

MemeRecord record(std::string id, ImageInput image, Mask mask, std::string text = "some text") {
  MemeRecord r;
  r.id = std::move(id);
  r.image = std::move(image);
  r.caption_mask = std::move(mask);
  r.text = std::move(text);
  return r;
}

fs::path scratch(const char* name) {
  auto dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("modality separation with the mock inpainter") {
  const auto backends = mock_backends(0);
  SUBCASE("all-zero mask returns the input") {
    const auto img = ramp4x4();
    CHECK(separate_modalities(record("a", img, Mask(4, 4)), backends) == img);
  }
  SUBCASE("centre block filled with its border-ring mean") {
    Mask m(4, 4);
    for (int y = 1; y < 3; ++y) {
      for (int x = 1; x < 3; ++x) m.at(y, x) = 1;
    }
    const auto img = ramp4x4();
    const auto out = separate_modalities(record("a", img, m), backends);
    // Ring = the 12 edge pixels with indices 0..3, 4, 7, 8, 11, 12..15; their sum is 90.
    const double ring0 = 90.0 / 12.0 / 16.0;
    for (int y = 1; y < 3; ++y) {
      for (int x = 1; x < 3; ++x) {
        CHECK(out.at(y, x, 0) == doctest::Approx(ring0).epsilon(1e-6));
        CHECK(out.at(y, x, 1) == doctest::Approx(0.2).epsilon(1e-6));
        CHECK(out.at(y, x, 2) == doctest::Approx(1.0 - ring0).epsilon(1e-6));
      }
    }
    for (int y = 0; y < 4; ++y) {
      for (int x = 0; x < 4; ++x) {
        if (m.at(y, x)) continue;
        for (int c = 0; c < 3; ++c) CHECK(out.at(y, x, c) == img.at(y, x, c));
      }
    }
  }
  SUBCASE("corner pixel uses its three neighbours") {
    Mask m(4, 4);
    m.at(0, 0) = 1;
    const auto out = separate_modalities(record("a", ramp4x4(), m), backends);
    CHECK(out.at(0, 0, 0) == doctest::Approx((1.0 + 4.0 + 5.0) / 3.0 / 16.0).epsilon(1e-6));
  }
  SUBCASE("separate regions get separate fills") {
    Mask m(4, 4);
    m.at(0, 0) = 1;
    m.at(3, 3) = 1;
    const auto out = separate_modalities(record("a", ramp4x4(), m), backends);
    CHECK(out.at(0, 0, 0) == doctest::Approx(10.0 / 48.0).epsilon(1e-6));
    CHECK(out.at(3, 3, 0) == doctest::Approx((14.0 + 11.0 + 10.0) / 48.0).epsilon(1e-6));
  }
  SUBCASE("degenerate masks") {
    CHECK_THROWS_AS(separate_modalities(record("a", ramp4x4(), Mask(4, 4, 1)), backends), Error);
    CHECK_THROWS_AS(separate_modalities(record("a", ramp4x4(), Mask(3, 4)), backends), Error);
    CHECK_THROWS_AS(separate_modalities(record("a", ramp4x4(), Mask()), backends), Error);
  }
}

TEST_CASE("positive generation") {
  const auto backends = mock_backends(11);
  const auto img = ramp4x4();
  const auto a = generate_positive(img, backends, "m1");
  const auto b = generate_positive(img, backends, "m1");
  CHECK(a.text == b.text);
  CHECK(a.image == b.image);
  CHECK_FALSE(a.text.empty());
  CHECK(a.provenance.source_id == "m1");
  CHECK(a.provenance.prompt == kPositiveCaptionPrompt);
  CHECK(a.provenance.inpainter == "mock-ring-mean");
  CHECK(a.provenance.captioner == "mock-template");
  CHECK(a.provenance.text_to_image == "mock-procedural");
  CHECK(a.provenance.image_digest == image_digest(a.image));
  const auto j = nlohmann::json::parse(a.provenance.to_json());
  CHECK(j.at("source_id") == "m1");
  CHECK(j.contains("seed"));

  struct Failing final : Captioner {
    std::string name() const override { return "broken"; }
    std::string caption(const ImageInput&, std::string_view) const override { throw std::runtime_error("offline"); }
  };
  auto broken = backends;
  broken.captioner = std::make_shared<Failing>();
  try {
    (void)generate_positive(img, broken, "meme-42");
    FAIL("expected a backend failure");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::backend_failure);
    CHECK(std::string(e.what()).find("meme-42") != std::string::npos);
  }
}

TEST_CASE("mock captioner and text-to-image") {
  MockCaptioner cap(3);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<float> u(0.0F, 1.0F);
  ImageInput img(8, 8, 3);
  for (auto& p : img.pixels) p = u(rng);
  CHECK(cap.caption(img, kPositiveCaptionPrompt) == cap.caption(img, kPositiveCaptionPrompt));

  MockTextToImage t2i(3, 32, 32);
  std::set<std::string> digests;
  for (int i = 0; i < 100; ++i) {
    const auto out = t2i.generate("caption number " + std::to_string(i) + " about a sunny meadow");
    CHECK(out.height == 32);
    validate_image(out);
    digests.insert(image_digest(out));
  }
  CHECK(digests.size() == 100);
}

TEST_CASE("reference index retrieval") {
  std::mt19937_64 rng(2024);
  const int n = 1000;
  const int d = 32;
  std::vector<Eigen::VectorXd> vectors;
  Eigen::MatrixXd emb(n, d);
  std::vector<ReferenceEntry> entries;
  for (int i = 0; i < n; ++i) {
    vectors.push_back(testing_helpers::random_matrix(rng, d, 1));
    emb.row(i) = vectors.back().transpose();
    entries.push_back({"r" + std::to_string(i), "text " + std::to_string(i), "", std::nullopt});
  }
  const ReferenceIndex index(entries, emb);
  CHECK(index.size() == 1000);

  SUBCASE("matches a brute-force scan") {
    for (int q = 0; q < 100; ++q) {
      const Eigen::VectorXd query = testing_helpers::random_matrix(rng, d, 1);
      const auto got = index.nearest(query);
      const auto want = oracles::brute_nearest(vectors, query);
      CHECK(got.index == want.index);
      CHECK(got.distance == want.distance);
    }
  }
  SUBCASE("self retrieval") {
    const auto got = index.nearest(vectors[7]);
    CHECK(got.index == 7);
    CHECK(got.distance == 0.0);
  }
  SUBCASE("equal distances go to the lower index") {
    Eigen::MatrixXd e(4, 2);
    e << 5, 5, 1, 0, -1, 0, 0, 1;
    const ReferenceIndex tie({{"a", "", "", {}}, {"b", "", "", {}}, {"c", "", "", {}}, {"d", "", "", {}}}, e);
    const auto got = tie.nearest(Eigen::Vector2d(0, 0));
    CHECK(got.index == 1);
    CHECK(got.distance == 1.0);
  }
  SUBCASE("distance never increases as entries are added") {
    const Eigen::VectorXd query = testing_helpers::random_matrix(rng, d, 1);
    ReferenceIndex growing;
    double prev = std::numeric_limits<double>::infinity();
    for (int i = 0; i < 200; ++i) {
      growing.add(entries[static_cast<std::size_t>(i)], vectors[static_cast<std::size_t>(i)]);
      const double now = growing.nearest(query).distance;
      CHECK(now <= prev);
      prev = now;
    }
  }
  SUBCASE("singleton") {
    ReferenceIndex one;
    one.add(entries[3], vectors[3]);
    for (int q = 0; q < 10; ++q) CHECK(one.nearest(testing_helpers::random_matrix(rng, d, 1)).index == 0);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(ReferenceIndex().nearest(vectors[0]), Error);
    CHECK_THROWS_AS(index.nearest(Eigen::VectorXd::Zero(3)), Error);
  }
  SUBCASE("save and load") {
    const auto dir = scratch("memesieve_index_test");
    index.save(dir);
    const auto loaded = ReferenceIndex::load(dir);
    CHECK(loaded.size() == index.size());
    CHECK(loaded.embeddings() == index.embeddings());
    CHECK(loaded.entry(999).text == "text 999");
    fs::remove_all(dir);
  }
}

TEST_CASE("retrieval uses image embeddings only") {
  MockDualEncoder enc(0);
  std::vector<MemeRecord> refs;
  for (int i = 0; i < 6; ++i) {
    auto m = make_synthetic_meme("ref" + std::to_string(i), 1, 5);
    refs.push_back(record(m.id, m.image, m.caption_mask, m.text));
  }
  const auto index = build_reference_index(refs, enc);
  CHECK(index.size() == 6);
  const auto r = retrieve_negative(refs[4].image, index, enc);
  CHECK(r.neighbor.index == 4);
  CHECK(r.neighbor.distance == 0.0);
  CHECK(r.entry->id == "ref4");

  auto retexted = refs;
  for (auto& rec : retexted) rec.text = "completely different words";
  const auto other = build_reference_index(retexted, enc);
  CHECK(other.embeddings() == index.embeddings());
  CHECK_THROWS_AS(build_reference_index({}, enc), Error);
}

TEST_CASE("corpus manifests") {
  const auto dir = scratch("memesieve_corpus_test");
  const auto memes = make_synthetic_corpus(3, 9);
  const auto manifest = write_synthetic_corpus(dir, memes);
  const auto corpus = read_corpus(manifest);
  REQUIRE(corpus.size() == 3);
  CHECK(corpus[1].id == memes[1].id);
  CHECK(image_digest(corpus[1].image) == image_digest(memes[1].image));  // PNG stores 8-bit samples
  CHECK(corpus[1].caption_mask == memes[1].caption_mask);
  CHECK(corpus[1].label == memes[1].label);
  CHECK(corpus[2].text == memes[2].text);

  const auto lines = read_text_file(manifest);
  const auto first = lines.substr(0, lines.find('\n'));
  auto bad = [&](const std::string& name, const std::string& content) {
    write_text_file(dir / name, content);
    CHECK_THROWS_AS(read_corpus(dir / name), Error);
  };
  auto j = nlohmann::json::parse(first);
  j["surprise"] = 1;
  bad("unknown.jsonl", j.dump() + "\n");
  bad("dupe.jsonl", first + "\n" + first + "\n");
  auto no_text = nlohmann::json::parse(first);
  no_text.erase("text");
  bad("notext.jsonl", no_text.dump() + "\n");
  auto label = nlohmann::json::parse(first);
  label["label"] = 3;
  bad("label.jsonl", label.dump() + "\n");
  bad("garbage.jsonl", "{not json\n");
  auto missing = nlohmann::json::parse(first);
  missing["image_path"] = "images/none.png";
  bad("missing.jsonl", missing.dump() + "\n");

  write_text_file(dir / "empty.jsonl", "");
  CHECK(read_corpus(dir / "empty.jsonl").empty());
  fs::remove_all(dir);
}
