#include "memesieve/triplets.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <sstream>

#include "memesieve/common.hpp"

namespace memesieve {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

std::vector<std::string> lower_words(std::string_view text) {
  std::vector<std::string> out;
  std::string word;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || c == '\'') {
      word.push_back(static_cast<char>(std::tolower(c)));
    } else if (!word.empty()) {
      out.push_back(std::move(word));
      word.clear();
    }
  }
  if (!word.empty()) out.push_back(std::move(word));
  return out;
}

}  // namespace

LexiconTextFilter::LexiconTextFilter(std::vector<std::string> words) {
  for (auto& w : words) {
    auto parts = lower_words(w);
    if (parts.size() != 1) throw Error(ErrorKind::invalid_input, "lexicon entries must be single words: '" + w + "'");
    words_.push_back(parts.front());
  }
  std::sort(words_.begin(), words_.end());
}

int LexiconTextFilter::offensive(std::string_view text) const {
  for (const auto& w : lower_words(text)) {
    if (std::binary_search(words_.begin(), words_.end(), w)) return 1;
  }
  return 0;
}

double SkinToneImageFilter::skin_fraction(const ImageInput& image) {
  validate_image(image);
  if (image.channels != 3) return 0.0;
  std::size_t skin = 0;
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      const double r = 255.0 * image.at(y, x, 0);
      const double g = 255.0 * image.at(y, x, 1);
      const double b = 255.0 * image.at(y, x, 2);
      const double spread = std::max({r, g, b}) - std::min({r, g, b});
      if (r > 95 && g > 40 && b > 20 && spread > 15 && std::abs(r - g) > 15 && r > g && r > b) ++skin;
    }
  }
  return static_cast<double>(skin) / (static_cast<double>(image.height) * image.width);
}

int SkinToneImageFilter::nsfw(const ImageInput& image) const { return skin_fraction(image) > threshold_ ? 1 : 0; }

FilterVerdict filter_meme(const MemeRecord& meme, const TextFilter& text_filter, const ImageFilter& image_filter) {
  FilterVerdict v;
  try {
    v.y_text = text_filter.offensive(meme.text);
    v.y_image = image_filter.nsfw(meme.image);
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw Error(ErrorKind::backend_failure, "filter failed on meme " + meme.id + ": " + e.what());
  }
  if ((v.y_text != 0 && v.y_text != 1) || (v.y_image != 0 && v.y_image != 1)) {
    throw Error(ErrorKind::backend_failure, "filter returned a non-binary verdict for meme " + meme.id);
  }
  return v;
}

std::string_view combo_tag(NonHateCombo c) {
  switch (c) {
    case NonHateCombo::generated_pair: return "I+T+";
    case NonHateCombo::original_image: return "IT+";
    case NonHateCombo::original_text: return "I+T";
  }
  return "?";
}

std::string_view combo_tag(HateCombo c) {
  switch (c) {
    case HateCombo::retrieved_pair: return "I-T-";
    case HateCombo::original_image: return "IT-";
    case HateCombo::original_text: return "I-T";
  }
  return "?";
}

std::vector<NonHateCombo> eligible_nonhateful(const FilterVerdict& verdict) {
  std::vector<NonHateCombo> out{NonHateCombo::generated_pair};
  if (verdict.y_image == 0) out.push_back(NonHateCombo::original_image);
  if (verdict.y_text == 0) out.push_back(NonHateCombo::original_text);
  return out;
}

std::vector<HateCombo> eligible_hateful(const FilterVerdict& verdict) {
  std::vector<HateCombo> out{HateCombo::retrieved_pair};
  if (verdict.y_image == 1) out.push_back(HateCombo::original_image);
  if (verdict.y_text == 1) out.push_back(HateCombo::original_text);
  return out;
}

namespace {

template <typename T>
T uniform_pick(const std::vector<T>& options, std::mt19937_64& rng) {
  return options[std::uniform_int_distribution<std::size_t>(0, options.size() - 1)(rng)];
}

}  // namespace

NonHateCombo sample_nonhateful(const FilterVerdict& verdict, std::mt19937_64& rng) {
  return uniform_pick(eligible_nonhateful(verdict), rng);
}

HateCombo sample_hateful(const FilterVerdict& verdict, std::mt19937_64& rng) {
  return uniform_pick(eligible_hateful(verdict), rng);
}

SelectedPair assemble_nonhateful(const PairSource& anchor, const PairSource& generated, const FilterVerdict& verdict,
                                 std::mt19937_64& rng) {
  const auto combo = sample_nonhateful(verdict, rng);
  SelectedPair out;
  out.combo = std::string(combo_tag(combo));
  out.source.image_path = combo == NonHateCombo::original_image ? anchor.image_path : generated.image_path;
  out.source.text = combo == NonHateCombo::original_text ? anchor.text : generated.text;
  return out;
}

SelectedPair assemble_hateful(const PairSource& anchor, const PairSource& retrieved, const FilterVerdict& verdict,
                              std::mt19937_64& rng) {
  const auto combo = sample_hateful(verdict, rng);
  SelectedPair out;
  out.combo = std::string(combo_tag(combo));
  out.source.image_path = combo == HateCombo::original_image ? anchor.image_path : retrieved.image_path;
  out.source.text = combo == HateCombo::original_text ? anchor.text : retrieved.text;
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::string relative_to(const std::filesystem::path& target, const std::filesystem::path& base) {
  return std::filesystem::weakly_canonical(target).lexically_relative(std::filesystem::weakly_canonical(base)).generic_string();
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

}  // namespace

TripletManifest build_triplets(const std::vector<MemeRecord>& corpus, const TripletBuildContext& ctx, std::uint64_t seed) {
  if (!ctx.backends || !ctx.text_filter || !ctx.image_filter || !ctx.index || !ctx.encoder) {
    throw Error(ErrorKind::backend_unavailable, "build_triplets: backends, filters, index and encoder are all required");
  }
  TripletManifest manifest;
  manifest.config_digest = ctx.config_digest;
  if (corpus.empty()) return manifest;
  if (ctx.index->size() == 0) throw Error(ErrorKind::invalid_input, "build_triplets: reference index is empty");

  for (const auto& meme : corpus) {
    try {
      if (!meme.label) throw Error(ErrorKind::invalid_input, "anchor has no label");
      const std::uint64_t meme_seed = derive_seed(seed, "triplet:" + meme.id);

      const ImageInput purified = separate_modalities(meme, *ctx.backends);
      auto backends = *ctx.backends;
      backends.seed = meme_seed;
      const PositivePair positive = generate_positive(purified, backends, meme.id);
      const RetrievedNegative negative = retrieve_negative(purified, *ctx.index, *ctx.encoder);
      const FilterVerdict verdict = filter_meme(meme, *ctx.text_filter, *ctx.image_filter);

      const auto gen_dir = ctx.output_dir / "generated" / meme.id;
      write_png(gen_dir / "purified.png", purified);
      write_png(gen_dir / "positive.png", positive.image);

      PairSource anchor{relative_to(resolve(ctx.corpus_dir, meme.image_path), ctx.output_dir), meme.text};
      PairSource generated{relative_to(gen_dir / "positive.png", ctx.output_dir), positive.text};
      PairSource retrieved{relative_to(resolve(ctx.index_dir, negative.entry->image_path), ctx.output_dir),
                           negative.entry->text};

      std::mt19937_64 rng(meme_seed);
      TripletRecord rec;
      rec.id = meme.id;
      rec.label = *meme.label;
      rec.anchor = anchor;
      rec.nonhate = assemble_nonhateful(anchor, generated, verdict, rng);
      rec.hate = assemble_hateful(anchor, retrieved, verdict, rng);
      rec.verdict = verdict;
      rec.seed = meme_seed;
      rec.reference_id = negative.entry->id;
      rec.reference_distance = negative.neighbor.distance;

      ordered_json prov = ordered_json::parse(positive.provenance.to_json());
      prov["positive_caption"] = positive.text;
      prov["reference"] = {{"id", rec.reference_id}, {"index", negative.neighbor.index}, {"distance", rec.reference_distance}};
      prov["verdict"] = {{"y_T", verdict.y_text}, {"y_I", verdict.y_image}};
      prov["combos"] = {{"nonhate", rec.nonhate.combo}, {"hate", rec.hate.combo}};
      const std::string prov_text = prov.dump(2) + "\n";
      write_text_file(gen_dir / "provenance.json", prov_text);
      rec.provenance_digest = digest_text(prov_text);
      manifest.records.push_back(std::move(rec));
    } catch (const Error& e) {
      manifest.skipped.push_back(SkippedMeme{meme.id, std::string(to_string(e.kind())) + ": " + e.what()});
    }
  }
  return manifest;
}

void write_triplet_manifest(const std::filesystem::path& path, const TripletManifest& manifest) {
  std::string out;
  ordered_json header;
  header["kind"] = "header";
  header["count"] = manifest.count();
  header["skipped"] = manifest.skipped.size();
  header["skipped_memes"] = json::array();
  for (const auto& s : manifest.skipped) header["skipped_memes"].push_back({{"id", s.id}, {"reason", s.reason}});
  header["config_digest"] = manifest.config_digest;
  out += header.dump() + "\n";
  for (const auto& r : manifest.records) {
    ordered_json j;
    j["kind"] = "triplet";
    j["id"] = r.id;
    j["label"] = r.label;
    j["anchor"] = {{"image_path", r.anchor.image_path}, {"text", r.anchor.text}};
    j["nonhate"] = {{"combo", r.nonhate.combo}, {"image_path", r.nonhate.source.image_path}, {"text", r.nonhate.source.text}};
    j["hate"] = {{"combo", r.hate.combo}, {"image_path", r.hate.source.image_path}, {"text", r.hate.source.text}};
    j["verdict"] = {{"y_T", r.verdict.y_text}, {"y_I", r.verdict.y_image}};
    j["seed"] = r.seed;
    j["reference"] = {{"id", r.reference_id}, {"distance", r.reference_distance}};
    j["provenance_digest"] = r.provenance_digest;
    out += j.dump() + "\n";
  }
  write_text_file(path, out);
}

TripletManifest read_triplet_manifest(const std::filesystem::path& path) {
  std::istringstream in(read_text_file(path));
  TripletManifest m;
  std::string line;
  std::size_t lineno = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw Error(ErrorKind::invalid_input, where + ": not a JSON object");
    try {
      const auto kind = j.at("kind").get<std::string>();
      if (kind == "header") {
        header_seen = true;
        m.config_digest = j.value("config_digest", "");
        for (const auto& s : j.value("skipped_memes", json::array())) {
          m.skipped.push_back(SkippedMeme{s.at("id").get<std::string>(), s.at("reason").get<std::string>()});
        }
        continue;
      }
      if (kind != "triplet") throw Error(ErrorKind::invalid_input, where + ": unknown record kind " + kind);
      TripletRecord r;
      r.id = j.at("id").get<std::string>();
      r.label = j.at("label").get<int>();
      if (r.label != 0 && r.label != 1) throw Error(ErrorKind::invalid_input, where + ": label must be 0 or 1");
      r.anchor = {j.at("anchor").at("image_path").get<std::string>(), j.at("anchor").at("text").get<std::string>()};
      for (auto [key, target] : {std::pair{"nonhate", &r.nonhate}, std::pair{"hate", &r.hate}}) {
        const auto& p = j.at(key);
        target->combo = p.at("combo").get<std::string>();
        target->source = {p.at("image_path").get<std::string>(), p.at("text").get<std::string>()};
      }
      r.verdict = {j.at("verdict").at("y_T").get<int>(), j.at("verdict").at("y_I").get<int>()};
      r.seed = j.at("seed").get<std::uint64_t>();
      r.reference_id = j.at("reference").at("id").get<std::string>();
      r.reference_distance = j.at("reference").at("distance").get<double>();
      r.provenance_digest = j.value("provenance_digest", "");
      m.records.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw Error(ErrorKind::invalid_input, where + ": " + e.what());
    }
  }
  if (!header_seen) throw Error(ErrorKind::invalid_input, path.string() + ": missing manifest header");
  return m;
}

}  // namespace memesieve
