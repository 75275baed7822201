#include "memesieve/synthetic.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "memesieve/common.hpp"

namespace memesieve {

namespace {

const std::vector<std::string> kGroups = {"they", "those people", "that crowd"};
const std::vector<std::string> kHatefulNeutral = {"moved in next door", "are coming to dinner", "want our jobs"};
const std::vector<std::string> kPets = {"my cat", "our dog", "the puppy"};
const std::vector<std::string> kActivities = {"loves sunny mornings", "learned a new trick", "naps all day"};
const std::vector<std::string> kTails = {"lol", "again", "today", "honestly", "every time", "right now"};

template <typename T>
const T& pick(const std::vector<T>& v, std::mt19937_64& rng) {
  return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
}

void fill_rect(ImageInput& img, int y0, int x0, int y1, int x1, const float rgb[3]) {
  for (int y = std::max(0, y0); y < std::min(img.height, y1); ++y) {
    for (int x = std::max(0, x0); x < std::min(img.width, x1); ++x) {
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = rgb[c];
    }
  }
}

}  // namespace

const std::vector<std::string>& synthetic_lexicon() {
  static const std::vector<std::string> words = {"vermin", "filth", "parasites", "subhuman", "scum"};
  return words;
}

SyntheticMeme make_synthetic_meme(const std::string& id, int label, std::uint64_t seed, const SyntheticOptions& options) {
  if (label != 0 && label != 1) throw Error(ErrorKind::invalid_input, "synthetic label must be 0 or 1");
  if (options.height < 16 || options.width < 16) throw Error(ErrorKind::invalid_input, "synthetic memes need H, W >= 16");
  std::mt19937_64 rng(derive_seed(seed, id));
  std::uniform_real_distribution<float> u(0.0F, 1.0F);

  SyntheticMeme m;
  m.id = id;
  m.label = label;
  const int h = options.height;
  const int w = options.width;
  m.image = ImageInput(h, w);

  float base[3];
  if (u(rng) < options.skin_background_rate) {
    base[0] = 0.86F + 0.06F * u(rng);
    base[1] = 0.64F + 0.06F * u(rng);
    base[2] = 0.52F + 0.06F * u(rng);
  } else {
    const float grey = 0.38F + 0.1F * u(rng);
    for (float& b : base) b = grey + 0.04F * (u(rng) - 0.5F);
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const float shade = 0.04F * static_cast<float>(y) / static_cast<float>(h);
      for (int c = 0; c < 3; ++c) m.image.at(y, x, c) = std::clamp(base[c] - shade + 0.02F * (u(rng) - 0.5F), 0.0F, 1.0F);
    }
  }

  // Emblem in the lower part of the frame.
  const int banner = std::max(3, h / 5);
  const int radius = std::max(3, std::min(h - banner, w) / 3);
  const int jitter = std::max(1, radius / 4);
  const int cy = (banner + h) / 2 + static_cast<int>(u(rng) * static_cast<float>(2 * jitter)) - jitter;
  const int cx = w / 2 + static_cast<int>(u(rng) * static_cast<float>(2 * jitter)) - jitter;
  for (int y = cy - radius; y <= cy + radius; ++y) {
    for (int x = cx - radius; x <= cx + radius; ++x) {
      if (y < 0 || y >= h || x < 0 || x >= w) continue;
      const int dy = y - cy;
      const int dx = x - cx;
      if (label == 1) {
        // Filled diamond.
        if (std::abs(dy) + std::abs(dx) > radius) continue;
        m.image.at(y, x, 0) = 0.55F;
        m.image.at(y, x, 1) = 0.04F;
        m.image.at(y, x, 2) = 0.06F;
      } else {
        if (dy * dy + dx * dx > radius * radius) continue;
        m.image.at(y, x, 0) = 0.35F;
        m.image.at(y, x, 1) = 0.92F;
        m.image.at(y, x, 2) = 0.45F;
      }
    }
  }

  // Caption banner with glyph-like blocks.
  const float white[3] = {1.0F, 1.0F, 1.0F};
  const float ink[3] = {0.05F, 0.05F, 0.05F};
  fill_rect(m.image, 0, 0, banner, w, white);
  for (int x = 2; x + 2 < w; x += 4) {
    if (u(rng) < 0.25F) continue;
    const int top = 1 + static_cast<int>(u(rng) * 2.0F);
    fill_rect(m.image, top, x, banner - 1, x + 2, ink);
  }
  m.caption_mask = Mask(h, w);
  for (int y = 0; y < banner; ++y) {
    for (int x = 0; x < w; ++x) m.caption_mask.at(y, x) = 1;
  }

  std::ostringstream text;
  if (label == 1 && u(rng) < options.offensive_text_rate) {
    text << pick(kGroups, rng) << " are " << pick(synthetic_lexicon(), rng);
  } else if (label == 1) {
    text << pick(kGroups, rng) << ' ' << pick(kHatefulNeutral, rng);
  } else {
    text << pick(kPets, rng) << ' ' << pick(kActivities, rng);
  }
  text << ' ' << pick(kTails, rng);
  m.text = text.str();
  return m;
}

std::vector<SyntheticMeme> make_synthetic_corpus(int count, std::uint64_t seed, const std::string& prefix,
                                                 const SyntheticOptions& options, int forced_label) {
  if (count < 0) throw Error(ErrorKind::invalid_input, "synthetic corpus size must be >= 0");
  std::vector<SyntheticMeme> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    std::ostringstream id;
    id << prefix << '-';
    id.width(4);
    id.fill('0');
    id << i;
    const int label = forced_label >= 0 ? forced_label : i % 2;
    out.push_back(make_synthetic_meme(id.str(), label, seed, options));
  }
  return out;
}

std::filesystem::path write_synthetic_corpus(const std::filesystem::path& dir, const std::vector<SyntheticMeme>& memes,
                                             const std::string& manifest_name) {
  std::filesystem::create_directories(dir / "images");
  std::filesystem::create_directories(dir / "masks");
  std::string lines;
  for (const auto& m : memes) {
    const std::string image_rel = "images/" + m.id + ".png";
    const std::string mask_rel = "masks/" + m.id + ".png";
    write_png(dir / image_rel, m.image);
    write_mask_png(dir / mask_rel, m.caption_mask);
    nlohmann::ordered_json j;
    j["id"] = m.id;
    j["image_path"] = image_rel;
    j["mask_path"] = mask_rel;
    j["text"] = m.text;
    j["label"] = m.label;
    lines += j.dump() + "\n";
  }
  const auto manifest = dir / manifest_name;
  write_text_file(manifest, lines);
  return manifest;
}

namespace {

EmbeddingBundle encode_meme(const DualEncoder& encoder, const SyntheticMeme& m) {
  return encoder.encode(m.image, truncate_to_max(encoder.tokenize(m.text), encoder.shape().max_text_tokens));
}

}  // namespace

std::vector<TripletExample> synthetic_triplets(const DualEncoder& encoder, int count, std::uint64_t seed) {
  std::vector<TripletExample> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const std::string id = "triplet-" + std::to_string(i);
    const int label = i % 2;
    TripletExample t;
    t.id = id;
    t.label = label;
    t.anchor = encode_meme(encoder, make_synthetic_meme(id, label, seed));
    t.nonhate = encode_meme(encoder, make_synthetic_meme(id + "-nonhate", 0, seed));
    t.hate = encode_meme(encoder, make_synthetic_meme(id + "-hate", 1, seed));
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<LabeledExample> synthetic_labeled(const DualEncoder& encoder, int count, std::uint64_t seed) {
  std::vector<LabeledExample> out;
  for (const auto& m : make_synthetic_corpus(count, seed, "labeled")) {
    out.push_back(LabeledExample{m.id, encode_meme(encoder, m), m.label});
  }
  return out;
}

}  // namespace memesieve
