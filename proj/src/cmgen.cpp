#include "memesieve/cmgen.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <set>
#include <sstream>

#include "memesieve/common.hpp"

namespace memesieve {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

void validate_record(const MemeRecord& record) {
  if (record.id.empty()) throw Error(ErrorKind::invalid_input, "meme record without id");
  validate_image(record.image);
  if (record.caption_mask.height != 0 &&
      (record.caption_mask.height != record.image.height || record.caption_mask.width != record.image.width)) {
    throw Error(ErrorKind::dimension_mismatch, "meme " + record.id + ": caption mask is " +
                                                   std::to_string(record.caption_mask.height) + "x" +
                                                   std::to_string(record.caption_mask.width) + " but the image is " +
                                                   std::to_string(record.image.height) + "x" +
                                                   std::to_string(record.image.width));
  }
  if (record.label && *record.label != 0 && *record.label != 1) {
    throw Error(ErrorKind::invalid_input, "meme " + record.id + ": label must be 0 or 1");
  }
}

std::vector<MemeRecord> read_corpus(const std::filesystem::path& manifest) {
  std::istringstream in(read_text_file(manifest));
  const auto base = manifest.parent_path();
  std::vector<MemeRecord> out;
  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = manifest.string() + ":" + std::to_string(lineno);
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw Error(ErrorKind::invalid_input, where + ": not a JSON object");
    for (const char* key : {"id", "image_path", "text"}) {
      if (!j.contains(key) || !j[key].is_string()) {
        throw Error(ErrorKind::invalid_input, where + ": missing string field '" + key + "'");
      }
    }
    for (const auto& [key, value] : j.items()) {
      if (key != "id" && key != "image_path" && key != "mask_path" && key != "text" && key != "label") {
        throw Error(ErrorKind::invalid_input, where + ": unknown field '" + key + "'");
      }
    }
    MemeRecord r;
    r.id = j["id"].get<std::string>();
    if (!seen.insert(r.id).second) throw Error(ErrorKind::invalid_input, where + ": duplicate id " + r.id);
    r.image_path = j["image_path"].get<std::string>();
    r.text = j["text"].get<std::string>();
    const auto resolve = [&](const std::string& p) {
      std::filesystem::path path(p);
      return path.is_absolute() ? path : base / path;
    };
    r.image = read_png(resolve(r.image_path));
    if (j.contains("mask_path") && !j["mask_path"].is_null()) r.caption_mask = read_mask_png(resolve(j["mask_path"].get<std::string>()));
    if (j.contains("label") && !j["label"].is_null()) {
      if (!j["label"].is_number_integer()) throw Error(ErrorKind::invalid_input, where + ": label must be 0 or 1");
      r.label = j["label"].get<int>();
    }
    validate_record(r);
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------

ImageInput MockInpainter::inpaint(const ImageInput& image, const Mask& mask) const {
  if (mask.height != image.height || mask.width != image.width) {
    throw Error(ErrorKind::dimension_mismatch, "inpaint: mask and image shapes differ");
  }
  const int h = image.height;
  const int w = image.width;
  ImageInput out = image;
  std::vector<int> component(static_cast<std::size_t>(h) * w, -1);
  std::vector<std::pair<int, int>> stack;
  int next = 0;
  for (int sy = 0; sy < h; ++sy) {
    for (int sx = 0; sx < w; ++sx) {
      if (!mask.at(sy, sx) || component[static_cast<std::size_t>(sy) * w + sx] >= 0) continue;
      // Flood the 8-connected region and collect its border ring.
      std::vector<std::pair<int, int>> members;
      std::set<std::pair<int, int>> ring;
      stack.push_back({sy, sx});
      component[static_cast<std::size_t>(sy) * w + sx] = next;
      while (!stack.empty()) {
        auto [y, x] = stack.back();
        stack.pop_back();
        members.push_back({y, x});
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int ny = y + dy;
            const int nx = x + dx;
            if ((dy == 0 && dx == 0) || ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
            if (!mask.at(ny, nx)) {
              ring.insert({ny, nx});
              continue;
            }
            auto& c = component[static_cast<std::size_t>(ny) * w + nx];
            if (c < 0) {
              c = next;
              stack.push_back({ny, nx});
            }
          }
        }
      }
      ++next;
      if (ring.empty()) throw Error(ErrorKind::invalid_input, "inpaint: mask covers the whole image");
      for (int c = 0; c < image.channels; ++c) {
        double sum = 0.0;
        for (auto [y, x] : ring) sum += image.at(y, x, c);
        const auto fill = static_cast<float>(sum / static_cast<double>(ring.size()));
        for (auto [y, x] : members) out.at(y, x, c) = fill;
      }
    }
  }
  return out;
}

namespace {

const std::vector<std::string> kMoods = {"a cheerful", "a calm", "a bright", "a cozy", "a peaceful", "a playful"};
const std::vector<std::string> kScenes = {"garden", "beach at sunset", "mountain trail", "kitchen", "city park",
                                          "lake shore"};
const std::vector<std::string> kDetails = {"with friends smiling", "full of flowers", "on a sunny afternoon",
                                           "with a friendly dog", "after a light rain", "with warm colors"};

}  // namespace

std::string MockCaptioner::caption(const ImageInput& image, std::string_view prompt) const {
  Fnv1a h;
  h.update(image_digest(image));
  h.update(prompt);
  std::uint64_t state = mix_seed(seed_, h.value());
  const auto a = splitmix64(state) % kMoods.size();
  const auto b = splitmix64(state) % kScenes.size();
  const auto c = splitmix64(state) % kDetails.size();
  return kMoods[a] + " " + kScenes[b] + " " + kDetails[c];
}

ImageInput MockTextToImage::generate(std::string_view text) const {
  Fnv1a h;
  h.update(text);
  std::mt19937_64 rng(mix_seed(seed_, h.value()));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ImageInput img(height_, width_);
  double base[3];
  double stripe[3];
  for (int c = 0; c < 3; ++c) {
    base[c] = 0.45 + 0.5 * u(rng);
    stripe[c] = 0.3 + 0.6 * u(rng);
  }
  const double angle = u(rng) * 3.141592653589793;
  const double freq = 2.0 + 6.0 * u(rng);
  const double phase = u(rng) * 6.283185307179586;
  const double bx = u(rng) * width_;
  const double by = u(rng) * height_;
  const double br = (0.15 + 0.2 * u(rng)) * std::min(height_, width_);
  for (int y = 0; y < height_; ++y) {
    for (int x = 0; x < width_; ++x) {
      const double t = (std::cos(angle) * x + std::sin(angle) * y) / static_cast<double>(width_);
      const double s = 0.5 + 0.5 * std::sin(6.283185307179586 * freq * t + phase);
      const double dist = std::hypot(x - bx, y - by);
      const double blob = dist < br ? 1.0 - dist / br : 0.0;
      for (int c = 0; c < 3; ++c) {
        const double v = (1.0 - 0.4 * s) * base[c] + 0.4 * s * stripe[c] + 0.3 * blob * (1.0 - base[c]);
        img.at(y, x, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return img;
}

GenerationBackends mock_backends(std::uint64_t seed, int generated_height, int generated_width) {
  GenerationBackends b;
  b.seed = seed;
  b.inpainter = std::make_shared<MockInpainter>();
  b.captioner = std::make_shared<MockCaptioner>(derive_seed(seed, "captioner"));
  b.text_to_image = std::make_shared<MockTextToImage>(derive_seed(seed, "text_to_image"), generated_height, generated_width);
  return b;
}

ImageInput separate_modalities(const MemeRecord& meme, const GenerationBackends& backends) {
  validate_record(meme);
  if (meme.caption_mask.height == 0) {
    throw Error(ErrorKind::invalid_input, "meme " + meme.id + " has no caption mask");
  }
  if (meme.caption_mask.count() == meme.caption_mask.data.size()) {
    throw Error(ErrorKind::invalid_input, "meme " + meme.id + ": caption mask covers the whole image");
  }
  if (meme.caption_mask.count() == 0) return meme.image;
  if (!backends.inpainter) throw Error(ErrorKind::backend_unavailable, "no inpainter configured");
  try {
    return backends.inpainter->inpaint(meme.image, meme.caption_mask);
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw Error(ErrorKind::backend_failure, "inpainter failed on meme " + meme.id + ": " + e.what());
  }
}

std::string GenerationProvenance::to_json() const {
  ordered_json j;
  j["source_id"] = source_id;
  j["backends"] = {{"inpainter", inpainter}, {"captioner", captioner}, {"text_to_image", text_to_image}};
  j["prompt"] = prompt;
  j["seed"] = seed;
  j["purified_digest"] = purified_digest;
  j["image_digest"] = image_digest;
  return j.dump(2);
}

PositivePair generate_positive(const ImageInput& purified, const GenerationBackends& backends, const std::string& meme_id) {
  if (!backends.captioner || !backends.text_to_image) {
    throw Error(ErrorKind::backend_unavailable, "captioner and text_to_image backends are required");
  }
  PositivePair out;
  try {
    out.text = backends.captioner->caption(purified, backends.positive_prompt);
    out.image = backends.text_to_image->generate(out.text);
  } catch (const Error& e) {
    throw Error(e.kind() == ErrorKind::backend_unavailable ? e.kind() : ErrorKind::backend_failure,
                "generation failed for meme " + meme_id + ": " + e.what());
  } catch (const std::exception& e) {
    throw Error(ErrorKind::backend_failure, "generation failed for meme " + meme_id + ": " + e.what());
  }
  validate_image(out.image);
  auto& p = out.provenance;
  p.source_id = meme_id;
  p.inpainter = backends.inpainter ? backends.inpainter->name() : "";
  p.captioner = backends.captioner->name();
  p.text_to_image = backends.text_to_image->name();
  p.prompt = backends.positive_prompt;
  p.seed = backends.seed;
  p.purified_digest = image_digest(purified);
  p.image_digest = image_digest(out.image);
  return out;
}

// ---------------------------------------------------------------------------

ReferenceIndex::ReferenceIndex(std::vector<ReferenceEntry> entries, Eigen::MatrixXd embeddings)
    : entries_(std::move(entries)), embeddings_(std::move(embeddings)) {
  if (static_cast<Eigen::Index>(entries_.size()) != embeddings_.rows()) {
    throw Error(ErrorKind::dimension_mismatch, "reference index: entry count and embedding rows differ");
  }
}

void ReferenceIndex::add(ReferenceEntry entry, const Eigen::VectorXd& embedding) {
  if (!entries_.empty() && embedding.size() != embeddings_.cols()) {
    throw Error(ErrorKind::dimension_mismatch, "reference index: embedding dimension " +
                                                   std::to_string(embedding.size()) + " != " +
                                                   std::to_string(embeddings_.cols()));
  }
  if (!embedding.allFinite()) throw Error(ErrorKind::invalid_input, "reference index: non-finite embedding");
  embeddings_.conservativeResize(embeddings_.rows() + 1, embedding.size());
  embeddings_.row(embeddings_.rows() - 1) = embedding.transpose();
  entries_.push_back(std::move(entry));
}

Neighbor ReferenceIndex::nearest(const Eigen::VectorXd& query) const {
  if (entries_.empty()) throw Error(ErrorKind::invalid_input, "reference index is empty");
  if (query.size() != embeddings_.cols()) {
    throw Error(ErrorKind::dimension_mismatch, "query dimension " + std::to_string(query.size()) + " != index dimension " +
                                                   std::to_string(embeddings_.cols()));
  }
  Neighbor best{0, std::numeric_limits<double>::infinity()};
  double best_sq = std::numeric_limits<double>::infinity();
  for (Eigen::Index r = 0; r < embeddings_.rows(); ++r) {
    double sq = 0.0;
    for (Eigen::Index c = 0; c < embeddings_.cols(); ++c) {
      const double diff = embeddings_(r, c) - query(c);
      sq += diff * diff;
    }
    if (sq < best_sq) {
      best_sq = sq;
      best.index = static_cast<std::size_t>(r);
    }
  }
  best.distance = std::sqrt(best_sq);
  return best;
}

void ReferenceIndex::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  Heatmap grid(static_cast<int>(embeddings_.rows()), static_cast<int>(embeddings_.cols()));
  for (Eigen::Index r = 0; r < embeddings_.rows(); ++r) {
    for (Eigen::Index c = 0; c < embeddings_.cols(); ++c) grid.at(static_cast<int>(r), static_cast<int>(c)) = embeddings_(r, c);
  }
  write_npy(dir / "embeddings.npy", grid);
  std::string lines;
  for (const auto& e : entries_) {
    ordered_json j;
    j["id"] = e.id;
    j["text"] = e.text;
    j["image_path"] = e.image_path;
    lines += j.dump() + "\n";
  }
  write_text_file(dir / "metadata.jsonl", lines);
}

ReferenceIndex ReferenceIndex::load(const std::filesystem::path& dir) {
  const Heatmap grid = read_npy(dir / "embeddings.npy");
  Eigen::MatrixXd emb(grid.height, grid.width);
  for (int r = 0; r < grid.height; ++r) {
    for (int c = 0; c < grid.width; ++c) emb(r, c) = grid.at(r, c);
  }
  std::istringstream in(read_text_file(dir / "metadata.jsonl"));
  std::vector<ReferenceEntry> entries;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) throw Error(ErrorKind::invalid_input, "corrupt reference metadata in " + dir.string());
    entries.push_back(ReferenceEntry{j.at("id").get<std::string>(), j.at("text").get<std::string>(),
                                     j.at("image_path").get<std::string>(), std::nullopt});
  }
  return ReferenceIndex(std::move(entries), std::move(emb));
}

ReferenceIndex build_reference_index(const std::vector<MemeRecord>& hateful, const DualEncoder& encoder) {
  if (hateful.empty()) throw Error(ErrorKind::invalid_input, "reference set is empty");
  ReferenceIndex index;
  for (const auto& r : hateful) {
    validate_record(r);
    index.add(ReferenceEntry{r.id, r.text, r.image_path, r.image}, encoder.encode_image(r.image));
  }
  return index;
}

RetrievedNegative retrieve_negative(const ImageInput& purified, const ReferenceIndex& index, const DualEncoder& encoder) {
  RetrievedNegative out;
  out.neighbor = index.nearest(encoder.encode_image(purified));
  out.entry = &index.entry(out.neighbor.index);
  return out;
}

}  // namespace memesieve
