#include "memesieve/encoder.hpp"

#include <json.hpp>

#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>

#include "memesieve/common.hpp"

namespace memesieve {

using json = nlohmann::json;

EncoderShape clip_vit_base_patch32_shape() {
  // 224 / 32 = 7 patches per side, plus the class position.
  return EncoderShape{"clip-vit-base-patch32", 512, 768, 50, 77, 224, 49408};
}

EncoderShape mock_encoder_shape() { return EncoderShape{"mock", 32, 48, 17, 32, 32, 8192}; }

void validate_bundle(const EmbeddingBundle& b, const EncoderShape& s) {
  auto fail = [](const std::string& what) { throw Error(ErrorKind::dimension_mismatch, "embedding bundle: " + what); };
  if (b.image_pooled.size() != s.embed_dim) fail("image_pooled length != d");
  if (b.text_pooled.size() != s.embed_dim) fail("text_pooled length != d");
  if (b.image_seq.rows() != s.image_positions || b.image_seq.cols() != s.image_dim) fail("image_seq shape != o x d_i");
  if (b.text_seq.cols() != s.embed_dim || b.text_seq.rows() < 1 || b.text_seq.rows() > s.max_text_tokens) {
    fail("text_seq shape != l x d with 1 <= l <= L_T");
  }
  if (s.image_positions < 2) fail("o must be >= 2");
  if (!b.image_pooled.allFinite() || !b.text_pooled.allFinite() || !b.image_seq.allFinite() ||
      !b.text_seq.allFinite()) {
    throw Error(ErrorKind::invalid_input, "embedding bundle contains non-finite values");
  }
}

namespace {
template <typename M>
bool same_bits(const M& a, const M& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), static_cast<std::size_t>(a.size()) * sizeof(double)) == 0;
}
}  // namespace

bool bitwise_equal(const EmbeddingBundle& a, const EmbeddingBundle& b) {
  return same_bits(a.image_pooled, b.image_pooled) && same_bits(a.text_pooled, b.text_pooled) &&
         same_bits(a.image_seq, b.image_seq) && same_bits(a.text_seq, b.text_seq);
}

TextInput truncate_to_max(const TextInput& text, int max_tokens) {
  if (max_tokens < 2) throw Error(ErrorKind::invalid_input, "truncation length must be >= 2");
  if (static_cast<int>(text.tokens.size()) <= max_tokens) return text;
  TextInput out;
  out.raw_text = text.raw_text;
  const auto keep = static_cast<std::size_t>(max_tokens - 1);
  out.tokens.assign(text.tokens.begin(), text.tokens.begin() + static_cast<std::ptrdiff_t>(keep));
  out.tokens.push_back(text.tokens.back());
  if (text.pieces.size() == text.tokens.size()) {
    out.pieces.assign(text.pieces.begin(), text.pieces.begin() + static_cast<std::ptrdiff_t>(keep));
    out.pieces.push_back(text.pieces.back());
  }
  return out;
}

// ---------------------------------------------------------------------------

ImageInput DualEncoder::prepare_image(const ImageInput& image) const {
  const int r = shape().native_resolution;
  return resize_bilinear(image, r, r);
}

void DualEncoder::validate_text(const TextInput& text) const {
  const auto& s = shape();
  if (text.tokens.empty()) throw Error(ErrorKind::invalid_input, "text has no tokens");
  if (static_cast<int>(text.tokens.size()) > s.max_text_tokens) {
    throw Error(ErrorKind::invalid_input, "text has " + std::to_string(text.tokens.size()) +
                                              " tokens, exceeding L_T=" + std::to_string(s.max_text_tokens) +
                                              "; truncate explicitly before encoding");
  }
  for (auto t : text.tokens) {
    if (t < 0 || t >= s.vocab_size) {
      throw Error(ErrorKind::invalid_input, "token id " + std::to_string(t) + " outside vocabulary");
    }
  }
}

EmbeddingBundle DualEncoder::encode(const ImageInput& image, const TextInput& text) const {
  validate_image(image);
  validate_text(text);
  auto img = embed_image(prepare_image(image));
  auto txt = embed_text(text);
  EmbeddingBundle out{std::move(img.pooled), std::move(txt.pooled), std::move(img.seq), std::move(txt.seq)};
  validate_bundle(out, shape());
  return out;
}

Eigen::VectorXd DualEncoder::encode_image(const ImageInput& image) const {
  validate_image(image);
  return embed_image(prepare_image(image)).pooled;
}

// ---------------------------------------------------------------------------

MockDualEncoder::MockDualEncoder(std::uint64_t seed, EncoderShape shape) : seed_(seed), shape_(std::move(shape)) {
  const int patches = shape_.patch_count();
  const int grid = static_cast<int>(std::lround(std::sqrt(static_cast<double>(patches))));
  if (grid * grid != patches || grid < 1 || shape_.native_resolution % grid != 0) {
    throw Error(ErrorKind::invalid_input, "mock encoder needs a square patch grid dividing the native resolution");
  }
  patch_side_ = shape_.native_resolution / grid;

  std::mt19937_64 rng(derive_seed(seed_, "mock-encoder-parameters"));
  std::normal_distribution<double> normal(0.0, 1.0);
  auto gaussian = [&](Eigen::Index rows, Eigen::Index cols, double scale) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng) * scale;
    return m;
  };
  const int fan_in = patch_side_ * patch_side_ * 3;
  patch_projection_ = gaussian(fan_in, shape_.image_dim, std::sqrt(3.0 / fan_in));
  position_ = gaussian(shape_.image_positions, shape_.image_dim, 0.1);
  class_embedding_ = gaussian(shape_.image_dim, 1, 1.0).col(0);
  visual_projection_ = gaussian(shape_.image_dim, shape_.embed_dim, 1.0 / std::sqrt(shape_.image_dim));
  text_projection_ = gaussian(shape_.embed_dim, shape_.embed_dim, 1.0 / std::sqrt(shape_.embed_dim));
}

Eigen::VectorXd MockDualEncoder::hashed_vector(std::uint64_t key, int dim) const {
  std::uint64_t state = mix_seed(seed_, key);
  Eigen::VectorXd v(dim);
  for (int i = 0; i < dim; i += 2) {
    // Box-Muller on two uniform draws in (0, 1].
    double u1 = (static_cast<double>(splitmix64(state) >> 11) + 1.0) * 0x1.0p-53;
    double u2 = static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53;
    double r = std::sqrt(-2.0 * std::log(u1));
    v[i] = r * std::cos(2.0 * std::numbers::pi * u2);
    if (i + 1 < dim) v[i + 1] = r * std::sin(2.0 * std::numbers::pi * u2);
  }
  return v;
}

TextInput MockDualEncoder::tokenize(std::string_view text) const {
  TextInput out;
  out.raw_text = std::string(text);
  out.tokens.push_back(kStartToken);
  out.pieces.emplace_back("<start>");
  std::string word;
  auto flush = [&] {
    if (word.empty()) return;
    Fnv1a h;
    h.update(word);
    out.tokens.push_back(static_cast<std::int32_t>(3 + h.value() % static_cast<std::uint64_t>(shape_.vocab_size - 3)));
    out.pieces.push_back(word);
    word.clear();
  };
  for (char ch : text) {
    auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || c == '\'') {
      word.push_back(static_cast<char>(std::tolower(c)));
    } else {
      flush();
    }
  }
  flush();
  out.tokens.push_back(kEndToken);
  out.pieces.emplace_back("<end>");
  return out;
}

std::uint64_t MockDualEncoder::parameter_checksum() const {
  Fnv1a h;
  h.update_pod(seed_);
  for (const Eigen::MatrixXd* m : {&patch_projection_, &position_, &visual_projection_, &text_projection_}) {
    h.update(std::span(reinterpret_cast<const std::uint8_t*>(m->data()), static_cast<std::size_t>(m->size()) * sizeof(double)));
  }
  h.update(std::span(reinterpret_cast<const std::uint8_t*>(class_embedding_.data()),
                     static_cast<std::size_t>(class_embedding_.size()) * sizeof(double)));
  return h.value();
}

MockDualEncoder::ImageEmbedding MockDualEncoder::embed_image(const ImageInput& image) const {
  const int grid = shape_.native_resolution / patch_side_;
  const int fan_in = patch_side_ * patch_side_ * 3;
  Eigen::MatrixXd features(shape_.patch_count(), fan_in);
  for (int gy = 0; gy < grid; ++gy) {
    for (int gx = 0; gx < grid; ++gx) {
      const int row = gy * grid + gx;
      int col = 0;
      for (int y = 0; y < patch_side_; ++y) {
        for (int x = 0; x < patch_side_; ++x) {
          for (int c = 0; c < 3; ++c) {
            const int channel = image.channels == 3 ? c : 0;
            features(row, col++) = 2.0 * image.at(gy * patch_side_ + y, gx * patch_side_ + x, channel) - 1.0;
          }
        }
      }
    }
  }
  ImageEmbedding out;
  out.seq.resize(shape_.image_positions, shape_.image_dim);
  out.seq.bottomRows(shape_.patch_count()) = features * patch_projection_ + position_.bottomRows(shape_.patch_count());

  Fnv1a h;
  h.update(image_digest(image));
  Eigen::VectorXd cls = class_embedding_ + out.seq.bottomRows(shape_.patch_count()).colwise().mean().transpose() +
                        0.05 * hashed_vector(h.value(), shape_.image_dim);
  out.seq.row(0) = cls.transpose() + position_.row(0);
  out.pooled = visual_projection_.transpose() * out.seq.row(0).transpose();
  return out;
}

MockDualEncoder::TextEmbedding MockDualEncoder::embed_text(const TextInput& text) const {
  const auto l = static_cast<Eigen::Index>(text.tokens.size());
  const int d = shape_.embed_dim;
  Eigen::MatrixXd base(l, d);
  for (Eigen::Index k = 0; k < l; ++k) {
    base.row(k) = (hashed_vector(static_cast<std::uint64_t>(text.tokens[static_cast<std::size_t>(k)]), d) +
                   0.1 * hashed_vector(0xABCD0000ULL + static_cast<std::uint64_t>(k), d))
                      .transpose();
  }
  TextEmbedding out;
  out.seq = base;
  Eigen::RowVectorXd running = Eigen::RowVectorXd::Zero(d);
  for (Eigen::Index k = 1; k < l; ++k) {
    running += base.row(k - 1);
    out.seq.row(k) += 0.5 * running / static_cast<double>(k);
  }
  out.pooled = text_projection_.transpose() * out.seq.row(l - 1).transpose();
  return out;
}

// ---------------------------------------------------------------------------

namespace {

Eigen::MatrixXd matrix_from_json(const json& rows) {
  if (!rows.is_array() || rows.empty()) throw Error(ErrorKind::invalid_input, "expected a non-empty 2-D array");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.at(0).size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != static_cast<std::size_t>(m.cols())) throw Error(ErrorKind::invalid_input, "ragged 2-D array");
    for (std::size_t c = 0; c < rows[r].size(); ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c].get<double>();
  }
  return m;
}

Eigen::VectorXd vector_from_json(const json& values) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(values.size()));
  for (std::size_t i = 0; i < values.size(); ++i) v[static_cast<Eigen::Index>(i)] = values[i].get<double>();
  return v;
}

template <typename Fn>
void for_each_jsonl(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::backend_unavailable, "reference encoder store missing " + path.string());
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    fn(json::parse(line));
  }
}

}  // namespace

PrecomputedDualEncoder::PrecomputedDualEncoder(const std::filesystem::path& store_dir) {
  const auto meta_path = store_dir / "encoder.json";
  if (!std::filesystem::exists(meta_path)) {
    throw Error(ErrorKind::backend_unavailable, "reference encoder store not found at " + store_dir.string());
  }
  try {
    auto meta = json::parse(read_text_file(meta_path));
    shape_.name = meta.at("name").get<std::string>();
    shape_.embed_dim = meta.at("embed_dim").get<int>();
    shape_.image_dim = meta.at("image_dim").get<int>();
    shape_.image_positions = meta.at("image_positions").get<int>();
    shape_.max_text_tokens = meta.at("max_text_tokens").get<int>();
    shape_.native_resolution = meta.at("native_resolution").get<int>();
    shape_.vocab_size = meta.at("vocab_size").get<int>();

    Fnv1a h;
    h.update(meta.dump());
    for_each_jsonl(store_dir / "images.jsonl", [&](const json& rec) {
      ImageEmbedding e{matrix_from_json(rec.at("seq")), vector_from_json(rec.at("pooled"))};
      auto key = rec.at("key").get<std::string>();
      h.update(key);
      images_.emplace(std::move(key), std::move(e));
    });
    for_each_jsonl(store_dir / "texts.jsonl", [&](const json& rec) {
      TextEntry entry;
      entry.input.raw_text = rec.at("text").get<std::string>();
      entry.input.tokens = rec.at("tokens").get<std::vector<std::int32_t>>();
      entry.input.pieces = rec.value("pieces", std::vector<std::string>(entry.input.tokens.size()));
      entry.embedding = TextEmbedding{matrix_from_json(rec.at("seq")), vector_from_json(rec.at("pooled"))};
      h.update(entry.input.raw_text);
      texts_.emplace(entry.input.raw_text, std::move(entry));
    });
    checksum_ = h.value();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::backend_unavailable, std::string("malformed reference encoder store: ") + e.what());
  }
}

TextInput PrecomputedDualEncoder::tokenize(std::string_view text) const {
  auto it = texts_.find(std::string(text));
  if (it == texts_.end()) {
    throw Error(ErrorKind::backend_unavailable, "text not present in reference encoder store: \"" + std::string(text) + "\"");
  }
  return it->second.input;
}

PrecomputedDualEncoder::ImageEmbedding PrecomputedDualEncoder::embed_image(const ImageInput& image) const {
  auto key = image_digest(image);
  auto it = images_.find(key);
  if (it == images_.end()) throw Error(ErrorKind::backend_unavailable, "image " + key + " not present in reference encoder store");
  return it->second;
}

PrecomputedDualEncoder::TextEmbedding PrecomputedDualEncoder::embed_text(const TextInput& text) const {
  auto it = texts_.find(text.raw_text);
  if (it == texts_.end() || it->second.input.tokens != text.tokens) {
    throw Error(ErrorKind::backend_unavailable, "text not present in reference encoder store: \"" + text.raw_text + "\"");
  }
  return it->second.embedding;
}

std::unique_ptr<DualEncoder> make_encoder(const EncoderConfig& config) {
  if (config.backend == "mock") return std::make_unique<MockDualEncoder>(config.mock_seed);
  if (config.backend == "reference") {
    if (config.reference_store.empty()) {
      throw Error(ErrorKind::backend_unavailable, "encoder.backend=reference requires encoder.reference_store");
    }
    return std::make_unique<PrecomputedDualEncoder>(config.reference_store);
  }
  throw Error(ErrorKind::invalid_input, "unknown encoder.backend '" + config.backend + "' (expected mock or reference)");
}

}  // namespace memesieve
