#include <doctest.h>

#include <filesystem>
#include <random>
#include <set>

#include "memesieve/common.hpp"
#include "memesieve/image.hpp"

using namespace memesieve;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const char* name) {
  auto dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("fnv1a reference vectors") {
  CHECK(digest_text("") == "cbf29ce484222325");
  CHECK(digest_text("a") == "af63dc4c8601ec8c");
  CHECK(digest_text("foobar") == "85944171f73967e8");
}

TEST_CASE("seed derivation is stable and name-sensitive") {
  CHECK(derive_seed(1, "pretrain") == derive_seed(1, "pretrain"));
  CHECK(derive_seed(1, "pretrain") != derive_seed(1, "finetune"));
  CHECK(derive_seed(1, "pretrain") != derive_seed(2, "pretrain"));
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 1000; ++i) seen.insert(derive_seed(42, "item:" + std::to_string(i)));
  CHECK(seen.size() == 1000);
}

TEST_CASE("error kinds map onto exit codes") {
  CHECK(Error(ErrorKind::invalid_input, "x").exit_code() == 1);
  CHECK(Error(ErrorKind::not_found, "x").exit_code() == 1);
  CHECK(Error(ErrorKind::config_mismatch, "x").exit_code() == 1);
  CHECK(Error(ErrorKind::backend_failure, "x").exit_code() == 2);
  CHECK(Error(ErrorKind::divergence, "x").exit_code() == 2);
  CHECK(to_string(ErrorKind::divergence) == "divergence");
}

TEST_CASE("text files") {
  const auto dir = scratch("memesieve_common_text");
  write_text_file(dir / "nested" / "a.txt", "hello\n");
  CHECK(read_text_file(dir / "nested" / "a.txt") == "hello\n");
  CHECK(digest_file(dir / "nested" / "a.txt") == digest_text("hello\n"));
  CHECK_THROWS_AS((void)read_text_file(dir / "missing.txt"), Error);
  fs::remove_all(dir);
}

TEST_CASE("png round trips") {
  const auto dir = scratch("memesieve_common_png");
  ImageInput img(7, 9, 3);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<float>(i % 256) / 255.0F;
  write_png(dir / "img.png", img);
  const auto back = read_png(dir / "img.png");
  CHECK(back.height == 7);
  CHECK(back.width == 9);
  CHECK(back == img);
  CHECK(image_digest(back) == image_digest(img));

  Mask m(5, 6);
  m.at(1, 2) = 1;
  m.at(4, 5) = 1;
  write_mask_png(dir / "mask.png", m);
  CHECK(read_mask_png(dir / "mask.png") == m);
  CHECK(m.count() == 2);
  CHECK_THROWS_AS((void)read_png(dir / "nope.png"), Error);
  fs::remove_all(dir);
}

TEST_CASE("npy round trip") {
  const auto dir = scratch("memesieve_common_npy");
  Heatmap h(3, 4);
  for (std::size_t i = 0; i < h.values.size(); ++i) h.values[i] = 0.1 * static_cast<double>(i) - 0.3;
  write_npy(dir / "h.npy", h);
  const auto back = read_npy(dir / "h.npy");
  CHECK(back.height == 3);
  CHECK(back.width == 4);
  CHECK(back.values == h.values);
  const auto bytes = read_text_file(dir / "h.npy");
  CHECK(bytes.substr(1, 5) == "NUMPY");
  CHECK(bytes.find("'descr': '<f8'") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("bilinear resize") {
  ImageInput flat(10, 6, 3, 0.3F);
  const auto r = resize_bilinear(flat, 4, 4);
  for (float v : r.pixels) CHECK(v == doctest::Approx(0.3F));
  CHECK(resize_bilinear(flat, 10, 6) == flat);
}

TEST_CASE("image validation") {
  ImageInput img(2, 2, 3, 0.5F);
  CHECK_NOTHROW(validate_image(img));
  img.pixels[0] = -0.1F;
  CHECK_THROWS_AS(validate_image(img), Error);
  img.pixels[0] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(validate_image(img), Error);
}
