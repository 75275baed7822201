#include "memesieve/render.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <set>

#include "memesieve/common.hpp"

namespace memesieve {

namespace {

// 3x5 glyphs, one row per entry, bit 2 = leftmost column.
struct Glyph {
  char ch;
  std::array<std::uint8_t, 5> rows;
};

constexpr Glyph kFont[] = {
    {'a', {2, 5, 7, 5, 5}}, {'b', {6, 5, 6, 5, 6}}, {'c', {3, 4, 4, 4, 3}}, {'d', {6, 5, 5, 5, 6}},
    {'e', {7, 4, 6, 4, 7}}, {'f', {7, 4, 6, 4, 4}}, {'g', {3, 4, 5, 5, 3}}, {'h', {5, 5, 7, 5, 5}},
    {'i', {7, 2, 2, 2, 7}}, {'j', {1, 1, 1, 5, 2}}, {'k', {5, 5, 6, 5, 5}}, {'l', {4, 4, 4, 4, 7}},
    {'m', {5, 7, 7, 5, 5}}, {'n', {6, 5, 5, 5, 5}}, {'o', {2, 5, 5, 5, 2}}, {'p', {6, 5, 6, 4, 4}},
    {'q', {2, 5, 5, 6, 3}}, {'r', {6, 5, 6, 5, 5}}, {'s', {3, 4, 2, 1, 6}}, {'t', {7, 2, 2, 2, 2}},
    {'u', {5, 5, 5, 5, 7}}, {'v', {5, 5, 5, 5, 2}}, {'w', {5, 5, 7, 7, 5}}, {'x', {5, 5, 2, 5, 5}},
    {'y', {5, 5, 2, 2, 2}}, {'z', {7, 1, 2, 4, 7}}, {'0', {7, 5, 5, 5, 7}}, {'1', {2, 6, 2, 2, 7}},
    {'2', {6, 1, 2, 4, 7}}, {'3', {6, 1, 2, 1, 6}}, {'4', {5, 5, 7, 1, 1}}, {'5', {7, 4, 6, 1, 6}},
    {'6', {3, 4, 7, 5, 7}}, {'7', {7, 1, 1, 2, 2}}, {'8', {7, 5, 7, 5, 7}}, {'9', {7, 5, 7, 1, 6}},
    {'\'', {2, 2, 0, 0, 0}}, {'<', {1, 2, 4, 2, 1}}, {'>', {4, 2, 1, 2, 4}}, {'-', {0, 0, 7, 0, 0}},
};

const Glyph* find_glyph(char ch) {
  const char c = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  for (const auto& g : kFont) {
    if (g.ch == c) return &g;
  }
  return nullptr;
}

void put_pixel(ImageInput& img, int y, int x, float r, float g, float b) {
  if (y < 0 || y >= img.height || x < 0 || x >= img.width) return;
  img.at(y, x, 0) = r;
  img.at(y, x, 1) = g;
  img.at(y, x, 2) = b;
}

}  // namespace

ImageInput render_overlay(const ImageInput& image, const Heatmap& heatmap, const std::vector<std::string>& tokens,
                          const std::vector<int>& selected, double alpha) {
  validate_image(image);
  if (heatmap.height != image.height || heatmap.width != image.width) {
    throw Error(ErrorKind::dimension_mismatch, "overlay: heatmap and image sizes differ");
  }
  const int scale = image.width >= 256 ? 2 : 1;
  const int cell_w = 4 * scale;
  const int line_h = 8 * scale;
  const int margin = 2 * scale;

  // Lay the tokens out first to size the banner.
  struct Placed {
    std::size_t index;
    int x, line;
  };
  std::vector<Placed> placed;
  int x = margin;
  int line = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const int w = static_cast<int>(tokens[i].size()) * cell_w;
    if (x > margin && x + w > image.width - margin) {
      x = margin;
      ++line;
    }
    placed.push_back({i, x, line});
    x += w + cell_w;
  }
  const int banner = (line + 1) * line_h + 2 * margin;

  ImageInput out(image.height + banner, image.width);
  for (int y = 0; y < image.height; ++y) {
    for (int xx = 0; xx < image.width; ++xx) {
      const double a = alpha * std::clamp(heatmap.at(y, xx), 0.0, 1.0);
      for (int c = 0; c < 3; ++c) {
        const double src = image.channels == 3 ? image.at(y, xx, c) : image.at(y, xx, 0);
        const double tint = c == 0 ? 1.0 : 0.0;
        out.at(y, xx, c) = static_cast<float>((1.0 - a) * src + a * tint);
      }
    }
  }
  for (int y = image.height; y < out.height; ++y) {
    for (int xx = 0; xx < out.width; ++xx) put_pixel(out, y, xx, 1.0F, 1.0F, 1.0F);
  }

  const std::set<int> chosen(selected.begin(), selected.end());
  for (const auto& p : placed) {
    const std::string& tok = tokens[p.index];
    const int top = image.height + margin + p.line * line_h;
    const bool hot = chosen.count(static_cast<int>(p.index)) > 0;
    const float r = hot ? 0.8F : 0.1F;
    for (std::size_t k = 0; k < tok.size(); ++k) {
      const Glyph* g = find_glyph(tok[k]);
      if (!g) continue;
      const int left = p.x + static_cast<int>(k) * cell_w;
      for (int gy = 0; gy < 5; ++gy) {
        for (int gx = 0; gx < 3; ++gx) {
          if (!((g->rows[static_cast<std::size_t>(gy)] >> (2 - gx)) & 1)) continue;
          for (int sy = 0; sy < scale; ++sy) {
            for (int sx = 0; sx < scale; ++sx) put_pixel(out, top + gy * scale + sy, left + gx * scale + sx, r, 0.1F, 0.1F);
          }
        }
      }
    }
    if (hot) {
      const int uy = top + 6 * scale;
      const int width = static_cast<int>(tok.size()) * cell_w - scale;
      for (int sy = 0; sy < scale; ++sy) {
        for (int ux = 0; ux < width; ++ux) put_pixel(out, uy + sy, p.x + ux, 0.8F, 0.1F, 0.1F);
      }
    }
  }
  return out;
}

}  // namespace memesieve
