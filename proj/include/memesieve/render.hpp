#pragma once

#include <string>
#include <vector>

#include "memesieve/image.hpp"

namespace memesieve {

// The meme with the heatmap alpha-blended on top (transparent at 0, red at
// 1) and a white banner underneath listing the text tokens; selected token
// indices are underlined.
ImageInput render_overlay(const ImageInput& image, const Heatmap& heatmap, const std::vector<std::string>& tokens,
                          const std::vector<int>& selected, double alpha = 0.55);

}  // namespace memesieve
