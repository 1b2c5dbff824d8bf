#pragma once

#include <string>

#include "blurret/tensor.hpp"

namespace blurret {

// Loaded raster: RGB planes plus alpha, all in [0,1].
struct LoadedImage {
  Volume<float> rgb;  // 3 x H x W
  GridF alpha;        // H x W
};

// Writes an 8-bit RGBA raster; channels are clamped to [0,1] and quantized
// with round(v * 255). The alpha channel carries the object visibility mask.
void write_png_rgba(const std::string& path, const Volume<double>& rgb,
                    const GridD& alpha);

LoadedImage read_png_rgba(const std::string& path);

}  // namespace blurret
