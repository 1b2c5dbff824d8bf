#pragma once

#include <array>
#include <cstdint>

#include "blurret/tensor.hpp"

namespace blurret {

// Normalized smear kernel at canvas resolution. A cell (r, c) with weight w
// means the object spends fraction w of the exposure with its anchor at
// (r, c). Weights are nonnegative and sum to 1.
struct PointSpreadFunction {
  GridD weights;  // H x W
};

// Sharp object appearance and visibility mask, values in [0,1]. Edges may be
// anti-aliased, so the mask can be fractional.
struct Sprite {
  Volume<double> rgb;  // 3 x Hs x Ws
  GridD mask;          // Hs x Ws
};

// Blurred observation: image = smeared object + (1 - alpha) * background,
// where alpha is the smeared visibility mask.
struct CompositeResult {
  Volume<double> image;       // 3 x H x W
  GridD alpha;                // H x W
  Volume<double> background;  // 3 x H x W (echo of the input)
};

// Per-image ground truth: blur severity in [0,1), discrete blur level >= 1,
// and a tight normalized bounding box (x, y, w, h) over the visible support.
struct BlurAnnotation {
  double bs = 0.0;
  int bl = 1;
  std::array<double, 4> bbox{0, 0, 0, 0};
};

// Deposits n_samples equally spaced point splats of weight 1/n_samples
// along the segment start->end (row/col coordinates), each spread bilinearly
// over the 4 surrounding cells. Endpoints must lie inside [0,H-1]x[0,W-1].
PointSpreadFunction rasterize_linear_psf(double start_r, double start_c,
                                         double end_r, double end_c, int h,
                                         int w, int n_samples);

// Smears only the visibility mask: alpha(x) = sum over kernel cells u of
// P(u) * mask(x - u - origin). Used for cheap blur probing and silhouettes.
GridD composite_alpha(const PointSpreadFunction& psf, const Sprite& sprite,
                      int origin_r, int origin_c);

// Full formation model. The sprite's top-left corner lands at
// (kernel cell + origin); object color is carried premultiplied by the mask
// so fully background pixels reproduce the background exactly.
CompositeResult composite(const PointSpreadFunction& psf, const Sprite& sprite,
                          int origin_r, int origin_c,
                          const Volume<double>& background);

// 1 - mean(alpha) over the eroded support. The support (alpha > 0) is eroded
// by `erosion_radius` passes of a 3x3 square element with cells beyond the
// frame treated as empty.
double blur_severity(const GridD& alpha, int erosion_radius = 3);

// Discretized severity: max(1, ceil(10 * bs)).
int blur_level(double bs);

// Tight normalized (x, y, w, h) box over cells with alpha > 0.
std::array<double, 4> bbox_from_alpha(const GridD& alpha);

// Filtering rule: reject frames whose visible support is under
// min_area_frac of the frame, or whose endpoint silhouettes overlap with
// IoU below min_endpoint_iou.
bool accept_sample(const Grid<uint8_t>& mask_at_start,
                   const Grid<uint8_t>& mask_at_end, const GridD& alpha,
                   double min_area_frac = 0.015,
                   double min_endpoint_iou = 0.20);

}  // namespace blurret
