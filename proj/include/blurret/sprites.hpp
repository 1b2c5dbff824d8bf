#pragma once

#include "blurret/blur_synth.hpp"
#include "blurret/rng.hpp"
#include "blurret/tensor.hpp"

namespace blurret {

// Full linear motion segment in pixel coordinates plus the sub-window
// selected for one rendered frame. selected_count = 0 encodes the sharp
// frame (object parked at the segment midpoint).
struct TrajectorySpec {
  double full_start_r = 0, full_start_c = 0;
  double full_end_r = 0, full_end_c = 0;
  int n_subsegments = 23;
  int selected_start_index = 0;
  int selected_count = 0;
};

// Procedural sprite for (object_id, category_id). The category picks the
// shape family, the object id picks size, colors and surface pattern.
// Identical inputs produce identical sprites.
Sprite make_sprite(int64_t object_id, int64_t category_id, Rng& rng,
                   int min_extent = 20, int max_extent = 28);

// Procedural background plate (flat / gradient / value noise / radial).
Volume<double> make_background(int h, int w, Rng& rng);

// Samples a linear segment whose endpoints (object anchor positions) stay
// inside the frame; length is drawn in [0, max_len_frac * min(h, w)] with a
// bias toward long segments so heavy smears stay reachable.
TrajectorySpec sample_trajectory(Rng& rng, int h, int w,
                                 double max_len_frac = 0.6,
                                 int n_subsegments = 23,
                                 int max_retries = 64);

}  // namespace blurret
