#include "blurret/blur_synth.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "blurret/errors.hpp"

namespace blurret {

PointSpreadFunction rasterize_linear_psf(double start_r, double start_c,
                                         double end_r, double end_c, int h,
                                         int w, int n_samples) {
  if (n_samples < 1) throw DomainError("rasterize_linear_psf: n_samples < 1");
  auto inside = [&](double r, double c) {
    return r >= 0.0 && r <= h - 1.0 && c >= 0.0 && c <= w - 1.0;
  };
  if (!inside(start_r, start_c) || !inside(end_r, end_c)) {
    throw OutOfBounds("rasterize_linear_psf: endpoint outside canvas");
  }

  PointSpreadFunction psf;
  psf.weights = GridD(h, w, 0.0);
  const double wgt = 1.0 / n_samples;
  for (int i = 0; i < n_samples; ++i) {
    double t = n_samples == 1 ? 0.5 : static_cast<double>(i) / (n_samples - 1);
    double r = start_r + t * (end_r - start_r);
    double c = start_c + t * (end_c - start_c);
    int r0 = static_cast<int>(std::floor(r));
    int c0 = static_cast<int>(std::floor(c));
    double fr = r - r0;
    double fc = c - c0;
    const double corner[4] = {(1 - fr) * (1 - fc), (1 - fr) * fc,
                              fr * (1 - fc), fr * fc};
    const int dr[4] = {0, 0, 1, 1};
    const int dc[4] = {0, 1, 0, 1};
    for (int k = 0; k < 4; ++k) {
      if (corner[k] == 0.0) continue;
      int rr = r0 + dr[k];
      int cc = c0 + dc[k];
      // Endpoints inside [0,H-1]x[0,W-1] guarantee every nonzero corner
      // lands in the canvas.
      psf.weights.at(rr, cc) += wgt * corner[k];
    }
  }
  return psf;
}

GridD composite_alpha(const PointSpreadFunction& psf, const Sprite& sprite,
                      int origin_r, int origin_c) {
  const int h = psf.weights.h;
  const int w = psf.weights.w;
  GridD alpha(h, w, 0.0);
  for (int pr = 0; pr < h; ++pr) {
    for (int pc = 0; pc < w; ++pc) {
      double wgt = psf.weights.at(pr, pc);
      if (wgt == 0.0) continue;
      int base_r = pr + origin_r;
      int base_c = pc + origin_c;
      int sr0 = std::max(0, -base_r);
      int sr1 = std::min(sprite.mask.h, h - base_r);
      int sc0 = std::max(0, -base_c);
      int sc1 = std::min(sprite.mask.w, w - base_c);
      for (int sr = sr0; sr < sr1; ++sr) {
        for (int sc = sc0; sc < sc1; ++sc) {
          double m = sprite.mask.at(sr, sc);
          if (m == 0.0) continue;
          alpha.at(base_r + sr, base_c + sc) += wgt * m;
        }
      }
    }
  }
  return alpha;
}

CompositeResult composite(const PointSpreadFunction& psf, const Sprite& sprite,
                          int origin_r, int origin_c,
                          const Volume<double>& background) {
  const int h = psf.weights.h;
  const int w = psf.weights.w;
  if (background.c != 3 || background.h != h || background.w != w) {
    throw ShapeMismatch("composite: background " + std::to_string(background.c) +
                        "x" + std::to_string(background.h) + "x" +
                        std::to_string(background.w) + " vs canvas 3x" +
                        std::to_string(h) + "x" + std::to_string(w));
  }
  if (sprite.rgb.c != 3 || sprite.rgb.h != sprite.mask.h ||
      sprite.rgb.w != sprite.mask.w) {
    throw ShapeMismatch("composite: sprite rgb/mask shapes disagree");
  }

  CompositeResult out;
  out.alpha = GridD(h, w, 0.0);
  out.image = Volume<double>(3, h, w, 0.0);
  out.background = background;

  // Scatter weighted sprite copies; RGB is premultiplied by the mask so the
  // object term vanishes exactly wherever alpha stays 0.
  for (int pr = 0; pr < h; ++pr) {
    for (int pc = 0; pc < w; ++pc) {
      double wgt = psf.weights.at(pr, pc);
      if (wgt == 0.0) continue;
      int base_r = pr + origin_r;
      int base_c = pc + origin_c;
      int sr0 = std::max(0, -base_r);
      int sr1 = std::min(sprite.mask.h, h - base_r);
      int sc0 = std::max(0, -base_c);
      int sc1 = std::min(sprite.mask.w, w - base_c);
      for (int sr = sr0; sr < sr1; ++sr) {
        for (int sc = sc0; sc < sc1; ++sc) {
          double m = sprite.mask.at(sr, sc);
          if (m == 0.0) continue;
          int tr = base_r + sr;
          int tc = base_c + sc;
          double wm = wgt * m;
          out.alpha.at(tr, tc) += wm;
          out.image.at(0, tr, tc) += wm * sprite.rgb.at(0, sr, sc);
          out.image.at(1, tr, tc) += wm * sprite.rgb.at(1, sr, sc);
          out.image.at(2, tr, tc) += wm * sprite.rgb.at(2, sr, sc);
        }
      }
    }
  }
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double a = out.alpha.at(r, c);
      if (a == 0.0) {
        out.image.at(0, r, c) = background.at(0, r, c);
        out.image.at(1, r, c) = background.at(1, r, c);
        out.image.at(2, r, c) = background.at(2, r, c);
      } else {
        double rest = 1.0 - a;
        out.image.at(0, r, c) += rest * background.at(0, r, c);
        out.image.at(1, r, c) += rest * background.at(1, r, c);
        out.image.at(2, r, c) += rest * background.at(2, r, c);
      }
    }
  }
  return out;
}

double blur_severity(const GridD& alpha, int erosion_radius) {
  const int h = alpha.h;
  const int w = alpha.w;
  std::vector<uint8_t> cur(static_cast<size_t>(h) * w), nxt(cur.size());
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      cur[static_cast<size_t>(r) * w + c] = alpha.at(r, c) > 0.0 ? 1 : 0;

  for (int it = 0; it < erosion_radius; ++it) {
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        uint8_t keep = 1;
        for (int dr = -1; dr <= 1 && keep; ++dr) {
          for (int dc = -1; dc <= 1; ++dc) {
            int rr = r + dr;
            int cc = c + dc;
            if (rr < 0 || rr >= h || cc < 0 || cc >= w ||
                !cur[static_cast<size_t>(rr) * w + cc]) {
              keep = 0;
              break;
            }
          }
        }
        nxt[static_cast<size_t>(r) * w + c] = keep;
      }
    }
    cur.swap(nxt);
  }

  double sum = 0.0;
  int64_t count = 0;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (cur[static_cast<size_t>(r) * w + c]) {
        sum += alpha.at(r, c);
        ++count;
      }
    }
  }
  if (count == 0) throw EmptyErodedMask("blur_severity: eroded support is empty");
  return std::max(0.0, 1.0 - sum / count);
}

int blur_level(double bs) {
  if (!(bs >= 0.0) || bs >= 1.0) {
    throw DomainError("blur_level: bs outside [0,1): " + std::to_string(bs));
  }
  int lvl = static_cast<int>(std::ceil(10.0 * bs));
  return std::max(1, lvl);
}

std::array<double, 4> bbox_from_alpha(const GridD& alpha) {
  int rmin = alpha.h, rmax = -1, cmin = alpha.w, cmax = -1;
  for (int r = 0; r < alpha.h; ++r) {
    for (int c = 0; c < alpha.w; ++c) {
      if (alpha.at(r, c) > 0.0) {
        rmin = std::min(rmin, r);
        rmax = std::max(rmax, r);
        cmin = std::min(cmin, c);
        cmax = std::max(cmax, c);
      }
    }
  }
  if (rmax < 0) throw EmptyAlpha("bbox_from_alpha: alpha has no positive cell");
  const double wd = alpha.w, ht = alpha.h;
  return {cmin / wd, rmin / ht, (cmax - cmin + 1) / wd, (rmax - rmin + 1) / ht};
}

bool accept_sample(const Grid<uint8_t>& mask_at_start,
                   const Grid<uint8_t>& mask_at_end, const GridD& alpha,
                   double min_area_frac, double min_endpoint_iou) {
  if (mask_at_start.h != alpha.h || mask_at_start.w != alpha.w ||
      mask_at_end.h != alpha.h || mask_at_end.w != alpha.w) {
    throw ShapeMismatch("accept_sample: masks must match the frame");
  }
  int64_t area = 0;
  for (double a : alpha.data) area += a > 0.0 ? 1 : 0;
  if (static_cast<double>(area) / (static_cast<double>(alpha.h) * alpha.w) <
      min_area_frac) {
    return false;
  }
  int64_t inter = 0, uni = 0;
  for (size_t i = 0; i < mask_at_start.data.size(); ++i) {
    bool s = mask_at_start.data[i] != 0;
    bool e = mask_at_end.data[i] != 0;
    inter += (s && e) ? 1 : 0;
    uni += (s || e) ? 1 : 0;
  }
  double iou = uni == 0 ? 0.0 : static_cast<double>(inter) / uni;
  return iou >= min_endpoint_iou;
}

}  // namespace blurret
