#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "blurret/errors.hpp"

namespace blurret {

// Row-major H x W grid of scalars. Small and dumb on purpose: the heavy
// lifting happens through Eigen maps over `data`.
template <typename T>
struct Grid {
  int h = 0;
  int w = 0;
  std::vector<T> data;

  Grid() = default;
  Grid(int h_, int w_, T fill = T(0)) : h(h_), w(w_), data(static_cast<size_t>(h_) * w_, fill) {}

  T& at(int r, int c) { return data[static_cast<size_t>(r) * w + c]; }
  const T& at(int r, int c) const { return data[static_cast<size_t>(r) * w + c]; }

  size_t size() const { return data.size(); }
  bool same_shape(const Grid& o) const { return h == o.h && w == o.w; }

  void require_shape(const Grid& o, const std::string& what) const {
    if (!same_shape(o)) {
      throw ShapeMismatch(what + ": " + std::to_string(h) + "x" + std::to_string(w) +
                          " vs " + std::to_string(o.h) + "x" + std::to_string(o.w));
    }
  }
};

using GridF = Grid<float>;
using GridD = Grid<double>;

// Row-major C x H x W volume (channel-major planes).
template <typename T>
struct Volume {
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<T> data;

  Volume() = default;
  Volume(int c_, int h_, int w_, T fill = T(0))
      : c(c_), h(h_), w(w_), data(static_cast<size_t>(c_) * h_ * w_, fill) {}

  T& at(int ch, int r, int col) {
    return data[(static_cast<size_t>(ch) * h + r) * w + col];
  }
  const T& at(int ch, int r, int col) const {
    return data[(static_cast<size_t>(ch) * h + r) * w + col];
  }

  T* plane(int ch) { return data.data() + static_cast<size_t>(ch) * h * w; }
  const T* plane(int ch) const { return data.data() + static_cast<size_t>(ch) * h * w; }

  size_t size() const { return data.size(); }
};

template <typename To, typename From>
Volume<To> cast_volume(const Volume<From>& v) {
  Volume<To> out(v.c, v.h, v.w);
  for (size_t i = 0; i < v.data.size(); ++i) out.data[i] = static_cast<To>(v.data[i]);
  return out;
}

template <typename To, typename From>
Grid<To> cast_grid(const Grid<From>& g) {
  Grid<To> out(g.h, g.w);
  for (size_t i = 0; i < g.data.size(); ++i) out.data[i] = static_cast<To>(g.data[i]);
  return out;
}

}  // namespace blurret
