#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <vector>

#include "blurret/errors.hpp"
#include "blurret/rng.hpp"
#include "blurret/tensor.hpp"

namespace blurret {

template <typename T>
using MatXT = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using VecXT = Eigen::Matrix<T, Eigen::Dynamic, 1>;

struct EncoderConfig {
  std::vector<int> channels{16, 32, 64, 128};
  int stride = 2;             // spatial downsample per stage
  bool norm_disabled = true;  // instance normalization is off by default
};

struct BridgeConfig {
  int c_b = 16;   // blur-estimation head width
  int c_l = 16;   // localization head width
  int c_c = 96;   // classification head width
  int d = 128;    // descriptor dimension
  double gem_p_init = 3.0;
  bool gem_learnable = true;
};

template <typename T>
struct ModelOutput {
  VecXT<T> descriptor;  // D before L2 normalization
  T blur_pred = T(0);   // predicted sharpness in (0,1)
  Eigen::Matrix<T, 4, 1> bbox_pred;
  VecXT<T> f_be, f_loc, f_cls;
};

template <typename T>
struct ParamRef {
  std::string name;
  T* data;
  size_t n;
};

// Generalized-mean pooling of a nonnegative feature map, stabilized by
// factoring out the per-channel maximum:
//   f_c = m_c * (mean_j (x_j/m_c)^p)^(1/p)
// Values are clamped at zero before pooling.
template <typename T>
void gem_pool_impl(const Volume<T>& map, T p, VecXT<T>& f, VecXT<T>& mx,
                   VecXT<T>& g) {
  if (!(p > T(0))) throw DomainError("gem_pool: p must be > 0");
  const int C = map.c;
  const size_t n = static_cast<size_t>(map.h) * map.w;
  f.resize(C);
  mx.resize(C);
  g.resize(C);
  for (int c = 0; c < C; ++c) {
    const T* plane = map.plane(c);
    T m = T(0);
    for (size_t j = 0; j < n; ++j) m = std::max(m, std::max(T(0), plane[j]));
    mx[c] = m;
    if (m <= T(0)) {
      f[c] = T(0);
      g[c] = T(0);
      continue;
    }
    T acc = T(0);
    for (size_t j = 0; j < n; ++j) {
      T x = std::max(T(0), plane[j]);
      if (x > T(0)) acc += std::pow(x / m, p);
    }
    T gg = acc / static_cast<T>(n);
    g[c] = gg;
    f[c] = m * std::exp(std::log(gg) / p);
  }
}

inline Eigen::VectorXd gem_pool(const Volume<double>& map, double p) {
  Eigen::VectorXd f, m, g;
  gem_pool_impl(map, p, f, m, g);
  return f;
}

// Descriptor generator: strided conv encoder, generalized-mean pooling, three
// head projections whose concatenation is projected to the descriptor, plus
// small sigmoid predictors for sharpness and the bounding box.
template <typename T>
class BridgeModel {
 public:
  EncoderConfig enc;
  BridgeConfig br;
  int in_channels = 3;

  std::vector<MatXT<T>> conv_w;  // per stage: cout x (cin*9)
  std::vector<VecXT<T>> conv_b;
  T rho = T(0);  // gem power p = exp(rho)
  MatXT<T> w_be, w_loc, w_cls;  // head projections (bias-free)
  MatXT<T> w_final;             // d x (c_b + c_l + c_c), bias-free
  VecXT<T> w_blur;
  T b_blur = T(0);
  MatXT<T> w_box;  // 4 x c_l
  VecXT<T> b_box;  // 4

  struct StageCache {
    MatXT<T> cols;       // cin*9 x oh*ow
    Volume<T> pre_relu;  // value fed to the nonlinearity
    Volume<T> post;
    VecXT<T> mean, inv_std;  // instance-norm stats (when enabled)
  };

  struct Cache {
    Volume<T> input;
    std::vector<StageCache> stages;
    VecXT<T> gem_max, gem_g, pooled;
    T p = T(0);
    ModelOutput<T> out;
  };

  BridgeModel() = default;
  BridgeModel(const EncoderConfig& e, const BridgeConfig& b) : enc(e), br(b) {
    allocate();
  }

  int feature_channels() const { return enc.channels.back(); }
  int concat_width() const { return br.c_b + br.c_l + br.c_c; }
  int total_stride() const {
    int s = 1;
    for (size_t i = 0; i < enc.channels.size(); ++i) s *= enc.stride;
    return s;
  }

  void allocate() {
    conv_w.clear();
    conv_b.clear();
    int cin = in_channels;
    for (int cout : enc.channels) {
      conv_w.emplace_back(MatXT<T>::Zero(cout, cin * 9));
      conv_b.emplace_back(VecXT<T>::Zero(cout));
      cin = cout;
    }
    const int C = feature_channels();
    w_be = MatXT<T>::Zero(br.c_b, C);
    w_loc = MatXT<T>::Zero(br.c_l, C);
    w_cls = MatXT<T>::Zero(br.c_c, C);
    w_final = MatXT<T>::Zero(br.d, concat_width());
    w_blur = VecXT<T>::Zero(br.c_b);
    b_blur = T(0);
    w_box = MatXT<T>::Zero(4, br.c_l);
    b_box = VecXT<T>::Zero(4);
    rho = static_cast<T>(std::log(br.gem_p_init));
  }

  void init(uint64_t seed) {
    allocate();
    Rng rng = Rng::derive(seed, "model-init");
    auto fill = [&](MatXT<T>& m, double std) {
      for (Eigen::Index i = 0; i < m.size(); ++i)
        m.data()[i] = static_cast<T>(rng.normal(0.0, std));
    };
    auto fillv = [&](VecXT<T>& v, double std) {
      for (Eigen::Index i = 0; i < v.size(); ++i)
        v.data()[i] = static_cast<T>(rng.normal(0.0, std));
    };
    int cin = in_channels;
    for (size_t s = 0; s < conv_w.size(); ++s) {
      fill(conv_w[s], std::sqrt(2.0 / (cin * 9)));
      conv_b[s].setZero();
      cin = enc.channels[s];
    }
    const int C = feature_channels();
    fill(w_be, std::sqrt(1.0 / C));
    fill(w_loc, std::sqrt(1.0 / C));
    fill(w_cls, std::sqrt(1.0 / C));
    fill(w_final, std::sqrt(1.0 / concat_width()));
    fillv(w_blur, std::sqrt(1.0 / br.c_b));
    b_blur = T(0);
    fill(w_box, std::sqrt(1.0 / br.c_l));
    b_box.setZero();
  }

  void zero() {
    for (auto& m : conv_w) m.setZero();
    for (auto& v : conv_b) v.setZero();
    rho = T(0);
    w_be.setZero();
    w_loc.setZero();
    w_cls.setZero();
    w_final.setZero();
    w_blur.setZero();
    b_blur = T(0);
    w_box.setZero();
    b_box.setZero();
  }

  std::vector<ParamRef<T>> params() {
    std::vector<ParamRef<T>> out;
    for (size_t s = 0; s < conv_w.size(); ++s) {
      out.push_back({"enc" + std::to_string(s) + ".w", conv_w[s].data(),
                     static_cast<size_t>(conv_w[s].size())});
      out.push_back({"enc" + std::to_string(s) + ".b", conv_b[s].data(),
                     static_cast<size_t>(conv_b[s].size())});
    }
    out.push_back({"gem.rho", &rho, 1});
    out.push_back({"head.w_be", w_be.data(), static_cast<size_t>(w_be.size())});
    out.push_back({"head.w_loc", w_loc.data(), static_cast<size_t>(w_loc.size())});
    out.push_back({"head.w_cls", w_cls.data(), static_cast<size_t>(w_cls.size())});
    out.push_back({"head.w_final", w_final.data(), static_cast<size_t>(w_final.size())});
    out.push_back({"pred.w_blur", w_blur.data(), static_cast<size_t>(w_blur.size())});
    out.push_back({"pred.b_blur", &b_blur, 1});
    out.push_back({"pred.w_box", w_box.data(), static_cast<size_t>(w_box.size())});
    out.push_back({"pred.b_box", b_box.data(), static_cast<size_t>(b_box.size())});
    return out;
  }

  // -- forward ------------------------------------------------------------

  const Volume<T>& encode(const Volume<T>& input, Cache& cache) const {
    if (input.c != in_channels)
      throw ShapeError("encode: expected " + std::to_string(in_channels) +
                       " channels, got " + std::to_string(input.c));
    if (input.h % total_stride() != 0 || input.w % total_stride() != 0)
      throw ShapeError("encode: input " + std::to_string(input.h) + "x" +
                       std::to_string(input.w) + " not divisible by stride " +
                       std::to_string(total_stride()));
    cache.input = input;
    cache.stages.assign(conv_w.size(), {});
    const Volume<T>* cur = &cache.input;
    for (size_t s = 0; s < conv_w.size(); ++s) {
      StageCache& sc = cache.stages[s];
      conv_forward(*cur, conv_w[s], conv_b[s], enc.stride, sc.cols, sc.pre_relu);
      if (!enc.norm_disabled) instance_norm_forward(sc);
      sc.post = sc.pre_relu;
      for (auto& v : sc.post.data) v = std::max(T(0), v);
      cur = &sc.post;
    }
    return cache.stages.back().post;
  }

  void pool(Cache& cache) const {
    cache.p = std::exp(rho);
    gem_pool_impl(cache.stages.back().post, cache.p, cache.pooled,
                  cache.gem_max, cache.gem_g);
  }

  void bridge(Cache& cache) const {
    const VecXT<T>& f = cache.pooled;
    ModelOutput<T>& o = cache.out;
    o.f_be = w_be * f;
    o.f_loc = w_loc * f;
    o.f_cls = w_cls * f;
    VecXT<T> h(concat_width());
    h << o.f_be, o.f_loc, o.f_cls;
    o.descriptor = w_final * h;
    T a_blur = w_blur.dot(o.f_be) + b_blur;
    o.blur_pred = T(1) / (T(1) + std::exp(-a_blur));
    Eigen::Matrix<T, 4, 1> a_box = w_box * o.f_loc + b_box;
    for (int i = 0; i < 4; ++i)
      o.bbox_pred[i] = T(1) / (T(1) + std::exp(-a_box[i]));
  }

  ModelOutput<T> forward(const Volume<T>& input, Cache& cache) const {
    encode(input, cache);
    pool(cache);
    bridge(cache);
    return cache.out;
  }

  VecXT<T> embed(const Volume<T>& input) const {
    Cache cache;
    forward(input, cache);
    VecXT<T> d = cache.out.descriptor;
    T norm = d.norm();
    if (!(norm > T(1e-12)))
      throw DegenerateDescriptor("embed: descriptor norm " + std::to_string(norm));
    return d / norm;
  }

  MatXT<T> embed_batch(const std::vector<Volume<T>>& images) const {
    MatXT<T> out(images.size(), br.d);
    for (size_t i = 0; i < images.size(); ++i)
      out.row(i) = embed(images[i]).transpose();
    return out;
  }

  // -- backward -----------------------------------------------------------

  // Accumulates parameter gradients into `grad` (a zeroed model of the same
  // shape) given loss gradients with respect to the descriptor and the two
  // auxiliary predictions.
  void backward(const Cache& cache, const VecXT<T>& d_descriptor, T d_blur,
                const Eigen::Matrix<T, 4, 1>& d_bbox, BridgeModel<T>& grad) const {
    const ModelOutput<T>& o = cache.out;
    const VecXT<T>& f = cache.pooled;

    T s_blur = o.blur_pred;
    T da_blur = d_blur * s_blur * (T(1) - s_blur);
    grad.w_blur += da_blur * o.f_be;
    grad.b_blur += da_blur;

    Eigen::Matrix<T, 4, 1> da_box;
    for (int i = 0; i < 4; ++i) {
      T s = o.bbox_pred[i];
      da_box[i] = d_bbox[i] * s * (T(1) - s);
    }
    grad.w_box += da_box * o.f_loc.transpose();
    grad.b_box += da_box;

    VecXT<T> h(concat_width());
    h << o.f_be, o.f_loc, o.f_cls;
    grad.w_final += d_descriptor * h.transpose();
    VecXT<T> dh = w_final.transpose() * d_descriptor;

    VecXT<T> df_be = dh.head(br.c_b) + da_blur * w_blur;
    VecXT<T> df_loc = dh.segment(br.c_b, br.c_l) + w_box.transpose() * da_box;
    VecXT<T> df_cls = dh.tail(br.c_c);

    grad.w_be += df_be * f.transpose();
    grad.w_loc += df_loc * f.transpose();
    grad.w_cls += df_cls * f.transpose();

    VecXT<T> df = w_be.transpose() * df_be + w_loc.transpose() * df_loc +
                  w_cls.transpose() * df_cls;

    Volume<T> dmap(feature_channels(), cache.stages.back().post.h,
                   cache.stages.back().post.w, T(0));
    gem_backward(cache, df, dmap, grad);
    encoder_backward(cache, dmap, grad);
  }

 private:
  static void conv_forward(const Volume<T>& in, const MatXT<T>& w,
                           const VecXT<T>& b, int stride, MatXT<T>& cols,
                           Volume<T>& out) {
    const int cin = in.c, ih = in.h, iw = in.w;
    const int oh = ih / stride, ow = iw / stride;
    const int cout = static_cast<int>(w.rows());
    cols.resize(cin * 9, oh * ow);
    for (int orow = 0; orow < oh; ++orow) {
      for (int ocol = 0; ocol < ow; ++ocol) {
        const int col_idx = orow * ow + ocol;
        for (int ci = 0; ci < cin; ++ci) {
          for (int kr = 0; kr < 3; ++kr) {
            const int ir = orow * stride + kr - 1;
            for (int kc = 0; kc < 3; ++kc) {
              const int ic = ocol * stride + kc - 1;
              T v = T(0);
              if (ir >= 0 && ir < ih && ic >= 0 && ic < iw) v = in.at(ci, ir, ic);
              cols(ci * 9 + kr * 3 + kc, col_idx) = v;
            }
          }
        }
      }
    }
    MatXT<T> y = w * cols;
    y.colwise() += b;
    out = Volume<T>(cout, oh, ow);
    for (int co = 0; co < cout; ++co)
      for (int j = 0; j < oh * ow; ++j) out.plane(co)[j] = y(co, j);
  }

  void instance_norm_forward(StageCache& sc) const {
    const int C = sc.pre_relu.c;
    const int n = sc.pre_relu.h * sc.pre_relu.w;
    sc.mean.resize(C);
    sc.inv_std.resize(C);
    for (int c = 0; c < C; ++c) {
      T* p = sc.pre_relu.plane(c);
      T mu = T(0);
      for (int j = 0; j < n; ++j) mu += p[j];
      mu /= static_cast<T>(n);
      T var = T(0);
      for (int j = 0; j < n; ++j) var += (p[j] - mu) * (p[j] - mu);
      var /= static_cast<T>(n);
      T is = T(1) / std::sqrt(var + T(1e-5));
      sc.mean[c] = mu;
      sc.inv_std[c] = is;
      for (int j = 0; j < n; ++j) p[j] = (p[j] - mu) * is;
    }
  }

  void gem_backward(const Cache& cache, const VecXT<T>& df, Volume<T>& dmap,
                    BridgeModel<T>& grad) const {
    const Volume<T>& map = cache.stages.back().post;
    const int C = map.c;
    const size_t n = static_cast<size_t>(map.h) * map.w;
    const T p = cache.p;
    T dp = T(0);
    for (int c = 0; c < C; ++c) {
      T m = cache.gem_max[c];
      if (m <= T(0)) continue;
      T g = cache.gem_g[c];
      const T* plane = map.plane(c);
      T* dplane = dmap.plane(c);
      T gpow = std::exp((T(1) - p) / p * std::log(g));  // g^((1-p)/p)
      T s_ln = T(0);
      for (size_t j = 0; j < n; ++j) {
        T x = std::max(T(0), plane[j]);
        if (x <= T(0)) continue;
        T r = x / m;
        dplane[j] += df[c] * std::pow(r, p - T(1)) * gpow / static_cast<T>(n);
        if (r < T(1)) s_ln += std::pow(r, p) * std::log(r);
      }
      T f_c = cache.pooled[c];
      dp += df[c] * f_c *
            (-std::log(g) / (p * p) + s_ln / (static_cast<T>(n) * p * g));
    }
    if (br.gem_learnable) grad.rho += dp * p;
  }

  void encoder_backward(const Cache& cache, const Volume<T>& dlast,
                        BridgeModel<T>& grad) const {
    Volume<T> dpost = dlast;
    for (int s = static_cast<int>(conv_w.size()) - 1; s >= 0; --s) {
      const StageCache& sc = cache.stages[s];
      const int n = sc.pre_relu.h * sc.pre_relu.w;
      const int cout = sc.pre_relu.c;
      // through ReLU
      Volume<T> dpre = dpost;
      for (size_t i = 0; i < dpre.data.size(); ++i)
        if (sc.pre_relu.data[i] <= T(0)) dpre.data[i] = T(0);
      // through instance norm
      if (!enc.norm_disabled) {
        for (int c = 0; c < cout; ++c) {
          const T* xh = sc.pre_relu.plane(c);  // normalized values
          T* dx = dpre.plane(c);
          T mean_d = T(0), mean_dx = T(0);
          for (int j = 0; j < n; ++j) {
            mean_d += dx[j];
            mean_dx += dx[j] * xh[j];
          }
          mean_d /= static_cast<T>(n);
          mean_dx /= static_cast<T>(n);
          for (int j = 0; j < n; ++j)
            dx[j] = sc.inv_std[c] * (dx[j] - mean_d - xh[j] * mean_dx);
        }
      }
      // through the convolution
      MatXT<T> dy(cout, n);
      for (int co = 0; co < cout; ++co)
        for (int j = 0; j < n; ++j) dy(co, j) = dpre.plane(co)[j];
      grad.conv_b[s] += dy.rowwise().sum();
      grad.conv_w[s] += dy * sc.cols.transpose();
      MatXT<T> dcols = conv_w[s].transpose() * dy;
      const Volume<T>& in = s == 0 ? cache.input : cache.stages[s - 1].post;
      Volume<T> din(in.c, in.h, in.w, T(0));
      col2im(dcols, enc.stride, din);
      dpost = std::move(din);
    }
  }

  static void col2im(const MatXT<T>& dcols, int stride, Volume<T>& din) {
    const int cin = din.c, ih = din.h, iw = din.w;
    const int oh = ih / stride, ow = iw / stride;
    for (int orow = 0; orow < oh; ++orow) {
      for (int ocol = 0; ocol < ow; ++ocol) {
        const int col_idx = orow * ow + ocol;
        for (int ci = 0; ci < cin; ++ci) {
          for (int kr = 0; kr < 3; ++kr) {
            const int ir = orow * stride + kr - 1;
            if (ir < 0 || ir >= ih) continue;
            for (int kc = 0; kc < 3; ++kc) {
              const int ic = ocol * stride + kc - 1;
              if (ic < 0 || ic >= iw) continue;
              din.at(ci, ir, ic) += dcols(ci * 9 + kr * 3 + kc, col_idx);
            }
          }
        }
      }
    }
  }
};

// PCA-whitening initialization for the classification projection from a
// sample of pooled features (one row per image). Uses the uncentered second
// moment because the projection is bias-free. Rows beyond the feature rank
// keep their random initialization.
template <typename T>
void whiten_init_cls(BridgeModel<T>& model, const MatXT<T>& features) {
  const int C = model.feature_channels();
  if (features.cols() != C) throw ShapeError("whiten_init_cls: feature width");
  Eigen::MatrixXd f = features.template cast<double>();
  Eigen::MatrixXd second = (f.transpose() * f) / std::max<double>(1.0, f.rows());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(second);
  if (es.info() != Eigen::Success) throw DomainError("whiten_init_cls: eig failed");
  const int k = std::min<int>(model.br.c_c, C);
  for (int i = 0; i < k; ++i) {
    // eigenvalues ascending; take the largest first
    int src = C - 1 - i;
    double lam = std::max(0.0, es.eigenvalues()[src]);
    Eigen::VectorXd row = es.eigenvectors().col(src) / std::sqrt(lam + 1e-8);
    for (int j = 0; j < C; ++j) model.w_cls(i, j) = static_cast<T>(row[j]);
  }
}

}  // namespace blurret
