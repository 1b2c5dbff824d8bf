#include "blurret/losses.hpp"

#include <algorithm>
#include <cmath>

#include "blurret/errors.hpp"

namespace blurret {

namespace {

constexpr double kCosEps = 1e-7;

Eigen::VectorXd normalize_checked(const Eigen::VectorXd& v, const char* what) {
  double n = v.norm();
  if (!(n > 1e-12)) {
    throw DegenerateDescriptor(std::string(what) + ": norm " + std::to_string(n));
  }
  return v / n;
}

// d(loss)/d(raw) from d(loss)/d(unit): project out the radial component and
// divide by the norm.
Eigen::VectorXd through_normalization(const Eigen::VectorXd& raw,
                                      const Eigen::VectorXd& unit,
                                      const Eigen::VectorXd& d_unit) {
  double n = raw.norm();
  return (d_unit - unit.dot(d_unit) * unit) / n;
}

// Shared core for the margin-softmax loss; gradients are optional.
double arcface_core(const Eigen::VectorXd& descriptor,
                    const ArcFaceParams& params, int target,
                    Eigen::VectorXd* d_descriptor, Eigen::MatrixXd* d_w) {
  const int n_cls = static_cast<int>(params.w.cols());
  if (target < 0 || target >= n_cls)
    throw DomainError("classification_loss: target out of range");
  Eigen::VectorXd d_hat = normalize_checked(descriptor, "classification_loss descriptor");

  Eigen::VectorXd col_norms(n_cls), s(n_cls), z(n_cls);
  Eigen::MatrixXd w_hat(params.w.rows(), n_cls);
  for (int n = 0; n < n_cls; ++n) {
    double cn = params.w.col(n).norm();
    if (!(cn > 1e-12))
      throw DegenerateDescriptor("classification_loss: class column " +
                                 std::to_string(n) + " is degenerate");
    col_norms[n] = cn;
    w_hat.col(n) = params.w.col(n) / cn;
    s[n] = w_hat.col(n).dot(d_hat);
    z[n] = params.gamma * arcface_adjust(s[n], n == target ? 1 : 0, params.m);
  }

  double zmax = z.maxCoeff();
  double sum = 0.0;
  for (int n = 0; n < n_cls; ++n) sum += std::exp(z[n] - zmax);
  double lse = zmax + std::log(sum);
  double loss = lse - z[target];

  if (!d_descriptor) return loss;

  Eigen::VectorXd dz(n_cls);
  for (int n = 0; n < n_cls; ++n)
    dz[n] = std::exp(z[n] - zmax) / sum - (n == target ? 1.0 : 0.0);

  Eigen::VectorXd d_dhat = Eigen::VectorXd::Zero(descriptor.size());
  for (int n = 0; n < n_cls; ++n) {
    double dz_ds;
    if (n == target) {
      double sc = std::clamp(s[n], -1.0 + kCosEps, 1.0 - kCosEps);
      if (s[n] <= -1.0 + kCosEps || s[n] >= 1.0 - kCosEps) {
        dz_ds = 0.0;  // clamped: locally flat in s
      } else {
        double theta = std::acos(sc);
        dz_ds = params.gamma * std::sin(theta + params.m) /
                std::sqrt(1.0 - sc * sc);
      }
    } else {
      dz_ds = params.gamma;
    }
    double ds = dz[n] * dz_ds;
    d_dhat += ds * w_hat.col(n);
    if (d_w) {
      Eigen::VectorXd d_what = ds * d_hat;
      d_w->col(n) += (d_what - w_hat.col(n).dot(d_what) * w_hat.col(n)) / col_norms[n];
    }
  }
  *d_descriptor = through_normalization(descriptor, d_hat, d_dhat);
  return loss;
}

// Pair loss on raw descriptors, with gradients pushed back through the
// normalization. Gradients are scaled by `scale` and accumulated.
double pair_loss_raw(const Eigen::VectorXd& raw_i, const Eigen::VectorXd& raw_j,
                     int match, double tau, double scale,
                     Eigen::VectorXd* d_raw_i, Eigen::VectorXd* d_raw_j) {
  Eigen::VectorXd ui = normalize_checked(raw_i, "contrastive descriptor");
  Eigen::VectorXd uj = normalize_checked(raw_j, "contrastive descriptor");
  Eigen::VectorXd diff = ui - uj;
  double dist = diff.norm();
  double loss;
  Eigen::VectorXd d_ui = Eigen::VectorXd::Zero(ui.size());
  if (match) {
    loss = 0.5 * dist * dist;
    d_ui = diff;
  } else {
    double hinge = tau - dist;
    if (hinge <= 0.0) return 0.0;
    loss = 0.5 * hinge * hinge;
    if (dist > 0.0) d_ui = -(hinge / dist) * diff;
    // dist == 0 sits on the kink; keep the zero subgradient.
  }
  if (d_raw_i) {
    *d_raw_i += scale * through_normalization(raw_i, ui, d_ui);
    *d_raw_j += scale * through_normalization(raw_j, uj, (-d_ui).eval());
  }
  return loss;
}

}  // namespace

double blur_estimation_loss(double pred, double bs) {
  return std::fabs(pred - (1.0 - bs));
}

double blur_estimation_loss_grad(double pred, double bs, double& d_pred) {
  double diff = pred - (1.0 - bs);
  d_pred = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
  return std::fabs(diff);
}

double localization_loss(const Eigen::Vector4d& pred, const Eigen::Vector4d& gt) {
  return (pred - gt).cwiseAbs().sum();
}

double localization_loss_grad(const Eigen::Vector4d& pred,
                              const Eigen::Vector4d& gt,
                              Eigen::Vector4d& d_pred) {
  for (int i = 0; i < 4; ++i) {
    double diff = pred[i] - gt[i];
    d_pred[i] = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
  }
  return (pred - gt).cwiseAbs().sum();
}

double arcface_adjust(double s, int is_target, double m) {
  if (!is_target) return s;
  double sc = std::clamp(s, -1.0 + kCosEps, 1.0 - kCosEps);
  return std::cos(std::acos(sc) + m);
}

double classification_loss(const Eigen::VectorXd& descriptor,
                           const ArcFaceParams& params, int target) {
  return arcface_core(descriptor, params, target, nullptr, nullptr);
}

double classification_loss_grad(const Eigen::VectorXd& descriptor,
                                const ArcFaceParams& params, int target,
                                Eigen::VectorXd& d_descriptor,
                                Eigen::MatrixXd& d_w) {
  return arcface_core(descriptor, params, target, &d_descriptor, &d_w);
}

double contrastive_loss(const Eigen::VectorXd& di_hat,
                        const Eigen::VectorXd& dj_hat, int match, double tau) {
  double dist = (di_hat - dj_hat).norm();
  if (match) return 0.5 * dist * dist;
  double hinge = tau - dist;
  return hinge > 0.0 ? 0.5 * hinge * hinge : 0.0;
}

JointLossValue joint_loss(const std::vector<TupleImage>& tuple, int n_p,
                          const ArcFaceParams& params, const LossWeights& w,
                          double tau) {
  std::vector<TupleImageGrad> unused;
  Eigen::MatrixXd d_w;
  return joint_loss_grad(tuple, n_p, params, w, tau, unused, d_w);
}

JointLossValue joint_loss_grad(const std::vector<TupleImage>& tuple, int n_p,
                               const ArcFaceParams& params,
                               const LossWeights& w, double tau,
                               std::vector<TupleImageGrad>& grads,
                               Eigen::MatrixXd& d_w) {
  const int n_img = static_cast<int>(tuple.size());
  if (n_img < 1 || n_p < 0 || n_p >= n_img)
    throw DomainError("joint_loss: tuple must hold a query plus samples");
  const int n_pairs = n_img - 1;

  grads.assign(n_img, {});
  for (int i = 0; i < n_img; ++i)
    grads[i].d_descriptor = Eigen::VectorXd::Zero(tuple[i].descriptor.size());
  if (d_w.rows() != params.w.rows() || d_w.cols() != params.w.cols())
    d_w = Eigen::MatrixXd::Zero(params.w.rows(), params.w.cols());

  JointLossValue out;

  if (n_pairs > 0) {
    const double pair_scale = 1.0 / n_pairs;
    for (int i = 1; i < n_img; ++i) {
      int match = i <= n_p ? 1 : 0;
      out.l_con += pair_scale *
                   pair_loss_raw(tuple[0].descriptor, tuple[i].descriptor, match,
                                 tau, pair_scale, &grads[0].d_descriptor,
                                 &grads[i].d_descriptor);
    }
  }

  const double img_scale = 1.0 / n_img;
  for (int i = 0; i < n_img; ++i) {
    const TupleImage& im = tuple[i];

    Eigen::VectorXd d_desc;
    Eigen::MatrixXd d_w_img = Eigen::MatrixXd::Zero(params.w.rows(), params.w.cols());
    out.l_cls += img_scale *
                 classification_loss_grad(im.descriptor, params, im.label,
                                          d_desc, d_w_img);
    grads[i].d_descriptor += w.alpha_cls * img_scale * d_desc;
    d_w += w.alpha_cls * img_scale * d_w_img;

    double d_blur;
    out.l_be += img_scale * blur_estimation_loss_grad(im.blur_pred, im.bs, d_blur);
    grads[i].d_blur += w.alpha_be * img_scale * d_blur;

    Eigen::Vector4d d_box;
    out.l_loc += img_scale * localization_loss_grad(im.bbox_pred, im.bbox_gt, d_box);
    grads[i].d_bbox += w.alpha_loc * img_scale * d_box;
  }

  out.total = out.l_con + w.alpha_cls * out.l_cls + w.alpha_be * out.l_be +
              w.alpha_loc * out.l_loc;
  return out;
}

}  // namespace blurret
