#include <doctest.h>

#include <cmath>
#include <vector>

#include "blurret/errors.hpp"
#include "blurret/losses.hpp"
#include "blurret/rng.hpp"
#include "oracles.hpp"

using namespace blurret;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(v.size());
  int i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

ArcFaceParams random_arcface(int d, int classes, uint64_t seed,
                             double m = 0.15, double gamma = 30.0) {
  ArcFaceParams p;
  p.w = Eigen::MatrixXd(d, classes);
  p.m = m;
  p.gamma = gamma;
  Rng rng(seed);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < classes; ++j) p.w(i, j) = rng.normal(0.0, 1.0);
  }
  return p;
}

Eigen::VectorXd random_vec(int d, uint64_t seed) {
  Eigen::VectorXd v(d);
  Rng rng(seed);
  for (int i = 0; i < d; ++i) v[i] = rng.normal(0.0, 1.0);
  return v;
}

}  // namespace

TEST_SUITE_BEGIN("losses");

TEST_CASE("blur estimation: absolute error against inverted severity") {
  CHECK(blur_estimation_loss(0.9, 0.3) == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(blur_estimation_loss(0.5, 0.3) == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(blur_estimation_loss(0.7, 0.3) == doctest::Approx(0.0).epsilon(1e-15));
  // A perfect predictor outputs sharpness 1 - bs.
  CHECK(blur_estimation_loss(1.0, 0.0) == 0.0);

  double g = 0.0;
  CHECK(blur_estimation_loss_grad(0.9, 0.3, g) ==
        doctest::Approx(0.2).epsilon(1e-15));
  CHECK(g == 1.0);
  blur_estimation_loss_grad(0.5, 0.3, g);
  CHECK(g == -1.0);
  blur_estimation_loss_grad(0.7, 0.3, g);
  CHECK(g == 0.0);  // kink: zero subgradient
}

TEST_CASE("localization: coordinate-wise absolute error and subgradients") {
  Eigen::Vector4d pred(0.1, 0.2, 0.3, 0.4);
  Eigen::Vector4d gt(0.2, 0.0, 0.3, 0.8);
  CHECK(localization_loss(pred, gt) == doctest::Approx(0.7).epsilon(1e-15));

  Eigen::Vector4d g;
  CHECK(localization_loss_grad(pred, gt, g) ==
        doctest::Approx(0.7).epsilon(1e-15));
  CHECK(g[0] == -1.0);
  CHECK(g[1] == 1.0);
  CHECK(g[2] == 0.0);
  CHECK(g[3] == -1.0);
}

TEST_CASE("margin adjustment: identity off-target, rotated cosine on-target") {
  CHECK(arcface_adjust(0.37, 0, 0.15) == 0.37);
  CHECK(arcface_adjust(0.5, 1, 0.15) ==
        doctest::Approx(std::cos(std::acos(0.5) + 0.15)).epsilon(1e-15));
  // Margin zero keeps the cosine (inside the clamp range).
  CHECK(arcface_adjust(0.5, 1, 0.0) == doctest::Approx(0.5).epsilon(1e-12));
  // Cosines at the edge are clamped before acos, so no NaN leaks out.
  CHECK(std::isfinite(arcface_adjust(1.0, 1, 0.15)));
  CHECK(std::isfinite(arcface_adjust(-1.0, 1, 0.15)));
  CHECK(arcface_adjust(1.0, 1, 0.15) ==
        doctest::Approx(std::cos(0.15)).epsilon(1e-3));
}

TEST_CASE("classification: two-class closed form") {
  // Orthonormal class directions, cosines 0.6 to the target and 0.8 to the
  // other class: the loss is the two-class logistic form
  // log(1 + exp(g*s_other - g*cos(acos(0.6) + m))).
  ArcFaceParams p;
  p.w = Eigen::MatrixXd::Identity(2, 2);
  p.m = 0.15;
  p.gamma = 30.0;
  Eigen::VectorXd d = vec({0.6, 0.8});
  double zt = 30.0 * std::cos(std::acos(0.6) + 0.15);
  double zn = 30.0 * 0.8;
  double expected = std::log1p(std::exp(zn - zt));
  CHECK(classification_loss(d, p, 0) ==
        doctest::Approx(expected).epsilon(1e-12));

  // The margin must hurt: same geometry without it scores lower.
  ArcFaceParams p0 = p;
  p0.m = 0.0;
  CHECK(classification_loss(d, p, 0) > classification_loss(d, p0, 0));
}

TEST_CASE("classification: zero margin reduces to softmax cross entropy") {
  for (int trial = 0; trial < 100; ++trial) {
    auto p = random_arcface(8, 5, 9000 + trial, 0.0, 30.0);
    auto d = random_vec(8, 9500 + trial);
    int target = trial % 5;

    // Naive reference: softmax cross entropy over scaled cosines.
    Eigen::VectorXd dn = d / d.norm();
    Eigen::VectorXd z(5);
    for (int j = 0; j < 5; ++j) {
      z[j] = p.gamma * (p.w.col(j) / p.w.col(j).norm()).dot(dn);
    }
    double denom = 0.0;
    for (int j = 0; j < 5; ++j) denom += std::exp(z[j]);
    double reference = -std::log(std::exp(z[target]) / denom);

    CHECK(std::abs(classification_loss(d, p, target) - reference) <= 1e-6);
  }
}

TEST_CASE("classification: invariant to descriptor and column scaling") {
  auto p = random_arcface(6, 4, 77);
  auto d = random_vec(6, 78);
  double base = classification_loss(d, p, 2);

  CHECK(std::abs(classification_loss(3.7 * d, p, 2) - base) <= 1e-9);
  CHECK(std::abs(classification_loss(0.004 * d, p, 2) - base) <= 1e-9);

  ArcFaceParams scaled = p;
  scaled.w.col(0) *= 2.0;
  scaled.w.col(3) *= 0.5;
  CHECK(std::abs(classification_loss(d, scaled, 2) - base) <= 1e-9);
}

TEST_CASE("classification: rejects bad targets and degenerate inputs") {
  auto p = random_arcface(4, 3, 5);
  auto d = random_vec(4, 6);
  CHECK_THROWS_AS(classification_loss(d, p, -1), DomainError);
  CHECK_THROWS_AS(classification_loss(d, p, 3), DomainError);
  CHECK_THROWS_AS(classification_loss(Eigen::VectorXd::Zero(4), p, 0),
                  DegenerateDescriptor);
  ArcFaceParams zero_col = p;
  zero_col.w.col(1).setZero();
  CHECK_THROWS_AS(classification_loss(d, zero_col, 0), DegenerateDescriptor);
}

TEST_CASE("classification: gradients match finite differences") {
  auto p = random_arcface(6, 4, 1234);
  auto d = random_vec(6, 1235);
  const int target = 1;

  Eigen::VectorXd d_desc;
  Eigen::MatrixXd d_w = Eigen::MatrixXd::Zero(6, 4);
  classification_loss_grad(d, p, target, d_desc, d_w);

  int probes = 0;
  for (int i = 0; i < 6; ++i) {
    auto f = [&]() { return classification_loss(d, p, target); };
    double fd = oracle::central_diff(f, &d[i], 1e-6);
    CHECK(oracle::rel_err(d_desc[i], fd) <= 1e-3);
    ++probes;
  }
  Rng pick(42);
  for (int t = 0; t < 12; ++t) {
    int i = int(pick.uniform_int(0, 5));
    int j = int(pick.uniform_int(0, 3));
    auto f = [&]() { return classification_loss(d, p, target); };
    double fd = oracle::central_diff(f, &p.w(i, j), 1e-6);
    CHECK(oracle::rel_err(d_w(i, j), fd) <= 1e-3);
    ++probes;
  }
  CHECK(probes >= 10);
}

TEST_CASE("contrastive: closed forms on unit descriptors") {
  Eigen::VectorXd e1 = vec({1, 0, 0});
  Eigen::VectorXd e2 = vec({0, 1, 0});

  // Matching pair at distance sqrt(2): 0.5 * 2 = 1.
  CHECK(contrastive_loss(e1, e2, 1) == doctest::Approx(1.0).epsilon(1e-15));
  // Matching identical pair costs nothing.
  CHECK(contrastive_loss(e1, e1, 1) == 0.0);

  // Non-matching identical pair: full hinge, 0.5 * 0.7^2 = 0.245.
  CHECK(std::abs(contrastive_loss(e1, e1, 0) - 0.245) <= 1e-15);
  // Non-matching pair beyond the margin costs nothing (sqrt(2) > 0.7).
  CHECK(contrastive_loss(e1, e2, 0) == 0.0);

  // Non-matching pair at distance 0.5: 0.5 * 0.2^2 = 0.02.
  Eigen::VectorXd a = vec({1, 0, 0});
  double c = 1.0 - 0.125;  // cos(theta) giving chord 0.5: d^2 = 2 - 2cos
  Eigen::VectorXd b = vec({c, std::sqrt(1 - c * c), 0});
  CHECK(contrastive_loss(a, b, 0) == doctest::Approx(0.02).epsilon(1e-12));

  // A custom margin changes the hinge.
  CHECK(contrastive_loss(e1, e1, 0, 1.0) ==
        doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("joint: reduction arithmetic over a 1+1+2 tuple") {
  // Hand-assembled tuple in 3-d descriptor space. All aux predictions are
  // chosen away from kinks.
  ArcFaceParams p = random_arcface(3, 4, 20);
  LossWeights w;  // defaults: 0.1 / 1.0 / 10.0
  const double tau = 0.7;

  std::vector<TupleImage> tuple(4);
  auto fill = [&](int i, std::initializer_list<double> desc, double blur_pred,
                  double bs, int label) {
    tuple[i].descriptor = vec(desc);
    tuple[i].blur_pred = blur_pred;
    tuple[i].bs = bs;
    tuple[i].bbox_pred = Eigen::Vector4d(0.3, 0.4, 0.2, 0.1);
    tuple[i].bbox_gt = Eigen::Vector4d(0.5, 0.1, 0.2, 0.35);
    tuple[i].label = label;
  };
  fill(0, {1.0, 0.2, -0.4}, 0.8, 0.1, 0);
  fill(1, {0.9, 0.3, -0.2}, 0.6, 0.2, 0);
  fill(2, {-0.5, 0.8, 0.1}, 0.4, 0.5, 1);
  fill(3, {0.2, -0.9, 0.7}, 0.3, 0.9, 2);

  auto value = joint_loss(tuple, 1, p, w, tau);

  // Expected pair term: mean over the three (query, sample) pairs.
  auto unit = [](const Eigen::VectorXd& v) {
    return Eigen::VectorXd(v / v.norm());
  };
  double expect_con = (contrastive_loss(unit(tuple[0].descriptor),
                                        unit(tuple[1].descriptor), 1, tau) +
                       contrastive_loss(unit(tuple[0].descriptor),
                                        unit(tuple[2].descriptor), 0, tau) +
                       contrastive_loss(unit(tuple[0].descriptor),
                                        unit(tuple[3].descriptor), 0, tau)) /
                      3.0;
  CHECK(value.l_con == doctest::Approx(expect_con).epsilon(1e-12));

  // Aux terms: mean over all four images.
  double expect_cls = 0.0, expect_be = 0.0, expect_loc = 0.0;
  for (const auto& im : tuple) {
    expect_cls += classification_loss(im.descriptor, p, im.label) / 4.0;
    expect_be += blur_estimation_loss(im.blur_pred, im.bs) / 4.0;
    expect_loc += localization_loss(im.bbox_pred, im.bbox_gt) / 4.0;
  }
  CHECK(value.l_cls == doctest::Approx(expect_cls).epsilon(1e-12));
  CHECK(value.l_be == doctest::Approx(expect_be).epsilon(1e-12));
  CHECK(value.l_loc == doctest::Approx(expect_loc).epsilon(1e-12));

  double expect_total =
      expect_con + 0.1 * expect_cls + 1.0 * expect_be + 10.0 * expect_loc;
  CHECK(value.total == doctest::Approx(expect_total).epsilon(1e-12));
}

TEST_CASE("joint: single-image tuple is pure auxiliary loss") {
  ArcFaceParams p = random_arcface(3, 2, 21);
  LossWeights w;
  std::vector<TupleImage> tuple(1);
  tuple[0].descriptor = vec({0.3, -0.8, 0.5});
  tuple[0].blur_pred = 0.4;
  tuple[0].bs = 0.2;
  tuple[0].bbox_pred = Eigen::Vector4d(0.1, 0.2, 0.3, 0.4);
  tuple[0].bbox_gt = Eigen::Vector4d(0.15, 0.1, 0.3, 0.5);
  tuple[0].label = 1;
  auto value = joint_loss(tuple, 0, p, w, 0.7);
  CHECK(value.l_con == 0.0);
  CHECK(value.l_be ==
        doctest::Approx(blur_estimation_loss(0.4, 0.2)).epsilon(1e-12));
}

TEST_CASE("joint: rejects malformed tuples") {
  ArcFaceParams p = random_arcface(3, 2, 22);
  LossWeights w;
  std::vector<TupleImage> empty;
  CHECK_THROWS_AS(joint_loss(empty, 0, p, w, 0.7), DomainError);
  std::vector<TupleImage> one(1);
  one[0].descriptor = vec({1, 0, 0});
  CHECK_THROWS_AS(joint_loss(one, 1, p, w, 0.7), DomainError);
}

TEST_CASE("joint: full gradient matches finite differences") {
  ArcFaceParams p = random_arcface(4, 3, 30);
  LossWeights w;
  const double tau = 0.7;

  std::vector<TupleImage> tuple(3);
  Rng rng(31);
  for (int i = 0; i < 3; ++i) {
    tuple[i].descriptor = random_vec(4, 300 + i);
    tuple[i].blur_pred = rng.uniform(0.05, 0.95);
    tuple[i].bs = rng.uniform(0.0, 0.8);
    for (int k = 0; k < 4; ++k) {
      tuple[i].bbox_pred[k] = rng.uniform(0.1, 0.9);
      tuple[i].bbox_gt[k] = rng.uniform(0.1, 0.9);
    }
    tuple[i].label = i % 3;
  }

  std::vector<TupleImageGrad> grads;
  Eigen::MatrixXd d_w = Eigen::MatrixXd::Zero(4, 3);
  auto value = joint_loss_grad(tuple, 1, p, w, tau, grads, d_w);
  CHECK(std::isfinite(value.total));

  auto total = [&]() { return joint_loss(tuple, 1, p, w, tau).total; };

  int probes = 0;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 4; ++j) {
      double fd = oracle::central_diff(total, &tuple[i].descriptor[j], 1e-6);
      CHECK(oracle::rel_err(grads[i].d_descriptor[j], fd) <= 1e-3);
      ++probes;
    }
    double fd_blur = oracle::central_diff(total, &tuple[i].blur_pred, 1e-6);
    CHECK(oracle::rel_err(grads[i].d_blur, fd_blur) <= 1e-3);
    for (int k = 0; k < 4; ++k) {
      double fd_box = oracle::central_diff(total, &tuple[i].bbox_pred[k], 1e-6);
      CHECK(oracle::rel_err(grads[i].d_bbox[k], fd_box) <= 1e-3);
      ++probes;
    }
  }
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 3; ++j) {
      double fd = oracle::central_diff(total, &p.w(i, j), 1e-6);
      CHECK(oracle::rel_err(d_w(i, j), fd) <= 1e-3);
      ++probes;
    }
  }
  CHECK(probes >= 10);
}

TEST_CASE("joint: classifier gradient accumulates across calls") {
  ArcFaceParams p = random_arcface(4, 3, 40);
  LossWeights w;
  std::vector<TupleImage> tuple(2);
  for (int i = 0; i < 2; ++i) {
    tuple[i].descriptor = random_vec(4, 400 + i);
    tuple[i].blur_pred = 0.5;
    tuple[i].bs = 0.25;
    tuple[i].bbox_pred = Eigen::Vector4d(0.2, 0.3, 0.4, 0.5);
    tuple[i].bbox_gt = Eigen::Vector4d(0.25, 0.2, 0.4, 0.6);
    tuple[i].label = i;
  }
  std::vector<TupleImageGrad> grads;
  Eigen::MatrixXd d_w = Eigen::MatrixXd::Zero(4, 3);
  joint_loss_grad(tuple, 1, p, w, 0.7, grads, d_w);
  Eigen::MatrixXd once = d_w;
  joint_loss_grad(tuple, 1, p, w, 0.7, grads, d_w);
  CHECK((d_w - 2.0 * once).norm() <= 1e-12 * once.norm());
}

TEST_CASE("joint: degenerate descriptors are rejected") {
  ArcFaceParams p = random_arcface(3, 2, 50);
  LossWeights w;
  std::vector<TupleImage> tuple(2);
  tuple[0].descriptor = Eigen::VectorXd::Zero(3);
  tuple[1].descriptor = vec({1, 0, 0});
  for (auto& t : tuple) {
    t.blur_pred = 0.5;
    t.bs = 0.3;
    t.bbox_pred = Eigen::Vector4d(0.2, 0.3, 0.4, 0.5);
    t.bbox_gt = Eigen::Vector4d(0.2, 0.3, 0.4, 0.5);
    t.label = 0;
  }
  CHECK_THROWS_AS(joint_loss(tuple, 1, p, w, 0.7), DegenerateDescriptor);
}

TEST_SUITE_END();
