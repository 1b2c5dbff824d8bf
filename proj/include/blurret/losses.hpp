#pragma once

#include <Eigen/Dense>

#include <vector>

namespace blurret {

struct LossWeights {
  double alpha_cls = 0.1;
  double alpha_be = 1.0;
  double alpha_loc = 10.0;
};

// Margin-softmax classifier state. Columns are class weights; they are L2
// normalized on use, not in storage.
struct ArcFaceParams {
  Eigen::MatrixXd w;  // d x N
  double m = 0.15;
  double gamma = 30.0;
};

// |pred - (1 - bs)|
double blur_estimation_loss(double pred, double bs);
double blur_estimation_loss_grad(double pred, double bs, double& d_pred);

// L1 over the four normalized box coordinates.
double localization_loss(const Eigen::Vector4d& pred, const Eigen::Vector4d& gt);
double localization_loss_grad(const Eigen::Vector4d& pred,
                              const Eigen::Vector4d& gt,
                              Eigen::Vector4d& d_pred);

// Margin-adjusted cosine: s for negatives, cos(arccos(s) + m) for the
// ground-truth class; the cosine is clamped away from +-1 before arccos.
double arcface_adjust(double s, int is_target, double m);

// Softmax cross entropy over gamma-scaled margin-adjusted cosines between
// the normalized descriptor and normalized class columns.
double classification_loss(const Eigen::VectorXd& descriptor,
                           const ArcFaceParams& params, int target);
// d_w accumulates into a matrix shaped like params.w (caller zeroes it).
double classification_loss_grad(const Eigen::VectorXd& descriptor,
                                const ArcFaceParams& params, int target,
                                Eigen::VectorXd& d_descriptor,
                                Eigen::MatrixXd& d_w);

// Pair loss on unit descriptors: 0.5*dist^2 for matches,
// 0.5*max(0, tau - dist)^2 for non-matches.
double contrastive_loss(const Eigen::VectorXd& di_hat,
                        const Eigen::VectorXd& dj_hat, int match,
                        double tau = 0.7);

// One image's contribution to a contrastive tuple: raw descriptor plus the
// auxiliary predictions and their targets.
struct TupleImage {
  Eigen::VectorXd descriptor;  // raw (pre-normalization)
  double blur_pred = 0.0;
  Eigen::Vector4d bbox_pred;
  double bs = 0.0;
  Eigen::Vector4d bbox_gt;
  int label = 0;
};

struct TupleImageGrad {
  Eigen::VectorXd d_descriptor;
  double d_blur = 0.0;
  Eigen::Vector4d d_bbox = Eigen::Vector4d::Zero();
};

struct JointLossValue {
  double l_con = 0.0;
  double l_cls = 0.0;
  double l_be = 0.0;
  double l_loc = 0.0;
  double total = 0.0;
};

// Joint objective over one tuple laid out as [query, n_p positives,
// n_n negatives]. The pair loss averages over the (query, sample) pairs;
// the three auxiliary losses average over every image in the tuple.
JointLossValue joint_loss(const std::vector<TupleImage>& tuple, int n_p,
                          const ArcFaceParams& params, const LossWeights& w,
                          double tau = 0.7);

// Same value, plus gradients with respect to each image's raw descriptor and
// auxiliary predictions, and to the classifier matrix (accumulated into d_w,
// which the caller zeroes).
JointLossValue joint_loss_grad(const std::vector<TupleImage>& tuple, int n_p,
                               const ArcFaceParams& params,
                               const LossWeights& w, double tau,
                               std::vector<TupleImageGrad>& grads,
                               Eigen::MatrixXd& d_w);

}  // namespace blurret
