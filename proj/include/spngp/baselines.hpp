#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "spngp/common.hpp"
#include "spngp/data.hpp"

namespace spngp {

// Train-target mean, repeated for every query row.
inline Eigen::MatrixXd predict_mean_baseline(const Dataset& train, Eigen::Index m) {
  if (train.n() < 1) throw ArgumentError("baseline: empty training set");
  Eigen::MatrixXd out(m, train.Y.cols());
  out.rowwise() = train.Y.colwise().mean();
  return out;
}

// Linear least squares with intercept. Solved via a complete orthogonal
// decomposition, which yields the minimum-norm solution on rank-deficient
// designs.
struct LinearModel {
  Eigen::MatrixXd coef;       // D x D_Y
  Eigen::RowVectorXd intercept;

  Eigen::MatrixXd predict(const Eigen::MatrixXd& X) const {
    return (X * coef).rowwise() + intercept;
  }
};

inline LinearModel fit_lls(const Dataset& train) {
  if (train.n() < 1) throw ArgumentError("lls: empty training set");
  const Eigen::RowVectorXd x_mean = train.X.colwise().mean();
  const Eigen::RowVectorXd y_mean = train.Y.colwise().mean();
  const Eigen::MatrixXd Xc = train.X.rowwise() - x_mean;
  const Eigen::MatrixXd Yc = train.Y.rowwise() - y_mean;
  LinearModel model;
  model.coef = Xc.completeOrthogonalDecomposition().solve(Yc);
  model.intercept = y_mean - x_mean * model.coef;
  return model;
}

// Ridge regression with penalty alpha on standardized features; the
// intercept is unpenalized (handled by centering).
inline LinearModel fit_ridge(const Dataset& train, double alpha = 0.01) {
  if (train.n() < 1) throw ArgumentError("ridge: empty training set");
  const Eigen::RowVectorXd x_mean = train.X.colwise().mean();
  const Eigen::RowVectorXd y_mean = train.Y.colwise().mean();
  Eigen::MatrixXd Xc = train.X.rowwise() - x_mean;
  Eigen::RowVectorXd scale(train.X.cols());
  for (Eigen::Index j = 0; j < Xc.cols(); ++j) {
    const double sd = std::sqrt(Xc.col(j).squaredNorm() /
                                std::max<Eigen::Index>(1, Xc.rows() - 1));
    scale[j] = sd > 0.0 ? sd : 1.0;
    Xc.col(j) /= scale[j];
  }
  const Eigen::MatrixXd Yc = train.Y.rowwise() - y_mean;
  Eigen::MatrixXd gram = Xc.transpose() * Xc;
  gram.diagonal().array() += alpha;
  const Eigen::MatrixXd beta_std = gram.ldlt().solve(Xc.transpose() * Yc);
  LinearModel model;
  model.coef = beta_std.array().colwise() / scale.transpose().array();
  model.intercept = y_mean - x_mean * model.coef;
  return model;
}

// RMSE per output dimension.
inline Eigen::VectorXd rmse(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& truth) {
  if (pred.rows() != truth.rows() || pred.cols() != truth.cols())
    throw ArgumentError("rmse: shape mismatch");
  Eigen::VectorXd out(pred.cols());
  for (Eigen::Index j = 0; j < pred.cols(); ++j)
    out[j] = std::sqrt((pred.col(j) - truth.col(j)).squaredNorm() /
                       static_cast<double>(pred.rows()));
  return out;
}

// RMSE over all outputs flattened.
inline double pooled_rmse(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& truth) {
  if (pred.rows() != truth.rows() || pred.cols() != truth.cols())
    throw ArgumentError("rmse: shape mismatch");
  return std::sqrt((pred - truth).squaredNorm() /
                   static_cast<double>(pred.size()));
}

}  // namespace spngp
