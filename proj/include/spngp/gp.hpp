#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <string>

#include "spngp/common.hpp"
#include "spngp/kernel.hpp"

namespace spngp {

struct PredictiveMoments {
  Eigen::VectorXd mean;
  Eigen::VectorXd var_f;  // variance of the latent function
  Eigen::VectorXd var_y;  // var_f plus observation noise
};

namespace detail {

inline double sample_std(const Eigen::VectorXd& v) {
  if (v.size() < 2) return 0.0;
  const double mean = v.mean();
  return std::sqrt((v.array() - mean).square().sum() /
                   static_cast<double>(v.size() - 1));
}

// Cholesky with the jitter policy: if the plain factorization fails, add
// 1e-8 * sigma_f^2 to the diagonal and escalate x10 at most 3 times.
inline Eigen::LLT<Eigen::MatrixXd> robust_llt(Eigen::MatrixXd C, double sf2,
                                              const std::string& who) {
  Eigen::LLT<Eigen::MatrixXd> llt(C);
  if (llt.info() == Eigen::Success) return llt;
  double jitter = 1e-8 * sf2;
  for (int attempt = 0; attempt < 4; ++attempt) {
    Eigen::MatrixXd Cj = C;
    Cj.diagonal().array() += jitter;
    llt.compute(Cj);
    if (llt.info() == Eigen::Success) return llt;
    jitter *= 10.0;
  }
  throw NumericError("Cholesky factorization failed after jitter escalation (" +
                     who + ")");
}

}  // namespace detail

// One exact GP expert over an assigned data block. The trailing
// `overlap_count` rows of X/y are boundary points borrowed from neighbouring
// regions: they condition the predictive posterior but are excluded from the
// log evidence (and from its gradient), so SPN weight updates stay exact.
class GpLeaf {
 public:
  KernelSpec kernel;
  double log_noise = std::log(0.1);
  Eigen::MatrixXd X;   // N_L x D
  Eigen::VectorXd y;   // centered targets
  int overlap_count = 0;
  int region_id = -1;  // used in error messages only

  double noise_std() const { return std::exp(log_noise); }
  double noise_var() const { return std::exp(2.0 * log_noise); }
  Eigen::Index rows() const { return X.rows(); }
  Eigen::Index evidence_rows() const { return X.rows() - overlap_count; }
  bool fitted() const { return fitted_; }
  double log_evidence() const {
    if (!fitted_) throw StateError("GpLeaf: log_evidence before fit()");
    return log_evidence_;
  }
  int variance_clamp_count() const { return clamp_count_; }

  // Factorizes C = K + sigma_e^2 I for prediction, and the non-overlap
  // sub-block for the evidence. An empty leaf fits trivially (evidence 0).
  void fit() {
    kernel.check();
    if (X.rows() != y.size())
      throw ArgumentError("GpLeaf: rows(X) != len(y)");
    if (overlap_count < 0 || overlap_count > X.rows())
      throw ArgumentError("GpLeaf: overlap_count out of range");
    if (X.rows() > 0 && X.cols() != kernel.input_dim)
      throw ArgumentError("GpLeaf: cols(X) != kernel.input_dim");
    clamp_count_ = 0;
    const std::string who = "leaf region " + std::to_string(region_id);
    if (X.rows() == 0) {
      llt_.reset();
      alpha_.resize(0);
      log_evidence_ = 0.0;
      fitted_ = true;
      return;
    }
    Eigen::MatrixXd C = kernel_matrix(kernel, X);
    C.diagonal().array() += noise_var();
    llt_ = detail::robust_llt(C, kernel.signal_variance(), who);
    alpha_ = llt_->solve(y);

    const Eigen::Index ne = evidence_rows();
    if (ne == 0) {
      log_evidence_ = 0.0;
    } else if (overlap_count == 0) {
      log_evidence_ = gaussian_log_evidence(*llt_, y);
    } else {
      Eigen::LLT<Eigen::MatrixXd> llt_ev = detail::robust_llt(
          C.topLeftCorner(ne, ne), kernel.signal_variance(), who);
      log_evidence_ = gaussian_log_evidence(llt_ev, y.head(ne));
    }
    fitted_ = true;
  }

  PredictiveMoments predict(const Eigen::MatrixXd& Xstar) const {
    if (!fitted_) throw StateError("GpLeaf: predict before fit()");
    if (Xstar.cols() != kernel.input_dim)
      throw ArgumentError("GpLeaf: query dimension mismatch");
    const Eigen::Index m = Xstar.rows();
    PredictiveMoments out;
    out.mean.resize(m);
    out.var_f.resize(m);
    Eigen::VectorXd kss(m);
    for (Eigen::Index i = 0; i < m; ++i)
      kss[i] = kernel_eval(kernel, Xstar.row(i), Xstar.row(i));
    if (X.rows() == 0) {
      out.mean.setZero();
      out.var_f = kss;
    } else {
      const Eigen::MatrixXd Ks = kernel_matrix(kernel, X, Xstar);  // N x M
      out.mean = Ks.transpose() * alpha_;
      const Eigen::MatrixXd V = llt_->matrixL().solve(Ks);
      for (Eigen::Index i = 0; i < m; ++i) {
        double v = kss[i] - V.col(i).squaredNorm();
        if (v < 0.0) {
          ++clamp_count_;
          v = 0.0;
        }
        out.var_f[i] = v;
      }
    }
    out.var_y = out.var_f.array() + noise_var();
    return out;
  }

  // d log p(y|X) / d (kernel log-params, log_noise), over non-overlap rows.
  Eigen::VectorXd log_marginal_likelihood_grad() const {
    if (!fitted_) throw StateError("GpLeaf: gradient before fit()");
    const Eigen::Index ne = evidence_rows();
    if (ne < 1) throw StateError("GpLeaf: gradient needs at least one evidence row");
    const Eigen::MatrixXd Xe = X.topRows(ne);
    const Eigen::VectorXd ye = y.head(ne);
    Eigen::MatrixXd C = kernel_matrix(kernel, Xe);
    C.diagonal().array() += noise_var();
    const Eigen::LLT<Eigen::MatrixXd> llt = detail::robust_llt(
        C, kernel.signal_variance(), "leaf region " + std::to_string(region_id));
    const Eigen::VectorXd alpha = llt.solve(ye);
    const Eigen::MatrixXd Cinv =
        llt.solve(Eigen::MatrixXd::Identity(ne, ne));

    const std::vector<Eigen::MatrixXd> dK = kernel_grad(kernel, Xe);
    Eigen::VectorXd grad(kernel.num_params() + 1);
    for (int p = 0; p < kernel.num_params(); ++p) {
      grad[p] = 0.5 * alpha.dot(dK[static_cast<std::size_t>(p)] * alpha) -
                0.5 * Cinv.cwiseProduct(dK[static_cast<std::size_t>(p)]).sum();
    }
    // dC/d log sigma_e = 2 sigma_e^2 I
    const double s2 = noise_var();
    grad[kernel.num_params()] =
        s2 * alpha.squaredNorm() - s2 * Cinv.trace();
    return grad;
  }

  // Current optimizable parameters: kernel log-params followed by log_noise.
  Eigen::VectorXd parameters() const {
    Eigen::VectorXd theta(kernel.num_params() + 1);
    theta.head(kernel.num_params()) = kernel.log_params;
    theta[kernel.num_params()] = log_noise;
    return theta;
  }

  void set_parameters(const Eigen::VectorXd& theta) {
    if (theta.size() != kernel.num_params() + 1)
      throw ArgumentError("GpLeaf: parameter vector has wrong length");
    kernel.log_params = theta.head(kernel.num_params());
    log_noise = theta[kernel.num_params()];
    fitted_ = false;
  }

 private:
  static double gaussian_log_evidence(const Eigen::LLT<Eigen::MatrixXd>& llt,
                                      const Eigen::VectorXd& yv) {
    const Eigen::Index n = yv.size();
    const Eigen::VectorXd a = llt.solve(yv);
    double log_det = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      log_det += std::log(llt.matrixLLT()(i, i));
    log_det *= 2.0;
    return -0.5 * yv.dot(a) - 0.5 * log_det -
           0.5 * static_cast<double>(n) * std::log(2.0 * M_PI);
  }

  std::optional<Eigen::LLT<Eigen::MatrixXd>> llt_;
  Eigen::VectorXd alpha_;
  double log_evidence_ = 0.0;
  bool fitted_ = false;
  mutable int clamp_count_ = 0;
};

}  // namespace spngp
