#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "spngp/common.hpp"

namespace spngp {

enum class KernelFamily { Linear, SquaredExponentialARD, Matern, Periodic };

inline std::string family_name(KernelFamily f) {
  switch (f) {
    case KernelFamily::Linear: return "linear";
    case KernelFamily::SquaredExponentialARD: return "se_ard";
    case KernelFamily::Matern: return "matern";
    case KernelFamily::Periodic: return "periodic";
  }
  return "unknown";
}

inline KernelFamily family_from_name(const std::string& s) {
  if (s == "linear") return KernelFamily::Linear;
  if (s == "se_ard") return KernelFamily::SquaredExponentialARD;
  if (s == "matern") return KernelFamily::Matern;
  if (s == "periodic") return KernelFamily::Periodic;
  throw ArgumentError("unknown kernel family: " + s);
}

// A covariance function family plus its hyperparameters. Parameters are
// stored as logs so optimizers can work unconstrained; exp(log_params) are
// the positive model quantities. Layouts:
//   linear:   [log sigma_f]
//   se_ard:   [log sigma_f, log l_1 .. log l_D]
//   matern:   [log sigma_f, log l_1 .. log l_D], nu in {1/2, 3/2, 5/2}
//   periodic: [log sigma_f, log lengthscale, log period], 1-D inputs only
struct KernelSpec {
  KernelFamily family = KernelFamily::SquaredExponentialARD;
  Eigen::VectorXd log_params;
  double nu = 1.5;  // Matern only
  int input_dim = 0;

  int num_params() const { return static_cast<int>(log_params.size()); }
  double sigma_f() const { return std::exp(log_params[0]); }
  double signal_variance() const { return std::exp(2.0 * log_params[0]); }

  static int expected_params(KernelFamily family, int input_dim) {
    switch (family) {
      case KernelFamily::Linear: return 1;
      case KernelFamily::SquaredExponentialARD: return 1 + input_dim;
      case KernelFamily::Matern: return 1 + input_dim;
      case KernelFamily::Periodic: return 3;
    }
    return 0;
  }

  void check() const {
    if (input_dim < 1) throw ArgumentError("kernel: input_dim must be >= 1");
    if (family == KernelFamily::Periodic && input_dim != 1)
      throw ArgumentError("kernel: periodic kernel supports 1-D inputs only");
    if (family == KernelFamily::Matern && nu != 0.5 && nu != 1.5 && nu != 2.5)
      throw ArgumentError("kernel: matern nu must be one of 1/2, 3/2, 5/2");
    if (num_params() != expected_params(family, input_dim))
      throw ArgumentError("kernel: " + family_name(family) + " over " +
                          std::to_string(input_dim) + "-D inputs needs " +
                          std::to_string(expected_params(family, input_dim)) +
                          " log-params, got " + std::to_string(num_params()));
    for (int p = 0; p < num_params(); ++p) {
      const double v = std::exp(log_params[p]);
      if (!std::isfinite(log_params[p]) || !(v > 0.0) || !std::isfinite(v))
        throw ArgumentError("kernel: log_params[" + std::to_string(p) +
                            "] does not map to a positive finite value");
    }
  }

  static KernelSpec linear(int input_dim, double sigma_f = 1.0) {
    KernelSpec s;
    s.family = KernelFamily::Linear;
    s.input_dim = input_dim;
    s.log_params = Eigen::VectorXd::Constant(1, std::log(sigma_f));
    s.check();
    return s;
  }

  static KernelSpec se_ard(int input_dim, double sigma_f = 1.0,
                           double lengthscale = 1.0) {
    KernelSpec s;
    s.family = KernelFamily::SquaredExponentialARD;
    s.input_dim = input_dim;
    s.log_params = Eigen::VectorXd::Constant(1 + input_dim, std::log(lengthscale));
    s.log_params[0] = std::log(sigma_f);
    s.check();
    return s;
  }

  static KernelSpec matern(int input_dim, double nu = 1.5, double sigma_f = 1.0,
                           double lengthscale = 1.0) {
    KernelSpec s;
    s.family = KernelFamily::Matern;
    s.input_dim = input_dim;
    s.nu = nu;
    s.log_params = Eigen::VectorXd::Constant(1 + input_dim, std::log(lengthscale));
    s.log_params[0] = std::log(sigma_f);
    s.check();
    return s;
  }

  static KernelSpec periodic(double sigma_f = 1.0, double lengthscale = 1.0,
                             double period = 1.0) {
    KernelSpec s;
    s.family = KernelFamily::Periodic;
    s.input_dim = 1;
    s.log_params.resize(3);
    s.log_params << std::log(sigma_f), std::log(lengthscale), std::log(period);
    s.check();
    return s;
  }
};

namespace detail {

inline void check_inputs(const KernelSpec& spec, const Eigen::VectorXd& x1,
                         const Eigen::VectorXd& x2) {
  if (x1.size() != spec.input_dim || x2.size() != spec.input_dim)
    throw ArgumentError("kernel_eval: input dimension mismatch (spec " +
                        std::to_string(spec.input_dim) + ", got " +
                        std::to_string(x1.size()) + " and " +
                        std::to_string(x2.size()) + ")");
  if (!x1.allFinite() || !x2.allFinite())
    throw ArgumentError("kernel_eval: non-finite input");
}

// Scaled squared distance sum_d ((x1_d - x2_d)/l_d)^2. Squaring makes the
// accumulation exactly symmetric in the arguments.
inline double scaled_sqdist(const Eigen::VectorXd& x1, const Eigen::VectorXd& x2,
                            const Eigen::VectorXd& log_params) {
  double r2 = 0.0;
  for (int d = 0; d < x1.size(); ++d) {
    const double l = std::exp(log_params[1 + d]);
    const double z = (x1[d] - x2[d]) / l;
    r2 += z * z;
  }
  return r2;
}

inline double matern_of_r(double nu, double sf2, double r) {
  if (nu == 0.5) return sf2 * std::exp(-r);
  if (nu == 1.5) {
    const double s = std::sqrt(3.0) * r;
    return sf2 * (1.0 + s) * std::exp(-s);
  }
  const double s = std::sqrt(5.0) * r;
  return sf2 * (1.0 + s + s * s / 3.0) * std::exp(-s);
}

}  // namespace detail

inline double kernel_eval(const KernelSpec& spec, const Eigen::VectorXd& x1,
                          const Eigen::VectorXd& x2) {
  detail::check_inputs(spec, x1, x2);
  const double sf2 = spec.signal_variance();
  switch (spec.family) {
    case KernelFamily::Linear:
      return sf2 * x1.dot(x2);
    case KernelFamily::SquaredExponentialARD:
      return sf2 * std::exp(-0.5 * detail::scaled_sqdist(x1, x2, spec.log_params));
    case KernelFamily::Matern: {
      const double r = std::sqrt(detail::scaled_sqdist(x1, x2, spec.log_params));
      return detail::matern_of_r(spec.nu, sf2, r);
    }
    case KernelFamily::Periodic: {
      const double l = std::exp(spec.log_params[1]);
      const double p = std::exp(spec.log_params[2]);
      const double u = M_PI * std::abs(x1[0] - x2[0]) / p;
      const double s = std::sin(u);
      return sf2 * std::exp(-2.0 * s * s / (l * l));
    }
  }
  throw ArgumentError("kernel_eval: unknown family");
}

inline Eigen::MatrixXd kernel_matrix(const KernelSpec& spec,
                                     const Eigen::MatrixXd& X1,
                                     const Eigen::MatrixXd& X2) {
  if (X1.cols() != spec.input_dim || X2.cols() != spec.input_dim)
    throw ArgumentError("kernel_matrix: column count does not match input_dim");
  Eigen::MatrixXd K(X1.rows(), X2.rows());
  for (Eigen::Index i = 0; i < X1.rows(); ++i)
    for (Eigen::Index j = 0; j < X2.rows(); ++j)
      K(i, j) = kernel_eval(spec, X1.row(i), X2.row(j));
  return K;
}

inline Eigen::MatrixXd kernel_matrix(const KernelSpec& spec,
                                     const Eigen::MatrixXd& X) {
  return kernel_matrix(spec, X, X);
}

// dK/d(log param_p) at X, one matrix per hyperparameter. Since K scales with
// sigma_f^2, the first entry is always 2K.
inline std::vector<Eigen::MatrixXd> kernel_grad(const KernelSpec& spec,
                                                const Eigen::MatrixXd& X) {
  if (X.cols() != spec.input_dim)
    throw ArgumentError("kernel_grad: column count does not match input_dim");
  const Eigen::Index n = X.rows();
  const Eigen::MatrixXd K = kernel_matrix(spec, X);
  std::vector<Eigen::MatrixXd> grads;
  grads.reserve(static_cast<std::size_t>(spec.num_params()));
  grads.push_back(2.0 * K);

  const double sf2 = spec.signal_variance();
  switch (spec.family) {
    case KernelFamily::Linear:
      break;
    case KernelFamily::SquaredExponentialARD: {
      for (int d = 0; d < spec.input_dim; ++d) {
        const double l = std::exp(spec.log_params[1 + d]);
        Eigen::MatrixXd G(n, n);
        for (Eigen::Index i = 0; i < n; ++i)
          for (Eigen::Index j = 0; j < n; ++j) {
            const double z = (X(i, d) - X(j, d)) / l;
            G(i, j) = K(i, j) * z * z;
          }
        grads.push_back(std::move(G));
      }
      break;
    }
    case KernelFamily::Matern: {
      for (int d = 0; d < spec.input_dim; ++d) {
        const double l = std::exp(spec.log_params[1 + d]);
        Eigen::MatrixXd G(n, n);
        for (Eigen::Index i = 0; i < n; ++i)
          for (Eigen::Index j = 0; j < n; ++j) {
            const double r =
                std::sqrt(detail::scaled_sqdist(X.row(i), X.row(j), spec.log_params));
            const double zd = (X(i, d) - X(j, d)) / l;
            double g = 0.0;
            if (spec.nu == 0.5) {
              // d k / d log l_d = sf2 exp(-r) zd^2 / r; the r -> 0 limit is 0.
              g = r > 0.0 ? sf2 * std::exp(-r) * zd * zd / r : 0.0;
            } else if (spec.nu == 1.5) {
              g = 3.0 * sf2 * std::exp(-std::sqrt(3.0) * r) * zd * zd;
            } else {
              const double s = std::sqrt(5.0) * r;
              g = (5.0 / 3.0) * sf2 * (1.0 + s) * std::exp(-s) * zd * zd;
            }
            G(i, j) = g;
          }
        grads.push_back(std::move(G));
      }
      break;
    }
    case KernelFamily::Periodic: {
      const double l = std::exp(spec.log_params[1]);
      const double p = std::exp(spec.log_params[2]);
      Eigen::MatrixXd Gl(n, n), Gp(n, n);
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) {
          const double u = M_PI * std::abs(X(i, 0) - X(j, 0)) / p;
          const double s = std::sin(u);
          Gl(i, j) = K(i, j) * 4.0 * s * s / (l * l);
          Gp(i, j) = K(i, j) * 2.0 * u * std::sin(2.0 * u) / (l * l);
        }
      grads.push_back(std::move(Gl));
      grads.push_back(std::move(Gp));
      break;
    }
  }
  return grads;
}

}  // namespace spngp
