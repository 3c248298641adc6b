#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <string>

#include "simcal/dataset.hpp"
#include "simcal/rng.hpp"
#include "simcal/types.hpp"

namespace simcal {

struct IrlsOptions {
  double rel_tol = 1e-10;     // relative change in negative log-likelihood
  int max_iter = 50;
  double separation_cap = 30.0;  // max |beta_j| before declaring separation
};

// Unpenalized fit of the model restricted to A (intercept always included).
struct RestrictedFit {
  IndexSet A;
  Vector beta;                  // intercept first, then A in order
  std::optional<double> sigma;  // Linear only; MLE with divisor n
  Family family = Family::Linear;
  bool converged = true;
  int n_irls_iters = 0;
};

namespace detail {

inline double logistic(double eta) {
  // Kept strictly inside (0,1) so that calibration ratios stay finite.
  constexpr double lo = 1e-15;
  const double e = eta >= 0 ? 1.0 / (1.0 + std::exp(-eta)) : std::exp(eta) / (1.0 + std::exp(eta));
  return std::clamp(e, lo, 1.0 - lo);
}

inline double log1pexp(double eta) {
  return eta > 0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta));
}

inline const double kMaxLogDouble = std::log(std::numeric_limits<double>::max());

}  // namespace detail

// Mean of the response given the linear predictor.
inline Vector mean_from_eta(const Vector& eta, Family family) {
  switch (family) {
    case Family::Linear:
      return eta;
    case Family::Binary:
      return eta.unaryExpr([](double v) { return detail::logistic(v); });
    case Family::Poisson:
      if (eta.size() > 0 && eta.maxCoeff() > detail::kMaxLogDouble)
        throw Error(ErrorKind::Overflow, "poisson linear predictor exceeds log(DBL_MAX)");
      return eta.array().exp().matrix();
  }
  return eta;
}

// Per-observation negative log-likelihood up to constants in y (Linear: half RSS).
inline double negative_log_likelihood(const Vector& y, const Vector& eta, Family family) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    switch (family) {
      case Family::Linear: s += 0.5 * (y[i] - eta[i]) * (y[i] - eta[i]); break;
      case Family::Binary: s += detail::log1pexp(eta[i]) - y[i] * eta[i]; break;
      case Family::Poisson: s += std::exp(eta[i]) - y[i] * eta[i]; break;
    }
  }
  return s;
}

// Design [1, X_A] for a restricted model, with its rank check and a QR
// factorization reused across every response fitted on it.
class RestrictedModel {
 public:
  RestrictedModel(const Matrix& X, IndexSet A, Family family, IrlsOptions opts = {})
      : A_(normalized(std::move(A))), family_(family), opts_(opts) {
    for (int j : A_)
      if (j < 0 || j >= X.cols())
        throw Error(ErrorKind::InvalidInput, "index " + std::to_string(j) + " outside design");
    const auto n = X.rows();
    const auto k = static_cast<Eigen::Index>(A_.size()) + 1;
    if (k > n) throw Error(ErrorKind::RankDeficient, "|A|+1 exceeds n");
    XA_.resize(n, k);
    XA_.col(0).setOnes();
    for (Eigen::Index c = 1; c < k; ++c) XA_.col(c) = X.col(A_[static_cast<std::size_t>(c - 1)]);

    Eigen::JacobiSVD<Matrix> svd(XA_);
    const Vector s = svd.singularValues();
    if (s.size() == 0 || s.minCoeff() < 1e-10 * s.maxCoeff())
      throw Error(ErrorKind::RankDeficient, "restricted design is rank deficient");
    qr_.compute(XA_);
  }

  const Matrix& design() const { return XA_; }
  const IndexSet& A() const { return A_; }
  Family family() const { return family_; }
  Eigen::Index n() const { return XA_.rows(); }

  Vector linear_predictor(const Vector& beta) const { return XA_ * beta; }
  Vector mean(const Vector& beta) const { return mean_from_eta(XA_ * beta, family_); }

  RestrictedFit fit(const Vector& y, const Vector* warm_start = nullptr) const {
    if (y.size() != n()) throw Error(ErrorKind::InvalidInput, "response length mismatch");
    RestrictedFit out;
    out.A = A_;
    out.family = family_;
    if (family_ == Family::Linear) {
      out.beta = qr_.solve(y);
      const double rss = (y - XA_ * out.beta).squaredNorm();
      out.sigma = std::sqrt(rss / static_cast<double>(n()));
      return out;
    }
    irls(y, warm_start, out);
    return out;
  }

 private:
  void irls(const Vector& y, const Vector* warm_start, RestrictedFit& out) const {
    const auto k = XA_.cols();
    Vector beta = Vector::Zero(k);
    if (warm_start && warm_start->size() == k && warm_start->allFinite()) {
      beta = *warm_start;
    } else {
      const double ybar = y.mean();
      if (family_ == Family::Binary) {
        if (ybar <= 0.0 || ybar >= 1.0)
          throw Error(ErrorKind::Separation, "constant binary response");
        beta[0] = std::log(ybar / (1.0 - ybar));
      } else {
        if (ybar <= 0.0) throw Error(ErrorKind::Separation, "all-zero poisson response");
        beta[0] = std::log(ybar);
      }
    }

    Vector eta = XA_ * beta;
    double nll = negative_log_likelihood(y, eta, family_);
    for (int it = 1; it <= opts_.max_iter; ++it) {
      const Vector mu = mean_from_eta(eta, family_);
      const Vector w = family_ == Family::Binary ? Vector(mu.array() * (1.0 - mu.array())) : mu;
      const Vector score = XA_.transpose() * (y - mu);
      const Matrix H = XA_.transpose() * w.asDiagonal() * XA_;
      Eigen::LDLT<Matrix> ldlt(H);
      if (ldlt.info() != Eigen::Success)
        throw Error(ErrorKind::NonConvergence, "IRLS Hessian factorization failed");
      Vector step = ldlt.solve(score);

      // Step halving keeps the likelihood monotone.
      double t = 1.0;
      Vector cand, cand_eta;
      double cand_nll = std::numeric_limits<double>::infinity();
      for (int h = 0; h < 30; ++h) {
        cand = beta + t * step;
        cand_eta = XA_ * cand;
        if (family_ == Family::Poisson && cand_eta.maxCoeff() > detail::kMaxLogDouble) {
          t *= 0.5;
          continue;
        }
        cand_nll = negative_log_likelihood(y, cand_eta, family_);
        if (std::isfinite(cand_nll) && cand_nll <= nll + 1e-12 * std::abs(nll)) break;
        t *= 0.5;
      }
      if (!std::isfinite(cand_nll))
        throw Error(ErrorKind::NonConvergence, "IRLS step produced non-finite likelihood");

      const double change = std::abs(nll - cand_nll) / (std::abs(cand_nll) + 0.1);
      beta = cand;
      eta = cand_eta;
      nll = cand_nll;
      out.n_irls_iters = it;
      if (beta.cwiseAbs().maxCoeff() > opts_.separation_cap)
        throw Error(ErrorKind::Separation, "IRLS coefficients diverging (|beta| > cap)");
      if (change < opts_.rel_tol) {
        // A fit that reproduces every 0/1 response means the likelihood has no
        // finite maximizer; the cap alone catches this too late.
        if (family_ == Family::Binary &&
            (y - mean_from_eta(eta, family_)).cwiseAbs().maxCoeff() < 1e-6)
          throw Error(ErrorKind::Separation, "fitted probabilities reproduce the response");
        out.beta = beta;
        out.converged = true;
        return;
      }
    }
    throw Error(ErrorKind::NonConvergence, "IRLS iteration cap reached");
  }

  IndexSet A_;
  Family family_;
  IrlsOptions opts_;
  Matrix XA_;
  Eigen::HouseholderQR<Matrix> qr_;
};

inline RestrictedFit fit_restricted(const Dataset& data, const IndexSet& A) {
  return RestrictedModel(data.X, A, data.family).fit(data.y);
}

inline Vector predict_mean(const RestrictedFit& fit, const Dataset& data) {
  if (fit.beta.size() != static_cast<Eigen::Index>(fit.A.size()) + 1)
    throw Error(ErrorKind::InvalidInput, "fit coefficients do not match its index set");
  Vector eta = Vector::Constant(data.n(), fit.beta[0]);
  for (std::size_t c = 0; c < fit.A.size(); ++c) {
    const int j = fit.A[c];
    if (j < 0 || j >= data.p()) throw Error(ErrorKind::InvalidInput, "fit index outside dataset");
    eta += fit.beta[static_cast<Eigen::Index>(c) + 1] * data.X.col(j);
  }
  return mean_from_eta(eta, fit.family);
}

// Draws a fresh response from the restricted model with parameters `fit`.
inline Vector simulate_from_mean(const Vector& mean, Family family, std::optional<double> sigma,
                                 Rng& rng) {
  Vector y(mean.size());
  switch (family) {
    case Family::Linear: {
      if (!sigma || *sigma <= 0.0)
        throw Error(ErrorKind::DegenerateSigma, "cannot simulate linear response with sigma = 0");
      for (Eigen::Index i = 0; i < y.size(); ++i) y[i] = mean[i] + *sigma * rng.normal();
      break;
    }
    case Family::Binary:
      for (Eigen::Index i = 0; i < y.size(); ++i) y[i] = rng.bernoulli(mean[i]);
      break;
    case Family::Poisson:
      for (Eigen::Index i = 0; i < y.size(); ++i) y[i] = static_cast<double>(rng.poisson(mean[i]));
      break;
  }
  return y;
}

inline Vector simulate_response(const Dataset& data, const RestrictedFit& fit, Rng& rng) {
  return simulate_from_mean(predict_mean(fit, data), fit.family, fit.sigma, rng);
}

}  // namespace simcal
