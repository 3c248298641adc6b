#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "simcal/dataset.hpp"
#include "simcal/model.hpp"
#include "simcal/types.hpp"

namespace simcal {

// Tolerances of the pathwise solver and of the entry search.
struct LassoConfig {
  double kkt_tol = 1e-7;
  double bisection_tol = 1e-6;  // relative width of the final entry bracket
  double tie_tol = 1e-6;        // relative window for simultaneous entries
  int grid_size = 100;
  double lambda_min_ratio = 1e-3;
  int max_sweeps = 200;         // full passes over all coordinates
  int max_active_sweeps = 100000;
};

// Lasso solution on the standardized scale: columns centered, unit variance
// (divisor n). The intercept is never penalized.
struct LassoSolution {
  double lambda = 0.0;
  double beta0 = 0.0;
  Vector beta;
  IndexSet active_set;
  double kkt_residual = 0.0;
};

struct LassoEntryEvent {
  double lambda_entry = 0.0;
  IndexSet entering;
  int step = 1;
};

namespace detail {
inline double soft_threshold(double z, double t) {
  if (z > t) return z - t;
  if (z < -t) return z + t;
  return 0.0;
}
}  // namespace detail

// A design matrix prepared once (standardization, Gram matrix) and then solved
// against any number of responses. Immutable after construction.
//
// Objective: (1/n) * NLL(beta0, beta) + lambda * ||beta||_1, which for the
// linear family is (1/2n) ||y - beta0 - Xs beta||^2 + lambda ||beta||_1.
class LassoProblem {
 public:
  LassoProblem(const Matrix& X, Family family, LassoConfig cfg = {})
      : family_(family), cfg_(cfg), n_(X.rows()), p_(X.cols()) {
    if (n_ < 2 || p_ < 1) throw Error(ErrorKind::InvalidInput, "lasso needs n >= 2 and p >= 1");
    center_ = X.colwise().mean().transpose();
    scale_.resize(p_);
    usable_.assign(static_cast<std::size_t>(p_), true);
    Xs_.resize(n_, p_);
    for (Eigen::Index j = 0; j < p_; ++j) {
      Vector col = X.col(j).array() - center_[j];
      const double s = std::sqrt(col.squaredNorm() / static_cast<double>(n_));
      scale_[j] = s;
      if (!(s > 1e-12 * (1.0 + std::abs(center_[j])))) {
        usable_[static_cast<std::size_t>(j)] = false;  // constant column never enters
        Xs_.col(j).setZero();
      } else {
        Xs_.col(j) = col / s;
      }
    }
    if (family_ == Family::Linear) gram_ = Xs_.transpose() * Xs_ / static_cast<double>(n_);
  }

  Family family() const { return family_; }
  const LassoConfig& config() const { return cfg_; }
  const Matrix& standardized() const { return Xs_; }
  Eigen::Index n() const { return n_; }
  Eigen::Index p() const { return p_; }

  // Smallest lambda at which the null (intercept-only) model is optimal.
  double lambda_max(const Vector& y) const {
    return (Xs_.transpose() * (y.array() - y.mean()).matrix()).cwiseAbs().maxCoeff() /
           static_cast<double>(n_);
  }

  LassoSolution solve(const Vector& y, double lambda, const LassoSolution* warm = nullptr) const {
    check_response(y);
    if (lambda < 0.0) throw Error(ErrorKind::InvalidInput, "lambda must be non-negative");
    const Prepared r = prepare(y);
    return solve_prepared(r, lambda, warm);
  }

  // Gradient of the (1/n)-scaled log-likelihood w.r.t. each standardized beta_j.
  Vector gradient(const Vector& y, const LassoSolution& s) const {
    const Vector eta = (Xs_ * s.beta).array() + s.beta0;
    return Xs_.transpose() * (y - mean_from_eta(eta, family_)) / static_cast<double>(n_);
  }

  double kkt_residual(const Vector& g, const LassoSolution& s) const {
    return kkt_of(g, s.beta, s.lambda);
  }

  // Largest lambda at which some variable outside A has a non-zero coefficient.
  LassoEntryEvent lambda_entry(const Vector& y, const IndexSet& A_in) const {
    check_response(y);
    const IndexSet A = normalized(A_in);
    if (static_cast<Eigen::Index>(A.size()) >= p_)
      throw Error(ErrorKind::InvalidInput, "A must be a proper subset of the covariates");

    const Prepared r = prepare(y);
    LassoEntryEvent none;
    none.lambda_entry = 0.0;
    const double lmax = r.lambda_max;
    if (!(lmax > r.zero_tol)) return none;

    auto outside_active = [&](const LassoSolution& s) {
      for (int j : s.active_set)
        if (!contains(A, j)) return true;
      return false;
    };

    // Walk the log-spaced grid from lambda_max down until something outside A
    // is active.
    const int K = std::max(cfg_.grid_size, 2);
    const double log_ratio = std::log(cfg_.lambda_min_ratio);
    LassoSolution hi_sol = solve_prepared(r, lmax, nullptr);
    LassoSolution lo_sol;
    bool found = false;
    for (int k = 1; k < K; ++k) {
      const double lam = lmax * std::exp(log_ratio * k / (K - 1));
      LassoSolution s = solve_prepared(r, lam, &hi_sol);
      if (outside_active(s)) {
        lo_sol = std::move(s);
        found = true;
        break;
      }
      hi_sol = std::move(s);
    }
    if (!found) return none;

    // Bisection on the bracket (lo active, hi inactive).
    while (hi_sol.lambda - lo_sol.lambda > cfg_.bisection_tol * hi_sol.lambda) {
      const double mid = 0.5 * (hi_sol.lambda + lo_sol.lambda);
      LassoSolution s = solve_prepared(r, mid, &hi_sol);
      if (outside_active(s))
        lo_sol = std::move(s);
      else
        hi_sol = std::move(s);
    }

    double lambda_a = 0.5 * (hi_sol.lambda + lo_sol.lambda);
    if (family_ == Family::Linear) {
      if (auto exact = affine_entry(r, hi_sol, A, lo_sol.lambda, hi_sol.lambda)) lambda_a = *exact;
    }

    LassoEntryEvent ev;
    ev.lambda_entry = lambda_a;
    ev.entering = entering_set(r, A, lambda_a, hi_sol, lo_sol);
    return ev;
  }

  // No-reentry entry sequence A_0 = {}, A_k = A_{k-1} + entering_k.
  std::vector<LassoEntryEvent> path_entry_order(const Vector& y, int max_steps) const {
    if (max_steps < 1) throw Error(ErrorKind::InvalidInput, "max_steps must be >= 1");
    std::vector<LassoEntryEvent> events;
    IndexSet A;
    for (int k = 1; k <= max_steps && static_cast<Eigen::Index>(A.size()) < p_; ++k) {
      LassoEntryEvent ev = lambda_entry(y, A);
      if (ev.lambda_entry <= 0.0 || ev.entering.empty()) break;
      ev.step = k;
      A = set_union(A, ev.entering);
      events.push_back(std::move(ev));
    }
    return events;
  }

 private:
  struct Prepared {
    const Vector* y = nullptr;
    Vector c;  // Xs^T (y - ybar) / n
    double ybar = 0.0;
    double lambda_max = 0.0;
    double zero_tol = 0.0;
  };

  void check_response(const Vector& y) const {
    if (y.size() != n_) throw Error(ErrorKind::InvalidInput, "response length mismatch");
  }

  Prepared prepare(const Vector& y) const {
    Prepared r;
    r.y = &y;
    r.ybar = y.mean();
    r.c = Xs_.transpose() * (y.array() - r.ybar).matrix() / static_cast<double>(n_);
    r.lambda_max = r.c.size() ? r.c.cwiseAbs().maxCoeff() : 0.0;
    const double spread = std::sqrt((y.array() - r.ybar).square().mean());
    r.zero_tol = 1e-12 * (1.0 + spread);
    return r;
  }

  double kkt_of(const Vector& g, const Vector& beta, double lambda) const {
    double worst = 0.0;
    for (Eigen::Index j = 0; j < p_; ++j) {
      if (!usable_[static_cast<std::size_t>(j)]) continue;
      const double v = beta[j] == 0.0 ? std::max(0.0, std::abs(g[j]) - lambda)
                                      : std::abs(g[j] - lambda * (beta[j] > 0 ? 1.0 : -1.0));
      worst = std::max(worst, v);
    }
    return worst;
  }

  void finish(LassoSolution& s, const Vector& g) const {
    s.active_set.clear();
    for (Eigen::Index j = 0; j < p_; ++j)
      if (s.beta[j] != 0.0) s.active_set.push_back(static_cast<int>(j));
    s.kkt_residual = kkt_of(g, s.beta, s.lambda);
    if (!(s.kkt_residual <= cfg_.kkt_tol))
      throw Error(ErrorKind::NonConvergence,
                  "lasso KKT residual " + std::to_string(s.kkt_residual) + " above tolerance");
  }

  LassoSolution solve_prepared(const Prepared& r, double lambda, const LassoSolution* warm) const {
    LassoSolution s;
    s.lambda = lambda;
    if (warm && warm->beta.size() == p_) {
      s.beta = warm->beta;
      s.beta0 = warm->beta0;
    } else {
      s.beta = Vector::Zero(p_);
      s.beta0 = r.ybar;
    }
    if (family_ == Family::Linear)
      solve_linear(r, s);
    else
      solve_glm(r, s);
    return s;
  }

  // Covariance-update coordinate descent; g = c - G beta is maintained.
  void solve_linear(const Prepared& r, LassoSolution& s) const {
    const double lambda = s.lambda;
    Vector& beta = s.beta;
    Vector g = r.c - gram_ * beta;
    const double tol = 1e-13 * (1.0 + r.lambda_max);

    auto update = [&](Eigen::Index j) {
      const double old = beta[j];
      const double nw = detail::soft_threshold(g[j] + old, lambda);
      const double d = nw - old;
      if (d != 0.0) {
        beta[j] = nw;
        g.noalias() -= d * gram_.col(j);
      }
      return std::abs(d);
    };

    for (int sweep = 0; sweep < cfg_.max_sweeps; ++sweep) {
      double maxd = 0.0;
      for (Eigen::Index j = 0; j < p_; ++j)
        if (usable_[static_cast<std::size_t>(j)]) maxd = std::max(maxd, update(j));
      if (maxd <= tol) {
        s.beta0 = r.ybar;
        g = r.c - gram_ * beta;
        finish(s, g);
        return;
      }
      std::vector<Eigen::Index> active;
      for (Eigen::Index j = 0; j < p_; ++j)
        if (beta[j] != 0.0) active.push_back(j);
      int inner = 0;
      for (; inner < cfg_.max_active_sweeps; ++inner) {
        double m = 0.0;
        for (Eigen::Index j : active) m = std::max(m, update(j));
        if (m <= tol) break;
      }
      if (inner == cfg_.max_active_sweeps) break;
      g = r.c - gram_ * beta;  // wash out accumulated rounding
    }
    throw Error(ErrorKind::NonConvergence, "lasso coordinate descent sweep cap reached");
  }

  // Proximal Newton: weighted coordinate descent on the quadratic model of the
  // log-likelihood, followed by a backtracking step on the true objective.
  void solve_glm(const Prepared& r, LassoSolution& s) const {
    const Vector& y = *r.y;
    const double lambda = s.lambda;
    const double nd = static_cast<double>(n_);
    const double tight = std::min(1e-10, 1e-3 * cfg_.kkt_tol);

    if (s.beta.isZero(0.0)) {
      // Null model intercept.
      if (family_ == Family::Binary) {
        if (r.ybar <= 0.0 || r.ybar >= 1.0)
          throw Error(ErrorKind::Separation, "constant binary response in lasso");
        s.beta0 = std::log(r.ybar / (1.0 - r.ybar));
      } else {
        if (r.ybar <= 0.0) throw Error(ErrorKind::Separation, "all-zero poisson response in lasso");
        s.beta0 = std::log(r.ybar);
      }
    }

    auto objective = [&](double b0, const Vector& b, Vector& eta_out) {
      eta_out = (Xs_ * b).array() + b0;
      if (family_ == Family::Poisson && eta_out.maxCoeff() > detail::kMaxLogDouble)
        return std::numeric_limits<double>::infinity();
      return negative_log_likelihood(y, eta_out, family_) / nd + lambda * b.lpNorm<1>();
    };

    Vector eta;
    double F = objective(s.beta0, s.beta, eta);
    if (!std::isfinite(F)) throw Error(ErrorKind::Overflow, "lasso start point overflows");

    Vector res(n_), w(n_), a(p_);
    for (int outer = 0; outer < cfg_.max_sweeps; ++outer) {
      const Vector mu = mean_from_eta(eta, family_);
      const Vector grad = Xs_.transpose() * (y - mu) / nd;
      const double g0 = (y - mu).mean();
      if (kkt_of(grad, s.beta, lambda) <= tight && std::abs(g0) <= tight) {
        finish(s, grad);
        return;
      }

      for (Eigen::Index i = 0; i < n_; ++i) {
        const double wi = family_ == Family::Binary ? mu[i] * (1.0 - mu[i]) : mu[i];
        w[i] = std::max(wi, 1e-10);
        res[i] = (y[i] - mu[i]) / w[i];
      }
      const double wsum = w.sum();
      for (Eigen::Index j = 0; j < p_; ++j)
        a[j] = usable_[static_cast<std::size_t>(j)] ? Xs_.col(j).cwiseProduct(w).dot(Xs_.col(j)) / nd
                                                    : 0.0;

      double b0 = s.beta0;
      Vector b = s.beta;
      auto upd_intercept = [&]() {
        const double d = w.dot(res) / wsum;
        b0 += d;
        res.array() -= d;
        return std::abs(d);
      };
      auto upd = [&](Eigen::Index j) {
        if (!(a[j] > 0.0)) return 0.0;
        const double old = b[j];
        const double z = Xs_.col(j).cwiseProduct(w).dot(res) / nd + a[j] * old;
        const double nw = detail::soft_threshold(z, lambda) / a[j];
        const double d = nw - old;
        if (d != 0.0) {
          b[j] = nw;
          res.noalias() -= d * Xs_.col(j);
        }
        return std::abs(d) * std::sqrt(a[j]);
      };

      const double itol = 1e-13;
      bool inner_ok = false;
      for (int sweep = 0; sweep < cfg_.max_sweeps; ++sweep) {
        double maxd = upd_intercept();
        for (Eigen::Index j = 0; j < p_; ++j)
          if (usable_[static_cast<std::size_t>(j)]) maxd = std::max(maxd, upd(j));
        if (maxd <= itol) {
          inner_ok = true;
          break;
        }
        std::vector<Eigen::Index> active;
        for (Eigen::Index j = 0; j < p_; ++j)
          if (b[j] != 0.0) active.push_back(j);
        for (int it = 0; it < cfg_.max_active_sweeps; ++it) {
          double m = upd_intercept();
          for (Eigen::Index j : active) m = std::max(m, upd(j));
          if (m <= itol) break;
        }
      }
      if (!inner_ok) throw Error(ErrorKind::NonConvergence, "penalized IRLS inner loop did not converge");

      // Backtracking on the true objective.
      double t = 1.0;
      Vector cand_eta;
      double cand_b0 = b0;
      Vector cand_b = b;
      double Fc = objective(cand_b0, cand_b, cand_eta);
      for (int h = 0; h < 40 && !(Fc <= F + 1e-15 * std::abs(F)); ++h) {
        t *= 0.5;
        cand_b0 = s.beta0 + t * (b0 - s.beta0);
        cand_b = s.beta + t * (b - s.beta);
        Fc = objective(cand_b0, cand_b, cand_eta);
      }
      if (!(Fc <= F + 1e-15 * std::abs(F))) {
        // No descent possible; the point is optimal up to rounding.
        const Vector mu2 = mean_from_eta(eta, family_);
        finish(s, Xs_.transpose() * (y - mu2) / nd);
        return;
      }
      if (t < 1.0) {
        for (Eigen::Index j = 0; j < p_; ++j)
          if (std::abs(cand_b[j]) < 1e-300) cand_b[j] = 0.0;
      }
      s.beta0 = cand_b0;
      s.beta = cand_b;
      eta = cand_eta;
      F = Fc;
      if (std::abs(s.beta0) > 1e3 || s.beta.cwiseAbs().maxCoeff() > 1e3)
        throw Error(ErrorKind::Separation, "penalized GLM coefficients diverging");
    }
    throw Error(ErrorKind::NonConvergence, "penalized IRLS outer cap reached");
  }

  // Linear family only. Between knots the path is affine in lambda: on the
  // active set S with signs s, beta_S = G_SS^{-1}(c_S - lambda s) and every
  // gradient is affine. Solves |g_j(lambda)| = lambda for j outside A.
  std::optional<double> affine_entry(const Prepared& r, const LassoSolution& hi, const IndexSet& A,
                                     double lo, double hi_lambda) const {
    const IndexSet& S = hi.active_set;
    const auto k = static_cast<Eigen::Index>(S.size());
    Vector ga(p_), gb(p_);  // g_j(lambda) = ga_j + lambda * gb_j
    if (k == 0) {
      ga = r.c;
      gb.setZero();
    } else {
      Matrix Gss(k, k);
      Vector cs(k), ss(k);
      for (Eigen::Index u = 0; u < k; ++u) {
        cs[u] = r.c[S[static_cast<std::size_t>(u)]];
        ss[u] = hi.beta[S[static_cast<std::size_t>(u)]] > 0 ? 1.0 : -1.0;
        for (Eigen::Index v = 0; v < k; ++v)
          Gss(u, v) = gram_(S[static_cast<std::size_t>(u)], S[static_cast<std::size_t>(v)]);
      }
      Eigen::LDLT<Matrix> ldlt(Gss);
      if (ldlt.info() != Eigen::Success) return std::nullopt;
      const Vector u0 = ldlt.solve(cs);
      const Vector u1 = ldlt.solve(ss);
      for (Eigen::Index j = 0; j < p_; ++j) {
        double sa = 0.0, sb = 0.0;
        for (Eigen::Index u = 0; u < k; ++u) {
          const double gjs = gram_(j, S[static_cast<std::size_t>(u)]);
          sa += gjs * u0[u];
          sb += gjs * u1[u];
        }
        ga[j] = r.c[j] - sa;
        gb[j] = sb;
      }
    }
    const double slack = 1e-9 * hi_lambda;
    double best = -1.0;
    for (Eigen::Index j = 0; j < p_; ++j) {
      if (!usable_[static_cast<std::size_t>(j)] || contains(A, static_cast<int>(j))) continue;
      for (double sgn : {1.0, -1.0}) {
        // sgn * (ga + lambda gb) = lambda
        const double den = 1.0 - sgn * gb[j];
        if (std::abs(den) < 1e-14) continue;
        const double lam = sgn * ga[j] / den;
        if (lam >= lo - slack && lam <= hi_lambda + slack) best = std::max(best, lam);
      }
    }
    if (best < 0.0) return std::nullopt;
    return std::clamp(best, lo, hi_lambda);
  }

  IndexSet entering_set(const Prepared& r, const IndexSet& A, double lambda_a,
                        const LassoSolution& hi, const LassoSolution& lo) const {
    const double eval = std::min(lambda_a * (1.0 - cfg_.tie_tol), lo.lambda);
    LassoSolution s = eval == lo.lambda ? lo : solve_prepared(r, eval, &hi);
    const Vector g = family_ == Family::Linear ? Vector(r.c - gram_ * s.beta) : gradient(*r.y, s);
    IndexSet out;
    for (Eigen::Index j = 0; j < p_; ++j) {
      const int jj = static_cast<int>(j);
      if (!usable_[static_cast<std::size_t>(j)] || contains(A, jj)) continue;
      if (s.beta[j] != 0.0 || std::abs(g[j]) >= eval - cfg_.tie_tol * lambda_a) out.push_back(jj);
    }
    if (out.empty())
      for (int j : lo.active_set)
        if (!contains(A, j)) out.push_back(j);
    return out;
  }

  Family family_;
  LassoConfig cfg_;
  Eigen::Index n_, p_;
  Vector center_, scale_;
  std::vector<bool> usable_;
  Matrix Xs_;
  Matrix gram_;
};

inline LassoSolution lasso_fit(const Dataset& data, double lambda,
                               const LassoSolution* warm = nullptr, LassoConfig cfg = {}) {
  return LassoProblem(data.X, data.family, cfg).solve(data.y, lambda, warm);
}

inline LassoEntryEvent lambda_entry(const Dataset& data, const IndexSet& A, LassoConfig cfg = {}) {
  return LassoProblem(data.X, data.family, cfg).lambda_entry(data.y, A);
}

inline std::vector<LassoEntryEvent> path_entry_order(const Dataset& data, int max_steps,
                                                     double lambda_min_ratio = 1e-3) {
  LassoConfig cfg;
  cfg.lambda_min_ratio = lambda_min_ratio;
  return LassoProblem(data.X, data.family, cfg).path_entry_order(data.y, max_steps);
}

}  // namespace simcal
