#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "simcal/model.hpp"
#include "simcal/rng.hpp"
#include "simcal/types.hpp"

namespace simcal {

// Affine map X_A b2 + (s2/s1)(y - X_A b1). When `from` is the restricted fit
// of y_sim, the restricted fit of the output is exactly `to`.
inline Vector calibrate_linear(const Vector& y_sim, const RestrictedFit& from, const RestrictedFit& to,
                               const Matrix& XA) {
  if (!from.sigma || !to.sigma)
    throw Error(ErrorKind::InvalidInput, "linear calibration needs sigma on both ends");
  if (*to.sigma < 0.0) throw Error(ErrorKind::InvalidInput, "target sigma must be >= 0");
  if (!(*from.sigma > 0.0)) throw Error(ErrorKind::DegenerateSigma, "source sigma is zero");
  if (from.beta.size() != XA.cols() || to.beta.size() != XA.cols() || y_sim.size() != XA.rows())
    throw Error(ErrorKind::InvalidInput, "calibration dimensions do not match the design");
  const double ratio = *to.sigma / *from.sigma;
  return XA * to.beta + ratio * (y_sim - XA * from.beta);
}

// E[Y2 | y1] for the one-step discrete calibration.
inline Vector onestep_target(const Vector& y1, const Vector& e1, const Vector& e2, Family family) {
  if (!is_glm(family)) throw Error(ErrorKind::InvalidInput, "one-step calibration is for GLMs");
  if (y1.size() != e1.size() || y1.size() != e2.size())
    throw Error(ErrorKind::InvalidInput, "one-step calibration dimension mismatch");
  Vector z(y1.size());
  for (Eigen::Index i = 0; i < y1.size(); ++i) {
    if (family == Family::Binary) {
      if (!(e1[i] > 0.0 && e1[i] < 1.0 && e2[i] > 0.0 && e2[i] < 1.0))
        throw Error(ErrorKind::DomainViolation, "binary means must lie in (0,1)");
      // e2 == e1 takes the downscaling branch; both give z = y1 there.
      z[i] = e2[i] <= e1[i] ? (e2[i] / e1[i]) * y1[i]
                            : 1.0 - ((1.0 - e2[i]) / (1.0 - e1[i])) * (1.0 - y1[i]);
      if (z[i] < -1e-12 || z[i] > 1.0 + 1e-12)
        throw Error(ErrorKind::DomainViolation, "calibration probability outside [0,1]");
      z[i] = std::clamp(z[i], 0.0, 1.0);
    } else {
      if (!(e1[i] > 0.0 && e2[i] > 0.0))
        throw Error(ErrorKind::DomainViolation, "poisson means must be positive");
      z[i] = (e2[i] / e1[i]) * y1[i];
    }
  }
  return z;
}

// One-step stochastic calibration: each component is replaced by a random
// integer whose conditional expectation is Z_i.
inline Vector calibrate_onestep(const Vector& y1, const Vector& e1, const Vector& e2, Family family,
                                Rng& rng) {
  const Vector z = onestep_target(y1, e1, e2, family);
  Vector y2(z.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    if (e1[i] == e2[i]) {
      y2[i] = y1[i];  // Z_i = y1_i exactly; no randomness consumed
      continue;
    }
    if (family == Family::Binary) {
      y2[i] = rng.bernoulli(z[i]);
    } else {
      const double fl = std::floor(z[i]);
      y2[i] = fl + rng.bernoulli(z[i] - fl);
    }
  }
  return y2;
}

enum class CalibrationStop { ThreeConsecutiveRejections, IterationCap };

inline const char* to_string(CalibrationStop s) {
  return s == CalibrationStop::ThreeConsecutiveRejections ? "ThreeConsecutiveRejections"
                                                          : "IterationCap";
}

struct CalibrationTrace {
  int iterations = 0;
  std::vector<double> mse_history;  // MSE of the retained vector, MSE(0) first
  int rejected_steps = 0;
  CalibrationStop terminated_by = CalibrationStop::IterationCap;
};

struct IterativeCalibration {
  Vector y;
  RestrictedFit fit;  // restricted fit of y
  CalibrationTrace trace;
};

// Repeated one-step calibration toward beta_target. A proposal whose refit
// moves X_A beta farther from X_A beta_target (or whose refit fails) is
// rejected; three consecutive rejections end the loop.
inline IterativeCalibration calibrate_iterative(const Vector& y1, const Vector& beta_target,
                                                const RestrictedModel& model, Rng& rng,
                                                int iter_cap = 100,
                                                const RestrictedFit* initial_fit = nullptr) {
  const Family family = model.family();
  if (!is_glm(family)) throw Error(ErrorKind::InvalidInput, "iterative calibration is for GLMs");
  if (beta_target.size() != model.design().cols() || !beta_target.allFinite())
    throw Error(ErrorKind::InvalidInput, "calibration target has wrong size or is not finite");
  if (iter_cap < 1) throw Error(ErrorKind::InvalidInput, "iter_cap must be >= 1");

  const Vector eta_target = model.linear_predictor(beta_target);
  const Vector e_target = mean_from_eta(eta_target, family);

  IterativeCalibration cur;
  cur.y = y1;
  cur.fit = initial_fit ? *initial_fit : model.fit(y1);
  double mse = (model.linear_predictor(cur.fit.beta) - eta_target).squaredNorm();
  cur.trace.mse_history.push_back(mse);

  int consecutive = 0;
  for (int k = 1; k <= iter_cap; ++k) {
    cur.trace.iterations = k;
    const Vector e_cur = model.mean(cur.fit.beta);
    const Vector proposal = calibrate_onestep(cur.y, e_cur, e_target, family, rng);

    bool accept = false;
    RestrictedFit refit;
    double mse_new = 0.0;
    try {
      refit = model.fit(proposal, &cur.fit.beta);
      mse_new = (model.linear_predictor(refit.beta) - eta_target).squaredNorm();
      accept = !(mse_new > mse);
    } catch (const Error&) {
      accept = false;
    }

    if (accept) {
      cur.y = proposal;
      cur.fit = std::move(refit);
      mse = mse_new;
      consecutive = 0;
    } else {
      ++cur.trace.rejected_steps;
      if (++consecutive == 3) {
        cur.trace.mse_history.push_back(mse);
        cur.trace.terminated_by = CalibrationStop::ThreeConsecutiveRejections;
        return cur;
      }
    }
    cur.trace.mse_history.push_back(mse);
  }
  cur.trace.terminated_by = CalibrationStop::IterationCap;
  return cur;
}

}  // namespace simcal
