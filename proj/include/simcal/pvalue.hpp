#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "simcal/calibration.hpp"
#include "simcal/dataset.hpp"
#include "simcal/lasso.hpp"
#include "simcal/model.hpp"
#include "simcal/parallel.hpp"
#include "simcal/rng.hpp"

namespace simcal {

enum class PValueVariant { Plain, Plus, NaiveUncalibrated };
enum class Estimand { ConditionalPValue, ApproxConditional, Unconditional };

inline const char* to_string(PValueVariant v) {
  switch (v) {
    case PValueVariant::Plain: return "plain";
    case PValueVariant::Plus: return "plus";
    case PValueVariant::NaiveUncalibrated: return "naive";
  }
  return "?";
}

inline PValueVariant parse_variant(std::string_view s) {
  if (s == "plain") return PValueVariant::Plain;
  if (s == "plus") return PValueVariant::Plus;
  if (s == "naive") return PValueVariant::NaiveUncalibrated;
  throw Error(ErrorKind::InvalidInput, "unknown p-value variant '" + std::string(s) + "'");
}

inline const char* to_string(Estimand e) {
  switch (e) {
    case Estimand::ConditionalPValue: return "conditional";
    case Estimand::ApproxConditional: return "approx_conditional";
    case Estimand::Unconditional: return "unconditional";
  }
  return "?";
}

struct EmpiricalPValue {
  double value = 1.0;
  int N = 0;
  PValueVariant variant = PValueVariant::Plain;
  double lambda_obs = 0.0;
  int exceed_count = 0;
  Estimand estimand = Estimand::ConditionalPValue;
  IndexSet entering;                    // j_A on the observed response
  std::vector<double> lambdas_simulated;
  std::optional<double> mean_calibration_mse;  // GLMs: empirical MSE of the calibrated draws

  double plain() const { return static_cast<double>(exceed_count) / N; }
  double plus() const { return static_cast<double>(exceed_count + 1) / (N + 1); }
};

struct PValueOptions {
  int N = 100;
  PValueVariant variant = PValueVariant::Plain;
  int jobs = 1;
  int calibration_iter_cap = 100;
  int max_redraws = 10;
  double tie_slack = 1e-9;  // relative; near-equal lambdas count as exceedances
};

inline double pvalue_from_count(int exceed, int N, PValueVariant v) {
  return v == PValueVariant::Plus ? static_cast<double>(exceed + 1) / (N + 1)
                                  : static_cast<double>(exceed) / N;
}

// Simulation-calibration Monte Carlo for one dataset. The standardized design
// and Gram matrix are prepared once and shared by all replicates.
class SimulationCalibration {
 public:
  explicit SimulationCalibration(const Dataset& data, LassoConfig cfg = {})
      : data_(data), lasso_(data.X, data.family, cfg) {
    validate(data_);
  }

  const LassoProblem& lasso() const { return lasso_; }
  const Dataset& data() const { return data_; }

  // Replicate l draws from master.substream(l) (and (l, attempt) on redraws).
  EmpiricalPValue p_value(const IndexSet& A_in, const PValueOptions& opt, const Rng& master) const {
    if (opt.N < 1) throw Error(ErrorKind::InvalidInput, "N must be >= 1");
    const IndexSet A = normalized(A_in);
    if (static_cast<int>(A.size()) >= data_.p())
      throw Error(ErrorKind::InvalidInput, "A must be a proper subset of the covariates");

    const Family family = data_.family;
    const bool naive = opt.variant == PValueVariant::NaiveUncalibrated;
    const RestrictedModel model(data_.X, A, family);
    const RestrictedFit obs = model.fit(data_.y);
    const double y_scale = std::max(1.0, data_.y.norm() / std::sqrt(static_cast<double>(data_.n())));
    if (family == Family::Linear && !(*obs.sigma > 1e-12 * y_scale))
      throw Error(ErrorKind::DegenerateSigma, "observed restricted fit has sigma = 0");
    const Vector obs_mean = model.mean(obs.beta);

    const LassoEntryEvent observed = lasso_.lambda_entry(data_.y, A);

    EmpiricalPValue out;
    out.N = opt.N;
    out.variant = opt.variant;
    out.lambda_obs = observed.lambda_entry;
    out.entering = observed.entering;
    out.estimand = naive ? Estimand::Unconditional
                         : (family == Family::Linear ? Estimand::ConditionalPValue
                                                     : Estimand::ApproxConditional);
    out.lambdas_simulated.assign(static_cast<std::size_t>(opt.N), 0.0);
    std::vector<double> mse(static_cast<std::size_t>(opt.N), 0.0);

    parallel_for(static_cast<std::size_t>(opt.N), opt.jobs, [&](std::size_t l) {
      try {
        double m = 0.0;
        const Vector y_l = draw(model, obs, obs_mean, naive, opt, master, l, m);
        out.lambdas_simulated[l] = lasso_.lambda_entry(y_l, A).lambda_entry;
        mse[l] = m;
      } catch (const SimulationError&) {
        throw;
      } catch (const Error& e) {
        throw SimulationError(static_cast<long>(l), e.what());
      }
    });

    const double threshold = out.lambda_obs * (1.0 - opt.tie_slack);
    int count = 0;
    for (double lam : out.lambdas_simulated)
      if (lam >= threshold) ++count;
    out.exceed_count = count;
    out.value = pvalue_from_count(count, opt.N, opt.variant);
    if (is_glm(family) && !naive) {
      double s = 0.0;
      for (double v : mse) s += v;
      out.mean_calibration_mse = s / opt.N / static_cast<double>(data_.n());
    }
    return out;
  }

 private:
  // One calibrated (or, for the naive variant, raw) null response.
  Vector draw(const RestrictedModel& model, const RestrictedFit& obs, const Vector& obs_mean,
              bool naive, const PValueOptions& opt, const Rng& master, std::size_t l,
              double& mse_out) const {
    const Family family = data_.family;
    std::string last_error = "no attempt";
    for (int attempt = 0; attempt <= opt.max_redraws; ++attempt) {
      Rng rng = attempt == 0 ? master.substream(l) : master.substream(l, static_cast<std::uint64_t>(attempt));
      Vector y_sim = simulate_from_mean(obs_mean, family, obs.sigma, rng);
      if (naive) return y_sim;

      RestrictedFit sim_fit;
      try {
        sim_fit = model.fit(y_sim);
      } catch (const Error& e) {
        last_error = e.what();
        continue;
      }
      if (family == Family::Linear) {
        if (!(*sim_fit.sigma > 1e-300)) {
          last_error = "simulated sigma is zero";
          continue;
        }
        return calibrate_linear(y_sim, sim_fit, obs, model.design());
      }
      IterativeCalibration cal =
          calibrate_iterative(y_sim, obs.beta, model, rng, opt.calibration_iter_cap, &sim_fit);
      mse_out = cal.trace.mse_history.back();
      return std::move(cal.y);
    }
    throw SimulationError(static_cast<long>(l), "redraw limit reached: " + last_error);
  }

  const Dataset& data_;
  LassoProblem lasso_;
};

inline EmpiricalPValue empirical_p_value(const Dataset& data, const IndexSet& A, int N,
                                         PValueVariant variant, const Rng& rng, int jobs = 1) {
  if (variant == PValueVariant::NaiveUncalibrated)
    throw Error(ErrorKind::InvalidInput, "use naive_p_value for the uncalibrated variant");
  PValueOptions opt;
  opt.N = N;
  opt.variant = variant;
  opt.jobs = jobs;
  return SimulationCalibration(data).p_value(A, opt, rng);
}

inline EmpiricalPValue naive_p_value(const Dataset& data, const IndexSet& A, int N, const Rng& rng,
                                     int jobs = 1) {
  PValueOptions opt;
  opt.N = N;
  opt.variant = PValueVariant::NaiveUncalibrated;
  opt.jobs = jobs;
  return SimulationCalibration(data).p_value(A, opt, rng);
}

}  // namespace simcal
