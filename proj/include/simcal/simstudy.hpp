#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "simcal/ks.hpp"
#include "simcal/parallel.hpp"
#include "simcal/pvalue.hpp"
#include "simcal/selection.hpp"

namespace simcal {

// n i.i.d. rows of N(0, Sigma) with Sigma_ij = rho^|i-j|, via the AR(1)
// recursion across columns.
inline Matrix toeplitz_design(int n, int p, double rho, Rng& rng) {
  if (!(rho >= 0.0 && rho < 1.0)) throw Error(ErrorKind::InvalidInput, "rho must be in [0,1)");
  if (n < 1 || p < 1) throw Error(ErrorKind::InvalidInput, "n and p must be positive");
  const double innov = std::sqrt(1.0 - rho * rho);
  Matrix X(n, p);
  for (int i = 0; i < n; ++i) {
    double prev = rng.normal();
    X(i, 0) = prev;
    for (int j = 1; j < p; ++j) {
      prev = rho * prev + innov * rng.normal();
      X(i, j) = prev;
    }
  }
  return X;
}

// Sample variance (divisor n-1) of E[Y|X] over the mean of Var(Y|X); the
// linear noise variance is fixed at 1.
inline double empirical_snr(const Matrix& X, const Vector& beta, double beta0, Family family) {
  if (beta.size() != X.cols()) throw Error(ErrorKind::InvalidInput, "beta length does not match X");
  const Vector eta = (X * beta).array() + beta0;
  const Vector mu = mean_from_eta(eta, family);
  const double n = static_cast<double>(mu.size());
  const double num =
      mu.maxCoeff() == mu.minCoeff() ? 0.0 : (mu.array() - mu.mean()).square().sum() / (n - 1.0);
  double den = 1.0;
  if (family == Family::Binary) den = (mu.array() * (1.0 - mu.array())).mean();
  if (family == Family::Poisson) den = mu.mean();
  return num / den;
}

// Equal coefficients on `support`, scaled by c > 0 so the empirical SNR hits
// the target. Bisection on log c over [1e-8, 1e8].
inline Vector scale_beta_to_snr(const Matrix& X, const IndexSet& support, Family family,
                                double snr_target, double intercept) {
  if (support.empty()) throw Error(ErrorKind::InvalidInput, "support must be non-empty");
  if (!(snr_target > 0.0)) throw Error(ErrorKind::InvalidInput, "snr_target must be positive");
  Vector base = Vector::Zero(X.cols());
  for (int j : support) {
    if (j < 0 || j >= X.cols()) throw Error(ErrorKind::InvalidInput, "support index outside X");
    base[j] = 1.0;
  }
  auto snr_at = [&](double log_c) {
    try {
      return empirical_snr(X, std::exp(log_c) * base, intercept, family);
    } catch (const Error&) {
      return std::numeric_limits<double>::infinity();  // overflow: beyond any finite target
    }
  };
  double lo = std::log(1e-8), hi = std::log(1e8);
  const double f_lo = snr_at(lo), f_hi = snr_at(hi);
  if (!(f_lo < snr_target && f_hi > snr_target))
    throw Error(ErrorKind::BracketFailure, "SNR target not reachable for c in [1e-8, 1e8]");

  // The bracket is checked for monotonicity on a coarse grid before bisecting.
  double prev = f_lo;
  for (int k = 1; k <= 32; ++k) {
    const double v = snr_at(lo + (hi - lo) * k / 32.0);
    if (v < prev * (1.0 - 1e-12))
      throw Error(ErrorKind::BracketFailure, "SNR is not monotone in the coefficient scale");
    prev = v;
  }
  for (int it = 0; it < 300; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double v = snr_at(mid);
    if (std::abs(v / snr_target - 1.0) < 1e-12) return std::exp(mid) * base;
    (v < snr_target ? lo : hi) = mid;
    if (hi - lo < 1e-15) break;
  }
  return std::exp(0.5 * (lo + hi)) * base;
}

// n_active distinct indices drawn uniformly from {0..p-1}, returned sorted.
inline IndexSet draw_support(int p, int n_active, Rng& rng) {
  std::vector<int> idx(static_cast<std::size_t>(p));
  for (int j = 0; j < p; ++j) idx[static_cast<std::size_t>(j)] = j;
  for (int k = 0; k < n_active; ++k) {
    const auto r = static_cast<std::size_t>(k) + rng.below(static_cast<std::uint64_t>(p - k));
    std::swap(idx[static_cast<std::size_t>(k)], idx[r]);
  }
  return normalized(IndexSet(idx.begin(), idx.begin() + n_active));
}

struct ScenarioConfig {
  int n = 200;
  int p = 50;
  double rho = 0.0;
  Family family = Family::Linear;
  int n_active = 0;
  double snr_target = 0.0;
  int N = 50;
  int n_replicates = 200;
  std::vector<double> alpha_grid = {0.05};
  double intercept = 0.0;  // beta0 on the linear-predictor scale
  std::uint64_t master_seed = 1;
  // Null study
  PValueVariant variant = PValueVariant::Plain;
  bool naive = false;  // also compute the uncalibrated p-value on each replicate
  // Selection study
  double survey_alpha = 0.95;
  double alpha = 0.05;  // headline level for the summary metrics
  HaltCriterion criterion = HaltCriterion::Thresholding;
  int max_steps = 0;
};

inline void validate(const ScenarioConfig& c) {
  auto bad = [](const std::string& m) { throw Error(ErrorKind::InvalidInput, m); };
  if (c.n < 2 || c.p < 1) bad("scenario needs n >= 2 and p >= 1");
  if (!(c.rho >= 0.0 && c.rho < 1.0)) bad("rho must be in [0,1)");
  if (c.n_active < 0 || c.n_active > c.p) bad("n_active must be in [0,p]");
  if (c.n_active + 2 > c.n) bad("n_active too large for n");
  if (!(c.snr_target >= 0.0)) bad("snr_target must be non-negative");
  if ((c.snr_target == 0.0) != (c.n_active == 0)) bad("snr_target = 0 exactly when n_active = 0");
  if (c.N < 1 || c.n_replicates < 1) bad("N and n_replicates must be positive");
  for (double a : c.alpha_grid)
    if (!(a >= 0.0 && a < 1.0)) bad("alpha grid values must be in [0,1)");
  if (!(c.survey_alpha > 0.0 && c.survey_alpha < 1.0)) bad("survey_alpha must be in (0,1)");
}

// Desk-scale defaults and a full-scale configuration.
inline ScenarioConfig desk_preset() { return ScenarioConfig{}; }
inline ScenarioConfig full_preset() {
  ScenarioConfig c;
  c.n = 1000;
  c.p = 500;
  c.N = 500;
  c.n_replicates = 500;
  return c;
}

struct ReplicateData {
  Dataset data;
  IndexSet support;
  Vector beta;
  int redraws = 0;
};

// Replicate r: design and response come from substream (r, 0); the
// simulation-calibration draws use substream (r, 1).
inline ReplicateData generate_replicate(const ScenarioConfig& c, std::size_t r, int attempt = 0) {
  Rng rng = Rng(c.master_seed).substream(r, 2 * static_cast<std::uint64_t>(attempt));
  ReplicateData out;
  Matrix X = toeplitz_design(c.n, c.p, c.rho, rng);
  out.support = draw_support(c.p, c.n_active, rng);
  out.beta = c.n_active > 0 ? scale_beta_to_snr(X, out.support, c.family, c.snr_target, c.intercept)
                            : Vector(Vector::Zero(c.p));
  const Vector eta = (X * out.beta).array() + c.intercept;
  const Vector mu = mean_from_eta(eta, c.family);
  Vector y = simulate_from_mean(mu, c.family, 1.0, rng);
  out.data = Dataset{std::move(X), std::move(y), c.family, {}};
  out.redraws = attempt;
  return out;
}

struct AlphaMetrics {
  double alpha = 0.0;
  HaltCriterion criterion = HaltCriterion::Thresholding;
  double fwer = 0.0;
  double fdr = 0.0;
  double sensitivity = 0.0;
};

struct NullReplicate {
  int replicate = 0;
  double p_value = 1.0;
  int exceed_count = 0;
  double lambda_obs = 0.0;
  std::optional<double> naive_p_value;
  int redraws = 0;
};

struct SelectionReplicate {
  int replicate = 0;
  IndexSet support;
  std::vector<double> p_seq;
  std::vector<IndexSet> entering;
  int redraws = 0;
};

struct ScenarioMetrics {
  double fwer = 0.0;
  double fdr = 0.0;
  double sensitivity = 0.0;
  std::vector<AlphaMetrics> per_alpha;
  KsResult ks_two_sided;
  KsResult ks_one_sided;  // Upper side: rejects when dominance over the uniform fails
  KsResult ks_lower;
  std::optional<KsResult> naive_ks_two_sided;
  std::optional<KsResult> naive_ks_one_sided;
  std::vector<double> replicate_p_values;
  std::vector<double> naive_p_values;
  std::vector<NullReplicate> null_replicates;
  std::vector<SelectionReplicate> selection_replicates;
};

// Generates one replicate, redrawing (up to 10 times) when the restricted
// model cannot be fitted on the generated response.
template <class Work>
auto with_redraws(const ScenarioConfig& c, std::size_t r, Work&& work) {
  std::string last;
  for (int attempt = 0; attempt <= 10; ++attempt) {
    ReplicateData rep = generate_replicate(c, r, attempt);
    try {
      return work(rep);
    } catch (const SimulationError&) {
      throw;
    } catch (const Error& e) {
      if (e.is_input_error()) throw;
      last = e.what();
    }
  }
  throw SimulationError(static_cast<long>(r), "replicate could not be generated: " + last);
}

inline void fill_null_ks(ScenarioMetrics& m) {
  m.ks_two_sided = ks_uniform(m.replicate_p_values, KsSide::TwoSided);
  m.ks_one_sided = ks_uniform(m.replicate_p_values, KsSide::Upper);
  m.ks_lower = ks_uniform(m.replicate_p_values, KsSide::Lower);
  if (!m.naive_p_values.empty()) {
    m.naive_ks_two_sided = ks_uniform(m.naive_p_values, KsSide::TwoSided);
    m.naive_ks_one_sided = ks_uniform(m.naive_p_values, KsSide::Upper);
  }
}

// Tests H0(support) on each replicate and checks the p-values for uniformity.
inline ScenarioMetrics run_null_study(const ScenarioConfig& c, int jobs = 1) {
  validate(c);
  std::vector<NullReplicate> reps(static_cast<std::size_t>(c.n_replicates));
  parallel_for(reps.size(), jobs, [&](std::size_t r) {
    reps[r] = with_redraws(c, r, [&](const ReplicateData& rep) {
      SimulationCalibration sc(rep.data);
      const Rng prng = Rng(c.master_seed).substream(r, 1);
      PValueOptions opt;
      opt.N = c.N;
      opt.variant = c.variant;
      NullReplicate out;
      out.replicate = static_cast<int>(r);
      const EmpiricalPValue pv = sc.p_value(rep.support, opt, prng);
      out.p_value = pv.value;
      out.exceed_count = pv.exceed_count;
      out.lambda_obs = pv.lambda_obs;
      if (c.naive) {
        opt.variant = PValueVariant::NaiveUncalibrated;
        out.naive_p_value = sc.p_value(rep.support, opt, prng).value;
      }
      out.redraws = rep.redraws;
      return out;
    });
  });

  ScenarioMetrics m;
  for (const auto& r : reps) {
    m.replicate_p_values.push_back(r.p_value);
    if (r.naive_p_value) m.naive_p_values.push_back(*r.naive_p_value);
  }
  m.null_replicates = std::move(reps);
  if (m.replicate_p_values.size() >= 5) fill_null_ks(m);
  return m;
}

// FWER, FDR and sensitivity from recorded selection traces; no simulation.
inline AlphaMetrics selection_metrics(const std::vector<SelectionReplicate>& reps, double alpha,
                                      HaltCriterion criterion) {
  AlphaMetrics am;
  am.alpha = alpha;
  am.criterion = criterion;
  if (reps.empty()) return am;
  double fw = 0.0, fd = 0.0, se = 0.0;
  for (const auto& r : reps) {
    const int k = accepted_steps(r.p_seq, alpha, criterion);
    int selected = 0, false_pos = 0, true_pos = 0;
    for (int s = 0; s < k; ++s) {
      for (int j : r.entering[static_cast<std::size_t>(s)]) {
        ++selected;
        if (contains(r.support, j))
          ++true_pos;
        else
          ++false_pos;
      }
    }
    if (false_pos > 0) fw += 1.0;
    if (selected > 0) fd += static_cast<double>(false_pos) / selected;
    if (!r.support.empty()) se += static_cast<double>(true_pos) / static_cast<double>(r.support.size());
  }
  const double m = static_cast<double>(reps.size());
  am.fwer = fw / m;
  am.fdr = fd / m;
  am.sensitivity = se / m;
  return am;
}

inline void fill_selection_metrics(ScenarioMetrics& m, const ScenarioConfig& c) {
  m.per_alpha.clear();
  for (HaltCriterion crit : {HaltCriterion::Thresholding, HaltCriterion::ForwardStop})
    for (double a : c.alpha_grid) m.per_alpha.push_back(selection_metrics(m.selection_replicates, a, crit));
  const AlphaMetrics head = selection_metrics(m.selection_replicates, c.alpha, c.criterion);
  m.fwer = head.fwer;
  m.fdr = head.fdr;
  m.sensitivity = head.sensitivity;
}

// Survey pass (thresholding at survey_alpha) on each replicate, then replay
// over alpha_grid for both halting criteria.
inline ScenarioMetrics run_selection_study(const ScenarioConfig& c, int jobs = 1) {
  validate(c);
  std::vector<SelectionReplicate> reps(static_cast<std::size_t>(c.n_replicates));
  parallel_for(reps.size(), jobs, [&](std::size_t r) {
    reps[r] = with_redraws(c, r, [&](const ReplicateData& rep) {
      SelectOptions opt;
      opt.alpha = std::min(c.alpha, c.survey_alpha);
      opt.criterion = HaltCriterion::Thresholding;
      opt.N = c.N;
      opt.max_steps = c.max_steps;
      opt.variant = c.variant == PValueVariant::NaiveUncalibrated ? PValueVariant::Plus : c.variant;
      opt.survey_alpha = c.survey_alpha;
      const SelectionResult res = select(rep.data, opt, Rng(c.master_seed).substream(r, 1));
      SelectionReplicate out;
      out.replicate = static_cast<int>(r);
      out.support = rep.support;
      out.p_seq = res.p_seq;
      for (const auto& st : res.steps) out.entering.push_back(st.entering);
      out.redraws = rep.redraws;
      return out;
    });
  });
  ScenarioMetrics m;
  m.selection_replicates = std::move(reps);
  fill_selection_metrics(m, c);
  return m;
}

}  // namespace simcal
