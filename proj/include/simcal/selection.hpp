#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "simcal/pvalue.hpp"

namespace simcal {

enum class HaltCriterion { Thresholding, ForwardStop };
enum class HaltReason { PValueAboveAlpha, PathExhausted, MaxSteps };

inline const char* to_string(HaltCriterion c) {
  return c == HaltCriterion::Thresholding ? "threshold" : "forwardstop";
}

inline HaltCriterion parse_criterion(std::string_view s) {
  if (s == "threshold" || s == "thresholding") return HaltCriterion::Thresholding;
  if (s == "forwardstop") return HaltCriterion::ForwardStop;
  throw Error(ErrorKind::InvalidInput, "unknown halting criterion '" + std::string(s) + "'");
}

inline const char* to_string(HaltReason r) {
  switch (r) {
    case HaltReason::PValueAboveAlpha: return "p_value_above_alpha";
    case HaltReason::PathExhausted: return "path_exhausted";
    case HaltReason::MaxSteps: return "max_steps";
  }
  return "?";
}

inline constexpr double kForwardStopClamp = 1e-12;

// -log(1 - p) with 1 - p floored at 1e-12, so p = 1 maps to -log(1e-12).
inline double forwardstop_term(double p) {
  const double q = 1.0 - p;
  return q < kForwardStopClamp ? -std::log(kForwardStopClamp) : -std::log1p(-p);
}

// Running means of -log(1 - p_i); p_i is clamped to 1 - 1e-12.
inline std::vector<double> forwardstop_transform(const std::vector<double>& p_seq) {
  std::vector<double> out;
  out.reserve(p_seq.size());
  double sum = 0.0;
  for (std::size_t k = 0; k < p_seq.size(); ++k) {
    const double p = p_seq[k];
    if (!(p >= 0.0 && p <= 1.0)) throw Error(ErrorKind::InvalidInput, "p-values must lie in [0,1]");
    sum += forwardstop_term(p);
    out.push_back(sum / static_cast<double>(k + 1));
  }
  return out;
}

// Number of accepted steps under the first-exceedance rule: the procedure
// continues while the criterion statistic is <= alpha.
inline int accepted_steps(const std::vector<double>& p_seq, double alpha, HaltCriterion criterion) {
  const std::vector<double> stat =
      criterion == HaltCriterion::Thresholding ? p_seq : forwardstop_transform(p_seq);
  for (std::size_t k = 0; k < stat.size(); ++k)
    if (stat[k] > alpha) return static_cast<int>(k);
  return static_cast<int>(stat.size());
}

// Global ForwardStop rule: max{k : pFS_k <= alpha} (0 if none).
inline int forwardstop_max_rule(const std::vector<double>& p_seq, double alpha) {
  const auto fs = forwardstop_transform(p_seq);
  int best = 0;
  for (std::size_t k = 0; k < fs.size(); ++k)
    if (fs[k] <= alpha) best = static_cast<int>(k + 1);
  return best;
}

inline std::vector<int> replay_selection(const std::vector<double>& p_seq,
                                         const std::vector<double>& alpha_grid,
                                         HaltCriterion criterion) {
  std::vector<int> out;
  out.reserve(alpha_grid.size());
  for (double a : alpha_grid) out.push_back(accepted_steps(p_seq, a, criterion));
  return out;
}

struct SelectionStep {
  int step = 0;
  IndexSet entering;
  double lambda = 0.0;
  double p = 1.0;
  double pfs = 0.0;
  int exceed_count = 0;
};

struct SelectionResult {
  std::vector<int> selected;  // in order of entry
  std::vector<double> p_seq;
  std::vector<double> pfs_seq;
  std::vector<double> entry_lambdas;
  std::vector<SelectionStep> steps;  // every computed step (trace)
  HaltCriterion criterion = HaltCriterion::Thresholding;
  double alpha = 0.05;
  int halted_at_step = 0;      // number of p-values computed
  int accepted = 0;            // number of accepted steps (k-hat)
  int forwardstop_max = 0;     // k-hat_F under the global-max rule, for reference
  HaltReason reason = HaltReason::PValueAboveAlpha;
  std::optional<double> survey_alpha;
  int N = 0;
  PValueVariant variant = PValueVariant::Plus;
};

struct SelectOptions {
  double alpha = 0.05;
  HaltCriterion criterion = HaltCriterion::Thresholding;
  int N = 100;
  int max_steps = 0;  // 0: min(p, n/2)
  PValueVariant variant = PValueVariant::Plus;
  std::optional<double> survey_alpha;  // record p-values with thresholding at this level, then replay
  int jobs = 1;
};

inline void finalize_selection(SelectionResult& res) {
  res.pfs_seq = forwardstop_transform(res.p_seq);
  for (std::size_t k = 0; k < res.steps.size(); ++k) res.steps[k].pfs = res.pfs_seq[k];
  res.accepted = accepted_steps(res.p_seq, res.alpha, res.criterion);
  res.forwardstop_max = forwardstop_max_rule(res.p_seq, res.alpha);
  res.selected.clear();
  for (int k = 0; k < res.accepted; ++k)
    for (int j : res.steps[static_cast<std::size_t>(k)].entering) res.selected.push_back(j);
}

// Sequential selection: at step k test H0(A_{k-1}) and, while the halting
// statistic stays <= alpha, add the entering variables. Step k draws its
// simulations from rng.substream(k).
inline SelectionResult select(const Dataset& data, const SelectOptions& opt, const Rng& rng) {
  if (!(opt.alpha >= 0.0 && opt.alpha < 1.0)) throw Error(ErrorKind::InvalidInput, "alpha must be in [0,1)");
  if (opt.N < 1) throw Error(ErrorKind::InvalidInput, "N must be >= 1");
  if (opt.survey_alpha && !(*opt.survey_alpha > 0.0 && *opt.survey_alpha < 1.0))
    throw Error(ErrorKind::InvalidInput, "survey alpha must be in (0,1)");
  if (opt.survey_alpha && opt.criterion == HaltCriterion::Thresholding && opt.alpha > *opt.survey_alpha)
    throw Error(ErrorKind::InvalidInput, "alpha cannot exceed the survey level");

  const int max_steps = opt.max_steps > 0 ? opt.max_steps : std::max(1, std::min(data.p(), data.n() / 2));
  SimulationCalibration sc(data);
  PValueOptions popt;
  popt.N = opt.N;
  popt.variant = opt.variant;
  popt.jobs = opt.jobs;

  SelectionResult res;
  res.criterion = opt.criterion;
  res.alpha = opt.alpha;
  res.survey_alpha = opt.survey_alpha;
  res.N = opt.N;
  res.variant = opt.variant;
  res.reason = HaltReason::MaxSteps;

  // Live continuation rule; in survey mode always thresholding at the survey level.
  const HaltCriterion live_crit = opt.survey_alpha ? HaltCriterion::Thresholding : opt.criterion;
  const double live_alpha = opt.survey_alpha ? *opt.survey_alpha : opt.alpha;

  IndexSet A;
  double fs_sum = 0.0;
  for (int k = 1; k <= max_steps; ++k) {
    if (static_cast<int>(A.size()) >= data.p() || static_cast<int>(A.size()) + 2 > data.n()) {
      res.reason = HaltReason::PathExhausted;
      break;
    }
    const LassoEntryEvent ev = sc.lasso().lambda_entry(data.y, A);
    if (ev.lambda_entry <= 0.0 || ev.entering.empty()) {
      res.reason = HaltReason::PathExhausted;
      break;
    }
    const EmpiricalPValue pv = sc.p_value(A, popt, rng.substream(static_cast<std::uint64_t>(k)));

    SelectionStep st;
    st.step = k;
    st.entering = ev.entering;
    st.lambda = ev.lambda_entry;
    st.p = pv.value;
    st.exceed_count = pv.exceed_count;
    res.steps.push_back(st);
    res.p_seq.push_back(pv.value);
    res.entry_lambdas.push_back(ev.lambda_entry);
    res.halted_at_step = k;

    fs_sum += forwardstop_term(pv.value);
    const double stat = live_crit == HaltCriterion::Thresholding ? pv.value : fs_sum / k;
    if (stat > live_alpha) {
      res.reason = HaltReason::PValueAboveAlpha;
      break;
    }
    A = set_union(A, ev.entering);
  }
  finalize_selection(res);
  if (opt.survey_alpha && res.accepted < static_cast<int>(res.p_seq.size()) &&
      res.reason != HaltReason::PValueAboveAlpha)
    res.reason = HaltReason::PValueAboveAlpha;
  return res;
}

}  // namespace simcal
