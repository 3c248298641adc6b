#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "simcal/error.hpp"

namespace simcal {

// TwoSided: sup |ECDF(t) - t|.
// Upper: sup (ECDF(t) - t), large when samples sit below the uniform, i.e.
//   when stochastic dominance over the uniform fails.
// Lower: sup (t - ECDF(t)), large when samples sit above the uniform.
enum class KsSide { TwoSided, Upper, Lower };

struct KsResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

// Asymptotic Kolmogorov survival function P(K > x).
inline double kolmogorov_survival(double x) {
  if (x <= 0.0) return 1.0;
  if (x < 1.18) {
    // Small-x form converges fast where the alternating series does not.
    const double pi = std::numbers::pi;
    double s = 0.0;
    for (int k = 1; k <= 20; ++k) {
      const double t = (2 * k - 1) * pi / x;
      s += std::exp(-t * t / 8.0);
    }
    return std::clamp(1.0 - std::sqrt(2.0 * pi) / x * s, 0.0, 1.0);
  }
  double s = 0.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = std::exp(-2.0 * k * k * x * x);
    s += (k % 2 == 1 ? term : -term);
    if (term < 1e-300) break;
  }
  return std::clamp(2.0 * s, 0.0, 1.0);
}

inline KsResult ks_uniform(std::vector<double> samples, KsSide side = KsSide::TwoSided) {
  const std::size_t m = samples.size();
  if (m < 5) throw Error(ErrorKind::TooFewSamples, "K-S test needs at least 5 samples");
  for (double v : samples)
    if (!(v >= 0.0 && v <= 1.0)) throw Error(ErrorKind::InvalidInput, "K-S samples must lie in [0,1]");
  std::sort(samples.begin(), samples.end());

  const double md = static_cast<double>(m);
  double d_upper = 0.0, d_lower = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    d_upper = std::max(d_upper, static_cast<double>(i + 1) / md - samples[i]);
    d_lower = std::max(d_lower, samples[i] - static_cast<double>(i) / md);
  }

  KsResult r;
  switch (side) {
    case KsSide::TwoSided: {
      r.statistic = std::max(d_upper, d_lower);
      const double sm = std::sqrt(md);
      r.p_value = kolmogorov_survival((sm + 0.12 + 0.11 / sm) * r.statistic);
      break;
    }
    case KsSide::Upper:
      r.statistic = d_upper;
      r.p_value = std::min(1.0, std::exp(-2.0 * md * d_upper * d_upper));
      break;
    case KsSide::Lower:
      r.statistic = d_lower;
      r.p_value = std::min(1.0, std::exp(-2.0 * md * d_lower * d_lower));
      break;
  }
  return r;
}

}  // namespace simcal
