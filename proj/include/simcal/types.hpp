#pragma once

#include <algorithm>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "simcal/error.hpp"

namespace simcal {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Zero-based column indices into X, kept sorted and unique.
using IndexSet = std::vector<int>;

enum class Family { Linear, Binary, Poisson };

inline const char* to_string(Family f) {
  switch (f) {
    case Family::Linear: return "linear";
    case Family::Binary: return "binary";
    case Family::Poisson: return "poisson";
  }
  return "?";
}

inline Family parse_family(std::string_view s) {
  if (s == "linear" || s == "gaussian") return Family::Linear;
  if (s == "binary" || s == "binomial" || s == "logistic") return Family::Binary;
  if (s == "poisson") return Family::Poisson;
  throw Error(ErrorKind::InvalidInput, "unknown family '" + std::string(s) + "'");
}

inline bool is_glm(Family f) { return f != Family::Linear; }

inline IndexSet normalized(IndexSet s) {
  std::sort(s.begin(), s.end());
  s.erase(std::unique(s.begin(), s.end()), s.end());
  return s;
}

inline bool contains(const IndexSet& s, int j) {
  return std::binary_search(s.begin(), s.end(), j);
}

// Complement of `s` in {0..p-1}.
inline IndexSet complement(const IndexSet& s, int p) {
  IndexSet out;
  out.reserve(static_cast<std::size_t>(p));
  for (int j = 0; j < p; ++j)
    if (!contains(s, j)) out.push_back(j);
  return out;
}

inline IndexSet set_union(const IndexSet& a, const IndexSet& b) {
  IndexSet out;
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

}  // namespace simcal
