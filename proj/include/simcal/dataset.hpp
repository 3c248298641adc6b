#pragma once

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "simcal/types.hpp"

namespace simcal {

struct Dataset {
  Matrix X;
  Vector y;
  Family family = Family::Linear;
  std::vector<std::string> column_names;

  int n() const { return static_cast<int>(X.rows()); }
  int p() const { return static_cast<int>(X.cols()); }
};

// Checks a response vector against the family's support.
inline void validate_response(const Vector& y, Family family) {
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double v = y[i];
    if (!std::isfinite(v))
      throw Error(ErrorKind::InvalidInput, "non-finite response at row " + std::to_string(i));
    if (family == Family::Binary && v != 0.0 && v != 1.0)
      throw Error(ErrorKind::InvalidInput,
                  "binary response must be 0/1 (row " + std::to_string(i) + ")");
    if (family == Family::Poisson && (v < 0.0 || v != std::floor(v)))
      throw Error(ErrorKind::InvalidInput,
                  "poisson response must be a non-negative integer (row " + std::to_string(i) + ")");
  }
}

inline void validate(const Dataset& d) {
  if (d.n() < 2) throw Error(ErrorKind::InvalidInput, "need at least 2 observations");
  if (d.p() < 1) throw Error(ErrorKind::InvalidInput, "need at least 1 covariate");
  if (d.y.size() != d.X.rows())
    throw Error(ErrorKind::InvalidInput, "response length does not match design rows");
  if (!d.X.allFinite()) throw Error(ErrorKind::InvalidInput, "design has non-finite entries");
  if (!d.column_names.empty() && static_cast<int>(d.column_names.size()) != d.p())
    throw Error(ErrorKind::InvalidInput, "column_names length does not match p");
  validate_response(d.y, d.family);
}

inline Dataset make_dataset(Matrix X, Vector y, Family family,
                            std::vector<std::string> names = {}) {
  Dataset d{std::move(X), std::move(y), family, std::move(names)};
  validate(d);
  return d;
}

namespace csv {

inline std::vector<std::string> split_row(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    std::size_t b = 0;
    while (b < cell.size() && cell[b] == ' ') ++b;
    cell = cell.substr(b);
    if (cell.size() >= 2 && cell.front() == '"' && cell.back() == '"')
      cell = cell.substr(1, cell.size() - 2);
    out.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double parse_number(const std::string& s, std::size_t row, const std::string& col) {
  if (s.empty())
    throw Error(ErrorKind::InvalidInput,
                "empty cell at row " + std::to_string(row) + ", column '" + col + "'");
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0')
    throw Error(ErrorKind::InvalidInput, "non-numeric cell '" + s + "' at row " +
                                             std::to_string(row) + ", column '" + col + "'");
  return v;
}

// Header row required. `response` names the y column; every other column
// becomes a covariate, in file order.
inline Dataset read_dataset(std::istream& in, const std::string& response, Family family) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::InvalidInput, "empty CSV");
  const auto header = split_row(line);
  int ycol = -1;
  for (std::size_t c = 0; c < header.size(); ++c)
    if (header[c] == response) ycol = static_cast<int>(c);
  if (ycol < 0) throw Error(ErrorKind::InvalidInput, "response column '" + response + "' not found");

  std::vector<std::string> names;
  for (std::size_t c = 0; c < header.size(); ++c)
    if (static_cast<int>(c) != ycol) names.push_back(header[c]);

  std::vector<std::vector<double>> rows;
  std::size_t rowno = 1;
  while (std::getline(in, line)) {
    ++rowno;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_row(line);
    if (cells.size() != header.size())
      throw Error(ErrorKind::InvalidInput, "row " + std::to_string(rowno) + " has " +
                                               std::to_string(cells.size()) + " cells, expected " +
                                               std::to_string(header.size()));
    std::vector<double> r(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c) r[c] = parse_number(cells[c], rowno, header[c]);
    rows.push_back(std::move(r));
  }

  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto p = static_cast<Eigen::Index>(names.size());
  Matrix X(n, p);
  Vector y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index k = 0;
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (static_cast<int>(c) == ycol)
        y[i] = rows[static_cast<std::size_t>(i)][c];
      else
        X(i, k++) = rows[static_cast<std::size_t>(i)][c];
    }
  }
  return make_dataset(std::move(X), std::move(y), family, std::move(names));
}

inline Dataset read_dataset(const std::string& path, const std::string& response, Family family) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::InvalidInput, "cannot open '" + path + "'");
  return read_dataset(in, response, family);
}

}  // namespace csv
}  // namespace simcal
