#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "skild/errors.hpp"

namespace skild {

// Append-only scalar table keyed by env_steps. Rows are written with a fixed
// numeric format so identical runs produce byte-identical files.
struct MetricsLog {
  std::vector<std::string> columns;  // first column is env_steps
  std::vector<std::vector<double>> rows;

  void append(const std::vector<double>& row) {
    if (row.size() != columns.size()) raise(ErrorKind::ShapeMismatch, "metrics row width");
    if (!rows.empty() && row[0] <= rows.back()[0])
      raise(ErrorKind::InvalidConfig, "env_steps must be strictly increasing");
    for (double v : row)
      if (!std::isfinite(v)) raise(ErrorKind::NonFiniteLoss, "NaN/Inf in metrics row");
    rows.push_back(row);
  }

  std::string to_csv() const {
    std::string out;
    for (size_t j = 0; j < columns.size(); ++j) {
      out += columns[j];
      out += j + 1 < columns.size() ? ',' : '\n';
    }
    char buf[64];
    for (const auto& row : rows) {
      for (size_t j = 0; j < row.size(); ++j) {
        std::snprintf(buf, sizeof(buf), "%.10g", row[j]);
        out += buf;
        out += j + 1 < row.size() ? ',' : '\n';
      }
    }
    return out;
  }

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) raise(ErrorKind::IoError, "cannot write " + path);
    os << to_csv();
  }

  static MetricsLog load(const std::string& path) {
    std::ifstream is(path);
    if (!is) raise(ErrorKind::IoError, "cannot read " + path);
    MetricsLog log;
    std::string line;
    if (!std::getline(is, line)) raise(ErrorKind::IoError, "empty metrics file " + path);
    std::istringstream hs(line);
    std::string cell;
    while (std::getline(hs, cell, ',')) log.columns.push_back(cell);
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      std::istringstream ls(line);
      std::vector<double> row;
      while (std::getline(ls, cell, ',')) row.push_back(std::stod(cell));
      log.append(row);
    }
    return log;
  }

  // Linear interpolation of a column at a query env_steps value (clamped to
  // the recorded range).
  double interpolate(size_t col, double env_steps) const {
    if (rows.empty()) raise(ErrorKind::EmptyInput, "empty metrics log");
    if (env_steps <= rows.front()[0]) return rows.front()[col];
    if (env_steps >= rows.back()[0]) return rows.back()[col];
    for (size_t i = 1; i < rows.size(); ++i) {
      if (rows[i][0] >= env_steps) {
        const double x0 = rows[i - 1][0], x1 = rows[i][0];
        const double y0 = rows[i - 1][col], y1 = rows[i][col];
        const double w = (env_steps - x0) / (x1 - x0);
        return y0 + w * (y1 - y0);
      }
    }
    return rows.back()[col];
  }

  // First env_steps at which a column reaches the threshold; -1 if never.
  double steps_to_reach(size_t col, double threshold) const {
    for (const auto& row : rows)
      if (row[col] >= threshold) return row[0];
    return -1.0;
  }
};

struct AggregateCurves {
  std::vector<std::string> columns;  // without env_steps
  std::vector<double> grid;          // env_steps
  std::vector<std::vector<double>> mean;  // [grid][col]
  std::vector<std::vector<double>> stdev; // population convention
};

// Mean/std curves across seeds on a common env_steps grid (the first log's
// grid clipped to the range every log covers), linearly interpolated.
inline AggregateCurves aggregate_seeds(const std::vector<MetricsLog>& logs) {
  if (logs.empty()) raise(ErrorKind::EmptyInput, "no logs to aggregate");
  AggregateCurves agg;
  agg.columns.assign(logs[0].columns.begin() + 1, logs[0].columns.end());
  double lo = logs[0].rows.front()[0], hi = logs[0].rows.back()[0];
  for (const MetricsLog& log : logs) {
    if (log.columns != logs[0].columns) raise(ErrorKind::ShapeMismatch, "column mismatch");
    lo = std::max(lo, log.rows.front()[0]);
    hi = std::min(hi, log.rows.back()[0]);
  }
  for (const auto& row : logs[0].rows)
    if (row[0] >= lo && row[0] <= hi) agg.grid.push_back(row[0]);
  if (agg.grid.empty()) agg.grid.push_back(lo);

  const size_t ncol = agg.columns.size();
  agg.mean.assign(agg.grid.size(), std::vector<double>(ncol, 0.0));
  agg.stdev.assign(agg.grid.size(), std::vector<double>(ncol, 0.0));
  for (size_t gi = 0; gi < agg.grid.size(); ++gi) {
    for (size_t c = 0; c < ncol; ++c) {
      double sum = 0.0, sum2 = 0.0;
      for (const MetricsLog& log : logs) {
        const double v = log.interpolate(c + 1, agg.grid[gi]);
        sum += v;
        sum2 += v * v;
      }
      const double n = static_cast<double>(logs.size());
      const double m = sum / n;
      agg.mean[gi][c] = m;
      const double var = sum2 / n - m * m;
      agg.stdev[gi][c] = var > 0.0 ? std::sqrt(var) : 0.0;
    }
  }
  return agg;
}

inline void save_aggregate(const AggregateCurves& agg, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) raise(ErrorKind::IoError, "cannot write " + path);
  os << "env_steps";
  for (const auto& c : agg.columns) os << ',' << c << "_mean," << c << "_std";
  os << '\n';
  char buf[64];
  for (size_t gi = 0; gi < agg.grid.size(); ++gi) {
    std::snprintf(buf, sizeof(buf), "%.10g", agg.grid[gi]);
    os << buf;
    for (size_t c = 0; c < agg.columns.size(); ++c) {
      std::snprintf(buf, sizeof(buf), ",%.10g", agg.mean[gi][c]);
      os << buf;
      std::snprintf(buf, sizeof(buf), ",%.10g", agg.stdev[gi][c]);
      os << buf;
    }
    os << '\n';
  }
}

inline double median(std::vector<double> v) {
  if (v.empty()) raise(ErrorKind::EmptyInput, "median of empty set");
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace skild
