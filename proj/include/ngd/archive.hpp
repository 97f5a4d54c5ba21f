#pragma once

// Run archives: a CSV of step records framed by '#' header lines (configuration) and a
// '# summary' block of terminal statistics. Doubles are written with %.17g so archives
// round-trip exactly.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"

namespace ngd {

inline constexpr const char* kCodeVersion = "1.0.0";
inline constexpr const char* kArchiveColumns =
    "experiment,replication,t,loss,loss_gap,proj_grad_norm,orth_grad_norm,kappa,step_size,sigma,a,beta,attempts,seed";

struct ArchiveRow {
  std::string experiment;
  int replication = 0;
  int t = 0;
  double loss = 0.0;
  double loss_gap = 0.0;
  double proj_grad_norm = 0.0;
  double orth_grad_norm = 0.0;
  double kappa = 0.0;
  double step_size = 0.0;
  double sigma = 0.0;
  double a = 0.0;
  double beta = 0.0;
  int attempts = 0;
  std::uint64_t seed = 0;
};

struct RateFit {
  double slope = 0.0;
  double first_half_slope = 0.0;
  double second_half_slope = 0.0;
  /// The local slope keeps steepening across the window (geometric rather than power-law decay).
  bool super_algebraic = false;
  int points = 0;
};

struct ArchiveSummary {
  int replications = 0;
  int diverged = 0;
  double final_loss_mean = 0.0;
  double final_loss_median = 0.0;
  double final_loss_gap_mean = 0.0;
  double final_loss_gap_median = 0.0;
  double final_loss_gap_min = 0.0;
  double final_loss_gap_max = 0.0;
  int slope_window_begin = 0;
  int slope_window_end = 0;
  double slope = std::numeric_limits<double>::quiet_NaN();
};

struct RunArchive {
  std::vector<std::pair<std::string, std::string>> header;
  std::vector<ArchiveRow> rows;
  ArchiveSummary summary;
  std::vector<std::string> events;

  /// First header value stored under `key`, or empty.
  std::string header_value(const std::string& key) const {
    for (const auto& [k, v] : header)
      if (k == key) return v;
    return {};
  }
  int replications() const {
    int r = 0;
    for (const auto& row : rows) r = std::max(r, row.replication + 1);
    return r;
  }
  int steps() const {
    int t = 0;
    for (const auto& row : rows) t = std::max(t, row.t);
    return t;
  }
  /// Rows of one replication in step order.
  std::vector<ArchiveRow> replication_rows(int r) const {
    std::vector<ArchiveRow> out;
    for (const auto& row : rows)
      if (row.replication == r) out.push_back(row);
    return out;
  }
};

inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw InvalidArgument("archive: malformed number '" + s + "'");
  return v;
}

/// Mean over replications of loss_gap at each t (index = t).
inline std::vector<double> mean_loss_gap(const RunArchive& archive) {
  const int T = archive.steps();
  std::vector<double> sum(static_cast<std::size_t>(T) + 1, 0.0);
  std::vector<int> count(static_cast<std::size_t>(T) + 1, 0);
  for (const auto& row : archive.rows) {
    sum[static_cast<std::size_t>(row.t)] += row.loss_gap;
    count[static_cast<std::size_t>(row.t)] += 1;
  }
  for (std::size_t t = 0; t < sum.size(); ++t) sum[t] = count[t] > 0 ? sum[t] / count[t] : std::numeric_limits<double>::quiet_NaN();
  return sum;
}

namespace detail {

inline double ls_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

inline double mean(const std::vector<double>& v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace detail

/// Least-squares slope of log(mean loss_gap) against log t over t in [begin, end].
inline RateFit fit_rate(const std::vector<double>& mean_gap, int begin, int end) {
  if (begin < 1 || end <= begin || end >= static_cast<int>(mean_gap.size()))
    throw InvalidArgument("fit_rate: invalid window " + std::to_string(begin) + ":" + std::to_string(end));
  std::vector<double> x, y;
  for (int t = begin; t <= end; ++t) {
    const double v = mean_gap[static_cast<std::size_t>(t)];
    if (!(v > 0.0) || !std::isfinite(v))
      throw InvalidArgument("fit_rate: invalid window, nonpositive or non-finite loss_gap at t=" + std::to_string(t));
    x.push_back(std::log(static_cast<double>(t)));
    y.push_back(std::log(v));
  }
  RateFit fit;
  fit.points = static_cast<int>(x.size());
  fit.slope = detail::ls_slope(x, y);
  if (x.size() >= 4) {
    const double mid = 0.5 * (x.front() + x.back());
    std::vector<double> x1, y1, x2, y2;
    for (std::size_t i = 0; i < x.size(); ++i) {
      (x[i] <= mid ? x1 : x2).push_back(x[i]);
      (x[i] <= mid ? y1 : y2).push_back(y[i]);
    }
    if (x1.size() >= 2 && x2.size() >= 2) {
      fit.first_half_slope = detail::ls_slope(x1, y1);
      fit.second_half_slope = detail::ls_slope(x2, y2);
      fit.super_algebraic = fit.first_half_slope < 0.0 &&
                            fit.second_half_slope < 1.5 * fit.first_half_slope - 0.1;
    }
  }
  return fit;
}

inline RateFit fit_rate(const RunArchive& archive, int begin, int end) {
  return fit_rate(mean_loss_gap(archive), begin, end);
}

/// Terminal statistics and the slope over the last decade of steps, recomputed from rows.
inline ArchiveSummary summarize(const RunArchive& archive) {
  ArchiveSummary s;
  const int T = archive.steps();
  s.replications = archive.replications();
  std::vector<double> loss, gap;
  for (const auto& row : archive.rows) {
    if (row.t != T) continue;
    loss.push_back(row.loss);
    gap.push_back(row.loss_gap);
    if (!std::isfinite(row.loss)) s.diverged += 1;
  }
  s.final_loss_mean = detail::mean(loss);
  s.final_loss_median = detail::median(loss);
  s.final_loss_gap_mean = detail::mean(gap);
  s.final_loss_gap_median = detail::median(gap);
  s.final_loss_gap_min = gap.empty() ? std::numeric_limits<double>::quiet_NaN() : *std::min_element(gap.begin(), gap.end());
  s.final_loss_gap_max = gap.empty() ? std::numeric_limits<double>::quiet_NaN() : *std::max_element(gap.begin(), gap.end());
  s.slope_window_begin = std::max(1, T / 10);
  s.slope_window_end = T;
  if (T >= 2 && s.slope_window_end > s.slope_window_begin) {
    try {
      s.slope = fit_rate(archive, s.slope_window_begin, s.slope_window_end).slope;
    } catch (const InvalidArgument&) {
      s.slope = std::numeric_limits<double>::quiet_NaN();
    }
  }
  return s;
}

inline std::vector<std::pair<std::string, std::string>> summary_fields(const ArchiveSummary& s) {
  return {{"replications", std::to_string(s.replications)},
          {"diverged", std::to_string(s.diverged)},
          {"final_loss_mean", format_double(s.final_loss_mean)},
          {"final_loss_median", format_double(s.final_loss_median)},
          {"final_loss_gap_mean", format_double(s.final_loss_gap_mean)},
          {"final_loss_gap_median", format_double(s.final_loss_gap_median)},
          {"final_loss_gap_min", format_double(s.final_loss_gap_min)},
          {"final_loss_gap_max", format_double(s.final_loss_gap_max)},
          {"slope_window", std::to_string(s.slope_window_begin) + ":" + std::to_string(s.slope_window_end)},
          {"slope", format_double(s.slope)}};
}

inline std::string format_row(const ArchiveRow& r) {
  std::string out = r.experiment;
  out += ',' + std::to_string(r.replication) + ',' + std::to_string(r.t);
  for (double v : {r.loss, r.loss_gap, r.proj_grad_norm, r.orth_grad_norm, r.kappa, r.step_size, r.sigma, r.a, r.beta})
    out += ',' + format_double(v);
  out += ',' + std::to_string(r.attempts) + ',' + std::to_string(r.seed);
  return out;
}

inline void write_archive(std::ostream& os, const RunArchive& archive) {
  for (const auto& [k, v] : archive.header) os << "# " << k << ": " << v << '\n';
  os << kArchiveColumns << '\n';
  for (const auto& row : archive.rows) os << format_row(row) << '\n';
  os << "# summary\n";
  for (const auto& [k, v] : summary_fields(archive.summary)) os << "# summary." << k << ": " << v << '\n';
  for (const auto& e : archive.events) os << "# event: " << e << '\n';
}

inline void save_archive(const std::string& path, const RunArchive& archive) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InvalidArgument("cannot open archive for writing: " + path);
  write_archive(os, archive);
}

namespace detail {

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

inline ArchiveRow parse_row(const std::string& line) {
  const auto f = split(line, ',');
  if (f.size() != 14) throw InvalidArgument("archive: expected 14 columns, got " + std::to_string(f.size()));
  ArchiveRow r;
  r.experiment = f[0];
  r.replication = std::stoi(f[1]);
  r.t = std::stoi(f[2]);
  double* fields[] = {&r.loss, &r.loss_gap, &r.proj_grad_norm, &r.orth_grad_norm, &r.kappa,
                      &r.step_size, &r.sigma, &r.a, &r.beta};
  for (int i = 0; i < 9; ++i) *fields[i] = parse_double(f[static_cast<std::size_t>(3 + i)]);
  r.attempts = std::stoi(f[12]);
  r.seed = std::stoull(f[13]);
  return r;
}

}  // namespace detail

/// Parses an archive. The stored summary is read back field by field; callers compare it
/// with summarize() to check consistency.
inline RunArchive read_archive(std::istream& is) {
  RunArchive archive;
  std::string line;
  bool columns_seen = false, in_summary = false;
  std::vector<std::pair<std::string, std::string>> stored;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      const std::string body = line.size() > 2 ? line.substr(2) : "";
      if (body == "summary") {
        in_summary = true;
        continue;
      }
      const auto colon = body.find(": ");
      if (colon == std::string::npos) continue;
      const std::string key = body.substr(0, colon), value = body.substr(colon + 2);
      if (key == "event")
        archive.events.push_back(value);
      else if (in_summary && key.rfind("summary.", 0) == 0)
        stored.emplace_back(key.substr(8), value);
      else if (!columns_seen)
        archive.header.emplace_back(key, value);
      continue;
    }
    if (!columns_seen) {
      if (line != kArchiveColumns) throw InvalidArgument("archive: unexpected column header: " + line);
      columns_seen = true;
      continue;
    }
    archive.rows.push_back(detail::parse_row(line));
  }
  if (!columns_seen) throw InvalidArgument("archive: missing column header");
  ArchiveSummary& s = archive.summary;
  for (const auto& [k, v] : stored) {
    if (k == "replications") s.replications = std::stoi(v);
    else if (k == "diverged") s.diverged = std::stoi(v);
    else if (k == "final_loss_mean") s.final_loss_mean = parse_double(v);
    else if (k == "final_loss_median") s.final_loss_median = parse_double(v);
    else if (k == "final_loss_gap_mean") s.final_loss_gap_mean = parse_double(v);
    else if (k == "final_loss_gap_median") s.final_loss_gap_median = parse_double(v);
    else if (k == "final_loss_gap_min") s.final_loss_gap_min = parse_double(v);
    else if (k == "final_loss_gap_max") s.final_loss_gap_max = parse_double(v);
    else if (k == "slope") s.slope = parse_double(v);
    else if (k == "slope_window") {
      const auto ab = detail::split(v, ':');
      if (ab.size() == 2) {
        s.slope_window_begin = std::stoi(ab[0]);
        s.slope_window_end = std::stoi(ab[1]);
      }
    }
  }
  return archive;
}

inline RunArchive load_archive(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InvalidArgument("cannot open archive: " + path);
  return read_archive(is);
}

}  // namespace ngd
