// Copyright 2026 The attnrl Authors
// SPDX-License-Identifier: Apache-2.0

#include "attnrl/metrics.hpp"

#include <cstdio>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "attnrl/tensor.hpp"

namespace attnrl {

MetricsWindow::MetricsWindow(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw ContractError("metrics window: capacity must be positive");
}

void MetricsWindow::add(double episode_return, std::size_t episode_length) {
  returns_.push_back(episode_return);
  lengths_.push_back(static_cast<double>(episode_length));
  if (returns_.size() > capacity_) {
    returns_.pop_front();
    lengths_.pop_front();
  }
  ++total_;
}

double MetricsWindow::mean_return() const {
  if (returns_.empty()) return 0.0;
  return std::accumulate(returns_.begin(), returns_.end(), 0.0) / static_cast<double>(returns_.size());
}

double MetricsWindow::mean_length() const {
  if (lengths_.empty()) return 0.0;
  return std::accumulate(lengths_.begin(), lengths_.end(), 0.0) / static_cast<double>(lengths_.size());
}

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string format_metrics_row(const MetricsRow& r) {
  std::ostringstream s;
  s << r.step << ',' << r.episodes << ',' << num(r.mean_return_100) << ',' << num(r.mean_length_100) << ','
    << num(r.sps) << ',' << num(r.loss_pg) << ',' << num(r.loss_baseline) << ',' << num(r.loss_entropy) << ','
    << r.parameter_count << ',' << num(r.inference_ms);
  return s.str();
}

MetricsRow parse_metrics_row(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream s(line);
  for (std::string cell; std::getline(s, cell, ',');) cells.push_back(cell);
  if (cells.size() != 10) throw ContractError("metrics row: expected 10 columns, got " + std::to_string(cells.size()));
  try {
    MetricsRow r;
    r.step = std::stoull(cells[0]);
    r.episodes = std::stoull(cells[1]);
    r.mean_return_100 = std::stod(cells[2]);
    r.mean_length_100 = std::stod(cells[3]);
    r.sps = std::stod(cells[4]);
    r.loss_pg = std::stod(cells[5]);
    r.loss_baseline = std::stod(cells[6]);
    r.loss_entropy = std::stod(cells[7]);
    r.parameter_count = std::stoull(cells[8]);
    r.inference_ms = std::stod(cells[9]);
    return r;
  } catch (const std::logic_error&) {
    throw ContractError("metrics row: non-numeric cell in '" + line + "'");
  }
}

void write_metrics_csv(std::ostream& out, const std::vector<MetricsRow>& rows) {
  out << kMetricsHeader << '\n';
  for (const auto& r : rows) out << format_metrics_row(r) << '\n';
}

std::vector<MetricsRow> read_metrics_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) throw ContractError("metrics csv: bad header");
  std::vector<MetricsRow> rows;
  while (std::getline(in, line))
    if (!line.empty()) rows.push_back(parse_metrics_row(line));
  return rows;
}

double steps_per_second(std::uint64_t steps, double elapsed_seconds) {
  return elapsed_seconds > 0.0 ? static_cast<double>(steps) / elapsed_seconds : 0.0;
}

double auc(const std::vector<std::pair<double, double>>& curve) {
  if (curve.size() < 2) throw ContractError("auc: needs at least 2 points, got " + std::to_string(curve.size()));
  double area = 0.0;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    const double dx = curve[i].first - curve[i - 1].first;
    if (dx < 0) throw ContractError("auc: steps must not decrease");
    area += 0.5 * dx * (curve[i].second + curve[i - 1].second);
  }
  const double span = curve.back().first - curve.front().first;
  if (span <= 0) throw ContractError("auc: zero step span");
  return area / span;
}

}  // namespace attnrl
