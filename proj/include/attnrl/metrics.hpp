// Copyright 2026 The attnrl Authors
// SPDX-License-Identifier: Apache-2.0
//
// Episode statistics, metrics rows and the CSV log.

#pragma once

#include <cstdint>
#include <deque>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace attnrl {

// Moving averages over the most recent `capacity` episodes.
class MetricsWindow {
 public:
  explicit MetricsWindow(std::size_t capacity = 100);

  void add(double episode_return, std::size_t episode_length);
  double mean_return() const;  // 0 when empty
  double mean_length() const;
  std::size_t size() const { return returns_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::uint64_t total_episodes() const { return total_; }

 private:
  std::size_t capacity_;
  std::deque<double> returns_;
  std::deque<double> lengths_;
  std::uint64_t total_ = 0;
};

struct MetricsRow {
  std::uint64_t step = 0;
  std::uint64_t episodes = 0;
  double mean_return_100 = 0.0;
  double mean_length_100 = 0.0;
  double sps = 0.0;
  double loss_pg = 0.0;
  double loss_baseline = 0.0;
  double loss_entropy = 0.0;
  std::uint64_t parameter_count = 0;
  double inference_ms = 0.0;
};

inline constexpr const char* kMetricsHeader =
    "step,episodes,mean_return_100,mean_length_100,sps,loss_pg,loss_baseline,loss_entropy,parameter_count,"
    "inference_ms";

// Round-trip exact formatting (17 significant digits).
std::string format_metrics_row(const MetricsRow& row);
MetricsRow parse_metrics_row(const std::string& line);
void write_metrics_csv(std::ostream& out, const std::vector<MetricsRow>& rows);
std::vector<MetricsRow> read_metrics_csv(std::istream& in);

// Steps per second; zero elapsed time yields 0.
double steps_per_second(std::uint64_t steps, double elapsed_seconds);

// Trapezoidal integral of (step, value) divided by the step span.
double auc(const std::vector<std::pair<double, double>>& curve);

}  // namespace attnrl
