#pragma once

#include <span>
#include <vector>

namespace hge::stats {

double mean(std::span<const double> x);
/// Population standard deviation.
double stddev(std::span<const double> x);
double median(std::span<const double> x);
/// Linear interpolation between closest ranks, q in [0, 1].
double quantile(std::span<const double> x, double q);
double iqr(std::span<const double> x);
/// Median absolute deviation from the median, unscaled.
double mad(std::span<const double> x);
double pearson(std::span<const double> x, std::span<const double> y);
/// Pearson correlation of average ranks (ties share the mean rank).
double spearman(std::span<const double> x, std::span<const double> y);
std::vector<double> ranks(std::span<const double> x);

struct Summary {
  double mean = 0.0;
  double std = 0.0;
  double median = 0.0;
  double iqr = 0.0;
  double mad = 0.0;
};

Summary summarize(std::span<const double> x);

}  // namespace hge::stats
