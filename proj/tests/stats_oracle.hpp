#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "hge/random.hpp"
#include "hge/stats.hpp"

namespace oracle {

// Textbook definitions in long double: medians from a fully sorted copy,
// ranks by counting, correlation as the mean product of z-scores.

inline long double sorted_quantile(std::vector<double> v, long double q) {
  std::sort(v.begin(), v.end());
  const long double h = (static_cast<long double>(v.size()) - 1) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= v.size()) return v.back();
  return v[lo] + (h - static_cast<long double>(lo)) * (static_cast<long double>(v[lo + 1]) - v[lo]);
}

inline long double median(const std::vector<double>& v) {
  std::vector<double> s = v;
  std::sort(s.begin(), s.end());
  const std::size_t n = s.size();
  return n % 2 ? s[n / 2] : (static_cast<long double>(s[n / 2 - 1]) + s[n / 2]) / 2;
}

inline long double mad(const std::vector<double>& v) {
  const long double m = median(v);
  std::vector<double> d;
  for (double x : v) d.push_back(static_cast<double>(std::fabs(x - m)));
  return median(d);
}

inline long double iqr(const std::vector<double>& v) { return sorted_quantile(v, 0.75L) - sorted_quantile(v, 0.25L); }

inline long double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const auto n = static_cast<long double>(x.size());
  long double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  long double vx = 0, vy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    vx += (x[i] - mx) * (x[i] - mx);
    vy += (y[i] - my) * (y[i] - my);
  }
  const long double sx = std::sqrt(vx / n), sy = std::sqrt(vy / n);
  long double r = 0;
  for (std::size_t i = 0; i < x.size(); ++i) r += ((x[i] - mx) / sx) * ((y[i] - my) / sy);
  return r / n;
}

inline std::vector<double> counting_ranks(const std::vector<double>& x) {
  std::vector<double> r;
  for (double a : x) {
    int less = 0, equal = 0;
    for (double b : x) {
      less += b < a ? 1 : 0;
      equal += b == a ? 1 : 0;
    }
    r.push_back(1.0 + less + (equal - 1) / 2.0);
  }
  return r;
}

inline long double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  return pearson(counting_ranks(x), counting_ranks(y));
}

struct StatsDeviation {
  double pearson = 0, spearman = 0, mad = 0, iqr = 0, median = 0;
  double max() const { return std::max({pearson, spearman, mad, iqr, median}); }
};

// Largest absolute disagreement between the library and the oracles over
// `vectors` random vector pairs; every fourth pair is rounded to force ties.
inline StatsDeviation compare_stats(std::uint64_t seed, int vectors) {
  hge::Rng rng(seed);
  StatsDeviation d;
  auto worse = [](double& slot, long double a, long double b) {
    slot = std::max(slot, static_cast<double>(std::fabs(a - b)));
  };
  for (int i = 0; i < vectors; ++i) {
    const int n = 2 + static_cast<int>(rng.below(60));
    std::vector<double> x, y;
    const double coupling = rng.uniform(-1, 1);
    for (int k = 0; k < n; ++k) {
      const double a = rng.normal() * rng.uniform(0.1, 10);
      x.push_back(a);
      y.push_back(coupling * a + rng.normal());
    }
    if (i % 4 == 0)
      for (auto* v : {&x, &y})
        for (double& e : *v) e = std::round(e);
    worse(d.median, hge::stats::median(x), median(x));
    worse(d.mad, hge::stats::mad(x), mad(x));
    worse(d.iqr, hge::stats::iqr(x), iqr(x));
    const bool flat = std::all_of(x.begin(), x.end(), [&](double e) { return e == x[0]; }) ||
                      std::all_of(y.begin(), y.end(), [&](double e) { return e == y[0]; });
    if (flat) continue;
    worse(d.pearson, hge::stats::pearson(x, y), pearson(x, y));
    worse(d.spearman, hge::stats::spearman(x, y), spearman(x, y));
  }
  return d;
}

}  // namespace oracle
