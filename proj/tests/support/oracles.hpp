#pragma once

// Reference implementations the library is checked against. They share no
// code with the library beyond the plain data types.

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <numeric>
#include <queue>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "botverse/memory.hpp"

namespace oracle {

using botverse::MemoryItem;
using botverse::MemoryParams;
using botverse::VirtualTime;

inline double memory_score(const MemoryItem& m, VirtualTime now, const MemoryParams& p) {
  const double age = static_cast<double>(now.ms - m.observed_at.ms) / 1000.0;
  const double rec = std::pow(2.0, -age / p.half_life_s);
  const double e = static_cast<double>(m.likes_seen) + p.repost_weight * static_cast<double>(m.reposts_seen);
  double imp = 0.0;
  if (e > 0) imp = std::min(1.0, std::log(1.0 + e) / std::log(1.0 + static_cast<double>(p.engagement_cap)));
  return p.alpha * rec + p.beta * imp;
}

// Scores everything, sorts the whole list, keeps the first k.
inline std::vector<std::string> top_k(const std::vector<MemoryItem>& items, VirtualTime now, std::size_t k,
                                      const MemoryParams& p) {
  struct Row {
    double s;
    std::int64_t at;
    std::string id;
  };
  std::vector<Row> rows;
  for (const auto& m : items) rows.push_back({memory_score(m, now, p), m.observed_at.ms, m.post_id});
  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    if (a.s != b.s) return a.s > b.s;
    if (a.at != b.at) return a.at > b.at;
    return a.id < b.id;
  });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < std::min(k, rows.size()); ++i) out.push_back(rows[i].id);
  return out;
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

struct KsResult {
  double d = 0;
  double critical = 0;
  bool reject = false;
};

// Two-sample Kolmogorov-Smirnov with the asymptotic critical value
// c(alpha) * sqrt((n + m) / (n * m)), c(alpha) = sqrt(-ln(alpha / 2) / 2).
inline KsResult ks_two_sample(std::vector<double> a, std::vector<double> b, double alpha) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double n = static_cast<double>(a.size()), m = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / n - static_cast<double>(j) / m));
  }
  KsResult r;
  r.d = d;
  r.critical = std::sqrt(-std::log(alpha / 2.0) / 2.0) * std::sqrt((n + m) / (n * m));
  r.reject = d > r.critical;
  return r;
}

// Draws from the configured lognormal with the standard library, not the
// simulator's generator.
inline std::vector<double> lognormal_reference(double mu, double sigma, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::lognormal_distribution<double> dist(mu, sigma);
  std::vector<double> out(n);
  for (auto& v : out) v = dist(gen);
  return out;
}

inline double coefficient_of_variation(const std::vector<double>& x) {
  const double n = static_cast<double>(x.size());
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double var = 0;
  for (double v : x) var += (v - mean) * (v - mean);
  return std::sqrt(var / (n - 1)) / mean;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

// Cascade depth per root, from the edge list alone: a reply/repost edge
// whose target and produced post both carry `narrative` links parent to
// child. Roots are parents that are never children. Depth counts nodes.
inline std::map<std::string, std::int64_t> csv_cascade_depths(std::istream& csv, const std::string& narrative) {
  std::string line;
  std::getline(csv, line);
  const auto header = split_csv_line(line);
  auto col = [&](const std::string& name) {
    return static_cast<std::size_t>(std::find(header.begin(), header.end(), name) - header.begin());
  };
  const std::size_t c_kind = col("kind"), c_target = col("target_post"), c_produced = col("produced_post"),
                    c_tn = col("target_narrative"), c_pn = col("produced_narrative");
  std::map<std::string, std::vector<std::string>> children;
  std::set<std::string> is_child;
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f[c_kind] == "like" || f[c_produced].empty()) continue;
    if (f[c_tn] != narrative || f[c_pn] != narrative) continue;
    children[f[c_target]].push_back(f[c_produced]);
    is_child.insert(f[c_produced]);
  }
  std::map<std::string, std::int64_t> depths;
  for (const auto& [root, kids] : children) {
    if (is_child.count(root)) continue;
    std::queue<std::pair<std::string, std::int64_t>> q;
    q.push({root, 1});
    std::int64_t best = 1;
    while (!q.empty()) {
      auto [node, d] = q.front();
      q.pop();
      best = std::max(best, d);
      auto it = children.find(node);
      if (it == children.end()) continue;
      for (const auto& k : it->second) q.push({k, d + 1});
    }
    depths[root] = best;
  }
  return depths;
}

}  // namespace oracle
