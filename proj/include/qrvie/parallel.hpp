#pragma once

// Static greedy load balancing: items sorted by weight (heaviest first,
// original order on ties) are assigned one by one to the least-loaded worker
// (lowest index on ties). The assignment is computed once and reused; worker
// threads never rebalance.

#include <algorithm>
#include <cmath>
#include <exception>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <thread>
#include <vector>

namespace qrvie {

struct Schedule {
  int n_workers = 1;
  std::vector<double> weights;          // one entry per item
  std::vector<std::vector<int>> items;  // per worker, in execution order
  std::vector<double> loads;            // per worker

  double max_load() const {
    return loads.empty() ? 0.0 : *std::max_element(loads.begin(), loads.end());
  }
  double min_load() const {
    return loads.empty() ? 0.0 : *std::min_element(loads.begin(), loads.end());
  }
  double total_load() const {
    return std::accumulate(loads.begin(), loads.end(), 0.0);
  }
};

inline Schedule make_schedule(const std::vector<double>& weights,
                              int n_workers) {
  if (n_workers < 1)
    throw std::invalid_argument("worker count must be positive");
  for (double w : weights)
    if (!(w >= 0.0)) throw std::invalid_argument("item weights must be nonnegative");

  Schedule s;
  s.n_workers = n_workers;
  s.weights = weights;
  s.items.assign(n_workers, {});
  s.loads.assign(n_workers, 0.0);

  std::vector<int> order(weights.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return weights[a] > weights[b]; });
  for (int idx : order) {
    int best = 0;
    for (int w = 1; w < n_workers; ++w)
      if (s.loads[w] < s.loads[best]) best = w;
    s.items[best].push_back(idx);
    s.loads[best] += weights[idx];
  }
  return s;
}

struct BalanceStats {
  double mean = 0.0;
  double stddev = 0.0;    // population standard deviation
  double ratio = 0.0;     // stddev / mean
  bool applicable = false;  // false when the mean load is zero
};

inline BalanceStats balance_stats(const std::vector<double>& loads) {
  BalanceStats st;
  if (loads.empty()) return st;
  const double n = static_cast<double>(loads.size());
  st.mean = std::accumulate(loads.begin(), loads.end(), 0.0) / n;
  double var = 0.0;
  for (double l : loads) var += (l - st.mean) * (l - st.mean);
  st.stddev = std::sqrt(var / n);
  if (st.mean != 0.0) {
    st.ratio = st.stddev / st.mean;
    st.applicable = true;
  }
  return st;
}

// Execute fn(item) for every scheduled item; each worker walks its own list,
// worker 0 on the calling thread. The first exception wins and is rethrown
// after all workers join.
inline void run_on_schedule(const Schedule& s,
                            const std::function<void(int)>& fn) {
  int active = 0;
  for (const auto& list : s.items)
    if (!list.empty()) ++active;
  if (s.n_workers == 1 || active <= 1) {
    for (const auto& list : s.items)
      for (int item : list) fn(item);
    return;
  }

  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(s.n_workers);
  auto work = [&](int w) {
    try {
      for (int item : s.items[w]) fn(item);
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  for (int w = 1; w < s.n_workers; ++w) pool.emplace_back(work, w);
  work(0);
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace qrvie
