#pragma once

#include <algorithm>
#include <chrono>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "symran/core/errors.hpp"
#include "symran/env/kpm.hpp"

namespace symran {

/// A decision function under test; the returned value is folded into a sink
/// so the call cannot be optimized away.
struct TimedPolicy {
  std::string name;
  std::function<double(const KpmState&)> decide;
};

struct LatencyResult {
  std::string name;
  double median_ns = 0.0;               // median over repetitions of the per-decision median
  std::vector<double> per_rep_median_ns;
};

struct LatencyReport {
  std::vector<LatencyResult> results;
  bool low_confidence = false;  // fewer than 3 repetitions

  const LatencyResult& at(const std::string& name) const {
    for (const auto& r : results)
      if (r.name == name) return r;
    throw InvalidArgument("latency report has no policy '" + name + "'");
  }

  /// How many times faster `fast` is than `slow`.
  double speedup(const std::string& slow, const std::string& fast) const {
    return at(slow).median_ns / at(fast).median_ns;
  }
};

namespace detail {

inline double median_inplace(std::vector<double>& xs) {
  require(!xs.empty(), "median: empty sample");
  const std::size_t m = xs.size() / 2;
  std::nth_element(xs.begin(), xs.begin() + static_cast<std::ptrdiff_t>(m), xs.end());
  double hi = xs[m];
  if (xs.size() % 2 == 1) return hi;
  const double lo = *std::max_element(xs.begin(), xs.begin() + static_cast<std::ptrdiff_t>(m));
  return 0.5 * (lo + hi);
}

}  // namespace detail

/// Times every decision individually; reports the median per-decision time,
/// then the median over repetitions. `inputs` decisions per repetition cycle
/// through the corpus (0 = one pass).
inline LatencyReport latency_bench(std::span<const TimedPolicy> policies, std::span<const KpmState> corpus,
                                   std::size_t repetitions, std::size_t inputs = 0) {
  if (corpus.empty()) throw InvalidArgument("latency_bench: empty corpus");
  if (repetitions == 0) throw InvalidArgument("latency_bench: repetitions must be >= 1");
  using clock = std::chrono::steady_clock;
  LatencyReport report;
  report.low_confidence = repetitions < 3;
  volatile double sink = 0.0;
  if (inputs == 0) inputs = corpus.size();
  std::vector<double> times(inputs);
  for (const TimedPolicy& p : policies) {
    // Warm-up pass over a prefix of the corpus.
    for (std::size_t i = 0; i < std::min<std::size_t>(corpus.size(), 1000); ++i) sink = sink + p.decide(corpus[i]);
    LatencyResult res{p.name, 0.0, {}};
    for (std::size_t rep = 0; rep < repetitions; ++rep) {
      for (std::size_t i = 0; i < inputs; ++i) {
        const KpmState& s = corpus[i % corpus.size()];
        const auto t0 = clock::now();
        const double v = p.decide(s);
        const auto t1 = clock::now();
        sink = sink + v;
        times[i] = std::chrono::duration<double, std::nano>(t1 - t0).count();
      }
      res.per_rep_median_ns.push_back(detail::median_inplace(times));
    }
    std::vector<double> meds = res.per_rep_median_ns;
    res.median_ns = detail::median_inplace(meds);
    report.results.push_back(std::move(res));
  }
  return report;
}

}  // namespace symran
