#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace panodream::nn {

// One block of values checked against its analytic gradient. The loss
// callable must read the live values, which grad_check perturbs in place.
struct GradTarget {
  std::string name;
  std::span<double> values;
  std::span<const double> analytic;
};

struct GradCheckOptions {
  // Step is h_rel * max(1, |x|).
  double h_rel = 1e-5;
  // 0 checks every entry; otherwise a seeded subset of this size.
  std::size_t max_entries = 0;
  std::uint64_t seed = 0;
  // Entries whose error exceeds retry_above are re-measured with the step
  // divided by 10, up to shrink_retries times; the best agreement counts.
  // A step that straddles a relu kink gives a wrong difference, while a wrong
  // analytic gradient disagrees at every step.
  int shrink_retries = 0;
  double retry_above = 1e-6;
};

struct GradCheckEntry {
  std::string name;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error() const;
  bool passed(double tolerance) const { return max_rel_error() < tolerance; }
  std::string summary() const;
};

// Central finite differences against analytic gradients;
// rel = |a - n| / max(1e-8, |a| + |n|).
GradCheckReport grad_check(const std::function<double()>& loss,
                           const std::vector<GradTarget>& targets,
                           const GradCheckOptions& options = {});

}  // namespace panodream::nn
