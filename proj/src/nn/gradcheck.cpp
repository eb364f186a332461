#include "panodream/nn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

namespace panodream::nn {

double GradCheckReport::max_rel_error() const {
  double m = 0.0;
  for (const auto& e : entries) m = std::max(m, e.max_rel_error);
  return m;
}

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  for (const auto& e : entries) {
    os << e.name << ": checked " << e.checked << ", max rel " << e.max_rel_error << ", max abs "
       << e.max_abs_error << "\n";
  }
  return os.str();
}

GradCheckReport grad_check(const std::function<double()>& loss,
                           const std::vector<GradTarget>& targets,
                           const GradCheckOptions& options) {
  GradCheckReport report;
  std::mt19937_64 rng(options.seed);
  for (const auto& t : targets) {
    GradCheckEntry entry;
    entry.name = t.name;
    std::vector<std::size_t> idx(t.values.size());
    std::iota(idx.begin(), idx.end(), 0);
    if (options.max_entries > 0 && idx.size() > options.max_entries) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(options.max_entries);
      std::sort(idx.begin(), idx.end());
    }
    for (std::size_t i : idx) {
      const double original = t.values[i];
      const double analytic = t.analytic[i];
      double best_rel = std::numeric_limits<double>::infinity();
      double best_abs = 0.0;
      double h_rel = options.h_rel;
      for (int attempt = 0; attempt <= options.shrink_retries; ++attempt, h_rel *= 0.1) {
        const double h = h_rel * std::max(1.0, std::abs(original));
        t.values[i] = original + h;
        const double up = loss();
        t.values[i] = original - h;
        const double down = loss();
        t.values[i] = original;
        const double numeric = (up - down) / (2.0 * h);
        const double abs_err = std::abs(analytic - numeric);
        const double rel = abs_err / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
        if (rel < best_rel) {
          best_rel = rel;
          best_abs = abs_err;
        }
        if (best_rel <= options.retry_above) break;
      }
      entry.max_rel_error = std::max(entry.max_rel_error, best_rel);
      entry.max_abs_error = std::max(entry.max_abs_error, best_abs);
      ++entry.checked;
    }
    report.entries.push_back(entry);
  }
  return report;
}

}  // namespace panodream::nn
