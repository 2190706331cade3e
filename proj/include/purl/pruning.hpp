#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "purl/errors.hpp"
#include "purl/nn.hpp"

namespace purl {

struct LayerStats {
  std::size_t layer = 0;
  double sigma = 0.0;  // population std of the unmasked weights
  std::size_t unmasked = 0;
  std::size_t total = 0;
};

// Standard deviation over the layer's unmasked weights. Pruned zeros are
// excluded so iterative rounds keep a meaningful threshold.
inline LayerStats layer_std(const DenseLayer& layer, std::size_t index = 0) {
  auto w = layer.weights.values();
  auto m = layer.mask.values();
  LayerStats s;
  s.layer = index;
  s.total = w.size();
  double sum = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (m[i] != 0.0) {
      sum += w[i];
      ++s.unmasked;
    }
  }
  if (s.unmasked == 0) {
    throw DegenerateLayerError("layer " + std::to_string(index) +
                               " has no unmasked weights; standard deviation is undefined");
  }
  const double mean = sum / static_cast<double>(s.unmasked);
  double sq = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (m[i] != 0.0) sq += (w[i] - mean) * (w[i] - mean);
  }
  s.sigma = std::sqrt(sq / static_cast<double>(s.unmasked));
  if (!std::isfinite(s.sigma)) throw NumericError("non-finite weight spread", index);
  return s;
}

struct PruneOutcome {
  std::size_t newly_pruned = 0;
  double threshold = 0.0;
  bool warning = false;  // request was a no-op (e.g. target below current sparsity)
  std::string message;
};

// Prunes every unmasked weight with |w| < alpha * sigma, sigma taken before
// this call masks anything. Masks only grow.
inline PruneOutcome prune_by_std(DenseLayer& layer, double alpha, std::size_t index = 0) {
  if (!(alpha >= 0.0)) throw ConfigError("alpha must be nonnegative");
  const LayerStats stats = layer_std(layer, index);
  PruneOutcome out;
  out.threshold = alpha * stats.sigma;
  auto w = layer.weights.values();
  auto m = layer.mask.values();
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (m[i] != 0.0 && std::abs(w[i]) < out.threshold) {
      m[i] = 0.0;
      w[i] = 0.0;
      ++out.newly_pruned;
    }
  }
  return out;
}

inline std::size_t pruned_count(const DenseLayer& layer) {
  auto m = layer.mask.values();
  return static_cast<std::size_t>(std::count(m.begin(), m.end(), 0.0));
}

inline double layer_sparsity(const DenseLayer& layer) {
  return static_cast<double>(pruned_count(layer)) / static_cast<double>(layer.mask.size());
}

// Smallest k with k / total >= target.
inline std::size_t min_count_for_fraction(double target, std::size_t total) {
  const double t = static_cast<double>(total);
  auto k = static_cast<std::size_t>(std::min(t, std::ceil(target * t)));
  while (k > 0 && static_cast<double>(k - 1) / t >= target) --k;
  while (k < total && static_cast<double>(k) / t < target) ++k;
  return k;
}

// Prunes the smallest-magnitude unmasked weights (ties: lowest flat index)
// until the layer sparsity is the smallest achievable value >= target.
inline PruneOutcome prune_by_magnitude_target(DenseLayer& layer, double target_sparsity) {
  if (!(target_sparsity >= 0.0 && target_sparsity <= 1.0)) {
    throw ConfigError("target sparsity must lie in [0, 1]");
  }
  PruneOutcome out;
  const std::size_t total = layer.mask.size();
  const std::size_t already = pruned_count(layer);
  const double current = static_cast<double>(already) / static_cast<double>(total);
  if (target_sparsity < current) {
    out.warning = true;
    out.message = "target sparsity " + std::to_string(target_sparsity) +
                  " is below current sparsity " + std::to_string(current) + "; mask unchanged";
    return out;
  }
  const std::size_t want = min_count_for_fraction(target_sparsity, total);
  if (want <= already) return out;

  auto w = layer.weights.values();
  auto m = layer.mask.values();
  std::vector<std::size_t> live;
  live.reserve(total - already);
  for (std::size_t i = 0; i < total; ++i) {
    if (m[i] != 0.0) live.push_back(i);
  }
  const std::size_t take = want - already;
  std::partial_sort(live.begin(), live.begin() + static_cast<std::ptrdiff_t>(take), live.end(),
                    [&](std::size_t a, std::size_t b) {
                      const double wa = std::abs(w[a]);
                      const double wb = std::abs(w[b]);
                      return wa < wb || (wa == wb && a < b);
                    });
  out.threshold = std::abs(w[live[take - 1]]);  // largest magnitude removed
  for (std::size_t k = 0; k < take; ++k) {
    m[live[k]] = 0.0;
    w[live[k]] = 0.0;
  }
  out.newly_pruned = take;
  return out;
}

struct SparsityReport {
  std::vector<std::size_t> pruned;  // per layer
  std::vector<std::size_t> totals;
  std::vector<double> layer;        // p_i
  double global = 0.0;              // P

  std::size_t pruned_total() const { return std::accumulate(pruned.begin(), pruned.end(), std::size_t{0}); }
  std::size_t weight_total() const { return std::accumulate(totals.begin(), totals.end(), std::size_t{0}); }
};

inline SparsityReport sparsity_report(const Network& net) {
  SparsityReport r;
  for (const auto& l : net.layers) {
    r.pruned.push_back(pruned_count(l));
    r.totals.push_back(l.mask.size());
    r.layer.push_back(static_cast<double>(r.pruned.back()) / static_cast<double>(r.totals.back()));
  }
  const std::size_t total = r.weight_total();
  r.global = total == 0 ? 0.0 : static_cast<double>(r.pruned_total()) / static_cast<double>(total);
  return r;
}

}  // namespace purl
