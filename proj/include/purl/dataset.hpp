#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "purl/errors.hpp"
#include "purl/matrix.hpp"

namespace purl {

enum class Split { train, retrain_subset, test };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::retrain_subset: return "retrain_subset";
    case Split::test: return "test";
  }
  return "?";
}

struct Dataset {
  Matrix inputs;                 // examples x features
  std::vector<std::size_t> labels;
  std::size_t classes = 0;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t features() const noexcept { return inputs.cols(); }
  bool empty() const noexcept { return labels.empty(); }

  void validate() const {
    if (inputs.rows() != labels.size()) {
      throw DimensionError("dataset has " + std::to_string(inputs.rows()) + " rows but " +
                           std::to_string(labels.size()) + " labels");
    }
    for (std::size_t y : labels) {
      if (y >= classes) throw DimensionError("label " + std::to_string(y) + " >= class count");
    }
  }

  Dataset subset(std::span<const std::size_t> indices) const {
    Dataset out;
    out.inputs = gather_rows(inputs, indices);
    out.labels.reserve(indices.size());
    for (std::size_t i : indices) out.labels.push_back(labels[i]);
    out.classes = classes;
    return out;
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

// The three splits the pruning loop needs. The retrain subset is a fixed
// sample of train rows, drawn once per run.
struct DataSplits {
  Dataset train;
  Dataset retrain_subset;
  Dataset test;
  std::vector<std::size_t> retrain_indices;  // rows of `train`

  const Dataset& get(Split s) const {
    switch (s) {
      case Split::train: return train;
      case Split::retrain_subset: return retrain_subset;
      case Split::test: return test;
    }
    throw ConfigError("unknown split");
  }
};

inline DataSplits make_splits(Dataset train, Dataset test, std::size_t retrain_subset_size,
                              std::uint64_t seed) {
  train.validate();
  test.validate();
  if (train.features() != test.features() || train.classes != test.classes) {
    throw DimensionError("train and test splits disagree on features or classes");
  }
  if (retrain_subset_size == 0 || retrain_subset_size > train.size()) {
    throw ConfigError("retrain subset size " + std::to_string(retrain_subset_size) +
                      " must be in [1, " + std::to_string(train.size()) + "]");
  }
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(retrain_subset_size);
  std::sort(order.begin(), order.end());

  DataSplits out;
  out.retrain_subset = train.subset(order);
  out.retrain_indices = std::move(order);
  out.train = std::move(train);
  out.test = std::move(test);
  return out;
}

}  // namespace purl
