#pragma once

#include <cstdint>
#include <span>
#include <string>

namespace mvnn {

/// Confusion counts with "fake" (label 1) as the positive class.
struct Confusion {
  std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;

  std::int64_t total() const { return tp + fp + tn + fn; }
  void add(int truth, int predicted);
};

struct Metrics {
  Confusion confusion;
  double accuracy = 0;
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  // Set when the corresponding denominator was zero and the value forced to 0.
  bool precision_undefined = false;
  bool recall_undefined = false;

  std::string to_json() const;
};

Metrics compute_metrics(const Confusion& c);
Metrics compute_metrics(std::span<const int> truth, std::span<const int> predicted);

}  // namespace mvnn
