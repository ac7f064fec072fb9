#include "mvnn/metrics.hpp"

#include "json.hpp"
#include "mvnn/errors.hpp"

namespace mvnn {

void Confusion::add(int truth, int predicted) {
  if (truth == 1) {
    ++(predicted == 1 ? tp : fn);
  } else {
    ++(predicted == 1 ? fp : tn);
  }
}

Metrics compute_metrics(const Confusion& c) {
  Metrics m;
  m.confusion = c;
  const auto ratio = [](std::int64_t num, std::int64_t den, bool& undefined) {
    undefined = den == 0;
    return undefined ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
  };
  bool unused = false;
  m.accuracy = ratio(c.tp + c.tn, c.total(), unused);
  m.precision = ratio(c.tp, c.tp + c.fp, m.precision_undefined);
  m.recall = ratio(c.tp, c.tp + c.fn, m.recall_undefined);
  m.f1 = m.precision + m.recall > 0
             ? 2 * m.precision * m.recall / (m.precision + m.recall)
             : 0.0;
  return m;
}

Metrics compute_metrics(std::span<const int> truth, std::span<const int> predicted) {
  if (truth.size() != predicted.size()) {
    throw DimensionError("metrics: " + std::to_string(truth.size()) + " labels vs " +
                         std::to_string(predicted.size()) + " predictions");
  }
  Confusion c;
  for (std::size_t i = 0; i < truth.size(); ++i) c.add(truth[i], predicted[i]);
  return compute_metrics(c);
}

std::string Metrics::to_json() const {
  nlohmann::ordered_json j;
  j["accuracy"] = accuracy;
  j["precision"] = precision;
  j["recall"] = recall;
  j["f1"] = f1;
  j["tp"] = confusion.tp;
  j["fp"] = confusion.fp;
  j["tn"] = confusion.tn;
  j["fn"] = confusion.fn;
  j["precision_undefined"] = precision_undefined;
  j["recall_undefined"] = recall_undefined;
  return j.dump();
}

}  // namespace mvnn
