#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace neurovol {

/// One-vs-rest counts for a single class.
struct ClassCounts {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::size_t total() const noexcept { return tp + fp + fn + tn; }
  friend bool operator==(const ClassCounts&, const ClassCounts&) = default;
};

struct ConfusionStats {
  std::vector<std::string> classes;
  std::vector<ClassCounts> counts;
  std::size_t samples = 0;
};

/// Labels must belong to `classes`.
ConfusionStats confusion_stats(std::span<const std::string> predicted,
                               std::span<const std::string> actual,
                               const std::vector<std::string>& classes);

/// nullopt when the denominator is zero.
struct PrecisionRecall {
  std::optional<double> precision;
  std::optional<double> recall;
};

PrecisionRecall precision_recall(const ClassCounts& c);
std::vector<PrecisionRecall> precision_recall(const ConfusionStats& stats);

double accuracy(std::span<const std::string> predicted, std::span<const std::string> actual);

/// {"classes": [{"label", "tp", "fp", "fn", "tn", "precision", "recall"}...],
///  "samples", "accuracy"}; undefined ratios are null.
nlohmann::json metrics_to_json(const ConfusionStats& stats, double accuracy);

}  // namespace neurovol
