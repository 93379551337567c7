#include "neurovol/metrics.hpp"

#include <map>

#include <nlohmann/json.hpp>

#include "neurovol/error.hpp"

namespace neurovol {

ConfusionStats confusion_stats(std::span<const std::string> predicted,
                               std::span<const std::string> actual,
                               const std::vector<std::string>& classes) {
  if (predicted.size() != actual.size()) {
    throw ValidationError("confusion_stats: " + std::to_string(predicted.size()) +
                          " predictions for " + std::to_string(actual.size()) + " labels");
  }
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < classes.size(); ++i) index.emplace(classes[i], i);
  auto lookup = [&](const std::string& label) {
    auto it = index.find(label);
    if (it == index.end()) throw ValidationError("label '" + label + "' is not in the class list");
    return it->second;
  };

  ConfusionStats stats{classes, std::vector<ClassCounts>(classes.size()), actual.size()};
  for (std::size_t i = 0; i < actual.size(); ++i) {
    const std::size_t p = lookup(predicted[i]);
    const std::size_t a = lookup(actual[i]);
    for (std::size_t k = 0; k < classes.size(); ++k) {
      auto& c = stats.counts[k];
      if (p == k && a == k) ++c.tp;
      else if (p == k) ++c.fp;
      else if (a == k) ++c.fn;
      else ++c.tn;
    }
  }
  return stats;
}

PrecisionRecall precision_recall(const ClassCounts& c) {
  PrecisionRecall r;
  if (c.tp + c.fp > 0) r.precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  if (c.tp + c.fn > 0) r.recall = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  return r;
}

std::vector<PrecisionRecall> precision_recall(const ConfusionStats& stats) {
  std::vector<PrecisionRecall> out;
  out.reserve(stats.counts.size());
  for (const auto& c : stats.counts) out.push_back(precision_recall(c));
  return out;
}

double accuracy(std::span<const std::string> predicted, std::span<const std::string> actual) {
  if (predicted.size() != actual.size() || actual.empty()) {
    throw ValidationError("accuracy needs equal, non-empty label lists");
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < actual.size(); ++i) hits += predicted[i] == actual[i];
  return static_cast<double>(hits) / static_cast<double>(actual.size());
}

nlohmann::json metrics_to_json(const ConfusionStats& stats, double acc) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); };
  nlohmann::json classes = nlohmann::json::array();
  const auto pr = precision_recall(stats);
  for (std::size_t k = 0; k < stats.classes.size(); ++k) {
    const auto& c = stats.counts[k];
    classes.push_back({{"label", stats.classes[k]},
                       {"tp", c.tp},
                       {"fp", c.fp},
                       {"fn", c.fn},
                       {"tn", c.tn},
                       {"precision", opt(pr[k].precision)},
                       {"recall", opt(pr[k].recall)}});
  }
  return {{"classes", classes}, {"samples", stats.samples}, {"accuracy", acc}};
}

}  // namespace neurovol
