#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

#include "analysis_support.hpp"
#include "neurovol/error.hpp"
#include "neurovol/metrics.hpp"

using namespace neurovol;
using neurovol::testing::published_table;
using neurovol::testing::round2;

namespace {

std::vector<std::string> table_classes() {
  std::vector<std::string> c;
  for (const auto& row : published_table()) c.push_back(row.label);
  return c;
}

}  // namespace

TEST(Metrics, PublishedRowsFromCounts) {
  for (const auto& row : published_table()) {
    EXPECT_EQ(row.counts.total(), 572u) << row.label;
    const auto pr = precision_recall(row.counts);
    ASSERT_TRUE(pr.precision && pr.recall);
    EXPECT_EQ(round2(*pr.precision), row.precision) << row.label;
    EXPECT_EQ(round2(*pr.recall), row.recall) << row.label;
  }
}

TEST(Metrics, PublishedRowsThroughConfusion) {
  const auto classes = table_classes();
  const auto [pred, actual] = neurovol::testing::labels_from_confusion(neurovol::testing::published_confusion(), classes);
  const auto stats = confusion_stats(pred, actual, classes);
  EXPECT_EQ(stats.samples, 572u);
  const auto pr = precision_recall(stats);
  const auto table = published_table();
  for (std::size_t k = 0; k < classes.size(); ++k) {
    EXPECT_EQ(stats.counts[k], table[k].counts) << classes[k];
    EXPECT_EQ(stats.counts[k].total(), 572u);
    EXPECT_EQ(round2(*pr[k].precision), table[k].precision) << classes[k];
    EXPECT_EQ(round2(*pr[k].recall), table[k].recall) << classes[k];
  }
}

TEST(Metrics, AllCorrect) {
  const std::vector<std::string> classes{"a", "b", "c"};
  const std::vector<std::string> labels{"a", "b", "c", "a", "c"};
  const auto stats = confusion_stats(labels, labels, classes);
  for (const auto& c : stats.counts) {
    EXPECT_EQ(c.fp, 0u);
    EXPECT_EQ(c.fn, 0u);
    EXPECT_EQ(c.total(), labels.size());
  }
  EXPECT_EQ(accuracy(labels, labels), 1.0);
}

TEST(Metrics, UndefinedRatiosAreNull) {
  const std::vector<std::string> classes{"a", "b"};
  const std::vector<std::string> pred{"a", "a"}, actual{"a", "a"};
  const auto stats = confusion_stats(pred, actual, classes);
  const auto pr = precision_recall(stats);
  EXPECT_FALSE(pr[1].precision.has_value());
  EXPECT_FALSE(pr[1].recall.has_value());
  const auto j = metrics_to_json(stats, 1.0);
  EXPECT_TRUE(j["classes"][1]["precision"].is_null());
  EXPECT_EQ(j["samples"], 2);
}

TEST(Metrics, RejectsUnknownLabelAndLengthMismatch) {
  const std::vector<std::string> classes{"a"};
  const std::vector<std::string> one{"a"}, two{"a", "a"}, unknown{"z"};
  EXPECT_THROW(confusion_stats(one, two, classes), ValidationError);
  EXPECT_THROW(confusion_stats(unknown, one, classes), ValidationError);
}
