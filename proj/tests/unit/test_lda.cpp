#include <gtest/gtest.h>

#include <cmath>

#include "analysis_support.hpp"
#include "neurovol/error.hpp"
#include "neurovol/lda.hpp"

using namespace neurovol;
using neurovol::testing::gaussian_blobs;

namespace {

std::vector<std::string> names(std::size_t c) {
  std::vector<std::string> out;
  for (std::size_t k = 0; k < c; ++k) out.push_back("c" + std::to_string(k));
  return out;
}

double accuracy_of(const std::vector<std::size_t>& pred, const std::vector<std::size_t>& truth) {
  std::size_t ok = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) ok += pred[i] == truth[i];
  return static_cast<double>(ok) / static_cast<double>(pred.size());
}

}  // namespace

TEST(Lda, OneDimensionalTwoClasses) {
  const auto p = gaussian_blobs({{-1.0}, {1.0}}, 1.0, 200, 3);
  const auto m = lda_fit(p.x, p.labels, names(2));
  ASSERT_EQ(m.components(), 1u);
  EXPECT_GT(m.basis[0], 0.0);
  EXPECT_LT(m.projected_means[0], m.projected_means[1]);
}

TEST(Lda, LeadingDirectionAlignsWithMeanOffset) {
  const auto p = gaussian_blobs({{1, 0, 0, 0, 0}, {-1, 0, 0, 0, 0}}, 0.3, 5000, 4);
  const auto m = lda_fit(p.x, p.labels, names(2));
  double norm = 0;
  for (std::size_t j = 0; j < 5; ++j) norm += m.basis[j] * m.basis[j];
  EXPECT_GE(std::abs(m.basis[0]) / std::sqrt(norm), 0.999);
}

TEST(Lda, RankBound) {
  const auto p = gaussian_blobs({{0, 0, 0, 0, 0}, {3, 0, 0, 0, 0}, {0, 3, 0, 0, 0}, {0, 0, 3, 0, 0}}, 1.0, 30, 5);
  const auto m = lda_fit(p.x, p.labels, names(4));
  EXPECT_LE(m.components(), 3u);
  const auto pr = lda_project(m, p.x);
  EXPECT_EQ(pr.shape(), (Shape{120, m.components()}));
}

TEST(Lda, ThreeSeparatedBlobs) {
  const auto means = neurovol::testing::three_blob_means();
  const auto train = gaussian_blobs(means, 1.0, 100, 10);
  const auto test = gaussian_blobs(means, 1.0, 100, 11);
  const auto m = lda_fit(train.x, train.labels, names(3));
  EXPECT_EQ(accuracy_of(lda_classify(m, test.x), test.labels), 1.0);
  EXPECT_LE(m.components(), 2u);
  EXPECT_LE(neurovol::testing::lda_eigen_residual(m), 1e-8);
}

TEST(Lda, ProjectionReproducesFitAndIsLinear) {
  const auto p = gaussian_blobs(neurovol::testing::three_blob_means(), 1.0, 20, 12);
  const auto m = lda_fit(p.x, p.labels, names(3));
  const auto pr = lda_project(m, p.x);
  for (std::size_t i = 0; i < pr.size(); ++i) EXPECT_NEAR(pr[i], m.fitted_coordinates[i], 1e-12);
  const auto zero = lda_project(m, Tensor<double>({1, 4}, 0.0));
  for (double v : zero.data()) EXPECT_EQ(v, 0.0);
  const auto pm = lda_project(m, m.class_means);
  for (std::size_t i = 0; i < pm.size(); ++i) EXPECT_NEAR(pm[i], m.projected_means[i], 1e-9);
}

TEST(Lda, ClassMeansClassifyToThemselves) {
  const auto p = gaussian_blobs(neurovol::testing::three_blob_means(), 2.0, 40, 13);
  const auto m = lda_fit(p.x, p.labels, names(3));
  EXPECT_EQ(lda_classify(m, m.class_means), (std::vector<std::size_t>{0, 1, 2}));
}

TEST(Lda, TieGoesToFirstClass) {
  // symmetric classes about the origin: the origin is equidistant
  Tensor<double> x({4, 1}, std::vector<double>{-2.0, -1.0, 1.0, 2.0});
  const std::vector<std::size_t> labels{0, 0, 1, 1};
  const auto m = lda_fit(x, labels, names(2));
  EXPECT_EQ(lda_classify(m, Tensor<double>({1, 1}, 0.0)), (std::vector<std::size_t>{0}));
}

TEST(Lda, InvariantUnderScaledRotationAndShift) {
  const auto means = neurovol::testing::three_blob_means();
  const auto train = gaussian_blobs(means, 4.0, 60, 20);
  const auto test = gaussian_blobs(means, 4.0, 60, 21);
  const double c = std::cos(0.7), s = std::sin(0.7), scale = 3.5;
  auto transform = [&](const Tensor<double>& x) {
    Tensor<double> y(x.shape());
    for (std::size_t i = 0; i < x.extent(0); ++i) {
      const double* r = &x[i * 4];
      double* o = &y[i * 4];
      o[0] = scale * (c * r[0] - s * r[1]) + 7;
      o[1] = scale * (s * r[0] + c * r[1]) - 2;
      o[2] = scale * r[2] + 1;
      o[3] = scale * r[3];
    }
    return y;
  };
  const auto a = lda_classify(lda_fit(train.x, train.labels, names(3)), test.x);
  const auto b = lda_classify(lda_fit(transform(train.x), train.labels, names(3)), transform(test.x));
  EXPECT_EQ(a, b);
}

TEST(Lda, SingularScatterNeedsRegularisation) {
  // third coordinate is constant
  auto p = gaussian_blobs({{0, 0, 5}, {3, 1, 5}}, 1.0, 20, 30);
  for (std::size_t i = 0; i < p.x.extent(0); ++i) p.x[i * 3 + 2] = 5.0;
  LdaOptions none;
  none.epsilon = 0.0;
  EXPECT_THROW(lda_fit(p.x, p.labels, names(2), none), ValidationError);
  EXPECT_NO_THROW(lda_fit(p.x, p.labels, names(2)));
}

TEST(Lda, RejectsTinyClass) {
  Tensor<double> x({3, 1}, std::vector<double>{0, 1, 5});
  const std::vector<std::size_t> labels{0, 0, 1};
  EXPECT_THROW(lda_fit(x, labels, names(2)), ValidationError);
}
