#include "neurovol/lda.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "neurovol/error.hpp"

namespace neurovol {

namespace {

using Mat = Eigen::MatrixXd;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Mat to_eigen(const Tensor<double>& t) {
  if (t.rank() != 2) throw ValidationError("expected a [rows, cols] matrix, got " + to_string(t.shape()));
  return Eigen::Map<const RowMat>(t.data().data(), static_cast<Eigen::Index>(t.extent(0)),
                                  static_cast<Eigen::Index>(t.extent(1)));
}

Tensor<double> from_eigen(const Mat& m) {
  Tensor<double> t(Shape{static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  Eigen::Map<RowMat>(t.data().data(), m.rows(), m.cols()) = m;
  return t;
}

}  // namespace

LdaModel lda_fit(const Tensor<double>& latents, std::span<const std::size_t> labels,
                 std::vector<std::string> classes, const LdaOptions& options) {
  const Mat x = to_eigen(latents);
  const auto n = static_cast<std::size_t>(x.rows());
  const auto d = static_cast<std::size_t>(x.cols());
  const std::size_t c = classes.size();
  if (c < 2) throw ValidationError("lda_fit needs at least two classes");
  if (labels.size() != n) {
    throw ValidationError("lda_fit: " + std::to_string(labels.size()) + " labels for " +
                          std::to_string(n) + " rows");
  }
  if (!x.allFinite()) throw ValidationError("lda_fit: latents contain non-finite values");

  LdaModel model;
  model.classes = std::move(classes);
  model.dim = d;
  model.class_sizes.assign(c, 0);
  Mat means = Mat::Zero(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= c) throw ValidationError("lda_fit: label index " + std::to_string(labels[i]) + " out of range");
    ++model.class_sizes[labels[i]];
    means.row(static_cast<Eigen::Index>(labels[i])) += x.row(static_cast<Eigen::Index>(i));
  }
  for (std::size_t k = 0; k < c; ++k) {
    if (model.class_sizes[k] < 2) {
      throw ValidationError("lda_fit: class '" + model.classes[k] + "' has " +
                            std::to_string(model.class_sizes[k]) + " sample(s); at least 2 required");
    }
    means.row(static_cast<Eigen::Index>(k)) /= static_cast<double>(model.class_sizes[k]);
    model.priors.push_back(static_cast<double>(model.class_sizes[k]) / static_cast<double>(n));
  }
  const Eigen::RowVectorXd overall = x.colwise().mean();

  Mat sw = Mat::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::RowVectorXd r = x.row(static_cast<Eigen::Index>(i)) - means.row(static_cast<Eigen::Index>(labels[i]));
    sw.noalias() += r.transpose() * r;
  }
  Mat sb = Mat::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  for (std::size_t k = 0; k < c; ++k) {
    const Eigen::RowVectorXd r = means.row(static_cast<Eigen::Index>(k)) - overall;
    sb.noalias() += static_cast<double>(model.class_sizes[k]) * (r.transpose() * r);
  }
  sw = 0.5 * (sw + sw.transpose());
  sb = 0.5 * (sb + sb.transpose());

  const double eps = options.epsilon.value_or(1e-6 * sw.trace() / static_cast<double>(d));
  if (eps < 0) throw ValidationError("lda epsilon must be >= 0");
  model.epsilon = eps;
  Mat sw_reg = sw;
  sw_reg.diagonal().array() += eps;

  Eigen::SelfAdjointEigenSolver<Mat> check(sw_reg, Eigen::EigenvaluesOnly);
  const double scale = std::max(1.0, std::abs(check.eigenvalues().maxCoeff()));
  if (check.eigenvalues().minCoeff() <= 1e-12 * scale) {
    throw ValidationError("within-class scatter is singular (dimension " + std::to_string(d) +
                          ", " + std::to_string(n) + " samples); set a regularisation epsilon > 0");
  }

  Eigen::GeneralizedSelfAdjointEigenSolver<Mat> solver(sb, sw_reg);
  if (solver.info() != Eigen::Success) throw ValidationError("lda generalized eigen solve failed");
  const std::size_t k_dims = std::min(c - 1, d);
  Mat basis(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(k_dims));
  for (std::size_t j = 0; j < k_dims; ++j) {
    const auto src = static_cast<Eigen::Index>(d - 1 - j);
    Eigen::VectorXd w = solver.eigenvectors().col(src);
    Eigen::Index arg = 0;
    w.cwiseAbs().maxCoeff(&arg);
    if (w(arg) < 0) w = -w;
    basis.col(static_cast<Eigen::Index>(j)) = w;
    model.eigenvalues.push_back(solver.eigenvalues()(src));
  }

  const Mat proj_means = means * basis;
  const Mat fitted = x * basis;
  Mat pooled = Mat::Zero(static_cast<Eigen::Index>(k_dims), static_cast<Eigen::Index>(k_dims));
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::RowVectorXd r = fitted.row(static_cast<Eigen::Index>(i)) -
                                 proj_means.row(static_cast<Eigen::Index>(labels[i]));
    pooled.noalias() += r.transpose() * r;
  }
  pooled /= static_cast<double>(n - c);
  pooled = 0.5 * (pooled + pooled.transpose());
  const double ridge = 1e-12 * std::max(1.0, pooled.trace());
  pooled.diagonal().array() += ridge;

  model.class_means = from_eigen(means);
  model.within_scatter = from_eigen(sw);
  model.between_scatter = from_eigen(sb);
  model.basis = from_eigen(basis);
  model.projected_means = from_eigen(proj_means);
  model.projected_precision = from_eigen(pooled.ldlt().solve(Mat::Identity(pooled.rows(), pooled.cols())));
  model.fitted_coordinates = from_eigen(fitted);
  return model;
}

Tensor<double> lda_project(const LdaModel& model, const Tensor<double>& latents) {
  if (latents.rank() != 2 || latents.extent(1) != model.dim) {
    throw ValidationError("lda_project: latents " + to_string(latents.shape()) +
                          " do not match model dimension " + std::to_string(model.dim));
  }
  return from_eigen(to_eigen(latents) * to_eigen(model.basis));
}

std::vector<std::size_t> lda_classify(const LdaModel& model, const Tensor<double>& latents) {
  const Mat y = to_eigen(lda_project(model, latents));
  const Mat means = to_eigen(model.projected_means);
  const Mat precision = to_eigen(model.projected_precision);
  std::vector<std::size_t> out(static_cast<std::size_t>(y.rows()));
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    double best = 0;
    std::size_t best_k = 0;
    for (Eigen::Index k = 0; k < means.rows(); ++k) {
      const Eigen::RowVectorXd r = y.row(i) - means.row(k);
      const double dist = (r * precision * r.transpose())(0, 0);
      if (k == 0 || dist < best) {
        best = dist;
        best_k = static_cast<std::size_t>(k);
      }
    }
    out[static_cast<std::size_t>(i)] = best_k;
  }
  return out;
}

}  // namespace neurovol
