#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "neurovol/tensor.hpp"

namespace neurovol {

struct LdaOptions {
  /// Ridge added to the within-class scatter. nullopt selects
  /// 1e-6 * trace(S_w) / dim; 0 disables regularisation.
  std::optional<double> epsilon;
};

/// Fisher discriminant fitted on row vectors. Matrices are row-major Tensors.
struct LdaModel {
  std::vector<std::string> classes;
  std::size_t dim = 0;
  double epsilon = 0;
  std::vector<std::size_t> class_sizes;
  std::vector<double> priors;
  Tensor<double> class_means;        // [C, dim]
  Tensor<double> within_scatter;     // [dim, dim]
  Tensor<double> between_scatter;    // [dim, dim]
  Tensor<double> basis;              // [dim, K], K <= C - 1
  std::vector<double> eigenvalues;   // K, decreasing
  Tensor<double> projected_means;    // [C, K]
  Tensor<double> projected_precision;  // [K, K], inverse pooled covariance
  Tensor<double> fitted_coordinates;   // [N, K]

  std::size_t components() const noexcept { return eigenvalues.size(); }
};

/// Solves S_b w = lambda (S_w + eps I) w. `labels` index into `classes`; every
/// class needs at least two samples.
LdaModel lda_fit(const Tensor<double>& latents, std::span<const std::size_t> labels,
                 std::vector<std::string> classes, const LdaOptions& options = {});

/// Rows times the basis: [N, dim] -> [N, K].
Tensor<double> lda_project(const LdaModel& model, const Tensor<double>& latents);

/// Nearest projected class mean under the pooled projected covariance; ties go
/// to the earlier class. Returns class indices.
std::vector<std::size_t> lda_classify(const LdaModel& model, const Tensor<double>& latents);

}  // namespace neurovol
