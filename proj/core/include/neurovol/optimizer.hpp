#pragma once

#include <map>
#include <string>
#include <string_view>

#include <nlohmann/json_fwd.hpp>

#include "neurovol/model.hpp"

namespace neurovol {

struct OptimizerConfig {
  enum class Kind { adam, sgd_momentum };
  Kind kind = Kind::adam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Used by sgd_momentum only.
  double momentum = 0.9;

  friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

void to_json(nlohmann::json& j, const OptimizerConfig& c);
void from_json(const nlohmann::json& j, OptimizerConfig& c);

/// Per-parameter state keyed by name, so separate optimizers can own disjoint
/// partitions of one store.
template <typename T>
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config);

  /// Applies one update to every parameter named in `grads`; others are untouched.
  void step(ParameterStore<T>& params, const Gradients<T>& grads);

  const OptimizerConfig& config() const noexcept { return config_; }

 private:
  struct State {
    std::vector<double> m, v;
    std::size_t t = 0;
  };
  OptimizerConfig config_;
  std::map<std::string, State> state_;
};

extern template class Optimizer<float>;
extern template class Optimizer<double>;

}  // namespace neurovol
