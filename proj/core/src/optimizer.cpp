#include "neurovol/optimizer.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "neurovol/error.hpp"

namespace neurovol {

void to_json(nlohmann::json& j, const OptimizerConfig& c) {
  j = {{"kind", c.kind == OptimizerConfig::Kind::adam ? "adam" : "sgd_momentum"},
       {"learning_rate", c.learning_rate},
       {"beta1", c.beta1},
       {"beta2", c.beta2},
       {"epsilon", c.epsilon},
       {"momentum", c.momentum}};
}

void from_json(const nlohmann::json& j, OptimizerConfig& c) {
  if (j.contains("kind")) {
    const auto k = j.at("kind").get<std::string>();
    if (k == "adam") c.kind = OptimizerConfig::Kind::adam;
    else if (k == "sgd_momentum") c.kind = OptimizerConfig::Kind::sgd_momentum;
    else throw ValidationError("unknown optimizer '" + k + "'");
  }
  if (j.contains("learning_rate")) j.at("learning_rate").get_to(c.learning_rate);
  if (j.contains("beta1")) j.at("beta1").get_to(c.beta1);
  if (j.contains("beta2")) j.at("beta2").get_to(c.beta2);
  if (j.contains("epsilon")) j.at("epsilon").get_to(c.epsilon);
  if (j.contains("momentum")) j.at("momentum").get_to(c.momentum);
  if (c.learning_rate < 0) throw ValidationError("learning_rate must be >= 0");
}

template <typename T>
Optimizer<T>::Optimizer(OptimizerConfig config) : config_(config) {
  if (config_.learning_rate < 0) throw ValidationError("learning_rate must be >= 0");
}

template <typename T>
void Optimizer<T>::step(ParameterStore<T>& params, const Gradients<T>& grads) {
  const double lr = config_.learning_rate;
  for (const auto& [name, g] : grads) {
    auto& p = params.at(name);
    if (!p.trainable) throw ValidationError("parameter '" + name + "' is not trainable");
    if (g.size() != p.value.size()) {
      throw ValidationError("gradient for '" + name + "' has " + std::to_string(g.size()) +
                            " elements, parameter has " + std::to_string(p.value.size()));
    }
    State& s = state_[name];
    if (s.m.empty()) s.m.assign(g.size(), 0.0);
    if (config_.kind == OptimizerConfig::Kind::adam && s.v.empty()) s.v.assign(g.size(), 0.0);
    ++s.t;
    if (lr == 0.0) continue;
    auto w = p.value.data();
    if (config_.kind == OptimizerConfig::Kind::adam) {
      const double b1 = config_.beta1, b2 = config_.beta2;
      const double c1 = 1.0 - std::pow(b1, static_cast<double>(s.t));
      const double c2 = 1.0 - std::pow(b2, static_cast<double>(s.t));
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double gi = g[i];
        s.m[i] = b1 * s.m[i] + (1.0 - b1) * gi;
        s.v[i] = b2 * s.v[i] + (1.0 - b2) * gi * gi;
        const double update = lr * (s.m[i] / c1) / (std::sqrt(s.v[i] / c2) + config_.epsilon);
        w[i] = static_cast<T>(w[i] - update);
      }
    } else {
      for (std::size_t i = 0; i < g.size(); ++i) {
        s.m[i] = config_.momentum * s.m[i] + g[i];
        w[i] = static_cast<T>(w[i] - lr * s.m[i]);
      }
    }
  }
}

template class Optimizer<float>;
template class Optimizer<double>;

}  // namespace neurovol
