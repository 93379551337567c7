#pragma once

#include <cmath>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "neurovol/autodiff.hpp"
#include "test_support.hpp"

namespace neurovol::testing {

/// One differentiable primitive wired into a scalar loss, with seeded inputs.
struct GradientCase {
  std::string name;
  LossBuilder<double> build;
  std::function<std::vector<Tensor<double>>(std::uint64_t)> inputs;
};

inline void PrintTo(const GradientCase& c, std::ostream* os) { *os << c.name; }

/// Values in [lo, hi) pushed at least `gap` away from zero.
inline Tensor<double> away_from_zero(Shape s, std::uint64_t seed, double gap = 0.05) {
  auto t = random_tensor<double>(std::move(s), seed);
  for (auto& v : t.data()) v = v >= 0 ? v + gap : v - gap;
  return t;
}

inline std::vector<GradientCase> primitive_gradient_cases() {
  using Inputs = std::vector<Tensor<double>>;
  using Vars = std::vector<Var<double>>;
  std::vector<GradientCase> cases;

  cases.push_back({"conv3d_same",
                   [](Tape<double>& t, const Vars& in) { return weighted_sum(t, ad::conv3d(in[0], in[1], in[2], 1, 1), 1); },
                   [](std::uint64_t s) {
                     return Inputs{random_tensor<double>({1, 1, 4, 4, 4}, s), random_tensor<double>({2, 1, 3, 3, 3}, s + 10),
                                   random_tensor<double>({2}, s + 20)};
                   }});
  cases.push_back({"conv3d_strided",
                   [](Tape<double>& t, const Vars& in) { return weighted_sum(t, ad::conv3d(in[0], in[1], in[2], 2, 0), 2); },
                   [](std::uint64_t s) {
                     return Inputs{random_tensor<double>({2, 2, 5, 4, 5}, s), random_tensor<double>({2, 2, 3, 2, 3}, s + 10),
                                   random_tensor<double>({2}, s + 20)};
                   }});
  cases.push_back({"conv3d_transpose",
                   [](Tape<double>& t, const Vars& in) {
                     return weighted_sum(t, ad::conv3d_transpose(in[0], in[1], in[2], 1, 1), 3);
                   },
                   [](std::uint64_t s) {
                     return Inputs{random_tensor<double>({2, 2, 3, 4, 3}, s), random_tensor<double>({2, 1, 3, 3, 3}, s + 10),
                                   random_tensor<double>({1}, s + 20)};
                   }});
  cases.push_back({"conv3d_transpose_strided",
                   [](Tape<double>& t, const Vars& in) {
                     return weighted_sum(t, ad::conv3d_transpose(in[0], in[1], in[2], 2, 1), 13);
                   },
                   [](std::uint64_t s) {
                     return Inputs{random_tensor<double>({1, 2, 2, 3, 2}, s), random_tensor<double>({2, 2, 3, 3, 3}, s + 10),
                                   random_tensor<double>({2}, s + 20)};
                   }});
  cases.push_back({"affine",
                   [](Tape<double>& t, const Vars& in) { return weighted_sum(t, ad::affine(in[0], in[1], in[2]), 4); },
                   [](std::uint64_t s) {
                     return Inputs{random_tensor<double>({3, 5}, s), random_tensor<double>({5, 4}, s + 10),
                                   random_tensor<double>({4}, s + 20)};
                   }});
  cases.push_back({"batch_norm_train",
                   [](Tape<double>& t, const Vars& in) {
                     BatchNormStats<double> stats{Tensor<double>({3}, 0.0), Tensor<double>({3}, 1.0)};
                     return weighted_sum(t, ad::batch_norm(in[0], in[1], in[2], stats, Mode::train), 5);
                   },
                   [](std::uint64_t s) {
                     return Inputs{random_tensor<double>({4, 3, 2, 2, 2}, s), random_tensor<double>({3}, s + 10, 0.5, 1.5),
                                   random_tensor<double>({3}, s + 20)};
                   }});
  cases.push_back({"batch_norm_eval",
                   [](Tape<double>& t, const Vars& in) {
                     BatchNormStats<double> stats{Tensor<double>({3}, std::vector<double>{0.1, -0.2, 0.3}),
                                                  Tensor<double>({3}, std::vector<double>{0.5, 1.5, 2.0})};
                     return weighted_sum(t, ad::batch_norm(in[0], in[1], in[2], stats, Mode::eval), 6);
                   },
                   [](std::uint64_t s) {
                     return Inputs{random_tensor<double>({2, 3}, s), random_tensor<double>({3}, s + 10),
                                   random_tensor<double>({3}, s + 20)};
                   }});
  const std::pair<const char*, Activation> acts[] = {{"identity", Activation::identity()},
                                                     {"relu", Activation::relu()},
                                                     {"leaky_relu", Activation::leaky_relu(0.2)},
                                                     {"sigmoid", Activation::sigmoid()}};
  for (const auto& [label, act] : acts) {
    cases.push_back({std::string("activation_") + label,
                     [act = act](Tape<double>& t, const Vars& in) { return weighted_sum(t, ad::activation(in[0], act), 7); },
                     [](std::uint64_t s) { return Inputs{away_from_zero({3, 7}, s)}; }});
  }
  cases.push_back({"elementwise",
                   [](Tape<double>& t, const Vars& in) {
                     auto a = ad::add(ad::mul(in[0], in[1]), ad::scale(ad::sub(in[0], in[1]), 0.7));
                     auto b = ad::add_scalar(ad::square(a), 0.3);
                     auto c = ad::mul(ad::exp(in[0]), ad::log(ad::add_scalar(ad::square(in[1]), 1.0)));
                     auto d = ad::clamp(in[1], -0.5, 0.5);
                     return ad::add(ad::add(weighted_sum(t, b, 8), ad::mean(c)), weighted_sum(t, ad::reshape(d, {12}), 9));
                   },
                   [](std::uint64_t s) {
                     auto b = random_tensor<double>({3, 4}, s + 10);
                     for (auto& v : b.data()) {
                       if (std::abs(std::abs(v) - 0.5) < 0.01) v *= 0.9;
                     }
                     return Inputs{random_tensor<double>({3, 4}, s), b};
                   }});
  cases.push_back({"pool_upsample",
                   [](Tape<double>& t, const Vars& in) {
                     return weighted_sum(t, ad::upsample3d_nearest(ad::square(ad::avg_pool3d(in[0], 2)), 2), 10);
                   },
                   [](std::uint64_t s) { return Inputs{random_tensor<double>({1, 2, 4, 2, 4}, s)}; }});
  cases.push_back({"dropout_fixed_mask",
                   [](Tape<double>& t, const Vars& in) {
                     RngStream rng(99);
                     return weighted_sum(t, ad::dropout(in[0], 0.3, rng, Mode::train), 11);
                   },
                   [](std::uint64_t s) { return Inputs{random_tensor<double>({4, 6}, s)}; }});
  cases.push_back({"mse",
                   [](Tape<double>&, const Vars& in) { return ad::mse(in[0], in[1]); },
                   [](std::uint64_t s) {
                     return Inputs{random_tensor<double>({2, 1, 2, 3, 2}, s), random_tensor<double>({2, 1, 2, 3, 2}, s + 10)};
                   }});
  cases.push_back({"binary_cross_entropy",
                   [](Tape<double>&, const Vars& in) { return ad::binary_cross_entropy(in[0], in[1]); },
                   [](std::uint64_t s) {
                     return Inputs{random_tensor<double>({2, 5}, s, 0.05, 0.95), random_tensor<double>({2, 5}, s + 10, 0.0, 1.0)};
                   }});
  cases.push_back({"kl_rows",
                   [](Tape<double>& t, const Vars& in) { return weighted_sum(t, ad::kl_divergence_rows(in[0], in[1]), 12); },
                   [](std::uint64_t s) {
                     return Inputs{random_tensor<double>({3, 4}, s, -2, 2), random_tensor<double>({3, 4}, s + 10, -1.5, 1.0)};
                   }});
  return cases;
}

}  // namespace neurovol::testing
