// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "analysis_support.hpp"
#include "gradient_cases.hpp"
#include "manifest_support.hpp"
#include "model_support.hpp"
#include "neurovol/commands.hpp"
#include "neurovol/io.hpp"
#include "neurovol/lda.hpp"
#include "neurovol/losses.hpp"
#include "neurovol/metrics.hpp"
#include "neurovol/optimizer.hpp"
#include "neurovol/phantom.hpp"
#include "neurovol/preprocess.hpp"
#include "test_support.hpp"

using namespace neurovol;
namespace fs = std::filesystem;
namespace nt = neurovol::testing;

namespace {

// Pinned tolerances.
constexpr double kGradTolF64 = 1e-4;
constexpr double kGradStepF64 = 1e-6;
constexpr std::uint64_t kGradSeeds = 5;
constexpr double kGradBudgetSeconds = 60.0;
constexpr double kKlQuadratureTol = 1e-6;
constexpr double kKlZeroTol = 1e-12;
constexpr double kDownsampleMeanTol = 1e-6;
constexpr double kPercentileTol = 1e-12;
constexpr double kLdaResidualTol = 1e-8;
constexpr double kReconRatio = 0.5;
constexpr double kMsVsRestMin = 0.85;
constexpr double kFisherRatioMin = 5.0;
constexpr double kEndToEndBudgetSeconds = 1800.0;
constexpr double kSplitDeviationMax = 1.0;

struct Outcome {
  bool pass = true;
  std::vector<std::string> notes;

  void check(bool ok, std::string what) {
    if (!ok) pass = false;
    notes.push_back((ok ? "ok: " : "FAILED: ") + std::move(what));
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Outcome table_arithmetic() {
  Outcome o;
  const auto table = nt::published_table();
  std::vector<std::string> classes;
  for (const auto& row : table) classes.push_back(row.label);
  const auto [pred, actual] = nt::labels_from_confusion(nt::published_confusion(), classes);
  const auto stats = confusion_stats(pred, actual, classes);
  const auto pr = precision_recall(stats);
  for (std::size_t k = 0; k < classes.size(); ++k) {
    const auto& c = stats.counts[k];
    const bool counts_ok = c == table[k].counts && c.total() == 572;
    const bool pr_ok = pr[k].precision && pr[k].recall && nt::round2(*pr[k].precision) == table[k].precision &&
                       nt::round2(*pr[k].recall) == table[k].recall;
    o.check(counts_ok && pr_ok,
            fmt::format("{} TP={} FP={} FN={} TN={} total={} precision={:.2f} recall={:.2f}", classes[k], c.tp, c.fp,
                        c.fn, c.tn, c.total(), pr[k].precision.value_or(-1), pr[k].recall.value_or(-1)));
  }
  return o;
}

Outcome gradient_suite() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  for (const auto& c : nt::primitive_gradient_cases()) {
    double worst = 0;
    for (std::uint64_t seed = 0; seed < kGradSeeds; ++seed) {
      worst = std::max(worst, nt::grad_check<double>(c.build, c.inputs(seed), kGradStepF64).max_relative_error);
    }
    o.check(worst <= kGradTolF64, fmt::format("{} worst rel. error {:.2e}", c.name, worst));
  }
  double composed = 0;
  for (std::uint64_t seed = 0; seed < kGradSeeds; ++seed) {
    composed = std::max(composed, nt::composed_grad_check<double>(seed, kGradStepF64));
  }
  o.check(composed <= kGradTolF64, fmt::format("encoder->decoder->loss worst rel. error {:.2e}", composed));
  const double elapsed = seconds_since(t0);
  o.check(elapsed < kGradBudgetSeconds, fmt::format("runtime {:.1f} s", elapsed));
  return o;
}

Outcome kl_oracle() {
  Outcome o;
  std::mt19937_64 gen(2024);
  std::uniform_real_distribution<double> mu_dist(-2.0, 2.0), ls_dist(-1.0, 0.8);
  double worst = 0;
  for (int i = 0; i < 50; ++i) {
    const double mu = mu_dist(gen), ls = ls_dist(gen);
    const std::vector<double> m{mu}, l{ls};
    worst = std::max(worst, std::abs(kl_divergence(m, l) - nt::kl_quadrature(mu, std::exp(ls))));
  }
  o.check(worst <= kKlQuadratureTol, fmt::format("50 cases vs quadrature, worst abs. error {:.2e}", worst));
  const std::vector<double> zero{0.0};
  const double kl0 = kl_divergence(zero, zero);
  o.check(std::abs(kl0) <= kKlZeroTol, fmt::format("KL(N(0,1) || N(0,1)) = {:.1e}", kl0));
  return o;
}

double mean_of(const Volume& v) {
  double s = 0;
  for (float x : v.data()) s += x;
  return s / static_cast<double>(v.size());
}

Outcome preprocessing() {
  Outcome o;
  PhantomConfig c;
  c.shape = {182, 218, 182};
  const auto raw = generate_phantom(c, 21, ClassLabel::ms).volume;
  const auto trimmed = trim_center(raw, {160, 192, 160});
  o.check(trimmed.extents() == Extents{160, 192, 160}, "trim 182x218x182 -> " + to_string(trimmed.extents()));
  const auto down = downsample_avg(trimmed, 4);
  o.check(down.extents() == Extents{40, 48, 40}, "downsample -> " + to_string(down.extents()));
  const double drift = std::abs(mean_of(down) - mean_of(trimmed));
  o.check(drift <= kDownsampleMeanTol, fmt::format("global mean drift {:.2e}", drift));
  const auto out = preprocess_volume(raw, PreprocessParams{});
  const auto [lo, hi] = std::minmax_element(out.data().begin(), out.data().end());
  o.check(out.extents() == Extents{40, 48, 40} && *lo >= 0.0f && *hi <= 1.0f,
          fmt::format("pipeline output {} within [{}, {}]", to_string(out.extents()), *lo, *hi));
  std::vector<double> ramp(100);
  for (std::size_t i = 0; i < ramp.size(); ++i) ramp[i] = static_cast<double>(i);
  const double p = percentile(ramp, 99.5);
  o.check(std::abs(p - 98.505) <= kPercentileTol, fmt::format("percentile(0..99, 99.5) = {:.6f}", p));
  return o;
}

Outcome lda_oracle() {
  Outcome o;
  const auto means = nt::three_blob_means();
  const auto train = nt::gaussian_blobs(means, 1.0, 100, 10);
  const auto test = nt::gaussian_blobs(means, 1.0, 100, 11);
  const auto m = lda_fit(train.x, train.labels, {"a", "b", "c"});
  const auto pred = lda_classify(m, test.x);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == test.labels[i];
  const double acc = static_cast<double>(hits) / static_cast<double>(pred.size());
  o.check(acc == 1.0, fmt::format("test accuracy {:.4f}", acc));
  o.check(m.components() <= 2 && lda_project(m, test.x).extent(1) <= 2,
          fmt::format("projection rank {} (C-1 = 2)", m.components()));
  const double residual = nt::lda_eigen_residual(m);
  o.check(residual <= kLdaResidualTol, fmt::format("generalized eigen residual {:.2e}", residual));
  return o;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

ExperimentConfig end_to_end_config(const fs::path& overrides) {
  return fs::exists(overrides) ? load_config(overrides) : ExperimentConfig::desk();
}

Outcome end_to_end(const fs::path& work, const fs::path& config_path) {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const auto config = end_to_end_config(config_path);
  o.notes.push_back(fmt::format("config {} ({} patients, {} phantoms)", config_path.filename().string(),
                                config.dataset.n_patients, to_string(config.phantom.shape)));
  const fs::path data = work / "e2e" / "data";
  const auto gen = commands::cmd_generate(config, data, true);
  o.notes.push_back(fmt::format("generated {} images from {} patients", gen.images, gen.patients));
  for (auto kind : {ModelKind::vae, ModelKind::ivae}) {
    const std::string name(to_string(kind));
    const auto& spec = config.model(kind);
    const auto tr = commands::cmd_train(config, kind, data, work / "e2e" / name, true);
    const auto& curve = tr.train.curve;
    if (tr.train.diverged || curve.empty()) {
      o.check(false, name + " training diverged: " + tr.train.message);
      continue;
    }
    const double first = curve.front().loss_recon, last = curve.back().loss_recon;
    o.check(last <= kReconRatio * first,
            fmt::format("{} latent {} x {} epochs: recon MSE {:.5f} -> {:.5f} (ratio {:.3f})", name,
                        spec.architecture.latent_dim, curve.size(), first, last, last / first));
    if (kind == ModelKind::ivae) {
      const auto& end = curve.back();
      o.notes.push_back(fmt::format("ivae final E(x) {:.3f}, E(G(z)) {:.3f}, margin {}", end.loss_kl,
                                    end.energy_fake.value_or(0.0), spec.train.loss.margin));
    }
    const auto an = commands::cmd_analyze(&config, tr.final_checkpoint, data, work / "e2e" / ("analysis_" + name), true);
    o.check(an.ms_vs_rest_accuracy >= kMsVsRestMin,
            fmt::format("{} MS-vs-rest test accuracy {:.4f} on {} test images (5-class accuracy {:.4f})", name,
                        an.ms_vs_rest_accuracy, an.test_images, an.accuracy));
    const double top = *std::max_element(an.fisher.begin(), an.fisher.end());
    const double med = median(an.fisher);
    o.check(top >= kFisherRatioMin * med,
            fmt::format("{} fisher max {:.4f} vs median {:.4f} (ratio {:.2f})", name, top, med, top / med));
  }
  const double elapsed = seconds_since(t0);
  o.check(elapsed <= kEndToEndBudgetSeconds, fmt::format("runtime {:.0f} s", elapsed));
  return o;
}

std::vector<Volume> toy_volumes(std::size_t n, std::uint64_t seed) {
  const auto batch = nt::toy_batch<float>(nt::toy_architecture(), n, seed);
  std::vector<Volume> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(volume_from_batch(batch, i));
  return out;
}

bool partition_equal(const ParameterStore<float>& a, const ParameterStore<float>& b, Component c) {
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& x = a.entries()[i];
    if (x.component == c && !(x.value == b.entries()[i].value)) return false;
  }
  return true;
}

Outcome ivae_contracts() {
  Outcome o;
  const auto arch = nt::toy_architecture();
  {
    Vae<double> model(arch, 3);
    const auto xt = nt::toy_batch<double>(arch, 4, 1);
    const auto zt = nt::random_tensor<double>({4, arch.latent_dim}, 2, -1.5, 1.5);
    Tape<double> tape;
    const auto b = model.bind(tape, GradTargets::none());
    RngStream rng(4);
    const auto fns = model_fns(model, b, {Mode::eval, false}, {Mode::eval, false}, rng);
    const auto fake = fns.encode(fns.decode(tape.constant(zt)));
    const auto energies = ad::kl_divergence_rows(fake.mu, fake.log_sigma).value();
    const std::vector<double> rows(energies.data().begin(), energies.data().end());
    LossOptions opt;
    opt.margin = *std::min_element(rows.begin(), rows.end());
    RngStream r1(5);
    const double at_min = ivae_encoder_loss(tape.constant(xt), tape.constant(zt), fns, opt, r1).hinge.value().item();
    opt.margin = 0.0;
    RngStream r2(5);
    const double at_zero = ivae_encoder_loss(tape.constant(xt), tape.constant(zt), fns, opt, r2).hinge.value().item();
    opt.margin = 2.0 * *std::max_element(rows.begin(), rows.end());
    RngStream r3(5);
    const double above = ivae_encoder_loss(tape.constant(xt), tape.constant(zt), fns, opt, r3).hinge.value().item();
    o.check(at_min == 0.0 && at_zero == 0.0 && above > 0.0,
            fmt::format("hinge {} at m = min E(G(z)), {} at m = 0, {:.4f} at m = 2 max E(G(z))", at_min, at_zero, above));
  }
  {
    Vae<float> model(arch, 8);
    const auto before = model.parameters();
    const auto x = nt::toy_batch<float>(arch, 4, 1);
    Tensor<float> z({4, arch.latent_dim}, 0.3f);
    RngStream rng(1);
    const auto r = ivae_encoder_step(model, x, z, LossOptions{}, rng);
    Optimizer<float> opt(OptimizerConfig{});
    opt.step(model.parameters(), r.gradients);
    o.check(partition_equal(before, model.parameters(), Component::decoder) &&
                !partition_equal(before, model.parameters(), Component::encoder),
            "encoder step: decoder bitwise unchanged, encoder updated");
  }
  {
    Vae<float> model(arch, 8);
    const auto before = model.parameters();
    const auto x = nt::toy_batch<float>(arch, 4, 1);
    Tensor<float> z({4, arch.latent_dim}, 0.3f);
    RngStream rng(1);
    const auto r = ivae_generator_step(model, x, z, LossOptions{}, rng);
    Optimizer<float> opt(OptimizerConfig{});
    opt.step(model.parameters(), r.gradients);
    o.check(partition_equal(before, model.parameters(), Component::encoder) &&
                !partition_equal(before, model.parameters(), Component::decoder),
            "generator step: encoder bitwise unchanged, decoder updated");
  }
  {
    // Probe: plain SGD turns the delivered gradient into a parameter change.
    Vae<double> model(arch, 10);
    const auto x = nt::toy_batch<double>(arch, 3, 5);
    Tensor<double> z({3, arch.latent_dim}, std::vector<double>{0.2, -0.5, 1.0, 0.3, -0.7, 0.1});
    auto loss_g = [&](Gradients<double>* grads) {
      RngStream rng(12);
      const auto r = ivae_generator_step(model, x, z, LossOptions{}, rng);
      if (grads) *grads = r.gradients;
      return r.total;
    };
    Gradients<double> g;
    loss_g(&g);
    const auto before = model.parameters();
    OptimizerConfig sgd;
    sgd.kind = OptimizerConfig::Kind::sgd_momentum;
    sgd.momentum = 0.0;
    sgd.learning_rate = 1e-2;
    Vae<double> stepped = model;
    Optimizer<double>(sgd).step(stepped.parameters(), g);
    double encoder_probe = 0;
    for (std::size_t i = 0; i < before.size(); ++i) {
      const auto& p = before.entries()[i];
      if (p.component != Component::encoder) continue;
      for (std::size_t k = 0; k < p.value.size(); ++k) {
        encoder_probe = std::max(
            encoder_probe, std::abs(p.value[k] - stepped.parameters().entries()[i].value[k]) / sgd.learning_rate);
      }
    }
    double diff2 = 0, num2 = 0;
    for (const auto* name : {"dec.deconv0.weight", "dec.project.weight"}) {
      auto& p = model.parameters().at(name);
      for (std::size_t i = 0; i < p.value.size(); i += 3) {
        const double orig = p.value[i];
        p.value[i] = orig + kGradStepF64;
        const double up = loss_g(nullptr);
        p.value[i] = orig - kGradStepF64;
        const double down = loss_g(nullptr);
        p.value[i] = orig;
        const double numeric = (up - down) / (2 * kGradStepF64);
        diff2 += (g.at(name)[i] - numeric) * (g.at(name)[i] - numeric);
        num2 += numeric * numeric;
      }
    }
    const double decoder_err = std::sqrt(diff2) / std::max(std::sqrt(num2), 1e-12);
    o.check(encoder_probe == 0.0 && decoder_err <= kGradTolF64,
            fmt::format("dL_G/dphi probe max {:.1e}; dL_G/dtheta vs finite differences rel. error {:.2e}",
                        encoder_probe, decoder_err));
  }
  return o;
}

Outcome determinism(const fs::path& work) {
  Outcome o;
  auto config = ExperimentConfig::desk();
  config.seed = 5;
  config.dataset.n_patients = 30;
  config.vae.train.epochs = 2;
  config.vae.train.batch_size = 8;
  const fs::path root = work / "determinism";
  commands::cmd_generate(config, root / "data", true);
  commands::cmd_train(config, ModelKind::vae, root / "data", root / "run_a", true);
  commands::cmd_train(config, ModelKind::vae, root / "data", root / "run_b", true);
  for (const auto* file : {"model.nvck", "loss.csv"}) {
    const bool same = io::read_file(root / "run_a" / file) == io::read_file(root / "run_b" / file);
    o.check(same, fmt::format("{} bitwise identical across two runs", file));
  }
  std::size_t volumes = 0, identical = 0;
  for (const auto& e : fs::directory_iterator(root / "data" / "volumes")) {
    const auto bytes = io::read_file(e.path());
    const fs::path copy = root / "roundtrip.v3f";
    io::write_volume(copy, io::read_volume(e.path()));
    ++volumes;
    identical += io::read_file(copy) == bytes;
  }
  o.check(volumes > 0 && identical == volumes,
          fmt::format("{} / {} volume files round-trip byte-identically", identical, volumes));
  return o;
}

Outcome split_discipline() {
  Outcome o;
  bool spans = false, unassigned = false;
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto s = split_by_patient(nt::random_manifest(seed), 0.9, seed * 7 + 1).manifest;
    const auto a = nt::audit_split(s, 0.9);
    spans = spans || a.patient_spans_splits;
    unassigned = unassigned || a.unassigned;
    worst = std::max(worst, a.worst_class_deviation);
  }
  o.check(!spans && !unassigned, "no patient spans train and test over 100 manifests");
  o.check(worst <= kSplitDeviationMax, fmt::format("worst per-class deviation from 90/10 is {:.2f} patients", worst));
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"neurovol acceptance suite"};
  fs::path work = fs::temp_directory_path() / "neurovol_acceptance";
  fs::path config = NEUROVOL_ACCEPTANCE_CONFIG;
  std::vector<int> only;
  bool verbose = false;
  app.add_option("--work-dir", work, "Scratch directory for generated data and models");
  app.add_option("--config", config, "Configuration for the end-to-end run");
  app.add_option("--only", only, "Run only these criteria")->check(CLI::Range(1, 9));
  app.add_flag("-v,--verbose", verbose, "Show training logs");
  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(verbose ? spdlog::level::info : spdlog::level::warn);
  fs::create_directories(work);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"published confusion arithmetic", table_arithmetic},
      {"gradient suite", gradient_suite},
      {"KL oracle", kl_oracle},
      {"preprocessing", preprocessing},
      {"LDA oracle", lda_oracle},
      {"end-to-end desk run", [&] { return end_to_end(work, config); }},
      {"IVAE loss contracts", ivae_contracts},
      {"determinism", [&] { return determinism(work); }},
      {"split discipline", split_discipline},
  };

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.check(false, std::string("exception: ") + e.what());
    }
    failures += !o.pass;
    std::printf("%s %d %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(), seconds_since(t0));
    for (const auto& n : o.notes) std::printf("    %s\n", n.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
