// neurovol: phantom generation, preprocessing, VAE / IntroVAE training and
// latent-space analysis from one entry point.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "neurovol/commands.hpp"
#include "neurovol/config.hpp"
#include "neurovol/error.hpp"

namespace fs = std::filesystem;
using namespace neurovol;

namespace {

enum Exit : int { kOk = 0, kValidation = 1, kIo = 2 };

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool force = false;
  std::string model = "vae";
  std::string checkpoint;
  std::optional<std::size_t> n;
  std::string data;
  std::optional<std::size_t> dim;
  std::string split = "test";
  bool quiet = false;
};

ExperimentConfig experiment_config(const Options& o) {
  ExperimentConfig c = o.config.empty() ? ExperimentConfig::desk() : load_config(o.config);
  if (o.seed) c.seed = *o.seed;
  return c;
}

/// Configuration override for checkpoint-driven commands: an explicit --config,
/// or the checkpoint's own configuration when only --seed is given.
std::optional<ExperimentConfig> override_config(const Options& o) {
  if (!o.config.empty()) return experiment_config(o);
  if (!o.seed) return std::nullopt;
  auto [model, effective] = commands::load_checkpoint_model(o.checkpoint, nullptr);
  effective.seed = *o.seed;
  return effective;
}

fs::path data_dir(const Options& o) {
  if (o.data.empty()) throw ValidationError("--data DIR is required");
  return o.data;
}

int run(const std::string& name, const Options& o) {
  if (name == "generate") {
    const auto r = commands::cmd_generate(experiment_config(o), o.out, o.force);
    std::cout << "generated " << r.images << " images for " << r.patients << " patients\n";
    return kOk;
  }
  if (name == "preprocess") {
    const auto r = commands::cmd_preprocess(experiment_config(o), data_dir(o), o.out, o.force);
    std::cout << "preprocessed " << r.processed << " volumes, " << r.errors.size() << " failed\n";
    return r.errors.empty() ? kOk : kIo;
  }
  if (name == "train") {
    const auto r = commands::cmd_train(experiment_config(o), parse_model_kind(o.model), data_dir(o), o.out, o.force);
    if (r.train.diverged) {
      std::cerr << "error: " << r.train.message << "\n";
      return kValidation;
    }
    std::cout << "trained " << r.train.curve.size() << " epochs; checkpoint " << r.final_checkpoint.string() << "\n";
    return kOk;
  }
  if (o.checkpoint.empty()) throw ValidationError("--checkpoint PATH is required");
  const auto cfg = override_config(o);
  const ExperimentConfig* cfg_ptr = cfg ? &*cfg : nullptr;
  if (name == "reconstruct") {
    const auto r = commands::cmd_reconstruct(cfg_ptr, o.checkpoint, data_dir(o), o.out, o.n, parse_split(o.split), o.force);
    std::cout << "reconstructed " << r.image_ids.size() << " volumes\n";
    return kOk;
  }
  if (name == "sample") {
    const auto count = commands::cmd_sample(cfg_ptr, o.checkpoint, o.n.value_or(5), o.out, o.force);
    std::cout << "sampled " << count << " volumes\n";
    return kOk;
  }
  if (name == "analyze") {
    const auto r = commands::cmd_analyze(cfg_ptr, o.checkpoint, data_dir(o), o.out, o.force);
    std::cout << "test accuracy " << r.accuracy << ", ms-vs-rest accuracy " << r.ms_vs_rest_accuracy << "\n";
    return kOk;
  }
  if (name == "traverse") {
    const auto dims = commands::cmd_traverse(cfg_ptr, o.checkpoint, o.data, o.out, o.dim, o.force);
    std::cout << "traversed " << dims.size() << " dimension(s)\n";
    return kOk;
  }
  throw ValidationError("unknown command '" + name + "'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Phantom brain volumes, VAE / IntroVAE training and latent-space analysis"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub, bool needs_out) {
    sub->add_option("--config", o.config, "Experiment configuration (JSON)")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "Override the master seed");
    auto* out = sub->add_option("--out", o.out, "Output directory");
    if (needs_out) out->required();
    sub->add_flag("--force", o.force, "Write into an existing non-empty output directory");
    sub->add_flag("-q,--quiet", o.quiet, "Only log warnings and errors");
  };

  auto* gen = app.add_subcommand("generate", "Generate a phantom dataset with a patient-level split");
  common(gen, true);

  auto* pre = app.add_subcommand("preprocess", "Trim, downsample and normalise raw volumes");
  common(pre, true);
  pre->add_option("--data", o.data, "Raw dataset directory")->required();

  auto* train = app.add_subcommand("train", "Train a VAE or IntroVAE on the train split");
  common(train, true);
  train->add_option("--data", o.data, "Dataset directory")->required();
  train->add_option("--model", o.model, "vae or ivae")->check(CLI::IsMember({"vae", "ivae"}));

  auto* rec = app.add_subcommand("reconstruct", "Reconstruct images through encoder means");
  common(rec, true);
  rec->add_option("--checkpoint", o.checkpoint, "Model checkpoint")->required();
  rec->add_option("--data", o.data, "Dataset directory")->required();
  rec->add_option("--n", o.n, "Number of images (default: all)");
  rec->add_option("--split", o.split, "train or test")->check(CLI::IsMember({"train", "test"}));

  auto* sample = app.add_subcommand("sample", "Decode samples drawn from the standard normal prior");
  common(sample, true);
  sample->add_option("--checkpoint", o.checkpoint, "Model checkpoint")->required();
  sample->add_option("--n", o.n, "Number of samples (default 5)");

  auto* analyze = app.add_subcommand("analyze", "LDA, metrics, fisher scores, traversals and bias report");
  common(analyze, true);
  analyze->add_option("--checkpoint", o.checkpoint, "Model checkpoint")->required();
  analyze->add_option("--data", o.data, "Dataset directory")->required();

  auto* trav = app.add_subcommand("traverse", "Decode sweeps along single latent dimensions");
  common(trav, true);
  trav->add_option("--checkpoint", o.checkpoint, "Model checkpoint")->required();
  trav->add_option("--data", o.data, "Dataset directory (ranks dims when --dim is not given)");
  trav->add_option("--dim", o.dim, "Latent dimension to traverse");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kValidation;
  }

  spdlog::set_level(o.quiet ? spdlog::level::warn : spdlog::level::info);
  const std::string name = app.get_subcommands().front()->get_name();
  try {
    if (name == "traverse" && !o.dim && o.data.empty()) {
      throw ValidationError("traverse needs --dim or --data");
    }
    return run(name, o);
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  }
}
