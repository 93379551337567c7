#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "neurovol/config.hpp"
#include "neurovol/train.hpp"

namespace neurovol::commands {

namespace fs = std::filesystem;

/// Refuses an existing non-empty directory unless `force`; creates it otherwise.
void prepare_output_dir(const fs::path& dir, bool force);

struct GenerateResult {
  std::size_t patients = 0;
  std::size_t images = 0;
  std::array<std::size_t, kNumClasses> class_patients{};
  std::vector<std::string> warnings;
};

/// Writes manifest.jsonl (split applied), dataset.json, config.json and volumes/.
GenerateResult cmd_generate(const ExperimentConfig& config, const fs::path& out, bool force);

struct PreprocessResult {
  std::size_t processed = 0;
  std::vector<std::string> errors;
};

/// trim -> downsample -> bound_and_normalize for every record of `data`. A
/// corrupt or ill-shaped input is reported and skipped.
PreprocessResult cmd_preprocess(const ExperimentConfig& config, const fs::path& data,
                                const fs::path& out, bool force);

struct TrainCommandResult {
  TrainResult train;
  fs::path final_checkpoint;
};

/// Trains on split=train records. Writes checkpoints/, model.nvck, loss.csv,
/// batches.csv, config.json and run.json.
TrainCommandResult cmd_train(const ExperimentConfig& config, ModelKind kind, const fs::path& data,
                             const fs::path& out, bool force);

/// Loads a checkpoint. With `config`, its architecture for the checkpoint's model
/// kind must match. Returns the model and the effective configuration (the one
/// stored in the checkpoint when `config` is null).
std::pair<Vae<float>, ExperimentConfig> load_checkpoint_model(const fs::path& checkpoint,
                                                              const ExperimentConfig* config);

struct ReconstructResult {
  std::vector<std::string> image_ids;
  std::vector<double> mse;
};

/// Decodes encoder means of the first `n` (default all) records of `split`.
ReconstructResult cmd_reconstruct(const ExperimentConfig* config, const fs::path& checkpoint,
                                  const fs::path& data, const fs::path& out, std::optional<std::size_t> n,
                                  Split split, bool force);

/// n prior samples: volumes/sample_XXXX.v3f plus three centre-slice PGMs each.
std::size_t cmd_sample(const ExperimentConfig* config, const fs::path& checkpoint, std::size_t n,
                       const fs::path& out, bool force);

struct AnalyzeResult {
  std::vector<std::string> classes;
  double accuracy = 0;
  double ms_vs_rest_accuracy = 0;
  std::vector<double> fisher;
  std::vector<std::size_t> top_dims;
  std::size_t train_images = 0;
  std::size_t test_images = 0;
};

/// Encoder means for all images; LDA fitted on train and evaluated on test;
/// fisher scores on train; traversals of the top-k dims; metadata bias report.
AnalyzeResult cmd_analyze(const ExperimentConfig* config, const fs::path& checkpoint,
                          const fs::path& data, const fs::path& out, bool force);

/// Traverses `dim`, or the top-k fisher dims of the train split when unset.
std::vector<std::size_t> cmd_traverse(const ExperimentConfig* config, const fs::path& checkpoint,
                                      const fs::path& data, const fs::path& out,
                                      std::optional<std::size_t> dim, bool force);

}  // namespace neurovol::commands
