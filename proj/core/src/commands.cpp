#include "neurovol/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "neurovol/error.hpp"
#include "neurovol/io.hpp"
#include "neurovol/lda.hpp"
#include "neurovol/metrics.hpp"

namespace neurovol::commands {

namespace {

std::string num(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string digest_comment(const std::string& digest) { return "config_digest " + digest; }

void write_json(const fs::path& path, const nlohmann::json& j) {
  io::write_file_atomic(path, j.dump(2) + "\n");
}

void write_run_json(const fs::path& out, const std::string& command, const ExperimentConfig& config,
                    nlohmann::json extra) {
  extra["command"] = command;
  extra["config_digest"] = config_digest(config);
  write_json(out / "run.json", extra);
  io::write_file_atomic(out / "config.json", config_text(config));
}

std::vector<ImageRecord> records_of(const DatasetManifest& m, Split split) {
  std::vector<ImageRecord> out;
  std::copy_if(m.records.begin(), m.records.end(), std::back_inserter(out),
               [split](const ImageRecord& r) { return r.split == split; });
  return out;
}

Tensor<double> encoder_means(Vae<float>& model, std::span<const Volume> volumes, std::uint64_t seed) {
  RngStream rng(seed);
  return encode(model, volumes, rng).mu.cast<double>();
}

Tensor<double> select_rows(const Tensor<double>& m, const std::vector<std::size_t>& rows) {
  const std::size_t d = m.extent(1);
  Tensor<double> out(Shape{rows.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(m.data().begin() + static_cast<std::ptrdiff_t>(rows[i] * d), d,
                out.data().begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  return out;
}

std::string lda_csv(const std::vector<ImageRecord>& records, const std::vector<std::string>& labels,
                    const Tensor<double>& coords) {
  const std::size_t k = std::min<std::size_t>(coords.extent(1), 3);
  std::ostringstream out;
  out << "image_id,class_label";
  for (std::size_t j = 0; j < k; ++j) out << ",ld" << j + 1;
  out << '\n';
  for (std::size_t i = 0; i < records.size(); ++i) {
    out << records[i].image_id << ',' << labels[i];
    for (std::size_t j = 0; j < k; ++j) out << ',' << num(coords[i * coords.extent(1) + j]);
    out << '\n';
  }
  return out.str();
}

std::string display_label(ClassLabel c) {
  return is_leuk(c) ? "leuk" : std::string(to_string(c));
}

struct TraversalOutput {
  nlohmann::json entries = nlohmann::json::array();
};

TraversalOutput write_traversals(Vae<float>& model, const std::vector<std::size_t>& dims,
                                 const std::vector<double>& scores, const std::vector<double>& values,
                                 const fs::path& dir, const std::string& digest) {
  TraversalOutput out;
  const Tensor<float> zero(Shape{1, model.config().latent_dim});
  const Volume baseline = decode(model, zero).front();
  for (auto d : dims) {
    const auto volumes = latent_traversal(model, d, values);
    nlohmann::json files = nlohmann::json::array();
    std::vector<double> diffs;
    for (std::size_t i = 0; i < volumes.size(); ++i) {
      char stem[64];
      std::snprintf(stem, sizeof stem, "dim%03zu_v%zu", d, i);
      io::write_volume(dir / "volumes" / (std::string(stem) + ".v3f"), volumes[i]);
      io::write_center_slices(dir / "slices", stem, volumes[i], digest_comment(digest));
      double diff = 0;
      for (std::size_t v = 0; v < baseline.size(); ++v) {
        diff = std::max(diff, std::abs(static_cast<double>(volumes[i].data()[v]) - baseline.data()[v]));
      }
      diffs.push_back(diff);
      files.push_back(std::string(stem));
    }
    nlohmann::json entry = {{"dim", d}, {"values", values}, {"stems", files}, {"max_abs_diff_from_zero_code", diffs}};
    entry["fisher_score"] = d < scores.size() ? num(scores[d]) : "";
    out.entries.push_back(entry);
  }
  return out;
}

std::vector<std::size_t> class_labels_index(const std::vector<ImageRecord>& records,
                                            const std::vector<std::string>& classes,
                                            std::string (*label_of)(ClassLabel)) {
  std::map<std::string, std::size_t> idx;
  for (std::size_t i = 0; i < classes.size(); ++i) idx[classes[i]] = i;
  std::vector<std::size_t> out;
  for (const auto& r : records) out.push_back(idx.at(label_of(r.class_label)));
  return out;
}

std::string plain_label(ClassLabel c) { return std::string(to_string(c)); }

}  // namespace

void prepare_output_dir(const fs::path& dir, bool force) {
  std::error_code ec;
  if (fs::exists(dir, ec)) {
    if (!fs::is_directory(dir, ec)) throw IoError(dir, "output path exists and is not a directory");
    if (!fs::is_empty(dir, ec) && !force) {
      throw ValidationError("output directory " + dir.string() + " already exists; pass --force to overwrite");
    }
  }
  fs::create_directories(dir, ec);
  if (ec) throw IoError(dir, "cannot create directory: " + ec.message());
}

GenerateResult cmd_generate(const ExperimentConfig& config, const fs::path& out, bool force) {
  config.validate();
  prepare_output_dir(out, force);
  PhantomConfig phantom = config.phantom;
  if (config.dataset.raw_mode) phantom.shape = config.dataset.raw_shape;
  const std::string digest = config_digest(config);

  const DatasetManifest raw = generate_dataset(
      phantom, config.dataset.n_patients, config.dataset.images, config.seed,
      [&](const ImageRecord& r, const Volume& v) { io::write_volume(io::volume_path(out, r.image_id), v); });
  SplitResult split = split_by_patient(raw, config.dataset.train_fraction, mix_seed(config.seed, 1));
  validate_manifest(split.manifest);
  for (const auto& w : split.warnings) spdlog::warn("{}", w);
  io::write_manifest(out / "manifest.jsonl", split.manifest, digest);

  GenerateResult result;
  result.patients = config.dataset.n_patients;
  result.images = split.manifest.records.size();
  result.class_patients = class_counts(config.dataset.n_patients, phantom.class_proportions);
  result.warnings = split.warnings;

  nlohmann::json per_class = nlohmann::json::object();
  for (auto c : kAllClasses) per_class[std::string(to_string(c))] = result.class_patients[class_index(c)];
  write_json(out / "dataset.json", {{"config_digest", digest},
                                    {"seed", config.seed},
                                    {"config_hash", split.manifest.config_hash},
                                    {"shape", {phantom.shape.nx, phantom.shape.ny, phantom.shape.nz}},
                                    {"patients", result.patients},
                                    {"images", result.images},
                                    {"class_patients", per_class},
                                    {"warnings", result.warnings}});
  write_run_json(out, "generate", config, {{"images", result.images}});
  spdlog::info("generated {} images for {} patients in {}", result.images, result.patients, out.string());
  return result;
}

PreprocessResult cmd_preprocess(const ExperimentConfig& config, const fs::path& data,
                                const fs::path& out, bool force) {
  config.validate();
  const DatasetManifest manifest = io::read_manifest(data);
  prepare_output_dir(out, force);
  const std::string digest = config_digest(config);
  PreprocessResult result;
  DatasetManifest kept = manifest;
  kept.records.clear();
  std::string reports;
  for (const auto& r : manifest.records) {
    try {
      const Volume raw = io::read_volume(io::volume_path(data, r.image_id));
      PreprocessReport report;
      const Volume v = preprocess_volume(raw, config.preprocess, &report);
      io::write_volume(io::volume_path(out, r.image_id), v);
      nlohmann::json j = report;
      j["image_id"] = r.image_id;
      j["config_digest"] = digest;
      reports += j.dump() + "\n";
      kept.records.push_back(r);
      ++result.processed;
    } catch (const std::exception& e) {
      result.errors.push_back(r.image_id + ": " + e.what());
      spdlog::error("preprocess {}: {}", r.image_id, e.what());
    }
  }
  io::write_file_atomic(out / "preprocess_reports.jsonl", reports);
  io::write_manifest(out / "manifest.jsonl", kept, digest);
  write_json(out / "dataset.json", {{"config_digest", digest},
                                    {"seed", manifest.seed},
                                    {"config_hash", manifest.config_hash},
                                    {"source", data.string()},
                                    {"images", result.processed}});
  write_run_json(out, "preprocess", config,
                 {{"processed", result.processed}, {"errors", result.errors}});
  return result;
}

TrainCommandResult cmd_train(const ExperimentConfig& config, ModelKind kind, const fs::path& data,
                             const fs::path& out, bool force) {
  config.validate();
  const DatasetManifest manifest = io::read_manifest(data);
  validate_manifest(manifest);
  const auto records = records_of(manifest, Split::train);
  if (records.empty()) throw ValidationError("dataset " + data.string() + " has no train-split images");
  const auto volumes = io::load_volumes(data, records);
  prepare_output_dir(out, force);

  const ModelSpec& spec = config.model(kind);
  const TrainConfig tc = config.train_config(kind);
  const std::string digest = config_digest(config);
  const nlohmann::json base_header = {{"model", to_string(kind)},
                                      {"config_digest", digest},
                                      {"train_config_digest", train_config_digest(tc)},
                                      {"config", config}};
  Vae<float> model(spec.architecture, mix_seed(config.seed, 2));

  std::string batches = "epoch,batch,image_ids\n";
  TrainHooks<float> hooks;
  hooks.on_batch = [&](const BatchRecord& b) {
    batches += std::to_string(b.epoch) + "," + std::to_string(b.batch) + ",";
    for (std::size_t i = 0; i < b.indices.size(); ++i) {
      if (i) batches += ';';
      batches += records[b.indices[i]].image_id;
    }
    batches += '\n';
  };
  hooks.on_checkpoint = [&](std::size_t epoch, const Vae<float>& m) {
    nlohmann::json h = base_header;
    h["epoch"] = epoch;
    char name[32];
    std::snprintf(name, sizeof name, "epoch_%04zu.nvck", epoch);
    io::write_checkpoint(out / "checkpoints" / name, m, h);
  };

  spdlog::info("training {} on {} images ({} epochs, batch {})", to_string(kind), records.size(),
               tc.epochs, tc.batch_size);
  TrainCommandResult result;
  result.train = kind == ModelKind::vae ? train_vae(model, volumes, tc, hooks)
                                        : train_ivae(model, volumes, tc, hooks);

  std::string loss = kind == ModelKind::vae ? "epoch,loss_total,loss_recon,loss_kl\n"
                                            : "epoch,loss_total,loss_recon,loss_kl,loss_E,loss_G\n";
  for (const auto& e : result.train.curve) {
    loss += std::to_string(e.epoch) + "," + num(e.loss_total) + "," + num(e.loss_recon) + "," + num(e.loss_kl);
    if (kind == ModelKind::ivae) loss += "," + num(e.loss_e.value_or(0)) + "," + num(e.loss_g.value_or(0));
    loss += '\n';
  }
  io::write_file_atomic(out / "loss.csv", loss);
  io::write_file_atomic(out / "batches.csv", batches);

  nlohmann::json h = base_header;
  h["epoch"] = result.train.last_good_epoch;
  result.final_checkpoint = out / "model.nvck";
  io::write_checkpoint(result.final_checkpoint, model, h);

  nlohmann::json energies = nlohmann::json::array();
  for (const auto& e : result.train.curve) {
    if (e.energy_fake) energies.push_back(*e.energy_fake);
  }
  write_run_json(out, "train", config,
                 {{"model", to_string(kind)},
                  {"train_config_digest", train_config_digest(tc)},
                  {"architecture_digest", architecture_digest(spec.architecture)},
                  {"train_images", records.size()},
                  {"epochs_completed", result.train.curve.size()},
                  {"last_good_epoch", result.train.last_good_epoch},
                  {"diverged", result.train.diverged},
                  {"message", result.train.message},
                  {"energy_fake_per_epoch", energies}});
  return result;
}

std::pair<Vae<float>, ExperimentConfig> load_checkpoint_model(const fs::path& checkpoint,
                                                              const ExperimentConfig* config) {
  const io::Checkpoint ck = io::read_checkpoint(checkpoint);
  const ModelKind kind = parse_model_kind(ck.header.value("model", std::string("vae")));
  ExperimentConfig effective;
  if (config) {
    effective = *config;
  } else if (ck.header.contains("config")) {
    effective = ck.header.at("config").get<ExperimentConfig>();
  } else {
    effective = ExperimentConfig::desk();
    effective.model(kind).architecture = ck.architecture;
  }
  const ArchitectureConfig expected = effective.model(kind).architecture;
  return {io::load_model(checkpoint, &expected), effective};
}

ReconstructResult cmd_reconstruct(const ExperimentConfig* config, const fs::path& checkpoint,
                                  const fs::path& data, const fs::path& out, std::optional<std::size_t> n,
                                  Split split, bool force) {
  auto [model, effective] = load_checkpoint_model(checkpoint, config);
  const DatasetManifest manifest = io::read_manifest(data);
  auto records = records_of(manifest, split);
  if (n && *n < records.size()) records.resize(*n);
  if (records.empty()) throw ValidationError("no images in split " + std::string(to_string(split)));
  const auto volumes = io::load_volumes(data, records);
  prepare_output_dir(out, force);
  const std::string digest = config_digest(effective);

  RngStream rng(mix_seed(effective.seed, 4));
  const auto recon = reconstruct(model, volumes, true, rng);
  ReconstructResult result;
  std::string csv = "image_id,mse,sharpness_input,sharpness_reconstruction\n";
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& id = records[i].image_id;
    io::write_volume(out / "volumes" / (id + ".v3f"), recon[i]);
    io::write_center_slices(out / "slices", id + "_input", volumes[i], digest_comment(digest));
    io::write_center_slices(out / "slices", id + "_recon", recon[i], digest_comment(digest));
    double se = 0;
    for (std::size_t v = 0; v < volumes[i].size(); ++v) {
      const double d = static_cast<double>(recon[i].data()[v]) - volumes[i].data()[v];
      se += d * d;
    }
    const double mse = se / static_cast<double>(volumes[i].size());
    result.image_ids.push_back(id);
    result.mse.push_back(mse);
    csv += id + "," + num(mse) + "," + num(sharpness_score(volumes[i])) + "," +
           num(sharpness_score(recon[i])) + "\n";
  }
  io::write_file_atomic(out / "reconstruction.csv", csv);
  write_run_json(out, "reconstruct", effective,
                 {{"checkpoint", checkpoint.string()}, {"images", records.size()}, {"use_mean", true}});
  return result;
}

std::size_t cmd_sample(const ExperimentConfig* config, const fs::path& checkpoint, std::size_t n,
                       const fs::path& out, bool force) {
  if (n == 0) throw ValidationError("--n must be positive");
  auto [model, effective] = load_checkpoint_model(checkpoint, config);
  prepare_output_dir(out, force);
  const std::string digest = config_digest(effective);
  RngStream rng(mix_seed(effective.seed, 4));
  const auto samples = sample_prior(model, n, rng);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "sample_%04zu", i);
    io::write_volume(out / "volumes" / (std::string(stem) + ".v3f"), samples[i]);
    io::write_center_slices(out / "slices", stem, samples[i], digest_comment(digest));
  }
  write_run_json(out, "sample", effective, {{"checkpoint", checkpoint.string()}, {"samples", n}});
  return samples.size();
}

AnalyzeResult cmd_analyze(const ExperimentConfig* config, const fs::path& checkpoint,
                          const fs::path& data, const fs::path& out, bool force) {
  auto [model, effective] = load_checkpoint_model(checkpoint, config);
  const DatasetManifest manifest = io::read_manifest(data);
  validate_manifest(manifest);
  const auto train = records_of(manifest, Split::train);
  const auto test = records_of(manifest, Split::test);
  if (train.empty() || test.empty()) throw ValidationError("analyze needs both train and test images");
  prepare_output_dir(out, force);
  const std::string digest = config_digest(effective);

  const Tensor<double> mu_train = encoder_means(model, io::load_volumes(data, train), 0);
  const Tensor<double> mu_test = encoder_means(model, io::load_volumes(data, test), 0);

  AnalyzeResult result;
  result.train_images = train.size();
  result.test_images = test.size();
  std::vector<std::string> warnings;

  // Five-class LDA on classes with at least two training images.
  std::array<std::size_t, kNumClasses> train_counts{};
  for (const auto& r : train) ++train_counts[class_index(r.class_label)];
  std::vector<std::string> lda_classes;
  for (auto c : kAllClasses) {
    if (train_counts[class_index(c)] >= 2) lda_classes.emplace_back(to_string(c));
    else if (train_counts[class_index(c)] > 0) {
      warnings.push_back("class " + std::string(to_string(c)) +
                         " has fewer than 2 training images; excluded from LDA");
    }
  }
  std::vector<std::size_t> fit_rows;
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (train_counts[class_index(train[i].class_label)] >= 2) fit_rows.push_back(i);
  }
  std::vector<ImageRecord> fit_records;
  for (auto i : fit_rows) fit_records.push_back(train[i]);
  const auto fit_labels = class_labels_index(fit_records, lda_classes, plain_label);
  LdaOptions lda_opt{effective.analysis.lda_epsilon};
  const LdaModel lda = lda_fit(select_rows(mu_train, fit_rows), fit_labels, lda_classes, lda_opt);

  const auto predicted_idx = lda_classify(lda, mu_test);
  std::vector<std::string> actual, predicted;
  std::string predictions = "image_id,actual,predicted\n";
  std::size_t ms_hits = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    actual.emplace_back(to_string(test[i].class_label));
    predicted.push_back(lda_classes[predicted_idx[i]]);
    predictions += test[i].image_id + "," + actual.back() + "," + predicted.back() + "\n";
    ms_hits += (actual.back() == "ms") == (predicted.back() == "ms");
  }
  std::set<std::string> present(actual.begin(), actual.end());
  present.insert(lda_classes.begin(), lda_classes.end());
  for (auto c : kAllClasses) {
    if (present.count(std::string(to_string(c)))) result.classes.emplace_back(to_string(c));
  }
  const ConfusionStats stats = confusion_stats(predicted, actual, result.classes);
  result.accuracy = accuracy(predicted, actual);
  result.ms_vs_rest_accuracy = static_cast<double>(ms_hits) / static_cast<double>(test.size());

  nlohmann::json metrics = metrics_to_json(stats, result.accuracy);
  metrics["ms_vs_rest_accuracy"] = result.ms_vs_rest_accuracy;
  metrics["config_digest"] = digest;
  metrics["lda"] = {{"classes", lda.classes},
                    {"components", lda.components()},
                    {"epsilon", lda.epsilon},
                    {"eigenvalues", lda.eigenvalues}};
  write_json(out / "metrics.json", metrics);
  io::write_file_atomic(out / "predictions.csv", predictions);
  io::write_file_atomic(out / "lda.csv", lda_csv(test, actual, lda_project(lda, mu_test)));
  {
    std::vector<std::string> labels;
    for (const auto& r : fit_records) labels.emplace_back(to_string(r.class_label));
    io::write_file_atomic(out / "lda_train.csv", lda_csv(fit_records, labels, lda.fitted_coordinates));
  }

  // Display LDA with the three leukoencephalopathy grades merged.
  {
    const std::vector<std::string> merged{"healthy", "ms", "leuk"};
    std::map<std::string, std::size_t> merged_counts;
    for (const auto& r : train) ++merged_counts[display_label(r.class_label)];
    if (std::all_of(merged.begin(), merged.end(), [&](const std::string& c) { return merged_counts[c] >= 2; })) {
      const auto labels = class_labels_index(train, merged, display_label);
      const LdaModel display = lda_fit(mu_train, labels, merged, lda_opt);
      std::vector<std::string> test_labels;
      for (const auto& r : test) test_labels.push_back(display_label(r.class_label));
      io::write_file_atomic(out / "lda_display.csv", lda_csv(test, test_labels, lda_project(display, mu_test)));
    } else {
      warnings.push_back("merged display LDA skipped: a merged class has fewer than 2 training images");
    }
  }

  // Per-dimension fisher scores on the training means.
  std::vector<std::size_t> labels5;
  for (const auto& r : train) labels5.push_back(class_index(r.class_label));
  result.fisher = fisher_score_per_dim(mu_train, labels5);
  std::string fisher = "dim,score\n";
  for (std::size_t d = 0; d < result.fisher.size(); ++d) fisher += std::to_string(d) + "," + num(result.fisher[d]) + "\n";
  io::write_file_atomic(out / "fisher.csv", fisher);
  result.top_dims = top_dimensions(result.fisher, effective.analysis.traversal_top_k);

  const auto trav = write_traversals(model, result.top_dims, result.fisher,
                                     effective.analysis.traversal_values, out / "traversal", digest);
  write_json(out / "traversal" / "traversal.json", {{"config_digest", digest}, {"dims", trav.entries}});

  nlohmann::json bias = metadata_bias_report(manifest, effective.analysis.bias);
  bias["config_digest"] = digest;
  write_json(out / "bias.json", bias);

  write_run_json(out, "analyze", effective,
                 {{"checkpoint", checkpoint.string()},
                  {"train_images", train.size()},
                  {"test_images", test.size()},
                  {"accuracy", result.accuracy},
                  {"ms_vs_rest_accuracy", result.ms_vs_rest_accuracy},
                  {"top_dims", result.top_dims},
                  {"warnings", warnings}});
  return result;
}

std::vector<std::size_t> cmd_traverse(const ExperimentConfig* config, const fs::path& checkpoint,
                                      const fs::path& data, const fs::path& out,
                                      std::optional<std::size_t> dim, bool force) {
  auto [model, effective] = load_checkpoint_model(checkpoint, config);
  std::vector<std::size_t> dims;
  std::vector<double> scores;
  if (dim) {
    if (*dim >= model.config().latent_dim) {
      throw ValidationError("--dim " + std::to_string(*dim) + " out of range for latent size " +
                            std::to_string(model.config().latent_dim));
    }
    dims.push_back(*dim);
  } else {
    const DatasetManifest manifest = io::read_manifest(data);
    const auto train = records_of(manifest, Split::train);
    if (train.empty()) throw ValidationError("traverse needs train images to rank dimensions");
    const Tensor<double> mu = encoder_means(model, io::load_volumes(data, train), 0);
    std::vector<std::size_t> labels;
    for (const auto& r : train) labels.push_back(class_index(r.class_label));
    scores = fisher_score_per_dim(mu, labels);
    dims = top_dimensions(scores, effective.analysis.traversal_top_k);
  }
  prepare_output_dir(out, force);
  const std::string digest = config_digest(effective);
  const auto trav = write_traversals(model, dims, scores, effective.analysis.traversal_values, out, digest);
  write_json(out / "traversal.json", {{"config_digest", digest}, {"dims", trav.entries}});
  write_run_json(out, "traverse", effective, {{"checkpoint", checkpoint.string()}, {"dims", dims}});
  return dims;
}

}  // namespace neurovol::commands
