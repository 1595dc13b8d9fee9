#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "recon_ood/diffusion.hpp"
#include "recon_ood/encoder.hpp"
#include "recon_ood/metrics.hpp"
#include "recon_ood/report.hpp"
#include "recon_ood/synth_data.hpp"

namespace recon_ood {

struct ScheduleConfig {
  int steps = 100;
  double beta_start = 1e-4;
  double beta_end = 0.02;
};

/// Declarative description of one pipeline run. The top-level seed is copied
/// into every sub-config; output_dir and workers do not affect results and
/// are excluded from the digest.
struct RunConfig {
  std::uint64_t seed = 42;
  DatasetManifest dataset;
  EncoderConfig encoder;
  ScheduleConfig schedule;
  DenoiserConfig denoiser;
  ReconstructionConfig reconstruction;
  std::filesystem::path output_dir = "runs";
  int workers = 1;

  void apply_seed();
  void validate() const;  // ConfigError
  NoiseSchedule make_noise_schedule() const;

  // Fields that determine results; hashed for the run digest.
  nlohmann::json canonical_json() const;
  nlohmann::json to_json() const;
  // Missing keys keep defaults; unknown keys and bad values raise ConfigError.
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);

  std::string digest() const;
  std::filesystem::path run_dir() const;
};

// Applies RECON_OOD_SEED if set. ConfigError if it is not an unsigned integer.
void apply_env_overrides(RunConfig& config);

/// Layout of one run directory.
struct RunPaths {
  std::filesystem::path root;
  std::filesystem::path data_dir;
  DatasetFiles dataset;
  std::filesystem::path config;
  std::filesystem::path ledger;
  std::filesystem::path encoder_ckpt;
  std::filesystem::path encoder_curve;
  std::filesystem::path denoiser_ckpt;
  std::filesystem::path denoiser_curve;
  std::filesystem::path scores;
  std::filesystem::path report_json;
  std::filesystem::path report_txt;

  static RunPaths for_config(const RunConfig& config);
};

struct StageRecord {
  std::string status;  // "complete" or "failed"
  double wall_seconds = 0.0;
  std::map<std::string, std::string> outputs;  // file name → SHA-256
  nlohmann::json details = nlohmann::json::object();
};

/// Per-stage status with content digests of every output.
struct RunLedger {
  std::string config_digest;
  std::map<std::string, StageRecord> stages;

  nlohmann::json to_json() const;
  static RunLedger from_json(const nlohmann::json& j);
  static RunLedger load_or_new(const std::filesystem::path& path, const std::string& config_digest);
  void save(const std::filesystem::path& path) const;
};

struct StageSummary {
  std::filesystem::path run_dir;
  std::map<std::string, std::string> outputs;
};

StageSummary cmd_gen_data(const RunConfig& config);
// Throws MissingStageError without the dataset, TrainingFailure below the
// encoder accuracy floor.
StageSummary cmd_train(const RunConfig& config);
// Throws MissingStageError without checkpoints or dataset.
StageSummary cmd_evaluate(const RunConfig& config);
// Renders report.txt and one pr_<family>.csv per family into out_dir.
StageSummary cmd_report(const std::filesystem::path& report_json, const std::filesystem::path& out_dir);
StageSummary cmd_all(const RunConfig& config);

/// Scored test and calibration records for one trained pipeline.
struct Evaluation {
  std::vector<ScoredSample> test;
  std::vector<ScoredSample> calibration;
  std::vector<ScoredSample> msp_test;
};

// One sample at a time with a per-sample noise seed, so results do not depend
// on the worker count.
Evaluation score_samples(const Encoder& encoder, const Denoiser& denoiser, const NoiseSchedule& schedule,
                         const ReconstructionConfig& recon, std::span<const LabeledSample> test,
                         std::uint64_t test_id_base, std::span<const LabeledSample> calibration,
                         std::uint64_t calibration_id_base, int workers);

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitMissingStage = 3;
inline constexpr int kExitTrainingFloor = 4;
inline constexpr int kExitIo = 5;
inline constexpr int kExitInternal = 1;

// Runs fn, printing any error to err and mapping it to an exit code.
int run_guarded(const std::function<void()>& fn, std::ostream& err);

}  // namespace recon_ood
