#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "recon_ood/digest.hpp"
#include "recon_ood/errors.hpp"
#include "recon_ood/harness.hpp"

using namespace recon_ood;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("recon_ood_harness_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RunConfig tiny_config(const fs::path& out) {
  RunConfig c;
  c.dataset.train_per_class = 12;
  c.dataset.calibration_per_class = 4;
  c.dataset.test_id_per_class = 5;
  c.dataset.test_ood_per_family = 6;
  c.encoder.epochs = 2;
  c.encoder.batch_size = 16;
  c.encoder.accuracy_floor = 0.0;
  c.denoiser.epochs = 2;
  c.denoiser.hidden1 = 32;
  c.denoiser.hidden2 = 32;
  c.output_dir = out;
  c.apply_seed();
  return c;
}

std::vector<double> curve_losses(const fs::path& p) {
  std::istringstream in(slurp(p));
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "epoch,loss");
  std::vector<double> out;
  while (std::getline(in, line)) out.push_back(std::stod(line.substr(line.find(',') + 1)));
  return out;
}

}  // namespace

TEST(RunConfig, JsonRoundTripIsLossless) {
  RunConfig c = tiny_config("some/where");
  c.seed = 77;
  c.encoder.temperature_init = 0.123456789012345;
  c.denoiser.adam.learning_rate = 3.3e-4;
  c.workers = 3;
  c.apply_seed();
  const auto back = RunConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  EXPECT_EQ(back.digest(), c.digest());
  EXPECT_EQ(back.denoiser.seed, 77u);
  EXPECT_EQ(back.encoder.adam.learning_rate, c.encoder.adam.learning_rate);
}

TEST(RunConfig, DigestIgnoresOutputDirAndWorkers) {
  RunConfig a, b;
  b.output_dir = "elsewhere";
  b.workers = 4;
  EXPECT_EQ(a.digest(), b.digest());
  b.seed = 43;
  b.apply_seed();
  EXPECT_NE(a.digest(), b.digest());
  EXPECT_EQ(a.run_dir().filename().string().rfind("run-", 0), 0u);
}

TEST(RunConfig, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(RunConfig::from_json({{"sed", 1}}), ConfigError);
  EXPECT_THROW(RunConfig::from_json({{"encoder", {{"dim", 3}}}}), ConfigError);
  EXPECT_THROW(RunConfig::from_json({{"seed", "forty-two"}}), ConfigError);
  EXPECT_THROW(RunConfig::from_json({{"reconstruction", {{"s_star", 500}}}}), ConfigError);
  EXPECT_THROW(RunConfig::from_json({{"schedule", {{"beta_start", 0.5}, {"beta_end", 0.1}}}}), ConfigError);
  EXPECT_THROW(RunConfig::from_json({{"workers", 0}}), ConfigError);
  const auto partial = RunConfig::from_json({{"seed", 5}});
  EXPECT_EQ(partial.dataset.seed, 5u);
  EXPECT_EQ(partial.reconstruction.s_star, 50);
}

TEST(RunConfig, LoadReportsParseErrors) {
  const auto dir = scratch("cfg");
  fs::create_directories(dir);
  std::ofstream(dir / "bad.json") << "{ \"seed\": ";
  EXPECT_THROW(RunConfig::load(dir / "bad.json"), ConfigError);
  EXPECT_THROW(RunConfig::load(dir / "missing.json"), IoError);
}

TEST(RunConfig, EnvSeedOverride) {
  RunConfig c;
  ::setenv("RECON_OOD_SEED", "41", 1);
  apply_env_overrides(c);
  EXPECT_EQ(c.seed, 41u);
  EXPECT_EQ(c.encoder.seed, 41u);
  ::setenv("RECON_OOD_SEED", "4x", 1);
  EXPECT_THROW(apply_env_overrides(c), ConfigError);
  ::unsetenv("RECON_OOD_SEED");
  apply_env_overrides(c);
  EXPECT_EQ(c.seed, 41u);
}

TEST(GenData, DefaultCountsAndStableDigests) {
  RunConfig c;
  c.output_dir = scratch("gen") / "does" / "not" / "exist";
  const auto first = cmd_gen_data(c);
  const auto paths = RunPaths::for_config(c);
  ReadAudit audit;
  EXPECT_EQ(read_dataset(paths.dataset.train, &audit).size(), 400u);
  EXPECT_EQ(read_dataset(paths.dataset.calibration, &audit).size(), 100u);
  EXPECT_EQ(audit.id_records, 500u);
  read_dataset(paths.dataset.test, &audit);
  EXPECT_EQ(audit.id_records, 700u);
  EXPECT_EQ(audit.ood_records, 800u);
  const auto second = cmd_gen_data(c);
  EXPECT_EQ(first.outputs, second.outputs);
  const auto ledger = RunLedger::load_or_new(paths.ledger, c.digest());
  EXPECT_EQ(ledger.stages.at("gen-data").status, "complete");
  EXPECT_EQ(ledger.stages.at("gen-data").outputs, first.outputs);
}

TEST(GenData, UnwritableOutputIsIoError) {
  const auto dir = scratch("blocked");
  fs::create_directories(dir);
  std::ofstream(dir / "file") << "x";
  RunConfig c;
  c.output_dir = dir / "file" / "below";
  EXPECT_THROW(cmd_gen_data(c), IoError);
}

TEST(Stages, MissingDependencyIsReported) {
  const auto c = tiny_config(scratch("missing"));
  EXPECT_THROW(cmd_train(c), MissingStageError);
  EXPECT_THROW(cmd_evaluate(c), MissingStageError);
  cmd_gen_data(c);
  EXPECT_THROW(cmd_evaluate(c), MissingStageError);
}

TEST(Stages, TinyPipelineEndToEnd) {
  auto c = tiny_config(scratch("pipe"));
  cmd_gen_data(c);
  const auto t1 = cmd_train(c);
  const auto paths = RunPaths::for_config(c);
  for (const auto& p : {paths.encoder_curve, paths.denoiser_curve}) {
    const auto losses = curve_losses(p);
    ASSERT_GE(losses.size(), 2u);
    EXPECT_GT(losses.front(), losses.back()) << p;
  }
  auto ledger = RunLedger::load_or_new(paths.ledger, c.digest());
  EXPECT_EQ(ledger.stages.at("train").details.at("ood_records_read"), 0);

  const auto t2 = cmd_train(c);
  EXPECT_EQ(t1.outputs, t2.outputs);

  cmd_evaluate(c);
  const auto report_bytes = slurp(paths.report_json);
  const auto report = report_from_json(nlohmann::json::parse(report_bytes));
  EXPECT_EQ(report.detector.rows.size(), 4u);
  ASSERT_EQ(report.baselines.size(), 1u);
  EXPECT_EQ(report.baselines[0].method, "msp");
  EXPECT_EQ(report.threshold.calibration_count, 16u);
  EXPECT_EQ(report.manifest_digest, sha256_file(paths.dataset.manifest));
  double avg = 0;
  for (const auto& r : report.detector.rows) {
    avg += r.auroc;
    EXPECT_EQ(r.at_threshold->false_positive + r.at_threshold->true_negative, 20u);
  }
  EXPECT_NEAR(report.detector.average_auroc, avg / 4, 1e-9);
  ledger = RunLedger::load_or_new(paths.ledger, c.digest());
  EXPECT_EQ(ledger.stages.at("evaluate").details.at("inputs_unchanged").at("encoder.ckpt"),
            sha256_file(paths.encoder_ckpt));

  const auto scores = parse_score_csv(slurp(paths.scores));
  EXPECT_EQ(scores.size(), 20u + 24u);

  c.workers = 3;
  cmd_evaluate(c);
  EXPECT_EQ(slurp(paths.report_json), report_bytes);

  const auto out_a = scratch("render_a"), out_b = scratch("render_b");
  const auto ra = cmd_report(paths.report_json, out_a);
  const auto rb = cmd_report(paths.report_json, out_b);
  EXPECT_EQ(ra.outputs, rb.outputs);
  EXPECT_EQ(ra.outputs.size(), 5u);
  EXPECT_TRUE(fs::exists(out_a / "pr_uniform-noise.csv"));
}

TEST(Stages, CalibrationScoresStayUnderThreshold) {
  auto c = tiny_config(scratch("calib"));
  cmd_gen_data(c);
  cmd_train(c);
  const auto paths = RunPaths::for_config(c);
  const auto enc = Encoder::from_checkpoint(load_checkpoint(paths.encoder_ckpt));
  const auto den = Denoiser::from_checkpoint(load_checkpoint(paths.denoiser_ckpt));
  const auto cal = read_dataset(paths.dataset.calibration);
  const auto test = read_dataset(paths.dataset.test);
  const auto ev = score_samples(enc, den, c.make_noise_schedule(), c.reconstruction, test, 0, cal, 1000, 2);
  const auto t = calibrate_threshold(std::span<const ScoredSample>(ev.calibration));
  for (const auto& s : ev.calibration) EXPECT_EQ(classify(s.error, t), Decision::in_distribution);
  const auto single = score_samples(enc, den, c.make_noise_schedule(), c.reconstruction, test, 0, cal, 1000, 1);
  for (std::size_t i = 0; i < ev.test.size(); ++i) EXPECT_EQ(ev.test[i].error, single.test[i].error);
}

TEST(Report, MalformedJsonNamesLocation) {
  const auto dir = scratch("malformed");
  fs::create_directories(dir);
  std::ofstream(dir / "report.json") << "{\n  \"detector\": [1, 2,\n";
  try {
    cmd_report(dir / "report.json", dir);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
}

TEST(ExitCodes, ErrorsMapToDocumentedCodes) {
  std::ostringstream err;
  EXPECT_EQ(run_guarded([] {}, err), kExitOk);
  EXPECT_EQ(run_guarded([] { throw ConfigError("x"); }, err), kExitConfig);
  EXPECT_EQ(run_guarded([] { throw MissingStageError("x"); }, err), kExitMissingStage);
  EXPECT_EQ(run_guarded([] { throw TrainingFailure("x", 0.5, 0.95); }, err), kExitTrainingFloor);
  EXPECT_EQ(run_guarded([] { throw IoError("x", "/p"); }, err), kExitIo);
  EXPECT_EQ(run_guarded([] { throw std::runtime_error("x"); }, err), kExitInternal);
  EXPECT_NE(err.str().find("/p"), std::string::npos);
}
