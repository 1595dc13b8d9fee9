#include "recon_ood/harness.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <thread>

#include "recon_ood/checkpoint.hpp"
#include "recon_ood/digest.hpp"
#include "recon_ood/errors.hpp"

namespace recon_ood {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void check_keys(const json& obj, const std::string& section, std::initializer_list<std::string_view> allowed) {
  if (!obj.is_object()) throw ConfigError("config: '" + section + "' must be an object");
  for (const auto& [key, _] : obj.items()) {
    bool known = false;
    for (auto a : allowed) known = known || key == a;
    if (!known) throw ConfigError("config: unknown key '" + (section.empty() ? key : section + "." + key) + "'");
  }
}

template <typename T>
void read(const json& obj, const std::string& section, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config: bad value for '" + (section.empty() ? std::string(key) : section + "." + key) + "': " +
                      obj.at(key).dump());
  }
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open", path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("failed reading", path.string());
  return ss.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing", path.string());
  out << bytes;
  out.flush();
  if (!out) throw IoError("failed writing", path.string());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory (" + ec.message() + ")", dir.string());
}

void require(const fs::path& path, const std::string& stage) {
  if (!fs::exists(path)) throw MissingStageError("missing " + path.string() + "; run '" + stage + "' first");
}

std::string curve_csv(std::span<const double> losses, int first_epoch) {
  std::string out = "epoch,loss\n";
  char buf[64];
  for (std::size_t i = 0; i < losses.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%d,%.9g\n", first_epoch + static_cast<int>(i), losses[i]);
    out += buf;
  }
  return out;
}

class StageTimer {
 public:
  StageTimer() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

std::map<std::string, std::string> digest_files(std::initializer_list<fs::path> paths) {
  std::map<std::string, std::string> out;
  for (const auto& p : paths) out[p.filename().string()] = sha256_file(p);
  return out;
}

void record_stage(const RunConfig& config, const RunPaths& paths, const std::string& stage, StageRecord record) {
  auto ledger = RunLedger::load_or_new(paths.ledger, config.digest());
  ledger.stages[stage] = std::move(record);
  ledger.save(paths.ledger);
}

void write_config(const RunConfig& config, const RunPaths& paths) {
  ensure_dir(paths.root);
  write_file(paths.config, config.to_json().dump(2) + "\n");
}

}  // namespace

void RunConfig::apply_seed() {
  dataset.seed = seed;
  encoder.seed = seed;
  denoiser.seed = seed;
  reconstruction.seed = seed;
}

void RunConfig::validate() const {
  try {
    dataset.validate();
    encoder.validate();
    denoiser.validate();
    reconstruction.validate(make_noise_schedule());
  } catch (const DomainError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (workers < 1) throw ConfigError("config: workers must be at least 1");
  if (output_dir.empty()) throw ConfigError("config: output_dir must not be empty");
}

NoiseSchedule RunConfig::make_noise_schedule() const {
  try {
    return make_schedule(schedule.steps, schedule.beta_start, schedule.beta_end);
  } catch (const DomainError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

json RunConfig::canonical_json() const {
  return {
      {"seed", seed},
      {"dataset",
       {{"name", dataset.name},
        {"train_per_class", dataset.train_per_class},
        {"calibration_per_class", dataset.calibration_per_class},
        {"test_id_per_class", dataset.test_id_per_class},
        {"test_ood_per_family", dataset.test_ood_per_family}}},
      {"encoder",
       {{"embed_dim", encoder.embed_dim},
        {"hidden1", encoder.hidden1},
        {"hidden2", encoder.hidden2},
        {"batch_size", encoder.batch_size},
        {"epochs", encoder.epochs},
        {"temperature_init", encoder.temperature_init},
        {"learning_rate", encoder.adam.learning_rate},
        {"accuracy_floor", encoder.accuracy_floor}}},
      {"schedule",
       {{"steps", schedule.steps}, {"beta_start", schedule.beta_start}, {"beta_end", schedule.beta_end}}},
      {"denoiser",
       {{"hidden1", denoiser.hidden1},
        {"hidden2", denoiser.hidden2},
        {"time_dim", denoiser.time_dim},
        {"batch_size", denoiser.batch_size},
        {"epochs", denoiser.epochs},
        {"learning_rate", denoiser.adam.learning_rate}}},
      {"reconstruction", {{"s_star", reconstruction.s_star}, {"n_steps", reconstruction.n_steps}}},
  };
}

json RunConfig::to_json() const {
  json j = canonical_json();
  j["output_dir"] = output_dir.string();
  j["workers"] = workers;
  return j;
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  check_keys(j, "",
             {"seed", "dataset", "encoder", "schedule", "denoiser", "reconstruction", "output_dir", "workers"});
  read(j, "", "seed", c.seed);
  read(j, "", "workers", c.workers);
  std::string out = c.output_dir.string();
  read(j, "", "output_dir", out);
  c.output_dir = out;
  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    check_keys(d, "dataset",
               {"name", "train_per_class", "calibration_per_class", "test_id_per_class", "test_ood_per_family"});
    read(d, "dataset", "name", c.dataset.name);
    read(d, "dataset", "train_per_class", c.dataset.train_per_class);
    read(d, "dataset", "calibration_per_class", c.dataset.calibration_per_class);
    read(d, "dataset", "test_id_per_class", c.dataset.test_id_per_class);
    read(d, "dataset", "test_ood_per_family", c.dataset.test_ood_per_family);
  }
  if (j.contains("encoder")) {
    const auto& e = j.at("encoder");
    check_keys(e, "encoder",
               {"embed_dim", "hidden1", "hidden2", "batch_size", "epochs", "temperature_init", "learning_rate",
                "accuracy_floor"});
    read(e, "encoder", "embed_dim", c.encoder.embed_dim);
    read(e, "encoder", "hidden1", c.encoder.hidden1);
    read(e, "encoder", "hidden2", c.encoder.hidden2);
    read(e, "encoder", "batch_size", c.encoder.batch_size);
    read(e, "encoder", "epochs", c.encoder.epochs);
    read(e, "encoder", "temperature_init", c.encoder.temperature_init);
    read(e, "encoder", "learning_rate", c.encoder.adam.learning_rate);
    read(e, "encoder", "accuracy_floor", c.encoder.accuracy_floor);
  }
  if (j.contains("schedule")) {
    const auto& s = j.at("schedule");
    check_keys(s, "schedule", {"steps", "beta_start", "beta_end"});
    read(s, "schedule", "steps", c.schedule.steps);
    read(s, "schedule", "beta_start", c.schedule.beta_start);
    read(s, "schedule", "beta_end", c.schedule.beta_end);
  }
  if (j.contains("denoiser")) {
    const auto& d = j.at("denoiser");
    check_keys(d, "denoiser", {"hidden1", "hidden2", "time_dim", "batch_size", "epochs", "learning_rate"});
    read(d, "denoiser", "hidden1", c.denoiser.hidden1);
    read(d, "denoiser", "hidden2", c.denoiser.hidden2);
    read(d, "denoiser", "time_dim", c.denoiser.time_dim);
    read(d, "denoiser", "batch_size", c.denoiser.batch_size);
    read(d, "denoiser", "epochs", c.denoiser.epochs);
    read(d, "denoiser", "learning_rate", c.denoiser.adam.learning_rate);
  }
  if (j.contains("reconstruction")) {
    const auto& r = j.at("reconstruction");
    check_keys(r, "reconstruction", {"s_star", "n_steps"});
    read(r, "reconstruction", "s_star", c.reconstruction.s_star);
    read(r, "reconstruction", "n_steps", c.reconstruction.n_steps);
  }
  c.apply_seed();
  c.validate();
  return c;
}

RunConfig RunConfig::load(const fs::path& path) {
  const std::string text = read_file(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

std::string RunConfig::digest() const { return sha256_hex(canonical_json().dump()); }

fs::path RunConfig::run_dir() const { return output_dir / ("run-" + digest().substr(0, 16)); }

void apply_env_overrides(RunConfig& config) {
  const char* env = std::getenv("RECON_OOD_SEED");
  if (!env || !*env) return;
  const std::string text(env);
  if (text.find_first_not_of("0123456789") != std::string::npos) {
    throw ConfigError("RECON_OOD_SEED is not an unsigned integer: '" + text + "'");
  }
  try {
    config.seed = std::stoull(text);
  } catch (const std::exception&) {
    throw ConfigError("RECON_OOD_SEED is out of range: '" + text + "'");
  }
  config.apply_seed();
}

RunPaths RunPaths::for_config(const RunConfig& config) {
  RunPaths p;
  p.root = config.run_dir();
  p.data_dir = p.root / "data";
  p.dataset = DatasetFiles::in(p.data_dir, config.dataset.name);
  p.config = p.root / "config.json";
  p.ledger = p.root / "ledger.json";
  p.encoder_ckpt = p.root / "encoder.ckpt";
  p.encoder_curve = p.root / "encoder_loss.csv";
  p.denoiser_ckpt = p.root / "denoiser.ckpt";
  p.denoiser_curve = p.root / "denoiser_loss.csv";
  p.scores = p.root / "scores.csv";
  p.report_json = p.root / "report.json";
  p.report_txt = p.root / "report.txt";
  return p;
}

json RunLedger::to_json() const {
  json stage_json = json::object();
  for (const auto& [name, s] : stages) {
    stage_json[name] = {{"status", s.status}, {"wall_seconds", s.wall_seconds}, {"outputs", s.outputs},
                        {"details", s.details}};
  }
  return {{"config_digest", config_digest}, {"stages", stage_json}};
}

RunLedger RunLedger::from_json(const json& j) {
  try {
    RunLedger l;
    l.config_digest = j.at("config_digest").get<std::string>();
    for (const auto& [name, s] : j.at("stages").items()) {
      StageRecord r;
      r.status = s.at("status").get<std::string>();
      r.wall_seconds = s.at("wall_seconds").get<double>();
      r.outputs = s.at("outputs").get<std::map<std::string, std::string>>();
      r.details = s.value("details", json::object());
      l.stages[name] = std::move(r);
    }
    return l;
  } catch (const json::exception& e) {
    throw ParseError(std::string("ledger JSON: ") + e.what());
  }
}

RunLedger RunLedger::load_or_new(const fs::path& path, const std::string& config_digest) {
  if (fs::exists(path)) {
    json j;
    try {
      j = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
      throw ParseError("ledger " + path.string() + ": " + e.what());
    }
    auto ledger = from_json(j);
    if (ledger.config_digest == config_digest) return ledger;
  }
  RunLedger fresh;
  fresh.config_digest = config_digest;
  return fresh;
}

void RunLedger::save(const fs::path& path) const { write_file(path, to_json().dump(2) + "\n"); }

StageSummary cmd_gen_data(const RunConfig& config) {
  config.validate();
  StageTimer timer;
  const auto paths = RunPaths::for_config(config);
  write_config(config, paths);
  ensure_dir(paths.data_dir);
  build_dataset(config.dataset, paths.data_dir);
  StageRecord rec;
  rec.status = "complete";
  rec.outputs = digest_files({paths.dataset.train, paths.dataset.calibration, paths.dataset.test, paths.dataset.manifest});
  rec.details = {{"train_records", config.dataset.count(Split::train)},
                 {"calibration_records", config.dataset.count(Split::calibration)},
                 {"test_records", config.dataset.count(Split::test)}};
  rec.wall_seconds = timer.seconds();
  StageSummary out{paths.root, rec.outputs};
  record_stage(config, paths, "gen-data", std::move(rec));
  return out;
}

StageSummary cmd_train(const RunConfig& config) {
  config.validate();
  StageTimer timer;
  const auto paths = RunPaths::for_config(config);
  require(paths.dataset.train, "gen-data");
  require(paths.dataset.calibration, "gen-data");
  write_config(config, paths);

  // Only the ID splits are opened here; the audit proves no OOD record slipped in.
  ReadAudit audit;
  const auto train = read_dataset(paths.dataset.train, &audit);
  const auto heldout = read_dataset(paths.dataset.calibration, &audit);
  if (audit.ood_records != 0) {
    throw ContractError("training stage read " + std::to_string(audit.ood_records) + " OOD records");
  }

  StageRecord rec;
  rec.details["ood_records_read"] = audit.ood_records;
  rec.details["id_records_read"] = audit.id_records;
  std::optional<EncoderTrainingResult> enc;
  try {
    enc.emplace(train_encoder(train, heldout, config.encoder));
  } catch (const TrainingFailure& e) {
    rec.status = "failed";
    rec.wall_seconds = timer.seconds();
    rec.details["zero_shot_accuracy"] = e.measured();
    rec.details["accuracy_floor"] = e.floor();
    record_stage(config, paths, "train", std::move(rec));
    throw;
  }
  save_checkpoint(paths.encoder_ckpt, enc->encoder.to_checkpoint({{"zero_shot_accuracy", enc->zero_shot_accuracy}}));
  write_file(paths.encoder_curve, curve_csv(enc->loss_curve, 0));

  const auto schedule = config.make_noise_schedule();
  auto den = train_denoiser(train, enc->encoder, schedule, config.denoiser);
  save_checkpoint(paths.denoiser_ckpt, den.denoiser.to_checkpoint({{"steps", schedule.steps()},
                                                                    {"beta_start", schedule.beta_start()},
                                                                    {"beta_end", schedule.beta_end()},
                                                                    {"s_star", config.reconstruction.s_star}}));
  write_file(paths.denoiser_curve, curve_csv(den.loss_curve, 1));

  rec.status = "complete";
  rec.details["zero_shot_accuracy"] = enc->zero_shot_accuracy;
  rec.details["encoder_loss_first"] = enc->loss_curve.front();
  rec.details["encoder_loss_last"] = enc->loss_curve.back();
  rec.details["denoiser_loss_first"] = den.loss_curve.front();
  rec.details["denoiser_loss_last"] = den.loss_curve.back();
  rec.outputs = digest_files({paths.encoder_ckpt, paths.encoder_curve, paths.denoiser_ckpt, paths.denoiser_curve});
  rec.wall_seconds = timer.seconds();
  StageSummary out{paths.root, rec.outputs};
  record_stage(config, paths, "train", std::move(rec));
  return out;
}

Evaluation score_samples(const Encoder& encoder, const Denoiser& denoiser, const NoiseSchedule& schedule,
                         const ReconstructionConfig& recon, std::span<const LabeledSample> test,
                         std::uint64_t test_id_base, std::span<const LabeledSample> calibration,
                         std::uint64_t calibration_id_base, int workers) {
  recon.validate(schedule);
  if (workers < 1) throw ContractError("workers must be at least 1");
  struct Job {
    const LabeledSample* sample;
    std::uint64_t id;
    bool is_test;
  };
  std::vector<Job> jobs;
  for (std::size_t i = 0; i < calibration.size(); ++i) {
    if (!calibration[i].is_id()) throw ContractError("calibration split contains a non-ID record");
    jobs.push_back({&calibration[i], calibration_id_base + i, false});
  }
  for (std::size_t i = 0; i < test.size(); ++i) jobs.push_back({&test[i], test_id_base + i, true});

  std::vector<double> errors(jobs.size());
  std::vector<double> msp(jobs.size());
  auto work = [&](std::size_t first, std::size_t stride) {
    for (std::size_t i = first; i < jobs.size(); i += stride) {
      const auto& image = jobs[i].sample->image;
      ReconstructionConfig cfg = recon;
      cfg.seed = derive_seed(recon.seed, jobs[i].id);
      const auto cond = encoder.encode_image(image);
      errors[i] = reconstruction_error(image, reconstruct(denoiser, schedule, image, cond, cfg));
      if (jobs[i].is_test) msp[i] = 1.0 - encoder.max_softmax(image);
    }
  };
  const auto n_workers = static_cast<std::size_t>(workers);
  if (n_workers == 1) {
    work(0, 1);
  } else {
    std::vector<std::exception_ptr> failures(n_workers);
    std::vector<std::thread> threads;
    for (std::size_t w = 0; w < n_workers; ++w) {
      threads.emplace_back([&, w] {
        try {
          work(w, n_workers);
        } catch (...) {
          failures[w] = std::current_exception();
        }
      });
    }
    for (auto& t : threads) t.join();
    for (auto& f : failures) {
      if (f) std::rethrow_exception(f);
    }
  }

  Evaluation ev;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    ScoredSample s{jobs[i].id, jobs[i].sample->family_tag, errors[i]};
    if (jobs[i].is_test) {
      ev.test.push_back(s);
      ev.msp_test.push_back({jobs[i].id, jobs[i].sample->family_tag, msp[i]});
    } else {
      ev.calibration.push_back(s);
    }
  }
  return ev;
}

StageSummary cmd_evaluate(const RunConfig& config) {
  config.validate();
  StageTimer timer;
  const auto paths = RunPaths::for_config(config);
  for (const auto& p : {paths.dataset.test, paths.dataset.calibration, paths.dataset.manifest}) require(p, "gen-data");
  for (const auto& p : {paths.encoder_ckpt, paths.denoiser_ckpt}) require(p, "train");

  const std::initializer_list<fs::path> inputs = {paths.dataset.train, paths.dataset.calibration, paths.dataset.test,
                                                  paths.dataset.manifest, paths.encoder_ckpt, paths.denoiser_ckpt};
  std::map<std::string, std::string> before;
  for (const auto& p : inputs) {
    if (fs::exists(p)) before[p.filename().string()] = sha256_file(p);
  }

  const auto encoder = Encoder::from_checkpoint(load_checkpoint(paths.encoder_ckpt));
  const auto denoiser = Denoiser::from_checkpoint(load_checkpoint(paths.denoiser_ckpt));
  const auto schedule = config.make_noise_schedule();
  ReadAudit audit;
  const auto calibration = read_dataset(paths.dataset.calibration, &audit);
  const auto test = read_dataset(paths.dataset.test, &audit);

  const auto ev = score_samples(encoder, denoiser, schedule, config.reconstruction, test,
                                config.dataset.id_base(Split::test), calibration,
                                config.dataset.id_base(Split::calibration), config.workers);
  const auto threshold = calibrate_threshold(std::span<const ScoredSample>(ev.calibration));
  for (const auto& s : ev.calibration) {
    if (classify(s.error, threshold) != Decision::in_distribution) {
      throw ContractError("calibration sample " + std::to_string(s.sample_id) + " exceeds its own threshold");
    }
  }

  auto report = build_report(ev.test, threshold);
  report.baselines.push_back(evaluate_method(std::string(kMspMethod), ev.msp_test));
  report.config = config.canonical_json();
  report.manifest_digest = before.at(paths.dataset.manifest.filename().string());

  write_file(paths.scores, score_csv(ev.test));
  write_file(paths.report_json, report_to_json(report).dump(2) + "\n");
  write_file(paths.report_txt, render_table(report));

  for (const auto& p : inputs) {
    if (!fs::exists(p)) continue;
    if (sha256_file(p) != before.at(p.filename().string())) {
      throw ContractError("evaluate modified its input " + p.string());
    }
  }

  StageRecord rec;
  rec.status = "complete";
  rec.outputs = digest_files({paths.scores, paths.report_json, paths.report_txt});
  rec.details = {{"inputs_unchanged", before},
                 {"ood_records_read", audit.ood_records},
                 {"tau", threshold.tau},
                 {"average_auroc", report.detector.average_auroc},
                 {"average_fpr95", report.detector.average_fpr95},
                 {"msp_average_auroc", report.baselines.front().average_auroc}};
  rec.wall_seconds = timer.seconds();
  StageSummary out{paths.root, rec.outputs};
  record_stage(config, paths, "evaluate", std::move(rec));
  return out;
}

StageSummary cmd_report(const fs::path& report_json, const fs::path& out_dir) {
  const std::string text = read_file(report_json);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(report_json.string() + ": " + e.what());
  }
  const auto report = report_from_json(j);
  ensure_dir(out_dir);
  StageSummary out{out_dir, {}};
  const auto table = out_dir / "report.txt";
  write_file(table, render_table(report));
  out.outputs[table.filename().string()] = sha256_file(table);
  for (const auto& row : report.detector.rows) {
    const auto csv = out_dir / ("pr_" + row.family + ".csv");
    write_file(csv, pr_curve_csv(row));
    out.outputs[csv.filename().string()] = sha256_file(csv);
  }
  return out;
}

StageSummary cmd_all(const RunConfig& config) {
  cmd_gen_data(config);
  cmd_train(config);
  cmd_evaluate(config);
  const auto paths = RunPaths::for_config(config);
  return cmd_report(paths.report_json, paths.root);
}

int run_guarded(const std::function<void()>& fn, std::ostream& err) {
  try {
    fn();
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const MissingStageError& e) {
    err << "missing stage: " << e.what() << '\n';
    return kExitMissingStage;
  } catch (const TrainingFailure& e) {
    err << "training floor missed: " << e.what() << " (measured " << e.measured() << ", floor " << e.floor()
        << ")\n";
    return kExitTrainingFloor;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << '\n';
    return kExitIo;
  } catch (const ParseError& e) {
    err << "parse error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitInternal;
  }
}

}  // namespace recon_ood
