#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "recon_ood/checkpoint.hpp"
#include "recon_ood/diffusion.hpp"
#include "recon_ood/encoder.hpp"
#include "recon_ood/errors.hpp"
#include "recon_ood/harness.hpp"

namespace {

using namespace recon_ood;

struct Overrides {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> workers;
  std::optional<int> encoder_epochs;
  std::optional<int> denoiser_epochs;
  std::optional<int> s_star;
  std::optional<int> n_steps;

  void attach(CLI::App* app) {
    app->add_option("-c,--config", config_path, "Run configuration JSON");
    app->add_option("--seed", seed, "Override the run seed");
    app->add_option("-o,--out", out, "Override the output directory");
    app->add_option("-j,--workers", workers, "Scoring threads");
    app->add_option("--encoder-epochs", encoder_epochs, "Override encoder training epochs");
    app->add_option("--denoiser-epochs", denoiser_epochs, "Override denoiser training epochs");
    app->add_option("--s-star", s_star, "Noising depth for reconstruction");
    app->add_option("--n-steps", n_steps, "Reverse steps for reconstruction");
  }

  // Config file, then RECON_OOD_SEED, then flags.
  RunConfig resolve() const {
    RunConfig c = config_path.empty() ? RunConfig{} : RunConfig::load(config_path);
    c.apply_seed();
    apply_env_overrides(c);
    if (seed) c.seed = *seed;
    if (out) c.output_dir = *out;
    if (workers) c.workers = *workers;
    if (encoder_epochs) c.encoder.epochs = *encoder_epochs;
    if (denoiser_epochs) c.denoiser.epochs = *denoiser_epochs;
    if (s_star) c.reconstruction.s_star = *s_star;
    if (n_steps) c.reconstruction.n_steps = *n_steps;
    c.apply_seed();
    c.validate();
    return c;
  }
};

void print_summary(const StageSummary& s) {
  std::cout << "run directory: " << s.run_dir.string() << '\n';
  for (const auto& [name, digest] : s.outputs) std::cout << "  " << name << "  " << digest << '\n';
}

void encoder_info(const std::string& path) {
  const auto ckpt = load_checkpoint(path);
  const auto enc = Encoder::from_checkpoint(ckpt);
  std::printf("embed_dim    %d\n", enc.embed_dim());
  std::printf("num_classes  %d\n", enc.num_classes());
  std::printf("temperature  %.6g\n", enc.temperature());
  if (const auto acc = ckpt.meta("zero_shot_accuracy")) {
    std::printf("zero_shot_accuracy  %.4f\n", *acc);
  } else {
    std::printf("zero_shot_accuracy  (not recorded)\n");
  }
}

void diffusion_sample(const RunConfig& config, const std::string& family, int count, const std::string& output) {
  const auto paths = RunPaths::for_config(config);
  for (const auto& p : {paths.encoder_ckpt, paths.denoiser_ckpt}) {
    if (!std::filesystem::exists(p)) throw MissingStageError("missing " + p.string() + "; run 'train' first");
  }
  const auto enc = Encoder::from_checkpoint(load_checkpoint(paths.encoder_ckpt));
  const auto den = Denoiser::from_checkpoint(load_checkpoint(paths.denoiser_ckpt));
  const auto schedule = config.make_noise_schedule();
  std::vector<ImageGrid> tiles;
  for (int i = 0; i < count; ++i) {
    const auto seed = derive_seed(config.seed, 0x736d706c00000000ULL + static_cast<std::uint64_t>(i));
    const ImageGrid image =
        family == "id" ? render_class(i % kNumClasses, seed) : render_ood(family, seed);
    ReconstructionConfig rc = config.reconstruction;
    rc.seed = derive_seed(config.reconstruction.seed, seed);
    tiles.push_back(image);
    tiles.push_back(reconstruct(den, schedule, image, enc.encode_image(image), rc));
  }
  write_pgm(output, tiles);
  std::cout << "wrote " << count << " original/reconstruction pairs to " << output << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reconstruction-based out-of-distribution detection pipeline"};
  app.require_subcommand(1);

  Overrides gen_o, train_o, eval_o, all_o, sample_o;
  auto* gen = app.add_subcommand("gen-data", "Render the synthetic dataset");
  gen_o.attach(gen);
  auto* train = app.add_subcommand("train", "Train the encoder, then the conditional denoiser");
  train_o.attach(train);
  auto* evaluate = app.add_subcommand("evaluate", "Score test samples, calibrate, and write the report");
  eval_o.attach(evaluate);
  auto* all = app.add_subcommand("all", "gen-data, train, evaluate and report in sequence");
  all_o.attach(all);

  auto* report = app.add_subcommand("report", "Render a report JSON as a table plus PR-curve CSVs");
  std::string report_path, report_out;
  report->add_option("report", report_path, "report.json")->required();
  report->add_option("-o,--out", report_out, "Output directory (default: next to the report)");

  auto* encoder = app.add_subcommand("encoder", "Encoder utilities");
  encoder->require_subcommand(1);
  auto* info = encoder->add_subcommand("info", "Print encoder checkpoint metadata");
  std::string encoder_path;
  info->add_option("checkpoint", encoder_path, "encoder.ckpt")->required();

  auto* diffusion = app.add_subcommand("diffusion", "Denoiser utilities");
  diffusion->require_subcommand(1);
  auto* sample = diffusion->add_subcommand("sample", "Write originals and reconstructions as a PGM strip");
  sample_o.attach(sample);
  std::string family = "id";
  int count = 8;
  std::string pgm = "samples.pgm";
  sample->add_option("--family", family, "'id' or an OOD family name");
  sample->add_option("-n,--count", count, "Original/reconstruction pairs to render")->check(CLI::Range(1, 256));
  sample->add_option("--pgm", pgm, "Output PGM path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  return run_guarded(
      [&] {
        if (*gen) print_summary(cmd_gen_data(gen_o.resolve()));
        if (*train) print_summary(cmd_train(train_o.resolve()));
        if (*evaluate) {
          const auto config = eval_o.resolve();
          print_summary(cmd_evaluate(config));
          std::ifstream table(RunPaths::for_config(config).report_txt);
          std::cout << '\n' << table.rdbuf();
        }
        if (*all) {
          const auto config = all_o.resolve();
          print_summary(cmd_all(config));
          std::ifstream table(RunPaths::for_config(config).report_txt);
          std::cout << '\n' << table.rdbuf();
        }
        if (*report) {
          const std::filesystem::path p(report_path);
          auto dir = report_out.empty() ? p.parent_path() : std::filesystem::path(report_out);
          if (dir.empty()) dir = ".";
          print_summary(cmd_report(p, dir));
        }
        if (*info) encoder_info(encoder_path);
        if (*sample) diffusion_sample(sample_o.resolve(), family, count, pgm);
      },
      std::cerr);
}
