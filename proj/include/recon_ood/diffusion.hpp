#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "recon_ood/autograd.hpp"
#include "recon_ood/checkpoint.hpp"
#include "recon_ood/encoder.hpp"
#include "recon_ood/param_store.hpp"
#include "recon_ood/rng.hpp"
#include "recon_ood/synth_data.hpp"

namespace recon_ood {

/// Linear beta schedule over timesteps s = 1..S. Accessors take the 1-based
/// timestep; alpha_bar(s) is the running product of alpha(1..s).
class NoiseSchedule {
 public:
  int steps() const noexcept { return static_cast<int>(beta_.size()); }
  double beta_start() const noexcept { return beta_.front(); }
  double beta_end() const noexcept { return beta_.back(); }
  double beta(int s) const { return beta_.at(index(s)); }
  double alpha(int s) const { return 1.0 - beta(s); }
  double alpha_bar(int s) const { return alpha_bar_.at(index(s)); }
  // sqrt(alpha_bar) and sqrt(1 - alpha_bar): the signal and noise coefficients.
  double signal_coef(int s) const { return std::sqrt(alpha_bar(s)); }
  double noise_coef(int s) const { return std::sqrt(1.0 - alpha_bar(s)); }

 private:
  friend NoiseSchedule make_schedule(int, double, double);
  std::size_t index(int s) const;

  std::vector<double> beta_;
  std::vector<double> alpha_bar_;
};

// DomainError unless S >= 2 and 0 < beta_start <= beta_end < 1.
NoiseSchedule make_schedule(int steps, double beta_start, double beta_end);

// z_s = sqrt(alpha_bar_s) z0 + sqrt(1 - alpha_bar_s) eps, elementwise, unclamped.
Tensor forward_noise(const NoiseSchedule& schedule, const Tensor& z0, int s, const Tensor& eps);
Tensor forward_noise(const NoiseSchedule& schedule, const ImageGrid& z0, int s, const Tensor& eps);
// Inverse of forward_noise for eps given a clean estimate:
// (z_s - sqrt(alpha_bar_s) x0) / sqrt(1 - alpha_bar_s).
Tensor estimate_noise(const NoiseSchedule& schedule, const Tensor& z_s, const Tensor& x0, int s);
Tensor standard_normal(Shape shape, Rng& rng);

// Sinusoidal embedding: sin(s·f_i) for the first half, cos(s·f_i) for the
// second, with f_i = 10000^(-i/half).
std::vector<float> timestep_embedding(int s, int dim);

struct DenoiserConfig {
  int hidden1 = 256;
  int hidden2 = 256;
  int time_dim = 32;
  int batch_size = 16;
  int epochs = 10;
  AdamConfig adam{.learning_rate = 1e-3};
  std::uint64_t seed = 42;

  void validate() const;
};

inline constexpr double kDenoiserOutputBound = 1.5;

/// MLP x0-predictor over [noisy image | timestep embedding | condition].
class Denoiser {
 public:
  static Denoiser initialize(const DenoiserConfig& cfg, int cond_dim, Rng& rng);
  static Denoiser from_checkpoint(const Checkpoint& ckpt);
  Checkpoint to_checkpoint(const std::map<std::string, double>& meta = {}) const;

  // Prediction of the clean image, within ±kDenoiserOutputBound.
  Tensor predict_x0(const Tensor& z_s, int s, const EmbeddingVector& condition) const;

  int time_dim() const noexcept { return time_dim_; }
  int cond_dim() const noexcept { return cond_dim_; }
  const ParamStore<float>& params() const noexcept { return store_; }
  ParamStore<float>& params() noexcept { return store_; }

 private:
  Denoiser(ParamStore<float> store, int time_dim, int cond_dim)
      : store_(std::move(store)), time_dim_(time_dim), cond_dim_(cond_dim) {}

  ParamStore<float> store_;
  int time_dim_;
  int cond_dim_;
};

// B×256 noisy images, one timestep per row, B×d conditions → clamped B×256.
template <typename T>
Var<T> denoiser_graph(Graph<T>& g, ParamStore<T>& store, const BasicTensor<T>& z_s, std::span<const int> steps,
                      const BasicTensor<T>& conditions, int time_dim);
template <typename T>
Var<T> denoiser_graph(Graph<T>& g, const ParamStore<T>& store, const BasicTensor<T>& z_s, std::span<const int> steps,
                      const BasicTensor<T>& conditions, int time_dim);
// MSE between the prediction and the clean batch.
template <typename T>
Var<T> denoiser_loss_graph(Graph<T>& g, ParamStore<T>& store, const BasicTensor<T>& z0, const BasicTensor<T>& z_s,
                           std::span<const int> steps, const BasicTensor<T>& conditions, int time_dim);

struct DenoiserTrainingResult {
  Denoiser denoiser;
  std::vector<double> loss_curve;  // mean loss per epoch
};

// Trains on ID records only; the condition is the frozen encoder's embedding
// of the clean image. Throws ContractError if any record is not tagged "id".
DenoiserTrainingResult train_denoiser(std::span<const LabeledSample> train, const Encoder& encoder,
                                      const NoiseSchedule& schedule, const DenoiserConfig& cfg);

struct ReconstructionConfig {
  int s_star = 50;
  int n_steps = 10;
  std::uint64_t seed = 0;

  void validate(const NoiseSchedule& schedule) const;  // DomainError
};

// Evenly spaced descending timesteps starting at s_star.
std::vector<int> reconstruction_timesteps(int s_star, int n_steps);

// Noises the image to s_star with a seeded draw, then runs n_steps
// deterministic reverse updates; returns the last x0 estimate clamped to [-1,1].
ImageGrid reconstruct(const Denoiser& denoiser, const NoiseSchedule& schedule, const ImageGrid& image,
                      const EmbeddingVector& condition, const ReconstructionConfig& cfg);

// Mean squared pixel difference.
double reconstruction_error(const ImageGrid& original, const ImageGrid& recon);
double reconstruction_error(std::span<const float> original, std::span<const float> recon);

// Binary PGM (P5, 8-bit); pixels map [-1,1] → [0,255].
std::string encode_pgm(std::span<const ImageGrid> images);
void write_pgm(const std::filesystem::path& path, std::span<const ImageGrid> images);

}  // namespace recon_ood
