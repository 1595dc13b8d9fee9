#include "recon_ood/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "recon_ood/errors.hpp"

namespace recon_ood {

namespace {

constexpr const char* kW1 = "denoiser.w1";
constexpr const char* kB1 = "denoiser.b1";
constexpr const char* kW2 = "denoiser.w2";
constexpr const char* kB2 = "denoiser.b2";
constexpr const char* kW3 = "denoiser.w3";
constexpr const char* kB3 = "denoiser.b3";

template <typename T>
Var<T> bind(Graph<T>& g, ParamStore<T>& store, const char* name) {
  return g.param(store, name);
}

template <typename T>
Var<T> bind(Graph<T>& g, const ParamStore<T>& store, const char* name) {
  return g.frozen(store, name);
}

template <typename T>
BasicTensor<T> time_features(std::span<const int> steps, int time_dim) {
  BasicTensor<T> out({steps.size(), static_cast<std::size_t>(time_dim)});
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const auto emb = timestep_embedding(steps[i], time_dim);
    std::copy(emb.begin(), emb.end(), out.data().begin() + i * time_dim);
  }
  return out;
}

template <typename T, typename Store>
Var<T> denoiser_net(Graph<T>& g, Store& store, const BasicTensor<T>& z_s, std::span<const int> steps,
                    const BasicTensor<T>& conditions, int time_dim) {
  if (z_s.rank() != 2 || z_s.dim(1) != static_cast<std::size_t>(kImagePixels) || z_s.dim(0) != steps.size() ||
      conditions.rank() != 2 || conditions.dim(0) != steps.size()) {
    throw DimensionError("denoiser input mismatch: z " + shape_string(z_s.shape()) + ", " +
                         std::to_string(steps.size()) + " steps, condition " + shape_string(conditions.shape()));
  }
  auto x = concat_cols<T>({g.constant(z_s), g.constant(time_features<T>(steps, time_dim)), g.constant(conditions)});
  auto h = silu(add(matmul(x, bind(g, store, kW1)), bind(g, store, kB1)));
  h = silu(add(matmul(h, bind(g, store, kW2)), bind(g, store, kB2)));
  auto out = add(matmul(h, bind(g, store, kW3)), bind(g, store, kB3));
  return clamp(out, -kDenoiserOutputBound, kDenoiserOutputBound);
}

Tensor gaussian(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<float>(stddev * rng.normal());
  return t;
}

void shuffle(std::vector<std::size_t>& order, Rng& rng) {
  for (std::size_t i = order.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i - 1)));
    std::swap(order[i - 1], order[j]);
  }
}

}  // namespace

std::size_t NoiseSchedule::index(int s) const {
  if (s < 1 || s > steps()) {
    throw DomainError("timestep " + std::to_string(s) + " outside [1, " + std::to_string(steps()) + "]");
  }
  return static_cast<std::size_t>(s - 1);
}

NoiseSchedule make_schedule(int steps, double beta_start, double beta_end) {
  if (steps < 2) throw DomainError("schedule needs at least 2 timesteps");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw DomainError("schedule requires 0 < beta_start <= beta_end < 1");
  }
  NoiseSchedule sch;
  sch.beta_.resize(static_cast<std::size_t>(steps));
  sch.alpha_bar_.resize(static_cast<std::size_t>(steps));
  double running = 1.0;
  for (int i = 0; i < steps; ++i) {
    const double beta = beta_start + (beta_end - beta_start) * static_cast<double>(i) / (steps - 1);
    running *= 1.0 - beta;
    sch.beta_[i] = beta;
    sch.alpha_bar_[i] = running;
  }
  return sch;
}

Tensor forward_noise(const NoiseSchedule& schedule, const Tensor& z0, int s, const Tensor& eps) {
  if (z0.shape() != eps.shape()) {
    throw DimensionError("forward_noise shape mismatch: z0 " + shape_string(z0.shape()) + " vs eps " +
                         shape_string(eps.shape()));
  }
  const double a = schedule.signal_coef(s);
  const double b = schedule.noise_coef(s);
  Tensor out(z0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(a * z0[i] + b * eps[i]);
  return out;
}

Tensor forward_noise(const NoiseSchedule& schedule, const ImageGrid& z0, int s, const Tensor& eps) {
  return forward_noise(schedule, z0.as_row(), s, eps);
}

Tensor estimate_noise(const NoiseSchedule& schedule, const Tensor& z_s, const Tensor& x0, int s) {
  if (z_s.shape() != x0.shape()) {
    throw DimensionError("estimate_noise shape mismatch: " + shape_string(z_s.shape()) + " vs " +
                         shape_string(x0.shape()));
  }
  const double a = schedule.signal_coef(s);
  const double b = schedule.noise_coef(s);
  Tensor out(z_s.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>((z_s[i] - a * x0[i]) / b);
  return out;
}

Tensor standard_normal(Shape shape, Rng& rng) { return gaussian(std::move(shape), 1.0, rng); }

std::vector<float> timestep_embedding(int s, int dim) {
  if (dim < 2 || dim % 2 != 0) throw DomainError("timestep embedding dimension must be even and >= 2");
  const int half = dim / 2;
  std::vector<float> out(static_cast<std::size_t>(dim));
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / half);
    out[i] = static_cast<float>(std::sin(s * freq));
    out[i + half] = static_cast<float>(std::cos(s * freq));
  }
  return out;
}

void DenoiserConfig::validate() const {
  if (hidden1 <= 0 || hidden2 <= 0) throw DomainError("denoiser: hidden sizes must be positive");
  if (time_dim < 2 || time_dim % 2 != 0) throw DomainError("denoiser: time_dim must be even and >= 2");
  if (batch_size <= 0) throw DomainError("denoiser: batch_size must be positive");
  if (epochs <= 0) throw DomainError("denoiser: epochs must be positive");
  adam.validate();
}

Denoiser Denoiser::initialize(const DenoiserConfig& cfg, int cond_dim, Rng& rng) {
  cfg.validate();
  if (cond_dim <= 0) throw DomainError("denoiser: condition dimension must be positive");
  const auto in = static_cast<std::size_t>(kImagePixels + cfg.time_dim + cond_dim);
  const auto h1 = static_cast<std::size_t>(cfg.hidden1);
  const auto h2 = static_cast<std::size_t>(cfg.hidden2);
  const auto out = static_cast<std::size_t>(kImagePixels);
  ParamStore<float> store;
  store.add(kW1, gaussian({in, h1}, std::sqrt(1.0 / in), rng));
  store.add(kB1, Tensor({h1}));
  store.add(kW2, gaussian({h1, h2}, std::sqrt(1.0 / h1), rng));
  store.add(kB2, Tensor({h2}));
  store.add(kW3, gaussian({h2, out}, std::sqrt(1.0 / h2), rng));
  store.add(kB3, Tensor({out}));
  return Denoiser(std::move(store), cfg.time_dim, cond_dim);
}

Denoiser Denoiser::from_checkpoint(const Checkpoint& ckpt) {
  ParamStore<float> store;
  for (const char* name : {kW1, kB1, kW2, kB2, kW3, kB3}) {
    const Tensor* t = ckpt.find(name);
    if (!t) throw ParseError(std::string("denoiser checkpoint is missing '") + name + "'");
    store.add(name, *t);
  }
  const auto time_dim = ckpt.meta("time_dim");
  const auto cond_dim = ckpt.meta("cond_dim");
  if (!time_dim || !cond_dim) throw ParseError("denoiser checkpoint lacks time_dim/cond_dim metadata");
  const auto& w1 = store.value(kW1);
  if (w1.rank() != 2 || w1.dim(0) != static_cast<std::size_t>(kImagePixels + *time_dim + *cond_dim)) {
    throw ParseError("denoiser checkpoint input layer has shape " + shape_string(w1.shape()));
  }
  return Denoiser(std::move(store), static_cast<int>(*time_dim), static_cast<int>(*cond_dim));
}

Checkpoint Denoiser::to_checkpoint(const std::map<std::string, double>& meta) const {
  auto all = meta;
  all["time_dim"] = time_dim_;
  all["cond_dim"] = cond_dim_;
  return checkpoint_from_store(store_, all);
}

Tensor Denoiser::predict_x0(const Tensor& z_s, int s, const EmbeddingVector& condition) const {
  if (condition.dim() != static_cast<std::size_t>(cond_dim_)) {
    throw DimensionError("condition has dimension " + std::to_string(condition.dim()) + ", expected " +
                         std::to_string(cond_dim_));
  }
  if (z_s.size() != static_cast<std::size_t>(kImagePixels)) {
    throw DimensionError("predict_x0 expects 256 pixels, got " + shape_string(z_s.shape()));
  }
  Graph<float> g;
  const int step[1] = {s};
  Tensor cond({1, condition.dim()}, condition.values);
  auto out = denoiser_net(g, store_, z_s.reshaped({1, static_cast<std::size_t>(kImagePixels)}), std::span(step), cond,
                          time_dim_);
  return out.value();
}

template <typename T>
Var<T> denoiser_graph(Graph<T>& g, ParamStore<T>& store, const BasicTensor<T>& z_s, std::span<const int> steps,
                      const BasicTensor<T>& conditions, int time_dim) {
  return denoiser_net(g, store, z_s, steps, conditions, time_dim);
}

template <typename T>
Var<T> denoiser_graph(Graph<T>& g, const ParamStore<T>& store, const BasicTensor<T>& z_s, std::span<const int> steps,
                      const BasicTensor<T>& conditions, int time_dim) {
  return denoiser_net(g, store, z_s, steps, conditions, time_dim);
}

template <typename T>
Var<T> denoiser_loss_graph(Graph<T>& g, ParamStore<T>& store, const BasicTensor<T>& z0, const BasicTensor<T>& z_s,
                           std::span<const int> steps, const BasicTensor<T>& conditions, int time_dim) {
  auto pred = denoiser_net(g, store, z_s, steps, conditions, time_dim);
  return mse_loss(pred, g.constant(z0));
}

DenoiserTrainingResult train_denoiser(std::span<const LabeledSample> train, const Encoder& encoder,
                                      const NoiseSchedule& schedule, const DenoiserConfig& cfg) {
  cfg.validate();
  if (train.empty()) throw ContractError("denoiser training set is empty");
  for (const auto& s : train) {
    if (!s.is_id()) throw ContractError("denoiser training received non-ID record '" + s.family_tag + "'");
  }
  Rng rng(derive_seed(cfg.seed, 0x64656e));
  Denoiser den = Denoiser::initialize(cfg, encoder.embed_dim(), rng);
  auto& store = den.params();

  // The encoder is frozen: conditions are computed once from clean images.
  std::vector<ImageGrid> images;
  images.reserve(train.size());
  for (const auto& s : train) images.push_back(s.image);
  const auto conditions = encoder.encode_images(images);
  const auto d = static_cast<std::size_t>(encoder.embed_dim());
  constexpr auto kPix = static_cast<std::size_t>(kImagePixels);

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  DenoiserTrainingResult result{den, {}};
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle(order, rng);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const std::size_t b = end - start;
      BasicTensor<float> z0({b, kPix});
      BasicTensor<float> zs({b, kPix});
      BasicTensor<float> cond({b, d});
      std::vector<int> steps(b);
      for (std::size_t i = 0; i < b; ++i) {
        const std::size_t idx = order[start + i];
        const int s = static_cast<int>(rng.uniform_int(1, schedule.steps()));
        steps[i] = s;
        const double a = schedule.signal_coef(s);
        const double n = schedule.noise_coef(s);
        for (std::size_t p = 0; p < kPix; ++p) {
          const float x = train[idx].image.pixels[p];
          z0[i * kPix + p] = x;
          zs[i * kPix + p] = static_cast<float>(a * x + n * rng.normal());
        }
        std::copy(conditions[idx].values.begin(), conditions[idx].values.end(), cond.data().begin() + i * d);
      }
      Graph<float> g;
      auto loss = denoiser_loss_graph(g, store, z0, zs, steps, cond, den.time_dim());
      g.backward(loss);
      adam_step(store, cfg.adam);
      total += loss.value()[0];
      ++batches;
    }
    result.loss_curve.push_back(total / static_cast<double>(batches));
  }
  result.denoiser = std::move(den);
  return result;
}

void ReconstructionConfig::validate(const NoiseSchedule& schedule) const {
  if (s_star < 1 || s_star > schedule.steps()) {
    throw DomainError("s_star " + std::to_string(s_star) + " outside [1, " + std::to_string(schedule.steps()) + "]");
  }
  if (n_steps < 1 || n_steps > s_star) {
    throw DomainError("n_steps " + std::to_string(n_steps) + " outside [1, s_star]");
  }
}

std::vector<int> reconstruction_timesteps(int s_star, int n_steps) {
  if (n_steps < 1 || n_steps > s_star) throw DomainError("n_steps must lie in [1, s_star]");
  std::vector<int> out(static_cast<std::size_t>(n_steps));
  for (int i = 0; i < n_steps; ++i) {
    out[i] = s_star - static_cast<int>((static_cast<long long>(i) * s_star) / n_steps);
  }
  return out;
}

ImageGrid reconstruct(const Denoiser& denoiser, const NoiseSchedule& schedule, const ImageGrid& image,
                      const EmbeddingVector& condition, const ReconstructionConfig& cfg) {
  cfg.validate(schedule);
  const auto steps = reconstruction_timesteps(cfg.s_star, cfg.n_steps);
  Rng rng(cfg.seed);
  const Tensor eps = standard_normal({1, static_cast<std::size_t>(kImagePixels)}, rng);
  Tensor z = forward_noise(schedule, image, steps.front(), eps);
  Tensor x0;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    x0 = denoiser.predict_x0(z, steps[i], condition);
    if (i + 1 < steps.size()) {
      const Tensor eps_hat = estimate_noise(schedule, z, x0, steps[i]);
      z = forward_noise(schedule, x0, steps[i + 1], eps_hat);
    }
  }
  ImageGrid out;
  for (std::size_t p = 0; p < out.pixels.size(); ++p) out.pixels[p] = std::clamp(x0[p], -1.0f, 1.0f);
  return out;
}

double reconstruction_error(std::span<const float> original, std::span<const float> recon) {
  if (original.size() != recon.size()) {
    throw DimensionError("reconstruction_error size mismatch: " + std::to_string(original.size()) + " vs " +
                         std::to_string(recon.size()));
  }
  if (original.empty()) throw DimensionError("reconstruction_error of empty images");
  double acc = 0.0;
  for (std::size_t i = 0; i < original.size(); ++i) {
    const double d = double(original[i]) - double(recon[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(original.size());
}

double reconstruction_error(const ImageGrid& original, const ImageGrid& recon) {
  return reconstruction_error(std::span<const float>(original.pixels), std::span<const float>(recon.pixels));
}

std::string encode_pgm(std::span<const ImageGrid> images) {
  if (images.empty()) throw ContractError("encode_pgm of no images");
  const int width = kImageSide * static_cast<int>(images.size());
  std::string out = "P5\n" + std::to_string(width) + " " + std::to_string(kImageSide) + "\n255\n";
  for (int r = 0; r < kImageSide; ++r) {
    for (const auto& img : images) {
      for (int c = 0; c < kImageSide; ++c) {
        const double v = std::clamp(double(img.at(r, c)), -1.0, 1.0);
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround((v + 1.0) * 127.5))));
      }
    }
  }
  return out;
}

void write_pgm(const std::filesystem::path& path, std::span<const ImageGrid> images) {
  const auto bytes = encode_pgm(images);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open PGM for writing", path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing PGM", path.string());
}

template Var<float> denoiser_graph(Graph<float>&, ParamStore<float>&, const BasicTensor<float>&, std::span<const int>,
                                   const BasicTensor<float>&, int);
template Var<double> denoiser_graph(Graph<double>&, ParamStore<double>&, const BasicTensor<double>&,
                                    std::span<const int>, const BasicTensor<double>&, int);
template Var<float> denoiser_graph(Graph<float>&, const ParamStore<float>&, const BasicTensor<float>&,
                                   std::span<const int>, const BasicTensor<float>&, int);
template Var<double> denoiser_graph(Graph<double>&, const ParamStore<double>&, const BasicTensor<double>&,
                                    std::span<const int>, const BasicTensor<double>&, int);
template Var<float> denoiser_loss_graph(Graph<float>&, ParamStore<float>&, const BasicTensor<float>&,
                                        const BasicTensor<float>&, std::span<const int>, const BasicTensor<float>&,
                                        int);
template Var<double> denoiser_loss_graph(Graph<double>&, ParamStore<double>&, const BasicTensor<double>&,
                                         const BasicTensor<double>&, std::span<const int>,
                                         const BasicTensor<double>&, int);

}  // namespace recon_ood
