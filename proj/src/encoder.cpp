#include "recon_ood/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "recon_ood/errors.hpp"

namespace recon_ood {

namespace {

constexpr const char* kW1 = "image.w1";
constexpr const char* kB1 = "image.b1";
constexpr const char* kW2 = "image.w2";
constexpr const char* kB2 = "image.b2";
constexpr const char* kW3 = "image.w3";
constexpr const char* kB3 = "image.b3";

template <typename T>
Var<T> bind(Graph<T>& g, ParamStore<T>& store, const char* name) {
  return g.param(store, name);
}

template <typename T>
Var<T> bind(Graph<T>& g, const ParamStore<T>& store, const char* name) {
  return g.frozen(store, name);
}

template <typename T, typename Store>
Var<T> image_tower(Graph<T>& g, Store& store, const BasicTensor<T>& images) {
  auto x = g.constant(images);
  auto h = silu(add(matmul(x, bind(g, store, kW1)), bind(g, store, kB1)));
  h = silu(add(matmul(h, bind(g, store, kW2)), bind(g, store, kB2)));
  auto out = add(matmul(h, bind(g, store, kW3)), bind(g, store, kB3));
  return normalize_rows(out);
}

Tensor gaussian(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<float>(stddev * rng.normal());
  return t;
}

}  // namespace

double EmbeddingVector::dot(const EmbeddingVector& other) const {
  if (other.dim() != dim()) throw DimensionError("embedding dimension mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) acc += double(values[i]) * other.values[i];
  return acc;
}

double EmbeddingVector::norm() const { return std::sqrt(dot(*this)); }

void EncoderConfig::validate() const {
  if (embed_dim <= 0 || hidden1 <= 0 || hidden2 <= 0) throw DomainError("encoder: layer sizes must be positive");
  if (batch_size < 2) throw DomainError("encoder: batch_size must be at least 2");
  if (epochs <= 0) throw DomainError("encoder: epochs must be positive");
  if (!(temperature_init > 0.0)) throw DomainError("encoder: temperature_init must be positive");
  if (!(accuracy_floor >= 0.0 && accuracy_floor <= 1.0)) throw DomainError("encoder: accuracy_floor must lie in [0,1]");
  adam.validate();
}

int argmax_similarity(std::span<const double> scores) {
  if (scores.empty()) throw ContractError("argmax of an empty score vector");
  int best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = static_cast<int>(i);
  }
  return best;
}

template <typename T>
Var<T> encode_images_graph(Graph<T>& g, ParamStore<T>& store, const BasicTensor<T>& images) {
  return image_tower(g, store, images);
}

template <typename T>
Var<T> encode_images_graph(Graph<T>& g, const ParamStore<T>& store, const BasicTensor<T>& images) {
  return image_tower(g, store, images);
}

template <typename T>
Var<T> class_table_graph(Graph<T>& g, ParamStore<T>& store) {
  return normalize_rows(g.param(store, encoder_params::kClassTable));
}

template <typename T>
Var<T> class_table_graph(Graph<T>& g, const ParamStore<T>& store) {
  return normalize_rows(g.frozen(store, encoder_params::kClassTable));
}

template <typename T>
Var<T> symmetric_infonce(Var<T> logits, std::span<const int> labels) {
  Graph<T>& g = logits.graph();
  const std::size_t b = labels.size();
  if (logits.value().rank() != 2 || logits.value().dim(0) != b || logits.value().dim(1) != b) {
    throw DimensionError("symmetric_infonce expects a " + std::to_string(b) + "x" + std::to_string(b) +
                         " logit matrix, got " + shape_string(logits.shape()));
  }
  if (b < 2) throw ContractError("contrastive batch needs at least two samples");
  if (std::set<int>(labels.begin(), labels.end()).size() < 2) {
    throw ContractError("contrastive batch needs at least two distinct classes");
  }
  // Row-normalised positive mask; symmetric because equal labels share a count.
  BasicTensor<T> targets({b, b});
  for (std::size_t i = 0; i < b; ++i) {
    const auto same = std::count(labels.begin(), labels.end(), labels[i]);
    for (std::size_t j = 0; j < b; ++j) {
      if (labels[j] == labels[i]) targets.at(i, j) = T{1} / static_cast<T>(same);
    }
  }
  auto y = g.constant(std::move(targets));
  auto image_to_class = sum(mul(y, log_softmax_rows(logits)));
  auto class_to_image = sum(mul(y, log_softmax_rows(transpose(logits))));
  return scale(add(image_to_class, class_to_image), -0.5 / static_cast<double>(b));
}

template <typename T>
Var<T> contrastive_loss_graph(Graph<T>& g, ParamStore<T>& store, const BasicTensor<T>& images,
                              std::span<const int> labels) {
  if (images.rank() != 2 || images.dim(0) != labels.size()) {
    throw DimensionError("contrastive loss: " + std::to_string(labels.size()) + " labels for images " +
                         shape_string(images.shape()));
  }
  const std::size_t b = labels.size();
  const std::size_t k = store.value(encoder_params::kClassTable).dim(0);
  BasicTensor<T> onehot({b, k});
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
      throw DomainError("contrastive loss: class id " + std::to_string(labels[i]) + " out of range");
    }
    onehot.at(i, static_cast<std::size_t>(labels[i])) = T{1};
  }
  auto image_emb = encode_images_graph(g, store, images);
  auto class_emb = matmul(g.constant(std::move(onehot)), class_table_graph(g, store));
  auto inv_temperature = exp(scale(g.param(store, encoder_params::kLogTemperature), -1.0));
  auto logits = scale_by(matmul(image_emb, transpose(class_emb)), inv_temperature);
  return symmetric_infonce(logits, labels);
}

BasicTensor<float> stack_images(std::span<const ImageGrid> images) {
  if (images.empty()) throw ContractError("stack_images of an empty list");
  BasicTensor<float> out({images.size(), static_cast<std::size_t>(kImagePixels)});
  for (std::size_t i = 0; i < images.size(); ++i) {
    std::copy(images[i].pixels.begin(), images[i].pixels.end(), out.data().begin() + i * kImagePixels);
  }
  return out;
}

Encoder Encoder::initialize(const EncoderConfig& cfg, Rng& rng) {
  cfg.validate();
  const auto in = static_cast<std::size_t>(kImagePixels);
  const auto h1 = static_cast<std::size_t>(cfg.hidden1);
  const auto h2 = static_cast<std::size_t>(cfg.hidden2);
  const auto d = static_cast<std::size_t>(cfg.embed_dim);
  ParamStore<float> store;
  store.add(kW1, gaussian({in, h1}, std::sqrt(1.0 / in), rng));
  store.add(kB1, Tensor({h1}));
  store.add(kW2, gaussian({h1, h2}, std::sqrt(1.0 / h1), rng));
  store.add(kB2, Tensor({h2}));
  store.add(kW3, gaussian({h2, d}, std::sqrt(1.0 / h2), rng));
  store.add(kB3, Tensor({d}));
  store.add(encoder_params::kClassTable, gaussian({static_cast<std::size_t>(kNumClasses), d}, 1.0, rng));
  store.add(encoder_params::kLogTemperature, Tensor::scalar(static_cast<float>(std::log(cfg.temperature_init))));
  return Encoder(std::move(store), cfg.embed_dim);
}

Encoder Encoder::from_checkpoint(const Checkpoint& ckpt) {
  ParamStore<float> store;
  for (const char* name : {kW1, kB1, kW2, kB2, kW3, kB3, encoder_params::kClassTable, encoder_params::kLogTemperature}) {
    const Tensor* t = ckpt.find(name);
    if (!t) throw ParseError(std::string("encoder checkpoint is missing '") + name + "'");
    store.add(name, *t);
  }
  const auto& table = store.value(encoder_params::kClassTable);
  if (table.rank() != 2 || table.dim(0) != static_cast<std::size_t>(kNumClasses)) {
    throw ParseError("encoder checkpoint class table has shape " + shape_string(table.shape()));
  }
  const auto& w1 = store.value(kW1);
  if (w1.rank() != 2 || w1.dim(0) != static_cast<std::size_t>(kImagePixels)) {
    throw ParseError("encoder checkpoint input layer has shape " + shape_string(w1.shape()));
  }
  return Encoder(std::move(store), static_cast<int>(table.dim(1)));
}

Checkpoint Encoder::to_checkpoint(const std::map<std::string, double>& extra_meta) const {
  std::map<std::string, double> meta = extra_meta;
  meta["embed_dim"] = embed_dim_;
  meta["num_classes"] = kNumClasses;
  meta["temperature"] = temperature();
  return checkpoint_from_store(store_, meta);
}

std::vector<EmbeddingVector> Encoder::encode_images(std::span<const ImageGrid> images) const {
  Graph<float> g;
  auto emb = encode_images_graph(g, store_, stack_images(images));
  const auto& v = emb.value();
  std::vector<EmbeddingVector> out(images.size());
  const auto d = static_cast<std::size_t>(embed_dim_);
  for (std::size_t i = 0; i < images.size(); ++i) {
    out[i].values.assign(v.data().begin() + i * d, v.data().begin() + (i + 1) * d);
  }
  return out;
}

EmbeddingVector Encoder::encode_image(const ImageGrid& image) const {
  return encode_images(std::span(&image, 1)).front();
}

EmbeddingVector Encoder::encode_class(int class_id) const {
  if (class_id < 0 || class_id >= kNumClasses) {
    throw DomainError("class id " + std::to_string(class_id) + " outside [0, " + std::to_string(kNumClasses) + ")");
  }
  Graph<float> g;
  auto table = class_table_graph(g, store_);
  const auto d = static_cast<std::size_t>(embed_dim_);
  const auto& v = table.value();
  EmbeddingVector out;
  out.values.assign(v.data().begin() + class_id * d, v.data().begin() + (class_id + 1) * d);
  return out;
}

ZeroShotResult Encoder::zero_shot_classify(const ImageGrid& image) const {
  const auto img = encode_image(image);
  ZeroShotResult r;
  for (int k = 0; k < kNumClasses; ++k) r.similarities.push_back(img.dot(encode_class(k)));
  r.class_id = argmax_similarity(r.similarities);
  return r;
}

double Encoder::max_softmax(const ImageGrid& image) const {
  const auto sims = zero_shot_classify(image).similarities;
  const double inv_t = 1.0 / temperature();
  const double mx = *std::max_element(sims.begin(), sims.end());
  double denom = 0.0;
  for (double s : sims) denom += std::exp((s - mx) * inv_t);
  return 1.0 / denom;
}

double Encoder::temperature() const { return std::exp(double(store_.value(encoder_params::kLogTemperature)[0])); }

double contrastive_loss(const Encoder& encoder, std::span<const LabeledSample> batch) {
  std::vector<ImageGrid> images;
  std::vector<int> labels;
  for (const auto& s : batch) {
    images.push_back(s.image);
    labels.push_back(s.class_id);
  }
  // The loss graph binds trainable parameters, so evaluate it on a copy.
  ParamStore<float> store = encoder.params().cast<float>();
  Graph<float> g;
  return contrastive_loss_graph(g, store, stack_images(images), labels).value()[0];
}

double zero_shot_accuracy(const Encoder& encoder, std::span<const LabeledSample> samples) {
  if (samples.empty()) throw ContractError("zero-shot accuracy over an empty set");
  std::size_t correct = 0;
  for (const auto& s : samples) {
    if (!s.is_id()) throw ContractError("zero-shot accuracy needs ID samples, got '" + s.family_tag + "'");
    if (encoder.zero_shot_classify(s.image).class_id == s.class_id) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

namespace {

struct Batch {
  BasicTensor<float> images;
  std::vector<int> labels;
};

std::vector<Batch> make_batches(std::span<const LabeledSample> data, std::span<const std::size_t> order,
                                std::size_t batch_size) {
  std::vector<Batch> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    std::vector<ImageGrid> images;
    Batch b;
    for (std::size_t i = start; i < end; ++i) {
      images.push_back(data[order[i]].image);
      b.labels.push_back(data[order[i]].class_id);
    }
    // Trailing batches that cannot form a contrastive pair are dropped.
    if (b.labels.size() < 2 || std::set<int>(b.labels.begin(), b.labels.end()).size() < 2) continue;
    b.images = stack_images(images);
    out.push_back(std::move(b));
  }
  return out;
}

void shuffle(std::vector<std::size_t>& order, Rng& rng) {
  for (std::size_t i = order.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i - 1)));
    std::swap(order[i - 1], order[j]);
  }
}

}  // namespace

EncoderTrainingResult train_encoder(std::span<const LabeledSample> train, std::span<const LabeledSample> heldout,
                                    const EncoderConfig& cfg) {
  cfg.validate();
  for (const auto& s : train) {
    if (!s.is_id()) throw ContractError("encoder training received non-ID record '" + s.family_tag + "'");
  }
  Rng rng(derive_seed(cfg.seed, 0x656e63));
  Encoder enc = Encoder::initialize(cfg, rng);
  auto& store = enc.params();

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  const auto batch = static_cast<std::size_t>(cfg.batch_size);

  auto initial = make_batches(train, order, batch);
  if (initial.empty()) throw ContractError("encoder training set cannot form a contrastive batch");
  double initial_loss = 0.0;
  for (const auto& b : initial) {
    Graph<float> g;
    initial_loss += contrastive_loss_graph(g, store, b.images, b.labels).value()[0];
  }
  EncoderTrainingResult result{enc, {initial_loss / static_cast<double>(initial.size())}, 0.0};

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle(order, rng);
    const auto batches = make_batches(train, order, batch);
    double total = 0.0;
    for (const auto& b : batches) {
      Graph<float> g;
      auto loss = contrastive_loss_graph(g, store, b.images, b.labels);
      g.backward(loss);
      adam_step(store, cfg.adam);
      total += loss.value()[0];
    }
    result.loss_curve.push_back(total / static_cast<double>(std::max<std::size_t>(1, batches.size())));
  }
  result.encoder = std::move(enc);
  result.zero_shot_accuracy = zero_shot_accuracy(result.encoder, heldout);
  if (result.zero_shot_accuracy < cfg.accuracy_floor) {
    throw TrainingFailure("encoder zero-shot accuracy " + std::to_string(result.zero_shot_accuracy) +
                              " is below the floor " + std::to_string(cfg.accuracy_floor),
                          result.zero_shot_accuracy, cfg.accuracy_floor);
  }
  return result;
}

template Var<float> encode_images_graph(Graph<float>&, ParamStore<float>&, const BasicTensor<float>&);
template Var<double> encode_images_graph(Graph<double>&, ParamStore<double>&, const BasicTensor<double>&);
template Var<float> encode_images_graph(Graph<float>&, const ParamStore<float>&, const BasicTensor<float>&);
template Var<double> encode_images_graph(Graph<double>&, const ParamStore<double>&, const BasicTensor<double>&);
template Var<float> class_table_graph(Graph<float>&, ParamStore<float>&);
template Var<double> class_table_graph(Graph<double>&, ParamStore<double>&);
template Var<float> class_table_graph(Graph<float>&, const ParamStore<float>&);
template Var<double> class_table_graph(Graph<double>&, const ParamStore<double>&);
template Var<float> symmetric_infonce(Var<float>, std::span<const int>);
template Var<double> symmetric_infonce(Var<double>, std::span<const int>);
template Var<float> contrastive_loss_graph(Graph<float>&, ParamStore<float>&, const BasicTensor<float>&,
                                           std::span<const int>);
template Var<double> contrastive_loss_graph(Graph<double>&, ParamStore<double>&, const BasicTensor<double>&,
                                            std::span<const int>);

}  // namespace recon_ood
