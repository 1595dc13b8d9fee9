#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "recon_ood/autograd.hpp"
#include "recon_ood/checkpoint.hpp"
#include "recon_ood/param_store.hpp"
#include "recon_ood/rng.hpp"
#include "recon_ood/synth_data.hpp"

namespace recon_ood {

/// Unit-norm image or class embedding.
struct EmbeddingVector {
  std::vector<float> values;

  std::size_t dim() const noexcept { return values.size(); }
  double dot(const EmbeddingVector& other) const;
  double norm() const;
  friend bool operator==(const EmbeddingVector&, const EmbeddingVector&) = default;
};

struct EncoderConfig {
  int embed_dim = 32;
  int hidden1 = 128;
  int hidden2 = 64;
  int batch_size = 64;
  int epochs = 10;
  double temperature_init = 0.07;
  AdamConfig adam{.learning_rate = 3e-3};
  std::uint64_t seed = 42;
  double accuracy_floor = 0.95;

  void validate() const;
};

struct ZeroShotResult {
  int class_id = 0;
  std::vector<double> similarities;
};

// Index of the largest score; ties go to the lowest index.
int argmax_similarity(std::span<const double> scores);

// Parameter names used by the image tower, class table and temperature.
namespace encoder_params {
inline constexpr const char* kClassTable = "class_table";
inline constexpr const char* kLogTemperature = "log_temperature";
}  // namespace encoder_params

/// Dual encoder: an MLP image tower (256→h1→h2→d, silu) and a learnable
/// class table standing in for per-class prompt embeddings, both projected to
/// the unit sphere, plus a learnable temperature stored as its logarithm.
class Encoder {
 public:
  static Encoder initialize(const EncoderConfig& cfg, Rng& rng);
  static Encoder from_checkpoint(const Checkpoint& ckpt);
  Checkpoint to_checkpoint(const std::map<std::string, double>& extra_meta = {}) const;

  EmbeddingVector encode_image(const ImageGrid& image) const;
  std::vector<EmbeddingVector> encode_images(std::span<const ImageGrid> images) const;
  EmbeddingVector encode_class(int class_id) const;
  ZeroShotResult zero_shot_classify(const ImageGrid& image) const;
  // Max of softmax(similarity / temperature) over classes.
  double max_softmax(const ImageGrid& image) const;

  double temperature() const;
  int embed_dim() const noexcept { return embed_dim_; }
  int num_classes() const noexcept { return kNumClasses; }
  const ParamStore<float>& params() const noexcept { return store_; }
  ParamStore<float>& params() noexcept { return store_; }

 private:
  Encoder(ParamStore<float> store, int embed_dim) : store_(std::move(store)), embed_dim_(embed_dim) {}

  ParamStore<float> store_;
  int embed_dim_;
};

// Graph builders, templated so gradient checks can run them in double.
// A mutable store binds trainable parameters; a const store binds frozen ones.
template <typename T>
Var<T> encode_images_graph(Graph<T>& g, ParamStore<T>& store, const BasicTensor<T>& images);
template <typename T>
Var<T> encode_images_graph(Graph<T>& g, const ParamStore<T>& store, const BasicTensor<T>& images);
template <typename T>
Var<T> class_table_graph(Graph<T>& g, ParamStore<T>& store);
template <typename T>
Var<T> class_table_graph(Graph<T>& g, const ParamStore<T>& store);
// Symmetric InfoNCE over the B×B image↔class logit matrix (similarity divided
// by temperature). Samples sharing a class are all treated as positives.
// Throws ContractError for fewer than two samples or a single class.
template <typename T>
Var<T> contrastive_loss_graph(Graph<T>& g, ParamStore<T>& store, const BasicTensor<T>& images,
                              std::span<const int> labels);
// Same loss from an explicit logit matrix and labels.
template <typename T>
Var<T> symmetric_infonce(Var<T> logits, std::span<const int> labels);

double contrastive_loss(const Encoder& encoder, std::span<const LabeledSample> batch);

BasicTensor<float> stack_images(std::span<const ImageGrid> images);

struct EncoderTrainingResult {
  Encoder encoder;
  std::vector<double> loss_curve;  // [0] = initial loss, then one mean per epoch
  double zero_shot_accuracy = 0.0;
};

double zero_shot_accuracy(const Encoder& encoder, std::span<const LabeledSample> samples);

// Trains on ID `train` records and measures zero-shot accuracy on `heldout`.
// Throws TrainingFailure (carrying the result's accuracy) below the floor.
EncoderTrainingResult train_encoder(std::span<const LabeledSample> train, std::span<const LabeledSample> heldout,
                                    const EncoderConfig& cfg);

}  // namespace recon_ood
