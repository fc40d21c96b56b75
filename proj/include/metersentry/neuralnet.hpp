#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "metersentry/calendar.hpp"
#include "metersentry/ingest.hpp"

namespace metersentry::nn {

using Eigen::Index;

/// Batch of 1-D sequences. Row r = b * length + position holds the channels
/// of sample b at that position, so the buffer is contiguous and per-channel
/// statistics are plain column reductions.
struct Tensor3 {
  Index batch = 0, length = 0, channels = 0;
  Eigen::MatrixXd data;  // (batch * length) x channels

  static Tensor3 zeros(Index batch, Index length, Index channels) {
    Tensor3 t;
    t.batch = batch;
    t.length = length;
    t.channels = channels;
    t.data.setZero(batch * length, channels);
    return t;
  }

  double& at(Index b, Index pos, Index ch) { return data(b * length + pos, ch); }
  double at(Index b, Index pos, Index ch) const { return data(b * length + pos, ch); }

  /// All positions of one sample as a (length x channels) block.
  auto sample(Index b) { return data.middleRows(b * length, length); }
  auto sample(Index b) const { return data.middleRows(b * length, length); }
};

enum class LayerKind { Conv1d, Conv1dTranspose, BatchNorm };
enum class Activation { None, Relu };

struct LayerSpec {
  LayerKind kind = LayerKind::Conv1d;
  Index in_channels = 0;
  Index out_channels = 0;  // equal to in_channels for batch norm
  Index kernel = 0;
  Index stride = 1;
  Activation activation = Activation::None;

  /// Weights + biases for conv kinds; gamma/beta/running mean/running
  /// variance for batch norm.
  Index param_count() const;
  /// Sequence length after this layer. Convolutions use "same" padding with
  /// a centered tap window (left pad floor((k-1)/2)); transpose convolutions
  /// upsample to length * stride.
  Index output_length(Index input_length) const;
};

struct Layer {
  LayerSpec spec;
  Eigen::MatrixXd weight;  // (kernel * in_channels) x out_channels, tap-major rows
  Eigen::VectorXd bias;
  Eigen::VectorXd gamma, beta;                     // batch norm, trainable
  Eigen::VectorXd running_mean, running_var;       // batch norm, tracked
};

struct NormalizationConstants {
  double mean = 0.0;
  double std = 1.0;
};

/// Per-layer activations cached by a training-mode forward pass.
struct ForwardCache;

class ConvAutoencoder {
 public:
  ConvAutoencoder() = default;
  explicit ConvAutoencoder(std::vector<LayerSpec> specs);

  /// The fixed 24->12->6->3 encoder / 3->6->12->24 decoder stack:
  ///   conv(1->16,k7,s2)+BN, conv(16->8,k7,s2)+BN, conv(8->4,k7,s2),
  ///   tconv(4->8,k2,s2)+BN, tconv(8->16,k7,s2)+BN, tconv(16->1,k7,s2).
  /// 2549 parameters in total.
  static ConvAutoencoder canonical();

  /// Fan-in-scaled uniform weights, zero biases, identity batch norm.
  void init_weights(std::uint64_t seed);

  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& mutable_layers() { return layers_; }

  std::vector<Index> per_layer_param_counts() const;
  Index total_param_count() const;
  /// (length, channels) after each layer for the given input length.
  std::vector<std::pair<Index, Index>> output_shapes(Index input_length) const;

  Index input_channels() const;
  Index expected_input_length() const { return expected_input_length_; }
  void set_expected_input_length(Index len) { expected_input_length_ = len; }

  /// Inference forward pass: running batch-norm statistics, deterministic,
  /// safe to call concurrently on an immutable model.
  Tensor3 infer(const Tensor3& input) const;

  /// Training forward pass: batch statistics (batch >= 2), running stats
  /// updated, activations cached for backward.
  Tensor3 forward_train(const Tensor3& input, ForwardCache& cache);

  /// Gradient of a scalar loss w.r.t. every trainable parameter, flattened in
  /// trainable_parameters() order. Requires a cache from forward_train on the
  /// same input; throws StateError otherwise. Optionally also yields the
  /// gradient w.r.t. the input.
  Eigen::VectorXd backward(const ForwardCache& cache, const Tensor3& grad_output,
                           Tensor3* grad_input = nullptr) const;

  /// Trainable parameters (conv weights and biases, batch-norm gamma/beta;
  /// running statistics excluded) as one flat vector.
  Eigen::VectorXd trainable_parameters() const;
  void set_trainable_parameters(const Eigen::VectorXd& flat);
  Index trainable_param_count() const;

  NormalizationConstants normalization;

 private:
  std::vector<Layer> layers_;
  Index expected_input_length_ = 0;
};

struct ForwardCache {
  std::vector<Tensor3> inputs;        // input to each layer
  std::vector<Tensor3> pre_activations;
  std::vector<Eigen::MatrixXd> bn_normalized;  // x-hat per batch-norm layer
  std::vector<Eigen::VectorXd> bn_inv_std;
  bool valid = false;
};

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

/// Mean squared error over every element (per-window MSE averaged over the
/// batch when lengths agree).
double mse_loss(const Tensor3& output, const Tensor3& target);
Tensor3 mse_loss_grad(const Tensor3& output, const Tensor3& target);

// ---------------------------------------------------------------------------
// Windows
// ---------------------------------------------------------------------------

struct WindowSet {
  Tensor3 windows;                     // (N, length, 1), standardized
  std::vector<UnixTime> end_timestamps;
  std::vector<Index> end_rows;         // frame row index of each window end
  NormalizationConstants normalization;
};

/// Mean and sample standard deviation of a consumption slice; the constants
/// every window is standardized with. Throws DegenerateDistributionError on
/// zero variance.
NormalizationConstants fit_normalization(Eigen::Ref<const Eigen::VectorXd> consumption);

/// Sliding windows over the frame's consumption column, standardized with
/// `norm`. N = floor((rows - length)/stride) + 1.
WindowSet make_windows(const ingest::FeatureFrame& frame, Index length,
                       Index stride, NormalizationConstants norm);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainConfig {
  Index epochs = 50;
  Index batch_size = 64;
  double learning_rate = 1e-3;
  double validation_fraction = 0.1;  // final windows by time
  std::uint64_t seed = 0;
  Index patience = 10;  // early stop on validation loss; 0 disables
};

struct TrainReport {
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  Index epochs_run = 0;
  Index best_epoch = 0;  // 0-based index into the loss vectors
};

/// Adam (1e-3, 0.9, 0.999, 1e-8) over shuffled mini-batches; shuffling and
/// initialization depend only on config.seed. Early stopping restores the
/// best validation weights. Throws DivergedTrainingError when the loss stops
/// being finite, naming the epoch.
TrainReport train(ConvAutoencoder& model, const WindowSet& windows,
                  const TrainConfig& config);

// ---------------------------------------------------------------------------
// Model file
// ---------------------------------------------------------------------------

/// Binary format: magic, version, layer listing, normalization constants,
/// little-endian 64-bit parameter buffers in layer order, FNV-1a checksum.
void save_model(const ConvAutoencoder& model, const std::filesystem::path& path);
ConvAutoencoder load_model(const std::filesystem::path& path);

}  // namespace metersentry::nn
