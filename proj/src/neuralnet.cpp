#include "metersentry/neuralnet.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>

#include "metersentry/errors.hpp"
#include "metersentry/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "model files assume a little-endian host");

namespace metersentry::nn {

namespace {

constexpr double kBnEpsilon = 1e-5;
constexpr double kBnMomentum = 0.9;  // running = m*running + (1-m)*batch

Index same_pad(Index kernel) { return (kernel - 1) / 2; }

// Valid iteration positions for one kernel tap. `iter_len` counts the
// positions being walked (output rows for a convolution, input rows for a
// transpose convolution); `limit` bounds the strided index i*stride+offset.
struct TapRange {
  Index first = 0;
  Index count = 0;
  Index strided_start = 0;
};

TapRange tap_range(Index tap, Index pad, Index stride, Index iter_len, Index limit) {
  const Index offset = tap - pad;
  TapRange r;
  if (offset >= limit) return r;
  Index first = 0;
  if (offset < 0) first = (-offset + stride - 1) / stride;
  Index last = (limit - 1 - offset) / stride;
  if (last > iter_len - 1) last = iter_len - 1;
  if (last < first) return r;
  r.first = first;
  r.count = last - first + 1;
  r.strided_start = first * stride + offset;
  return r;
}

void apply_relu(Tensor3& t) { t.data = t.data.cwiseMax(0.0); }

}  // namespace

// ---------------------------------------------------------------------------
// LayerSpec
// ---------------------------------------------------------------------------

Index LayerSpec::param_count() const {
  switch (kind) {
    case LayerKind::Conv1d:
    case LayerKind::Conv1dTranspose:
      return kernel * in_channels * out_channels + out_channels;
    case LayerKind::BatchNorm:
      return 4 * out_channels;  // gamma, beta, running mean, running variance
  }
  return 0;
}

Index LayerSpec::output_length(Index input_length) const {
  switch (kind) {
    case LayerKind::Conv1d:
      return (input_length + stride - 1) / stride;
    case LayerKind::Conv1dTranspose:
      return input_length * stride;
    case LayerKind::BatchNorm:
      return input_length;
  }
  return input_length;
}

// ---------------------------------------------------------------------------
// Construction
// ---------------------------------------------------------------------------

ConvAutoencoder::ConvAutoencoder(std::vector<LayerSpec> specs) {
  layers_.reserve(specs.size());
  Index channels = specs.empty() ? 0 : specs.front().in_channels;
  for (const LayerSpec& spec : specs) {
    if (spec.in_channels != channels) {
      throw ShapeError("layer expects " + std::to_string(spec.in_channels) +
                       " input channels, previous layer provides " +
                       std::to_string(channels));
    }
    if (spec.kind == LayerKind::BatchNorm && spec.in_channels != spec.out_channels) {
      throw ShapeError("batch norm cannot change the channel count");
    }
    Layer layer;
    layer.spec = spec;
    if (spec.kind == LayerKind::BatchNorm) {
      layer.gamma = Eigen::VectorXd::Ones(spec.out_channels);
      layer.beta = Eigen::VectorXd::Zero(spec.out_channels);
      layer.running_mean = Eigen::VectorXd::Zero(spec.out_channels);
      layer.running_var = Eigen::VectorXd::Ones(spec.out_channels);
    } else {
      layer.weight = Eigen::MatrixXd::Zero(spec.kernel * spec.in_channels,
                                           spec.out_channels);
      layer.bias = Eigen::VectorXd::Zero(spec.out_channels);
    }
    layers_.push_back(std::move(layer));
    channels = spec.out_channels;
  }
}

ConvAutoencoder ConvAutoencoder::canonical() {
  using K = LayerKind;
  using A = Activation;
  std::vector<LayerSpec> specs = {
      {K::Conv1d, 1, 16, 7, 2, A::Relu},
      {K::BatchNorm, 16, 16, 0, 1, A::None},
      {K::Conv1d, 16, 8, 7, 2, A::Relu},
      {K::BatchNorm, 8, 8, 0, 1, A::None},
      {K::Conv1d, 8, 4, 7, 2, A::Relu},
      {K::Conv1dTranspose, 4, 8, 2, 2, A::Relu},
      {K::BatchNorm, 8, 8, 0, 1, A::None},
      {K::Conv1dTranspose, 8, 16, 7, 2, A::Relu},
      {K::BatchNorm, 16, 16, 0, 1, A::None},
      {K::Conv1dTranspose, 16, 1, 7, 2, A::None},
  };
  ConvAutoencoder model(std::move(specs));
  model.set_expected_input_length(24);
  return model;
}

void ConvAutoencoder::init_weights(std::uint64_t seed) {
  Rng rng(seed);
  for (Layer& layer : layers_) {
    if (layer.spec.kind == LayerKind::BatchNorm) {
      layer.gamma.setOnes();
      layer.beta.setZero();
      layer.running_mean.setZero();
      layer.running_var.setOnes();
      continue;
    }
    const double fan_in =
        static_cast<double>(layer.spec.kernel * layer.spec.in_channels);
    const double limit = std::sqrt(6.0 / fan_in);
    for (Index c = 0; c < layer.weight.cols(); ++c) {
      for (Index r = 0; r < layer.weight.rows(); ++r) {
        layer.weight(r, c) = rng.uniform(-limit, limit);
      }
    }
    layer.bias.setZero();
  }
}

std::vector<Index> ConvAutoencoder::per_layer_param_counts() const {
  std::vector<Index> counts;
  counts.reserve(layers_.size());
  for (const Layer& layer : layers_) counts.push_back(layer.spec.param_count());
  return counts;
}

Index ConvAutoencoder::total_param_count() const {
  const std::vector<Index> counts = per_layer_param_counts();
  return std::accumulate(counts.begin(), counts.end(), Index{0});
}

std::vector<std::pair<Index, Index>> ConvAutoencoder::output_shapes(
    Index input_length) const {
  std::vector<std::pair<Index, Index>> shapes;
  shapes.reserve(layers_.size());
  Index length = input_length;
  for (const Layer& layer : layers_) {
    length = layer.spec.output_length(length);
    shapes.emplace_back(length, layer.spec.out_channels);
  }
  return shapes;
}

Index ConvAutoencoder::input_channels() const {
  return layers_.empty() ? 0 : layers_.front().spec.in_channels;
}

// ---------------------------------------------------------------------------
// Layer forward/backward
// ---------------------------------------------------------------------------

namespace {

// Strided row gathers materialize into small temporaries before matrix
// products; Eigen's GEMM path cannot consume indexed views directly.
Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& m, Index start, Index count,
                            Index stride) {
  return m(Eigen::seqN(start, count, stride), Eigen::all);
}

Tensor3 conv1d_forward(const Layer& layer, const Tensor3& in) {
  const LayerSpec& s = layer.spec;
  const Index pad = same_pad(s.kernel);
  const Index out_len = s.output_length(in.length);
  Tensor3 out = Tensor3::zeros(in.batch, out_len, s.out_channels);
  out.data.rowwise() = layer.bias.transpose();
  for (Index t = 0; t < s.kernel; ++t) {
    const TapRange r = tap_range(t, pad, s.stride, out_len, in.length);
    if (r.count == 0) continue;
    const auto w_t = layer.weight.middleRows(t * s.in_channels, s.in_channels);
    for (Index b = 0; b < in.batch; ++b) {
      const Eigen::MatrixXd in_rows =
          gather_rows(in.data, b * in.length + r.strided_start, r.count, s.stride);
      out.data.middleRows(b * out_len + r.first, r.count).noalias() += in_rows * w_t;
    }
  }
  return out;
}

void conv1d_backward(const Layer& layer, const Tensor3& in, const Tensor3& grad_out,
                     Eigen::MatrixXd& grad_weight, Eigen::VectorXd& grad_bias,
                     Tensor3& grad_in) {
  const LayerSpec& s = layer.spec;
  const Index pad = same_pad(s.kernel);
  const Index out_len = grad_out.length;
  grad_weight.setZero(layer.weight.rows(), layer.weight.cols());
  grad_bias = grad_out.data.colwise().sum();
  grad_in = Tensor3::zeros(in.batch, in.length, s.in_channels);
  for (Index t = 0; t < s.kernel; ++t) {
    const TapRange r = tap_range(t, pad, s.stride, out_len, in.length);
    if (r.count == 0) continue;
    auto gw_t = grad_weight.middleRows(t * s.in_channels, s.in_channels);
    const auto w_t = layer.weight.middleRows(t * s.in_channels, s.in_channels);
    for (Index b = 0; b < in.batch; ++b) {
      const Eigen::MatrixXd in_rows =
          gather_rows(in.data, b * in.length + r.strided_start, r.count, s.stride);
      const auto go_rows = grad_out.data.middleRows(b * out_len + r.first, r.count);
      gw_t.noalias() += in_rows.transpose() * go_rows;
      const Eigen::MatrixXd contrib = go_rows * w_t.transpose();
      grad_in.data(Eigen::seqN(b * in.length + r.strided_start, r.count, s.stride),
                   Eigen::all) += contrib;
    }
  }
}

Tensor3 tconv1d_forward(const Layer& layer, const Tensor3& in) {
  const LayerSpec& s = layer.spec;
  const Index pad = same_pad(s.kernel);
  const Index out_len = s.output_length(in.length);
  Tensor3 out = Tensor3::zeros(in.batch, out_len, s.out_channels);
  out.data.rowwise() = layer.bias.transpose();
  for (Index t = 0; t < s.kernel; ++t) {
    const TapRange r = tap_range(t, pad, s.stride, in.length, out_len);
    if (r.count == 0) continue;
    const auto w_t = layer.weight.middleRows(t * s.in_channels, s.in_channels);
    for (Index b = 0; b < in.batch; ++b) {
      const Eigen::MatrixXd contrib =
          in.data.middleRows(b * in.length + r.first, r.count) * w_t;
      out.data(Eigen::seqN(b * out_len + r.strided_start, r.count, s.stride),
               Eigen::all) += contrib;
    }
  }
  return out;
}

void tconv1d_backward(const Layer& layer, const Tensor3& in, const Tensor3& grad_out,
                      Eigen::MatrixXd& grad_weight, Eigen::VectorXd& grad_bias,
                      Tensor3& grad_in) {
  const LayerSpec& s = layer.spec;
  const Index pad = same_pad(s.kernel);
  const Index out_len = grad_out.length;
  grad_weight.setZero(layer.weight.rows(), layer.weight.cols());
  grad_bias = grad_out.data.colwise().sum();
  grad_in = Tensor3::zeros(in.batch, in.length, s.in_channels);
  for (Index t = 0; t < s.kernel; ++t) {
    const TapRange r = tap_range(t, pad, s.stride, in.length, out_len);
    if (r.count == 0) continue;
    auto gw_t = grad_weight.middleRows(t * s.in_channels, s.in_channels);
    const auto w_t = layer.weight.middleRows(t * s.in_channels, s.in_channels);
    for (Index b = 0; b < in.batch; ++b) {
      const auto in_rows = in.data.middleRows(b * in.length + r.first, r.count);
      const Eigen::MatrixXd go_rows = gather_rows(
          grad_out.data, b * out_len + r.strided_start, r.count, s.stride);
      gw_t.noalias() += in_rows.transpose() * go_rows;
      grad_in.data.middleRows(b * in.length + r.first, r.count).noalias() +=
          go_rows * w_t.transpose();
    }
  }
}

Tensor3 batchnorm_forward_train(Layer& layer, const Tensor3& in,
                                Eigen::MatrixXd& xhat_out,
                                Eigen::VectorXd& inv_std_out) {
  const Eigen::RowVectorXd mean = in.data.colwise().mean();
  const Eigen::MatrixXd centered = in.data.rowwise() - mean;
  const Eigen::RowVectorXd var = centered.array().square().colwise().mean();
  inv_std_out = (var.transpose().array() + kBnEpsilon).rsqrt();
  xhat_out = centered.array().rowwise() * inv_std_out.transpose().array();

  layer.running_mean = kBnMomentum * layer.running_mean + (1.0 - kBnMomentum) * mean.transpose();
  layer.running_var = kBnMomentum * layer.running_var + (1.0 - kBnMomentum) * var.transpose();

  Tensor3 out = in;
  out.data = (xhat_out.array().rowwise() * layer.gamma.transpose().array()).rowwise() +
             layer.beta.transpose().array();
  return out;
}

Tensor3 batchnorm_infer(const Layer& layer, const Tensor3& in) {
  const Eigen::ArrayXd inv_std = (layer.running_var.array() + kBnEpsilon).rsqrt();
  const Eigen::ArrayXd scale = layer.gamma.array() * inv_std;
  const Eigen::ArrayXd shift =
      layer.beta.array() - layer.running_mean.array() * scale;
  Tensor3 out = in;
  out.data = (in.data.array().rowwise() * scale.transpose()).rowwise() +
             shift.transpose();
  return out;
}

void batchnorm_backward(const Layer& layer, const Eigen::MatrixXd& xhat,
                        const Eigen::VectorXd& inv_std, const Tensor3& grad_out,
                        Eigen::VectorXd& grad_gamma, Eigen::VectorXd& grad_beta,
                        Tensor3& grad_in) {
  const double n = static_cast<double>(grad_out.data.rows());
  grad_beta = grad_out.data.colwise().sum();
  grad_gamma = (grad_out.data.array() * xhat.array()).colwise().sum();

  // dx = gamma*inv_std/N * (N*dy - sum(dy) - xhat*sum(dy*xhat)), per channel.
  grad_in = grad_out;
  grad_in.data = (grad_out.data.array() * n).rowwise() - grad_beta.transpose().array();
  grad_in.data.array() -= xhat.array().rowwise() * grad_gamma.transpose().array();
  const Eigen::ArrayXd scale = layer.gamma.array() * inv_std.array() / n;
  grad_in.data = grad_in.data.array().rowwise() * scale.transpose();
}

}  // namespace

// ---------------------------------------------------------------------------
// Model forward/backward
// ---------------------------------------------------------------------------

namespace {

void check_input(const ConvAutoencoder& model, const Tensor3& input, bool train) {
  if (input.batch < 1 || input.data.rows() != input.batch * input.length ||
      input.data.cols() != input.channels) {
    throw ShapeError("malformed input tensor");
  }
  if (input.channels != model.input_channels()) {
    throw ShapeError("input has " + std::to_string(input.channels) +
                     " channels, model expects " +
                     std::to_string(model.input_channels()));
  }
  if (model.expected_input_length() > 0 &&
      input.length != model.expected_input_length()) {
    throw ShapeError("input length " + std::to_string(input.length) +
                     " does not match model input length " +
                     std::to_string(model.expected_input_length()));
  }
  if (train && input.batch < 2) {
    throw ShapeError("training forward needs batch >= 2 for batch-norm statistics");
  }
  if (!input.data.allFinite()) {
    throw NumericError("input tensor contains non-finite values");
  }
}

}  // namespace

Tensor3 ConvAutoencoder::infer(const Tensor3& input) const {
  check_input(*this, input, false);
  Tensor3 x = input;
  for (const Layer& layer : layers_) {
    switch (layer.spec.kind) {
      case LayerKind::Conv1d: x = conv1d_forward(layer, x); break;
      case LayerKind::Conv1dTranspose: x = tconv1d_forward(layer, x); break;
      case LayerKind::BatchNorm: x = batchnorm_infer(layer, x); break;
    }
    if (layer.spec.activation == Activation::Relu) apply_relu(x);
  }
  return x;
}

Tensor3 ConvAutoencoder::forward_train(const Tensor3& input, ForwardCache& cache) {
  check_input(*this, input, true);
  cache.inputs.assign(layers_.size(), Tensor3{});
  cache.pre_activations.assign(layers_.size(), Tensor3{});
  cache.bn_normalized.assign(layers_.size(), Eigen::MatrixXd{});
  cache.bn_inv_std.assign(layers_.size(), Eigen::VectorXd{});

  Tensor3 x = input;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Layer& layer = layers_[l];
    cache.inputs[l] = x;
    switch (layer.spec.kind) {
      case LayerKind::Conv1d: x = conv1d_forward(layer, x); break;
      case LayerKind::Conv1dTranspose: x = tconv1d_forward(layer, x); break;
      case LayerKind::BatchNorm:
        x = batchnorm_forward_train(layer, x, cache.bn_normalized[l],
                                    cache.bn_inv_std[l]);
        break;
    }
    cache.pre_activations[l] = x;
    if (layer.spec.activation == Activation::Relu) apply_relu(x);
    if (!x.data.allFinite()) {
      throw NumericError("non-finite activations after layer " + std::to_string(l));
    }
  }
  cache.valid = true;
  return x;
}

Eigen::VectorXd ConvAutoencoder::backward(const ForwardCache& cache,
                                          const Tensor3& grad_output,
                                          Tensor3* grad_input) const {
  if (!cache.valid || cache.inputs.size() != layers_.size()) {
    throw StateError("backward requires a training-mode forward pass first");
  }
  const Tensor3& last = cache.pre_activations.back();
  if (grad_output.batch != last.batch || grad_output.length != last.length ||
      grad_output.channels != last.channels) {
    throw ShapeError("grad_output shape does not match the forward output");
  }

  Eigen::VectorXd flat(trainable_param_count());
  Index cursor = flat.size();
  Tensor3 grad = grad_output;

  for (std::size_t l = layers_.size(); l-- > 0;) {
    const Layer& layer = layers_[l];
    if (layer.spec.activation == Activation::Relu) {
      grad.data = (cache.pre_activations[l].data.array() > 0.0)
                      .select(grad.data.array(), 0.0);
    }
    Tensor3 grad_in;
    if (layer.spec.kind == LayerKind::BatchNorm) {
      Eigen::VectorXd grad_gamma, grad_beta;
      batchnorm_backward(layer, cache.bn_normalized[l], cache.bn_inv_std[l], grad,
                         grad_gamma, grad_beta, grad_in);
      cursor -= grad_beta.size();
      flat.segment(cursor, grad_beta.size()) = grad_beta;
      cursor -= grad_gamma.size();
      flat.segment(cursor, grad_gamma.size()) = grad_gamma;
    } else {
      Eigen::MatrixXd grad_weight;
      Eigen::VectorXd grad_bias;
      if (layer.spec.kind == LayerKind::Conv1d) {
        conv1d_backward(layer, cache.inputs[l], grad, grad_weight, grad_bias, grad_in);
      } else {
        tconv1d_backward(layer, cache.inputs[l], grad, grad_weight, grad_bias, grad_in);
      }
      cursor -= grad_bias.size();
      flat.segment(cursor, grad_bias.size()) = grad_bias;
      cursor -= grad_weight.size();
      flat.segment(cursor, grad_weight.size()) =
          Eigen::Map<const Eigen::VectorXd>(grad_weight.data(), grad_weight.size());
    }
    grad = std::move(grad_in);
  }
  if (grad_input != nullptr) *grad_input = std::move(grad);
  return flat;
}

// ---------------------------------------------------------------------------
// Parameter flattening
// ---------------------------------------------------------------------------

Index ConvAutoencoder::trainable_param_count() const {
  Index n = 0;
  for (const Layer& layer : layers_) {
    if (layer.spec.kind == LayerKind::BatchNorm) {
      n += 2 * layer.spec.out_channels;
    } else {
      n += layer.weight.size() + layer.bias.size();
    }
  }
  return n;
}

Eigen::VectorXd ConvAutoencoder::trainable_parameters() const {
  Eigen::VectorXd flat(trainable_param_count());
  Index cursor = 0;
  for (const Layer& layer : layers_) {
    if (layer.spec.kind == LayerKind::BatchNorm) {
      flat.segment(cursor, layer.gamma.size()) = layer.gamma;
      cursor += layer.gamma.size();
      flat.segment(cursor, layer.beta.size()) = layer.beta;
      cursor += layer.beta.size();
    } else {
      flat.segment(cursor, layer.weight.size()) =
          Eigen::Map<const Eigen::VectorXd>(layer.weight.data(), layer.weight.size());
      cursor += layer.weight.size();
      flat.segment(cursor, layer.bias.size()) = layer.bias;
      cursor += layer.bias.size();
    }
  }
  return flat;
}

void ConvAutoencoder::set_trainable_parameters(const Eigen::VectorXd& flat) {
  if (flat.size() != trainable_param_count()) {
    throw ShapeError("parameter vector has wrong size");
  }
  Index cursor = 0;
  for (Layer& layer : layers_) {
    if (layer.spec.kind == LayerKind::BatchNorm) {
      layer.gamma = flat.segment(cursor, layer.gamma.size());
      cursor += layer.gamma.size();
      layer.beta = flat.segment(cursor, layer.beta.size());
      cursor += layer.beta.size();
    } else {
      Eigen::Map<Eigen::VectorXd>(layer.weight.data(), layer.weight.size()) =
          flat.segment(cursor, layer.weight.size());
      cursor += layer.weight.size();
      layer.bias = flat.segment(cursor, layer.bias.size());
      cursor += layer.bias.size();
    }
  }
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

double mse_loss(const Tensor3& output, const Tensor3& target) {
  if (output.batch != target.batch || output.length != target.length ||
      output.channels != target.channels) {
    throw ShapeError("mse_loss: shape mismatch");
  }
  return (output.data - target.data).squaredNorm() /
         static_cast<double>(output.data.size());
}

Tensor3 mse_loss_grad(const Tensor3& output, const Tensor3& target) {
  if (output.batch != target.batch || output.length != target.length ||
      output.channels != target.channels) {
    throw ShapeError("mse_loss_grad: shape mismatch");
  }
  Tensor3 grad = output;
  grad.data = 2.0 * (output.data - target.data) /
              static_cast<double>(output.data.size());
  return grad;
}

// ---------------------------------------------------------------------------
// Windows
// ---------------------------------------------------------------------------

NormalizationConstants fit_normalization(Eigen::Ref<const Eigen::VectorXd> consumption) {
  if (consumption.size() < 2) {
    throw InsufficientDataError("normalization needs at least 2 values");
  }
  NormalizationConstants norm;
  norm.mean = consumption.mean();
  norm.std = std::sqrt((consumption.array() - norm.mean).square().sum() /
                       static_cast<double>(consumption.size() - 1));
  if (norm.std == 0.0) {
    throw DegenerateDistributionError(
        "training consumption has zero variance; cannot standardize");
  }
  return norm;
}

WindowSet make_windows(const ingest::FeatureFrame& frame, Index length,
                       Index stride, NormalizationConstants norm) {
  if (norm.std == 0.0 || !std::isfinite(norm.std)) {
    throw DegenerateDistributionError(
        "window standardization needs a nonzero, finite training std");
  }
  const Index n = frame.rows();
  if (n < length) {
    throw InsufficientDataError("frame has " + std::to_string(n) +
                                " rows, need at least " + std::to_string(length));
  }
  const Index count = (n - length) / stride + 1;
  WindowSet set;
  set.normalization = norm;
  set.windows = Tensor3::zeros(count, length, 1);
  set.end_timestamps.resize(static_cast<std::size_t>(count));
  set.end_rows.resize(static_cast<std::size_t>(count));
  for (Index w = 0; w < count; ++w) {
    const Index start = w * stride;
    set.windows.data.col(0).segment(w * length, length) =
        (frame.consumption.segment(start, length).array() - norm.mean) / norm.std;
    const Index end_row = start + length - 1;
    set.end_rows[static_cast<std::size_t>(w)] = end_row;
    set.end_timestamps[static_cast<std::size_t>(w)] =
        frame.timestamps[static_cast<std::size_t>(end_row)];
  }
  return set;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace {

Tensor3 gather_windows(const Tensor3& windows, std::span<const Index> ids) {
  Tensor3 batch = Tensor3::zeros(static_cast<Index>(ids.size()), windows.length,
                                 windows.channels);
  for (std::size_t k = 0; k < ids.size(); ++k) {
    batch.data.middleRows(static_cast<Index>(k) * windows.length, windows.length) =
        windows.data.middleRows(ids[k] * windows.length, windows.length);
  }
  return batch;
}

double evaluate_loss(const ConvAutoencoder& model, const Tensor3& windows,
                     Index first, Index count) {
  if (count == 0) return std::numeric_limits<double>::quiet_NaN();
  Tensor3 slice;
  slice.batch = count;
  slice.length = windows.length;
  slice.channels = windows.channels;
  slice.data = windows.data.middleRows(first * windows.length, count * windows.length);
  const Tensor3 recon = model.infer(slice);
  return mse_loss(recon, slice);
}

}  // namespace

TrainReport train(ConvAutoencoder& model, const WindowSet& windows,
                  const TrainConfig& config) {
  const Index n = windows.windows.batch;
  if (config.batch_size < 1 || config.epochs < 1) {
    throw ContractError("train: epochs and batch_size must be positive");
  }
  if (n < 2 * config.batch_size) {
    throw InsufficientDataError("train needs at least 2*batch_size windows, got " +
                                std::to_string(n));
  }
  const Index n_val = static_cast<Index>(
      std::floor(config.validation_fraction * static_cast<double>(n)));
  const Index n_train = n - n_val;

  model.init_weights(config.seed);
  model.normalization = windows.normalization;

  Rng shuffle_rng(config.seed ^ 0x5DEECE66Dull);
  std::vector<Index> order(static_cast<std::size_t>(n_train));
  std::iota(order.begin(), order.end(), Index{0});

  // Adam state.
  const double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  Eigen::VectorXd m = Eigen::VectorXd::Zero(model.trainable_param_count());
  Eigen::VectorXd v = Eigen::VectorXd::Zero(model.trainable_param_count());
  long step = 0;

  TrainReport report;
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<Layer> best_layers = model.layers();
  Index best_epoch = 0;
  Index epochs_since_best = 0;

  ForwardCache cache;
  for (Index epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double epoch_loss = 0.0;
    for (Index start = 0; start < n_train; start += config.batch_size) {
      const Index batch_n = std::min(config.batch_size, n_train - start);
      if (batch_n < 2) break;  // a lone trailing window cannot feed batch norm
      Tensor3 batch = gather_windows(
          windows.windows,
          std::span<const Index>(order.data() + start,
                                 static_cast<std::size_t>(batch_n)));
      Tensor3 recon;
      try {
        recon = model.forward_train(batch, cache);
      } catch (const NumericError&) {
        throw DivergedTrainingError(
            "training produced non-finite activations at epoch " +
                std::to_string(epoch + 1),
            static_cast<long>(epoch + 1));
      }
      const double loss = mse_loss(recon, batch);
      if (!std::isfinite(loss)) {
        throw DivergedTrainingError(
            "training loss became non-finite at epoch " + std::to_string(epoch + 1),
            static_cast<long>(epoch + 1));
      }
      epoch_loss += loss * static_cast<double>(batch_n);

      const Eigen::VectorXd grad = model.backward(cache, mse_loss_grad(recon, batch));
      step += 1;
      m = beta1 * m + (1.0 - beta1) * grad;
      v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad);
      const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
      Eigen::VectorXd params = model.trainable_parameters();
      params.array() -= config.learning_rate * (m.array() / bc1) /
                        ((v.array() / bc2).sqrt() + adam_eps);
      model.set_trainable_parameters(params);
    }
    epoch_loss /= static_cast<double>(n_train);
    report.train_loss.push_back(epoch_loss);

    // Validation on the held-out tail; falls back to the training windows
    // when the split is empty.
    const double val_loss =
        n_val > 0 ? evaluate_loss(model, windows.windows, n_train, n_val)
                  : evaluate_loss(model, windows.windows, 0, n_train);
    report.val_loss.push_back(val_loss);
    if (!std::isfinite(val_loss)) {
      throw DivergedTrainingError(
          "validation loss became non-finite at epoch " + std::to_string(epoch + 1),
          static_cast<long>(epoch + 1));
    }

    if (val_loss < best_val) {
      best_val = val_loss;
      best_layers = model.layers();
      best_epoch = epoch;
      epochs_since_best = 0;
    } else {
      epochs_since_best += 1;
      if (config.patience > 0 && epochs_since_best >= config.patience) {
        break;
      }
    }
  }

  model.mutable_layers() = best_layers;
  report.epochs_run = static_cast<Index>(report.train_loss.size());
  report.best_epoch = best_epoch;
  return report;
}

// ---------------------------------------------------------------------------
// Model file
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'M', 'S', 'E', 'N', 'T', 'N', 'N', '1'};
constexpr std::uint32_t kFormatVersion = 1;

std::uint64_t fnv1a64(const char* data, std::size_t size) {
  std::uint64_t hash = 14695981039346656037ull;
  for (std::size_t i = 0; i < size; ++i) {
    hash ^= static_cast<unsigned char>(data[i]);
    hash *= 1099511628211ull;
  }
  return hash;
}

template <typename T>
void put(std::string& buf, const T& value) {
  static_assert(std::is_trivially_copyable_v<T>);
  const char* p = reinterpret_cast<const char*>(&value);
  buf.append(p, sizeof(T));
}

void put_vector(std::string& buf, const Eigen::VectorXd& v) {
  buf.append(reinterpret_cast<const char*>(v.data()),
             static_cast<std::size_t>(v.size()) * sizeof(double));
}

void put_matrix(std::string& buf, const Eigen::MatrixXd& m) {
  buf.append(reinterpret_cast<const char*>(m.data()),
             static_cast<std::size_t>(m.size()) * sizeof(double));
}

class Reader {
 public:
  Reader(const std::string& buf, const std::filesystem::path& path)
      : buf_(buf), path_(path) {}

  template <typename T>
  T get() {
    static_assert(std::is_trivially_copyable_v<T>);
    if (pos_ + sizeof(T) > buf_.size()) {
      throw CorruptModelError("truncated model file: " + path_.string());
    }
    T value;
    std::memcpy(&value, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  void get_vector(Eigen::VectorXd& v, Index n) {
    const std::size_t bytes = static_cast<std::size_t>(n) * sizeof(double);
    if (pos_ + bytes > buf_.size()) {
      throw CorruptModelError("truncated model file: " + path_.string());
    }
    v.resize(n);
    std::memcpy(v.data(), buf_.data() + pos_, bytes);
    pos_ += bytes;
  }

  void get_matrix(Eigen::MatrixXd& m, Index rows, Index cols) {
    const std::size_t bytes = static_cast<std::size_t>(rows * cols) * sizeof(double);
    if (pos_ + bytes > buf_.size()) {
      throw CorruptModelError("truncated model file: " + path_.string());
    }
    m.resize(rows, cols);
    std::memcpy(m.data(), buf_.data() + pos_, bytes);
    pos_ += bytes;
  }

  std::size_t pos() const { return pos_; }

 private:
  const std::string& buf_;
  const std::filesystem::path& path_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_model(const ConvAutoencoder& model, const std::filesystem::path& path) {
  std::string buf;
  buf.append(kMagic, sizeof(kMagic));
  put(buf, kFormatVersion);
  put(buf, static_cast<std::uint32_t>(model.layers().size()));
  for (const Layer& layer : model.layers()) {
    put(buf, static_cast<std::uint32_t>(layer.spec.kind));
    put(buf, static_cast<std::uint32_t>(layer.spec.activation));
    put(buf, static_cast<std::int64_t>(layer.spec.in_channels));
    put(buf, static_cast<std::int64_t>(layer.spec.out_channels));
    put(buf, static_cast<std::int64_t>(layer.spec.kernel));
    put(buf, static_cast<std::int64_t>(layer.spec.stride));
  }
  put(buf, static_cast<std::int64_t>(model.expected_input_length()));
  put(buf, model.normalization.mean);
  put(buf, model.normalization.std);
  for (const Layer& layer : model.layers()) {
    if (layer.spec.kind == LayerKind::BatchNorm) {
      put_vector(buf, layer.gamma);
      put_vector(buf, layer.beta);
      put_vector(buf, layer.running_mean);
      put_vector(buf, layer.running_var);
    } else {
      put_matrix(buf, layer.weight);
      put_vector(buf, layer.bias);
    }
  }
  put(buf, fnv1a64(buf.data(), buf.size()));

  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError("cannot write model file: " + path.string());
  }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) {
    throw IoError("model write failed: " + path.string());
  }
}

ConvAutoencoder load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open model file: " + path.string());
  }
  std::string buf((std::istreambuf_iterator<char>(in)),
                  std::istreambuf_iterator<char>());

  if (buf.size() < sizeof(kMagic) + sizeof(std::uint64_t) ||
      std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0) {
    throw CorruptModelError("not a model file: " + path.string());
  }
  std::uint64_t stored_checksum;
  std::memcpy(&stored_checksum, buf.data() + buf.size() - sizeof(std::uint64_t),
              sizeof(std::uint64_t));
  if (fnv1a64(buf.data(), buf.size() - sizeof(std::uint64_t)) != stored_checksum) {
    throw CorruptModelError("checksum mismatch: " + path.string());
  }

  Reader reader(buf, path);
  char magic[8];
  for (char& c : magic) c = reader.get<char>();
  const std::uint32_t version = reader.get<std::uint32_t>();
  if (version != kFormatVersion) {
    throw CorruptModelError("unsupported model format version " +
                            std::to_string(version) + ": " + path.string());
  }
  const std::uint32_t n_layers = reader.get<std::uint32_t>();
  std::vector<LayerSpec> specs;
  specs.reserve(n_layers);
  for (std::uint32_t i = 0; i < n_layers; ++i) {
    LayerSpec spec;
    const std::uint32_t kind = reader.get<std::uint32_t>();
    const std::uint32_t activation = reader.get<std::uint32_t>();
    if (kind > 2 || activation > 1) {
      throw CorruptModelError("invalid layer descriptor: " + path.string());
    }
    spec.kind = static_cast<LayerKind>(kind);
    spec.activation = static_cast<Activation>(activation);
    spec.in_channels = reader.get<std::int64_t>();
    spec.out_channels = reader.get<std::int64_t>();
    spec.kernel = reader.get<std::int64_t>();
    spec.stride = reader.get<std::int64_t>();
    if (spec.in_channels < 1 || spec.out_channels < 1 || spec.stride < 1 ||
        (spec.kind != LayerKind::BatchNorm && spec.kernel < 1)) {
      throw CorruptModelError("invalid layer dimensions: " + path.string());
    }
    specs.push_back(spec);
  }

  ConvAutoencoder model(std::move(specs));
  model.set_expected_input_length(reader.get<std::int64_t>());
  model.normalization.mean = reader.get<double>();
  model.normalization.std = reader.get<double>();
  for (Layer& layer : model.mutable_layers()) {
    if (layer.spec.kind == LayerKind::BatchNorm) {
      reader.get_vector(layer.gamma, layer.spec.out_channels);
      reader.get_vector(layer.beta, layer.spec.out_channels);
      reader.get_vector(layer.running_mean, layer.spec.out_channels);
      reader.get_vector(layer.running_var, layer.spec.out_channels);
    } else {
      reader.get_matrix(layer.weight, layer.spec.kernel * layer.spec.in_channels,
                        layer.spec.out_channels);
      reader.get_vector(layer.bias, layer.spec.out_channels);
    }
  }
  if (reader.pos() != buf.size() - sizeof(std::uint64_t)) {
    throw CorruptModelError("trailing bytes in model file: " + path.string());
  }
  return model;
}

}  // namespace metersentry::nn
