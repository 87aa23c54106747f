#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "empssl/tensor.hpp"

namespace empssl {

enum class LayerKind : std::uint8_t {
  Linear,
  Conv2d,
  BatchNorm,
  Relu,
  MaxPool,
  GlobalAvgPool,
  L2Normalize,
};

const char* layer_kind_name(LayerKind kind);

/// Declarative layer description; shape parameters are validated when a
/// Network is composed.
struct LayerSpec {
  LayerKind kind = LayerKind::Relu;
  std::size_t out_dim = 0;       // linear
  std::size_t out_channels = 0;  // conv2d
  std::size_t kernel = 0;        // conv2d / maxpool
  std::size_t stride = 1;        // conv2d / maxpool

  static LayerSpec linear(std::size_t out_dim);
  static LayerSpec conv2d(std::size_t out_channels, std::size_t kernel, std::size_t stride);
  static LayerSpec batchnorm();
  static LayerSpec relu();
  static LayerSpec maxpool(std::size_t kernel, std::size_t stride);
  static LayerSpec global_avg_pool();
  static LayerSpec l2_normalize();
};

/// Per-sample activation shape, e.g. {3, 32, 32} or {128}.
struct Shape {
  std::vector<std::size_t> dims;
  bool operator==(const Shape&) const = default;
  std::size_t count() const;
  std::string str() const;
};

/// One parameter block: the unit LARS adapts and the checkpoint stores.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
  bool decay = true;  // false for biases and batchnorm scale/shift
};

enum class Precision : std::uint8_t { Single, Double };
enum class Mode : std::uint8_t { Train, Eval };

/// What a layer saves between forward and backward. Slots are reused across
/// layer kinds: bn fills ch_mean/ch_var, maxpool fills argmax, l2_normalize
/// fills row_norm.
struct LayerCache {
  Tensor input;
  std::vector<double> ch_mean;
  std::vector<double> ch_var;
  std::vector<double> row_norm;
  std::vector<std::uint32_t> argmax;
  bool train_mode = false;
};

class Network;

struct ForwardCache {
  const Network* owner = nullptr;
  std::vector<std::size_t> input_dims;
  std::vector<LayerCache> layers;
};

namespace detail {
class Layer;
}

/// A fixed stack of layers with analytic reverse-mode gradients. Train-mode
/// forward/backward pairs mutate batchnorm statistics and parameter grads, so
/// a Network is single-writer; clone() for concurrent eval-mode use.
class Network {
 public:
  Network() = default;
  Network(Shape input_shape, std::vector<LayerSpec> specs, Precision precision,
          std::uint64_t init_seed);
  Network(Network&&) noexcept;
  Network& operator=(Network&&) noexcept;
  ~Network();

  Network clone() const;

  Mode mode() const { return mode_; }
  void set_mode(Mode m) { mode_ = m; }
  Precision precision() const { return precision_; }

  /// Runs the stack. cache may be null when no backward will follow.
  /// update_stats=false freezes batchnorm running statistics for this pass
  /// (train-mode normalization still uses batch statistics).
  /// Throws ShapeMismatch / NonFiniteActivation (with the layer index).
  Tensor forward(const Tensor& batch, ForwardCache* cache = nullptr,
                 bool update_stats = true);

  /// forward() that additionally copies the activation entering layer
  /// `tap_layer` into *tap (the embedding tap for the encoder).
  Tensor forward_tapped(const Tensor& batch, std::size_t tap_layer, Tensor* tap,
                        bool update_stats = true);

  /// Reverse pass over a cache produced by this network's forward. Returns
  /// the gradient with respect to the input batch and accumulates parameter
  /// gradients (call zero_grads() to reset them).
  Tensor backward(const ForwardCache& cache, const Tensor& grad_output);

  void zero_grads();
  std::vector<Param*> params();
  std::vector<const Param*> params() const;
  std::size_t param_count() const;

  /// All persistent tensors (parameters + batchnorm running stats), named
  /// "layers.<i>.<slot>", in checkpoint order.
  std::vector<std::pair<std::string, Tensor*>> state_tensors();
  std::vector<std::pair<std::string, const Tensor*>> state_tensors() const;

  const Shape& input_shape() const { return input_shape_; }
  const Shape& output_shape() const { return output_shape_; }
  std::size_t layer_count() const { return specs_.size(); }
  const std::vector<LayerSpec>& specs() const { return specs_; }

 private:
  Shape input_shape_;
  Shape output_shape_;
  std::vector<LayerSpec> specs_;
  std::vector<std::unique_ptr<detail::Layer>> layers_;
  Precision precision_ = Precision::Double;
  Mode mode_ = Mode::Train;
};

}  // namespace empssl
