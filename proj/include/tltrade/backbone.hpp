#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tltrade/tensor.hpp"

namespace tlt {

enum class LayerKind : std::uint8_t { conv = 0, dense = 1, logits = 2 };
enum class ActivationFn { relu, identity, softmax };
// Pretraining provenance of a backbone (ImageNet-like, Places-like, other).
enum class SourceTag { IN, P2, other };
enum class Initializer { he_uniform, lecun_uniform };
enum class SelectionMode { freeze_prefix, extract_suffix };

std::string_view to_string(LayerKind kind);
std::string_view to_string(SourceTag tag);
std::string_view to_string(Initializer init);
SourceTag parse_source_tag(std::string_view text);
Initializer parse_initializer(std::string_view text);

struct LayerSpec {
  LayerKind kind = LayerKind::dense;
  std::size_t outputs = 0;  // channels for conv, width for dense/logits
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 0;
  bool max_pool = false;  // 2x2 stride-2 max pool after the activation (conv only)
  ActivationFn activation = ActivationFn::relu;
};

struct BackboneSpec {
  std::string id;
  Shape3 input;
  SourceTag source = SourceTag::other;
  std::vector<LayerSpec> layers;
};

// conv 3x3/2 (8) -> conv 3x3/2 (16) -> dense 32 -> logits; about 10k
// parameters for a 14x14x3 input.
BackboneSpec toy_backbone_spec(std::size_t n_classes = 10, Shape3 input = {14, 14, 3});
// 13 conv + 3 dense weight layers, 224x224x3 input.
BackboneSpec vgg16_spec(std::size_t n_classes = 1000);

// Number of layers addressed by a fraction of the network.
//   freeze_prefix:  round(fraction * total), counted from the input.
//   extract_suffix: floor(fraction * (total - 1)), counted backwards from the
//                   last layer before the logits.
// Both are clamped to at least 1. Throws ConfigError unless 0 < fraction <= 1.
std::size_t layers_for_fraction(std::size_t total_weight_layers, SelectionMode mode, double fraction);

struct LayerSelection {
  SelectionMode mode = SelectionMode::extract_suffix;
  double fraction = 1.0;
  std::size_t resolved_count = 0;
};

LayerSelection make_selection(std::size_t total_weight_layers, SelectionMode mode, double fraction);

template <typename Real>
struct WeightLayer {
  LayerSpec spec;
  Shape3 input;       // shape consumed
  Shape3 activation;  // shape after the activation function ({1,1,n} for dense)
  Shape3 output;      // shape handed to the next layer (after pooling)
  std::vector<Real> weights;  // conv: [out][k][k][in], dense/logits: [out][in]
  std::vector<Real> bias;
  bool frozen = false;

  std::vector<std::uint32_t> weight_dims() const;
  std::size_t fan_in() const;
};

template <typename Real>
struct Gradients {
  std::vector<std::vector<Real>> weights;
  std::vector<std::vector<Real>> bias;
};

template <typename Real>
struct ForwardTrace {
  std::vector<BasicTensor<Real>> inputs;       // input of each layer
  std::vector<BasicTensor<Real>> activations;  // post-activation, pre-pool
  std::vector<std::vector<std::size_t>> pool_argmax;
  std::vector<Real> logits;
};

template <typename Real>
class BasicBackbone {
 public:
  BasicBackbone() = default;
  explicit BasicBackbone(const BackboneSpec& spec, std::uint64_t seed = 0,
                         Initializer init = Initializer::he_uniform);

  template <typename Other>
  explicit BasicBackbone(const BasicBackbone<Other>& other)
      : id_(other.id()), source_(other.source_tag()), input_(other.input_shape()) {
    for (const auto& l : other.layers()) {
      WeightLayer<Real> copy{l.spec, l.input, l.activation, l.output,
                             std::vector<Real>(l.weights.begin(), l.weights.end()),
                             std::vector<Real>(l.bias.begin(), l.bias.end()), l.frozen};
      layers_.push_back(std::move(copy));
    }
  }

  const std::string& id() const { return id_; }
  void set_id(std::string id) { id_ = std::move(id); }
  SourceTag source_tag() const { return source_; }
  void set_source_tag(SourceTag tag) { source_ = tag; }
  Shape3 input_shape() const { return input_; }
  std::size_t layer_count() const { return layers_.size(); }
  std::size_t n_outputs() const { return layers_.back().spec.outputs; }
  std::size_t parameter_count() const;

  const std::vector<WeightLayer<Real>>& layers() const { return layers_; }
  std::vector<WeightLayer<Real>>& layers() { return layers_; }

  // Returns raw logits; the softmax lives in the loss.
  std::vector<Real> forward(const Tensor& image) const;
  ForwardTrace<Real> trace(const Tensor& image) const;

  // Activations of the `count` layers preceding the logits, deepest first.
  std::vector<BasicTensor<Real>> collect(const Tensor& image, std::size_t count) const;

  // Softmax cross-entropy of one sample. Gradients of trainable layers are
  // added into `grads`; frozen layers are never touched.
  Real loss_and_gradient(const Tensor& image, std::size_t label, Gradients<Real>& grads) const;
  Real loss(const Tensor& image, std::size_t label) const;
  Gradients<Real> zero_gradients() const;

  // Resamples one layer's weights (zero-mean uniform, fan-in scaled) and zeroes its bias.
  void initialize_layer(std::size_t index, std::uint64_t seed, Initializer init);
  // Rebuilds the logits layer with a new output width.
  void resize_logits(std::size_t n_classes);

 private:
  void check_input(const Tensor& image) const;

  std::string id_;
  SourceTag source_ = SourceTag::other;
  Shape3 input_;
  std::vector<WeightLayer<Real>> layers_;
};

using LayeredBackbone = BasicBackbone<float>;

template <typename Real>
BasicBackbone<Real> freeze_prefix(BasicBackbone<Real> b, double fraction);

// Resamples the last two weight layers (the logits layer included) and
// resizes the logits to n_classes. Earlier layers are left untouched.
template <typename Real>
BasicBackbone<Real> reinit_last_two(BasicBackbone<Real> b, std::size_t n_classes, std::uint64_t seed,
                                    Initializer init = Initializer::he_uniform);

// One forward pass per image; result[sample][k] is the k-th selected layer,
// deepest first.
std::vector<std::vector<Tensor>> forward_collect(const LayeredBackbone& b,
                                                 std::span<const Tensor> batch,
                                                 const LayerSelection& selection);

std::uint64_t export_weights(const LayeredBackbone& b, const std::filesystem::path& container);
// Replaces every parameter from the container and appends its checksum to the
// id ("<id>@<hex>"). Throws ImportError naming the first mismatching layer.
LayeredBackbone import_weights(LayeredBackbone b, const std::filesystem::path& container);

}  // namespace tlt
