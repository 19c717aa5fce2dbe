#include "tltrade/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "tltrade/container.hpp"
#include "tltrade/errors.hpp"
#include "tltrade/rng.hpp"

namespace tlt {

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv: return "conv";
    case LayerKind::dense: return "dense";
    case LayerKind::logits: return "logits";
  }
  return "?";
}

std::string_view to_string(SourceTag tag) {
  switch (tag) {
    case SourceTag::IN: return "IN";
    case SourceTag::P2: return "P2";
    case SourceTag::other: return "other";
  }
  return "other";
}

std::string_view to_string(Initializer init) {
  return init == Initializer::he_uniform ? "he_uniform" : "lecun_uniform";
}

SourceTag parse_source_tag(std::string_view text) {
  if (text == "IN") return SourceTag::IN;
  if (text == "P2") return SourceTag::P2;
  return SourceTag::other;
}

Initializer parse_initializer(std::string_view text) {
  if (text == "he_uniform") return Initializer::he_uniform;
  if (text == "lecun_uniform") return Initializer::lecun_uniform;
  throw ConfigError(fmt::format("unknown initializer '{}'", text));
}

BackboneSpec toy_backbone_spec(std::size_t n_classes, Shape3 input) {
  BackboneSpec spec;
  spec.id = "toy";
  spec.input = input;
  spec.layers = {
      {LayerKind::conv, 8, 3, 2, 1, false, ActivationFn::relu},
      {LayerKind::conv, 16, 3, 2, 1, false, ActivationFn::relu},
      {LayerKind::dense, 32, 0, 1, 0, false, ActivationFn::relu},
      {LayerKind::logits, n_classes, 0, 1, 0, false, ActivationFn::softmax},
  };
  return spec;
}

BackboneSpec vgg16_spec(std::size_t n_classes) {
  BackboneSpec spec;
  spec.id = "vgg16";
  spec.input = {224, 224, 3};
  const std::size_t blocks[5][2] = {{64, 2}, {128, 2}, {256, 3}, {512, 3}, {512, 3}};
  for (const auto& [channels, repeats] : blocks) {
    for (std::size_t r = 0; r < repeats; ++r) {
      spec.layers.push_back(
          {LayerKind::conv, channels, 3, 1, 1, r + 1 == repeats, ActivationFn::relu});
    }
  }
  spec.layers.push_back({LayerKind::dense, 4096, 0, 1, 0, false, ActivationFn::relu});
  spec.layers.push_back({LayerKind::dense, 4096, 0, 1, 0, false, ActivationFn::relu});
  spec.layers.push_back({LayerKind::logits, n_classes, 0, 1, 0, false, ActivationFn::softmax});
  return spec;
}

std::size_t layers_for_fraction(std::size_t total_weight_layers, SelectionMode mode, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ConfigError(fmt::format("layer fraction {} is outside (0, 1]", fraction));
  }
  if (total_weight_layers < 2) throw ConfigError("a backbone needs at least two weight layers");
  const double total = static_cast<double>(total_weight_layers);
  std::size_t count = 0;
  if (mode == SelectionMode::freeze_prefix) {
    count = static_cast<std::size_t>(std::llround(fraction * total));
  } else if (fraction == 1.0) {
    count = total_weight_layers - 1;
  } else {
    // The epsilon keeps exact products such as 0.2 * 15 from flooring down.
    count = static_cast<std::size_t>(std::floor(fraction * (total - 1.0) + 1e-9));
  }
  return std::max<std::size_t>(1, count);
}

LayerSelection make_selection(std::size_t total_weight_layers, SelectionMode mode, double fraction) {
  return {mode, fraction, layers_for_fraction(total_weight_layers, mode, fraction)};
}

template <typename Real>
std::vector<std::uint32_t> WeightLayer<Real>::weight_dims() const {
  const auto u = [](std::size_t v) { return static_cast<std::uint32_t>(v); };
  if (spec.kind == LayerKind::conv) {
    return {u(spec.outputs), u(spec.kernel), u(spec.kernel), u(input.channels)};
  }
  return {u(spec.outputs), u(input.size())};
}

template <typename Real>
std::size_t WeightLayer<Real>::fan_in() const {
  return spec.kind == LayerKind::conv ? spec.kernel * spec.kernel * input.channels : input.size();
}

namespace {

template <typename Real>
void build_layer_shapes(WeightLayer<Real>& layer, Shape3 input) {
  const LayerSpec& s = layer.spec;
  layer.input = input;
  if (s.outputs == 0) throw ConfigError("layer with zero outputs");
  if (s.kind == LayerKind::conv) {
    if (s.kernel == 0 || s.stride == 0) throw ConfigError("conv layer needs kernel and stride >= 1");
    if (input.height + 2 * s.padding < s.kernel || input.width + 2 * s.padding < s.kernel) {
      throw ConfigError("conv kernel larger than its padded input");
    }
    layer.activation = {(input.height + 2 * s.padding - s.kernel) / s.stride + 1,
                        (input.width + 2 * s.padding - s.kernel) / s.stride + 1, s.outputs};
    layer.output = layer.activation;
    if (s.max_pool) {
      layer.output.height /= 2;
      layer.output.width /= 2;
      if (layer.output.height == 0 || layer.output.width == 0) {
        throw ConfigError("max pooling collapses the activation");
      }
    }
  } else {
    layer.activation = {1, 1, s.outputs};
    layer.output = layer.activation;
  }
  const auto dims = layer.weight_dims();
  std::size_t n = 1;
  for (const auto d : dims) n *= d;
  layer.weights.assign(n, Real(0));
  layer.bias.assign(s.outputs, Real(0));
}

template <typename Real>
void apply_activation(ActivationFn fn, std::vector<Real>& values) {
  if (fn == ActivationFn::relu) {
    for (Real& v : values) v = v > Real(0) ? v : Real(0);
  }
}

template <typename Real>
void conv_forward(const WeightLayer<Real>& layer, const Real* in, Real* out) {
  const Shape3 I = layer.input;
  const Shape3 A = layer.activation;
  const std::size_t k = layer.spec.kernel;
  const auto pad = static_cast<std::ptrdiff_t>(layer.spec.padding);
  for (std::size_t oy = 0; oy < A.height; ++oy) {
    for (std::size_t ox = 0; ox < A.width; ++ox) {
      Real* o = out + (oy * A.width + ox) * A.channels;
      for (std::size_t oc = 0; oc < A.channels; ++oc) o[oc] = layer.bias[oc];
      for (std::size_t ky = 0; ky < k; ++ky) {
        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * layer.spec.stride + ky) - pad;
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(I.height)) continue;
        for (std::size_t kx = 0; kx < k; ++kx) {
          const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * layer.spec.stride + kx) - pad;
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(I.width)) continue;
          const Real* ip = in + (static_cast<std::size_t>(iy) * I.width + static_cast<std::size_t>(ix)) * I.channels;
          for (std::size_t oc = 0; oc < A.channels; ++oc) {
            const Real* w = layer.weights.data() + ((oc * k + ky) * k + kx) * I.channels;
            Real sum = 0;
            for (std::size_t ic = 0; ic < I.channels; ++ic) sum += w[ic] * ip[ic];
            o[oc] += sum;
          }
        }
      }
    }
  }
}

template <typename Real>
void conv_backward(const WeightLayer<Real>& layer, const Real* in, const Real* d_pre, Real* dw,
                   Real* db, Real* d_in) {
  const Shape3 I = layer.input;
  const Shape3 A = layer.activation;
  const std::size_t k = layer.spec.kernel;
  const auto pad = static_cast<std::ptrdiff_t>(layer.spec.padding);
  for (std::size_t oy = 0; oy < A.height; ++oy) {
    for (std::size_t ox = 0; ox < A.width; ++ox) {
      const Real* g = d_pre + (oy * A.width + ox) * A.channels;
      if (db != nullptr) {
        for (std::size_t oc = 0; oc < A.channels; ++oc) db[oc] += g[oc];
      }
      for (std::size_t ky = 0; ky < k; ++ky) {
        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * layer.spec.stride + ky) - pad;
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(I.height)) continue;
        for (std::size_t kx = 0; kx < k; ++kx) {
          const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * layer.spec.stride + kx) - pad;
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(I.width)) continue;
          const std::size_t offset =
              (static_cast<std::size_t>(iy) * I.width + static_cast<std::size_t>(ix)) * I.channels;
          const Real* ip = in + offset;
          for (std::size_t oc = 0; oc < A.channels; ++oc) {
            const Real go = g[oc];
            if (go == Real(0)) continue;
            const std::size_t woff = ((oc * k + ky) * k + kx) * I.channels;
            if (dw != nullptr) {
              for (std::size_t ic = 0; ic < I.channels; ++ic) dw[woff + ic] += go * ip[ic];
            }
            if (d_in != nullptr) {
              const Real* w = layer.weights.data() + woff;
              for (std::size_t ic = 0; ic < I.channels; ++ic) d_in[offset + ic] += go * w[ic];
            }
          }
        }
      }
    }
  }
}

template <typename Real>
void dense_forward(const WeightLayer<Real>& layer, const Real* in, Real* out) {
  const std::size_t n_in = layer.input.size();
  for (std::size_t o = 0; o < layer.spec.outputs; ++o) {
    const Real* w = layer.weights.data() + o * n_in;
    Real sum = layer.bias[o];
    for (std::size_t i = 0; i < n_in; ++i) sum += w[i] * in[i];
    out[o] = sum;
  }
}

template <typename Real>
void dense_backward(const WeightLayer<Real>& layer, const Real* in, const Real* d_pre, Real* dw,
                    Real* db, Real* d_in) {
  const std::size_t n_in = layer.input.size();
  for (std::size_t o = 0; o < layer.spec.outputs; ++o) {
    const Real g = d_pre[o];
    if (g == Real(0)) continue;
    const Real* w = layer.weights.data() + o * n_in;
    if (db != nullptr) db[o] += g;
    if (dw != nullptr) {
      Real* dwo = dw + o * n_in;
      for (std::size_t i = 0; i < n_in; ++i) dwo[i] += g * in[i];
    }
    if (d_in != nullptr) {
      for (std::size_t i = 0; i < n_in; ++i) d_in[i] += g * w[i];
    }
  }
}

}  // namespace

template <typename Real>
BasicBackbone<Real>::BasicBackbone(const BackboneSpec& spec, std::uint64_t seed, Initializer init)
    : id_(spec.id), source_(spec.source), input_(spec.input) {
  if (spec.layers.size() < 3) throw ConfigError("a backbone needs at least three weight layers");
  if (spec.input.size() == 0) throw ConfigError("backbone input shape is empty");
  Shape3 shape = spec.input;
  bool seen_dense = false;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& ls = spec.layers[i];
    const bool last = i + 1 == spec.layers.size();
    if ((ls.kind == LayerKind::logits) != last) {
      throw ConfigError("exactly one logits layer is allowed and it must be last");
    }
    if (ls.kind == LayerKind::conv && seen_dense) {
      throw ConfigError("conv layers must precede dense layers");
    }
    if (ls.activation == ActivationFn::softmax && !last) {
      throw ConfigError("softmax is reserved for the logits layer");
    }
    seen_dense = seen_dense || ls.kind != LayerKind::conv;
    WeightLayer<Real> layer;
    layer.spec = ls;
    build_layer_shapes(layer, shape);
    shape = layer.output;
    layers_.push_back(std::move(layer));
  }
  for (std::size_t i = 0; i < layers_.size(); ++i) initialize_layer(i, derive_seed(seed, i), init);
}

template <typename Real>
std::size_t BasicBackbone<Real>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.weights.size() + l.bias.size();
  return n;
}

template <typename Real>
void BasicBackbone<Real>::initialize_layer(std::size_t index, std::uint64_t seed, Initializer init) {
  WeightLayer<Real>& layer = layers_.at(index);
  const double fan_in = static_cast<double>(layer.fan_in());
  const double limit = std::sqrt((init == Initializer::he_uniform ? 6.0 : 3.0) / fan_in);
  Rng rng(seed);
  for (Real& w : layer.weights) w = static_cast<Real>(rng.uniform(-limit, limit));
  std::fill(layer.bias.begin(), layer.bias.end(), Real(0));
}

template <typename Real>
void BasicBackbone<Real>::resize_logits(std::size_t n_classes) {
  WeightLayer<Real>& logits = layers_.back();
  logits.spec.outputs = n_classes;
  build_layer_shapes(logits, logits.input);
}

template <typename Real>
void BasicBackbone<Real>::check_input(const Tensor& image) const {
  if (image.rank() != 3 || image.shape3() != input_) {
    throw ShapeError(fmt::format("input shape [{}] does not match backbone input {}x{}x{}",
                                 fmt::join(image.shape, "x"), input_.height, input_.width,
                                 input_.channels));
  }
}

template <typename Real>
ForwardTrace<Real> BasicBackbone<Real>::trace(const Tensor& image) const {
  check_input(image);
  ForwardTrace<Real> t;
  t.inputs.reserve(layers_.size());
  t.activations.reserve(layers_.size());
  t.pool_argmax.resize(layers_.size());

  BasicTensor<Real> current(input_);
  std::copy(image.data.begin(), image.data.end(), current.data.begin());
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const WeightLayer<Real>& layer = layers_[i];
    BasicTensor<Real> act = layer.spec.kind == LayerKind::conv
                                ? BasicTensor<Real>(layer.activation)
                                : BasicTensor<Real>(std::vector<std::size_t>{layer.spec.outputs});
    if (layer.spec.kind == LayerKind::conv) {
      conv_forward(layer, current.data.data(), act.data.data());
    } else {
      dense_forward(layer, current.data.data(), act.data.data());
    }
    apply_activation(layer.spec.activation, act.data);

    BasicTensor<Real> next = act;
    if (layer.spec.kind == LayerKind::conv && layer.spec.max_pool) {
      const Shape3 A = layer.activation;
      const Shape3 O = layer.output;
      next = BasicTensor<Real>(O);
      auto& argmax = t.pool_argmax[i];
      argmax.assign(O.size(), 0);
      for (std::size_t y = 0; y < O.height; ++y) {
        for (std::size_t x = 0; x < O.width; ++x) {
          for (std::size_t c = 0; c < O.channels; ++c) {
            std::size_t best = ((2 * y) * A.width + 2 * x) * A.channels + c;
            for (std::size_t dy = 0; dy < 2; ++dy) {
              for (std::size_t dx = 0; dx < 2; ++dx) {
                const std::size_t idx = ((2 * y + dy) * A.width + 2 * x + dx) * A.channels + c;
                if (act.data[idx] > act.data[best]) best = idx;
              }
            }
            const std::size_t o = (y * O.width + x) * O.channels + c;
            argmax[o] = best;
            next.data[o] = act.data[best];
          }
        }
      }
    }
    t.inputs.push_back(std::move(current));
    t.activations.push_back(std::move(act));
    current = std::move(next);
  }
  t.logits = current.data;
  return t;
}

template <typename Real>
std::vector<Real> BasicBackbone<Real>::forward(const Tensor& image) const {
  return trace(image).logits;
}

template <typename Real>
std::vector<BasicTensor<Real>> BasicBackbone<Real>::collect(const Tensor& image,
                                                            std::size_t count) const {
  if (count == 0 || count >= layers_.size()) {
    throw ConfigError(fmt::format("cannot collect {} layers from a {}-layer backbone", count,
                                  layers_.size()));
  }
  ForwardTrace<Real> t = trace(image);
  std::vector<BasicTensor<Real>> out;
  out.reserve(count);
  const std::size_t deepest = layers_.size() - 2;
  for (std::size_t k = 0; k < count; ++k) out.push_back(std::move(t.activations[deepest - k]));
  return out;
}

template <typename Real>
Gradients<Real> BasicBackbone<Real>::zero_gradients() const {
  Gradients<Real> g;
  for (const auto& l : layers_) {
    g.weights.emplace_back(l.weights.size(), Real(0));
    g.bias.emplace_back(l.bias.size(), Real(0));
  }
  return g;
}

template <typename Real>
Real BasicBackbone<Real>::loss(const Tensor& image, std::size_t label) const {
  const std::vector<Real> z = forward(image);
  const Real m = *std::max_element(z.begin(), z.end());
  Real sum = 0;
  for (const Real v : z) sum += std::exp(v - m);
  return m + std::log(sum) - z.at(label);
}

template <typename Real>
Real BasicBackbone<Real>::loss_and_gradient(const Tensor& image, std::size_t label,
                                            Gradients<Real>& grads) const {
  ForwardTrace<Real> t = trace(image);
  const std::vector<Real>& z = t.logits;
  if (label >= z.size()) throw ShapeError("label outside the logits range");
  const Real m = *std::max_element(z.begin(), z.end());
  Real sum = 0;
  for (const Real v : z) sum += std::exp(v - m);
  const Real log_z = m + std::log(sum);
  const Real loss_value = log_z - z[label];

  std::size_t lowest = layers_.size();
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (!layers_[i].frozen) {
      lowest = i;
      break;
    }
  }
  if (lowest == layers_.size()) return loss_value;

  std::vector<Real> delta(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    delta[i] = std::exp(z[i] - log_z) - (i == label ? Real(1) : Real(0));
  }

  for (std::size_t l = layers_.size(); l-- > lowest;) {
    const WeightLayer<Real>& layer = layers_[l];
    if (layer.spec.kind != LayerKind::logits) {
      if (layer.spec.kind == LayerKind::conv && layer.spec.max_pool) {
        std::vector<Real> unpooled(layer.activation.size(), Real(0));
        const auto& argmax = t.pool_argmax[l];
        for (std::size_t j = 0; j < argmax.size(); ++j) unpooled[argmax[j]] += delta[j];
        delta = std::move(unpooled);
      }
      if (layer.spec.activation == ActivationFn::relu) {
        const auto& act = t.activations[l].data;
        for (std::size_t j = 0; j < delta.size(); ++j) {
          if (!(act[j] > Real(0))) delta[j] = Real(0);
        }
      }
    }
    Real* dw = layer.frozen ? nullptr : grads.weights[l].data();
    Real* db = layer.frozen ? nullptr : grads.bias[l].data();
    std::vector<Real> d_in;
    if (l > lowest) d_in.assign(layer.input.size(), Real(0));
    const Real* in = t.inputs[l].data.data();
    if (layer.spec.kind == LayerKind::conv) {
      conv_backward(layer, in, delta.data(), dw, db, d_in.empty() ? nullptr : d_in.data());
    } else {
      dense_backward(layer, in, delta.data(), dw, db, d_in.empty() ? nullptr : d_in.data());
    }
    delta = std::move(d_in);
  }
  return loss_value;
}

template <typename Real>
BasicBackbone<Real> freeze_prefix(BasicBackbone<Real> b, double fraction) {
  const std::size_t n = layers_for_fraction(b.layer_count(), SelectionMode::freeze_prefix, fraction);
  for (std::size_t i = 0; i < b.layer_count(); ++i) b.layers()[i].frozen = i < n;
  return b;
}

template <typename Real>
BasicBackbone<Real> reinit_last_two(BasicBackbone<Real> b, std::size_t n_classes, std::uint64_t seed,
                                    Initializer init) {
  if (n_classes < 2) throw ConfigError("fine-tuning needs at least two classes");
  b.resize_logits(n_classes);
  const std::size_t last = b.layer_count() - 1;
  b.initialize_layer(last - 1, derive_seed(seed, last - 1), init);
  b.initialize_layer(last, derive_seed(seed, last), init);
  return b;
}

template class BasicBackbone<float>;
template class BasicBackbone<double>;
template struct WeightLayer<float>;
template struct WeightLayer<double>;
template BasicBackbone<float> freeze_prefix(BasicBackbone<float>, double);
template BasicBackbone<double> freeze_prefix(BasicBackbone<double>, double);
template BasicBackbone<float> reinit_last_two(BasicBackbone<float>, std::size_t, std::uint64_t, Initializer);
template BasicBackbone<double> reinit_last_two(BasicBackbone<double>, std::size_t, std::uint64_t, Initializer);

std::vector<std::vector<Tensor>> forward_collect(const LayeredBackbone& b,
                                                 std::span<const Tensor> batch,
                                                 const LayerSelection& selection) {
  const std::size_t expected =
      layers_for_fraction(b.layer_count(), SelectionMode::extract_suffix, selection.fraction);
  if (selection.mode != SelectionMode::extract_suffix || selection.resolved_count != expected) {
    throw ConfigError("forward_collect needs a resolved extract_suffix selection");
  }
  std::vector<std::vector<Tensor>> out;
  out.reserve(batch.size());
  for (const Tensor& image : batch) out.push_back(b.collect(image, expected));
  return out;
}

std::uint64_t export_weights(const LayeredBackbone& b, const std::filesystem::path& container) {
  std::vector<ContainerEntry> entries;
  for (const auto& l : b.layers()) {
    entries.push_back({static_cast<EntryKind>(l.spec.kind), l.weight_dims(), l.weights, l.bias});
  }
  return write_container(container, entries);
}

LayeredBackbone import_weights(LayeredBackbone b, const std::filesystem::path& container) {
  const Container c = read_container(container);
  if (c.entries.size() != b.layer_count()) {
    throw ImportError(fmt::format("container holds {} layers, backbone '{}' has {}", c.entries.size(),
                                  b.id(), b.layer_count()));
  }
  for (std::size_t i = 0; i < c.entries.size(); ++i) {
    const ContainerEntry& e = c.entries[i];
    auto& layer = b.layers()[i];
    const auto dims = layer.weight_dims();
    if (e.kind != static_cast<EntryKind>(layer.spec.kind) || e.dims != dims ||
        e.bias.size() != layer.bias.size()) {
      throw ImportError(fmt::format("layer {} ({}): container shape [{}] bias {} does not match [{}] bias {}",
                                    i, to_string(layer.spec.kind), fmt::join(e.dims, "x"),
                                    e.bias.size(), fmt::join(dims, "x"), layer.bias.size()));
    }
  }
  for (std::size_t i = 0; i < c.entries.size(); ++i) {
    b.layers()[i].weights = c.entries[i].weights;
    b.layers()[i].bias = c.entries[i].bias;
  }
  std::string id = b.id();
  if (const auto at = id.find('@'); at != std::string::npos) id.resize(at);
  b.set_id(fmt::format("{}@{:016x}", id, c.checksum));
  return b;
}

}  // namespace tlt
