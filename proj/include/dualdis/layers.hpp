#pragma once

#include <optional>
#include <random>

#include "dualdis/layer_spec.hpp"
#include "dualdis/ops.hpp"

namespace dualdis {

/// How implicit normalization/activation layers are inserted after weight layers.
enum class StackRole {
  encoder,     // every weight layer -> batch-norm -> relu
  decoder,     // every weight layer but the last -> batch-norm -> leaky-relu(0.2)
  classifier,  // every linear layer but the last -> relu
  head,        // single bias-free linear map
};

enum class Mode { train, eval };

/// One concrete layer with its parameters and buffers.
template <class T>
struct Layer {
  LayerSpec spec;
  std::string name;
  Parameter<T> weight;
  Parameter<T> bias;
  Parameter<T> gamma;
  Parameter<T> beta;
  BatchNormState<T> bn;

  Var<T> forward(const Var<T>& x, Mode mode, bool frozen) const {
    Tape<T>& tape = *x.tape();
    auto w = [&](const Parameter<T>& p) { return p ? p.var(tape, frozen) : Var<T>(); };
    switch (spec.kind) {
      case LayerKind::conv:
        return conv2d(x, w(weight), w(bias), spec.stride, spec.padding, name);
      case LayerKind::transposed_conv:
        return conv_transpose2d(x, w(weight), w(bias), spec.stride, spec.padding, name);
      case LayerKind::linear:
        return linear(flatten(x), w(weight), w(bias), name);
      case LayerKind::batch_norm:
        // eval mode never writes `bn`
        return batch_norm(x, w(gamma), w(beta), const_cast<BatchNormState<T>*>(&bn), mode == Mode::train, name);
      case LayerKind::relu: return relu(x);
      case LayerKind::leaky_relu: return leaky_relu(x, T(0.2));
      case LayerKind::sigmoid: return sigmoid(x);
      case LayerKind::softmax: return softmax(flatten(x));
      case LayerKind::max_pool: return max_pool2d(x, spec.kernel, spec.stride, spec.padding, name);
      case LayerKind::nearest_upsample: return upsample_nearest(x, spec.stride, name);
    }
    throw Error("unreachable layer kind");
  }
};

/// Output shape (without batch axis) of `spec` applied to `in`.
inline Shape infer_shape(const LayerSpec& spec, const Shape& in, const std::string& where) {
  auto need4 = [&] {
    if (in.size() != 3) throw ShapeError(where, "(C,H,W) input", in);
  };
  switch (spec.kind) {
    case LayerKind::conv: {
      need4();
      const int h = (in[1] + 2 * spec.padding - spec.kernel) / spec.stride + 1;
      const int w = (in[2] + 2 * spec.padding - spec.kernel) / spec.stride + 1;
      if (in[1] + 2 * spec.padding < spec.kernel || h <= 0 || w <= 0) throw ShapeError(where, "spatial extent >= kernel", in);
      return {spec.out_channels, h, w};
    }
    case LayerKind::transposed_conv: {
      need4();
      const int h = (in[1] - 1) * spec.stride - 2 * spec.padding + spec.kernel;
      const int w = (in[2] - 1) * spec.stride - 2 * spec.padding + spec.kernel;
      if (h <= 0 || w <= 0) throw ShapeError(where, "positive output extent", in);
      return {spec.out_channels, h, w};
    }
    case LayerKind::linear: return {spec.out_channels};
    case LayerKind::max_pool: {
      need4();
      const int h = (in[1] + 2 * spec.padding - spec.kernel) / spec.stride + 1;
      const int w = (in[2] + 2 * spec.padding - spec.kernel) / spec.stride + 1;
      if (h <= 0 || w <= 0) throw ShapeError(where, "spatial extent >= kernel", in);
      return {in[0], h, w};
    }
    case LayerKind::nearest_upsample:
      need4();
      return {in[0], in[1] * spec.stride, in[2] * spec.stride};
    case LayerKind::softmax: return {static_cast<int>(num_elements(in))};
    default: return in;
  }
}

/// A named sequence of layers built from a spec list and a role.
template <class T>
class Stack {
 public:
  Stack() = default;

  Stack(std::string name, const std::vector<LayerSpec>& specs, StackRole role, Shape input, std::mt19937_64& rng)
      : name_(std::move(name)), specs_(specs), role_(role), input_(input) {
    int last_weight = -1;
    for (int i = 0; i < static_cast<int>(specs.size()); ++i)
      if (specs[i].has_weights()) last_weight = i;
    if (role == StackRole::head && (specs.size() != 1 || specs[0].kind != LayerKind::linear)) {
      throw LayerSpecError(name_ + ": a head must be a single linear layer");
    }
    Shape shape = input;
    for (int i = 0; i < static_cast<int>(specs.size()); ++i) {
      const LayerSpec& spec = specs[i];
      shape = add_layer(spec, shape, rng, role != StackRole::head);
      if (!spec.has_weights() || spec.bare) continue;
      const bool last = i == last_weight;
      if (role == StackRole::encoder) {
        shape = add_layer(LayerSpec::simple(LayerKind::batch_norm), shape, rng, true);
        shape = add_layer(LayerSpec::simple(LayerKind::relu), shape, rng, true);
      } else if (role == StackRole::decoder && !last) {
        shape = add_layer(LayerSpec::simple(LayerKind::batch_norm), shape, rng, true);
        shape = add_layer(LayerSpec::simple(LayerKind::leaky_relu), shape, rng, true);
      } else if (role == StackRole::classifier && !last) {
        shape = add_layer(LayerSpec::simple(LayerKind::relu), shape, rng, true);
      }
    }
    output_ = shape;
  }

  const std::string& name() const { return name_; }
  const std::vector<LayerSpec>& specs() const { return specs_; }
  StackRole role() const { return role_; }
  const Shape& input_shape() const { return input_; }
  const Shape& output_shape() const { return output_; }
  int output_size() const { return static_cast<int>(num_elements(output_)); }
  bool empty() const { return layers_.empty(); }
  const std::vector<Layer<T>>& layers() const { return layers_; }
  std::vector<Layer<T>>& layers() { return layers_; }

  Var<T> forward(Var<T> x, Mode mode, bool frozen = false) const {
    Shape expect = input_;
    expect.insert(expect.begin(), x.value().rank() > 0 ? x.dim(0) : 0);
    if (x.shape() != expect) {
      // Flat inputs are accepted for stacks that start with a linear layer.
      const bool flat_ok = !layers_.empty() && layers_.front().spec.kind == LayerKind::linear &&
                           x.value().rank() >= 2 && x.value().size() == num_elements(expect);
      if (!flat_ok) throw ShapeError(name_, to_string(expect), x.shape());
    }
    for (const auto& layer : layers_) x = layer.forward(x, mode, frozen);
    return x;
  }

  std::vector<Parameter<T>*> parameters() {
    std::vector<Parameter<T>*> out;
    for (auto& l : layers_)
      for (Parameter<T>* p : {&l.weight, &l.bias, &l.gamma, &l.beta})
        if (*p) out.push_back(p);
    return out;
  }
  std::vector<const Parameter<T>*> parameters() const {
    std::vector<const Parameter<T>*> out;
    for (const auto& l : layers_)
      for (const Parameter<T>* p : {&l.weight, &l.bias, &l.gamma, &l.beta})
        if (*p) out.push_back(p);
    return out;
  }

  /// Named non-trainable state (batch-norm running statistics).
  std::vector<std::pair<std::string, Tensor<T>*>> buffers() {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    for (auto& l : layers_) {
      if (l.spec.kind != LayerKind::batch_norm) continue;
      out.emplace_back(l.name + ".running_mean", &l.bn.running_mean);
      out.emplace_back(l.name + ".running_var", &l.bn.running_var);
    }
    return out;
  }

 private:
  Shape add_layer(const LayerSpec& spec, const Shape& in, std::mt19937_64& rng, bool with_bias) {
    Layer<T> layer;
    layer.spec = spec;
    layer.name = name_ + "." + std::to_string(layers_.size());
    const Shape out = infer_shape(spec, in, layer.name + " (" + to_string(spec.kind) + ")");
    const int in_ch = in.empty() ? 0 : in[0];
    auto uniform = [&rng](const Shape& s, double bound) {
      Tensor<T> t(s);
      std::uniform_real_distribution<double> d(-bound, bound);
      for (auto& v : t.values()) v = static_cast<T>(d(rng));
      return t;
    };
    switch (spec.kind) {
      case LayerKind::conv: {
        const int fan_in = in_ch * spec.kernel * spec.kernel;
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        layer.weight = Parameter<T>(layer.name + ".weight", uniform({spec.out_channels, in_ch, spec.kernel, spec.kernel}, bound));
        layer.bias = Parameter<T>(layer.name + ".bias", uniform({spec.out_channels}, bound));
        break;
      }
      case LayerKind::transposed_conv: {
        const int fan_in = in_ch * spec.kernel * spec.kernel;
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        layer.weight = Parameter<T>(layer.name + ".weight", uniform({in_ch, spec.out_channels, spec.kernel, spec.kernel}, bound));
        layer.bias = Parameter<T>(layer.name + ".bias", uniform({spec.out_channels}, bound));
        break;
      }
      case LayerKind::linear: {
        const int fan_in = static_cast<int>(num_elements(in));
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        layer.weight = Parameter<T>(layer.name + ".weight", uniform({spec.out_channels, fan_in}, bound));
        if (with_bias) layer.bias = Parameter<T>(layer.name + ".bias", uniform({spec.out_channels}, bound));
        break;
      }
      case LayerKind::batch_norm: {
        layer.gamma = Parameter<T>(layer.name + ".gamma", Tensor<T>({in_ch}, T(1)));
        layer.beta = Parameter<T>(layer.name + ".beta", Tensor<T>({in_ch}, T(0)));
        layer.bn.running_mean = Tensor<T>({in_ch}, T(0));
        layer.bn.running_var = Tensor<T>({in_ch}, T(1));
        break;
      }
      default: break;
    }
    layers_.push_back(std::move(layer));
    return out;
  }

  std::string name_;
  std::vector<LayerSpec> specs_;
  StackRole role_ = StackRole::encoder;
  Shape input_;
  Shape output_;
  std::vector<Layer<T>> layers_;
};

}  // namespace dualdis
