#include "uat/nn.hpp"

#include <cmath>

#include "uat/errors.hpp"

namespace uat {

Architecture build_architecture(const std::string& name, Shape input_shape, int64_t num_classes) {
  if (num_classes < 2) throw ConfigError("architecture needs at least 2 classes");
  Architecture a;
  a.name = name;
  a.input_shape = std::move(input_shape);
  a.num_classes = num_classes;
  if (name == "scnn") {
    if (a.input_shape.size() != 3)
      throw ConfigError("scnn wants a (C,H,W) input shape, got " + shape_str(a.input_shape));
    a.layers = {
        Conv2dSpec{16, 3, 1}, ReluSpec{}, MaxPool2x2Spec{},
        Conv2dSpec{32, 3, 1}, ReluSpec{}, MaxPool2x2Spec{},
        FlattenSpec{},        DropoutSpec{0.25},
        LinearSpec{128},      ReluSpec{},
        DropoutSpec{0.5},     LinearSpec{num_classes},
    };
  } else if (name == "mlp2") {
    a.layers = {
        FlattenSpec{},
        LinearSpec{64},
        ReluSpec{},
        DropoutSpec{0.5},
        LinearSpec{num_classes},
    };
  } else {
    throw ConfigError("unknown architecture '" + name + "'");
  }
  return a;
}

namespace {

// Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)), drawn in storage order.
template <class T>
Tensor<T> init_param(Shape shape, int64_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  auto t = Tensor<T>::uninitialized(std::move(shape));
  for (auto& v : t) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

}  // namespace

template <class T>
Model<T>::Model(Architecture arch, uint64_t seed)
    : arch_(std::move(arch)), seed_(seed), mask_rng_(derive_seed(seed, 1)) {
  Rng init_rng(derive_seed(seed, 0));
  Shape cur = arch_.input_shape;
  bool seen_dropout = false;
  trunk_len_ = arch_.layers.size();
  for (size_t li = 0; li < arch_.layers.size(); ++li) {
    LayerState ls;
    ls.spec = arch_.layers[li];
    if (const auto* c = std::get_if<Conv2dSpec>(&ls.spec)) {
      if (cur.size() != 3) throw ConfigError("conv2d needs a (C,H,W) input, got " + shape_str(cur));
      const int64_t oh = cur[1] + 2 * c->pad - c->kernel + 1;
      const int64_t ow = cur[2] + 2 * c->pad - c->kernel + 1;
      if (oh <= 0 || ow <= 0) throw ConfigError("conv2d kernel exceeds padded input");
      const int64_t fan_in = cur[0] * c->kernel * c->kernel;
      ls.w = static_cast<int>(params_.size());
      params_.push_back(init_param<T>({c->out_channels, cur[0], c->kernel, c->kernel}, fan_in, init_rng));
      ls.bias = static_cast<int>(params_.size());
      params_.push_back(init_param<T>({c->out_channels}, fan_in, init_rng));
      cur = {c->out_channels, oh, ow};
    } else if (std::holds_alternative<ReluSpec>(ls.spec)) {
      // shape unchanged
    } else if (std::holds_alternative<MaxPool2x2Spec>(ls.spec)) {
      if (cur.size() != 3 || cur[1] % 2 || cur[2] % 2)
        throw ConfigError("maxpool2x2 needs even (C,H,W) input, got " + shape_str(cur));
      cur = {cur[0], cur[1] / 2, cur[2] / 2};
    } else if (std::holds_alternative<FlattenSpec>(ls.spec)) {
      cur = {shape_size(cur)};
    } else if (const auto* d = std::get_if<DropoutSpec>(&ls.spec)) {
      if (d->rate < 0.0 || d->rate >= 1.0) throw ConfigError("dropout rate must be in [0,1)");
      ls.mask_slot = static_cast<int>(last_masks_.size());
      last_masks_.emplace_back();
      if (!seen_dropout) {
        trunk_len_ = li;
        seen_dropout = true;
      }
    } else if (const auto* l = std::get_if<LinearSpec>(&ls.spec)) {
      if (cur.size() != 1) throw ConfigError("linear needs a flattened input, got " + shape_str(cur));
      ls.w = static_cast<int>(params_.size());
      params_.push_back(init_param<T>({cur[0], l->out_features}, cur[0], init_rng));
      ls.bias = static_cast<int>(params_.size());
      params_.push_back(init_param<T>({l->out_features}, cur[0], init_rng));
      cur = {l->out_features};
    }
    ls.out_shape = cur;
    layers_.push_back(std::move(ls));
  }
  if (cur != Shape{arch_.num_classes})
    throw ConfigError("architecture output " + shape_str(cur) + " does not match class count");
}

template <class T>
int64_t Model<T>::param_count() const {
  int64_t n = 0;
  for (const auto& p : params_) n += p.size();
  return n;
}

template <class T>
typename Model<T>::Binding Model<T>::bind(Graph<T>& g, bool trainable) {
  Binding b;
  b.g = &g;
  b.params.reserve(params_.size());
  for (auto& p : params_) b.params.push_back(g.leaf(p, trainable));
  return b;
}

template <class T>
int Model<T>::apply_layer(Binding& b, const LayerState& ls, int node, int S, MaskMode mode, int64_t rows) {
  Graph<T>& g = *b.g;
  if (const auto* c = std::get_if<Conv2dSpec>(&ls.spec)) {
    return g.conv2d(node, b.params[static_cast<size_t>(ls.w)], b.params[static_cast<size_t>(ls.bias)], c->pad);
  }
  if (std::holds_alternative<ReluSpec>(ls.spec)) return g.relu(node);
  if (std::holds_alternative<MaxPool2x2Spec>(ls.spec)) return g.maxpool2x2(node);
  if (std::holds_alternative<FlattenSpec>(ls.spec)) {
    return g.reshape(node, {rows, shape_size(ls.out_shape)});
  }
  if (const auto* d = std::get_if<DropoutSpec>(&ls.spec)) {
    if (mode == MaskMode::Disabled) return node;
    Tensor<T>& slot = last_masks_[static_cast<size_t>(ls.mask_slot)];
    const Shape want = g.value(node).shape();
    if (mode == MaskMode::SampleNew) {
      const T scale = static_cast<T>(1.0 / (1.0 - d->rate));
      auto mask = Tensor<T>::uninitialized(want);
      for (auto& v : mask) v = mask_rng_.uniform() < d->rate ? T(0) : scale;
      slot = mask;
    } else {
      if (!slot.defined() || !same_shape(slot.shape(), want))
        throw ShapeError("reuse-fixed dropout has no mask of shape " + shape_str(want));
    }
    return g.mul(node, g.leaf(slot));
  }
  (void)S;
  return g.bias_add(g.matmul(node, b.params[static_cast<size_t>(ls.w)]),
                    b.params[static_cast<size_t>(ls.bias)]);
}

template <class T>
int Model<T>::forward_trunk(Binding& b, int x) {
  Graph<T>& g = *b.g;
  const Shape xs = g.value(x).shape();
  Shape per_sample(xs.begin() + 1, xs.end());
  if (xs.empty() || per_sample != arch_.input_shape)
    throw ShapeError("model input " + shape_str(xs) + " does not match architecture input " +
                     shape_str(arch_.input_shape));
  const int64_t rows = xs[0];
  int node = x;
  for (size_t li = 0; li < trunk_len_; ++li) node = apply_layer(b, layers_[li], node, 1, MaskMode::Disabled, rows);
  return node;
}

template <class T>
int Model<T>::forward_head(Binding& b, int trunk_out, int S, MaskMode mode) {
  if (S < 1) throw ShapeError("sample count must be >= 1");
  Graph<T>& g = *b.g;
  int node = trunk_out;
  int64_t rows = g.value(trunk_out).extent(0);
  if (S > 1) {
    node = g.tile_rows(node, S);
    rows *= S;
  }
  for (size_t li = trunk_len_; li < layers_.size(); ++li) node = apply_layer(b, layers_[li], node, S, mode, rows);
  forward_passes_ += S;
  return node;
}

template <class T>
int Model<T>::forward(Binding& b, int x, int S, MaskMode mode) {
  return forward_head(b, forward_trunk(b, x), S, mode);
}

template class Model<float>;
template class Model<double>;

}  // namespace uat
