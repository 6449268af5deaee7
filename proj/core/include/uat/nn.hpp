#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "uat/graph.hpp"
#include "uat/rng.hpp"
#include "uat/tensor.hpp"

namespace uat {

struct Conv2dSpec {
  int64_t out_channels;
  int64_t kernel;
  int pad;
};
struct ReluSpec {};
struct MaxPool2x2Spec {};
struct FlattenSpec {};
struct DropoutSpec {
  double rate;
};
struct LinearSpec {
  int64_t out_features;
};

using LayerSpec = std::variant<Conv2dSpec, ReluSpec, MaxPool2x2Spec, FlattenSpec, DropoutSpec, LinearSpec>;

struct Architecture {
  std::string name;
  Shape input_shape;  // per sample, e.g. {1,28,28} or {2}
  int64_t num_classes = 0;
  std::vector<LayerSpec> layers;
};

// Known architectures:
//   scnn: conv(16,3x3,pad1) relu pool conv(32,3x3,pad1) relu pool flatten
//         dropout(.25) linear(128) relu dropout(.5) linear(K)
//   mlp2: flatten linear(64) relu dropout(.5) linear(K)
Architecture build_architecture(const std::string& name, Shape input_shape, int64_t num_classes);

// How dropout masks behave during a forward pass. Disabled is an exact
// identity (inverted dropout keeps the scale at train time, so no rescaling
// happens at inference). ReuseLast replays the masks drawn by the previous
// sampling pass; SampleNew draws fresh ones from the model's mask stream.
enum class MaskMode { SampleNew, ReuseLast, Disabled };

// A feedforward net with owned parameters. Forward passes are built onto a
// caller-provided graph; parameters enter the graph as grad leaves via
// bind(). The trunk (layers before the first dropout) is deterministic, so
// callers can run it once per input and attach several stochastic heads.
template <class T>
class Model {
 public:
  Model(Architecture arch, uint64_t seed);

  const Architecture& arch() const { return arch_; }
  uint64_t seed() const { return seed_; }

  std::vector<Tensor<T>>& params() { return params_; }
  const std::vector<Tensor<T>>& params() const { return params_; }
  int64_t param_count() const;

  // Counts every forward pass built through this model (cost accounting).
  int64_t forward_passes() const { return forward_passes_; }

  // Mask stream control; evaluation re-seeds for checkpoint-path parity.
  void reseed_masks(uint64_t seed) { mask_rng_.reseed(seed); }

  struct Binding {
    Graph<T>* g = nullptr;
    std::vector<int> params;  // leaf ids, same order as params()
  };
  Binding bind(Graph<T>& g, bool trainable = true);

  // Full forward: logits with S stacked mask samples, rows ordered sample-
  // major ((s*B + b) is sample s of input row b). S must be 1 unless the
  // mode actually samples masks.
  int forward(Binding& b, int x, int S, MaskMode mode);

  // Split forward for trunk sharing.
  int forward_trunk(Binding& b, int x);
  int forward_head(Binding& b, int trunk_out, int S, MaskMode mode);

 private:
  struct LayerState {
    LayerSpec spec;
    Shape out_shape;       // per sample
    int w = -1, bias = -1; // indices into params_, -1 if none
    int mask_slot = -1;    // index into last_masks_, dropout only
  };

  Architecture arch_;
  uint64_t seed_ = 0;
  std::vector<Tensor<T>> params_;
  std::vector<LayerState> layers_;
  std::vector<Tensor<T>> last_masks_;
  size_t trunk_len_ = 0;  // layers before the first dropout
  Rng mask_rng_;
  int64_t forward_passes_ = 0;

  int apply_layer(Binding& b, const LayerState& ls, int node, int S, MaskMode mode, int64_t rows);
};

// Mean cross-entropy over the batch, stable at large logits.
template <class T>
int softmax_cross_entropy(Graph<T>& g, int logits, std::vector<int32_t> labels) {
  return g.mean(g.softmax_xent(logits, std::move(labels)));
}

extern template class Model<float>;
extern template class Model<double>;

}  // namespace uat
