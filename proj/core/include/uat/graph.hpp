#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "uat/pool.hpp"
#include "uat/tensor.hpp"

namespace uat {

enum class Op : uint8_t {
  Leaf,
  Add,
  AddScalar,
  BiasAdd,
  Mul,
  MulScalar,
  Matmul,
  Conv2d,
  MaxPool2x2,
  Relu,
  Log,
  Exp,
  Sum,
  Mean,
  Select,
  Reshape,
  TileRows,
  SoftmaxRows,
  RowEntropy,
  SoftmaxXent,
};

const char* op_name(Op op);

// Reverse-mode tape over dense tensors. Nodes are appended in topological
// order and addressed by integer id. backward() accumulates gradients
// additively; zero_grads() clears them without releasing storage, reset()
// drops the whole tape while keeping pooled buffers for the next build.
//
// The loss node for backward() must be scalar. A second backward without an
// intervening zero_grads() adds another full contribution on top.
template <class T>
class Graph {
 public:
  struct Options {
    bool check_finite = false;  // scan every forward result, throw NumericsError on non-finite
  };

  explicit Graph(Options opt = {});

  // Leaves. The tensor's storage is shared with the caller, not copied.
  int leaf(Tensor<T> v, bool requires_grad = false);

  // Elementwise and broadcast arithmetic.
  int add(int a, int b);              // same shape
  int add_scalar(int a, T c);
  int bias_add(int a, int bias);      // (N,F) + (F,)
  int mul(int a, int b);              // same shape
  int mul_scalar(int a, T c);
  int sub(int a, int b) { return add(a, mul_scalar(b, T(-1))); }

  // Linear algebra. matmul is (N,K)x(K,M) -> (N,M).
  int matmul(int a, int b);

  // conv2d: x (B,Cin,H,W), w (Cout,Cin,KH,KW), optional bias (Cout,),
  // stride 1, zero padding `pad` on both spatial axes.
  int conv2d(int x, int w, int bias, int pad);

  int maxpool2x2(int a);  // (B,C,H,W) with even H,W -> (B,C,H/2,W/2)
  int relu(int a);
  int log(int a);
  int exp(int a);

  static constexpr int kAllAxes = -1;
  int sum(int a, int axis = kAllAxes);
  int mean(int a, int axis = kAllAxes);

  // Elementwise select: mask must hold 0/1 values; out = mask ? a : b.
  int select(int mask, int a, int b);

  int reshape(int a, Shape shape);     // same storage, no copy
  int tile_rows(int a, int reps);      // (B,rest) -> (reps*B,rest), block s is a full copy

  // Fused row-wise softmax / entropy / cross-entropy. Rows are the leading
  // extent of a 2-D value. row_entropy clamps probabilities below `clamp`
  // inside the log. softmax_xent returns the per-row loss vector.
  int softmax_rows(int a);
  int row_entropy(int p, T clamp = T(1e-12));
  int softmax_xent(int logits, std::vector<int32_t> labels);

  // Copies are cheap: tensors share storage. Returned by value because node
  // storage may move when later ops are appended.
  Tensor<T> value(int id) const;
  // Gradient of the last backward root(s) w.r.t. node `id`. Zero tensor if no
  // path reached it.
  Tensor<T> grad(int id);
  bool grad_reached(int id) const;
  bool requires_grad(int id) const;

  // Accumulate d(root)/d(node) for every node on a path to a grad-requiring
  // leaf. `wrt` restricts propagation to paths reaching the given nodes,
  // skipping all other branches (used for input-only attack gradients).
  void backward(int root);
  void backward(int root, const std::vector<int>& wrt);

  void zero_grads();
  void reset();

  // Re-run the recorded forward tape in build order, refreshing every node's
  // value (and cached forward state) in place. Leaf values are read from
  // their current storage, so mutating a leaf tensor's data and calling this
  // re-evaluates the whole graph as a plain function — the basis for
  // finite-difference checks where dropout masks must stay frozen.
  void recompute();

  int node_count() const { return static_cast<int>(nodes_.size()); }
  std::shared_ptr<BufferPool<T>> pool() const { return pool_; }

 private:
  struct Node {
    Op op = Op::Leaf;
    int a = -1, b = -1, c = -1;
    bool requires_grad = false;
    bool grad_init = false;
    T scalar = T(0);
    int axis = kAllAxes;
    int reps = 0;
    int pad = 0;
    Tensor<T> value;
    Tensor<T> grad;
    Tensor<T> aux;                // softmax_xent probs
    Tensor<uint8_t> idx;          // maxpool argmax (0..3, window scan order)
    Tensor<T> cols;               // conv2d cached im2col patches
    std::vector<int32_t> labels;  // softmax_xent targets
  };

  Node& at(int id);
  const Node& at(int id) const;
  int push(Node n);
  Tensor<T> fresh(Shape shape) { return pool_->tensor(std::move(shape)); }
  void ensure_grad(Node& n);
  void eval_node(Node& n);
  void check_value(const Node& n) const;
  void backprop_node(int id, const std::vector<uint8_t>& need);

  std::vector<Node> nodes_;
  std::shared_ptr<BufferPool<T>> pool_;
  Options opt_;
};

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace uat
