#include "uat/graph.hpp"

#include <cmath>
#include <cstring>
#include <limits>

#include "blas.hpp"

namespace uat {

const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Add: return "add";
    case Op::AddScalar: return "add_scalar";
    case Op::BiasAdd: return "bias_add";
    case Op::Mul: return "mul";
    case Op::MulScalar: return "mul_scalar";
    case Op::Matmul: return "matmul";
    case Op::Conv2d: return "conv2d";
    case Op::MaxPool2x2: return "maxpool2x2";
    case Op::Relu: return "relu";
    case Op::Log: return "log";
    case Op::Exp: return "exp";
    case Op::Sum: return "sum";
    case Op::Mean: return "mean";
    case Op::Select: return "select";
    case Op::Reshape: return "reshape";
    case Op::TileRows: return "tile_rows";
    case Op::SoftmaxRows: return "softmax_rows";
    case Op::RowEntropy: return "row_entropy";
    case Op::SoftmaxXent: return "softmax_xent";
  }
  return "?";
}

namespace {

// dst = src or dst += src, depending on whether dst already holds a
// contribution this pass.
template <class T>
void acc(T* dst, const T* src, int64_t n, bool init) {
  if (init) {
    for (int64_t i = 0; i < n; ++i) dst[i] += src[i];
  } else {
    std::memcpy(dst, src, static_cast<size_t>(n) * sizeof(T));
  }
}

template <class T, class F>
void acc_expr(T* dst, int64_t n, bool init, F f) {
  if (init) {
    for (int64_t i = 0; i < n; ++i) dst[i] += f(i);
  } else {
    for (int64_t i = 0; i < n; ++i) dst[i] = f(i);
  }
}

struct ConvDims {
  int64_t B, Cin, H, W, Cout, KH, KW, OH, OW, R, P;
};

template <class T>
ConvDims conv_dims(const Tensor<T>& x, const Tensor<T>& w, int pad) {
  ConvDims d{};
  d.B = x.extent(0);
  d.Cin = x.extent(1);
  d.H = x.extent(2);
  d.W = x.extent(3);
  d.Cout = w.extent(0);
  d.KH = w.extent(2);
  d.KW = w.extent(3);
  d.OH = d.H + 2 * pad - d.KH + 1;
  d.OW = d.W + 2 * pad - d.KW + 1;
  d.R = d.Cin * d.KH * d.KW;
  d.P = d.OH * d.OW;
  return d;
}

// Patch matrix layout: row r = (ic,kh,kw), column j = (n,oh,ow).
template <class T>
void im2col(const T* x, const ConvDims& d, int pad, T* cols) {
  const int64_t BP = d.B * d.P;
  for (int64_t ic = 0; ic < d.Cin; ++ic) {
    for (int64_t kh = 0; kh < d.KH; ++kh) {
      for (int64_t kw = 0; kw < d.KW; ++kw) {
        T* row = cols + ((ic * d.KH + kh) * d.KW + kw) * BP;
        const int64_t lo = std::max<int64_t>(0, pad - kw);
        const int64_t hi = std::min<int64_t>(d.OW, d.W + pad - kw);
        for (int64_t n = 0; n < d.B; ++n) {
          const T* img = x + (n * d.Cin + ic) * d.H * d.W;
          for (int64_t oh = 0; oh < d.OH; ++oh) {
            T* dst = row + (n * d.OH + oh) * d.OW;
            const int64_t ih = oh + kh - pad;
            if (ih < 0 || ih >= d.H || lo >= hi) {
              std::memset(dst, 0, static_cast<size_t>(d.OW) * sizeof(T));
              continue;
            }
            if (lo > 0) std::memset(dst, 0, static_cast<size_t>(lo) * sizeof(T));
            std::memcpy(dst + lo, img + ih * d.W + (lo + kw - pad), static_cast<size_t>(hi - lo) * sizeof(T));
            if (hi < d.OW) std::memset(dst + hi, 0, static_cast<size_t>(d.OW - hi) * sizeof(T));
          }
        }
      }
    }
  }
}

// Scatter-add of a patch matrix back onto the image grid (transpose of im2col).
template <class T>
void col2im_add(const T* cols, const ConvDims& d, int pad, T* dx) {
  const int64_t BP = d.B * d.P;
  for (int64_t ic = 0; ic < d.Cin; ++ic) {
    for (int64_t kh = 0; kh < d.KH; ++kh) {
      for (int64_t kw = 0; kw < d.KW; ++kw) {
        const T* row = cols + ((ic * d.KH + kh) * d.KW + kw) * BP;
        const int64_t lo = std::max<int64_t>(0, pad - kw);
        const int64_t hi = std::min<int64_t>(d.OW, d.W + pad - kw);
        if (lo >= hi) continue;
        for (int64_t n = 0; n < d.B; ++n) {
          T* img = dx + (n * d.Cin + ic) * d.H * d.W;
          for (int64_t oh = 0; oh < d.OH; ++oh) {
            const int64_t ih = oh + kh - pad;
            if (ih < 0 || ih >= d.H) continue;
            const T* src = row + (n * d.OH + oh) * d.OW;
            T* dst = img + ih * d.W + (lo + kw - pad);
            for (int64_t j = lo; j < hi; ++j) dst[j - lo] += src[j];
          }
        }
      }
    }
  }
}

template <class T>
void reduce_dims(const Shape& s, int axis, int64_t* outer, int64_t* mid, int64_t* inner) {
  *outer = 1;
  *mid = 1;
  *inner = 1;
  for (size_t i = 0; i < s.size(); ++i) {
    if (static_cast<int>(i) < axis)
      *outer *= s[i];
    else if (static_cast<int>(i) == axis)
      *mid = s[i];
    else
      *inner *= s[i];
  }
}

}  // namespace

template <class T>
Graph<T>::Graph(Options opt) : pool_(BufferPool<T>::create()), opt_(opt) {}

template <class T>
typename Graph<T>::Node& Graph<T>::at(int id) {
  if (id < 0 || id >= node_count()) throw Error("node id out of range");
  return nodes_[static_cast<size_t>(id)];
}

template <class T>
const typename Graph<T>::Node& Graph<T>::at(int id) const {
  if (id < 0 || id >= node_count()) throw Error("node id out of range");
  return nodes_[static_cast<size_t>(id)];
}

template <class T>
int Graph<T>::push(Node n) {
  if (opt_.check_finite && n.op != Op::Leaf) check_value(n);
  nodes_.push_back(std::move(n));
  return node_count() - 1;
}

template <class T>
void Graph<T>::check_value(const Node& n) const {
  for (int64_t i = 0; i < n.value.size(); ++i)
    if (!std::isfinite(static_cast<double>(n.value[i])))
      throw NumericsError(std::string("non-finite value out of ") + op_name(n.op));
}

template <class T>
int Graph<T>::leaf(Tensor<T> v, bool requires_grad) {
  if (!v.defined()) throw ShapeError("leaf tensor is undefined");
  Node n;
  n.op = Op::Leaf;
  n.requires_grad = requires_grad;
  n.value = std::move(v);
  return push(std::move(n));
}

template <class T>
int Graph<T>::add(int a, int b) {
  Node& na = at(a);
  Node& nb = at(b);
  if (!same_shape(na.value.shape(), nb.value.shape()))
    throw ShapeError("add: shape mismatch " + shape_str(na.value.shape()) + " vs " + shape_str(nb.value.shape()));
  Node n;
  n.op = Op::Add;
  n.a = a;
  n.b = b;
  n.requires_grad = na.requires_grad || nb.requires_grad;
  n.value = fresh(na.value.shape());
  eval_node(n);
  return push(std::move(n));
}

template <class T>
int Graph<T>::add_scalar(int a, T c) {
  Node& na = at(a);
  Node n;
  n.op = Op::AddScalar;
  n.a = a;
  n.scalar = c;
  n.requires_grad = na.requires_grad;
  n.value = fresh(na.value.shape());
  eval_node(n);
  return push(std::move(n));
}

template <class T>
int Graph<T>::bias_add(int a, int bias) {
  Node& na = at(a);
  Node& nb = at(bias);
  if (na.value.rank() != 2 || nb.value.rank() != 1 || na.value.extent(1) != nb.value.extent(0))
    throw ShapeError("bias_add: want (N,F)+(F,), got " + shape_str(na.value.shape()) + " + " +
                     shape_str(nb.value.shape()));
  Node n;
  n.op = Op::BiasAdd;
  n.a = a;
  n.b = bias;
  n.requires_grad = na.requires_grad || nb.requires_grad;
  n.value = fresh(na.value.shape());
  eval_node(n);
  return push(std::move(n));
}

template <class T>
int Graph<T>::mul(int a, int b) {
  Node& na = at(a);
  Node& nb = at(b);
  if (!same_shape(na.value.shape(), nb.value.shape()))
    throw ShapeError("mul: shape mismatch " + shape_str(na.value.shape()) + " vs " + shape_str(nb.value.shape()));
  Node n;
  n.op = Op::Mul;
  n.a = a;
  n.b = b;
  n.requires_grad = na.requires_grad || nb.requires_grad;
  n.value = fresh(na.value.shape());
  eval_node(n);
  return push(std::move(n));
}

template <class T>
int Graph<T>::mul_scalar(int a, T c) {
  Node& na = at(a);
  Node n;
  n.op = Op::MulScalar;
  n.a = a;
  n.scalar = c;
  n.requires_grad = na.requires_grad;
  n.value = fresh(na.value.shape());
  eval_node(n);
  return push(std::move(n));
}

template <class T>
int Graph<T>::matmul(int a, int b) {
  Node& na = at(a);
  Node& nb = at(b);
  if (na.value.rank() != 2 || nb.value.rank() != 2 || na.value.extent(1) != nb.value.extent(0))
    throw ShapeError("matmul: want (N,K)x(K,M), got " + shape_str(na.value.shape()) + " x " +
                     shape_str(nb.value.shape()));
  Node n;
  n.op = Op::Matmul;
  n.a = a;
  n.b = b;
  n.requires_grad = na.requires_grad || nb.requires_grad;
  n.value = fresh({na.value.extent(0), nb.value.extent(1)});
  eval_node(n);
  return push(std::move(n));
}

template <class T>
int Graph<T>::conv2d(int x, int w, int bias, int pad) {
  Node& nx = at(x);
  Node& nw = at(w);
  if (nx.value.rank() != 4 || nw.value.rank() != 4)
    throw ShapeError("conv2d: want x (B,Cin,H,W), w (Cout,Cin,KH,KW)");
  if (nx.value.extent(1) != nw.value.extent(1))
    throw ShapeError("conv2d: channel mismatch " + shape_str(nx.value.shape()) + " vs " +
                     shape_str(nw.value.shape()));
  if (pad < 0) throw ShapeError("conv2d: negative padding");
  const ConvDims d = conv_dims(nx.value, nw.value, pad);
  if (d.OH <= 0 || d.OW <= 0) throw ShapeError("conv2d: kernel larger than padded input");

  Node n;
  n.op = Op::Conv2d;
  n.a = x;
  n.b = w;
  n.c = bias;
  n.pad = pad;
  n.requires_grad = nx.requires_grad || nw.requires_grad;
  if (bias >= 0) {
    Node& nb = at(bias);
    if (nb.value.rank() != 1 || nb.value.extent(0) != d.Cout) throw ShapeError("conv2d: bias must be (Cout,)");
    n.requires_grad = n.requires_grad || nb.requires_grad;
  }

  n.value = fresh({d.B, d.Cout, d.OH, d.OW});
  // Patches are needed again for the weight gradient.
  if (nw.requires_grad) n.cols = pool_->tensor({d.R, d.B * d.P});
  eval_node(n);
  return push(std::move(n));
}

template <class T>
int Graph<T>::maxpool2x2(int a) {
  Node& na = at(a);
  if (na.value.rank() != 4 || na.value.extent(2) % 2 != 0 || na.value.extent(3) % 2 != 0)
    throw ShapeError("maxpool2x2: want (B,C,H,W) with even H and W, got " + shape_str(na.value.shape()));
  const int64_t B = na.value.extent(0), C = na.value.extent(1), H = na.value.extent(2), W = na.value.extent(3);
  Node n;
  n.op = Op::MaxPool2x2;
  n.a = a;
  n.requires_grad = na.requires_grad;
  n.value = fresh({B, C, H / 2, W / 2});
  n.idx = Tensor<uint8_t>::uninitialized({B, C, H / 2, W / 2});
  eval_node(n);
  return push(std::move(n));
}

template <class T>
int Graph<T>::relu(int a) {
  Node& na = at(a);
  Node n;
  n.op = Op::Relu;
  n.a = a;
  n.requires_grad = na.requires_grad;
  n.value = fresh(na.value.shape());
  eval_node(n);
  return push(std::move(n));
}

template <class T>
int Graph<T>::log(int a) {
  Node& na = at(a);
  Node n;
  n.op = Op::Log;
  n.a = a;
  n.requires_grad = na.requires_grad;
  n.value = fresh(na.value.shape());
  eval_node(n);
  return push(std::move(n));
}

template <class T>
int Graph<T>::exp(int a) {
  Node& na = at(a);
  Node n;
  n.op = Op::Exp;
  n.a = a;
  n.requires_grad = na.requires_grad;
  n.value = fresh(na.value.shape());
  eval_node(n);
  return push(std::move(n));
}

template <class T>
int Graph<T>::sum(int a, int axis) {
  Node& na = at(a);
  Node n;
  n.op = Op::Sum;
  n.a = a;
  n.axis = axis;
  n.requires_grad = na.requires_grad;
  if (axis == kAllAxes) {
    n.value = fresh(Shape{});
  } else {
    if (axis < 0 || axis >= na.value.rank()) throw ShapeError("sum: axis out of range");
    Shape os = na.value.shape();
    os.erase(os.begin() + axis);
    n.value = fresh(std::move(os));
  }
  eval_node(n);
  return push(std::move(n));
}

template <class T>
int Graph<T>::mean(int a, int axis) {
  Node& na = at(a);
  const int64_t denom = axis == kAllAxes ? na.value.size() : na.value.extent(axis);
  if (denom == 0) throw ShapeError("mean over empty extent");
  const int id = sum(a, axis);
  Node& ns = at(id);
  ns.op = Op::Mean;
  ns.scalar = T(1) / static_cast<T>(denom);
  eval_node(ns);
  return id;
}

template <class T>
int Graph<T>::select(int mask, int a, int b) {
  Node& nm = at(mask);
  Node& na = at(a);
  Node& nb = at(b);
  if (nm.requires_grad) throw ShapeError("select: mask must not require grad");
  if (!same_shape(nm.value.shape(), na.value.shape()) || !same_shape(na.value.shape(), nb.value.shape()))
    throw ShapeError("select: all operands must share one shape");
  Node n;
  n.op = Op::Select;
  n.a = a;
  n.b = b;
  n.c = mask;
  n.requires_grad = na.requires_grad || nb.requires_grad;
  n.value = fresh(na.value.shape());
  eval_node(n);
  return push(std::move(n));
}

template <class T>
int Graph<T>::reshape(int a, Shape shape) {
  Node& na = at(a);
  Node n;
  n.op = Op::Reshape;
  n.a = a;
  n.requires_grad = na.requires_grad;
  n.value = na.value.reshaped(std::move(shape));  // shares storage
  return push(std::move(n));
}

template <class T>
int Graph<T>::tile_rows(int a, int reps) {
  Node& na = at(a);
  if (na.value.rank() < 1 || reps < 1) throw ShapeError("tile_rows: want rank >= 1 and reps >= 1");
  Shape os = na.value.shape();
  os[0] *= reps;
  Node n;
  n.op = Op::TileRows;
  n.a = a;
  n.reps = reps;
  n.requires_grad = na.requires_grad;
  n.value = fresh(std::move(os));
  eval_node(n);
  return push(std::move(n));
}

template <class T>
int Graph<T>::softmax_rows(int a) {
  Node& na = at(a);
  if (na.value.rank() != 2) throw ShapeError("softmax_rows: want (N,K), got " + shape_str(na.value.shape()));
  Node n;
  n.op = Op::SoftmaxRows;
  n.a = a;
  n.requires_grad = na.requires_grad;
  n.value = fresh(na.value.shape());
  eval_node(n);
  return push(std::move(n));
}

template <class T>
int Graph<T>::row_entropy(int p, T clamp) {
  Node& na = at(p);
  if (na.value.rank() != 2) throw ShapeError("row_entropy: want (N,K), got " + shape_str(na.value.shape()));
  Node n;
  n.op = Op::RowEntropy;
  n.a = p;
  n.scalar = clamp;
  n.requires_grad = na.requires_grad;
  n.value = fresh({na.value.extent(0)});
  eval_node(n);
  return push(std::move(n));
}

template <class T>
int Graph<T>::softmax_xent(int logits, std::vector<int32_t> labels) {
  Node& na = at(logits);
  if (na.value.rank() != 2) throw ShapeError("softmax_xent: want (N,K), got " + shape_str(na.value.shape()));
  const int64_t N = na.value.extent(0), K = na.value.extent(1);
  if (static_cast<int64_t>(labels.size()) != N) throw ShapeError("softmax_xent: one label per row");
  for (int32_t y : labels)
    if (y < 0 || y >= K) throw ShapeError("softmax_xent: label out of range");
  Node n;
  n.op = Op::SoftmaxXent;
  n.a = logits;
  n.requires_grad = na.requires_grad;
  n.labels = std::move(labels);
  n.value = fresh({N});
  n.aux = fresh({N, K});
  eval_node(n);
  return push(std::move(n));
}

// Recompute a node's value (and any cached forward state) from the current
// values of its inputs, writing into storage allocated at build time. Shapes
// are fixed once a node exists, so this never reallocates; reshape outputs
// share their input's storage and need no work.
template <class T>
void Graph<T>::eval_node(Node& n) {
  const int64_t sz = n.value.size();
  T* o = n.value.data();
  switch (n.op) {
    case Op::Leaf:
    case Op::Reshape:
      return;
    case Op::Add: {
      const T* pa = at(n.a).value.data();
      const T* pb = at(n.b).value.data();
      for (int64_t i = 0; i < sz; ++i) o[i] = pa[i] + pb[i];
      return;
    }
    case Op::AddScalar: {
      const T* pa = at(n.a).value.data();
      for (int64_t i = 0; i < sz; ++i) o[i] = pa[i] + n.scalar;
      return;
    }
    case Op::BiasAdd: {
      const Tensor<T>& a = at(n.a).value;
      const int64_t N = a.extent(0), F = a.extent(1);
      const T* pa = a.data();
      const T* pb = at(n.b).value.data();
      for (int64_t r = 0; r < N; ++r)
        for (int64_t f = 0; f < F; ++f) o[r * F + f] = pa[r * F + f] + pb[f];
      return;
    }
    case Op::Mul: {
      const T* pa = at(n.a).value.data();
      const T* pb = at(n.b).value.data();
      for (int64_t i = 0; i < sz; ++i) o[i] = pa[i] * pb[i];
      return;
    }
    case Op::MulScalar: {
      const T* pa = at(n.a).value.data();
      for (int64_t i = 0; i < sz; ++i) o[i] = pa[i] * n.scalar;
      return;
    }
    case Op::Matmul: {
      const Tensor<T>& a = at(n.a).value;
      const Tensor<T>& b = at(n.b).value;
      const int64_t N = a.extent(0), K = a.extent(1), M = b.extent(1);
      blas::gemm(false, false, N, M, K, T(1), a.data(), K, b.data(), M, T(0), o, M);
      return;
    }
    case Op::Conv2d: {
      const Tensor<T>& x = at(n.a).value;
      const Tensor<T>& w = at(n.b).value;
      const ConvDims d = conv_dims(x, w, n.pad);
      const int64_t BP = d.B * d.P;
      Tensor<T> cols = n.cols.defined() ? n.cols : pool_->tensor({d.R, BP});
      im2col(x.data(), d, n.pad, cols.data());
      Tensor<T> y2 = pool_->tensor({d.Cout, BP});
      blas::gemm(false, false, d.Cout, BP, d.R, T(1), w.data(), d.R, cols.data(), BP, T(0), y2.data(), BP);
      const T* pbias = n.c >= 0 ? at(n.c).value.data() : nullptr;
      for (int64_t nn = 0; nn < d.B; ++nn) {
        for (int64_t co = 0; co < d.Cout; ++co) {
          const T* src = y2.data() + co * BP + nn * d.P;
          T* dst = o + (nn * d.Cout + co) * d.P;
          if (pbias) {
            const T bv = pbias[co];
            for (int64_t j = 0; j < d.P; ++j) dst[j] = src[j] + bv;
          } else {
            std::memcpy(dst, src, static_cast<size_t>(d.P) * sizeof(T));
          }
        }
      }
      return;
    }
    case Op::MaxPool2x2: {
      const Tensor<T>& a = at(n.a).value;
      const int64_t B = a.extent(0), C = a.extent(1), H = a.extent(2), W = a.extent(3);
      const int64_t OH = H / 2, OW = W / 2;
      const T* in = a.data();
      uint8_t* idx = n.idx.data();
      for (int64_t bc = 0; bc < B * C; ++bc) {
        const T* img = in + bc * H * W;
        T* ob = o + bc * OH * OW;
        uint8_t* ix = idx + bc * OH * OW;
        for (int64_t oh = 0; oh < OH; ++oh) {
          const T* r0 = img + (2 * oh) * W;
          const T* r1 = r0 + W;
          for (int64_t ow = 0; ow < OW; ++ow) {
            const T v[4] = {r0[2 * ow], r0[2 * ow + 1], r1[2 * ow], r1[2 * ow + 1]};
            int best = 0;
            // ties break toward the first element in window scan order
            for (int k = 1; k < 4; ++k)
              if (v[k] > v[best]) best = k;
            ob[oh * OW + ow] = v[best];
            ix[oh * OW + ow] = static_cast<uint8_t>(best);
          }
        }
      }
      return;
    }
    case Op::Relu: {
      const T* pa = at(n.a).value.data();
      for (int64_t i = 0; i < sz; ++i) o[i] = pa[i] > T(0) ? pa[i] : T(0);
      return;
    }
    case Op::Log: {
      const T* pa = at(n.a).value.data();
      for (int64_t i = 0; i < sz; ++i) o[i] = std::log(pa[i]);
      return;
    }
    case Op::Exp: {
      const T* pa = at(n.a).value.data();
      for (int64_t i = 0; i < sz; ++i) o[i] = std::exp(pa[i]);
      return;
    }
    case Op::Sum:
    case Op::Mean: {
      const Tensor<T>& a = at(n.a).value;
      const T* pa = a.data();
      const T scale = n.op == Op::Mean ? n.scalar : T(1);
      if (n.axis == kAllAxes) {
        double s = 0;
        for (int64_t i = 0; i < a.size(); ++i) s += static_cast<double>(pa[i]);
        o[0] = static_cast<T>(s) * scale;
      } else {
        int64_t outer, mid, inner;
        reduce_dims<T>(a.shape(), n.axis, &outer, &mid, &inner);
        for (int64_t u = 0; u < outer; ++u) {
          for (int64_t i = 0; i < inner; ++i) {
            double s = 0;
            for (int64_t m = 0; m < mid; ++m) s += static_cast<double>(pa[(u * mid + m) * inner + i]);
            o[u * inner + i] = static_cast<T>(s) * scale;
          }
        }
      }
      return;
    }
    case Op::Select: {
      const T* pm = at(n.c).value.data();
      const T* pa = at(n.a).value.data();
      const T* pb = at(n.b).value.data();
      for (int64_t i = 0; i < sz; ++i) o[i] = pm[i] != T(0) ? pa[i] : pb[i];
      return;
    }
    case Op::TileRows: {
      const Tensor<T>& a = at(n.a).value;
      const size_t bytes = static_cast<size_t>(a.size()) * sizeof(T);
      for (int r = 0; r < n.reps; ++r) std::memcpy(o + r * a.size(), a.data(), bytes);
      return;
    }
    case Op::SoftmaxRows: {
      const Tensor<T>& a = at(n.a).value;
      const int64_t N = a.extent(0), K = a.extent(1);
      const T* z = a.data();
      for (int64_t r = 0; r < N; ++r) {
        const T* zr = z + r * K;
        T* pr = o + r * K;
        T m = zr[0];
        for (int64_t k = 1; k < K; ++k) m = std::max(m, zr[k]);
        double s = 0;
        for (int64_t k = 0; k < K; ++k) {
          pr[k] = std::exp(zr[k] - m);
          s += static_cast<double>(pr[k]);
        }
        const T inv = static_cast<T>(1.0 / s);
        for (int64_t k = 0; k < K; ++k) pr[k] *= inv;
      }
      return;
    }
    case Op::RowEntropy: {
      const Tensor<T>& a = at(n.a).value;
      const int64_t N = a.extent(0), K = a.extent(1);
      const T* pp = a.data();
      const T clamp = n.scalar;
      for (int64_t r = 0; r < N; ++r) {
        const T* pr = pp + r * K;
        double s = 0;
        for (int64_t k = 0; k < K; ++k) {
          const T pt = pr[k] < clamp ? clamp : pr[k];
          s -= static_cast<double>(pr[k]) * std::log(static_cast<double>(pt));
        }
        o[r] = static_cast<T>(s);
      }
      return;
    }
    case Op::SoftmaxXent: {
      const Tensor<T>& a = at(n.a).value;
      const int64_t N = a.extent(0), K = a.extent(1);
      const T* z = a.data();
      T* p = n.aux.data();
      for (int64_t r = 0; r < N; ++r) {
        const T* zr = z + r * K;
        T* pr = p + r * K;
        T m = zr[0];
        for (int64_t k = 1; k < K; ++k) m = std::max(m, zr[k]);
        double s = 0;
        for (int64_t k = 0; k < K; ++k) s += std::exp(static_cast<double>(zr[k] - m));
        const double lse = static_cast<double>(m) + std::log(s);
        for (int64_t k = 0; k < K; ++k) pr[k] = static_cast<T>(std::exp(static_cast<double>(zr[k]) - lse));
        o[r] = static_cast<T>(lse - static_cast<double>(zr[n.labels[static_cast<size_t>(r)]]));
      }
      return;
    }
  }
  throw Error("eval_node: unhandled op");
}

template <class T>
void Graph<T>::recompute() {
  for (Node& n : nodes_) {
    if (n.op == Op::Leaf) continue;
    eval_node(n);
    if (opt_.check_finite) check_value(n);
  }
}

template <class T>
Tensor<T> Graph<T>::value(int id) const {
  return at(id).value;
}

template <class T>
Tensor<T> Graph<T>::grad(int id) {
  Node& n = at(id);
  ensure_grad(n);
  if (!n.grad_init) {
    n.grad.fill(T(0));
    n.grad_init = true;
  }
  return n.grad;
}

template <class T>
bool Graph<T>::grad_reached(int id) const {
  return at(id).grad_init;
}

template <class T>
bool Graph<T>::requires_grad(int id) const {
  return at(id).requires_grad;
}

template <class T>
void Graph<T>::ensure_grad(Node& n) {
  if (!n.grad.defined() || n.grad.size() != n.value.size()) {
    n.grad = fresh(n.value.shape());
    n.grad_init = false;
  }
}

template <class T>
void Graph<T>::zero_grads() {
  for (Node& n : nodes_) n.grad_init = false;
}

template <class T>
void Graph<T>::reset() {
  nodes_.clear();
}

template <class T>
void Graph<T>::backward(int root) {
  backward(root, {});
}

template <class T>
void Graph<T>::backward(int root, const std::vector<int>& wrt) {
  Node& r = at(root);
  if (r.value.size() != 1) throw ShapeError("backward: root must be scalar, got " + shape_str(r.value.shape()));
  for (int id : wrt)
    if (!at(id).requires_grad) throw Error("backward: wrt target does not require grad");
  if (!r.requires_grad) return;  // loss independent of every grad leaf

  std::vector<uint8_t> need(nodes_.size());
  if (wrt.empty()) {
    for (size_t i = 0; i < nodes_.size(); ++i) need[i] = nodes_[i].requires_grad;
  } else {
    for (int id : wrt) need[static_cast<size_t>(id)] = 1;
    for (int i = 0; i <= root; ++i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (n.op == Op::Leaf) continue;
      uint8_t v = need[static_cast<size_t>(i)];
      if (n.a >= 0) v |= need[static_cast<size_t>(n.a)];
      if (n.b >= 0) v |= need[static_cast<size_t>(n.b)];
      if (n.c >= 0) v |= need[static_cast<size_t>(n.c)];
      need[static_cast<size_t>(i)] = v;
    }
    if (!need[static_cast<size_t>(root)]) return;
  }

  // Interior grads are per-pass scratch; only leaf grads persist and
  // accumulate across repeated backward calls.
  for (Node& n : nodes_)
    if (n.op != Op::Leaf) n.grad_init = false;

  ensure_grad(r);
  if (r.op == Op::Leaf) {
    if (!r.grad_init) {
      r.grad.fill(T(0));
      r.grad_init = true;
    }
    r.grad[0] += T(1);
    return;
  }
  r.grad[0] = T(1);
  r.grad_init = true;

  for (int i = root; i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (!n.grad_init || n.op == Op::Leaf) continue;
    backprop_node(i, need);
  }
}

template <class T>
void Graph<T>::backprop_node(int id, const std::vector<uint8_t>& need) {
  Node& n = nodes_[static_cast<size_t>(id)];
  const T* g = n.grad.data();
  const int64_t sz = n.value.size();

  auto wants = [&](int op_id) { return op_id >= 0 && need[static_cast<size_t>(op_id)]; };
  auto dst = [&](int op_id) -> Node& {
    Node& d = nodes_[static_cast<size_t>(op_id)];
    ensure_grad(d);
    return d;
  };

  switch (n.op) {
    case Op::Leaf:
      return;

    case Op::Add: {
      if (wants(n.a)) {
        Node& d = dst(n.a);
        acc(d.grad.data(), g, sz, d.grad_init);
        d.grad_init = true;
      }
      if (wants(n.b)) {
        Node& d = dst(n.b);
        acc(d.grad.data(), g, sz, d.grad_init);
        d.grad_init = true;
      }
      return;
    }

    case Op::AddScalar: {
      if (wants(n.a)) {
        Node& d = dst(n.a);
        acc(d.grad.data(), g, sz, d.grad_init);
        d.grad_init = true;
      }
      return;
    }

    case Op::BiasAdd: {
      const int64_t N = n.value.extent(0), F = n.value.extent(1);
      if (wants(n.a)) {
        Node& d = dst(n.a);
        acc(d.grad.data(), g, sz, d.grad_init);
        d.grad_init = true;
      }
      if (wants(n.b)) {
        Node& d = dst(n.b);
        T* db = d.grad.data();
        if (!d.grad_init) std::memset(db, 0, static_cast<size_t>(F) * sizeof(T));
        for (int64_t r = 0; r < N; ++r)
          for (int64_t f = 0; f < F; ++f) db[f] += g[r * F + f];
        d.grad_init = true;
      }
      return;
    }

    case Op::Mul: {
      const T* va = nodes_[static_cast<size_t>(n.a)].value.data();
      const T* vb = nodes_[static_cast<size_t>(n.b)].value.data();
      if (wants(n.a)) {
        Node& d = dst(n.a);
        acc_expr(d.grad.data(), sz, d.grad_init, [&](int64_t i) { return g[i] * vb[i]; });
        d.grad_init = true;
      }
      if (wants(n.b)) {
        Node& d = dst(n.b);
        acc_expr(d.grad.data(), sz, d.grad_init, [&](int64_t i) { return g[i] * va[i]; });
        d.grad_init = true;
      }
      return;
    }

    case Op::MulScalar: {
      if (wants(n.a)) {
        Node& d = dst(n.a);
        const T c = n.scalar;
        acc_expr(d.grad.data(), sz, d.grad_init, [&](int64_t i) { return g[i] * c; });
        d.grad_init = true;
      }
      return;
    }

    case Op::Matmul: {
      Node& na = nodes_[static_cast<size_t>(n.a)];
      Node& nb = nodes_[static_cast<size_t>(n.b)];
      const int64_t N = na.value.extent(0), K = na.value.extent(1), M = nb.value.extent(1);
      if (wants(n.a)) {
        Node& d = dst(n.a);
        blas::gemm(false, true, N, K, M, T(1), g, M, nb.value.data(), M, d.grad_init ? T(1) : T(0), d.grad.data(), K);
        d.grad_init = true;
      }
      if (wants(n.b)) {
        Node& d = dst(n.b);
        blas::gemm(true, false, K, M, N, T(1), na.value.data(), K, g, M, d.grad_init ? T(1) : T(0), d.grad.data(), M);
        d.grad_init = true;
      }
      return;
    }

    case Op::Conv2d: {
      Node& nx = nodes_[static_cast<size_t>(n.a)];
      Node& nw = nodes_[static_cast<size_t>(n.b)];
      const ConvDims d = conv_dims(nx.value, nw.value, n.pad);
      const int64_t BP = d.B * d.P;
      // (Cout, B*P) view of the output gradient
      Tensor<T> g2 = pool_->tensor({d.Cout, BP});
      for (int64_t nn = 0; nn < d.B; ++nn)
        for (int64_t co = 0; co < d.Cout; ++co)
          std::memcpy(g2.data() + co * BP + nn * d.P, g + (nn * d.Cout + co) * d.P,
                      static_cast<size_t>(d.P) * sizeof(T));
      if (wants(n.b)) {
        Node& dw = dst(n.b);
        if (!n.cols.defined()) {
          n.cols = pool_->tensor({d.R, BP});
          im2col(nx.value.data(), d, n.pad, n.cols.data());
        }
        blas::gemm(false, true, d.Cout, d.R, BP, T(1), g2.data(), BP, n.cols.data(), BP,
                   dw.grad_init ? T(1) : T(0), dw.grad.data(), d.R);
        dw.grad_init = true;
      }
      if (n.c >= 0 && wants(n.c)) {
        Node& db = dst(n.c);
        T* bg = db.grad.data();
        if (!db.grad_init) std::memset(bg, 0, static_cast<size_t>(d.Cout) * sizeof(T));
        for (int64_t co = 0; co < d.Cout; ++co) {
          const T* row = g2.data() + co * BP;
          double s = 0;
          for (int64_t j = 0; j < BP; ++j) s += static_cast<double>(row[j]);
          bg[co] += static_cast<T>(s);
        }
        db.grad_init = true;
      }
      if (wants(n.a)) {
        Node& dx = dst(n.a);
        Tensor<T> dcols = pool_->tensor({d.R, BP});
        blas::gemm(true, false, d.R, BP, d.Cout, T(1), nw.value.data(), d.R, g2.data(), BP, T(0), dcols.data(), BP);
        if (!dx.grad_init) dx.grad.fill(T(0));
        col2im_add(dcols.data(), d, n.pad, dx.grad.data());
        dx.grad_init = true;
      }
      return;
    }

    case Op::MaxPool2x2: {
      if (!wants(n.a)) return;
      Node& d = dst(n.a);
      const int64_t B = n.value.extent(0), C = n.value.extent(1), OH = n.value.extent(2), OW = n.value.extent(3);
      const int64_t W = OW * 2;
      if (!d.grad_init) d.grad.fill(T(0));
      T* dx = d.grad.data();
      const uint8_t* idx = n.idx.data();
      for (int64_t bc = 0; bc < B * C; ++bc) {
        T* img = dx + bc * (OH * 2) * W;
        const T* go = g + bc * OH * OW;
        const uint8_t* ix = idx + bc * OH * OW;
        for (int64_t oh = 0; oh < OH; ++oh) {
          for (int64_t ow = 0; ow < OW; ++ow) {
            const int k = ix[oh * OW + ow];
            const int64_t ih = 2 * oh + (k >> 1), iw = 2 * ow + (k & 1);
            img[ih * W + iw] += go[oh * OW + ow];
          }
        }
      }
      d.grad_init = true;
      return;
    }

    case Op::Relu: {
      if (!wants(n.a)) return;
      Node& d = dst(n.a);
      const T* va = nodes_[static_cast<size_t>(n.a)].value.data();
      acc_expr(d.grad.data(), sz, d.grad_init, [&](int64_t i) { return va[i] > T(0) ? g[i] : T(0); });
      d.grad_init = true;
      return;
    }

    case Op::Log: {
      if (!wants(n.a)) return;
      Node& d = dst(n.a);
      const T* va = nodes_[static_cast<size_t>(n.a)].value.data();
      acc_expr(d.grad.data(), sz, d.grad_init, [&](int64_t i) { return g[i] / va[i]; });
      d.grad_init = true;
      return;
    }

    case Op::Exp: {
      if (!wants(n.a)) return;
      Node& d = dst(n.a);
      const T* vo = n.value.data();
      acc_expr(d.grad.data(), sz, d.grad_init, [&](int64_t i) { return g[i] * vo[i]; });
      d.grad_init = true;
      return;
    }

    case Op::Sum:
    case Op::Mean: {
      if (!wants(n.a)) return;
      Node& d = dst(n.a);
      const T f = n.op == Op::Mean ? n.scalar : T(1);
      const Shape& is = d.value.shape();
      if (n.axis == kAllAxes) {
        const T gv = g[0] * f;
        acc_expr(d.grad.data(), d.value.size(), d.grad_init, [&](int64_t) { return gv; });
      } else {
        int64_t outer, mid, inner;
        reduce_dims<T>(is, n.axis, &outer, &mid, &inner);
        T* dg = d.grad.data();
        if (!d.grad_init) {
          for (int64_t u = 0; u < outer; ++u)
            for (int64_t m = 0; m < mid; ++m)
              for (int64_t i = 0; i < inner; ++i) dg[(u * mid + m) * inner + i] = g[u * inner + i] * f;
        } else {
          for (int64_t u = 0; u < outer; ++u)
            for (int64_t m = 0; m < mid; ++m)
              for (int64_t i = 0; i < inner; ++i) dg[(u * mid + m) * inner + i] += g[u * inner + i] * f;
        }
      }
      d.grad_init = true;
      return;
    }

    case Op::Select: {
      const T* pm = nodes_[static_cast<size_t>(n.c)].value.data();
      if (wants(n.a)) {
        Node& d = dst(n.a);
        acc_expr(d.grad.data(), sz, d.grad_init, [&](int64_t i) { return pm[i] != T(0) ? g[i] : T(0); });
        d.grad_init = true;
      }
      if (wants(n.b)) {
        Node& d = dst(n.b);
        acc_expr(d.grad.data(), sz, d.grad_init, [&](int64_t i) { return pm[i] != T(0) ? T(0) : g[i]; });
        d.grad_init = true;
      }
      return;
    }

    case Op::Reshape: {
      if (!wants(n.a)) return;
      Node& d = dst(n.a);
      acc(d.grad.data(), g, sz, d.grad_init);
      d.grad_init = true;
      return;
    }

    case Op::TileRows: {
      if (!wants(n.a)) return;
      Node& d = dst(n.a);
      const int64_t in_sz = d.value.size();
      T* dg = d.grad.data();
      int start = 0;
      if (!d.grad_init) {
        std::memcpy(dg, g, static_cast<size_t>(in_sz) * sizeof(T));
        start = 1;
      }
      for (int r = start; r < n.reps; ++r) {
        const T* src = g + static_cast<int64_t>(r) * in_sz;
        for (int64_t i = 0; i < in_sz; ++i) dg[i] += src[i];
      }
      d.grad_init = true;
      return;
    }

    case Op::SoftmaxRows: {
      if (!wants(n.a)) return;
      Node& d = dst(n.a);
      const int64_t N = n.value.extent(0), K = n.value.extent(1);
      const T* p = n.value.data();
      T* dz = d.grad.data();
      for (int64_t r = 0; r < N; ++r) {
        const T* pr = p + r * K;
        const T* gr = g + r * K;
        double t = 0;
        for (int64_t k = 0; k < K; ++k) t += static_cast<double>(gr[k]) * static_cast<double>(pr[k]);
        if (!d.grad_init) {
          for (int64_t k = 0; k < K; ++k) dz[r * K + k] = pr[k] * static_cast<T>(gr[k] - t);
        } else {
          for (int64_t k = 0; k < K; ++k) dz[r * K + k] += pr[k] * static_cast<T>(gr[k] - t);
        }
      }
      d.grad_init = true;
      return;
    }

    case Op::RowEntropy: {
      if (!wants(n.a)) return;
      Node& d = dst(n.a);
      Node& na = nodes_[static_cast<size_t>(n.a)];
      const int64_t N = na.value.extent(0), K = na.value.extent(1);
      const T c = n.scalar;
      const T* p = na.value.data();
      T* dp = d.grad.data();
      for (int64_t r = 0; r < N; ++r) {
        const T gh = g[r];
        for (int64_t k = 0; k < K; ++k) {
          const T pv = p[r * K + k];
          const T pt = pv < c ? c : pv;
          const T contrib = -gh * (std::log(pt) + (pv < c ? T(0) : T(1)));
          if (!d.grad_init)
            dp[r * K + k] = contrib;
          else
            dp[r * K + k] += contrib;
        }
      }
      d.grad_init = true;
      return;
    }

    case Op::SoftmaxXent: {
      if (!wants(n.a)) return;
      Node& d = dst(n.a);
      const int64_t N = n.aux.extent(0), K = n.aux.extent(1);
      const T* p = n.aux.data();
      T* dz = d.grad.data();
      for (int64_t r = 0; r < N; ++r) {
        const T gr = g[r];
        const int32_t y = n.labels[static_cast<size_t>(r)];
        for (int64_t k = 0; k < K; ++k) {
          const T v = gr * (p[r * K + k] - (k == y ? T(1) : T(0)));
          if (!d.grad_init)
            dz[r * K + k] = v;
          else
            dz[r * K + k] += v;
        }
      }
      d.grad_init = true;
      return;
    }
  }
}

template class Graph<float>;
template class Graph<double>;

}  // namespace uat
