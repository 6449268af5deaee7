#pragma once

#include <cstdint>
#include <vector>

#include <uat/errors.hpp>
#include <uat/tensor.hpp>

namespace uat {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool check_finite = true;  // reject non-finite gradients before touching state
};

// First and second moment estimates with bias correction, applied in place to
// the attached parameter tensors. One instance may span several parameter
// groups (e.g. every member of an ensemble) so a single step updates them all.
template <typename T>
class Adam {
 public:
  explicit Adam(AdamOptions opt = {});

  // Registers tensors that step() updates in place. Pointers into `params`
  // are retained: the owning object must stay alive and unmoved. Must be
  // called before the first step.
  void attach(std::vector<Tensor<T>>& params);

  int64_t size() const { return static_cast<int64_t>(params_.size()); }
  int64_t steps() const { return t_; }
  const AdamOptions& options() const { return opt_; }

  // grads[i] pairs with the i-th attached tensor, in attach order.
  void step(const std::vector<Tensor<T>>& grads);

 private:
  AdamOptions opt_;
  std::vector<Tensor<T>*> params_;
  std::vector<Tensor<T>> m_, v_;
  int64_t t_ = 0;
};

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace uat
