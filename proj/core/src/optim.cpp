#include <uat/optim.hpp>

#include <cmath>

namespace uat {

template <typename T>
Adam<T>::Adam(AdamOptions opt) : opt_(opt) {
  if (!(opt_.lr >= 0)) throw ConfigError("adam: lr must be nonnegative");
  if (opt_.beta1 < 0 || opt_.beta1 >= 1) throw ConfigError("adam: beta1 must lie in [0,1)");
  if (opt_.beta2 < 0 || opt_.beta2 >= 1) throw ConfigError("adam: beta2 must lie in [0,1)");
  if (!(opt_.eps > 0)) throw ConfigError("adam: eps must be positive");
}

template <typename T>
void Adam<T>::attach(std::vector<Tensor<T>>& params) {
  if (t_ > 0) throw ConfigError("adam: attach all parameters before the first step");
  for (auto& p : params) {
    params_.push_back(&p);
    m_.push_back(Tensor<T>::full(p.shape(), T(0)));
    v_.push_back(Tensor<T>::full(p.shape(), T(0)));
  }
}

template <typename T>
void Adam<T>::step(const std::vector<Tensor<T>>& grads) {
  if (grads.size() != params_.size()) throw ShapeError("adam: gradient count does not match attached parameters");
  for (size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].shape() != params_[i]->shape())
      throw ShapeError("adam: gradient shape does not match its parameter");
    if (opt_.check_finite) {
      for (const T g : grads[i])
        if (!std::isfinite(static_cast<double>(g))) throw NumericsError("adam: non-finite gradient");
    }
  }

  ++t_;
  const T b1 = static_cast<T>(opt_.beta1);
  const T b2 = static_cast<T>(opt_.beta2);
  const T one_minus_b1 = static_cast<T>(1.0 - opt_.beta1);
  const T one_minus_b2 = static_cast<T>(1.0 - opt_.beta2);
  const T bc1 = static_cast<T>(1.0 - std::pow(opt_.beta1, static_cast<double>(t_)));
  const T bc2 = static_cast<T>(1.0 - std::pow(opt_.beta2, static_cast<double>(t_)));
  const T lr = static_cast<T>(opt_.lr);
  const T eps = static_cast<T>(opt_.eps);

  for (size_t i = 0; i < grads.size(); ++i) {
    T* p = params_[i]->data();
    T* m = m_[i].data();
    T* v = v_[i].data();
    const T* g = grads[i].data();
    const int64_t n = grads[i].size();
    for (int64_t j = 0; j < n; ++j) {
      m[j] = b1 * m[j] + one_minus_b1 * g[j];
      v[j] = b2 * v[j] + one_minus_b2 * g[j] * g[j];
      const T mhat = m[j] / bc1;
      const T vhat = v[j] / bc2;
      p[j] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

template class Adam<float>;
template class Adam<double>;

}  // namespace uat
