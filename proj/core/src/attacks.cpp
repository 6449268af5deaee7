#include "uat/attacks.hpp"

namespace uat {

AttackMagnitude make_magnitude(double epsilon, double epsilon_max) {
  if (epsilon_max <= 0) throw ConfigError("epsilon_max must be positive");
  if (epsilon < 0 || epsilon > epsilon_max) throw ConfigError("epsilon must lie in [0, epsilon_max]");
  return {epsilon, epsilon_max};
}

AttackMagnitude sample_epsilon(Rng& rng, double epsilon_max) {
  if (epsilon_max <= 0) throw ConfigError("epsilon_max must be positive");
  return {rng.uniform(0.0, epsilon_max), epsilon_max};
}

namespace {

template <class T>
Tensor<T> perturb(const Tensor<T>& x, const Tensor<T>& grad, double eps) {
  if (!same_shape(x.shape(), grad.shape()))
    throw ShapeError("perturbation: gradient shape " + shape_str(grad.shape()) + " does not match input " +
                     shape_str(x.shape()));
  Tensor<T> out = Tensor<T>::uninitialized(x.shape());
  const T e = static_cast<T>(eps);
  for (int64_t i = 0; i < x.size(); ++i) {
    const T g = grad[i];
    const T sgn = static_cast<T>((g > T(0)) - (g < T(0)));
    T v = x[i] + e * sgn;
    if (v < T(0)) v = T(0);
    if (v > T(1)) v = T(1);
    out[i] = v;
  }
  return out;
}

template <class T>
Tensor<T> negated(const Tensor<T>& g) {
  Tensor<T> out = Tensor<T>::uninitialized(g.shape());
  for (int64_t i = 0; i < g.size(); ++i) out[i] = -g[i];
  return out;
}

}  // namespace

template <class T>
Tensor<T> perturb_ascent(const Tensor<T>& x, const Tensor<T>& grad, double eps) {
  return perturb(x, grad, eps);
}

template <class T>
Tensor<T> perturb_descent(const Tensor<T>& x, const Tensor<T>& grad, double eps) {
  return perturb(x, negated(grad), eps);
}

template <class T>
Tensor<T> fgsm(Model<T>& model, const Tensor<T>& x, const std::vector<int32_t>& labels,
               const AttackMagnitude& eps) {
  Graph<T> g;
  auto bind = model.bind(g, /*trainable=*/false);
  const int xi = g.leaf(x, /*requires_grad=*/true);
  const int loss = softmax_cross_entropy(g, model.forward(bind, xi, 1, MaskMode::Disabled), labels);
  g.backward(loss, {xi});
  return perturb_ascent(x, g.grad(xi), eps.epsilon);
}

template <class T>
Tensor<T> fgsm(Ensemble<T>& ens, const Tensor<T>& x, const std::vector<int32_t>& labels,
               const AttackMagnitude& eps) {
  Graph<T> g;
  const int xi = g.leaf(x, /*requires_grad=*/true);
  int loss_sum = -1;
  for (int m = 0; m < ens.size(); ++m) {
    auto bind = ens.member(m).bind(g, /*trainable=*/false);
    const int lm = softmax_cross_entropy(g, ens.member(m).forward(bind, xi, 1, MaskMode::Disabled), labels);
    loss_sum = loss_sum < 0 ? lm : g.add(loss_sum, lm);
  }
  g.backward(g.mul_scalar(loss_sum, T(1) / static_cast<T>(ens.size())), {xi});
  return perturb_ascent(x, g.grad(xi), eps.epsilon);
}

template <class T>
Tensor<T> ufgsm(Ensemble<T>& ens, const Tensor<T>& x, const AttackMagnitude& eps, int S, MaskMode mode) {
  return perturb_descent(x, grad_mi_wrt_input(ens, x, S, mode), eps.epsilon);
}

template Tensor<float> perturb_ascent(const Tensor<float>&, const Tensor<float>&, double);
template Tensor<double> perturb_ascent(const Tensor<double>&, const Tensor<double>&, double);
template Tensor<float> perturb_descent(const Tensor<float>&, const Tensor<float>&, double);
template Tensor<double> perturb_descent(const Tensor<double>&, const Tensor<double>&, double);
template Tensor<float> fgsm(Model<float>&, const Tensor<float>&, const std::vector<int32_t>&,
                            const AttackMagnitude&);
template Tensor<double> fgsm(Model<double>&, const Tensor<double>&, const std::vector<int32_t>&,
                             const AttackMagnitude&);
template Tensor<float> fgsm(Ensemble<float>&, const Tensor<float>&, const std::vector<int32_t>&,
                            const AttackMagnitude&);
template Tensor<double> fgsm(Ensemble<double>&, const Tensor<double>&, const std::vector<int32_t>&,
                             const AttackMagnitude&);
template Tensor<float> ufgsm(Ensemble<float>&, const Tensor<float>&, const AttackMagnitude&, int, MaskMode);
template Tensor<double> ufgsm(Ensemble<double>&, const Tensor<double>&, const AttackMagnitude&, int, MaskMode);

}  // namespace uat
