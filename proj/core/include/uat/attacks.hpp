#pragma once

#include <vector>

#include "uat/uncertainty.hpp"

namespace uat {

// An l-infinity budget in pixel units on [0,1] inputs, plus the cap it was
// drawn against; normalized() is the epsilon-bar used by the training loss.
struct AttackMagnitude {
  double epsilon = 0;
  double epsilon_max = 0;
  double normalized() const { return epsilon == 0 ? 0 : epsilon / epsilon_max; }
};

AttackMagnitude make_magnitude(double epsilon, double epsilon_max);

// One uniform draw from [0, epsilon_max); one magnitude per batch.
AttackMagnitude sample_epsilon(Rng& rng, double epsilon_max);

// x +/- eps*sign(grad), clipped to [0,1]. sign(0) = 0, so zero-gradient
// coordinates are left untouched.
template <class T>
Tensor<T> perturb_ascent(const Tensor<T>& x, const Tensor<T>& grad, double eps);
template <class T>
Tensor<T> perturb_descent(const Tensor<T>& x, const Tensor<T>& grad, double eps);

// Label-targeting attack: ascend the cross-entropy of a deterministic
// (disabled-mask) forward, on one member or on the ensemble-mean loss.
template <class T>
Tensor<T> fgsm(Model<T>& model, const Tensor<T>& x, const std::vector<int32_t>& labels,
               const AttackMagnitude& eps);
template <class T>
Tensor<T> fgsm(Ensemble<T>& ens, const Tensor<T>& x, const std::vector<int32_t>& labels,
               const AttackMagnitude& eps);

// Uncertainty-targeting attack: descend the mutual information, so positive
// epsilon moves inputs toward lower predicted epistemic uncertainty. Masks
// follow `mode` (fresh sample by default; the sampled masks stay stored on the
// members for frozen re-evaluation).
template <class T>
Tensor<T> ufgsm(Ensemble<T>& ens, const Tensor<T>& x, const AttackMagnitude& eps, int S,
                MaskMode mode = MaskMode::SampleNew);

}  // namespace uat
