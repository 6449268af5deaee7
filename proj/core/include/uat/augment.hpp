#pragma once

#include <cstdint>

#include <uat/errors.hpp>
#include <uat/rng.hpp>
#include <uat/tensor.hpp>

namespace uat {

// Random crop after zero-padding, nearest-neighbour rotation, horizontal
// flip. A disabled stage draws nothing, so the null policy consumes no
// randomness and returns the batch unchanged.
struct AugmentPolicy {
  int pad = 0;                // zero-pad by this margin, then crop back to size
  double max_rotate_deg = 0;  // angle drawn uniformly from [-max, max]
  bool hflip = false;         // mirror left-right with probability 1/2
  bool is_null() const { return pad == 0 && max_rotate_deg == 0 && !hflip; }
};

// Single-image primitives on (C,H,W) tensors, exposed so the batch transform
// can be reproduced draw by draw.

// Crop of the zero-padded image at offset (dx columns, dy rows), both in
// [0, 2*pad]. Offset pad,pad is the identity.
template <typename T>
Tensor<T> shift_crop(const Tensor<T>& img, int dx, int dy, int pad);

// Nearest-neighbour rotation about the image centre; source pixels falling
// outside the frame read as zero. An angle of exactly 0.0 skips resampling,
// so it is an exact identity.
template <typename T>
Tensor<T> rotate_nn(const Tensor<T>& img, double angle_deg);

template <typename T>
Tensor<T> hflip_image(const Tensor<T>& img);

// Applies the policy to a (B,C,H,W) batch, image by image. Per image the
// draws are consumed in a fixed order: crop dx, crop dy, angle, flip coin;
// disabled stages draw nothing. The null policy accepts any shape.
template <typename T>
Tensor<T> augment_batch(const Tensor<T>& x, const AugmentPolicy& policy, Rng& rng);

extern template Tensor<float> shift_crop(const Tensor<float>&, int, int, int);
extern template Tensor<double> shift_crop(const Tensor<double>&, int, int, int);
extern template Tensor<float> rotate_nn(const Tensor<float>&, double);
extern template Tensor<double> rotate_nn(const Tensor<double>&, double);
extern template Tensor<float> hflip_image(const Tensor<float>&);
extern template Tensor<double> hflip_image(const Tensor<double>&);
extern template Tensor<float> augment_batch(const Tensor<float>&, const AugmentPolicy&, Rng&);
extern template Tensor<double> augment_batch(const Tensor<double>&, const AugmentPolicy&, Rng&);

}  // namespace uat
