#include <uat/augment.hpp>

#include <cmath>

namespace uat {

namespace {

template <typename T>
void check_image(const Tensor<T>& img) {
  if (img.rank() != 3) throw ShapeError("augment: expected a (C,H,W) image");
}

}  // namespace

template <typename T>
Tensor<T> shift_crop(const Tensor<T>& img, int dx, int dy, int pad) {
  check_image(img);
  if (pad < 0) throw ConfigError("augment: pad must be nonnegative");
  if (dx < 0 || dx > 2 * pad || dy < 0 || dy > 2 * pad)
    throw ConfigError("augment: crop offset outside [0, 2*pad]");
  const int64_t c = img.shape()[0], h = img.shape()[1], w = img.shape()[2];
  auto out = Tensor<T>::full(img.shape(), T(0));
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t r = 0; r < h; ++r) {
      const int64_t sr = r + dy - pad;
      if (sr < 0 || sr >= h) continue;
      for (int64_t col = 0; col < w; ++col) {
        const int64_t sc = col + dx - pad;
        if (sc < 0 || sc >= w) continue;
        out[(ch * h + r) * w + col] = img[(ch * h + sr) * w + sc];
      }
    }
  return out;
}

template <typename T>
Tensor<T> rotate_nn(const Tensor<T>& img, double angle_deg) {
  check_image(img);
  if (angle_deg == 0.0) return img.clone();
  const int64_t c = img.shape()[0], h = img.shape()[1], w = img.shape()[2];
  const double th = angle_deg * 3.14159265358979323846 / 180.0;
  const double cs = std::cos(th), sn = std::sin(th);
  const double cy = 0.5 * static_cast<double>(h - 1);
  const double cx = 0.5 * static_cast<double>(w - 1);
  auto out = Tensor<T>::full(img.shape(), T(0));
  for (int64_t r = 0; r < h; ++r)
    for (int64_t col = 0; col < w; ++col) {
      const double dr = static_cast<double>(r) - cy;
      const double dc = static_cast<double>(col) - cx;
      const int64_t sr = std::llround(cy + cs * dr - sn * dc);
      const int64_t sc = std::llround(cx + sn * dr + cs * dc);
      if (sr < 0 || sr >= h || sc < 0 || sc >= w) continue;
      for (int64_t ch = 0; ch < c; ++ch) out[(ch * h + r) * w + col] = img[(ch * h + sr) * w + sc];
    }
  return out;
}

template <typename T>
Tensor<T> hflip_image(const Tensor<T>& img) {
  check_image(img);
  const int64_t c = img.shape()[0], h = img.shape()[1], w = img.shape()[2];
  auto out = Tensor<T>::uninitialized(img.shape());
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t r = 0; r < h; ++r)
      for (int64_t col = 0; col < w; ++col)
        out[(ch * h + r) * w + col] = img[(ch * h + r) * w + (w - 1 - col)];
  return out;
}

template <typename T>
Tensor<T> augment_batch(const Tensor<T>& x, const AugmentPolicy& policy, Rng& rng) {
  if (policy.pad < 0) throw ConfigError("augment: pad must be nonnegative");
  if (policy.max_rotate_deg < 0) throw ConfigError("augment: max_rotate_deg must be nonnegative");
  if (policy.is_null()) return x.clone();
  if (x.rank() != 4) throw ShapeError("augment: expected a (B,C,H,W) batch");
  const int64_t b = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  const Shape img_shape = {c, h, w};
  const int64_t img_size = c * h * w;

  auto out = Tensor<T>::uninitialized(x.shape());
  for (int64_t i = 0; i < b; ++i) {
    auto img = Tensor<T>::uninitialized(img_shape);
    std::copy(x.data() + i * img_size, x.data() + (i + 1) * img_size, img.data());
    if (policy.pad > 0) {
      const int dx = static_cast<int>(rng.below(static_cast<uint64_t>(2 * policy.pad + 1)));
      const int dy = static_cast<int>(rng.below(static_cast<uint64_t>(2 * policy.pad + 1)));
      img = shift_crop(img, dx, dy, policy.pad);
    }
    if (policy.max_rotate_deg > 0) {
      const double angle = rng.uniform(-policy.max_rotate_deg, policy.max_rotate_deg);
      img = rotate_nn(img, angle);
    }
    if (policy.hflip && rng.uniform() < 0.5) img = hflip_image(img);
    std::copy(img.data(), img.data() + img_size, out.data() + i * img_size);
  }
  return out;
}

template Tensor<float> shift_crop(const Tensor<float>&, int, int, int);
template Tensor<double> shift_crop(const Tensor<double>&, int, int, int);
template Tensor<float> rotate_nn(const Tensor<float>&, double);
template Tensor<double> rotate_nn(const Tensor<double>&, double);
template Tensor<float> hflip_image(const Tensor<float>&);
template Tensor<double> hflip_image(const Tensor<double>&);
template Tensor<float> augment_batch(const Tensor<float>&, const AugmentPolicy&, Rng&);
template Tensor<double> augment_batch(const Tensor<double>&, const AugmentPolicy&, Rng&);

}  // namespace uat
