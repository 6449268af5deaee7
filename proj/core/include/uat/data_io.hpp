#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <uat/errors.hpp>
#include <uat/rng.hpp>
#include <uat/tensor.hpp>

namespace uat {

// Fully materialized dataset. Images always live in [0,1]; labels are empty
// for sets that only serve as out-of-distribution probes.
template <typename T>
struct Dataset {
  Tensor<T> images;             // (N,C,H,W) pixels or (N,D) points
  std::vector<int32_t> labels;  // class ids in [0,K), or empty
  std::string tag;
  std::string split = "train";

  int64_t size() const { return images.rank() == 0 ? 0 : images.shape()[0]; }
  bool labeled() const { return !labels.empty(); }
};

// IDX ingestion (big-endian): magic 0x00000803 for image files (N,H,W bytes),
// 0x00000801 for label files. Pixels are scaled by 1/255 into [0,1] and the
// image tensor comes out as (N,1,H,W). An empty labels_path loads images only.
// Bad magic or a short file is a FormatError; an image/label count mismatch
// is a DataError. Nothing is ever downloaded; paths must exist locally.
template <typename T>
Dataset<T> load_idx(const std::string& images_path, const std::string& labels_path = "",
                    const std::string& tag = "");

// Gaussian noise images: every value drawn from Normal(0.5, 0.25) and clipped
// to [0,1]. Unlabeled. n < 1 is a ConfigError.
template <typename T>
Dataset<T> gen_fake_gaussian(int64_t n, const Shape& image_shape, Rng& rng);

enum class Synthetic2d { TwoGaussians, RingVsBlob };

// Accepts "two-gaussians" and "ring-vs-blob"; anything else is a ConfigError.
Synthetic2d parse_synthetic_kind(const std::string& kind);

// Desk-scale labeled 2-d tasks on [0,1]^2.
//   two-gaussians: class 0 around (0.3,0.3), class 1 around (0.7,0.7), both
//                  isotropic with the given sd.
//   ring-vs-blob:  class 0 a blob at (0.5,0.5) with the given sd; class 1 a
//                  ring of radius 0.35 with radial noise 0.4*sd.
template <typename T>
Dataset<T> gen_synthetic_2d(Synthetic2d kind, int64_t n_per_class, Rng& rng, double sd = 0.05);

// Companion out-of-distribution points lying off the ID support: a radius
// 0.45 ring for two-gaussians, and the empty annulus at radius 0.175 between
// blob and ring for ring-vs-blob. Unlabeled.
template <typename T>
Dataset<T> gen_synthetic_2d_ood(Synthetic2d kind, int64_t n, Rng& rng);

// First n examples, same tag/split. n exceeding the size is a ConfigError.
template <typename T>
Dataset<T> take(const Dataset<T>& ds, int64_t n);

// One epoch over [0,n): a permutation partition into batches of batch_size,
// the last batch possibly short. shuffle=false keeps the identity order and
// draws nothing.
std::vector<std::vector<int64_t>> batch_indices(int64_t n, int64_t batch_size, bool shuffle,
                                                Rng& rng);

// Row gather along axis 0 (copies).
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, const std::vector<int64_t>& idx);
std::vector<int32_t> gather_labels(const std::vector<int32_t>& y, const std::vector<int64_t>& idx);

extern template struct Dataset<float>;
extern template struct Dataset<double>;
extern template Dataset<float> load_idx(const std::string&, const std::string&, const std::string&);
extern template Dataset<double> load_idx(const std::string&, const std::string&, const std::string&);
extern template Dataset<float> gen_fake_gaussian(int64_t, const Shape&, Rng&);
extern template Dataset<double> gen_fake_gaussian(int64_t, const Shape&, Rng&);
extern template Dataset<float> gen_synthetic_2d(Synthetic2d, int64_t, Rng&, double);
extern template Dataset<double> gen_synthetic_2d(Synthetic2d, int64_t, Rng&, double);
extern template Dataset<float> gen_synthetic_2d_ood(Synthetic2d, int64_t, Rng&);
extern template Dataset<double> gen_synthetic_2d_ood(Synthetic2d, int64_t, Rng&);
extern template Dataset<float> take(const Dataset<float>&, int64_t);
extern template Dataset<double> take(const Dataset<double>&, int64_t);
extern template Tensor<float> gather_rows(const Tensor<float>&, const std::vector<int64_t>&);
extern template Tensor<double> gather_rows(const Tensor<double>&, const std::vector<int64_t>&);

}  // namespace uat
