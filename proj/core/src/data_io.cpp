#include <uat/data_io.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>

namespace uat {

namespace {

std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("data: cannot open " + path);
  is.seekg(0, std::ios::end);
  const auto len = static_cast<size_t>(is.tellg());
  is.seekg(0, std::ios::beg);
  std::vector<uint8_t> buf(len);
  if (len > 0) is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(len));
  if (!is) throw FormatError("data: short read from " + path);
  return buf;
}

uint32_t be32(const uint8_t* p) {
  return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

}  // namespace

template <typename T>
Dataset<T> load_idx(const std::string& images_path, const std::string& labels_path,
                    const std::string& tag) {
  const auto buf = read_file(images_path);
  if (buf.size() < 16) throw FormatError("idx: truncated header in " + images_path);
  if (be32(buf.data()) != 0x00000803u) throw FormatError("idx: bad image magic in " + images_path);
  const int64_t n = be32(buf.data() + 4);
  const int64_t h = be32(buf.data() + 8);
  const int64_t w = be32(buf.data() + 12);
  const size_t expect = 16 + static_cast<size_t>(n) * h * w;
  if (buf.size() != expect) throw FormatError("idx: payload size mismatch in " + images_path);

  Dataset<T> ds;
  ds.tag = tag;
  ds.images = Tensor<T>::uninitialized({n, 1, h, w});
  for (int64_t i = 0; i < n * h * w; ++i) ds.images[i] = static_cast<T>(buf[16 + i]) / T(255);

  if (!labels_path.empty()) {
    const auto lab = read_file(labels_path);
    if (lab.size() < 8) throw FormatError("idx: truncated header in " + labels_path);
    if (be32(lab.data()) != 0x00000801u) throw FormatError("idx: bad label magic in " + labels_path);
    const int64_t ln = be32(lab.data() + 4);
    if (lab.size() != 8 + static_cast<size_t>(ln)) throw FormatError("idx: payload size mismatch in " + labels_path);
    if (ln != n) throw DataError("idx: image/label count mismatch");
    ds.labels.resize(static_cast<size_t>(ln));
    for (int64_t i = 0; i < ln; ++i) ds.labels[static_cast<size_t>(i)] = lab[8 + static_cast<size_t>(i)];
  }
  return ds;
}

template <typename T>
Dataset<T> gen_fake_gaussian(int64_t n, const Shape& image_shape, Rng& rng) {
  if (n < 1) throw ConfigError("fake: n must be at least 1");
  Shape full = {n};
  full.insert(full.end(), image_shape.begin(), image_shape.end());
  Dataset<T> ds;
  ds.tag = "fake";
  ds.images = Tensor<T>::uninitialized(full);
  for (auto& v : ds.images) {
    const double d = rng.normal(0.5, 0.25);
    v = static_cast<T>(std::min(1.0, std::max(0.0, d)));
  }
  return ds;
}

Synthetic2d parse_synthetic_kind(const std::string& kind) {
  if (kind == "two-gaussians") return Synthetic2d::TwoGaussians;
  if (kind == "ring-vs-blob") return Synthetic2d::RingVsBlob;
  throw ConfigError("synthetic: unknown kind '" + kind + "'");
}

namespace {

constexpr double kPi = 3.14159265358979323846;

double clip01(double v) { return std::min(1.0, std::max(0.0, v)); }

}  // namespace

template <typename T>
Dataset<T> gen_synthetic_2d(Synthetic2d kind, int64_t n_per_class, Rng& rng, double sd) {
  if (n_per_class < 1) throw ConfigError("synthetic: n_per_class must be at least 1");
  if (sd < 0) throw ConfigError("synthetic: sd must be nonnegative");
  const int64_t n = 2 * n_per_class;
  Dataset<T> ds;
  ds.images = Tensor<T>::uninitialized({n, 2});
  ds.labels.resize(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const int32_t cls = i < n_per_class ? 0 : 1;
    double x, y;
    if (kind == Synthetic2d::TwoGaussians) {
      const double cx = cls == 0 ? 0.3 : 0.7;
      x = rng.normal(cx, sd);
      y = rng.normal(cx, sd);
    } else if (cls == 0) {
      x = rng.normal(0.5, sd);
      y = rng.normal(0.5, sd);
    } else {
      const double th = rng.uniform(0.0, 2 * kPi);
      const double r = 0.35 + rng.normal(0.0, 0.4 * sd);
      x = 0.5 + r * std::cos(th);
      y = 0.5 + r * std::sin(th);
    }
    ds.images[2 * i] = static_cast<T>(clip01(x));
    ds.images[2 * i + 1] = static_cast<T>(clip01(y));
    ds.labels[static_cast<size_t>(i)] = cls;
  }
  ds.tag = kind == Synthetic2d::TwoGaussians ? "two-gaussians" : "ring-vs-blob";
  return ds;
}

template <typename T>
Dataset<T> gen_synthetic_2d_ood(Synthetic2d kind, int64_t n, Rng& rng) {
  if (n < 1) throw ConfigError("synthetic: n must be at least 1");
  Dataset<T> ds;
  ds.images = Tensor<T>::uninitialized({n, 2});
  const double radius = kind == Synthetic2d::TwoGaussians ? 0.45 : 0.175;
  for (int64_t i = 0; i < n; ++i) {
    const double th = rng.uniform(0.0, 2 * kPi);
    const double r = radius + rng.normal(0.0, 0.01);
    ds.images[2 * i] = static_cast<T>(clip01(0.5 + r * std::cos(th)));
    ds.images[2 * i + 1] = static_cast<T>(clip01(0.5 + r * std::sin(th)));
  }
  ds.tag = (kind == Synthetic2d::TwoGaussians ? std::string("two-gaussians") : std::string("ring-vs-blob")) + "-ood";
  return ds;
}

template <typename T>
Dataset<T> take(const Dataset<T>& ds, int64_t n) {
  if (n < 1 || n > ds.size()) throw ConfigError("take: n outside [1, dataset size]");
  Dataset<T> out;
  out.tag = ds.tag;
  out.split = ds.split;
  Shape shape = ds.images.shape();
  shape[0] = n;
  const int64_t row = ds.images.size() / ds.size();
  out.images = Tensor<T>::uninitialized(shape);
  std::copy(ds.images.data(), ds.images.data() + n * row, out.images.data());
  if (ds.labeled()) out.labels.assign(ds.labels.begin(), ds.labels.begin() + n);
  return out;
}

std::vector<std::vector<int64_t>> batch_indices(int64_t n, int64_t batch_size, bool shuffle,
                                                Rng& rng) {
  if (n < 1) throw DataError("batch: empty dataset");
  if (batch_size < 1) throw ConfigError("batch: batch_size must be at least 1");
  std::vector<int64_t> perm(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) perm[static_cast<size_t>(i)] = i;
  if (shuffle)
    for (int64_t i = n - 1; i > 0; --i) std::swap(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(rng.below(i + 1))]);
  std::vector<std::vector<int64_t>> out;
  for (int64_t at = 0; at < n; at += batch_size) {
    const int64_t end = std::min(n, at + batch_size);
    out.emplace_back(perm.begin() + at, perm.begin() + end);
  }
  return out;
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, const std::vector<int64_t>& idx) {
  if (x.rank() < 1) throw ShapeError("gather: rank-0 input");
  const int64_t n = x.shape()[0];
  const int64_t row = n == 0 ? 0 : x.size() / n;
  Shape shape = x.shape();
  shape[0] = static_cast<int64_t>(idx.size());
  auto out = Tensor<T>::uninitialized(shape);
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= n) throw DataError("gather: index out of range");
    std::copy(x.data() + idx[i] * row, x.data() + (idx[i] + 1) * row, out.data() + static_cast<int64_t>(i) * row);
  }
  return out;
}

std::vector<int32_t> gather_labels(const std::vector<int32_t>& y, const std::vector<int64_t>& idx) {
  std::vector<int32_t> out(idx.size());
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || static_cast<size_t>(idx[i]) >= y.size()) throw DataError("gather: index out of range");
    out[i] = y[static_cast<size_t>(idx[i])];
  }
  return out;
}

template struct Dataset<float>;
template struct Dataset<double>;
template Dataset<float> load_idx(const std::string&, const std::string&, const std::string&);
template Dataset<double> load_idx(const std::string&, const std::string&, const std::string&);
template Dataset<float> gen_fake_gaussian(int64_t, const Shape&, Rng&);
template Dataset<double> gen_fake_gaussian(int64_t, const Shape&, Rng&);
template Dataset<float> gen_synthetic_2d(Synthetic2d, int64_t, Rng&, double);
template Dataset<double> gen_synthetic_2d(Synthetic2d, int64_t, Rng&, double);
template Dataset<float> gen_synthetic_2d_ood(Synthetic2d, int64_t, Rng&);
template Dataset<double> gen_synthetic_2d_ood(Synthetic2d, int64_t, Rng&);
template Dataset<float> take(const Dataset<float>&, int64_t);
template Dataset<double> take(const Dataset<double>&, int64_t);
template Tensor<float> gather_rows(const Tensor<float>&, const std::vector<int64_t>&);
template Tensor<double> gather_rows(const Tensor<double>&, const std::vector<int64_t>&);

}  // namespace uat
