#include "uat/ensemble.hpp"

#include <cstring>
#include <fstream>

#include "uat/serialize.hpp"

namespace uat {

namespace {
constexpr uint32_t kCheckpointMagic = 0x55415445;  // "UATE"
constexpr uint32_t kCheckpointVersion = 1;
}  // namespace

template <class T>
Ensemble<T>::Ensemble(Architecture arch, int members, uint64_t base_seed) : arch_(std::move(arch)) {
  if (members < 1) throw ConfigError("ensemble needs at least one member");
  seeds_.reserve(static_cast<size_t>(members));
  members_.reserve(static_cast<size_t>(members));
  for (int m = 0; m < members; ++m) {
    const uint64_t s = derive_seed(base_seed, static_cast<uint64_t>(m));
    for (uint64_t prev : seeds_)
      if (prev == s) throw ConfigError("derived member seeds collide");
    seeds_.push_back(s);
    members_.emplace_back(arch_, s);
  }
}

template <class T>
int64_t Ensemble<T>::forward_passes() const {
  int64_t n = 0;
  for (const auto& m : members_) n += m.forward_passes();
  return n;
}

template <class T>
void Ensemble<T>::reseed_masks(uint64_t seed) {
  for (size_t m = 0; m < members_.size(); ++m) members_[m].reseed_masks(derive_seed(seed, m));
}

template <class T>
PredictiveSampleSet<T> Ensemble<T>::predict_samples(const Tensor<T>& x, int S, PredictMode mode) {
  if (S < 1) throw ConfigError("predict_samples needs S >= 1");
  const int s_eff = mode == PredictMode::Deterministic ? 1 : S;
  const MaskMode mask = mode == PredictMode::Deterministic ? MaskMode::Disabled : MaskMode::SampleNew;
  const int64_t B = x.extent(0);
  const int64_t K = arch_.num_classes;
  const int64_t M = size();

  PredictiveSampleSet<T> set;
  set.probs = Tensor<T>::uninitialized({s_eff, M, B, K});
  for (int64_t m = 0; m < M; ++m) {
    Graph<T> g;
    auto bind = members_[static_cast<size_t>(m)].bind(g, /*trainable=*/false);
    const int logits = members_[static_cast<size_t>(m)].forward(bind, g.leaf(x), s_eff, mask);
    const Tensor<T> p = g.value(g.softmax_rows(logits));  // (s_eff*B, K)
    for (int64_t s = 0; s < s_eff; ++s)
      for (int64_t b = 0; b < B; ++b)
        std::memcpy(set.probs.data() + ((s * M + m) * B + b) * K, p.data() + (s * B + b) * K,
                    static_cast<size_t>(K) * sizeof(T));
  }
  return set;
}

template <class T>
Tensor<T> Ensemble<T>::mean_distribution(const PredictiveSampleSet<T>& set) {
  const int64_t S = set.samples(), M = set.members(), B = set.batch(), K = set.classes();
  Tensor<T> mean({B, K});
  const double inv = 1.0 / static_cast<double>(S * M);
  std::vector<double> acc(static_cast<size_t>(K));
  for (int64_t b = 0; b < B; ++b) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (int64_t s = 0; s < S; ++s) {
      for (int64_t m = 0; m < M; ++m) {
        const T* p = set.row(s, m, b);
        for (int64_t k = 0; k < K; ++k) acc[static_cast<size_t>(k)] += static_cast<double>(p[k]);
      }
    }
    for (int64_t k = 0; k < K; ++k) mean[b * K + k] = static_cast<T>(acc[static_cast<size_t>(k)] * inv);
  }
  return mean;
}

template <class T>
void Ensemble<T>::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open checkpoint for writing: " + path);
  write_u32le(os, kCheckpointMagic);
  write_u32le(os, kCheckpointVersion);
  write_string(os, arch_.name);
  write_u32le(os, static_cast<uint32_t>(arch_.input_shape.size()));
  for (int64_t e : arch_.input_shape) write_u64le(os, static_cast<uint64_t>(e));
  write_u64le(os, static_cast<uint64_t>(arch_.num_classes));
  write_u32le(os, static_cast<uint32_t>(members_.size()));
  for (size_t m = 0; m < members_.size(); ++m) {
    write_u64le(os, seeds_[m]);
    const auto& params = members_[m].params();
    write_u32le(os, static_cast<uint32_t>(params.size()));
    for (const auto& p : params) write_tensor(os, p);
  }
  if (!os) throw DataError("checkpoint write failed: " + path);
}

template <class T>
Ensemble<T> Ensemble<T>::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path);
  if (read_u32le(is) != kCheckpointMagic) throw FormatError("not an ensemble checkpoint: " + path);
  if (read_u32le(is) != kCheckpointVersion) throw FormatError("unsupported checkpoint version");
  const std::string name = read_string(is);
  const uint32_t rank = read_u32le(is);
  if (rank > 8) throw FormatError("absurd input rank in checkpoint");
  Shape input_shape(rank);
  for (uint32_t i = 0; i < rank; ++i) input_shape[i] = static_cast<int64_t>(read_u64le(is));
  const int64_t num_classes = static_cast<int64_t>(read_u64le(is));
  const uint32_t members = read_u32le(is);
  if (members == 0 || members > 1024) throw FormatError("absurd member count in checkpoint");

  const Architecture arch = build_architecture(name, input_shape, num_classes);
  Ensemble<T> ens(arch, static_cast<int>(members), 0);
  for (uint32_t m = 0; m < members; ++m) {
    ens.seeds_[m] = read_u64le(is);
    ens.members_[m] = Model<T>(arch, ens.seeds_[m]);
    auto& params = ens.members_[m].params();
    if (read_u32le(is) != params.size()) throw FormatError("checkpoint parameter count mismatch");
    for (auto& p : params) {
      const Tensor<float> t = read_tensor(is);
      if (!same_shape(t.shape(), p.shape()))
        throw FormatError("checkpoint parameter shape mismatch: " + shape_str(t.shape()) + " vs " +
                          shape_str(p.shape()));
      for (int64_t i = 0; i < p.size(); ++i) p[i] = static_cast<T>(t[i]);
    }
  }
  return ens;
}

template class Ensemble<float>;
template class Ensemble<double>;
template struct PredictiveSampleSet<float>;
template struct PredictiveSampleSet<double>;

}  // namespace uat
