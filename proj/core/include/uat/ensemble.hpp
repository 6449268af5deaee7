#pragma once

#include <string>
#include <vector>

#include "uat/nn.hpp"

namespace uat {

enum class PredictMode { McDropout, Deterministic };

// Dense stack of per-pass categorical distributions: probs[s][m][b][k] is
// member m's class-k probability for batch element b under mask sample s.
template <class T>
struct PredictiveSampleSet {
  Tensor<T> probs;  // (S, M, B, K)

  int64_t samples() const { return probs.extent(0); }
  int64_t members() const { return probs.extent(1); }
  int64_t batch() const { return probs.extent(2); }
  int64_t classes() const { return probs.extent(3); }
  const T* row(int64_t s, int64_t m, int64_t b) const {
    return probs.data() + ((s * probs.extent(1) + m) * probs.extent(2) + b) * probs.extent(3);
  }
};

// M independently seeded models over one shared architecture. Members are
// owned; copying is disabled so parameter storage is never silently aliased.
template <class T>
class Ensemble {
 public:
  Ensemble(Architecture arch, int members, uint64_t base_seed);
  Ensemble(Ensemble&&) = default;
  Ensemble& operator=(Ensemble&&) = default;
  Ensemble(const Ensemble&) = delete;
  Ensemble& operator=(const Ensemble&) = delete;

  int size() const { return static_cast<int>(members_.size()); }
  const Architecture& architecture() const { return arch_; }
  uint64_t member_seed(int m) const { return seeds_[static_cast<size_t>(m)]; }
  Model<T>& member(int m) { return members_[static_cast<size_t>(m)]; }
  const Model<T>& member(int m) const { return members_[static_cast<size_t>(m)]; }

  int64_t forward_passes() const;
  // Member m's mask stream is reseeded with derive_seed(seed, m).
  void reseed_masks(uint64_t seed);

  // S mask samples per member (mc-dropout) or one disabled-mask pass per
  // member (deterministic; S is ignored and no RNG state advances).
  PredictiveSampleSet<T> predict_samples(const Tensor<T>& x, int S, PredictMode mode);

  static Tensor<T> mean_distribution(const PredictiveSampleSet<T>& set);

  void save(const std::string& path) const;
  static Ensemble load(const std::string& path);

 private:
  Architecture arch_;
  std::vector<uint64_t> seeds_;
  std::vector<Model<T>> members_;
};

extern template class Ensemble<float>;
extern template class Ensemble<double>;
extern template struct PredictiveSampleSet<float>;
extern template struct PredictiveSampleSet<double>;

}  // namespace uat
