#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "uat/ensemble.hpp"

namespace uat {

// Per-sample decomposition in nats: total predictive entropy splits into
// epistemic (mutual information, the OOD score) plus aleatoric (mean member
// entropy). total is re-summed from the two parts so the additivity holds
// bit-exactly; it differs from H of the mean distribution by at most one ulp.
struct UncertaintyReport {
  std::vector<double> total;
  std::vector<double> epistemic;
  std::vector<double> aleatoric;
  int64_t classes = 0;
  double h_max = 0;  // ln(classes)
};

// Shannon entropy of one categorical distribution, natural log. Probabilities
// below `clamp` are clamped inside the log only, so exact zeros contribute
// exactly zero. Rejects vectors that are negative or do not sum to 1 within
// 1e-6.
double entropy(const double* p, int64_t k, double clamp = 1e-12);
double entropy(const float* p, int64_t k, double clamp = 1e-12);

template <class T>
double entropy(const Tensor<T>& p) {
  if (p.rank() != 1) throw ShapeError("entropy wants a rank-1 distribution, got " + shape_str(p.shape()));
  return entropy(p.data(), p.extent(0));
}

template <class T>
UncertaintyReport decompose(const PredictiveSampleSet<T>& set);

// decompose().epistemic: U = H[mean p] - mean H[p], clamped at zero.
template <class T>
std::vector<double> mutual_information(const PredictiveSampleSet<T>& set);

// Graph-side mutual information: appends every member's S-sample forward to
// `g` and returns a (batch,) node holding per-sample U. Gradients flow to the
// input (and to member parameters when the bindings are trainable). With
// MaskMode::ReuseLast the evaluation replays each member's stored masks, which
// makes U a deterministic function of x — the frozen-mask regime required
// around attacks and finite-difference checks. MaskMode::Disabled gives the
// deterministic-ensemble variant.
template <class T>
int build_mutual_information(Graph<T>& g, Ensemble<T>& ens, std::vector<typename Model<T>::Binding>& binds,
                             int x, int S, MaskMode mode);

// One-shot helpers over a scratch graph.
template <class T>
Tensor<T> mutual_information_at(Ensemble<T>& ens, const Tensor<T>& x, int S, MaskMode mode);
template <class T>
Tensor<T> grad_mi_wrt_input(Ensemble<T>& ens, const Tensor<T>& x, int S, MaskMode mode = MaskMode::SampleNew);

struct DensityRow {
  std::string tag;
  int64_t index = 0;
  double total = 0, epistemic = 0, aleatoric = 0;
};

// Columns: dataset_tag, sample_index, total, epistemic, aleatoric.
void write_density_csv(std::ostream& os, const std::vector<DensityRow>& rows);

}  // namespace uat
