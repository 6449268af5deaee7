#include "uat/uncertainty.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>

namespace uat {

namespace {

template <class T>
double entropy_impl(const T* p, int64_t k, double clamp) {
  double sum = 0;
  for (int64_t i = 0; i < k; ++i) {
    const double v = static_cast<double>(p[i]);
    if (v < 0.0) throw DataError("entropy: negative probability");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-6) throw DataError("entropy: probabilities sum to " + std::to_string(sum));
  double h = 0;
  for (int64_t i = 0; i < k; ++i) {
    const double v = static_cast<double>(p[i]);
    h -= v * std::log(v < clamp ? clamp : v);
  }
  return h;
}

}  // namespace

double entropy(const double* p, int64_t k, double clamp) { return entropy_impl(p, k, clamp); }
double entropy(const float* p, int64_t k, double clamp) { return entropy_impl(p, k, clamp); }

template <class T>
UncertaintyReport decompose(const PredictiveSampleSet<T>& set) {
  const int64_t S = set.samples(), M = set.members(), B = set.batch(), K = set.classes();
  UncertaintyReport rep;
  rep.classes = K;
  rep.h_max = std::log(static_cast<double>(K));
  rep.total.resize(static_cast<size_t>(B));
  rep.epistemic.resize(static_cast<size_t>(B));
  rep.aleatoric.resize(static_cast<size_t>(B));

  std::vector<double> mean(static_cast<size_t>(K));
  const double inv = 1.0 / static_cast<double>(S * M);
  for (int64_t b = 0; b < B; ++b) {
    std::fill(mean.begin(), mean.end(), 0.0);
    double member_h = 0;
    for (int64_t s = 0; s < S; ++s) {
      for (int64_t m = 0; m < M; ++m) {
        const T* p = set.row(s, m, b);
        member_h += entropy(p, K);
        for (int64_t k = 0; k < K; ++k) mean[static_cast<size_t>(k)] += static_cast<double>(p[k]);
      }
    }
    for (double& v : mean) v *= inv;
    const double aleatoric = member_h * inv;
    const double mixture_h = entropy(mean.data(), K);
    // Jensen gives mixture_h >= aleatoric; the clamp only absorbs float noise.
    const double epistemic = std::max(0.0, mixture_h - aleatoric);
    rep.aleatoric[static_cast<size_t>(b)] = aleatoric;
    rep.epistemic[static_cast<size_t>(b)] = epistemic;
    rep.total[static_cast<size_t>(b)] = epistemic + aleatoric;
  }
  return rep;
}

template <class T>
std::vector<double> mutual_information(const PredictiveSampleSet<T>& set) {
  return decompose(set).epistemic;
}

template <class T>
int build_mutual_information(Graph<T>& g, Ensemble<T>& ens, std::vector<typename Model<T>::Binding>& binds,
                             int x, int S, MaskMode mode) {
  if (S < 1) throw ConfigError("mutual information needs S >= 1");
  if (static_cast<int>(binds.size()) != ens.size()) throw ConfigError("one binding per member required");
  const int64_t B = g.value(x).extent(0);
  const int64_t K = ens.architecture().num_classes;
  const int M = ens.size();

  int prob_sum = -1;  // (B,K) sum of member probabilities over all S*M passes
  int ent_sum = -1;   // (B,)  sum of per-pass entropies
  for (int m = 0; m < M; ++m) {
    auto& model = ens.member(m);
    const int trunk = model.forward_trunk(binds[static_cast<size_t>(m)], x);
    const int logits = model.forward_head(binds[static_cast<size_t>(m)], trunk, S, mode);
    const int probs = g.softmax_rows(logits);                            // (S*B, K)
    const int ent_b = g.sum(g.reshape(g.row_entropy(probs), {S, B}), 0);  // (B,)
    const int prob_b = g.sum(g.reshape(probs, {S, B, K}), 0);             // (B, K)
    prob_sum = prob_sum < 0 ? prob_b : g.add(prob_sum, prob_b);
    ent_sum = ent_sum < 0 ? ent_b : g.add(ent_sum, ent_b);
  }
  const T inv = T(1) / static_cast<T>(int64_t{S} * M);
  const int mixture_h = g.row_entropy(g.mul_scalar(prob_sum, inv));  // (B,)
  return g.sub(mixture_h, g.mul_scalar(ent_sum, inv));
}

template <class T>
Tensor<T> mutual_information_at(Ensemble<T>& ens, const Tensor<T>& x, int S, MaskMode mode) {
  Graph<T> g;
  std::vector<typename Model<T>::Binding> binds;
  binds.reserve(static_cast<size_t>(ens.size()));
  for (int m = 0; m < ens.size(); ++m) binds.push_back(ens.member(m).bind(g, /*trainable=*/false));
  return g.value(build_mutual_information(g, ens, binds, g.leaf(x), S, mode));
}

template <class T>
Tensor<T> grad_mi_wrt_input(Ensemble<T>& ens, const Tensor<T>& x, int S, MaskMode mode) {
  Graph<T> g;
  std::vector<typename Model<T>::Binding> binds;
  binds.reserve(static_cast<size_t>(ens.size()));
  for (int m = 0; m < ens.size(); ++m) binds.push_back(ens.member(m).bind(g, /*trainable=*/false));
  const int xi = g.leaf(x, /*requires_grad=*/true);
  const int u = build_mutual_information(g, ens, binds, xi, S, mode);
  g.backward(g.sum(u), {xi});
  return g.grad(xi);
}

void write_density_csv(std::ostream& os, const std::vector<DensityRow>& rows) {
  os << "dataset_tag,sample_index,total,epistemic,aleatoric\n";
  char buf[128];
  for (const DensityRow& r : rows) {
    std::snprintf(buf, sizeof buf, ",%lld,%.17g,%.17g,%.17g\n", static_cast<long long>(r.index), r.total,
                  r.epistemic, r.aleatoric);
    os << r.tag << buf;
  }
}

template UncertaintyReport decompose(const PredictiveSampleSet<float>&);
template UncertaintyReport decompose(const PredictiveSampleSet<double>&);
template std::vector<double> mutual_information(const PredictiveSampleSet<float>&);
template std::vector<double> mutual_information(const PredictiveSampleSet<double>&);
template int build_mutual_information(Graph<float>&, Ensemble<float>&, std::vector<Model<float>::Binding>&,
                                      int, int, MaskMode);
template int build_mutual_information(Graph<double>&, Ensemble<double>&, std::vector<Model<double>::Binding>&,
                                      int, int, MaskMode);
template Tensor<float> mutual_information_at(Ensemble<float>&, const Tensor<float>&, int, MaskMode);
template Tensor<double> mutual_information_at(Ensemble<double>&, const Tensor<double>&, int, MaskMode);
template Tensor<float> grad_mi_wrt_input(Ensemble<float>&, const Tensor<float>&, int, MaskMode);
template Tensor<double> grad_mi_wrt_input(Ensemble<double>&, const Tensor<double>&, int, MaskMode);

}  // namespace uat
