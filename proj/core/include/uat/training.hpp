#pragma once

#include <string>
#include <vector>

#include <uat/attacks.hpp>
#include <uat/augment.hpp>
#include <uat/data_io.hpp>
#include <uat/ensemble.hpp>
#include <uat/optim.hpp>
#include <uat/uncertainty.hpp>

namespace uat {

struct LossConfig {
  double beta = 5.0;        // weight on the uncertainty-discrepancy term
  double epsilon_max = 0.02;
  int num_classes = 10;     // fixes the entropy ceiling ln K
  bool batch_mean = false;  // pool the discrepancy over the batch before squaring
  double h_max() const;
};

struct TrainOptions {
  int epochs = 10;
  int batch_size = 128;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  AugmentPolicy aug;
  uint64_t data_seed = 0;    // shuffling and augmentation draws
  uint64_t attack_seed = 0;  // per-batch magnitude draws (adversarial regimes)
  int mc_samples = 10;       // forward samples inside the uncertainty term
  LossConfig loss;
  std::string log_path;      // JSONL epoch records when nonempty
};

// (u_adv - u_clean) / ln K.
double normalized_discrepancy(double u_clean, double u_adv, int num_classes);

// Per-sample normalized uncertainty rise, with dropout masks sampled at the
// clean evaluation and replayed frozen for the perturbed one.
template <typename T>
std::vector<double> uncertainty_discrepancy(Ensemble<T>& ens, const Tensor<T>& x,
                                            const Tensor<T>& x_adv, int S);

// Handles into one assembled loss graph.
template <typename T>
struct UatLossParts {
  int loss = -1;      // scalar root: ce_mean + unc_term
  int ce_mean = -1;   // mean member cross-entropy on the clean batch
  int unc_term = -1;  // beta * mean squared (discrepancy - normalized magnitude)
  int x_clean = -1;   // clean input leaf (gradient-carrying)
  int x_adv = -1;     // crafted input leaf (a constant in differentiation)
  Tensor<T> crafted;  // value held by x_adv
  std::vector<typename Model<T>::Binding> binds;  // trainable, in member order
};

// Assembles the full training loss on g: mean member cross-entropy on the
// clean batch, an uncertainty-descending perturbation of magnitude eps
// crafted inside the same graph, and the weighted squared gap between the
// normalized uncertainty rise and the normalized magnitude. Dropout masks are
// sampled once for the clean uncertainty evaluation and replayed frozen for
// the perturbed one. Crafting is treated as a constant: gradients flow to the
// members through the cross-entropy and through both uncertainty evaluations,
// never through the perturbation itself. Leaves all leaf gradients zeroed.
template <typename T>
UatLossParts<T> build_uat_loss(Graph<T>& g, Ensemble<T>& ens, const Tensor<T>& x,
                               const std::vector<int32_t>& y, AttackMagnitude eps,
                               const LossConfig& cfg, int S);

// The scalar loss value alone.
template <typename T>
double uat_loss(Ensemble<T>& ens, const Tensor<T>& x, const std::vector<int32_t>& y,
                AttackMagnitude eps, const LossConfig& cfg, int S);

// The three regimes. Each is bit-reproducible given the seeds in opt and
// never mutates the dataset. Members train independently in the first two;
// the third couples them through the shared uncertainty term and takes one
// joint optimizer step per batch.
template <typename T>
void train_ordinary(Ensemble<T>& ens, const Dataset<T>& ds, const TrainOptions& opt);
template <typename T>
void train_lat(Ensemble<T>& ens, const Dataset<T>& ds, const TrainOptions& opt);
template <typename T>
void train_uat(Ensemble<T>& ens, const Dataset<T>& ds, const TrainOptions& opt);

extern template std::vector<double> uncertainty_discrepancy(Ensemble<float>&, const Tensor<float>&, const Tensor<float>&, int);
extern template std::vector<double> uncertainty_discrepancy(Ensemble<double>&, const Tensor<double>&, const Tensor<double>&, int);
extern template struct UatLossParts<float>;
extern template struct UatLossParts<double>;
extern template UatLossParts<float> build_uat_loss(Graph<float>&, Ensemble<float>&, const Tensor<float>&, const std::vector<int32_t>&, AttackMagnitude, const LossConfig&, int);
extern template UatLossParts<double> build_uat_loss(Graph<double>&, Ensemble<double>&, const Tensor<double>&, const std::vector<int32_t>&, AttackMagnitude, const LossConfig&, int);
extern template double uat_loss(Ensemble<float>&, const Tensor<float>&, const std::vector<int32_t>&, AttackMagnitude, const LossConfig&, int);
extern template double uat_loss(Ensemble<double>&, const Tensor<double>&, const std::vector<int32_t>&, AttackMagnitude, const LossConfig&, int);
extern template void train_ordinary(Ensemble<float>&, const Dataset<float>&, const TrainOptions&);
extern template void train_ordinary(Ensemble<double>&, const Dataset<double>&, const TrainOptions&);
extern template void train_lat(Ensemble<float>&, const Dataset<float>&, const TrainOptions&);
extern template void train_lat(Ensemble<double>&, const Dataset<double>&, const TrainOptions&);
extern template void train_uat(Ensemble<float>&, const Dataset<float>&, const TrainOptions&);
extern template void train_uat(Ensemble<double>&, const Dataset<double>&, const TrainOptions&);

}  // namespace uat
