#pragma once

#include <optional>
#include <string>
#include <vector>

#include <uat/attacks.hpp>
#include <uat/data_io.hpp>
#include <uat/ensemble.hpp>
#include <uat/uncertainty.hpp>

namespace uat {

// Scores are oriented so that higher always means more out-of-distribution,
// whichever scoring method produced them.
struct ScoredDataset {
  std::vector<double> scores;
  std::vector<int> labels;  // 0 = in-distribution, 1 = OOD
  std::string tag;
};

// Threshold sweep from the most OOD-looking score down. The first point is
// (0,0) at threshold +infinity; one point per distinct score value follows
// (ties grouped), and consuming every sample lands the last point on (1,1).
struct RocCurve {
  std::vector<double> fpr, tpr, thresholds;
  size_t size() const { return fpr.size(); }
};

RocCurve roc_curve(const ScoredDataset& data);

// Trapezoidal area under the curve.
double auc(const RocCurve& curve);

// Standardized partial area at FPR <= fpr_max: with A the trapezoidal area up
// to the cut (linear interpolation at the boundary), A_min = fpr_max^2/2 the
// chance area and A_max = fpr_max the perfect one, returns
// 0.5 * (1 + (A - A_min)/(A_max - A_min)), so 0.5 is chance and 1 is perfect.
double standardized_partial_auc(const RocCurve& curve, double fpr_max);

enum class ScoreMethod { MutualInfo, DeterministicEnsemble, SoftmaxConfidence };

// Accepts "mi", "de", "sm"; anything else is a ConfigError.
ScoreMethod parse_score_method(const std::string& name);
std::string score_method_name(ScoreMethod method);

// Per-sample OOD scores. mi: epistemic uncertainty across S stochastic
// passes of every member. de: the same decomposition over one deterministic
// pass per member. sm: one minus the max softmax of member 0's deterministic
// pass (the single-network confidence baseline).
template <typename T>
std::vector<double> score_samples(Ensemble<T>& ens, const Tensor<T>& x, ScoreMethod method, int S);

struct EvalOptions {
  ScoreMethod method = ScoreMethod::MutualInfo;
  int mc_samples = 10;  // S for stochastic scoring and densities
  double fpr_max = 0.01;
  int batch_size = 128;
  // When set, every OOD batch is perturbed by the uncertainty-descending
  // attack before scoring, with per-batch magnitude ~ U(0, epsilon_max). The
  // attack gradient uses the scoring regime's own uncertainty, so it is
  // rejected for sm scoring, which has none.
  std::optional<double> attack_epsilon_max;
  uint64_t attack_seed = 0;
};

struct EvalResult {
  ScoredDataset scored;
  RocCurve curve;
  double auc = 0;
  double pauc = 0;
  std::vector<DensityRow> densities;  // per-sample decomposition rows, ID then OOD
};

// Scores the ID set clean and the OOD set clean or attacked, assembles the
// labeled score set, and computes the curve and both areas.
template <typename T>
EvalResult run_ood_eval(Ensemble<T>& ens, const Dataset<T>& id_test, const Dataset<T>& ood_test,
                        const EvalOptions& opt);

// Deterministic mean-distribution argmax accuracy on a labeled set.
template <typename T>
double classification_accuracy(Ensemble<T>& ens, const Dataset<T>& ds, int batch_size = 128);

// Report files. All writers are byte-deterministic in their inputs.
void write_roc_csv(const std::string& path, const RocCurve& curve);
void write_metrics_json(const std::string& path, double auc_value, double pauc, double fpr_max,
                        const std::string& method, int64_t id_count, int64_t ood_count,
                        const std::string& config_hash);
// Self-contained ROC plot with a log-scaled FPR axis.
void render_roc_svg(const std::string& path, const RocCurve& curve, const std::string& title);

extern template std::vector<double> score_samples(Ensemble<float>&, const Tensor<float>&, ScoreMethod, int);
extern template std::vector<double> score_samples(Ensemble<double>&, const Tensor<double>&, ScoreMethod, int);
extern template EvalResult run_ood_eval(Ensemble<float>&, const Dataset<float>&, const Dataset<float>&, const EvalOptions&);
extern template EvalResult run_ood_eval(Ensemble<double>&, const Dataset<double>&, const Dataset<double>&, const EvalOptions&);
extern template double classification_accuracy(Ensemble<float>&, const Dataset<float>&, int);
extern template double classification_accuracy(Ensemble<double>&, const Dataset<double>&, int);

}  // namespace uat
