#include "uat/evaluation.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <string>

namespace uat {

namespace {

// Shortest round-trip decimal form; byte-deterministic for a given value.
std::string fmt_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  return os;
}

}  // namespace

RocCurve roc_curve(const ScoredDataset& data) {
  const size_t n = data.scores.size();
  if (data.labels.size() != n)
    throw ShapeError("roc_curve: " + std::to_string(n) + " scores vs " +
                     std::to_string(data.labels.size()) + " labels");
  if (n == 0) throw DataError("roc_curve: empty score set");
  int64_t n_pos = 0, n_neg = 0;
  for (size_t i = 0; i < n; ++i) {
    if (!std::isfinite(data.scores[i]))
      throw DataError("roc_curve: non-finite score at index " + std::to_string(i));
    if (data.labels[i] != 0 && data.labels[i] != 1)
      throw DataError("roc_curve: labels must be 0 (ID) or 1 (OOD), got " +
                      std::to_string(data.labels[i]));
    ++(data.labels[i] == 1 ? n_pos : n_neg);
  }
  if (n_pos == 0 || n_neg == 0)
    throw DataError("roc_curve: need both classes, got " + std::to_string(n_pos) + " OOD and " +
                    std::to_string(n_neg) + " ID samples");

  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return data.scores[a] > data.scores[b]; });

  RocCurve c;
  c.fpr.push_back(0.0);
  c.tpr.push_back(0.0);
  c.thresholds.push_back(std::numeric_limits<double>::infinity());
  int64_t tp = 0, fp = 0;
  size_t i = 0;
  while (i < n) {
    const double s = data.scores[order[i]];
    while (i < n && data.scores[order[i]] == s) {
      ++(data.labels[order[i]] == 1 ? tp : fp);
      ++i;
    }
    c.fpr.push_back(static_cast<double>(fp) / static_cast<double>(n_neg));
    c.tpr.push_back(static_cast<double>(tp) / static_cast<double>(n_pos));
    c.thresholds.push_back(s);
  }
  return c;
}

double auc(const RocCurve& curve) {
  if (curve.size() < 2) throw DataError("auc: curve needs at least two points");
  double a = 0;
  for (size_t i = 1; i < curve.size(); ++i)
    a += (curve.fpr[i] - curve.fpr[i - 1]) * 0.5 * (curve.tpr[i] + curve.tpr[i - 1]);
  return a;
}

double standardized_partial_auc(const RocCurve& curve, double fpr_max) {
  if (!(fpr_max > 0.0) || fpr_max > 1.0)
    throw ConfigError("fpr_max must lie in (0, 1], got " + fmt_double(fpr_max));
  if (curve.size() < 2) throw DataError("standardized_partial_auc: curve needs at least two points");
  double a = 0;
  for (size_t i = 1; i < curve.size(); ++i) {
    const double f0 = curve.fpr[i - 1], f1 = curve.fpr[i];
    const double t0 = curve.tpr[i - 1], t1 = curve.tpr[i];
    if (f0 >= fpr_max) break;
    if (f1 <= fpr_max) {
      a += (f1 - f0) * 0.5 * (t0 + t1);
      continue;
    }
    const double t_cut = t0 + (t1 - t0) * (fpr_max - f0) / (f1 - f0);
    a += (fpr_max - f0) * 0.5 * (t0 + t_cut);
    break;
  }
  const double a_min = 0.5 * fpr_max * fpr_max;
  const double a_max = fpr_max;
  return 0.5 * (1.0 + (a - a_min) / (a_max - a_min));
}

ScoreMethod parse_score_method(const std::string& name) {
  if (name == "mi") return ScoreMethod::MutualInfo;
  if (name == "de") return ScoreMethod::DeterministicEnsemble;
  if (name == "sm") return ScoreMethod::SoftmaxConfidence;
  throw ConfigError("unknown scoring method '" + name + "' (expected mi, de, or sm)");
}

std::string score_method_name(ScoreMethod method) {
  switch (method) {
    case ScoreMethod::MutualInfo: return "mi";
    case ScoreMethod::DeterministicEnsemble: return "de";
    case ScoreMethod::SoftmaxConfidence: return "sm";
  }
  throw ConfigError("unknown scoring method enum value");
}

namespace {

// 1 - max softmax probability of member 0's deterministic pass.
template <typename T>
std::vector<double> softmax_scores(const PredictiveSampleSet<T>& det_set) {
  std::vector<double> out(static_cast<size_t>(det_set.batch()));
  for (int64_t b = 0; b < det_set.batch(); ++b) {
    const T* p = det_set.row(0, 0, b);
    T best = p[0];
    for (int64_t k = 1; k < det_set.classes(); ++k) best = std::max(best, p[k]);
    out[static_cast<size_t>(b)] = 1.0 - static_cast<double>(best);
  }
  return out;
}

}  // namespace

template <typename T>
std::vector<double> score_samples(Ensemble<T>& ens, const Tensor<T>& x, ScoreMethod method, int S) {
  switch (method) {
    case ScoreMethod::MutualInfo:
      return decompose(ens.predict_samples(x, S, PredictMode::McDropout)).epistemic;
    case ScoreMethod::DeterministicEnsemble:
      return decompose(ens.predict_samples(x, 1, PredictMode::Deterministic)).epistemic;
    case ScoreMethod::SoftmaxConfidence:
      return softmax_scores(ens.predict_samples(x, 1, PredictMode::Deterministic));
  }
  throw ConfigError("unknown scoring method enum value");
}

namespace {

template <typename T>
void validate_eval(const Dataset<T>& id_test, const Dataset<T>& ood_test, const EvalOptions& opt) {
  if (id_test.size() < 1 || ood_test.size() < 1)
    throw DataError("run_ood_eval: both evaluation sets must be non-empty");
  if (opt.mc_samples < 1)
    throw ConfigError("mc_samples must be >= 1, got " + std::to_string(opt.mc_samples));
  if (opt.batch_size < 1)
    throw ConfigError("batch_size must be >= 1, got " + std::to_string(opt.batch_size));
  if (!(opt.fpr_max > 0.0) || opt.fpr_max > 1.0)
    throw ConfigError("fpr_max must lie in (0, 1], got " + fmt_double(opt.fpr_max));
  if (opt.attack_epsilon_max) {
    if (!(*opt.attack_epsilon_max > 0.0))
      throw ConfigError("attack_epsilon_max must be > 0, got " + fmt_double(*opt.attack_epsilon_max));
    if (opt.method == ScoreMethod::SoftmaxConfidence)
      throw ConfigError(
          "the uncertainty-descending attack needs an uncertainty score; "
          "sm scoring cannot be attacked");
  }
}

// Scores one dataset batch by batch, appending per-sample score and density
// rows. When `attack_rng` is non-null each batch is first perturbed by the
// uncertainty-descending attack with a fresh magnitude ~ U(0, epsilon_max),
// crafted against the scoring regime's own uncertainty (stochastic masks for
// mi, disabled masks for de). Scoring afterwards draws its usual fresh masks.
template <typename T>
void score_dataset(Ensemble<T>& ens, const Dataset<T>& ds, const EvalOptions& opt, Rng* attack_rng,
                   const std::string& tag, std::vector<double>& scores,
                   std::vector<DensityRow>& rows) {
  Rng unused(0);  // identity order draws nothing
  const auto batches = batch_indices(ds.size(), opt.batch_size, false, unused);
  int64_t base = 0;
  for (const auto& idx : batches) {
    Tensor<T> xb = gather_rows(ds.images, idx);
    if (attack_rng != nullptr) {
      const AttackMagnitude eps = sample_epsilon(*attack_rng, *opt.attack_epsilon_max);
      if (opt.method == ScoreMethod::MutualInfo)
        xb = ufgsm(ens, xb, eps, opt.mc_samples, MaskMode::SampleNew);
      else
        xb = ufgsm(ens, xb, eps, 1, MaskMode::Disabled);
    }

    std::vector<double> batch_scores;
    UncertaintyReport rep;
    if (opt.method == ScoreMethod::MutualInfo) {
      rep = decompose(ens.predict_samples(xb, opt.mc_samples, PredictMode::McDropout));
      batch_scores = rep.epistemic;
    } else if (opt.method == ScoreMethod::DeterministicEnsemble) {
      rep = decompose(ens.predict_samples(xb, 1, PredictMode::Deterministic));
      batch_scores = rep.epistemic;
    } else {
      batch_scores = softmax_scores(ens.predict_samples(xb, 1, PredictMode::Deterministic));
      // sm has no decomposition of its own; report the stochastic one.
      rep = decompose(ens.predict_samples(xb, opt.mc_samples, PredictMode::McDropout));
    }

    for (size_t j = 0; j < idx.size(); ++j) {
      scores.push_back(batch_scores[j]);
      rows.push_back(DensityRow{tag, base + static_cast<int64_t>(j), rep.total[j], rep.epistemic[j],
                                rep.aleatoric[j]});
    }
    base += static_cast<int64_t>(idx.size());
  }
}

}  // namespace

template <typename T>
EvalResult run_ood_eval(Ensemble<T>& ens, const Dataset<T>& id_test, const Dataset<T>& ood_test,
                        const EvalOptions& opt) {
  validate_eval(id_test, ood_test, opt);

  EvalResult res;
  res.scored.tag = id_test.tag + "-vs-" + ood_test.tag;

  score_dataset(ens, id_test, opt, nullptr, id_test.tag, res.scored.scores, res.densities);
  const int64_t n_id = static_cast<int64_t>(res.scored.scores.size());

  Rng attack_rng(opt.attack_seed);
  const std::string ood_tag = opt.attack_epsilon_max ? ood_test.tag + "-adv" : ood_test.tag;
  score_dataset(ens, ood_test, opt, opt.attack_epsilon_max ? &attack_rng : nullptr, ood_tag,
                res.scored.scores, res.densities);

  res.scored.labels.assign(res.scored.scores.size(), 1);
  std::fill(res.scored.labels.begin(), res.scored.labels.begin() + n_id, 0);

  res.curve = roc_curve(res.scored);
  res.auc = auc(res.curve);
  res.pauc = standardized_partial_auc(res.curve, opt.fpr_max);
  return res;
}

template <typename T>
double classification_accuracy(Ensemble<T>& ens, const Dataset<T>& ds, int batch_size) {
  if (!ds.labeled()) throw DataError("classification_accuracy needs a labeled dataset");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1, got " + std::to_string(batch_size));
  Rng unused(0);
  const auto batches = batch_indices(ds.size(), batch_size, false, unused);
  int64_t hits = 0;
  for (const auto& idx : batches) {
    const Tensor<T> xb = gather_rows(ds.images, idx);
    const auto yb = gather_labels(ds.labels, idx);
    const auto set = ens.predict_samples(xb, 1, PredictMode::Deterministic);
    const Tensor<T> mean = Ensemble<T>::mean_distribution(set);
    const int64_t k = mean.extent(1);
    for (size_t j = 0; j < idx.size(); ++j) {
      const T* p = mean.data() + static_cast<int64_t>(j) * k;
      int32_t arg = 0;
      for (int64_t c = 1; c < k; ++c)
        if (p[c] > p[arg]) arg = static_cast<int32_t>(c);
      if (arg == yb[j]) ++hits;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(ds.size());
}

void write_roc_csv(const std::string& path, const RocCurve& curve) {
  auto os = open_out(path);
  os << "fpr,tpr,threshold\n";
  for (size_t i = 0; i < curve.size(); ++i) {
    const double th = curve.thresholds[i];
    os << fmt_double(curve.fpr[i]) << ',' << fmt_double(curve.tpr[i]) << ','
       << (std::isinf(th) ? std::string(th > 0 ? "inf" : "-inf") : fmt_double(th)) << '\n';
  }
  if (!os) throw DataError("failed writing '" + path + "'");
}

void write_metrics_json(const std::string& path, double auc_value, double pauc, double fpr_max,
                        const std::string& method, int64_t id_count, int64_t ood_count,
                        const std::string& config_hash) {
  auto os = open_out(path);
  os << "{\n";
  os << "  \"auc\": " << fmt_double(auc_value) << ",\n";
  os << "  \"config_hash\": \"" << config_hash << "\",\n";
  os << "  \"counts\": {\n";
  os << "    \"id\": " << id_count << ",\n";
  os << "    \"ood\": " << ood_count << "\n";
  os << "  },\n";
  os << "  \"fpr_max\": " << fmt_double(fpr_max) << ",\n";
  os << "  \"method\": \"" << method << "\",\n";
  os << "  \"pauc\": " << fmt_double(pauc) << "\n";
  os << "}\n";
  if (!os) throw DataError("failed writing '" + path + "'");
}

void render_roc_svg(const std::string& path, const RocCurve& curve, const std::string& title) {
  constexpr double kW = 640, kH = 480, kL = 72, kR = 24, kT = 40, kB = 56;
  constexpr double kFprFloor = 1e-4;
  const double plot_w = kW - kL - kR, plot_h = kH - kT - kB;
  const auto x_of = [&](double fpr) {
    const double f = std::max(fpr, kFprFloor);
    return kL + plot_w * (std::log10(f) + 4.0) / 4.0;
  };
  const auto y_of = [&](double tpr) { return kT + plot_h * (1.0 - tpr); };
  const auto px = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return std::string(buf);
  };

  auto os = open_out(path);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
     << "\" viewBox=\"0 0 " << kW << " " << kH << "\">\n";
  os << "<rect width=\"" << kW << "\" height=\"" << kH << "\" fill=\"white\"/>\n";
  os << "<text x=\"" << kW / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
        "font-size=\"15\">"
     << title << "</text>\n";

  for (int e = -4; e <= 0; ++e) {
    const double f = std::pow(10.0, e);
    const double x = x_of(f);
    os << "<line x1=\"" << px(x) << "\" y1=\"" << px(kT) << "\" x2=\"" << px(x) << "\" y2=\""
       << px(kT + plot_h) << "\" stroke=\"#ddd\"/>\n";
    os << "<text x=\"" << px(x) << "\" y=\"" << px(kT + plot_h + 18)
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">1e" << e
       << "</text>\n";
  }
  for (int i = 0; i <= 4; ++i) {
    const double t = 0.25 * i;
    const double y = y_of(t);
    os << "<line x1=\"" << px(kL) << "\" y1=\"" << px(y) << "\" x2=\"" << px(kL + plot_w)
       << "\" y2=\"" << px(y) << "\" stroke=\"#ddd\"/>\n";
    os << "<text x=\"" << px(kL - 8) << "\" y=\"" << px(y + 4)
       << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << fmt_double(t)
       << "</text>\n";
  }

  // Chance reference TPR = FPR, sampled per decade (a curve under the log axis).
  os << "<polyline fill=\"none\" stroke=\"#999\" stroke-dasharray=\"4 3\" points=\"";
  for (int i = 0; i <= 40; ++i) {
    const double f = std::pow(10.0, -4.0 + 0.1 * i);
    os << px(x_of(f)) << ',' << px(y_of(f)) << ' ';
  }
  os << "\"/>\n";

  os << "<polyline fill=\"none\" stroke=\"#c0392b\" stroke-width=\"1.8\" points=\"";
  for (size_t i = 0; i < curve.size(); ++i)
    os << px(x_of(curve.fpr[i])) << ',' << px(y_of(curve.tpr[i])) << ' ';
  os << "\"/>\n";

  os << "<text x=\"" << kL + plot_w / 2 << "\" y=\"" << kH - 14
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">false positive "
        "rate</text>\n";
  os << "<text x=\"18\" y=\"" << kT + plot_h / 2
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 "
        "18 "
     << kT + plot_h / 2 << ")\">true positive rate</text>\n";
  os << "</svg>\n";
  if (!os) throw DataError("failed writing '" + path + "'");
}

template std::vector<double> score_samples(Ensemble<float>&, const Tensor<float>&, ScoreMethod, int);
template std::vector<double> score_samples(Ensemble<double>&, const Tensor<double>&, ScoreMethod, int);
template EvalResult run_ood_eval(Ensemble<float>&, const Dataset<float>&, const Dataset<float>&, const EvalOptions&);
template EvalResult run_ood_eval(Ensemble<double>&, const Dataset<double>&, const Dataset<double>&, const EvalOptions&);
template double classification_accuracy(Ensemble<float>&, const Dataset<float>&, int);
template double classification_accuracy(Ensemble<double>&, const Dataset<double>&, int);

}  // namespace uat
