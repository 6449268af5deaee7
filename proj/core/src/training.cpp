#include <uat/training.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace uat {

double LossConfig::h_max() const { return std::log(static_cast<double>(num_classes)); }

double normalized_discrepancy(double u_clean, double u_adv, int num_classes) {
  if (num_classes < 2) throw ConfigError("discrepancy: need at least two classes");
  return (u_adv - u_clean) / std::log(static_cast<double>(num_classes));
}

template <typename T>
std::vector<double> uncertainty_discrepancy(Ensemble<T>& ens, const Tensor<T>& x,
                                            const Tensor<T>& x_adv, int S) {
  if (x.shape() != x_adv.shape()) throw ShapeError("discrepancy: batch shapes differ");
  const int k = ens.architecture().num_classes;
  const auto u = mutual_information_at(ens, x, S, MaskMode::SampleNew);
  const auto u_adv = mutual_information_at(ens, x_adv, S, MaskMode::ReuseLast);
  std::vector<double> out(static_cast<size_t>(u.size()));
  for (int64_t b = 0; b < u.size(); ++b)
    out[static_cast<size_t>(b)] =
        normalized_discrepancy(static_cast<double>(u[b]), static_cast<double>(u_adv[b]), k);
  return out;
}

namespace {

void validate_loss(const LossConfig& cfg, int ensemble_classes) {
  if (cfg.beta < 0) throw ConfigError("loss: beta must be nonnegative");
  if (!(cfg.epsilon_max > 0)) throw ConfigError("loss: epsilon_max must be positive");
  if (cfg.num_classes != ensemble_classes)
    throw ConfigError("loss: num_classes does not match the ensemble");
}

template <typename T>
void validate_training(const Ensemble<T>& ens, const Dataset<T>& ds, const TrainOptions& opt) {
  if (ds.size() < 1) throw DataError("train: empty dataset");
  if (!ds.labeled()) throw DataError("train: dataset has no labels");
  const int k = ens.architecture().num_classes;
  for (const auto y : ds.labels)
    if (y < 0 || y >= k) throw DataError("train: label outside [0, num_classes)");
  if (opt.epochs < 0) throw ConfigError("train: epochs must be nonnegative");
  if (opt.batch_size < 1) throw ConfigError("train: batch_size must be at least 1");
  if (opt.lr < 0) throw ConfigError("train: lr must be nonnegative");
  if (opt.mc_samples < 1) throw ConfigError("train: mc_samples must be at least 1");
}

class EpochLog {
 public:
  explicit EpochLog(const std::string& path) {
    if (!path.empty()) {
      os_.open(path, std::ios::trunc);
      if (!os_) throw DataError("train: cannot open log file " + path);
    }
  }
  void write(int epoch, double mean_ce, double mean_unc, double seconds) {
    if (!os_.is_open()) return;
    char line[256];
    std::snprintf(line, sizeof line,
                  "{\"epoch\":%d,\"mean_ce\":%.9g,\"mean_uncertainty_term\":%.9g,\"wall_time_s\":%.3f}\n",
                  epoch, mean_ce, mean_unc, seconds);
    os_ << line;
    os_.flush();
  }

 private:
  std::ofstream os_;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

template <typename T>
AdamOptions adam_options(const TrainOptions& opt) {
  return AdamOptions{.lr = opt.lr, .beta1 = opt.beta1, .beta2 = opt.beta2, .eps = opt.adam_eps};
}

template <typename T>
std::vector<Tensor<T>> collect_grads(Graph<T>& g, const std::vector<int>& nodes) {
  std::vector<Tensor<T>> grads;
  grads.reserve(nodes.size());
  for (const int n : nodes) grads.push_back(g.grad(n));
  return grads;
}

}  // namespace

template <typename T>
void train_ordinary(Ensemble<T>& ens, const Dataset<T>& ds, const TrainOptions& opt) {
  validate_training(ens, ds, opt);
  const int m_count = ens.size();
  std::vector<Rng> rngs;
  std::vector<Adam<T>> optims;
  optims.reserve(static_cast<size_t>(m_count));
  for (int m = 0; m < m_count; ++m) {
    rngs.emplace_back(derive_seed(opt.data_seed, static_cast<uint64_t>(m)));
    optims.emplace_back(adam_options<T>(opt));
    optims.back().attach(ens.member(m).params());
  }

  EpochLog log(opt.log_path);
  for (int epoch = 1; epoch <= opt.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    double ce_sum = 0;
    int64_t rows = 0;
    for (int m = 0; m < m_count; ++m) {
      const auto batches = batch_indices(ds.size(), opt.batch_size, true, rngs[m]);
      for (const auto& idx : batches) {
        const auto x = augment_batch(gather_rows(ds.images, idx), opt.aug, rngs[m]);
        const auto y = gather_labels(ds.labels, idx);
        Graph<T> g;
        auto bind = ens.member(m).bind(g, true);
        const int xi = g.leaf(x);
        const int ce = softmax_cross_entropy(g, ens.member(m).forward(bind, xi, 1, MaskMode::SampleNew), y);
        g.backward(ce, bind.params);
        optims[static_cast<size_t>(m)].step(collect_grads(g, bind.params));
        ce_sum += static_cast<double>(g.value(ce)[0]) * static_cast<double>(idx.size());
        rows += static_cast<int64_t>(idx.size());
      }
    }
    log.write(epoch, ce_sum / static_cast<double>(rows), 0.0, seconds_since(t0));
  }
}

template <typename T>
void train_lat(Ensemble<T>& ens, const Dataset<T>& ds, const TrainOptions& opt) {
  validate_training(ens, ds, opt);
  if (!(opt.loss.epsilon_max > 0)) throw ConfigError("train: epsilon_max must be positive");
  const int m_count = ens.size();
  std::vector<Rng> rngs, attack_rngs;
  std::vector<Adam<T>> optims;
  optims.reserve(static_cast<size_t>(m_count));
  for (int m = 0; m < m_count; ++m) {
    rngs.emplace_back(derive_seed(opt.data_seed, static_cast<uint64_t>(m)));
    attack_rngs.emplace_back(derive_seed(opt.attack_seed, static_cast<uint64_t>(m)));
    optims.emplace_back(adam_options<T>(opt));
    optims.back().attach(ens.member(m).params());
  }

  EpochLog log(opt.log_path);
  for (int epoch = 1; epoch <= opt.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    double ce_sum = 0;
    int64_t rows = 0;
    for (int m = 0; m < m_count; ++m) {
      auto& model = ens.member(m);
      const auto batches = batch_indices(ds.size(), opt.batch_size, true, rngs[m]);
      for (const auto& idx : batches) {
        const auto x = augment_batch(gather_rows(ds.images, idx), opt.aug, rngs[m]);
        const auto y = gather_labels(ds.labels, idx);

        // Clean pass. One backward yields both the weight step and the input
        // gradient the attack is crafted from, so the regime costs about
        // twice the ordinary one rather than three times.
        Graph<T> g;
        auto bind = model.bind(g, true);
        const int xi = g.leaf(x, true);
        const int ce = softmax_cross_entropy(g, model.forward(bind, xi, 1, MaskMode::SampleNew), y);
        auto wrt = bind.params;
        wrt.push_back(xi);
        g.backward(ce, wrt);
        const auto x_adv = perturb_ascent(x, g.grad(xi), sample_epsilon(attack_rngs[m], opt.loss.epsilon_max).epsilon);
        optims[static_cast<size_t>(m)].step(collect_grads(g, bind.params));
        ce_sum += static_cast<double>(g.value(ce)[0]) * static_cast<double>(idx.size());

        // Adversarial pass against the stepped weights.
        Graph<T> g2;
        auto bind2 = model.bind(g2, true);
        const int x2 = g2.leaf(x_adv);
        const int ce2 = softmax_cross_entropy(g2, model.forward(bind2, x2, 1, MaskMode::SampleNew), y);
        g2.backward(ce2, bind2.params);
        optims[static_cast<size_t>(m)].step(collect_grads(g2, bind2.params));
        ce_sum += static_cast<double>(g2.value(ce2)[0]) * static_cast<double>(idx.size());
        rows += 2 * static_cast<int64_t>(idx.size());
      }
    }
    log.write(epoch, ce_sum / static_cast<double>(rows), 0.0, seconds_since(t0));
  }
}

template <typename T>
UatLossParts<T> build_uat_loss(Graph<T>& g, Ensemble<T>& ens, const Tensor<T>& x,
                               const std::vector<int32_t>& y, AttackMagnitude eps,
                               const LossConfig& cfg, int S) {
  validate_loss(cfg, ens.architecture().num_classes);
  if (S < 1) throw ConfigError("loss: S must be at least 1");
  const int m_count = ens.size();

  UatLossParts<T> parts;
  parts.x_clean = g.leaf(x, true);
  for (int m = 0; m < m_count; ++m) parts.binds.push_back(ens.member(m).bind(g, true));

  // Mean member cross-entropy on the clean batch.
  int ce_sum = -1;
  for (int m = 0; m < m_count; ++m) {
    const int logits = ens.member(m).forward(parts.binds[static_cast<size_t>(m)], parts.x_clean, 1, MaskMode::SampleNew);
    const int ce = softmax_cross_entropy(g, logits, y);
    ce_sum = m == 0 ? ce : g.add(ce_sum, ce);
  }
  parts.ce_mean = g.mul_scalar(ce_sum, T(1) / static_cast<T>(m_count));

  // Clean uncertainty with freshly sampled masks; these stored masks are the
  // frozen set every later evaluation in this loss replays.
  const int u_clean = build_mutual_information(g, ens, parts.binds, parts.x_clean, S, MaskMode::SampleNew);

  // Craft the uncertainty-descending batch from this very graph so the attack
  // sees the same frozen masks. The crafted input then enters as a constant.
  g.backward(g.sum(u_clean), {parts.x_clean});
  parts.crafted = perturb_descent(x, g.grad(parts.x_clean), eps.epsilon);
  g.zero_grads();
  parts.x_adv = g.leaf(parts.crafted);

  const int u_adv = build_mutual_information(g, ens, parts.binds, parts.x_adv, S, MaskMode::ReuseLast);

  const int delta = g.mul_scalar(g.sub(u_adv, u_clean), static_cast<T>(1.0 / cfg.h_max()));
  const T eps_bar = static_cast<T>(eps.normalized());
  int mean_sq;
  if (cfg.batch_mean) {
    const int resid = g.add_scalar(g.mean(delta), -eps_bar);
    mean_sq = g.mul(resid, resid);
  } else {
    const int resid = g.add_scalar(delta, -eps_bar);
    mean_sq = g.mean(g.mul(resid, resid));
  }
  parts.unc_term = g.mul_scalar(mean_sq, static_cast<T>(cfg.beta));
  parts.loss = g.add(parts.ce_mean, parts.unc_term);
  return parts;
}

template <typename T>
double uat_loss(Ensemble<T>& ens, const Tensor<T>& x, const std::vector<int32_t>& y,
                AttackMagnitude eps, const LossConfig& cfg, int S) {
  Graph<T> g;
  const auto parts = build_uat_loss(g, ens, x, y, eps, cfg, S);
  return static_cast<double>(g.value(parts.loss)[0]);
}

template <typename T>
void train_uat(Ensemble<T>& ens, const Dataset<T>& ds, const TrainOptions& opt) {
  validate_training(ens, ds, opt);
  validate_loss(opt.loss, ens.architecture().num_classes);
  const int m_count = ens.size();

  Rng data_rng(opt.data_seed);
  Rng attack_rng(opt.attack_seed);
  Adam<T> joint(adam_options<T>(opt));
  for (int m = 0; m < m_count; ++m) joint.attach(ens.member(m).params());

  EpochLog log(opt.log_path);
  for (int epoch = 1; epoch <= opt.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    double ce_sum = 0, unc_sum = 0;
    int64_t rows = 0;
    const auto batches = batch_indices(ds.size(), opt.batch_size, true, data_rng);
    for (const auto& idx : batches) {
      const auto x = augment_batch(gather_rows(ds.images, idx), opt.aug, data_rng);
      const auto y = gather_labels(ds.labels, idx);
      const auto eps = sample_epsilon(attack_rng, opt.loss.epsilon_max);

      Graph<T> g;
      auto parts = build_uat_loss(g, ens, x, y, eps, opt.loss, opt.mc_samples);
      std::vector<int> wrt;
      for (const auto& b : parts.binds) wrt.insert(wrt.end(), b.params.begin(), b.params.end());
      g.backward(parts.loss, wrt);
      joint.step(collect_grads(g, wrt));

      ce_sum += static_cast<double>(g.value(parts.ce_mean)[0]) * static_cast<double>(idx.size());
      unc_sum += static_cast<double>(g.value(parts.unc_term)[0]) * static_cast<double>(idx.size());
      rows += static_cast<int64_t>(idx.size());
    }
    log.write(epoch, ce_sum / static_cast<double>(rows), unc_sum / static_cast<double>(rows), seconds_since(t0));
  }
}

template std::vector<double> uncertainty_discrepancy(Ensemble<float>&, const Tensor<float>&, const Tensor<float>&, int);
template std::vector<double> uncertainty_discrepancy(Ensemble<double>&, const Tensor<double>&, const Tensor<double>&, int);
template struct UatLossParts<float>;
template struct UatLossParts<double>;
template UatLossParts<float> build_uat_loss(Graph<float>&, Ensemble<float>&, const Tensor<float>&, const std::vector<int32_t>&, AttackMagnitude, const LossConfig&, int);
template UatLossParts<double> build_uat_loss(Graph<double>&, Ensemble<double>&, const Tensor<double>&, const std::vector<int32_t>&, AttackMagnitude, const LossConfig&, int);
template double uat_loss(Ensemble<float>&, const Tensor<float>&, const std::vector<int32_t>&, AttackMagnitude, const LossConfig&, int);
template double uat_loss(Ensemble<double>&, const Tensor<double>&, const std::vector<int32_t>&, AttackMagnitude, const LossConfig&, int);
template void train_ordinary(Ensemble<float>&, const Dataset<float>&, const TrainOptions&);
template void train_ordinary(Ensemble<double>&, const Dataset<double>&, const TrainOptions&);
template void train_lat(Ensemble<float>&, const Dataset<float>&, const TrainOptions&);
template void train_lat(Ensemble<double>&, const Dataset<double>&, const TrainOptions&);
template void train_uat(Ensemble<float>&, const Dataset<float>&, const TrainOptions&);
template void train_uat(Ensemble<double>&, const Dataset<double>&, const TrainOptions&);

}  // namespace uat
