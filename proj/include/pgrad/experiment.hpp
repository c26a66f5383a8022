#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "pgrad/data.hpp"
#include "pgrad/errors.hpp"
#include "pgrad/network.hpp"
#include "pgrad/optim.hpp"
#include "pgrad/pseudograd.hpp"

namespace pgrad {

struct Metrics {
  double error;
  double cross_entropy;  // nats per example
};

namespace detail {

inline std::size_t argmax_lowest(const std::vector<double>& p) {
  return static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
}

inline double eval_error(const Network& net, const Dataset& ds, ForwardTrace& trace) {
  std::size_t wrong = 0;
  for (const Example& ex : ds.examples) {
    forward_into(net, ex.features, trace);
    if (argmax_lowest(trace.p) != ex.label) ++wrong;
  }
  return static_cast<double>(wrong) / static_cast<double>(ds.size());
}

/// Runs fn(i) for i in [0,n); with jobs > 1 the indices are distributed over
/// worker threads. Each index owns its output slot, so results are identical
/// for any job count.
inline void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      fn(i);
    }
  };
  std::vector<std::thread> pool;
  const std::size_t n_threads = std::min(jobs, n);
  pool.reserve(n_threads);
  for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
}

}  // namespace detail

/// Fraction misclassified plus mean cross-entropy -log p_y. Probabilities are
/// floored at 1e-300 only when taking the log.
inline Metrics evaluate(const Network& net, const Dataset& ds) {
  if (ds.size() == 0) throw InvalidInputError("evaluate: empty dataset");
  ForwardTrace trace;
  std::size_t wrong = 0;
  double ce = 0.0;
  for (const Example& ex : ds.examples) {
    if (ex.label >= net.n_classes()) throw IndexError("evaluate: label out of range");
    forward_into(net, ex.features, trace);
    if (detail::argmax_lowest(trace.p) != ex.label) ++wrong;
    ce -= std::log(std::max(trace.p[ex.label], 1e-300));
  }
  const double n = static_cast<double>(ds.size());
  return Metrics{static_cast<double>(wrong) / n, ce / n};
}

enum class StopRule { Patience, Plateau };

struct TrainConfig {
  double k = 1.0;
  double learning_rate = 0.1;
  double momentum = 0.0;
  std::size_t minibatch = 128;
  std::optional<double> clip_threshold;
  StopRule stop_rule = StopRule::Patience;
  std::size_t patience = 15;          // epochs without strict improvement
  std::size_t plateau_epochs = 3000;  // consecutive epochs inside the band
  double plateau_band = 1e-5;         // error change of 0.001 percentage points
  std::size_t max_epochs = 10000;
  std::uint64_t seed = 0;

  void validate() const {
    if (minibatch < 1) throw InvalidConfigError("minibatch size must be >= 1");
    if (patience == 0 || plateau_epochs == 0) throw InvalidConfigError("stopping horizon must be positive");
    if (!(plateau_band >= 0.0)) throw InvalidConfigError("plateau band must be nonnegative");
  }
};

struct EpochRecord {
  std::size_t epoch;
  double early_stop_error;
};

struct TrainResult {
  Network net;
  std::vector<EpochRecord> history;
  std::size_t epochs = 0;
  std::size_t best_epoch = 0;  // patience rule only
};

/// Epoch loop: shuffle, minibatch pseudo-gradient at cfg.k, optional clipping,
/// momentum step; evaluates the early-stopping set after each epoch.
/// Patience rule returns the parameters of the best epoch seen; plateau rule
/// returns the final parameters.
inline TrainResult train(Network net, const Dataset& train_set, const Dataset& early_stop_set,
                         const TrainConfig& cfg) {
  cfg.validate();
  if (train_set.size() == 0 || early_stop_set.size() == 0) {
    throw InvalidInputError("train: training and early-stop sets must be nonempty");
  }
  const SensitivityFn fn(cfg.k);
  Rng rng(cfg.seed);
  OptimizerState st(cfg.learning_rate, cfg.momentum, net.zeros_like(), cfg.clip_threshold);

  const std::size_t n = train_set.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  const bool full_batch = cfg.minibatch >= n;

  TrainResult out;
  out.net = net;  // placeholder; overwritten below
  Network best = net;
  double best_err = std::numeric_limits<double>::infinity();
  std::size_t since_improvement = 0;
  double prev_err = 0.0;
  bool have_prev = false;
  std::size_t in_band = 0;

  ParamSet grad = net.zeros_like();
  GradientWorkspace ws;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    double err;
    // A parameter blow-up can also surface as non-finite activations before
    // the parameters themselves overflow; both count as divergence.
    try {
      if (!full_batch) rng.shuffle(order);
      for (std::size_t b0 = 0; b0 < n; b0 += cfg.minibatch) {
        const std::size_t b1 = std::min(n, b0 + cfg.minibatch);
        grad.zero();
        for (std::size_t i = b0; i < b1; ++i) {
          const Example& ex = train_set.examples[order[i]];
          accumulate_pseudo_gradient(net, ex.features, ex.label, fn, grad, ws);
        }
        grad.scale(1.0 / static_cast<double>(b1 - b0));
        momentum_step(net, grad, st);
        if (!net.all_finite()) {
          throw DivergenceError("train: non-finite parameters at epoch " + std::to_string(epoch), epoch);
        }
      }
      err = detail::eval_error(net, early_stop_set, ws.trace);
    } catch (const InvalidInputError&) {
      throw DivergenceError("train: non-finite activations at epoch " + std::to_string(epoch), epoch);
    }
    out.history.push_back({epoch, err});
    out.epochs = epoch;

    if (cfg.stop_rule == StopRule::Patience) {
      if (err < best_err) {
        best_err = err;
        best = net;
        out.best_epoch = epoch;
        since_improvement = 0;
      } else if (++since_improvement >= cfg.patience) {
        out.net = best;
        return out;
      }
    } else {
      if (have_prev && std::fabs(err - prev_err) <= cfg.plateau_band) {
        if (++in_band >= cfg.plateau_epochs) {
          out.net = net;
          return out;
        }
      } else {
        in_band = 0;
      }
      prev_err = err;
      have_prev = true;
    }
  }
  out.net = (cfg.stop_rule == StopRule::Patience && out.best_epoch > 0) ? best : net;
  return out;
}

/// Decision threshold of the 1-input/2-output linear softmax net: the input
/// where both logits are equal. With u = w_1 - w_0 and c = b_1 - b_0 this is
/// t = -c/u; a constant classifier (u = 0) has none.
inline std::optional<double> decision_threshold(const Network& net) {
  if (net.layer_sizes != std::vector<std::size_t>{1, 2}) {
    throw InvalidInputError("decision_threshold: network must have layer sizes [1,2]");
  }
  const double u = net.weights[0][1] - net.weights[0][0];
  const double c = net.biases[0][1] - net.biases[0][0];
  if (u == 0.0) return std::nullopt;
  return -c / u;
}

struct TrialResult {
  double k = 1.0;
  double eta = 0.0;
  std::uint64_t seed = 0;
  std::size_t round = 0;
  std::optional<double> val_error;
  std::optional<double> test_error;
  std::optional<double> cross_entropy;
  std::size_t epochs = 0;
  std::optional<double> threshold;
  bool diverged = false;
};

struct ModelSpec {
  std::vector<std::size_t> hidden;
  Activation activation = Activation::Tanh;
};

/// Glorot-initialized model for a dataset: hidden weights Glorot-uniform,
/// softmax layer all zeros.
inline Network make_model(const ModelSpec& spec, const Dataset& ds, Rng& rng) {
  std::vector<std::size_t> sizes;
  sizes.push_back(ds.feature_dim);
  sizes.insert(sizes.end(), spec.hidden.begin(), spec.hidden.end());
  sizes.push_back(ds.n_classes);
  return init_network(sizes, spec.activation, InitScheme::glorot(), rng);
}

struct CvCell {
  double k = 1.0;
  int eta_exponent = 0;  // eta = eta0 * 2^exponent
  double eta = 0.0;
  double err = 1.0;
  bool diverged = false;  // every round of the cell diverged
  std::vector<TrialResult> rounds;
};

struct CvResult {
  double k_star = 1.0;
  double eta_star = 0.0;
  std::vector<CvCell> table;
};

namespace detail {

/// Learning-rate search skeleton shared by cv_select and its tests: evaluates
/// eta0*2^e for e in {-1,0,1}, then keeps extending past whichever boundary
/// holds the per-k argmin (cap: 12 extensions per k). `eval_cell` returns the
/// averaged validation error for (k_index, eta_exponent).
inline std::map<std::pair<std::size_t, int>, double> eta_search(
    std::size_t n_k, const std::function<double(std::size_t, int)>& eval_cell,
    std::size_t max_extensions = 12) {
  std::map<std::pair<std::size_t, int>, double> cells;
  for (std::size_t ki = 0; ki < n_k; ++ki) {
    int lo = -1, hi = 1;
    for (int e = lo; e <= hi; ++e) cells[{ki, e}] = eval_cell(ki, e);
    std::size_t extensions = 0;
    for (;;) {
      int best_e = lo;
      double best = cells[{ki, lo}];
      for (int e = lo + 1; e <= hi; ++e) {
        const double v = cells[{ki, e}];
        if (v < best || (v == best && e < best_e)) {
          best = v;
          best_e = e;
        }
      }
      if (best_e != lo && best_e != hi) break;
      if (extensions >= max_extensions) break;
      ++extensions;
      if (best_e == lo) {
        --lo;
        cells[{ki, lo}] = eval_cell(ki, lo);
      } else {
        ++hi;
        cells[{ki, hi}] = eval_cell(ki, hi);
      }
    }
  }
  return cells;
}

/// Global argmin over cells; ties prefer k closest to 1, then smaller eta.
inline std::pair<std::size_t, int> select_best(const std::map<std::pair<std::size_t, int>, double>& cells,
                                               const std::vector<double>& k_grid) {
  bool first = true;
  std::pair<std::size_t, int> best_key{0, 0};
  double best_err = 0.0;
  for (const auto& [key, err] : cells) {
    if (first) {
      best_key = key;
      best_err = err;
      first = false;
      continue;
    }
    if (err < best_err) {
      best_key = key;
      best_err = err;
      continue;
    }
    if (err == best_err) {
      const double d_new = std::fabs(k_grid[key.first] - 1.0);
      const double d_old = std::fabs(k_grid[best_key.first] - 1.0);
      if (d_new < d_old || (d_new == d_old && key.second < best_key.second)) {
        best_key = key;
      }
    }
  }
  return best_key;
}

}  // namespace detail

/// The five-fold selection protocol: one random split, t role rotations per
/// (k, eta) cell, validation errors averaged into err_{k,eta}; the eta grid
/// starts at {eta0/2, eta0, 2*eta0} per k and is extended while the per-k
/// argmin sits on the boundary. A round that diverges records error 1.
inline CvResult cv_select(const Dataset& ds, const ModelSpec& model, const std::vector<double>& k_grid,
                          double eta0, std::size_t t, const TrainConfig& tmpl, std::uint64_t master_seed,
                          std::size_t jobs = 1) {
  if (k_grid.empty()) throw InvalidConfigError("cv_select: empty k grid");
  if (t < 1) throw InvalidConfigError("cv_select: t must be >= 1");
  if (!(eta0 > 0.0)) throw InvalidConfigError("cv_select: eta0 must be positive");

  Rng fold_rng(derive_seed(master_seed, {0}));
  const FoldSplit split = split_folds(ds, fold_rng);

  std::map<std::pair<std::size_t, int>, CvCell> table;

  auto eval_cell = [&](std::size_t ki, int e) -> double {
    CvCell cell;
    cell.k = k_grid[ki];
    cell.eta_exponent = e;
    cell.eta = eta0 * std::exp2(static_cast<double>(e));
    cell.rounds.resize(t);
    const std::uint64_t e_tag = static_cast<std::uint64_t>(e + 32);
    detail::parallel_for(t, jobs, [&](std::size_t r) {
      const FoldRoles roles = rotate_roles(split, r);
      const Dataset train_ds = subset(ds, roles.train);
      const Dataset es_ds = subset(ds, roles.early_stop);
      const Dataset val_ds = subset(ds, roles.validation);
      TrainConfig cfg = tmpl;
      cfg.k = cell.k;
      cfg.learning_rate = cell.eta;
      cfg.seed = derive_seed(master_seed, {1, ki, e_tag, r});
      Rng init_rng(derive_seed(master_seed, {2, ki, e_tag, r}));
      Network net0 = make_model(model, ds, init_rng);
      TrialResult trial;
      trial.k = cell.k;
      trial.eta = cell.eta;
      trial.seed = cfg.seed;
      trial.round = r;
      try {
        TrainResult res = train(std::move(net0), train_ds, es_ds, cfg);
        const Metrics m = evaluate(res.net, val_ds);
        trial.val_error = m.error;
        trial.cross_entropy = m.cross_entropy;
        trial.epochs = res.epochs;
      } catch (const DivergenceError& e_div) {
        trial.diverged = true;
        trial.val_error = 1.0;
        trial.epochs = e_div.epoch;
      } catch (const InvalidInputError&) {
        // finite parameters whose logits overflow on the validation set
        trial.diverged = true;
        trial.val_error = 1.0;
      }
      cell.rounds[r] = std::move(trial);
    });
    double sum = 0.0;
    bool all_diverged = true;
    for (const TrialResult& trial : cell.rounds) {
      sum += *trial.val_error;
      all_diverged = all_diverged && trial.diverged;
    }
    cell.err = sum / static_cast<double>(t);
    cell.diverged = all_diverged;
    if (all_diverged) cell.err = 1.0;
    const double err = cell.err;
    table[{ki, e}] = std::move(cell);
    return err;
  };

  std::map<std::pair<std::size_t, int>, double> errs = detail::eta_search(k_grid.size(), eval_cell);
  const auto best_key = detail::select_best(errs, k_grid);

  CvResult out;
  out.k_star = k_grid[best_key.first];
  out.eta_star = eta0 * std::exp2(static_cast<double>(best_key.second));
  out.table.reserve(table.size());
  for (auto& [key, cell] : table) out.table.push_back(std::move(cell));
  return out;
}

/// Retrains on 4/5 of the training data with the remaining 1/5 as the
/// early-stopping set, then evaluates on the held-out test set.
inline TrialResult final_retrain(const Dataset& train_full, const Dataset& test_set, const ModelSpec& model,
                                 double k, double eta, const TrainConfig& tmpl, std::uint64_t seed) {
  Rng split_rng(derive_seed(seed, {0}));
  const FoldSplit split = split_folds(train_full, split_rng);
  std::vector<std::size_t> train_idx;
  for (std::size_t f = 0; f < 4; ++f) {
    train_idx.insert(train_idx.end(), split.folds[f].begin(), split.folds[f].end());
  }
  const Dataset train_ds = subset(train_full, train_idx);
  const Dataset es_ds = subset(train_full, split.folds[4]);

  TrainConfig cfg = tmpl;
  cfg.k = k;
  cfg.learning_rate = eta;
  cfg.seed = derive_seed(seed, {1});
  Rng init_rng(derive_seed(seed, {2}));
  Network net0 = make_model(model, train_full, init_rng);

  TrialResult trial;
  trial.k = k;
  trial.eta = eta;
  trial.seed = cfg.seed;
  trial.round = 0;
  TrainResult res = train(std::move(net0), train_ds, es_ds, cfg);
  double best_es = 1.0;
  for (const EpochRecord& rec : res.history) best_es = std::min(best_es, rec.early_stop_error);
  trial.val_error = best_es;
  const Metrics m = evaluate(res.net, test_set);
  trial.test_error = m.error;
  trial.cross_entropy = m.cross_entropy;
  trial.epochs = res.epochs;
  return trial;
}

struct ToyConfig {
  double alpha = 0.95;
  std::size_t sample_size = 30000;  // each of train/validation/test
  double learning_rate = 0.01;
  std::size_t plateau_epochs = 3000;
  double plateau_band = 1e-5;
  std::size_t max_epochs = 200000;
  std::uint64_t master_seed = 0;
  std::size_t jobs = 1;
};

struct ToySummary {
  double k = 1.0;
  double mean_test_error = 0.0;
  double std_test_error = 0.0;
  double mean_threshold = 0.0;
  double mean_ce = 0.0;
  double std_ce = 0.0;
  double mean_epochs = 0.0;
  std::vector<TrialResult> trials;
};

/// The threshold-distribution experiment: for every k, `runs` independent
/// trainings of the 1-input/2-output softmax net (weights uniform in
/// (-0.1,0.1), biases 0) with full-batch steps at learning rate 0.01 and
/// plateau stopping on validation error. Train/validation/test sets are
/// resampled per run from run-derived seeds.
inline std::vector<ToySummary> toy_experiment(const std::vector<double>& k_list, std::size_t runs,
                                              const ToyConfig& cfg) {
  if (!(cfg.alpha > 0.5 && cfg.alpha < 1.0)) throw InvalidConfigError("toy_experiment: alpha must be in (0.5,1)");
  if (k_list.empty() || runs == 0) throw InvalidInputError("toy_experiment: need at least one k and one run");

  std::vector<ToySummary> summaries(k_list.size());
  for (std::size_t ki = 0; ki < k_list.size(); ++ki) {
    summaries[ki].k = k_list[ki];
    summaries[ki].trials.resize(runs);
  }

  const std::size_t total = k_list.size() * runs;
  detail::parallel_for(total, cfg.jobs, [&](std::size_t t) {
    const std::size_t ki = t / runs;
    const std::size_t r = t % runs;
    const double k = k_list[ki];

    Rng train_rng(derive_seed(cfg.master_seed, {10, ki, r, 0}));
    Rng val_rng(derive_seed(cfg.master_seed, {10, ki, r, 1}));
    Rng test_rng(derive_seed(cfg.master_seed, {10, ki, r, 2}));
    Rng init_rng(derive_seed(cfg.master_seed, {10, ki, r, 3}));
    const Dataset train_ds = gen_toy(cfg.sample_size, cfg.alpha, train_rng);
    const Dataset val_ds = gen_toy(cfg.sample_size, cfg.alpha, val_rng);
    const Dataset test_ds = gen_toy(cfg.sample_size, cfg.alpha, test_rng);

    Network net0 = init_network({1, 2}, Activation::Tanh, InitScheme::uniform(-0.1, 0.1), init_rng);

    TrainConfig tc;
    tc.k = k;
    tc.learning_rate = cfg.learning_rate;
    tc.momentum = 0.0;
    tc.minibatch = train_ds.size();  // full-batch gradient descent
    tc.stop_rule = StopRule::Plateau;
    tc.plateau_epochs = cfg.plateau_epochs;
    tc.plateau_band = cfg.plateau_band;
    tc.max_epochs = cfg.max_epochs;
    tc.seed = derive_seed(cfg.master_seed, {10, ki, r, 4});

    TrialResult trial;
    trial.k = k;
    trial.eta = cfg.learning_rate;
    trial.seed = tc.seed;
    trial.round = r;
    TrainResult res = train(std::move(net0), train_ds, val_ds, tc);
    trial.val_error = res.history.empty() ? 1.0 : res.history.back().early_stop_error;
    const Metrics m = evaluate(res.net, test_ds);
    trial.test_error = m.error;
    trial.cross_entropy = m.cross_entropy;
    trial.epochs = res.epochs;
    trial.threshold = decision_threshold(res.net);
    summaries[ki].trials[r] = std::move(trial);
  });

  for (ToySummary& s : summaries) {
    double sum_err = 0.0, sum_ce = 0.0, sum_thr = 0.0, sum_ep = 0.0;
    std::size_t n_thr = 0;
    for (const TrialResult& trial : s.trials) {
      sum_err += *trial.test_error;
      sum_ce += *trial.cross_entropy;
      sum_ep += static_cast<double>(trial.epochs);
      if (trial.threshold) {
        sum_thr += *trial.threshold;
        ++n_thr;
      }
    }
    const double n = static_cast<double>(runs);
    s.mean_test_error = sum_err / n;
    s.mean_ce = sum_ce / n;
    s.mean_epochs = sum_ep / n;
    s.mean_threshold = n_thr > 0 ? sum_thr / static_cast<double>(n_thr) : 0.0;
    if (runs > 1) {
      double v_err = 0.0, v_ce = 0.0;
      for (const TrialResult& trial : s.trials) {
        v_err += (*trial.test_error - s.mean_test_error) * (*trial.test_error - s.mean_test_error);
        v_ce += (*trial.cross_entropy - s.mean_ce) * (*trial.cross_entropy - s.mean_ce);
      }
      s.std_test_error = std::sqrt(v_err / (n - 1.0));
      s.std_ce = std::sqrt(v_ce / (n - 1.0));
    }
  }
  return summaries;
}

inline std::vector<ToySummary> toy_experiment(double alpha, const std::vector<double>& k_list,
                                              std::size_t runs, std::uint64_t master_seed = 0,
                                              std::size_t jobs = 1) {
  ToyConfig cfg;
  cfg.alpha = alpha;
  cfg.master_seed = master_seed;
  cfg.jobs = jobs;
  return toy_experiment(k_list, runs, cfg);
}

}  // namespace pgrad
