// Command-line front end: toy | cv | verify | curves.
//
// Exit codes: 0 success, 1 verification failure, 2 configuration error,
// 3 training divergence.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "pgrad/pgrad.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitVerifyFailure = 1;
constexpr int kExitConfigError = 2;
constexpr int kExitDivergence = 3;

const std::vector<double> kDefaultGrid{4.0, 2.0, 1.0, 0.5, 0.25, 0.125, 0.0625};

std::vector<double> parse_grid(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    out.push_back(std::stod(tok));
  }
  if (out.empty()) throw pgrad::InvalidConfigError("empty grid: " + csv);
  return out;
}

std::vector<std::size_t> parse_sizes(const std::string& csv) {
  std::vector<std::size_t> out;
  if (csv.empty() || csv == "none") return out;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    out.push_back(static_cast<std::size_t>(std::stoull(tok)));
  }
  return out;
}

json load_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw pgrad::InvalidConfigError("cannot open config file: " + path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw pgrad::InvalidConfigError(std::string("config file is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw pgrad::InvalidConfigError("config file must hold a JSON object");
  return j;
}

/// CLI flags win over config-file values; config-file values win over defaults.
template <class T>
void merge(const json& cfg, const char* key, CLI::Option* opt, T& target) {
  if (opt != nullptr && opt->count() > 0) return;
  if (cfg.contains(key)) target = cfg.at(key).get<T>();
}

void write_text_file(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  std::ofstream f(path);
  if (!f) throw pgrad::InvalidConfigError("cannot write output file: " + path.string());
  f << content;
}

struct CommonOpts {
  std::string config_path;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  std::string out = "out";
  CLI::Option* seed_opt = nullptr;
  CLI::Option* jobs_opt = nullptr;
  CLI::Option* out_opt = nullptr;

  void add_to(CLI::App* app) {
    app->add_option("--config", config_path, "JSON config file; flags override its values");
    seed_opt = app->add_option("--seed", seed, "master seed for all randomness");
    jobs_opt = app->add_option("--jobs", jobs, "max parallel trials");
    out_opt = app->add_option("--out", out, "output directory");
  }
  void merge_config(const json& cfg) {
    merge(cfg, "seed", seed_opt, seed);
    merge(cfg, "jobs", jobs_opt, jobs);
    merge(cfg, "out", out_opt, out);
  }
};

// ---------------------------------------------------------------- toy ------

int cmd_toy(CommonOpts& common, const json& cfg, double alpha, std::string k_grid_csv, std::size_t runs,
            std::size_t sample_size, double eta, std::size_t plateau, std::size_t max_epochs) {
  const std::vector<double> k_grid = parse_grid(k_grid_csv);

  pgrad::ToyConfig tc;
  tc.alpha = alpha;
  tc.sample_size = sample_size;
  tc.learning_rate = eta;
  tc.plateau_epochs = plateau;
  tc.max_epochs = max_epochs;
  tc.master_seed = common.seed;
  tc.jobs = common.jobs;

  const auto summaries = pgrad::toy_experiment(k_grid, runs, tc);

  std::vector<pgrad::TrialResult> trials;
  for (const auto& s : summaries) trials.insert(trials.end(), s.trials.begin(), s.trials.end());
  std::ostringstream csv;
  pgrad::write_trials_csv(csv, trials);
  write_text_file(fs::path(common.out) / "toy_trials.csv", csv.str());

  const auto summary = pgrad::toy_summary_json(alpha, runs, common.seed, summaries);
  write_text_file(fs::path(common.out) / "toy_summary.json", summary.dump(2) + "\n");

  std::cout << "k        mean_err   mean_thr   mean_ce    mean_epochs\n";
  for (const auto& s : summaries) {
    std::printf("%-8g %-10.4f %-10.4f %-10.4f %-10.0f\n", s.k, s.mean_test_error, s.mean_threshold,
                s.mean_ce, s.mean_epochs);
  }
  std::cout << "wrote " << (fs::path(common.out) / "toy_trials.csv").string() << " and toy_summary.json\n";
  (void)cfg;
  return kExitOk;
}

// ----------------------------------------------------------------- cv ------

struct CvArgs {
  std::string dataset = "mnist";
  std::string images, labels, test_images, test_labels;
  std::vector<std::string> cifar_train;
  std::string cifar_test;
  std::size_t toy_size = 4000;
  double toy_alpha = 0.95;
  std::string layers = "400";
  std::string activation = "tanh";
  std::string k_grid_csv;
  double eta0 = 0.5;
  double momentum = 0.5;
  double clip = 0.0;  // 0 disables
  std::size_t t = 10;
  std::size_t minibatch = 128;
  std::size_t patience = 15;
  std::size_t max_epochs = 200;
};

int cmd_cv(CommonOpts& common, const CvArgs& a) {
  using namespace pgrad;

  Dataset train_ds, test_ds;
  if (a.dataset == "mnist") {
    if (a.images.empty() || a.labels.empty()) {
      throw InvalidConfigError("cv: --images and --labels are required for --dataset mnist");
    }
    train_ds = scale_features(load_mnist_idx(a.images, a.labels), 0.0, 255.0);
    if (!a.test_images.empty() && !a.test_labels.empty()) {
      test_ds = scale_features(load_mnist_idx(a.test_images, a.test_labels), 0.0, 255.0);
    }
  } else if (a.dataset == "cifar10") {
    if (a.cifar_train.empty()) throw InvalidConfigError("cv: --cifar-train batches required");
    train_ds = scale_features(load_cifar10(a.cifar_train), 0.0, 255.0);
    if (!a.cifar_test.empty()) test_ds = scale_features(load_cifar10({a.cifar_test}), 0.0, 255.0);
  } else if (a.dataset == "toy") {
    Rng train_rng(derive_seed(common.seed, {100, 0}));
    Rng test_rng(derive_seed(common.seed, {100, 1}));
    train_ds = gen_toy(a.toy_size, a.toy_alpha, train_rng);
    test_ds = gen_toy(a.toy_size, a.toy_alpha, test_rng);
  } else {
    throw InvalidConfigError("cv: unknown dataset " + a.dataset);
  }

  ModelSpec model;
  model.hidden = parse_sizes(a.layers);
  model.activation = activation_from_string(a.activation);

  TrainConfig tmpl;
  tmpl.momentum = a.momentum;
  tmpl.minibatch = a.minibatch;
  tmpl.patience = a.patience;
  tmpl.max_epochs = a.max_epochs;
  if (a.clip > 0.0) tmpl.clip_threshold = a.clip;

  const std::vector<double> k_grid = a.k_grid_csv.empty() ? kDefaultGrid : parse_grid(a.k_grid_csv);
  const CvResult cv = cv_select(train_ds, model, k_grid, a.eta0, a.t, tmpl, common.seed, common.jobs);

  // Best learning rate of the k = 1 row, for the baseline retrain.
  double eta_k1 = a.eta0;
  {
    double best = std::numeric_limits<double>::infinity();
    for (const CvCell& c : cv.table) {
      if (c.k == 1.0 && (c.err < best || (c.err == best && c.eta < eta_k1))) {
        best = c.err;
        eta_k1 = c.eta;
      }
    }
  }

  std::optional<TrialResult> final_selected, final_k1;
  if (test_ds.size() > 0) {
    final_selected =
        final_retrain(train_ds, test_ds, model, cv.k_star, cv.eta_star, tmpl, derive_seed(common.seed, {3}));
    final_k1 = final_retrain(train_ds, test_ds, model, 1.0, eta_k1, tmpl, derive_seed(common.seed, {4}));
  }

  std::ostringstream table_csv;
  write_err_table_csv(table_csv, cv);
  write_text_file(fs::path(common.out) / "cv_table.csv", table_csv.str());

  std::vector<TrialResult> trials;
  for (const CvCell& c : cv.table) trials.insert(trials.end(), c.rounds.begin(), c.rounds.end());
  if (final_selected) trials.push_back(*final_selected);
  if (final_k1) trials.push_back(*final_k1);
  std::ostringstream trials_csv;
  write_trials_csv(trials_csv, trials);
  write_text_file(fs::path(common.out) / "cv_trials.csv", trials_csv.str());

  auto summary = cv_summary_json(cv, common.seed, final_selected, final_k1);
  {
    // per-k mean/std of round errors at each k's best cell
    auto& per_k = summary["per_k"] = ordered_json::array();
    for (double k : k_grid) {
      const CvCell* best_cell = nullptr;
      for (const CvCell& c : cv.table) {
        if (c.k == k && (best_cell == nullptr || c.err < best_cell->err)) best_cell = &c;
      }
      if (best_cell == nullptr) continue;
      double mean = best_cell->err, var = 0.0;
      for (const TrialResult& r : best_cell->rounds) {
        var += (*r.val_error - mean) * (*r.val_error - mean);
      }
      const std::size_t nr = best_cell->rounds.size();
      ordered_json row;
      row["k"] = k;
      row["eta"] = best_cell->eta;
      row["mean_val_error"] = mean;
      row["std_val_error"] = nr > 1 ? std::sqrt(var / static_cast<double>(nr - 1)) : 0.0;
      per_k.push_back(std::move(row));
    }
  }
  write_text_file(fs::path(common.out) / "cv_summary.json", summary.dump(2) + "\n");

  std::cout << "selected k* = " << cv.k_star << ", eta* = " << cv.eta_star << "\n";
  if (final_selected) {
    std::printf("final test error: k*=%g -> %.4f (ce %.4f), k=1 -> %.4f (ce %.4f)\n", cv.k_star,
                *final_selected->test_error, *final_selected->cross_entropy, *final_k1->test_error,
                *final_k1->cross_entropy);
  }
  std::cout << "wrote cv_table.csv, cv_trials.csv, cv_summary.json under " << common.out << "\n";
  return kExitOk;
}

// -------------------------------------------------------------- verify ------

int cmd_verify(CommonOpts& common, const std::string& k_sweep_csv, bool inject_backprop_bug) {
  using namespace pgrad;
  const std::vector<double> sweep = k_sweep_csv.empty() ? kDefaultGrid : parse_grid(k_sweep_csv);
  std::vector<ordered_json> verdicts;
  bool all_pass = true;

  // gradient equivalence at k = 1 against finite differences
  const std::vector<std::vector<std::size_t>> shapes{{3, 5, 4}, {2, 4, 3}, {5, 3}, {4, 6, 4, 3}, {3, 8, 2}};
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    Rng rng(derive_seed(common.seed, {20, i}));
    Network net = init_network(shapes[i], Activation::Tanh, InitScheme::uniform(-0.8, 0.8), rng);
    for (auto& b : net.biases)
      for (double& v : b) v = rng.uniform(-0.3, 0.3);
    Example ex;
    ex.features.resize(shapes[i].front());
    for (double& v : ex.features) v = rng.uniform(-1.0, 1.0);
    ex.label = rng.below(shapes[i].back());
    const FDReport rep = check_k1_gradient(net, ex, inject_backprop_bug);
    verdicts.push_back(to_verdict(rep));
    all_pass = all_pass && rep.pass;
  }

  {
    Rng rng(derive_seed(common.seed, {21}));
    const ConstraintReport rep = check_constraint_suite(100000, 1.0 / 16.0, 4.0, rng);
    verdicts.push_back(to_verdict(rep));
    all_pass = all_pass && rep.pass;
  }

  for (double k : sweep) {
    const MixedPartialReport rep = check_mixed_partials(k, derive_seed(common.seed, {22}));
    bool pass;
    double tol;
    if (k == 1.0) {
      tol = 1e-6;
      pass = rep.gap <= tol;
    } else if (std::fabs(k - 1.0) >= 0.25) {
      tol = 1e-3;
      pass = rep.gap >= tol && rep.condition_residual > 0.05;
    } else {
      tol = 0.0;
      pass = std::isfinite(rep.gap);
    }
    verdicts.push_back(to_verdict(rep, tol, pass));
    all_pass = all_pass && pass;
  }

  for (double k : sweep) {
    for (Activation act : {Activation::Tanh, Activation::Relu, Activation::Sigmoid}) {
      const StationarityReport rep = check_equal_weight_stationarity(k, act, derive_seed(common.seed, {23}));
      verdicts.push_back(to_verdict(rep));
      all_pass = all_pass && rep.pass;
    }
  }

  {
    const ToyCeReport rep = toy_ce_threshold(0.95);
    const bool pass = rep.threshold >= 0.03 && rep.threshold <= 0.07;
    verdicts.push_back(to_verdict(rep, 0.03, 0.07, pass));
    all_pass = all_pass && pass;
  }

  ordered_json all = ordered_json::array();
  for (const auto& v : verdicts) {
    std::cout << v.dump() << "\n";
    all.push_back(v);
  }
  write_text_file(fs::path(common.out) / "verify_verdicts.json", all.dump(2) + "\n");
  return all_pass ? kExitOk : kExitVerifyFailure;
}

// -------------------------------------------------------------- curves ------

int cmd_curves(CommonOpts& common, const std::string& k_grid_csv, std::size_t points) {
  const std::vector<double> k_grid = k_grid_csv.empty() ? kDefaultGrid : parse_grid(k_grid_csv);
  if (points == 0) throw pgrad::InvalidConfigError("curves: need a positive point count");
  std::vector<double> grid(points);
  for (std::size_t i = 0; i < points; ++i) {
    grid[i] = static_cast<double>(i + 1) / static_cast<double>(points);
  }
  std::ostringstream csv;
  pgrad::write_f_curves_csv(csv, k_grid, grid);
  write_text_file(fs::path(common.out) / "f_curves.csv", csv.str());
  std::cout << "wrote " << (fs::path(common.out) / "f_curves.csv").string() << " (" << k_grid.size() * points
            << " rows)\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pseudo-gradient training with tunable sensitivity to hard examples"};
  app.require_subcommand(1);

  // toy
  auto* toy = app.add_subcommand("toy", "threshold-distribution experiment over a k grid");
  CommonOpts toy_common;
  toy_common.add_to(toy);
  double alpha = 0.95;
  std::string toy_k_grid;
  std::size_t runs = 10, sample_size = 30000, plateau = 3000, toy_max_epochs = 200000;
  double toy_eta = 0.01;
  auto* alpha_opt = toy->add_option("--alpha", alpha, "class-1 interval endpoint, in (0.5,1)");
  auto* tk_opt = toy->add_option("--k-grid", toy_k_grid, "comma-separated sensitivity values");
  auto* runs_opt = toy->add_option("--runs", runs, "independent runs per k");
  auto* ss_opt = toy->add_option("--sample-size", sample_size, "examples per train/validation/test set");
  auto* eta_opt = toy->add_option("--eta", toy_eta, "batch gradient descent learning rate");
  auto* pl_opt = toy->add_option("--plateau", plateau, "epochs of unchanged validation error to stop");
  auto* me_opt = toy->add_option("--max-epochs", toy_max_epochs, "hard epoch cap");

  // cv
  auto* cv = app.add_subcommand("cv", "five-fold (k, eta) selection plus final retrains");
  CommonOpts cv_common;
  cv_common.add_to(cv);
  CvArgs cva;
  auto* ds_opt = cv->add_option("--dataset", cva.dataset, "mnist|cifar10|toy");
  auto* img_opt = cv->add_option("--images", cva.images, "idx training images");
  auto* lab_opt = cv->add_option("--labels", cva.labels, "idx training labels");
  auto* timg_opt = cv->add_option("--test-images", cva.test_images, "idx test images");
  auto* tlab_opt = cv->add_option("--test-labels", cva.test_labels, "idx test labels");
  cv->add_option("--cifar-train", cva.cifar_train, "cifar10 training batch files");
  cv->add_option("--cifar-test", cva.cifar_test, "cifar10 test batch file");
  auto* tsize_opt = cv->add_option("--toy-size", cva.toy_size, "synthetic dataset size");
  auto* talpha_opt = cv->add_option("--toy-alpha", cva.toy_alpha, "synthetic dataset alpha");
  auto* layers_opt = cv->add_option("--layers", cva.layers, "hidden layer sizes, e.g. 400 or 400,400");
  auto* act_opt = cv->add_option("--activation", cva.activation, "tanh|relu|sigmoid");
  auto* ck_opt = cv->add_option("--k-grid", cva.k_grid_csv, "comma-separated sensitivity values");
  auto* eta0_opt = cv->add_option("--eta0", cva.eta0, "center of the learning-rate search");
  auto* mom_opt = cv->add_option("--momentum", cva.momentum, "momentum coefficient in [0,1)");
  auto* clip_opt = cv->add_option("--clip", cva.clip, "global-norm clipping threshold (0 = off)");
  auto* t_opt = cv->add_option("--t", cva.t, "role-rotated rounds per cell");
  auto* mb_opt = cv->add_option("--minibatch", cva.minibatch, "minibatch size");
  auto* pat_opt = cv->add_option("--patience", cva.patience, "early-stopping patience in epochs");
  auto* cme_opt = cv->add_option("--max-epochs", cva.max_epochs, "hard epoch cap per trial");

  // verify
  auto* verify = app.add_subcommand("verify", "numerical checks of the pseudo-gradient's properties");
  CommonOpts verify_common;
  verify_common.add_to(verify);
  std::string k_sweep;
  bool inject_bug = false;
  auto* sweep_opt = verify->add_option("--k-sweep", k_sweep, "comma-separated k values to sweep");
  verify->add_flag("--inject-backprop-bug", inject_bug,
                   "perturb the gradient to prove the checker can fail");

  // curves
  auto* curves = app.add_subcommand("curves", "emit |f_y| vs eps_y CSV for plotting");
  CommonOpts curves_common;
  curves_common.add_to(curves);
  std::string curves_k_grid;
  std::size_t points = 1000;
  auto* ckg_opt = curves->add_option("--k-grid", curves_k_grid, "comma-separated sensitivity values");
  auto* pts_opt = curves->add_option("--points", points, "grid points per curve");

  try {
    app.parse(argc, argv);

    if (toy->parsed()) {
      json cfg = toy_common.config_path.empty() ? json::object() : load_config_file(toy_common.config_path);
      toy_common.merge_config(cfg);
      merge(cfg, "alpha", alpha_opt, alpha);
      merge(cfg, "k-grid", tk_opt, toy_k_grid);
      merge(cfg, "runs", runs_opt, runs);
      merge(cfg, "sample-size", ss_opt, sample_size);
      merge(cfg, "eta", eta_opt, toy_eta);
      merge(cfg, "plateau", pl_opt, plateau);
      merge(cfg, "max-epochs", me_opt, toy_max_epochs);
      if (toy_k_grid.empty()) toy_k_grid = "4,2,1,0.5,0.25,0.125,0.0625";
      return cmd_toy(toy_common, cfg, alpha, toy_k_grid, runs, sample_size, toy_eta, plateau,
                     toy_max_epochs);
    }
    if (cv->parsed()) {
      json cfg = cv_common.config_path.empty() ? json::object() : load_config_file(cv_common.config_path);
      cv_common.merge_config(cfg);
      merge(cfg, "dataset", ds_opt, cva.dataset);
      merge(cfg, "images", img_opt, cva.images);
      merge(cfg, "labels", lab_opt, cva.labels);
      merge(cfg, "test-images", timg_opt, cva.test_images);
      merge(cfg, "test-labels", tlab_opt, cva.test_labels);
      merge(cfg, "toy-size", tsize_opt, cva.toy_size);
      merge(cfg, "toy-alpha", talpha_opt, cva.toy_alpha);
      merge(cfg, "layers", layers_opt, cva.layers);
      merge(cfg, "activation", act_opt, cva.activation);
      merge(cfg, "k-grid", ck_opt, cva.k_grid_csv);
      merge(cfg, "eta0", eta0_opt, cva.eta0);
      merge(cfg, "momentum", mom_opt, cva.momentum);
      merge(cfg, "clip", clip_opt, cva.clip);
      merge(cfg, "t", t_opt, cva.t);
      merge(cfg, "minibatch", mb_opt, cva.minibatch);
      merge(cfg, "patience", pat_opt, cva.patience);
      merge(cfg, "max-epochs", cme_opt, cva.max_epochs);
      return cmd_cv(cv_common, cva);
    }
    if (verify->parsed()) {
      json cfg =
          verify_common.config_path.empty() ? json::object() : load_config_file(verify_common.config_path);
      verify_common.merge_config(cfg);
      merge(cfg, "k-sweep", sweep_opt, k_sweep);
      return cmd_verify(verify_common, k_sweep, inject_bug);
    }
    if (curves->parsed()) {
      json cfg =
          curves_common.config_path.empty() ? json::object() : load_config_file(curves_common.config_path);
      curves_common.merge_config(cfg);
      merge(cfg, "k-grid", ckg_opt, curves_k_grid);
      merge(cfg, "points", pts_opt, points);
      return cmd_curves(curves_common, curves_k_grid, points);
    }
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfigError;
  } catch (const pgrad::DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const pgrad::InvalidConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const pgrad::InvalidInputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const pgrad::FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const pgrad::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfigError;
  }
  return kExitOk;
}
