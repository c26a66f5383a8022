#pragma once

#include <charconv>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "pgrad/experiment.hpp"
#include "pgrad/pseudograd.hpp"

namespace pgrad {

/// Shortest decimal representation that round-trips the double exactly.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string format_optional(const std::optional<double>& v) {
  return v ? format_double(*v) : std::string();
}

/// One row per trial; period decimal separator, comma field separator,
/// header row mandatory.
inline void write_trials_csv(std::ostream& os, std::span<const TrialResult> trials) {
  os << "k,eta,seed,round,val_error,test_error,ce,epochs,threshold\n";
  for (const TrialResult& t : trials) {
    os << format_double(t.k) << ',' << format_double(t.eta) << ',' << t.seed << ',' << t.round << ','
       << format_optional(t.val_error) << ',' << format_optional(t.test_error) << ','
       << format_optional(t.cross_entropy) << ',' << t.epochs << ',' << format_optional(t.threshold)
       << '\n';
  }
}

/// The err_{k,eta} table of the selection protocol.
inline void write_err_table_csv(std::ostream& os, const CvResult& cv) {
  os << "k,eta,eta_exponent,err,diverged,rounds\n";
  for (const CvCell& c : cv.table) {
    os << format_double(c.k) << ',' << format_double(c.eta) << ',' << c.eta_exponent << ','
       << format_double(c.err) << ',' << (c.diverged ? 1 : 0) << ',' << c.rounds.size() << '\n';
  }
}

/// |f_y| as a function of eps_y for each k, long format for plotting.
inline void write_f_curves_csv(std::ostream& os, std::span<const double> k_values,
                               std::span<const double> eps_grid) {
  os << "epsilon_y,abs_f_y,k\n";
  for (double k : k_values) {
    const auto pts = f_curve(SensitivityFn(k), eps_grid);
    for (const auto& [eps_y, abs_f] : pts) {
      os << format_double(eps_y) << ',' << format_double(abs_f) << ',' << format_double(k) << '\n';
    }
  }
}

inline std::string now_iso8601() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02dZ", tm.tm_year + 1900, tm.tm_mon + 1,
                tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec);
  return buf;
}

/// All volatile fields live under "metadata" so that result files can be
/// compared byte-for-byte after dropping that one key.
inline nlohmann::ordered_json report_metadata() {
  nlohmann::ordered_json j;
  j["created"] = now_iso8601();
  return j;
}

inline nlohmann::ordered_json toy_summary_json(double alpha, std::size_t runs, std::uint64_t seed,
                                               std::span<const ToySummary> summaries) {
  nlohmann::ordered_json j;
  j["format_version"] = 1;
  j["metadata"] = report_metadata();
  j["alpha"] = alpha;
  j["runs"] = runs;
  j["seed"] = seed;
  auto& per_k = j["per_k"] = nlohmann::ordered_json::array();
  for (const ToySummary& s : summaries) {
    nlohmann::ordered_json row;
    row["k"] = s.k;
    row["mean_test_error"] = s.mean_test_error;
    row["mean_threshold"] = s.mean_threshold;
    row["mean_ce"] = s.mean_ce;
    row["mean_epochs"] = s.mean_epochs;
    if (runs > 1) {
      row["std_test_error"] = s.std_test_error;
      row["std_ce"] = s.std_ce;
    }
    per_k.push_back(std::move(row));
  }
  return j;
}

/// Compares two result directories: CSVs byte-for-byte, JSON files after
/// erasing the volatile "metadata" key. Returns a description of the first
/// mismatch, or nullopt when the directories agree.
inline std::optional<std::string> compare_result_dirs(const std::filesystem::path& a,
                                                      const std::filesystem::path& b) {
  namespace fs = std::filesystem;
  if (!fs::exists(a) || !fs::exists(b)) return "missing result directory";
  std::set<std::string> names;
  for (const auto& dir : {a, b}) {
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.is_regular_file()) names.insert(entry.path().filename().string());
    }
  }
  auto slurp = [](const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
  };
  for (const auto& name : names) {
    const fs::path fa = a / name, fb = b / name;
    if (!fs::exists(fa) || !fs::exists(fb)) return "file set differs: " + name;
    std::string ca = slurp(fa), cb = slurp(fb);
    if (name.ends_with(".json")) {
      nlohmann::json ja = nlohmann::json::parse(ca, nullptr, false);
      nlohmann::json jb = nlohmann::json::parse(cb, nullptr, false);
      if (ja.is_discarded() || jb.is_discarded()) return "unparsable JSON: " + name;
      ja.erase("metadata");
      jb.erase("metadata");
      ca = ja.dump(2);
      cb = jb.dump(2);
    }
    if (ca != cb) return "content differs: " + name;
  }
  return std::nullopt;
}

inline nlohmann::ordered_json cv_summary_json(const CvResult& cv, std::uint64_t seed,
                                              const std::optional<TrialResult>& final_selected,
                                              const std::optional<TrialResult>& final_baseline) {
  nlohmann::ordered_json j;
  j["format_version"] = 1;
  j["metadata"] = report_metadata();
  j["seed"] = seed;
  j["k_star"] = cv.k_star;
  j["eta_star"] = cv.eta_star;
  auto& cells = j["err_table"] = nlohmann::ordered_json::array();
  for (const CvCell& c : cv.table) {
    nlohmann::ordered_json row;
    row["k"] = c.k;
    row["eta"] = c.eta;
    row["err"] = c.err;
    row["diverged"] = c.diverged;
    cells.push_back(std::move(row));
  }
  auto trial_json = [](const TrialResult& t) {
    nlohmann::ordered_json r;
    r["k"] = t.k;
    r["eta"] = t.eta;
    if (t.test_error) r["test_error"] = *t.test_error;
    if (t.cross_entropy) r["ce"] = *t.cross_entropy;
    r["epochs"] = t.epochs;
    return r;
  };
  if (final_selected) j["final_selected"] = trial_json(*final_selected);
  if (final_baseline) j["final_k1"] = trial_json(*final_baseline);
  return j;
}

}  // namespace pgrad
