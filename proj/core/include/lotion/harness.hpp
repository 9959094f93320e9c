#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lotion/trainers.hpp"

namespace lotion {

inline constexpr const char* kToolVersion = "0.1.0";

/// Invalid experiment description. The message starts with the offending key.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Testbed { kQuadratic, kTwoLayer, kGtSweep };
std::string to_string(Testbed t);

/// One experiment grid. Every field has a default; see README for the JSON keys.
struct ExperimentSpec {
  Testbed testbed = Testbed::kQuadratic;
  std::size_t d = 512;
  double alpha = 1.1;
  std::vector<std::size_t> k{1};            // two-layer widths
  std::vector<std::uint64_t> seeds{0};
  std::vector<std::string> formats{"int4"};
  std::vector<Method> methods{Method::kPtq, Method::kQat, Method::kLotion};
  std::vector<double> lr{0.1};
  std::vector<double> lambda{1.0};          // LOTION only
  std::size_t total_steps = 2000;
  std::size_t eval_every = 100;
  std::size_t rr_eval_seeds = 8;
  double final_fraction = 0.0;
  std::string optimizer = "sgd";
  CurvatureSource curvature = CurvatureSource::kExactHessianDiag;
  double fisher_beta = 0.999;
  bool differentiate_scale = true;
  double init_scale = 0.3;                  // std of the two-layer W1 init
  std::string output;                       // default output directory, optional
};

/// Strict parse: unknown keys, wrong types and out-of-range values raise
/// ConfigError. Unknown keys get a nearest-key suggestion.
ExperimentSpec parse_spec(const std::string& json_text);
ExperimentSpec load_spec(const std::filesystem::path& file);

/// Canonical JSON of an experiment with all defaults filled in, keys sorted.
std::string canonical_json(const ExperimentSpec& spec);

/// FNV-1a 64 of canonical_json without the `output` field, as 16 hex digits.
std::string spec_hash(const ExperimentSpec& spec);

/// Edit distance, used for key suggestions.
std::size_t levenshtein(const std::string& a, const std::string& b);

/// One cell of the grid.
struct RunPlan {
  RunKey key;
  TrainConfig config;
};

/// All runs of the grid in canonical order: seed, k, fmt, method, lr, λ.
/// Reference methods expand to a single run with lr = λ = 0.
std::vector<RunPlan> expand(const ExperimentSpec& spec);

/// Build the problem a plan trains on.
std::unique_ptr<Problem> make_problem(const ExperimentSpec& spec, const RunKey& key);

struct SweepOutcome {
  std::vector<RunSummary> runs;  // canonical order
  std::size_t resumed = 0;       // runs taken from an existing results.csv
  bool any_diverged = false;
};

using ProgressFn = std::function<void(const RunKey&, std::size_t done, std::size_t total)>;

/// Run the grid with `workers` threads and write results.csv, summary.json and
/// spec.json into `out_dir`. Runs already complete in an existing results.csv
/// with the same spec hash are kept. Output bytes do not depend on `workers`.
SweepOutcome run_sweep(const ExperimentSpec& spec, std::size_t workers, const std::filesystem::path& out_dir,
                       const ProgressFn& progress = {});

/// Run the grid in memory with `workers` threads, in canonical order.
std::vector<RunSummary> run_grid(const ExperimentSpec& spec, std::size_t workers, const ProgressFn& progress = {});

/// Column names of results.csv, in order.
const std::vector<std::string>& results_columns();

std::string format_row(const RunKey& key, const RunRecord& rec);

/// Parse results.csv. Returns the experiment hash from the header and the runs.
struct ResultsFile {
  std::string spec_hash;
  std::vector<RunSummary> runs;
};
ResultsFile read_results(const std::filesystem::path& csv);

/// Rows of the summary table: best final loss per (fmt, k, seed, method,
/// rounding), ascending within each (fmt, k, seed).
struct SummaryRow {
  BestCurve best;
  std::string label;  // e.g. "LOTION (RR)"
};
std::vector<SummaryRow> summarize_runs(std::span<const RunSummary> runs);

/// Recompute summary.json from results.csv in `dir` and return a text table.
std::string summarize(const std::filesystem::path& dir);

// --- acceptance checks ------------------------------------------------------

struct CheckResult {
  int id = 0;
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

CheckResult check_rr_axioms();
CheckResult check_closed_form_smoothing();
CheckResult check_rr_gradient_unbiased();
CheckResult check_minima_preservation();
CheckResult check_gradient_fd();
CheckResult check_second_order();
CheckResult check_quadratic_ordering();
CheckResult check_twolayer_sweep();
CheckResult check_determinism();
CheckResult check_qat_flat_cell();

/// Run the listed checks (1..10; empty = all), calling `report` after each.
std::vector<CheckResult> run_acceptance(const std::vector<int>& ids = {},
                                        const std::function<void(const CheckResult&)>& report = {});

std::string format_check(const CheckResult& r);

}  // namespace lotion
