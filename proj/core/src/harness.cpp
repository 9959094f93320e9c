#include "lotion/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cinttypes>
#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <deque>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <thread>

#include "json.hpp"

namespace lotion {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

const std::vector<std::string> kSpecKeys = {
    "alpha",     "curvature",  "d",           "differentiate_scale", "eval_every", "final_fraction", "fisher_beta",
    "formats",   "init_scale", "k",           "lambda",              "lr",         "methods",        "optimizer",
    "output",    "rr_eval_seeds", "seed",     "testbed",             "total_steps"};

[[noreturn]] void fail(const std::string& key, const std::string& what) { throw ConfigError(key + ": " + what); }

std::string suggest(const std::string& key) {
  std::string best;
  std::size_t dist = 3;
  for (const auto& k : kSpecKeys) {
    const std::size_t d = levenshtein(key, k);
    if (d < dist) {
      dist = d;
      best = k;
    }
  }
  return best.empty() ? "" : " (did you mean '" + best + "'?)";
}

double get_number(const json& v, const std::string& key) {
  if (!v.is_number()) fail(key, "expected a number, got " + v.dump());
  const double x = v.get<double>();
  if (!std::isfinite(x)) fail(key, "must be finite");
  return x;
}

std::uint64_t get_count(const json& v, const std::string& key, std::uint64_t min) {
  if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
    fail(key, "expected a non-negative integer, got " + v.dump());
  }
  const auto x = v.get<std::uint64_t>();
  if (x < min) fail(key, "must be >= " + std::to_string(min));
  return x;
}

std::vector<json> as_list(const json& v, const std::string& key) {
  if (v.is_array()) {
    if (v.empty()) fail(key, "nonempty list required");
    return {v.begin(), v.end()};
  }
  return {v};
}

std::string get_string(const json& v, const std::string& key) {
  if (!v.is_string()) fail(key, "expected a string, got " + v.dump());
  return v.get<std::string>();
}

Testbed parse_testbed(const std::string& s) {
  if (s == "quadratic") return Testbed::kQuadratic;
  if (s == "twolayer") return Testbed::kTwoLayer;
  if (s == "gt-sweep") return Testbed::kGtSweep;
  fail("testbed", "unknown testbed '" + s + "' (expected quadratic, twolayer, gt-sweep)");
}

std::string curvature_name(CurvatureSource c) { return c == CurvatureSource::kExactHessianDiag ? "hessian" : "fisher"; }

void check_sizes(const ExperimentSpec& spec) {
  for (const auto& name : spec.formats) {
    const QuantFormat fmt = QuantFormat::parse(name);
    if (fmt.block_size() == kWholeTensor) continue;
    std::vector<std::size_t> sizes;
    if (spec.testbed == Testbed::kQuadratic) {
      sizes.push_back(spec.d);
    } else {
      for (std::size_t k : spec.k) {
        sizes.push_back(k * spec.d);
        sizes.push_back(k);
      }
    }
    for (std::size_t n : sizes) {
      if (n % fmt.block_size() != 0) {
        fail("formats", "block size of '" + name + "' does not divide a tensor of " + std::to_string(n) + " weights");
      }
    }
  }
}

void validate(const ExperimentSpec& spec) {
  if (spec.d < 1) fail("d", "must be >= 1");
  if (!(spec.alpha > 0.0)) fail("alpha", "must be > 0");
  if (spec.k.empty()) fail("k", "nonempty list required");
  if (spec.seeds.empty()) fail("seed", "nonempty list required");
  if (spec.formats.empty()) fail("formats", "nonempty list required");
  if (spec.methods.empty()) fail("methods", "nonempty list required");
  if (spec.lr.empty()) fail("lr", "nonempty list required");
  if (spec.lambda.empty()) fail("lambda", "nonempty list required");
  for (double lr : spec.lr) {
    if (!(lr > 0.0)) fail("lr", "values must be > 0");
  }
  for (double l : spec.lambda) {
    if (!(l >= 0.0)) fail("lambda", "values must be >= 0");
  }
  if (spec.total_steps < 1) fail("total_steps", "must be >= 1");
  if (spec.eval_every < 1 || spec.total_steps % spec.eval_every != 0) {
    fail("eval_every", "must be >= 1 and divide total_steps");
  }
  if (spec.rr_eval_seeds < 1) fail("rr_eval_seeds", "must be >= 1");
  if (!(spec.final_fraction >= 0.0 && spec.final_fraction <= 1.0)) fail("final_fraction", "must be in [0, 1]");
  if (!(spec.fisher_beta >= 0.0 && spec.fisher_beta < 1.0)) fail("fisher_beta", "must be in [0, 1)");
  if (!(spec.init_scale >= 0.0)) fail("init_scale", "must be >= 0");
  if (spec.optimizer != "sgd") fail("optimizer", "only 'sgd' is supported, got '" + spec.optimizer + "'");
  for (std::size_t k : spec.k) {
    if (k < 1) fail("k", "widths must be >= 1");
  }
  for (Method m : spec.methods) {
    if (spec.testbed == Testbed::kGtSweep && m != Method::kGroundTruth) {
      fail("methods", "testbed gt-sweep only evaluates 'gt'");
    }
    if (spec.testbed == Testbed::kQuadratic && m == Method::kGroundTruth) {
      fail("methods", "'gt' needs a two-layer testbed");
    }
    if (spec.testbed != Testbed::kQuadratic && m == Method::kPtqTarget) {
      fail("methods", "'ptq-target' needs the quadratic testbed");
    }
  }
  check_sizes(spec);
}

json to_json(const ExperimentSpec& spec, bool with_output) {
  json j;
  j["testbed"] = to_string(spec.testbed);
  j["d"] = spec.d;
  j["alpha"] = spec.alpha;
  j["k"] = spec.k;
  j["seed"] = spec.seeds;
  j["formats"] = spec.formats;
  std::vector<std::string> methods;
  for (Method m : spec.methods) methods.push_back(to_string(m));
  j["methods"] = methods;
  j["lr"] = spec.lr;
  j["lambda"] = spec.lambda;
  j["total_steps"] = spec.total_steps;
  j["eval_every"] = spec.eval_every;
  j["rr_eval_seeds"] = spec.rr_eval_seeds;
  j["final_fraction"] = spec.final_fraction;
  j["optimizer"] = spec.optimizer;
  j["curvature"] = curvature_name(spec.curvature);
  j["fisher_beta"] = spec.fisher_beta;
  j["differentiate_scale"] = spec.differentiate_scale;
  j["init_scale"] = spec.init_scale;
  if (with_output) j["output"] = spec.output;
  return j;
}

bool is_reference(Method m) { return m == Method::kPtqTarget || m == Method::kGroundTruth; }

std::string fmt_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string upper(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(line);
  while (std::getline(in, cur, ',')) out.push_back(cur);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& s, const std::string& what) {
  char* end = nullptr;
  const double x = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') throw std::runtime_error("results.csv: bad " + what + " '" + s + "'");
  return x;
}

std::uint64_t parse_u64(const std::string& s, const std::string& what) {
  char* end = nullptr;
  const auto x = std::strtoull(s.c_str(), &end, 10);
  if (end == s.c_str() || *end != '\0') throw std::runtime_error("results.csv: bad " + what + " '" + s + "'");
  return x;
}

bool is_complete(const RunSummary& run, const ExperimentSpec& spec) {
  if (run.records.empty()) return false;
  if (run.records.back().diverged) return true;
  return run.records.size() == spec.total_steps / spec.eval_every && run.records.back().step == spec.total_steps;
}

void write_text_atomic(const fs::path& file, const std::string& text) {
  const fs::path tmp = file.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << text;
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  fs::rename(tmp, file);
}

std::string csv_header(const std::string& hash) {
  std::string s = "# spec_hash=" + hash + "\n# tool_version=" + kToolVersion + "\n";
  const auto& cols = results_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) s += (i ? "," : "") + cols[i];
  return s + "\n";
}

std::string run_rows(const RunSummary& run) {
  std::string s;
  for (const auto& rec : run.records) s += format_row(run.key, rec) + "\n";
  return s;
}

json summary_json(std::span<const RunSummary> runs, const std::string& hash) {
  json j;
  j["spec_hash"] = hash;
  j["tool_version"] = kToolVersion;
  j["runs"] = runs.size();
  std::size_t diverged = 0;
  for (const auto& r : runs) diverged += r.diverged() ? 1 : 0;
  j["diverged_runs"] = diverged;

  json best = json::array();
  for (const auto& row : summarize_runs(runs)) {
    const auto& b = row.best;
    best.push_back({{"label", row.label},
                    {"method", to_string(b.group.method)},
                    {"fmt", b.group.fmt},
                    {"k", b.group.k},
                    {"seed", b.group.seed},
                    {"rounding", to_string(b.rounding)},
                    {"lr", b.group.lr},
                    {"lambda", b.group.lambda},
                    {"final_loss", b.final_loss}});
  }
  j["best"] = best;

  json all_diverged = json::array();
  std::set<std::tuple<std::string, std::string, std::size_t, std::uint64_t>> seen, ok;
  for (const auto& r : runs) {
    const auto g = std::make_tuple(to_string(r.key.method), r.key.fmt, r.key.k, r.key.seed);
    seen.insert(g);
    if (!r.diverged() && !r.records.empty()) ok.insert(g);
  }
  for (const auto& g : seen) {
    if (ok.count(g)) continue;
    all_diverged.push_back(
        {{"method", std::get<0>(g)}, {"fmt", std::get<1>(g)}, {"k", std::get<2>(g)}, {"seed", std::get<3>(g)}});
  }
  j["all_diverged"] = all_diverged;
  return j;
}

}  // namespace

std::string to_string(Testbed t) {
  switch (t) {
    case Testbed::kQuadratic: return "quadratic";
    case Testbed::kTwoLayer: return "twolayer";
    case Testbed::kGtSweep: return "gt-sweep";
  }
  return "?";
}

std::size_t levenshtein(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

ExperimentSpec parse_spec(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("spec: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("spec: top level must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(kSpecKeys.begin(), kSpecKeys.end(), key) == kSpecKeys.end()) {
      throw ConfigError(key + ": unknown key" + suggest(key));
    }
  }

  ExperimentSpec spec;
  if (j.contains("testbed")) spec.testbed = parse_testbed(get_string(j["testbed"], "testbed"));
  if (spec.testbed == Testbed::kGtSweep) spec.methods = {Method::kGroundTruth};
  if (spec.testbed == Testbed::kTwoLayer) spec.methods = {Method::kPtq, Method::kQat, Method::kLotion, Method::kGroundTruth};
  if (j.contains("d")) spec.d = get_count(j["d"], "d", 1);
  if (j.contains("alpha")) spec.alpha = get_number(j["alpha"], "alpha");
  if (j.contains("k")) {
    spec.k.clear();
    for (const auto& v : as_list(j["k"], "k")) spec.k.push_back(get_count(v, "k", 1));
  }
  if (j.contains("seed")) {
    spec.seeds.clear();
    for (const auto& v : as_list(j["seed"], "seed")) spec.seeds.push_back(get_count(v, "seed", 0));
  }
  if (j.contains("formats")) {
    spec.formats.clear();
    for (const auto& v : as_list(j["formats"], "formats")) {
      const std::string name = get_string(v, "formats");
      try {
        spec.formats.push_back(QuantFormat::parse(name).name());
      } catch (const std::invalid_argument& e) {
        fail("formats", e.what());
      }
    }
  }
  if (j.contains("methods")) {
    spec.methods.clear();
    for (const auto& v : as_list(j["methods"], "methods")) {
      try {
        spec.methods.push_back(parse_method(get_string(v, "methods")));
      } catch (const ConfigError&) {
        throw;
      } catch (const std::invalid_argument& e) {
        fail("methods", e.what());
      }
    }
  }
  if (j.contains("lr")) {
    if (!j["lr"].is_array() || j["lr"].empty()) fail("lr", "nonempty list required");
    spec.lr.clear();
    for (const auto& v : j["lr"]) spec.lr.push_back(get_number(v, "lr"));
  }
  if (j.contains("lambda")) {
    spec.lambda.clear();
    for (const auto& v : as_list(j["lambda"], "lambda")) spec.lambda.push_back(get_number(v, "lambda"));
  }
  if (j.contains("total_steps")) spec.total_steps = get_count(j["total_steps"], "total_steps", 1);
  if (j.contains("eval_every")) spec.eval_every = get_count(j["eval_every"], "eval_every", 1);
  if (j.contains("rr_eval_seeds")) spec.rr_eval_seeds = get_count(j["rr_eval_seeds"], "rr_eval_seeds", 1);
  if (j.contains("final_fraction")) spec.final_fraction = get_number(j["final_fraction"], "final_fraction");
  if (j.contains("optimizer")) spec.optimizer = get_string(j["optimizer"], "optimizer");
  if (j.contains("curvature")) {
    const std::string c = get_string(j["curvature"], "curvature");
    if (c == "hessian") {
      spec.curvature = CurvatureSource::kExactHessianDiag;
    } else if (c == "fisher") {
      spec.curvature = CurvatureSource::kEmpiricalFisher;
    } else {
      fail("curvature", "expected 'hessian' or 'fisher', got '" + c + "'");
    }
  }
  if (j.contains("fisher_beta")) spec.fisher_beta = get_number(j["fisher_beta"], "fisher_beta");
  if (j.contains("differentiate_scale")) {
    if (!j["differentiate_scale"].is_boolean()) fail("differentiate_scale", "expected true or false");
    spec.differentiate_scale = j["differentiate_scale"].get<bool>();
  }
  if (j.contains("init_scale")) spec.init_scale = get_number(j["init_scale"], "init_scale");
  if (j.contains("output")) spec.output = get_string(j["output"], "output");
  validate(spec);
  return spec;
}

ExperimentSpec load_spec(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ConfigError("spec: cannot open " + file.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_spec(ss.str());
}

std::string canonical_json(const ExperimentSpec& spec) { return to_json(spec, true).dump(); }

std::string spec_hash(const ExperimentSpec& spec) {
  const std::string text = to_json(spec, false).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
  return buf;
}

std::vector<RunPlan> expand(const ExperimentSpec& spec) {
  std::vector<RunPlan> plans;
  const std::vector<std::size_t> widths = spec.testbed == Testbed::kQuadratic ? std::vector<std::size_t>{0} : spec.k;
  for (std::uint64_t seed : spec.seeds) {
    for (std::size_t k : widths) {
      for (const auto& fmt_name : spec.formats) {
        const QuantFormat fmt = QuantFormat::parse(fmt_name);
        for (Method m : spec.methods) {
          const std::vector<double> lrs = is_reference(m) ? std::vector<double>{0.0} : spec.lr;
          const std::vector<double> lambdas = m == Method::kLotion ? spec.lambda : std::vector<double>{0.0};
          for (double lr : lrs) {
            for (double lambda : lambdas) {
              RunPlan p;
              p.key = RunKey{m, fmt.name(), lr, lambda, seed, k};
              p.config.method = m;
              p.config.lr = lr;
              p.config.total_steps = spec.total_steps;
              p.config.final_fraction = spec.final_fraction;
              p.config.lambda = lambda;
              p.config.fmt = fmt;
              p.config.eval_every = spec.eval_every;
              p.config.rr_eval_seeds = spec.rr_eval_seeds;
              p.config.seed = seed;
              p.config.curvature = spec.curvature;
              p.config.fisher_beta = spec.fisher_beta;
              p.config.differentiate_scale = spec.differentiate_scale;
              plans.push_back(std::move(p));
            }
          }
        }
      }
    }
  }
  return plans;
}

std::unique_ptr<Problem> make_problem(const ExperimentSpec& spec, const RunKey& key) {
  if (spec.testbed == Testbed::kQuadratic) {
    return std::make_unique<QuadraticProblem>(make_power_law_task(spec.d, spec.alpha, key.seed));
  }
  return std::make_unique<TwoLayerProblem>(make_two_layer_task(spec.d, key.k, spec.alpha, key.seed), spec.init_scale);
}

const std::vector<std::string>& results_columns() {
  static const std::vector<std::string> cols = {"method", "fmt",     "lr",      "lambda",       "seed",
                                                "step",   "fp_loss", "rtn_loss", "rr_loss_mean", "rr_loss_sd",
                                                "lr_now", "diverged", "k"};
  return cols;
}

std::string format_row(const RunKey& key, const RunRecord& rec) {
  std::string s = to_string(key.method);
  s += "," + key.fmt;
  s += "," + fmt_double(key.lr);
  s += "," + fmt_double(key.lambda);
  s += "," + std::to_string(key.seed);
  s += "," + std::to_string(rec.step);
  s += "," + fmt_double(rec.fp_loss);
  s += "," + fmt_double(rec.rtn_loss);
  s += "," + fmt_double(rec.rr_loss_mean);
  s += "," + fmt_double(rec.rr_loss_sd);
  s += "," + fmt_double(rec.lr_now);
  s += rec.diverged ? ",1" : ",0";
  s += "," + std::to_string(key.k);
  return s;
}

ResultsFile read_results(const fs::path& csv) {
  std::ifstream in(csv);
  if (!in) throw std::runtime_error("cannot open " + csv.string());
  ResultsFile file;
  std::string line;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      const std::string tag = "# spec_hash=";
      if (line.rfind(tag, 0) == 0) file.spec_hash = line.substr(tag.size());
      continue;
    }
    const auto cells = split_csv(line);
    if (!header_seen) {
      if (cells != results_columns()) throw std::runtime_error(csv.string() + ": unexpected column header");
      header_seen = true;
      continue;
    }
    if (cells.size() != results_columns().size()) {
      throw std::runtime_error(csv.string() + ": row has " + std::to_string(cells.size()) + " cells");
    }
    RunKey key{parse_method(cells[0]),           cells[1], parse_double(cells[2], "lr"),
               parse_double(cells[3], "lambda"), parse_u64(cells[4], "seed"), parse_u64(cells[12], "k")};
    RunRecord rec;
    rec.step = parse_u64(cells[5], "step");
    rec.fp_loss = parse_double(cells[6], "fp_loss");
    rec.rtn_loss = parse_double(cells[7], "rtn_loss");
    rec.rr_loss_mean = parse_double(cells[8], "rr_loss_mean");
    rec.rr_loss_sd = parse_double(cells[9], "rr_loss_sd");
    rec.lr_now = parse_double(cells[10], "lr_now");
    rec.diverged = cells[11] == "1";
    auto it = std::find_if(file.runs.begin(), file.runs.end(), [&](const RunSummary& r) { return r.key == key; });
    if (it == file.runs.end()) {
      file.runs.push_back({key, {rec}});
    } else {
      it->records.push_back(rec);
    }
  }
  if (!header_seen) throw std::runtime_error(csv.string() + ": missing column header");
  return file;
}

std::vector<SummaryRow> summarize_runs(std::span<const RunSummary> runs) {
  std::vector<RunSummary> ok;
  for (const auto& r : runs) {
    if (!r.records.empty() && !r.diverged()) ok.push_back(r);
  }
  std::vector<SummaryRow> rows;
  for (const auto& b : best_of_sweep(ok)) {
    rows.push_back({b, upper(to_string(b.group.method)) + " (" + to_string(b.rounding) + ")"});
    rows.back().best.run_index = 0;
  }
  std::stable_sort(rows.begin(), rows.end(), [](const SummaryRow& a, const SummaryRow& b) {
    return std::make_tuple(a.best.group.fmt, a.best.group.k, a.best.group.seed, a.best.final_loss, a.label) <
           std::make_tuple(b.best.group.fmt, b.best.group.k, b.best.group.seed, b.best.final_loss, b.label);
  });
  return rows;
}

std::string summarize(const fs::path& dir) {
  const ResultsFile file = read_results(dir / "results.csv");
  write_text_atomic(dir / "summary.json", summary_json(file.runs, file.spec_hash).dump(2) + "\n");

  std::ostringstream out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-10s %5s %5s  %-18s %10s %10s  %s\n", "fmt", "k", "seed", "method", "lr", "lambda",
                "final_loss");
  out << buf;
  for (const auto& row : summarize_runs(file.runs)) {
    const auto& g = row.best.group;
    std::snprintf(buf, sizeof buf, "%-10s %5zu %5" PRIu64 "  %-18s %10g %10g  %.6g\n", g.fmt.c_str(), g.k, g.seed,
                  row.label.c_str(), g.lr, g.lambda, row.best.final_loss);
    out << buf;
  }
  std::size_t diverged = 0;
  for (const auto& r : file.runs) diverged += r.diverged() ? 1 : 0;
  out << file.runs.size() << " runs, " << diverged << " diverged\n";
  return out.str();
}

std::vector<RunSummary> run_grid(const ExperimentSpec& spec, std::size_t workers, const ProgressFn& progress) {
  if (workers < 1) throw ConfigError("workers: must be >= 1");
  validate(spec);
  const std::vector<RunPlan> plans = expand(spec);
  std::vector<RunSummary> runs(plans.size());
  std::atomic<std::size_t> next{0}, done{0};
  std::atomic<bool> stop{false};
  std::mutex mu;
  std::exception_ptr error;
  auto worker = [&] {
    while (!stop.load()) {
      const std::size_t i = next.fetch_add(1);
      if (i >= plans.size()) break;
      try {
        const auto problem = make_problem(spec, plans[i].key);
        runs[i] = RunSummary{plans[i].key, train(plans[i].config, *problem).records};
        const std::size_t n = done.fetch_add(1) + 1;
        if (progress) {
          std::lock_guard lock(mu);
          progress(plans[i].key, n, plans.size());
        }
      } catch (...) {
        std::lock_guard lock(mu);
        if (!error) error = std::current_exception();
        stop = true;
      }
    }
  };
  std::vector<std::thread> threads;
  for (std::size_t t = 0; t < std::min(workers, plans.size()); ++t) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
  if (error) std::rethrow_exception(error);
  return runs;
}

SweepOutcome run_sweep(const ExperimentSpec& spec, std::size_t workers, const fs::path& out_dir,
                       const ProgressFn& progress) {
  if (workers < 1) throw ConfigError("workers: must be >= 1");
  validate(spec);
  const std::string hash = spec_hash(spec);
  const std::vector<RunPlan> plans = expand(spec);
  fs::create_directories(out_dir);
  const fs::path csv = out_dir / "results.csv";

  std::vector<std::optional<RunSummary>> slots(plans.size());
  SweepOutcome outcome;
  if (fs::exists(csv)) {
    ResultsFile previous = read_results(csv);
    if (previous.spec_hash != hash) {
      throw ConfigError("output: " + csv.string() + " was produced by spec " + previous.spec_hash +
                        ", not " + hash + "; use a fresh --out directory");
    }
    for (auto& run : previous.runs) {
      if (!is_complete(run, spec)) continue;
      for (std::size_t i = 0; i < plans.size(); ++i) {
        if (!slots[i] && plans[i].key == run.key) {
          slots[i] = std::move(run);
          ++outcome.resumed;
          break;
        }
      }
    }
  }
  write_text_atomic(out_dir / "spec.json", to_json(spec, true).dump(2) + "\n");

  std::vector<std::size_t> pending;
  for (std::size_t i = 0; i < plans.size(); ++i) {
    if (!slots[i]) pending.push_back(i);
  }

  // Checkpoint file: finished runs in completion order, rewritten canonically at the end.
  {
    std::string text = csv_header(hash);
    for (const auto& s : slots) {
      if (s) text += run_rows(*s);
    }
    write_text_atomic(csv, text);
  }
  std::ofstream journal(csv, std::ios::app | std::ios::binary);

  std::mutex mu;
  std::condition_variable cv;
  std::deque<std::size_t> finished;
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  std::exception_ptr error;

  auto worker = [&] {
    while (!stop.load()) {
      const std::size_t n = next.fetch_add(1);
      if (n >= pending.size()) break;
      const std::size_t idx = pending[n];
      try {
        const auto problem = make_problem(spec, plans[idx].key);
        TrainResult result = train(plans[idx].config, *problem);
        std::lock_guard lock(mu);
        slots[idx] = RunSummary{plans[idx].key, std::move(result.records)};
        finished.push_back(idx);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!error) error = std::current_exception();
        stop = true;
      }
      cv.notify_one();
    }
  };

  const std::size_t nthreads = std::min(workers, std::max<std::size_t>(pending.size(), 1));
  std::vector<std::thread> threads;
  threads.reserve(nthreads);
  for (std::size_t t = 0; t < nthreads; ++t) threads.emplace_back(worker);

  std::size_t written = 0;
  while (written < pending.size()) {
    std::unique_lock lock(mu);
    cv.wait(lock, [&] { return !finished.empty() || error; });
    if (error) break;
    while (!finished.empty()) {
      const std::size_t idx = finished.front();
      finished.pop_front();
      journal << run_rows(*slots[idx]);
      journal.flush();
      ++written;
      if (progress) progress(plans[idx].key, written + outcome.resumed, plans.size());
    }
  }
  for (auto& t : threads) t.join();
  journal.close();
  if (error) std::rethrow_exception(error);

  std::string text = csv_header(hash);
  for (auto& s : slots) {
    text += run_rows(*s);
    outcome.any_diverged = outcome.any_diverged || s->diverged();
    outcome.runs.push_back(std::move(*s));
  }
  write_text_atomic(csv, text);
  write_text_atomic(out_dir / "summary.json", summary_json(outcome.runs, hash).dump(2) + "\n");
  return outcome;
}

}  // namespace lotion
