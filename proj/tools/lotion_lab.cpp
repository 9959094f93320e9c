// lotion-lab: run quantization-training sweeps, summarize them, and run the
// acceptance checks.
//
// Exit codes: 0 success, 1 config error, 2 a run diverged, 3 verification failed.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lotion/harness.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kDiverged = 2;
constexpr int kVerifyFailed = 3;

int cmd_run(const std::string& spec_file, std::size_t workers, std::string out, bool quiet) {
  const lotion::ExperimentSpec spec = lotion::load_spec(spec_file);
  if (out.empty()) out = spec.output;
  if (out.empty()) throw lotion::ConfigError("output: pass --out or set \"output\" in the spec file");

  lotion::ProgressFn progress;
  if (!quiet) {
    progress = [](const lotion::RunKey& key, std::size_t done, std::size_t total) {
      std::fprintf(stderr, "[%zu/%zu] %s %s lr=%g lambda=%g seed=%llu k=%zu\n", done, total,
                   lotion::to_string(key.method).c_str(), key.fmt.c_str(), key.lr, key.lambda,
                   static_cast<unsigned long long>(key.seed), key.k);
    };
  }
  const auto outcome = lotion::run_sweep(spec, workers, out, progress);
  std::size_t diverged = 0;
  for (const auto& r : outcome.runs) diverged += r.diverged() ? 1 : 0;
  std::printf("%zu runs (%zu resumed, %zu diverged) -> %s\n", outcome.runs.size(), outcome.resumed, diverged,
              out.c_str());
  std::printf("spec_hash=%s\n", lotion::spec_hash(spec).c_str());
  return outcome.any_diverged ? kDiverged : kOk;
}

int cmd_summarize(const std::string& dir) {
  std::fputs(lotion::summarize(dir).c_str(), stdout);
  return kOk;
}

int cmd_verify(const std::vector<int>& only) {
  bool all = true;
  lotion::run_acceptance(only, [&](const lotion::CheckResult& r) {
    std::printf("%s\n", lotion::format_check(r).c_str());
    std::fflush(stdout);
    all = all && r.passed;
  });
  return all ? kOk : kVerifyFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Quantization-aware training experiments on synthetic testbeds"};
  app.require_subcommand(1);

  std::string spec_file, out_dir, summarize_dir;
  std::size_t workers = 1;
  bool quiet = false;
  auto* run = app.add_subcommand("run", "Run an experiment grid");
  run->add_option("--spec", spec_file, "Experiment spec (JSON)")->required()->check(CLI::ExistingFile);
  run->add_option("--workers", workers, "Worker threads")->check(CLI::PositiveNumber);
  run->add_option("--out", out_dir, "Output directory");
  run->add_flag("-q,--quiet", quiet, "No per-run progress on stderr");

  auto* summ = app.add_subcommand("summarize", "Rebuild summary.json and print the best configs");
  summ->add_option("dir", summarize_dir, "Output directory of a run")->required()->check(CLI::ExistingDirectory);

  std::vector<int> only;
  auto* verify = app.add_subcommand("verify", "Run the acceptance checks");
  verify->add_option("--only", only, "Check ids to run (1-10)")->check(CLI::Range(1, 10));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*run) return cmd_run(spec_file, workers, out_dir, quiet);
    if (*summ) return cmd_summarize(summarize_dir);
    if (*verify) return cmd_verify(only);
  } catch (const lotion::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfigError;
  }
  return kOk;
}
