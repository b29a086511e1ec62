// complaints: batch front end for corpus statistics, experiments and error
// export. Exit codes: 0 ok, 1 usage or config error, 2 data or runtime error.

#include <CLI11.hpp>

#include <complaints/experiment.hpp>

#include <iostream>

namespace {

using namespace complaints;

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kRuntime = 2;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs;
  std::string experiment;
  std::optional<std::filesystem::path> out;
  std::optional<std::size_t> sample;
  std::string run_dir;
  bool verbose = false;
};

ConfigOverrides overrides_of(const Options& o) {
  ConfigOverrides ov;
  ov.seed = o.seed;
  ov.jobs = o.jobs;
  ov.output_dir = o.out;
  if (!o.experiment.empty()) ov.experiment = parse_experiment(o.experiment);
  return ov;
}

ExperimentConfig load_or_report(const Options& o) {
  auto [config, issues] = read_experiment_config(o.config, overrides_of(o));
  if (!issues.empty()) throw ConfigError("invalid config " + o.config + ":\n" + format_issues(issues));
  return config;
}

int cmd_validate(const Options& o) {
  auto [config, issues] = read_experiment_config(o.config, overrides_of(o));
  if (issues.empty()) {
    std::cout << o.config << ": ok (config hash " << config_hash(config) << ")\n";
    return kOk;
  }
  std::cout << o.config << ": " << issues.size() << " problem(s)\n" << format_issues(issues);
  return kUsage;
}

int cmd_stats(const Options& o) {
  const auto config = load_or_report(o);
  const Posts gold = load_gold_corpus(config.paths.gold_corpus);
  if (gold.empty()) throw IoError("gold corpus " + config.paths.gold_corpus.string() + " has no posts");
  const auto stats = compute_stats(gold);
  std::cout << format_stats_table(stats);
  std::cout << fmt::format("complaint share: {:.1f}%\n", 100 * stats.complaint_ratio);
  return kOk;
}

int cmd_run(const Options& o) {
  const auto config = load_or_report(o);
  const auto summary = run_experiment(config);
  std::cout << (summary.nested ? format_metrics_table(*summary.nested)
                               : format_cross_domain_table(*summary.cross_domain));
  std::cout << "wrote " << summary.run_dir.string() << "\n";
  return kOk;
}

int cmd_errors(const Options& o) {
  const auto files = export_run_errors(o.run_dir, o.sample, o.seed.value_or(0));
  const auto& s = files.exported.summary;
  std::cout << fmt::format("complaints predicted as non-complaints: {:.2f}%\n", 100 * s.missed_complaint_rate());
  std::cout << fmt::format("non-complaints predicted as complaints: {:.2f}%\n", 100 * s.flagged_non_complaint_rate());
  std::cout << "wrote " << files.written.size() << " records to "
            << (std::filesystem::path(o.run_dir) / "errors.jsonl").string() << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Complaint detection experiments"};
  app.require_subcommand(1);
  Options o;
  std::uint64_t seed = 0;
  std::size_t jobs = 0;
  std::size_t sample = 0;
  std::string out;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", o.config, "Experiment config (JSON) or a run manifest")->required()->check(CLI::ExistingFile);
    cmd->add_option("--seed", seed, "Override the config seed");
    cmd->add_option("--jobs", jobs, "Concurrent fold/cell jobs")->check(CLI::PositiveNumber);
    cmd->add_option("--out", out, "Override paths.output_dir");
    cmd->add_option("--experiment", o.experiment, "nested_cv or cross_domain")
        ->check(CLI::IsMember({"nested_cv", "cross_domain"}));
    cmd->add_flag("-v,--verbose", o.verbose, "Debug logging");
  };
  auto* validate = app.add_subcommand("validate", "Check a config file");
  add_common(validate);
  auto* stats = app.add_subcommand("stats", "Per-domain corpus counts");
  add_common(stats);
  auto* run = app.add_subcommand("run", "Run nested cross-validation or the cross-domain matrix");
  add_common(run);
  auto* errors = app.add_subcommand("errors", "Export misclassified posts from a nested_cv run");
  errors->add_option("run_dir", o.run_dir, "Run directory")->required();
  errors->add_option("--sample", sample, "Records per error direction")->check(CLI::PositiveNumber);
  errors->add_option("--seed", seed, "Sampling seed");
  errors->add_flag("-v,--verbose", o.verbose, "Debug logging");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }
  for (auto* cmd : {validate, stats, run, errors}) {
    if (!cmd->parsed()) continue;
    if (cmd->count("--seed")) o.seed = seed;
    if (cmd != errors && cmd->count("--jobs")) o.jobs = jobs;
    if (cmd != errors && cmd->count("--out")) o.out = out;
    if (cmd == errors && cmd->count("--sample")) o.sample = sample;
  }
  if (o.verbose) log::logger()->set_level(spdlog::level::debug);

  try {
    if (validate->parsed()) return cmd_validate(o);
    if (stats->parsed()) return cmd_stats(o);
    if (run->parsed()) return cmd_run(o);
    return cmd_errors(o);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const JobError& e) {
    std::cerr << "error in job " << e.job() << ": " << e.what() << "\n";
    return kRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
}
