#pragma once

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "complaints/adapters.hpp"
#include "complaints/bow.hpp"
#include "complaints/corpus.hpp"
#include "complaints/error.hpp"
#include "complaints/evaluation.hpp"
#include "complaints/features.hpp"
#include "complaints/folds.hpp"
#include "complaints/log.hpp"
#include "complaints/model.hpp"
#include "complaints/report.hpp"
#include "complaints/seeding.hpp"
#include "complaints/tokenizers.hpp"

// Declarative experiment configuration and the batch runner behind the CLI.

namespace complaints {

enum class Experiment { nested_cv, cross_domain };

inline std::string_view to_string(Experiment e) { return e == Experiment::nested_cv ? "nested_cv" : "cross_domain"; }

inline std::optional<Experiment> parse_experiment(std::string_view s) {
  if (s == "nested_cv") return Experiment::nested_cv;
  if (s == "cross_domain") return Experiment::cross_domain;
  return std::nullopt;
}

inline constexpr std::string_view kBowModel = "lr_bow";

struct ExperimentPaths {
  std::filesystem::path gold_corpus;
  std::filesystem::path distant_complaints;
  std::filesystem::path distant_non_complaints;
  std::filesystem::path topic_clusters;
  std::filesystem::path emotion_lexicon;
  std::filesystem::path weights_cache;
  std::filesystem::path output_dir;
};

struct ModelSpec {
  std::string adapter = "toy";  // an adapter name or "lr_bow"
  FusionMode fusion = FusionMode::none;
  bool distant = false;
  ToyConfig toy;
  std::optional<std::size_t> expected_distant_complaints;
  std::optional<std::size_t> expected_distant_non_complaints;

  bool is_bow() const { return adapter == kBowModel; }
};

struct ExperimentConfig {
  ExperimentPaths paths;
  ModelSpec model;
  TrainConfig train;
  BowConfig bow;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  Experiment experiment = Experiment::nested_cv;
};

/// One problem found in a config, keyed by its dotted path.
struct ConfigIssue {
  std::string key;
  std::string message;
};

inline std::string format_issues(const std::vector<ConfigIssue>& issues) {
  std::string out;
  for (const auto& i : issues) out += i.key + ": " + i.message + "\n";
  return out;
}

// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const ExperimentConfig& c) {
  auto path = [](const std::filesystem::path& p) { return p.empty() ? nlohmann::json(nullptr) : nlohmann::json(p.string()); };
  nlohmann::json toy = {{"vocab_size", c.model.toy.vocab_size}, {"hidden", c.model.toy.hidden},
                        {"layers", c.model.toy.layers},         {"heads", c.model.toy.heads},
                        {"intermediate", c.model.toy.intermediate}, {"dropout", c.model.toy.dropout}};
  nlohmann::json model = {{"adapter", c.model.adapter},
                          {"fusion", to_string(c.model.fusion)},
                          {"distant", c.model.distant},
                          {"toy", toy}};
  if (c.model.expected_distant_complaints) model["expected_distant_complaints"] = *c.model.expected_distant_complaints;
  if (c.model.expected_distant_non_complaints)
    model["expected_distant_non_complaints"] = *c.model.expected_distant_non_complaints;
  return {{"paths",
           {{"gold_corpus", path(c.paths.gold_corpus)},
            {"distant_complaints", path(c.paths.distant_complaints)},
            {"distant_non_complaints", path(c.paths.distant_non_complaints)},
            {"topic_clusters", path(c.paths.topic_clusters)},
            {"emotion_lexicon", path(c.paths.emotion_lexicon)},
            {"weights_cache", path(c.paths.weights_cache)},
            {"output_dir", path(c.paths.output_dir)}}},
          {"model", model},
          {"train", c.train},
          {"bow", c.bow},
          {"seed", c.seed},
          {"jobs", c.jobs},
          {"experiment", to_string(c.experiment)}};
}

/// Stable 64-bit digest of the resolved configuration. Job count and output
/// directory are left out; they do not affect results.
inline std::string config_hash(const ExperimentConfig& c) {
  auto j = to_json(c);
  j.erase("jobs");
  j["paths"].erase("output_dir");
  return fmt::format("{:016x}", fnv1a(j.dump()));
}

namespace detail {

class IssueCollector {
 public:
  template <typename Fn>
  void guard(const std::string& key, Fn&& fn) {
    try {
      fn();
    } catch (const ConfigError& e) {
      const std::string what = e.what();
      issues.push_back({what.rfind(key, 0) == 0 ? what.substr(0, what.find(':')) : key,
                        what.rfind(key, 0) == 0 ? what.substr(what.find(':') + 2) : what});
    } catch (const nlohmann::json::exception& e) {
      issues.push_back({key, std::string("wrong type: ") + e.what()});
    }
  }
  void add(std::string key, std::string message) { issues.push_back({std::move(key), std::move(message)}); }

  std::vector<ConfigIssue> issues;
};

inline void parse_paths(const nlohmann::json& j, const std::filesystem::path& base, ExperimentPaths& p,
                        IssueCollector& issues) {
  if (!j.is_object()) return issues.add("paths", "expected an object");
  const std::pair<const char*, std::filesystem::path*> fields[] = {
      {"gold_corpus", &p.gold_corpus},
      {"distant_complaints", &p.distant_complaints},
      {"distant_non_complaints", &p.distant_non_complaints},
      {"topic_clusters", &p.topic_clusters},
      {"emotion_lexicon", &p.emotion_lexicon},
      {"weights_cache", &p.weights_cache},
      {"output_dir", &p.output_dir}};
  for (const auto& [k, v] : j.items()) {
    bool known = false;
    for (const auto& [name, target] : fields) {
      if (k != name) continue;
      known = true;
      if (v.is_null()) break;
      if (!v.is_string()) {
        issues.add("paths." + k, "expected a string");
        break;
      }
      std::filesystem::path value = v.get<std::string>();
      *target = std::filesystem::absolute(value.is_absolute() ? value : base / value).lexically_normal();
    }
    if (!known) issues.add("paths." + k, "unknown key");
  }
}

inline void parse_model(const nlohmann::json& j, ModelSpec& m, IssueCollector& issues) {
  if (!j.is_object()) return issues.add("model", "expected an object");
  for (const auto& [k, v] : j.items()) {
    const std::string key = "model." + k;
    issues.guard(key, [&] {
      if (k == "adapter") {
        m.adapter = v.get<std::string>();
        if (!parse_adapter_name(m.adapter) && m.adapter != kBowModel) {
          std::string allowed;
          for (auto n : kAdapterNames) allowed += std::string(n) + ", ";
          throw ConfigError(key + ": unknown adapter '" + m.adapter + "' (expected one of " + allowed +
                            std::string(kBowModel) + ")");
        }
      } else if (k == "fusion") {
        auto f = parse_fusion_mode(v.get<std::string>());
        if (!f) throw ConfigError(key + ": unknown fusion mode '" + v.get<std::string>() + "'");
        m.fusion = *f;
      } else if (k == "distant") {
        m.distant = v.get<bool>();
      } else if (k == "expected_distant_complaints") {
        m.expected_distant_complaints = v.get<std::size_t>();
      } else if (k == "expected_distant_non_complaints") {
        m.expected_distant_non_complaints = v.get<std::size_t>();
      } else if (k == "toy") {
        for (const auto& [tk, tv] : v.items()) {
          if (tk == "vocab_size") m.toy.vocab_size = tv.get<std::size_t>();
          else if (tk == "hidden") m.toy.hidden = tv.get<std::size_t>();
          else if (tk == "layers") m.toy.layers = tv.get<std::size_t>();
          else if (tk == "heads") m.toy.heads = tv.get<std::size_t>();
          else if (tk == "intermediate") m.toy.intermediate = tv.get<std::size_t>();
          else if (tk == "dropout") m.toy.dropout = tv.get<Real>();
          else throw ConfigError(key + "." + tk + ": unknown key");
        }
        if (m.toy.layers > 2 || m.toy.hidden > 64) throw ConfigError(key + ": toy encoder is limited to 2 layers and width 64");
        if (m.toy.heads == 0 || m.toy.hidden % m.toy.heads != 0)
          throw ConfigError(key + ".heads: must divide hidden");
      } else {
        throw ConfigError(key + ": unknown key");
      }
    });
  }
}

inline void require_path(IssueCollector& issues, const std::string& key, const std::filesystem::path& p,
                         bool needed, const std::string& why) {
  if (p.empty()) {
    if (needed) issues.add(key, "required " + why);
    return;
  }
  if (!std::filesystem::exists(p)) issues.add(key, "path does not exist: " + p.string());
}

}  // namespace detail

/// Parses and checks a config document. Relative paths resolve against
/// `base`. Every problem is returned; the config is usable only when the
/// list is empty.
inline std::pair<ExperimentConfig, std::vector<ConfigIssue>> parse_experiment_config(
    const nlohmann::json& j, const std::filesystem::path& base, bool check_paths = true) {
  ExperimentConfig c;
  detail::IssueCollector issues;
  if (!j.is_object()) {
    issues.add("(root)", "expected an object");
    return {c, issues.issues};
  }
  for (const auto& [k, v] : j.items()) {
    if (k == "paths") detail::parse_paths(v, base, c.paths, issues);
    else if (k == "model") detail::parse_model(v, c.model, issues);
    else if (k == "train") issues.guard("train", [&] { merge_json(c.train, v, "train"); });
    else if (k == "bow") issues.guard("bow", [&] { merge_json(c.bow, v, "bow"); });
    else if (k == "seed") issues.guard("seed", [&] { c.seed = v.get<std::uint64_t>(); });
    else if (k == "jobs") issues.guard("jobs", [&] { c.jobs = v.get<std::size_t>(); });
    else if (k == "experiment") {
      issues.guard("experiment", [&] {
        auto e = parse_experiment(v.get<std::string>());
        if (!e) throw ConfigError("experiment: unknown experiment '" + v.get<std::string>() + "'");
        c.experiment = *e;
      });
    } else {
      issues.add(k, "unknown key");
    }
  }
  c.train.fusion = c.model.fusion;
  c.train.distant_stage = c.model.distant;
  c.train.seed = c.seed;
  issues.guard("train", [&] { c.train.validate(); });
  issues.guard("bow", [&] { c.bow.validate(); });
  if (c.jobs == 0) issues.add("jobs", "must be positive");
  if (c.model.is_bow() && c.model.fusion != FusionMode::none)
    issues.add("model.fusion", "the lr_bow baseline takes no fusion features");

  if (check_paths) {
    using detail::require_path;
    require_path(issues, "paths.gold_corpus", c.paths.gold_corpus, true, "(annotated corpus)");
    require_path(issues, "paths.distant_complaints", c.paths.distant_complaints, c.model.distant,
                 "when model.distant is true");
    require_path(issues, "paths.distant_non_complaints", c.paths.distant_non_complaints, c.model.distant,
                 "when model.distant is true");
    const bool emotion = c.model.fusion == FusionMode::emotion || c.model.fusion == FusionMode::emotion_topics;
    const bool topics = c.model.fusion == FusionMode::topics || c.model.fusion == FusionMode::emotion_topics;
    require_path(issues, "paths.emotion_lexicon", c.paths.emotion_lexicon, emotion, "for emotion fusion");
    require_path(issues, "paths.topic_clusters", c.paths.topic_clusters, topics, "for topic fusion");
    const bool pretrained = !c.model.is_bow() && c.model.adapter != "toy";
    const auto cache = weights_cache(c.paths.weights_cache);
    if (pretrained && cache.empty())
      issues.add("paths.weights_cache", std::string("required for pre-trained adapters (or set ") + kWeightsEnv + ")");
    else if (!cache.empty() && !std::filesystem::exists(cache))
      issues.add(cache == c.paths.weights_cache ? "paths.weights_cache" : kWeightsEnv,
                 "path does not exist: " + cache.string());
    else if (pretrained && !std::filesystem::is_directory(cache / c.model.adapter))
      issues.add("paths.weights_cache", "no '" + c.model.adapter + "' checkpoint under " + cache.string());
    if (c.paths.output_dir.empty()) issues.add("paths.output_dir", "required");
    else if (std::filesystem::exists(c.paths.output_dir) && !std::filesystem::is_directory(c.paths.output_dir))
      issues.add("paths.output_dir", "exists and is not a directory");
    else if (std::error_code ec; !std::filesystem::create_directories(c.paths.output_dir, ec) && ec)
      issues.add("paths.output_dir", "cannot create: " + ec.message());
  }
  return {c, issues.issues};
}

/// Command-line values that take precedence over the file.
struct ConfigOverrides {
  std::optional<std::uint64_t> seed{};
  std::optional<std::size_t> jobs{};
  std::optional<Experiment> experiment{};
  std::optional<std::filesystem::path> output_dir{};
};

/// Reads a config file, or the config embedded in a run manifest.
inline std::pair<ExperimentConfig, std::vector<ConfigIssue>> read_experiment_config(
    const std::filesystem::path& path, const ConfigOverrides& overrides = {}, bool check_paths = true) {
  nlohmann::json j;
  try {
    j = detail::read_json_file(path);
  } catch (const IoError& e) {
    return {ExperimentConfig{}, {{"(file)", e.what()}}};
  }
  if (j.is_object() && j.contains("manifest_version") && j.contains("config")) j = j.at("config");
  if (j.is_object()) {
    if (overrides.seed) j["seed"] = *overrides.seed;
    if (overrides.jobs) j["jobs"] = *overrides.jobs;
    if (overrides.experiment) j["experiment"] = to_string(*overrides.experiment);
    if (overrides.output_dir) j["paths"]["output_dir"] = std::filesystem::absolute(*overrides.output_dir).string();
  }
  return parse_experiment_config(j, path.parent_path(), check_paths);
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& path, const ConfigOverrides& overrides = {}) {
  auto [config, issues] = read_experiment_config(path, overrides);
  if (!issues.empty()) throw ConfigError("invalid config " + path.string() + ":\n" + format_issues(issues));
  return config;
}

// ---------------------------------------------------------------------------
// Running

/// Loaded corpora and resources for one config.
struct ExperimentInputs {
  Posts gold;
  Posts distant;
  std::optional<EmotionLexicon> lexicon;
  std::optional<TopicModel> topics;
  std::optional<FeatureExtractor> features;
};

inline ExperimentInputs load_inputs(const ExperimentConfig& c) {
  ExperimentInputs in;
  in.gold = load_gold_corpus(c.paths.gold_corpus);
  if (in.gold.empty()) throw IoError("gold corpus " + c.paths.gold_corpus.string() + " has no posts");
  if (c.model.distant) {
    DistantCorpusSpec spec;
    spec.complaint_path = c.paths.distant_complaints;
    spec.non_complaint_path = c.paths.distant_non_complaints;
    if (c.model.expected_distant_complaints) spec.expected_complaints = *c.model.expected_distant_complaints;
    if (c.model.expected_distant_non_complaints) spec.expected_non_complaints = *c.model.expected_distant_non_complaints;
    in.distant = load_distant_corpus(spec);
  }
  if (auto mode = feature_mode(c.model.fusion)) {
    if (*mode != FeatureMode::topics) in.lexicon = load_emotion_lexicon(c.paths.emotion_lexicon);
    if (*mode != FeatureMode::emotion) in.topics = load_topic_model(c.paths.topic_clusters);
    in.features.emplace(*mode, in.lexicon ? &*in.lexicon : nullptr, in.topics ? &*in.topics : nullptr);
  }
  return in;
}

inline std::unique_ptr<Learner> make_learner(const ExperimentConfig& c, const ExperimentInputs& in) {
  if (c.model.is_bow()) return std::make_unique<BowLearner>(c.bow, c.model.distant ? in.distant : Posts{});
  auto name = parse_adapter_name(c.model.adapter);
  if (!name) throw ConfigError("model.adapter: unknown adapter '" + c.model.adapter + "'");
  EncoderAdapter adapter = *name == AdapterName::toy
                               ? make_toy_adapter(derive_seed(c.seed, "toy-encoder"), c.model.toy)
                               : load_adapter(*name, weights_cache(c.paths.weights_cache), derive_seed(c.seed, "encoder"));
  return std::make_unique<TransformerLearner>(std::move(adapter), c.train, in.features ? &*in.features : nullptr,
                                              c.model.distant ? in.distant : Posts{});
}

/// Directory name for a run: experiment, learner and seed.
inline std::string run_name(const ExperimentConfig& c, const Learner& learner) {
  std::string name = fmt::format("{}-{}-seed{}", to_string(c.experiment), learner.name(), c.seed);
  for (char& ch : name)
    if (ch == '+') ch = '_';
  return name;
}

/// Writes files into a private staging directory, then renames it over
/// `target` in one step.
class StagedDirectory {
 public:
  explicit StagedDirectory(std::filesystem::path target) : target_(std::move(target)) {
    staging_ = target_.parent_path() / (".staging-" + target_.filename().string() + "-" +
                                        std::to_string(std::chrono::steady_clock::now().time_since_epoch().count()));
    std::filesystem::create_directories(staging_);
  }
  StagedDirectory(const StagedDirectory&) = delete;
  StagedDirectory& operator=(const StagedDirectory&) = delete;
  ~StagedDirectory() {
    std::error_code ec;
    if (!committed_) std::filesystem::remove_all(staging_, ec);
  }

  void write(const std::string& name, const std::string& content) const {
    std::ofstream out(staging_ / name, std::ios::binary | std::ios::trunc);
    out << content;
    if (!out) throw IoError("failed writing " + (staging_ / name).string());
  }

  void commit() {
    std::error_code ec;
    const auto old = target_.parent_path() / (".old-" + target_.filename().string());
    std::filesystem::remove_all(old, ec);
    if (std::filesystem::exists(target_)) std::filesystem::rename(target_, old);
    std::filesystem::rename(staging_, target_);
    std::filesystem::remove_all(old, ec);
    committed_ = true;
  }

 private:
  std::filesystem::path target_;
  std::filesystem::path staging_;
  bool committed_ = false;
};

inline constexpr int kManifestVersion = 1;

struct RunSummary {
  std::filesystem::path run_dir;
  std::string learner;
  std::optional<NestedCvResult> nested;
  std::optional<CrossDomainMatrix> cross_domain;
};

inline std::string predictions_jsonl(const Posts& gold, const NestedCvResult& result) {
  std::unordered_map<std::string_view, Label> label;
  for (const auto& p : gold) label.emplace(p.id, p.label);
  std::string out;
  for (const auto& p : out_of_fold(result)) {
    nlohmann::json j = {{"id", p.id},
                        {"fold", p.fold},
                        {"probability", p.prediction.probability},
                        {"predicted", std::string(to_string(p.prediction.label))},
                        {"gold", std::string(to_string(label.at(p.id)))}};
    out += j.dump() + "\n";
  }
  return out;
}

/// Runs the configured experiment and writes report.json, report.txt,
/// manifest.json (and predictions.jsonl for nested CV) into
/// <output_dir>/<run name>/.
inline RunSummary run_experiment(const ExperimentConfig& c) {
  using clock = std::chrono::steady_clock;
  auto seconds = [](clock::duration d) { return std::chrono::duration<double>(d).count(); };
  const auto started = clock::now();
  auto inputs = load_inputs(c);
  auto learner = make_learner(c, inputs);
  const auto loaded = clock::now();

  RunSummary summary;
  summary.learner = learner->name();
  std::filesystem::create_directories(c.paths.output_dir);
  summary.run_dir = c.paths.output_dir / run_name(c, *learner);
  StagedDirectory staged(summary.run_dir);
  const RunOptions options{c.seed, c.jobs};

  nlohmann::json report;
  std::string table;
  if (c.experiment == Experiment::nested_cv) {
    const auto plan = make_fold_plan(inputs.gold, c.seed);
    summary.nested = run_nested_cv(inputs.gold, *learner, plan, options);
    report = to_json(*summary.nested);
    table = format_metrics_table(*summary.nested);
    staged.write("predictions.jsonl", predictions_jsonl(inputs.gold, *summary.nested));
  } else {
    summary.cross_domain = run_cross_domain(inputs.gold, *learner, options);
    report = to_json(*summary.cross_domain, learner->name());
    table = format_cross_domain_table(*summary.cross_domain);
  }
  const auto finished = clock::now();
  report["seed"] = c.seed;
  report["config_hash"] = config_hash(c);
  staged.write("report.json", report.dump(2) + "\n");
  staged.write("report.txt", table);

  nlohmann::json manifest = {{"manifest_version", kManifestVersion},
                             {"experiment", to_string(c.experiment)},
                             {"learner", learner->name()},
                             {"seed", c.seed},
                             {"config_hash", config_hash(c)},
                             {"config", to_json(c)},
                             {"gold_posts", inputs.gold.size()},
                             {"distant_posts", inputs.distant.size()},
                             {"timings_seconds",
                              {{"load", seconds(loaded - started)},
                               {"experiment", seconds(finished - loaded)},
                               {"total", seconds(finished - started)}}}};
  staged.write("manifest.json", manifest.dump(2) + "\n");
  staged.commit();
  return summary;
}

// ---------------------------------------------------------------------------
// Error export from a finished run

inline std::vector<OutOfFoldPrediction> read_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("missing run artifact " + path.string());
  std::vector<OutOfFoldPrediction> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      auto label = parse_label(j.at("predicted").get<std::string>());
      if (!label) throw IoError("bad label");
      out.push_back({j.at("id").get<std::string>(), j.at("fold").get<std::size_t>(),
                     {j.at("probability").get<double>(), *label}});
    } catch (const std::exception& e) {
      throw IoError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

struct ErrorFiles {
  ErrorExport exported;
  std::vector<ErrorRecord> written;
};

/// Writes errors.jsonl and errors_summary.json into a nested-CV run
/// directory. With `sample`, only that many records per error direction
/// are written, drawn with `seed`.
inline ErrorFiles export_run_errors(const std::filesystem::path& run_dir, std::optional<std::size_t> sample,
                                    std::uint64_t seed) {
  const auto manifest_path = run_dir / "manifest.json";
  if (!std::filesystem::exists(manifest_path)) throw IoError("missing run artifact " + manifest_path.string());
  const auto manifest = detail::read_json_file(manifest_path);
  if (manifest.value("experiment", "") != "nested_cv")
    throw IoError(run_dir.string() + " is not a nested_cv run");
  auto [config, issues] = parse_experiment_config(manifest.at("config"), run_dir, false);
  if (!issues.empty()) throw IoError("manifest config is invalid:\n" + format_issues(issues));
  const Posts gold = load_gold_corpus(config.paths.gold_corpus);

  ErrorFiles files;
  files.exported = export_errors(gold, read_predictions(run_dir / "predictions.jsonl"));
  files.written = sample ? sample_errors(files.exported.records, *sample, seed) : files.exported.records;
  std::string lines;
  for (const auto& r : files.written) lines += nlohmann::json(r).dump() + "\n";
  nlohmann::json summary = files.exported.summary;
  summary["records_written"] = files.written.size();
  if (sample) summary["sample"] = {{"per_direction", *sample}, {"seed", seed}};
  summary["reference"] = {{"complaint_error_rate", kReferenceMissedComplaintRate},
                          {"non_complaint_error_rate", kReferenceFlaggedNonComplaintRate}};
  nlohmann::json categories = nlohmann::json::array();
  for (const auto& cat : kErrorCategories)
    categories.push_back({{"name", cat.name}, {"gold", std::string(to_string(cat.gold))}, {"published_share", cat.share}});
  summary["categories"] = categories;

  auto write_atomic = [&](const std::string& name, const std::string& content) {
    const auto tmp = run_dir / ("." + name + ".tmp");
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      out << content;
      if (!out) throw IoError("failed writing " + tmp.string());
    }
    std::filesystem::rename(tmp, run_dir / name);
  };
  write_atomic("errors.jsonl", lines);
  write_atomic("errors_summary.json", summary.dump(2) + "\n");
  return files;
}

}  // namespace complaints
