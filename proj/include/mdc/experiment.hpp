#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mdc/corpus.hpp"
#include "mdc/curriculum.hpp"
#include "mdc/features.hpp"
#include "mdc/optimizer.hpp"
#include "mdc/synthetic.hpp"
#include "mdc/toymt.hpp"

namespace mdc {

enum class FeatureKind { kNlm, kNmt, kMultiNmt, kEmb, kExternal };

std::string to_string(FeatureKind kind);
FeatureKind parse_feature_kind(const std::string& name);

struct FeatureSpec {
  std::string name;
  FeatureKind kind = FeatureKind::kEmb;
  std::string domain;                // nlm: monolingual set; nmt: seed set
  std::vector<std::string> domains;  // multi-nmt: seed sets, empty = all
  std::string path;                  // external: id<TAB>value file
  NGramConfig lm;                    // nlm
  double mu = 0.5;                   // nlm
  double lr = 1e-2;                  // nmt, multi-nmt
  int steps = 10;                    // nmt, multi-nmt
  std::size_t buckets = kDefaultBuckets;  // emb

  bool operator==(const FeatureSpec&) const = default;
};

struct ValidationSpec {
  std::string name;
  std::string path;
  double ratio = 0.0;

  bool operator==(const ValidationSpec&) const = default;
};

/// Plain uniform training that produces the warm base model.
struct WarmSpec {
  std::int64_t steps = 1000;
  TrainerConfig trainer;

  bool operator==(const WarmSpec&) const = default;
};

struct TuningSpec {
  std::string method = "bo";  // bo | rs | uniform
  std::size_t trials = 30;
  std::size_t explore = 25;
  std::int64_t trial_steps = 2000;
  double trial_floor = 0.2;  // rho plateaus here at trial_steps
  double lo = 0.0;
  double hi = 1.0;
  ProposalConfig proposal;

  bool operator==(const TuningSpec&) const = default;
};

struct FinetuneSpec {
  double lr = 1e-2;
  int steps = 10;

  bool operator==(const FinetuneSpec&) const = default;
};

/// One experiment, read from a JSON file. Relative paths resolve against
/// the directory of that file.
struct ExperimentConfig {
  std::filesystem::path base_dir;  // not serialized

  std::string corpus;
  std::string format;  // tsv | jsonl; empty = from extension
  std::string output_dir = "out";
  std::uint64_t seed = 1;
  std::vector<FeatureSpec> features;
  std::map<std::string, std::string> seeds;        // name -> parallel file
  std::map<std::string, std::string> monolingual;  // name -> text file
  std::string base_text;   // LM base text; empty = corpus source side
  std::string base_model;  // existing warm model; empty = train one
  std::vector<ValidationSpec> validation;
  WarmSpec warm;
  TrainerConfig trainer;
  Schedule schedule;
  TuningSpec tuning;
  FinetuneSpec finetune;
  std::vector<std::string> runs;  // report order; empty = every run found
  std::string ratings;            // optional id<TAB>rating file
  std::vector<double> balance_thresholds = {0.0, 0.1, 0.2, 0.3, 0.4,
                                            0.5, 0.6, 0.7, 0.8, 0.9};

  std::filesystem::path resolve(const std::string& path) const;
  /// output_dir, under $MDC_OUTPUT_ROOT when that is set and the
  /// directory is relative.
  std::filesystem::path output_path() const;

  /// Structural checks; `check_paths` also requires input files to exist.
  void validate(bool check_paths = true) const;

  bool operator==(const ExperimentConfig&) const = default;
};

ExperimentConfig parse_config(const std::string& json_text,
                              const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);
std::string serialize_config(const ExperimentConfig& config);

/// Per-component seeds, all derived from the top-level seed.
struct ExperimentSeeds {
  std::uint64_t warm, mix, trial, tune, train;
  static ExperimentSeeds from(std::uint64_t seed);
};

/// Inputs of an experiment held in memory.
struct ExperimentData {
  ScoredCorpus corpus;
  std::vector<DomainSeedSet> seeds;
  std::map<std::string, std::vector<Tokens>> monolingual;
  std::vector<Tokens> base_text;
  std::vector<std::string> validation_names;
  std::vector<std::vector<SentencePair>> validation;
  std::vector<double> ratios;
  std::vector<SentencePair> mixed;  // mix_validation of the sets above
  VocabularyPair vocab;

  const DomainSeedSet& seed(const std::string& name) const;
};

/// Reads every input named by the config.
ExperimentData load_data(const ExperimentConfig& config);
/// Builds the derived fields (vocabularies, mixed validation) in place.
void finalize_data(ExperimentData& data, std::uint64_t mix_seed);

ToyTranslationModel train_warm_model(const ExperimentData& data, const WarmSpec& warm,
                                     std::uint64_t seed);

/// One feature column in corpus row order. External features are read from
/// their file.
std::vector<double> compute_feature(const ExperimentConfig& config,
                                    const ExperimentData& data,
                                    const ToyTranslationModel& base,
                                    const FeatureSpec& spec);

/// Copy of the corpus with every configured feature attached.
ScoredCorpus score_features(const ExperimentConfig& config, const ExperimentData& data,
                            const ToyTranslationModel& base);

SearchSpace search_space(const ExperimentConfig& config,
                         const std::vector<std::string>& names);

/// Trial protocol: rho plateaus at trial_floor at trial_steps.
Schedule trial_schedule(const TuningSpec& tuning);

SearchResult run_tuning(const ExperimentConfig& config, const ExperimentData& data,
                        const ScoredCorpus& scored, const ToyTranslationModel& warm,
                        TrialHistory resume = {});

/// Perplexity on each validation set, then on the mixture.
struct EvalRow {
  std::string stage;
  std::vector<double> per_set;
  double mixed = 0.0;

  double average() const;
  bool operator==(const EvalRow&) const = default;
};

EvalRow evaluate_model(const ToyTranslationModel& model, const ExperimentData& data,
                       const std::string& stage);

void write_eval(const std::filesystem::path& path,
                const std::vector<std::string>& set_names,
                const std::vector<EvalRow>& rows);
std::vector<EvalRow> read_eval(const std::filesystem::path& path,
                               std::vector<std::string>* set_names = nullptr);

enum class TrainMode { kCurriculum, kNoCurriculum, kLossWeighted };

struct TrainOptions {
  TrainMode mode = TrainMode::kCurriculum;
  std::optional<WeightVector> weights;  // required unless kNoCurriculum
  std::optional<Schedule> schedule;     // default: config.schedule
  std::optional<std::uint64_t> seed;    // default: derived train seed
  std::vector<std::string> finetune;    // seed sets to fine-tune on afterwards
};

struct TrainResult {
  TrainingRun run;
  std::vector<EvalRow> eval;  // "final", then one row per fine-tune
};

/// Full-length run from a zero model.
TrainResult train_final(const ExperimentConfig& config, const ExperimentData& data,
                        const ScoredCorpus& scored, const TrainOptions& options);

/// Weight vector spec: "uniform", "best" or "best:<method>", a JSON file, or
/// "name=value,...". Missing names in the list form are 0.
WeightVector resolve_weights(const ExperimentConfig& config, const std::string& spec,
                             const std::vector<std::string>& names);

void write_weights_json(const std::filesystem::path& path, const WeightVector& v,
                        std::optional<double> p = std::nullopt,
                        const std::string& method = {});
WeightVector read_weights_json(const std::filesystem::path& path);

/// Reads `features/<name>.tsv` for every configured feature.
ScoredCorpus load_scored_corpus(const ExperimentConfig& config, const ExperimentData& data);

// CLI verbs. Each writes under config.output_path() and throws mdc::Error on
// failure.
void cmd_score(const ExperimentConfig& config);
void cmd_normalize(const ExperimentConfig& config, const std::string& weights);
void cmd_tune(const ExperimentConfig& config, bool resume);
void cmd_train(const ExperimentConfig& config, const std::string& run_name,
               const std::string& weights, const TrainOptions& options);
void cmd_eval(const ExperimentConfig& config, const std::filesystem::path& model,
              const std::filesystem::path& out);
/// Returns the names of runs that had no eval file.
std::vector<std::string> cmd_report(const ExperimentConfig& config,
                                    const std::string& weights);

/// Parses "H=861.35,floor=0.2,warmup=0,steps=2000" over a base schedule.
/// `plateau=S` sets H so that rho reaches the floor S steps after warmup.
Schedule parse_schedule_flag(const std::string& text, Schedule base);

/// Experiment over the files of write_synthetic: one NLM and one NMT feature
/// per domain, validation sets mixed in equal shares, and trainer settings
/// sized for the toy model.
ExperimentConfig synthetic_experiment(const std::vector<std::string>& domains,
                                      std::uint64_t seed = 1);

/// The same inputs as load_data would read back from write_synthetic.
ExperimentData synthetic_data(const SyntheticData& syn, const ExperimentConfig& config);

}  // namespace mdc
