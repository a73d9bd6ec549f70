#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mdc/error.hpp"
#include "mdc/experiment.hpp"
#include "mdc/synthetic.hpp"

namespace fs = std::filesystem;
using namespace mdc;

namespace {

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

double parse_number(const std::string& text, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used == text.size()) return v;
  } catch (const std::exception&) {
  }
  throw UsageError("bad number for " + what + ": '" + text + "'");
}

// "news=0.5,ted=0.5" onto the configured validation sets.
void apply_mix(ExperimentConfig& c, const std::string& text) {
  std::map<std::string, double> ratios;
  for (const auto& item : split(text, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw UsageError("--mix expects name=ratio pairs");
    ratios[item.substr(0, eq)] = parse_number(item.substr(eq + 1), "--mix");
  }
  for (auto& v : c.validation) {
    const auto it = ratios.find(v.name);
    v.ratio = it == ratios.end() ? 0.0 : it->second;
    if (it != ratios.end()) ratios.erase(it);
  }
  if (!ratios.empty())
    throw UsageError("--mix names unknown validation set '" + ratios.begin()->first + "'");
}

struct ScoreFlags {
  std::vector<std::string> features;  // kind:name
  std::string base_corpus, domain_corpus, base_model, seed_corpus;
};

void apply_score_flags(ExperimentConfig& c, const ScoreFlags& f) {
  const fs::path cwd = fs::current_path();
  auto abs = [&](const std::string& p) { return (cwd / p).lexically_normal().string(); };
  if (!f.base_corpus.empty()) c.base_text = abs(f.base_corpus);
  if (!f.base_model.empty()) c.base_model = abs(f.base_model);
  if (f.features.empty()) {
    if (!f.domain_corpus.empty() || !f.seed_corpus.empty())
      throw UsageError("--domain-corpus and --seed need --feature");
    return;
  }
  std::vector<FeatureSpec> keep;
  for (const auto& sel : f.features) {
    const auto colon = sel.find(':');
    if (colon == std::string::npos) throw UsageError("--feature expects KIND:NAME");
    const auto kind = parse_feature_kind(sel.substr(0, colon));
    const auto name = sel.substr(colon + 1);
    auto it = std::find_if(c.features.begin(), c.features.end(),
                           [&](const FeatureSpec& s) { return s.name == name; });
    FeatureSpec spec;
    if (it != c.features.end()) {
      if (it->kind != kind) throw UsageError("feature '" + name + "' is not of kind " + to_string(kind));
      spec = *it;
    } else {
      spec.name = name;
      spec.kind = kind;
      spec.domain = name;
    }
    if (!f.domain_corpus.empty()) {
      if (kind != FeatureKind::kNlm) throw UsageError("--domain-corpus applies to nlm features");
      c.monolingual[spec.domain] = abs(f.domain_corpus);
    }
    if (!f.seed_corpus.empty()) {
      if (kind != FeatureKind::kNmt) throw UsageError("--seed applies to nmt features");
      c.seeds[spec.domain] = abs(f.seed_corpus);
    }
    keep.push_back(spec);
  }
  c.features = keep;
}

int run(int argc, char** argv) {
  CLI::App app{"Multi-domain curriculum learning on a toy translation model"};
  app.require_subcommand(1);

  std::string config_path;
  auto add_config = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_path, "experiment config (JSON)")->required();
  };

  auto* score = app.add_subcommand("score", "compute one column file per feature");
  add_config(score);
  ScoreFlags sf;
  score->add_option("--feature", sf.features, "restrict to KIND:NAME (repeatable)");
  score->add_option("--base-corpus", sf.base_corpus, "base text for n-gram features");
  score->add_option("--domain-corpus", sf.domain_corpus, "in-domain text for --feature nlm:NAME");
  score->add_option("--base-model", sf.base_model, "warm model file");
  score->add_option("--seed", sf.seed_corpus, "seed corpus for --feature nmt:NAME");

  auto* normalize = app.add_subcommand("normalize", "aggregate features and write percentiles");
  add_config(normalize);
  std::string norm_weights = "uniform";
  normalize->add_option("--weights", norm_weights, "uniform | best[:method] | file | a=1,b=0");

  auto* tune = app.add_subcommand("tune", "search the feature weights");
  add_config(tune);
  std::optional<std::string> method, mix;
  std::optional<std::size_t> trials, explore;
  std::optional<std::int64_t> trial_steps;
  std::optional<std::uint64_t> tune_seed;
  bool resume = false;
  tune->add_option("--method", method, "bo | rs | uniform");
  tune->add_option("--trials", trials);
  tune->add_option("--explore", explore);
  tune->add_option("--trial-steps", trial_steps);
  tune->add_option("--mix", mix, "validation mixing ratios, e.g. news=0.5,ted=0.5");
  tune->add_option("--seed", tune_seed);
  tune->add_flag("--resume", resume, "continue an existing history");

  auto* train = app.add_subcommand("train", "train a final model from scratch");
  add_config(train);
  std::string run_name, train_weights, schedule_flag;
  std::vector<std::string> finetune;
  std::optional<std::uint64_t> train_seed;
  bool no_curriculum = false, loss_weighted = false;
  train->add_option("--run", run_name, "run name")->required();
  train->add_option("--weights", train_weights, "uniform | best[:method] | file | a=1,b=0");
  train->add_flag("--no-curriculum", no_curriculum, "plain uniform training");
  train->add_flag("--loss-weighted", loss_weighted, "weight the loss by aggregate score");
  train->add_option("--finetune", finetune, "seed=NAME, fine-tune afterwards (repeatable)");
  train->add_option("--schedule", schedule_flag, "H=..,floor=..,warmup=..,steps=..");
  train->add_option("--seed", train_seed);
  train->add_option("--mix", mix, "validation mixing ratios");

  auto* eval = app.add_subcommand("eval", "perplexity of a model file");
  add_config(eval);
  std::string model_path, eval_out;
  eval->add_option("--model", model_path)->required();
  eval->add_option("--out", eval_out);

  auto* report = app.add_subcommand("report", "compare runs");
  add_config(report);
  std::string report_weights;
  report->add_option("--weights", report_weights, "weights for the balance table");

  auto* synth = app.add_subcommand("synth", "write a generated two-domain corpus and config");
  std::string synth_dir;
  SyntheticConfig sc;
  synth->add_option("--out", synth_dir)->required();
  synth->add_option("--pairs", sc.pairs);
  synth->add_option("--noise", sc.noise_ratio);
  synth->add_option("--seed", sc.seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return static_cast<int>(ExitCode::kUsage);
  }

  if (synth->parsed()) {
    const auto data = generate_synthetic(sc);
    fs::create_directories(synth_dir);
    write_synthetic(data, synth_dir);
    auto c = synthetic_experiment(data.domains, sc.seed);
    std::ofstream(fs::path(synth_dir) / "config.json", std::ios::binary) << serialize_config(c);
    std::cout << "wrote " << data.corpus.size() << " pairs to " << synth_dir << "\n";
    return 0;
  }

  auto config = load_config(config_path);

  if (score->parsed()) {
    apply_score_flags(config, sf);
    config.validate(true);
    cmd_score(config);
  } else if (normalize->parsed()) {
    cmd_normalize(config, norm_weights);
  } else if (tune->parsed()) {
    if (method) config.tuning.method = *method;
    if (trials) config.tuning.trials = *trials;
    if (explore) config.tuning.explore = *explore;
    if (trial_steps) config.tuning.trial_steps = *trial_steps;
    if (tune_seed) config.seed = *tune_seed;
    if (mix) apply_mix(config, *mix);
    config.validate(true);
    cmd_tune(config, resume);
  } else if (train->parsed()) {
    if (no_curriculum && loss_weighted)
      throw UsageError("--no-curriculum and --loss-weighted exclude each other");
    TrainOptions opt;
    opt.mode = no_curriculum   ? TrainMode::kNoCurriculum
               : loss_weighted ? TrainMode::kLossWeighted
                               : TrainMode::kCurriculum;
    if (!schedule_flag.empty()) opt.schedule = parse_schedule_flag(schedule_flag, config.schedule);
    opt.seed = train_seed;
    for (const auto& f : finetune) {
      if (f.rfind("seed=", 0) != 0) throw UsageError("--finetune expects seed=NAME");
      opt.finetune.push_back(f.substr(5));
    }
    if (mix) apply_mix(config, *mix);
    config.validate(true);
    cmd_train(config, run_name, train_weights, opt);
  } else if (eval->parsed()) {
    cmd_eval(config, model_path, eval_out);
  } else if (report->parsed()) {
    for (const auto& name : cmd_report(config, report_weights))
      std::cerr << "warning: run '" << name << "' has no eval log; marked absent\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::kData);
  }
}
