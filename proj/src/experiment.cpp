#include "mdc/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "json.hpp"

#include "mdc/error.hpp"
#include "mdc/random.hpp"
#include "mdc/synthetic.hpp"

namespace mdc {

using nlohmann::json;
using nlohmann::ordered_json;

std::string to_string(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::kNlm: return "nlm";
    case FeatureKind::kNmt: return "nmt";
    case FeatureKind::kMultiNmt: return "multi-nmt";
    case FeatureKind::kEmb: return "emb";
    case FeatureKind::kExternal: return "external";
  }
  return "?";
}

FeatureKind parse_feature_kind(const std::string& name) {
  if (name == "nlm") return FeatureKind::kNlm;
  if (name == "nmt") return FeatureKind::kNmt;
  if (name == "multi-nmt") return FeatureKind::kMultiNmt;
  if (name == "emb") return FeatureKind::kEmb;
  if (name == "external") return FeatureKind::kExternal;
  throw UsageError("unknown feature kind '" + name + "'");
}

// ---- config -------------------------------------------------------------

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& where) {
  if (!j.is_object()) throw UsageError(where + " must be an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw UsageError("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

FeatureSpec parse_feature(const json& j) {
  FeatureSpec f;
  f.name = j.at("name").get<std::string>();
  f.kind = parse_feature_kind(j.at("kind").get<std::string>());
  const std::string where = "feature '" + f.name + "'";
  switch (f.kind) {
    case FeatureKind::kNlm:
      check_keys(j, {"name", "kind", "domain", "order", "add_k", "mu"}, where);
      f.domain = j.at("domain").get<std::string>();
      read_opt(j, "order", f.lm.order);
      read_opt(j, "add_k", f.lm.add_k);
      read_opt(j, "mu", f.mu);
      break;
    case FeatureKind::kNmt:
      check_keys(j, {"name", "kind", "domain", "lr", "steps"}, where);
      f.domain = j.at("domain").get<std::string>();
      read_opt(j, "lr", f.lr);
      read_opt(j, "steps", f.steps);
      break;
    case FeatureKind::kMultiNmt:
      check_keys(j, {"name", "kind", "domains", "lr", "steps"}, where);
      read_opt(j, "domains", f.domains);
      read_opt(j, "lr", f.lr);
      read_opt(j, "steps", f.steps);
      break;
    case FeatureKind::kEmb:
      check_keys(j, {"name", "kind", "buckets"}, where);
      read_opt(j, "buckets", f.buckets);
      break;
    case FeatureKind::kExternal:
      check_keys(j, {"name", "kind", "path"}, where);
      f.path = j.at("path").get<std::string>();
      break;
  }
  return f;
}

ordered_json feature_json(const FeatureSpec& f) {
  ordered_json j;
  j["name"] = f.name;
  j["kind"] = to_string(f.kind);
  switch (f.kind) {
    case FeatureKind::kNlm:
      j["domain"] = f.domain;
      j["order"] = f.lm.order;
      j["add_k"] = f.lm.add_k;
      j["mu"] = f.mu;
      break;
    case FeatureKind::kNmt:
      j["domain"] = f.domain;
      j["lr"] = f.lr;
      j["steps"] = f.steps;
      break;
    case FeatureKind::kMultiNmt:
      j["domains"] = f.domains;
      j["lr"] = f.lr;
      j["steps"] = f.steps;
      break;
    case FeatureKind::kEmb:
      j["buckets"] = f.buckets;
      break;
    case FeatureKind::kExternal:
      j["path"] = f.path;
      break;
  }
  return j;
}

TrainerConfig parse_trainer(const json& j, const std::string& where) {
  check_keys(j, {"lr", "batch_size"}, where);
  TrainerConfig t;
  read_opt(j, "lr", t.lr);
  read_opt(j, "batch_size", t.batch_size);
  return t;
}

ordered_json trainer_json(const TrainerConfig& t) {
  return ordered_json{{"lr", t.lr}, {"batch_size", t.batch_size}};
}

}  // namespace

ExperimentConfig parse_config(const std::string& json_text,
                              const std::filesystem::path& base_dir) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw UsageError(std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig c;
  c.base_dir = base_dir;
  try {
    check_keys(j,
               {"corpus", "format", "output_dir", "seed", "features", "seeds",
                "monolingual", "base_text", "base_model", "validation", "warm", "trainer",
                "schedule", "tuning", "finetune", "runs", "ratings", "balance_thresholds"},
               "config");
    c.corpus = j.at("corpus").get<std::string>();
    read_opt(j, "format", c.format);
    read_opt(j, "output_dir", c.output_dir);
    read_opt(j, "seed", c.seed);
    if (j.contains("features"))
      for (const auto& f : j.at("features")) c.features.push_back(parse_feature(f));
    read_opt(j, "seeds", c.seeds);
    read_opt(j, "monolingual", c.monolingual);
    read_opt(j, "base_text", c.base_text);
    read_opt(j, "base_model", c.base_model);
    if (j.contains("validation")) {
      for (const auto& v : j.at("validation")) {
        check_keys(v, {"name", "path", "ratio"}, "validation entry");
        c.validation.push_back({v.at("name").get<std::string>(),
                                v.at("path").get<std::string>(), v.at("ratio").get<double>()});
      }
    }
    if (j.contains("warm")) {
      const auto& w = j.at("warm");
      check_keys(w, {"steps", "lr", "batch_size"}, "warm");
      read_opt(w, "steps", c.warm.steps);
      read_opt(w, "lr", c.warm.trainer.lr);
      read_opt(w, "batch_size", c.warm.trainer.batch_size);
    }
    if (j.contains("trainer")) c.trainer = parse_trainer(j.at("trainer"), "trainer");
    if (j.contains("schedule")) {
      const auto& s = j.at("schedule");
      check_keys(s, {"halving", "plateau_steps", "floor", "warmup", "max_steps"}, "schedule");
      if (s.contains("halving") && s.contains("plateau_steps"))
        throw UsageError("schedule takes halving or plateau_steps, not both");
      read_opt(s, "halving", c.schedule.halving);
      read_opt(s, "floor", c.schedule.floor);
      read_opt(s, "warmup", c.schedule.warmup);
      read_opt(s, "max_steps", c.schedule.max_steps);
      if (s.contains("plateau_steps"))
        c.schedule = Schedule::plateau_after(s.at("plateau_steps").get<std::int64_t>(),
                                             c.schedule.floor, c.schedule.warmup,
                                             c.schedule.max_steps);
    }
    if (j.contains("tuning")) {
      const auto& t = j.at("tuning");
      check_keys(t,
                 {"method", "trials", "explore", "trial_steps", "trial_floor", "lo", "hi",
                  "candidates", "local_steps"},
                 "tuning");
      read_opt(t, "method", c.tuning.method);
      read_opt(t, "trials", c.tuning.trials);
      read_opt(t, "explore", c.tuning.explore);
      read_opt(t, "trial_steps", c.tuning.trial_steps);
      read_opt(t, "trial_floor", c.tuning.trial_floor);
      read_opt(t, "lo", c.tuning.lo);
      read_opt(t, "hi", c.tuning.hi);
      read_opt(t, "candidates", c.tuning.proposal.candidates);
      read_opt(t, "local_steps", c.tuning.proposal.local_steps);
    }
    if (j.contains("finetune")) {
      const auto& f = j.at("finetune");
      check_keys(f, {"lr", "steps"}, "finetune");
      read_opt(f, "lr", c.finetune.lr);
      read_opt(f, "steps", c.finetune.steps);
    }
    read_opt(j, "runs", c.runs);
    read_opt(j, "ratings", c.ratings);
    read_opt(j, "balance_thresholds", c.balance_thresholds);
  } catch (const json::exception& e) {
    throw UsageError(std::string("bad config: ") + e.what());
  }
  c.validate(false);
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  auto dir = path.parent_path();
  if (dir.empty()) dir = ".";
  return parse_config(ss.str(), dir);
}

std::string serialize_config(const ExperimentConfig& c) {
  ordered_json j;
  j["corpus"] = c.corpus;
  j["format"] = c.format;
  j["output_dir"] = c.output_dir;
  j["seed"] = c.seed;
  j["features"] = ordered_json::array();
  for (const auto& f : c.features) j["features"].push_back(feature_json(f));
  j["seeds"] = c.seeds;
  j["monolingual"] = c.monolingual;
  j["base_text"] = c.base_text;
  j["base_model"] = c.base_model;
  j["validation"] = ordered_json::array();
  for (const auto& v : c.validation)
    j["validation"].push_back({{"name", v.name}, {"path", v.path}, {"ratio", v.ratio}});
  j["warm"] = {{"steps", c.warm.steps},
               {"lr", c.warm.trainer.lr},
               {"batch_size", c.warm.trainer.batch_size}};
  j["trainer"] = trainer_json(c.trainer);
  j["schedule"] = {{"halving", c.schedule.halving},
                   {"floor", c.schedule.floor},
                   {"warmup", c.schedule.warmup},
                   {"max_steps", c.schedule.max_steps}};
  j["tuning"] = {{"method", c.tuning.method},
                 {"trials", c.tuning.trials},
                 {"explore", c.tuning.explore},
                 {"trial_steps", c.tuning.trial_steps},
                 {"trial_floor", c.tuning.trial_floor},
                 {"lo", c.tuning.lo},
                 {"hi", c.tuning.hi},
                 {"candidates", c.tuning.proposal.candidates},
                 {"local_steps", c.tuning.proposal.local_steps}};
  j["finetune"] = {{"lr", c.finetune.lr}, {"steps", c.finetune.steps}};
  j["runs"] = c.runs;
  j["ratings"] = c.ratings;
  j["balance_thresholds"] = c.balance_thresholds;
  return j.dump(2) + "\n";
}

std::filesystem::path ExperimentConfig::resolve(const std::string& path) const {
  const std::filesystem::path p(path);
  if (p.is_absolute() || base_dir.empty()) return p;
  return base_dir / p;
}

std::filesystem::path ExperimentConfig::output_path() const {
  const std::filesystem::path p(output_dir);
  if (p.is_absolute()) return p;
  if (const char* root = std::getenv("MDC_OUTPUT_ROOT"); root && *root)
    return std::filesystem::path(root) / p;
  return resolve(output_dir);
}

void ExperimentConfig::validate(bool check_paths) const {
  if (corpus.empty()) throw UsageError("config needs a corpus");
  if (!format.empty()) parse_format(format);
  if (output_dir.empty()) throw UsageError("config needs an output_dir");

  std::set<std::string> names;
  for (const auto& f : features) {
    if (f.name.empty() || f.name.find_first_of("/\\\t\n ") != std::string::npos)
      throw UsageError("bad feature name '" + f.name + "'");
    if (!names.insert(f.name).second) throw UsageError("duplicate feature name '" + f.name + "'");
    switch (f.kind) {
      case FeatureKind::kNlm:
        if (!monolingual.count(f.domain))
          throw UsageError("feature '" + f.name + "': no monolingual set '" + f.domain + "'");
        if (f.lm.order < 1) throw UsageError("feature '" + f.name + "': order must be >= 1");
        if (!(f.lm.add_k > 0.0))
          throw UsageError("feature '" + f.name + "': add_k must be > 0");
        if (!(f.mu >= 0.0 && f.mu <= 1.0))
          throw UsageError("feature '" + f.name + "': mu must be in [0, 1]");
        break;
      case FeatureKind::kNmt:
        if (!seeds.count(f.domain))
          throw UsageError("feature '" + f.name + "': no seed set '" + f.domain + "'");
        [[fallthrough]];
      case FeatureKind::kMultiNmt:
        for (const auto& d : f.domains)
          if (!seeds.count(d))
            throw UsageError("feature '" + f.name + "': no seed set '" + d + "'");
        if (f.kind == FeatureKind::kMultiNmt && seeds.empty())
          throw UsageError("feature '" + f.name + "' needs seed sets");
        if (!(f.lr > 0.0)) throw UsageError("feature '" + f.name + "': lr must be > 0");
        if (f.steps < 0) throw UsageError("feature '" + f.name + "': steps must be >= 0");
        break;
      case FeatureKind::kEmb:
        if (f.buckets == 0) throw UsageError("feature '" + f.name + "': buckets must be > 0");
        break;
      case FeatureKind::kExternal:
        if (f.path.empty()) throw UsageError("feature '" + f.name + "' needs a path");
        break;
    }
  }

  if (validation.empty()) throw UsageError("config needs validation sets");
  std::set<std::string> vnames;
  double total = 0.0;
  for (const auto& v : validation) {
    if (v.name.empty() || !vnames.insert(v.name).second)
      throw UsageError("validation names must be unique and non-empty");
    if (!(v.ratio >= 0.0) || !std::isfinite(v.ratio))
      throw UsageError("mixing ratios must be >= 0");
    total += v.ratio;
  }
  if (std::abs(total - 1.0) > 1e-9) throw UsageError("mixing ratios must sum to 1");

  schedule.validate();
  if (warm.steps < 0) throw UsageError("warm steps must be >= 0");
  if (trainer.batch_size == 0 || warm.trainer.batch_size == 0)
    throw UsageError("batch size must be >= 1");
  if (tuning.method != "bo" && tuning.method != "rs" && tuning.method != "uniform")
    throw UsageError("tuning method must be bo, rs or uniform");
  if (tuning.trials == 0) throw UsageError("tuning needs at least one trial");
  if (tuning.method == "bo" && (tuning.explore < 2 || tuning.trials < tuning.explore))
    throw UsageError("bo needs trials >= explore >= 2");
  if (tuning.trial_steps < 0) throw UsageError("trial steps must be >= 0");
  if (!(tuning.trial_floor > 0.0 && tuning.trial_floor < 1.0))
    throw UsageError("trial floor must be in (0, 1)");
  if (!(tuning.lo < tuning.hi)) throw UsageError("tuning bounds need lo < hi");
  if (!(finetune.lr > 0.0) || finetune.steps < 0) throw UsageError("bad finetune settings");

  if (!check_paths) return;
  auto need = [&](const std::string& p, const std::string& what) {
    if (!std::filesystem::exists(resolve(p)))
      throw DataError(what + " not found: " + resolve(p).string());
  };
  need(corpus, "corpus");
  for (const auto& [name, p] : seeds) need(p, "seed set '" + name + "'");
  for (const auto& [name, p] : monolingual) need(p, "monolingual set '" + name + "'");
  if (!base_text.empty()) need(base_text, "base text");
  if (!base_model.empty()) need(base_model, "base model");
  for (const auto& v : validation) need(v.path, "validation set '" + v.name + "'");
  for (const auto& f : features)
    if (f.kind == FeatureKind::kExternal) need(f.path, "feature file for '" + f.name + "'");
  if (!ratings.empty()) need(ratings, "ratings");
}

ExperimentSeeds ExperimentSeeds::from(std::uint64_t seed) {
  return {derive_seed(seed, "warm"), derive_seed(seed, "mix"), derive_seed(seed, "trial"),
          derive_seed(seed, "tune"), derive_seed(seed, "train")};
}

// ---- data ---------------------------------------------------------------

const DomainSeedSet& ExperimentData::seed(const std::string& name) const {
  for (const auto& s : seeds)
    if (s.name == name) return s;
  throw UsageError("no seed set '" + name + "'");
}

namespace {

std::vector<SentencePair> read_pairs(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return parse_parallel(in, format_from_path(path), path.string());
}

// Zero scores, so every row ties and percentiles follow id order.
ScoredCorpus flat_scores(const ScoredCorpus& corpus) {
  ScoredCorpus out = corpus;
  out.set_scores(std::vector<double>(corpus.size(), 0.0));
  percentile_normalize(out);
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

}  // namespace

ExperimentData load_data(const ExperimentConfig& config) {
  config.validate(true);
  ExperimentData d;
  const auto corpus_path = config.resolve(config.corpus);
  d.corpus = config.format.empty()
                 ? ingest_parallel(corpus_path)
                 : ingest_parallel(corpus_path, parse_format(config.format));
  for (const auto& [name, path] : config.seeds) {
    DomainSeedSet s{name, read_pairs(config.resolve(path))};
    if (s.pairs.empty()) throw DataError("seed set '" + name + "' is empty");
    d.seeds.push_back(std::move(s));
  }
  for (const auto& [name, path] : config.monolingual)
    d.monolingual[name] = read_monolingual(config.resolve(path));
  if (!config.base_text.empty()) d.base_text = read_monolingual(config.resolve(config.base_text));
  for (const auto& v : config.validation) {
    d.validation_names.push_back(v.name);
    d.validation.push_back(read_pairs(config.resolve(v.path)));
    d.ratios.push_back(v.ratio);
  }
  finalize_data(d, ExperimentSeeds::from(config.seed).mix);
  return d;
}

void finalize_data(ExperimentData& data, std::uint64_t mix_seed) {
  std::vector<const std::vector<SentencePair>*> sets{&data.corpus.pairs()};
  for (const auto& s : data.seeds) sets.push_back(&s.pairs);
  for (const auto& v : data.validation) sets.push_back(&v);
  data.vocab = build_vocabularies(sets);
  data.mixed = mix_validation(data.validation, data.ratios, mix_seed);
  if (data.mixed.empty()) throw DataError("mixed validation set is empty");
}

ToyTranslationModel train_warm_model(const ExperimentData& data, const WarmSpec& warm,
                                     std::uint64_t seed) {
  const auto flat = flat_scores(data.corpus);
  return run_curriculum(flat, Schedule::constant(warm.steps),
                        ToyTranslationModel::zeros(data.vocab), warm.trainer, seed)
      .model;
}

std::vector<double> compute_feature(const ExperimentConfig& config,
                                    const ExperimentData& data,
                                    const ToyTranslationModel& base,
                                    const FeatureSpec& spec) {
  const auto& pairs = data.corpus.pairs();
  std::vector<double> col(pairs.size());
  switch (spec.kind) {
    case FeatureKind::kNlm: {
      std::vector<Tokens> base_text = data.base_text;
      if (base_text.empty())
        for (const auto& p : pairs) base_text.push_back(p.source);
      auto base_lm = std::make_shared<const NGramLM>(train_ngram_lm(base_text, spec.lm));
      const auto it = data.monolingual.find(spec.domain);
      if (it == data.monolingual.end())
        throw UsageError("no monolingual set '" + spec.domain + "'");
      auto domain_only = std::make_shared<const NGramLM>(train_ngram_lm(it->second, spec.lm));
      const DomainLM domain(base_lm, domain_only, spec.mu);
      for (std::size_t i = 0; i < pairs.size(); ++i)
        col[i] = nlm_domain_feature(pairs[i].source, *base_lm, domain);
      break;
    }
    case FeatureKind::kNmt:
    case FeatureKind::kMultiNmt: {
      std::vector<DomainSeedSet> seeds;
      if (spec.kind == FeatureKind::kNmt) {
        seeds.push_back(data.seed(spec.domain));
      } else if (spec.domains.empty()) {
        seeds = data.seeds;
      } else {
        for (const auto& d : spec.domains) seeds.push_back(data.seed(d));
      }
      const auto domain = build_domain_model(base, seeds, spec.lr, spec.steps);
      for (std::size_t i = 0; i < pairs.size(); ++i)
        col[i] = nmt_domain_feature(pairs[i], base, domain);
      break;
    }
    case FeatureKind::kEmb:
      for (std::size_t i = 0; i < pairs.size(); ++i)
        col[i] = embedding_similarity_feature(pairs[i], spec.buckets);
      break;
    case FeatureKind::kExternal: {
      ScoredCorpus tmp(std::vector<SentencePair>(pairs.begin(), pairs.end()));
      join_external_features(tmp, config.resolve(spec.path), spec.name);
      col = tmp.feature_column(0);
      break;
    }
  }
  for (std::size_t i = 0; i < col.size(); ++i)
    if (!std::isfinite(col[i]))
      throw NumericalError("feature '" + spec.name + "' is not finite for id " +
                           std::to_string(pairs[i].id));
  return col;
}

ScoredCorpus score_features(const ExperimentConfig& config, const ExperimentData& data,
                            const ToyTranslationModel& base) {
  ScoredCorpus out = data.corpus;
  for (const auto& spec : config.features)
    out.add_feature(spec.name, compute_feature(config, data, base, spec));
  return out;
}

SearchSpace search_space(const ExperimentConfig& config,
                         const std::vector<std::string>& names) {
  SearchSpace s;
  s.names = names;
  s.lo.assign(names.size(), config.tuning.lo);
  s.hi.assign(names.size(), config.tuning.hi);
  s.validate();
  return s;
}

Schedule trial_schedule(const TuningSpec& tuning) {
  if (tuning.trial_steps == 0) return Schedule::constant(0);
  return Schedule::plateau_after(tuning.trial_steps, tuning.trial_floor, 0,
                                 tuning.trial_steps);
}

SearchResult run_tuning(const ExperimentConfig& config, const ExperimentData& data,
                        const ScoredCorpus& scored, const ToyTranslationModel& warm,
                        TrialHistory resume) {
  const auto seeds = ExperimentSeeds::from(config.seed);
  const EvalProtocol protocol(scored, warm, trial_schedule(config.tuning), config.trainer,
                              data.mixed, seeds.trial);
  const auto objective = make_objective(protocol);
  const auto space = search_space(config, scored.feature_names());
  if (config.tuning.method == "rs")
    return random_search(objective, space, config.tuning.trials, seeds.tune, std::move(resume));
  if (config.tuning.method == "uniform") return uniform_baseline(objective, space, seeds.tune);
  BayesOptConfig bo;
  bo.total_trials = config.tuning.trials;
  bo.explore_trials = config.tuning.explore;
  bo.seed = seeds.tune;
  bo.proposal = config.tuning.proposal;
  return bayesopt(objective, space, bo, std::move(resume));
}

// ---- evaluation ---------------------------------------------------------

double EvalRow::average() const {
  if (per_set.empty()) return 0.0;
  double s = 0.0;
  for (double x : per_set) s += x;
  return s / static_cast<double>(per_set.size());
}

EvalRow evaluate_model(const ToyTranslationModel& model, const ExperimentData& data,
                       const std::string& stage) {
  EvalRow row{stage, {}, 0.0};
  for (const auto& set : data.validation) row.per_set.push_back(perplexity(model, set));
  row.mixed = perplexity(model, data.mixed);
  return row;
}

void write_eval(const std::filesystem::path& path, const std::vector<std::string>& set_names,
                const std::vector<EvalRow>& rows) {
  std::ostringstream out;
  out << "stage";
  for (const auto& n : set_names) out << '\t' << n;
  out << "\tmixed\n";
  for (const auto& r : rows) {
    out << r.stage;
    for (double x : r.per_set) out << '\t' << format_double(x);
    out << '\t' << format_double(r.mixed) << '\n';
  }
  write_text(path, out.str());
}

namespace {

double parse_number(std::string_view s, const std::string& where) {
  double x = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw DataError(where + ": bad number '" + std::string(s) + "'");
  return x;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace

std::vector<EvalRow> read_eval(const std::filesystem::path& path,
                               std::vector<std::string>* set_names) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": empty eval file");
  const auto header = split(line, '\t');
  if (header.size() < 2 || header.front() != "stage" || header.back() != "mixed")
    throw DataError(path.string() + ": bad eval header");
  if (set_names) set_names->assign(header.begin() + 1, header.end() - 1);
  std::vector<EvalRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split(line, '\t');
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (cells.size() != header.size()) throw DataError(where + ": wrong column count");
    EvalRow r;
    r.stage = cells.front();
    for (std::size_t i = 1; i + 1 < cells.size(); ++i)
      r.per_set.push_back(parse_number(cells[i], where));
    r.mixed = parse_number(cells.back(), where);
    rows.push_back(std::move(r));
  }
  return rows;
}

// ---- training -----------------------------------------------------------

TrainResult train_final(const ExperimentConfig& config, const ExperimentData& data,
                        const ScoredCorpus& scored, const TrainOptions& options) {
  const Schedule schedule = options.schedule.value_or(config.schedule);
  const std::uint64_t seed = options.seed.value_or(ExperimentSeeds::from(config.seed).train);
  const auto initial = ToyTranslationModel::zeros(data.vocab);

  ScoredCorpus corpus = scored;
  if (options.weights) {
    score_and_normalize(corpus, *options.weights);
  } else if (options.mode != TrainMode::kNoCurriculum) {
    throw UsageError("curriculum training needs a weight vector");
  } else {
    corpus = flat_scores(scored);
  }

  auto run = [&]() {
    switch (options.mode) {
      case TrainMode::kNoCurriculum:
        return run_curriculum(corpus, Schedule::constant(schedule.max_steps), initial,
                              config.trainer, seed);
      case TrainMode::kLossWeighted:
        return run_loss_weighted(corpus, *options.weights, initial, config.trainer, seed,
                                 schedule.max_steps);
      case TrainMode::kCurriculum:
        break;
    }
    return run_curriculum(corpus, schedule, initial, config.trainer, seed);
  };
  TrainResult result{run(), {}};
  result.eval.push_back(evaluate_model(result.run.model, data, "final"));
  for (const auto& name : options.finetune) {
    const auto tuned =
        finetune(result.run.model, data.seed(name), config.finetune.lr, config.finetune.steps);
    result.eval.push_back(evaluate_model(tuned, data, "finetune:" + name));
  }
  return result;
}

// ---- weights ------------------------------------------------------------

void write_weights_json(const std::filesystem::path& path, const WeightVector& v,
                        std::optional<double> p, const std::string& method) {
  ordered_json j;
  if (!method.empty()) j["method"] = method;
  ordered_json vals = ordered_json::object();
  for (std::size_t i = 0; i < v.size(); ++i) vals[v.names[i]] = v.values[i];
  j["V"] = std::move(vals);
  if (p) j["p"] = *p;
  write_text(path, j.dump(2) + "\n");
}

WeightVector read_weights_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    const auto j = ordered_json::parse(in);
    WeightVector v;
    for (const auto& [name, value] : j.at("V").items()) {
      v.names.push_back(name);
      v.values.push_back(value.get<double>());
    }
    return v;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

WeightVector resolve_weights(const ExperimentConfig& config, const std::string& spec,
                             const std::vector<std::string>& names) {
  const auto space = search_space(config, names);
  if (spec == "uniform") return WeightVector{names, space.hi};

  WeightVector raw;
  if (spec == "best" || spec.rfind("best:", 0) == 0) {
    const std::string method = spec == "best" ? "bo" : spec.substr(5);
    const auto path = config.output_path() / "tune" / method / "best_v.json";
    if (!std::filesystem::exists(path))
      throw DataError("no tuned weights at " + path.string() + "; run tune first");
    raw = read_weights_json(path);
  } else if (spec.find('=') == std::string::npos) {
    raw = read_weights_json(spec);
  } else {
    WeightVector v{names, std::vector<double>(names.size(), 0.0)};
    for (const auto& item : split(spec, ',')) {
      const auto eq = item.find('=');
      if (eq == std::string::npos) throw UsageError("bad weight '" + item + "'");
      const auto name = item.substr(0, eq);
      const auto it = std::find(names.begin(), names.end(), name);
      if (it == names.end()) throw UsageError("unknown feature '" + name + "' in weights");
      double x = 0.0;
      const auto val = item.substr(eq + 1);
      const auto [ptr, ec] = std::from_chars(val.data(), val.data() + val.size(), x);
      if (ec != std::errc() || ptr != val.data() + val.size() || !std::isfinite(x))
        throw UsageError("bad weight value '" + val + "'");
      v.values[static_cast<std::size_t>(it - names.begin())] = x;
    }
    if (!space.contains(v)) throw UsageError("weights outside the search bounds");
    return v;
  }

  WeightVector v{names, {}};
  std::string missing;
  for (const auto& n : names) {
    const auto it = std::find(raw.names.begin(), raw.names.end(), n);
    if (it == raw.names.end()) {
      missing += (missing.empty() ? "" : ", ") + n;
      continue;
    }
    v.values.push_back(raw.values[static_cast<std::size_t>(it - raw.names.begin())]);
  }
  if (!missing.empty() || raw.names.size() != names.size())
    throw DataError("weight file does not match the features (missing: " + missing + ")");
  return v;
}

ScoredCorpus load_scored_corpus(const ExperimentConfig& config, const ExperimentData& data) {
  if (config.features.empty()) throw UsageError("config has no features");
  ScoredCorpus out = data.corpus;
  const auto dir = config.output_path() / "features";
  for (const auto& spec : config.features) {
    const auto path = dir / (spec.name + ".tsv");
    if (!std::filesystem::exists(path))
      throw DataError("missing feature file " + path.string() + "; run score first");
    join_external_features(out, path, spec.name);
  }
  return out;
}

// ---- commands -----------------------------------------------------------

namespace {

ToyTranslationModel load_base_model(const ExperimentConfig& config) {
  const auto path = config.output_path() / "base_model.bin";
  if (!std::filesystem::exists(path))
    throw DataError("missing " + path.string() + "; run score first");
  return ToyTranslationModel::load(path);
}

std::string fixed(double x, int digits = 3) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << x;
  return s.str();
}

}  // namespace

void cmd_score(const ExperimentConfig& config) {
  if (config.features.empty()) throw UsageError("config has no features");
  const auto data = load_data(config);
  const auto out = config.output_path();
  std::filesystem::create_directories(out / "features");
  const auto base = config.base_model.empty()
                        ? train_warm_model(data, config.warm, ExperimentSeeds::from(config.seed).warm)
                        : ToyTranslationModel::load(config.resolve(config.base_model));
  base.save(out / "base_model.bin");
  const auto scored = score_features(config, data, base);
  for (std::size_t k = 0; k < scored.feature_count(); ++k)
    write_feature_file(out / "features" / (scored.feature_names()[k] + ".tsv"), scored, k);
}

void cmd_normalize(const ExperimentConfig& config, const std::string& weights) {
  const auto data = load_data(config);
  auto scored = load_scored_corpus(config, data);
  const auto v = resolve_weights(config, weights, scored.feature_names());
  score_and_normalize(scored, v);
  std::ostringstream out;
  out << "id\tf\tpercentile\n";
  for (std::size_t r = 0; r < scored.size(); ++r)
    out << scored.pair(r).id << '\t' << format_double(scored.score(r)) << '\t'
        << format_double(scored.percentile(r)) << '\n';
  std::filesystem::create_directories(config.output_path());
  write_text(config.output_path() / "scores.tsv", out.str());
  write_weights_json(config.output_path() / "scores_weights.json", v);
}

void cmd_tune(const ExperimentConfig& config, bool resume) {
  const auto data = load_data(config);
  const auto scored = load_scored_corpus(config, data);
  const auto warm = load_base_model(config);
  const auto dir = config.output_path() / "tune" / config.tuning.method;
  std::filesystem::create_directories(dir);
  const auto history_path = dir / "history.jsonl";
  const auto space = search_space(config, scored.feature_names());

  TrialHistory previous;
  if (resume && std::filesystem::exists(history_path))
    previous = read_history(history_path, space);
  // Rewrite what was kept so a torn last line does not survive.
  write_history(history_path, previous);
  const auto result = run_tuning(config, data, scored, warm, previous);
  write_history(history_path, result.history);
  const auto& best = result.history.best();
  write_weights_json(dir / "best_v.json", best.v, best.p, config.tuning.method);
}

void cmd_train(const ExperimentConfig& config, const std::string& run_name,
               const std::string& weights, const TrainOptions& options_in) {
  if (run_name.empty() || run_name.find_first_of("/\\") != std::string::npos)
    throw UsageError("bad run name '" + run_name + "'");
  const auto data = load_data(config);
  const auto scored = load_scored_corpus(config, data);
  TrainOptions options = options_in;
  if (!weights.empty())
    options.weights = resolve_weights(config, weights, scored.feature_names());
  else if (options.mode != TrainMode::kNoCurriculum)
    options.weights = resolve_weights(config, "best", scored.feature_names());
  for (const auto& name : options.finetune) data.seed(name);

  const auto result = train_final(config, data, scored, options);
  const auto dir = config.output_path() / "runs" / run_name;
  std::filesystem::create_directories(dir);
  result.run.model.save(dir / "model.bin");
  write_run_log(dir / "log.tsv", result.run.log);
  write_eval(dir / "eval.tsv", data.validation_names, result.eval);
  if (options.weights) write_weights_json(dir / "weights.json", *options.weights);
}

void cmd_eval(const ExperimentConfig& config, const std::filesystem::path& model,
              const std::filesystem::path& out) {
  const auto data = load_data(config);
  const auto m = ToyTranslationModel::load(model);
  const auto path = out.empty() ? config.output_path() / "eval.tsv" : out;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_eval(path, data.validation_names, {evaluate_model(m, data, "model")});
}

std::vector<std::string> cmd_report(const ExperimentConfig& config, const std::string& weights) {
  const auto out = config.output_path();
  const auto runs_dir = out / "runs";
  std::vector<std::string> runs = config.runs;
  if (runs.empty() && std::filesystem::is_directory(runs_dir)) {
    for (const auto& e : std::filesystem::directory_iterator(runs_dir))
      if (e.is_directory()) runs.push_back(e.path().filename().string());
    std::sort(runs.begin(), runs.end());
  }
  std::vector<std::string> set_names;
  for (const auto& v : config.validation) set_names.push_back(v.name);

  struct Line {
    std::string run, stage;
    std::optional<EvalRow> row;
  };
  std::vector<Line> lines;
  std::vector<std::string> missing;
  for (const auto& run : runs) {
    const auto eval_path = runs_dir / run / "eval.tsv";
    if (!std::filesystem::exists(eval_path) || !std::filesystem::exists(runs_dir / run / "log.tsv")) {
      missing.push_back(run);
      lines.push_back({run, "absent", std::nullopt});
      continue;
    }
    std::vector<std::string> names;
    for (auto& r : read_eval(eval_path, &names)) {
      if (names != set_names)
        throw DataError(eval_path.string() + ": validation sets differ from the config");
      lines.push_back({run, r.stage, std::move(r)});
    }
  }

  std::ostringstream tsv;
  tsv << "run\tstage";
  for (const auto& n : set_names) tsv << '\t' << n;
  tsv << "\tavg\tmixed\n";
  for (const auto& l : lines) {
    tsv << l.run << '\t' << l.stage;
    if (l.row) {
      for (double x : l.row->per_set) tsv << '\t' << format_double(x);
      tsv << '\t' << format_double(l.row->average()) << '\t' << format_double(l.row->mixed);
    } else {
      for (std::size_t i = 0; i < set_names.size() + 2; ++i) tsv << "\t-";
    }
    tsv << '\n';
  }

  // Human-readable table.
  std::vector<std::string> header{"run", "stage"};
  for (const auto& n : set_names) header.push_back(n);
  header.push_back("Avg");
  header.push_back("mixed");
  std::vector<std::vector<std::string>> cells{header};
  for (const auto& l : lines) {
    std::vector<std::string> row{l.run, l.stage};
    if (l.row) {
      for (double x : l.row->per_set) row.push_back(fixed(x));
      row.push_back(fixed(l.row->average()));
      row.push_back(fixed(l.row->mixed));
    } else {
      row.resize(header.size(), "-");
    }
    cells.push_back(std::move(row));
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& row : cells)
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
  std::ostringstream txt;
  txt << "Perplexity per validation set\n\n";
  for (const auto& row : cells) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i < 2)
        txt << std::left << std::setw(static_cast<int>(width[i])) << row[i];
      else
        txt << std::right << std::setw(static_cast<int>(width[i])) << row[i];
      txt << (i + 1 < row.size() ? "  " : "\n");
    }
  }

  // Balance table over the selected subsets, when weights are available.
  std::string spec = weights;
  if (spec.empty() && std::filesystem::exists(out / "tune" / "bo" / "best_v.json")) spec = "best";
  if (!spec.empty()) {
    const auto data = load_data(config);
    auto scored = load_scored_corpus(config, data);
    const auto v = resolve_weights(config, spec, scored.feature_names());
    std::vector<double> ratings;
    if (!config.ratings.empty()) {
      ScoredCorpus tmp = data.corpus;
      join_external_features(tmp, config.resolve(config.ratings), "rating");
      ratings = tmp.feature_column(0);
    }
    const auto report = dynamic_balance_report(scored, v, config.balance_thresholds, ratings);
    std::ostringstream bal;
    write_balance_report(bal, report);
    write_text(out / "balance.tsv", bal.str());
    txt << "\nMeans over the selected subset (percentile >= threshold)\n\n" << bal.str();
  }

  std::filesystem::create_directories(out);
  write_text(out / "report.tsv", tsv.str());
  write_text(out / "report.txt", txt.str());
  return missing;
}

Schedule parse_schedule_flag(const std::string& text, Schedule base) {
  std::optional<std::int64_t> plateau;
  for (const auto& item : split(text, ',')) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw UsageError("bad schedule item '" + item + "'");
    const auto key = item.substr(0, eq);
    const auto val = item.substr(eq + 1);
    double x = 0.0;
    const auto [ptr, ec] = std::from_chars(val.data(), val.data() + val.size(), x);
    if (ec != std::errc() || ptr != val.data() + val.size())
      throw UsageError("bad schedule value '" + val + "'");
    if (key == "H" || key == "halving") {
      base.halving = x;
    } else if (key == "floor") {
      base.floor = x;
    } else if (key == "warmup") {
      base.warmup = static_cast<std::int64_t>(x);
    } else if (key == "steps" || key == "max_steps" || key == "T") {
      base.max_steps = static_cast<std::int64_t>(x);
    } else if (key == "plateau") {
      plateau = static_cast<std::int64_t>(x);
    } else {
      throw UsageError("unknown schedule key '" + key + "'");
    }
  }
  if (plateau) base = Schedule::plateau_after(*plateau, base.floor, base.warmup, base.max_steps);
  base.validate();
  return base;
}

ExperimentConfig synthetic_experiment(const std::vector<std::string>& domains,
                                      std::uint64_t seed) {
  ExperimentConfig c;
  c.corpus = "corpus.tsv";
  c.ratings = "ratings.tsv";
  c.seed = seed;
  for (const auto& d : domains) {
    c.seeds[d] = "seed_" + d + ".tsv";
    c.monolingual[d] = "mono_" + d + ".txt";
    c.validation.push_back({d, "valid_" + d + ".tsv", 1.0 / static_cast<double>(domains.size())});
  }
  for (const auto& d : domains) {
    FeatureSpec f;
    f.name = "nlm_" + d;
    f.kind = FeatureKind::kNlm;
    f.domain = d;
    c.features.push_back(f);
  }
  for (const auto& d : domains) {
    FeatureSpec f;
    f.name = "nmt_" + d;
    f.kind = FeatureKind::kNmt;
    f.domain = d;
    f.lr = 0.1;
    f.steps = 10;
    c.features.push_back(f);
  }
  c.trainer = {20.0, 32};
  c.warm = {500, c.trainer};
  c.schedule = Schedule::plateau_after(2000, 0.2, 500, 3000);
  c.tuning.trials = 30;
  c.tuning.explore = 25;
  c.tuning.trial_steps = 1000;
  c.finetune = {0.5, 10};
  return c;
}

ExperimentData synthetic_data(const SyntheticData& syn, const ExperimentConfig& config) {
  ExperimentData d;
  d.corpus = ScoredCorpus(syn.corpus);
  d.seeds = syn.seeds;
  for (std::size_t k = 0; k < syn.domains.size(); ++k)
    d.monolingual[syn.domains[k]] = syn.monolingual[k];
  for (const auto& v : config.validation) {
    const auto it = std::find(syn.domains.begin(), syn.domains.end(), v.name);
    if (it == syn.domains.end()) throw UsageError("no synthetic domain '" + v.name + "'");
    d.validation_names.push_back(v.name);
    d.validation.push_back(syn.validation[static_cast<std::size_t>(it - syn.domains.begin())]);
    d.ratios.push_back(v.ratio);
  }
  finalize_data(d, ExperimentSeeds::from(config.seed).mix);
  return d;
}

}  // namespace mdc
