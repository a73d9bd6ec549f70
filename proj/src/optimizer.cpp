#include "mdc/optimizer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>

#include "json.hpp"

#include "mdc/error.hpp"
#include "mdc/random.hpp"

namespace mdc {

SearchSpace SearchSpace::unit_box(std::vector<std::string> names) {
  SearchSpace s;
  s.lo.assign(names.size(), 0.0);
  s.hi.assign(names.size(), 1.0);
  s.names = std::move(names);
  return s;
}

void SearchSpace::validate() const {
  if (names.empty()) throw UsageError("search space has no dimensions");
  if (lo.size() != names.size() || hi.size() != names.size())
    throw UsageError("search space bounds do not match names");
  for (std::size_t i = 0; i < names.size(); ++i)
    if (!(lo[i] < hi[i]) || !std::isfinite(lo[i]) || !std::isfinite(hi[i]))
      throw UsageError("bad bounds for '" + names[i] + "'");
}

bool SearchSpace::contains(const WeightVector& v) const {
  if (v.names != names || v.values.size() != names.size()) return false;
  for (std::size_t i = 0; i < names.size(); ++i)
    if (!(v.values[i] >= lo[i] && v.values[i] <= hi[i])) return false;
  return true;
}

WeightVector SearchSpace::from_unit(std::span<const double> u) const {
  WeightVector v{names, std::vector<double>(names.size())};
  for (std::size_t i = 0; i < names.size(); ++i)
    v.values[i] = std::clamp(lo[i] + (hi[i] - lo[i]) * u[i], lo[i], hi[i]);
  return v;
}

std::vector<double> SearchSpace::to_unit(const WeightVector& v) const {
  std::vector<double> u(names.size());
  for (std::size_t i = 0; i < names.size(); ++i)
    u[i] = (v.at(names[i]) - lo[i]) / (hi[i] - lo[i]);
  return u;
}

const Trial& TrialHistory::best() const {
  if (trials.empty()) throw DataError("empty trial history");
  const Trial* b = &trials.front();
  for (const auto& t : trials)
    if (t.p > b->p) b = &t;
  return *b;
}

std::vector<double> TrialHistory::best_so_far() const {
  std::vector<double> out;
  double m = -std::numeric_limits<double>::infinity();
  for (const auto& t : trials) {
    m = std::max(m, t.p);
    out.push_back(m);
  }
  return out;
}

void write_history(std::ostream& out, const TrialHistory& history) {
  for (const auto& t : history.trials) {
    nlohmann::ordered_json j;
    j["index"] = t.index;
    nlohmann::ordered_json v = nlohmann::ordered_json::object();
    for (std::size_t i = 0; i < t.v.names.size(); ++i) v[t.v.names[i]] = t.v.values[i];
    j["V"] = std::move(v);
    j["p"] = t.p;
    j["seed"] = t.seed;
    out << j.dump() << '\n';
  }
}

void write_history(const std::filesystem::path& path, const TrialHistory& history) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  write_history(out, history);
}

TrialHistory read_history(std::istream& in, const SearchSpace& space) {
  space.validate();
  TrialHistory h;
  h.space = space;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Trial t;
      t.index = j.at("index").get<std::size_t>();
      t.p = j.at("p").get<double>();
      t.seed = j.at("seed").get<std::uint64_t>();
      t.v.names = space.names;
      for (const auto& name : space.names) t.v.values.push_back(j.at("V").at(name).get<double>());
      if (j.at("V").size() != space.names.size())
        throw DataError("trial " + std::to_string(lineno) + " has extra weights");
      if (!std::isfinite(t.p)) throw DataError("trial with non-finite p");
      if (!space.contains(t.v)) throw DataError("trial outside search bounds");
      if (t.index != h.trials.size()) throw DataError("trial indices are not 0..k-1");
      h.trials.push_back(std::move(t));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("history line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return h;
}

TrialHistory read_history(const std::filesystem::path& path, const SearchSpace& space) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return read_history(in, space);
}

GPSurrogate::GPSurrogate(SearchSpace space, GaussianProcess gp, double p_mean,
                         double p_scale)
    : space_(std::move(space)), gp_(std::move(gp)), p_mean_(p_mean), p_scale_(p_scale) {}

GPPrediction GPSurrogate::predict_unit(std::span<const double> u) const {
  const auto z = gp_.predict(u);
  return {p_mean_ + p_scale_ * z.mean, p_scale_ * p_scale_ * z.variance};
}

GPPrediction GPSurrogate::predict(const WeightVector& v) const {
  return predict_unit(space_.to_unit(v));
}

GPSurrogate fit_gp(const TrialHistory& history) {
  if (history.size() < 2) throw DataError("fitting a GP needs at least two trials");
  const auto n = static_cast<double>(history.size());
  double mean = 0.0;
  for (const auto& t : history.trials) mean += t.p;
  mean /= n;
  double var = 0.0;
  for (const auto& t : history.trials) var += (t.p - mean) * (t.p - mean);
  var /= n;
  const double scale = var > 0.0 ? std::sqrt(var) : 1.0;

  std::vector<std::vector<double>> inputs;
  std::vector<double> targets;
  for (const auto& t : history.trials) {
    inputs.push_back(history.space.to_unit(t.v));
    targets.push_back((t.p - mean) / scale);
  }
  return GPSurrogate(history.space,
                     fit_hyperparameters(std::move(inputs), std::move(targets)), mean,
                     scale);
}

double expected_improvement(const GPSurrogate& surrogate, const WeightVector& v,
                            double best_p) {
  const auto pred = surrogate.predict(v);
  return expected_improvement(pred.mean, std::sqrt(pred.variance), best_p);
}

WeightVector propose_next(const GPSurrogate& surrogate, const TrialHistory& history,
                          std::uint64_t seed, Acquisition acquisition,
                          const ProposalConfig& config) {
  const auto& space = surrogate.space();
  const std::size_t dim = space.dim();
  const double best_p = history.trials.empty() ? 0.0 : history.best().p;
  auto value = [&](std::span<const double> u) {
    const auto pred = surrogate.predict_unit(u);
    if (acquisition == Acquisition::kPosteriorMean) return pred.mean;
    return expected_improvement(pred.mean, std::sqrt(pred.variance), best_p);
  };

  Rng rng(seed);
  std::vector<double> best(dim), cand(dim);
  double best_val = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < std::max<std::size_t>(config.candidates, 1); ++c) {
    for (auto& x : cand) x = uniform_unit(rng);
    const double val = value(cand);
    if (val > best_val) {
      best_val = val;
      best = cand;
    }
  }

  double step = 0.1;
  bool improved_this_sweep = false;
  for (std::size_t s = 0; s < config.local_steps; ++s) {
    const std::size_t d = s % dim;
    for (double sign : {1.0, -1.0}) {
      cand = best;
      cand[d] = std::clamp(best[d] + sign * step, 0.0, 1.0);
      if (cand[d] == best[d]) continue;
      const double val = value(cand);
      if (val > best_val) {
        best_val = val;
        best = cand;
        improved_this_sweep = true;
        break;
      }
    }
    if (d == dim - 1) {
      if (!improved_this_sweep) step *= 0.5;
      improved_this_sweep = false;
    }
  }
  return space.from_unit(best);
}

std::size_t initial_random_trials(std::size_t explore_trials) {
  return std::max<std::size_t>(2, (explore_trials + 4) / 5);
}

namespace {

WeightVector random_point(const SearchSpace& space, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> u(space.dim());
  for (auto& x : u) x = uniform_unit(rng);
  return space.from_unit(u);
}

void record(TrialHistory& h, const Objective& objective, WeightVector v,
            std::uint64_t seed) {
  if (!h.space.contains(v)) throw NumericalError("proposal outside search bounds");
  const auto start = std::chrono::steady_clock::now();
  const double p = objective(v);
  const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
  if (!std::isfinite(p)) throw NumericalError("objective returned a non-finite value");
  h.trials.push_back({h.trials.size(), std::move(v), p, seed, elapsed.count()});
}

SearchResult finish(TrialHistory h) {
  const auto& b = h.best();
  return {b.v, b.p, std::move(h)};
}

TrialHistory start_history(const SearchSpace& space, TrialHistory resume,
                           std::size_t total) {
  space.validate();
  if (resume.trials.size() > total) throw UsageError("resumed history is longer than the run");
  for (const auto& t : resume.trials)
    if (!space.contains(t.v)) throw DataError("resumed trial outside search bounds");
  resume.space = space;
  return resume;
}

}  // namespace

SearchResult bayesopt(const Objective& objective, const SearchSpace& space,
                      const BayesOptConfig& config, TrialHistory resume) {
  if (config.explore_trials < 2 || config.total_trials < config.explore_trials)
    throw UsageError("bayesopt needs total >= explore >= 2");
  auto h = start_history(space, std::move(resume), config.total_trials);
  const std::size_t n_random = initial_random_trials(config.explore_trials);
  while (h.size() < config.total_trials) {
    const std::size_t i = h.size();
    WeightVector v;
    if (i < n_random) {
      v = random_point(space, derive_seed(config.seed, "bo-init", i));
    } else {
      const auto surrogate = fit_gp(h);
      const auto mode = i < config.explore_trials ? Acquisition::kExpectedImprovement
                                                  : Acquisition::kPosteriorMean;
      v = propose_next(surrogate, h, derive_seed(config.seed, "bo-propose", i), mode,
                       config.proposal);
    }
    record(h, objective, std::move(v), config.seed);
  }
  return finish(std::move(h));
}

SearchResult random_search(const Objective& objective, const SearchSpace& space,
                           std::size_t trials, std::uint64_t seed, TrialHistory resume) {
  if (trials == 0) throw UsageError("random search needs at least one trial");
  auto h = start_history(space, std::move(resume), trials);
  while (h.size() < trials)
    record(h, objective, random_point(space, derive_seed(seed, "rs", h.size())), seed);
  return finish(std::move(h));
}

SearchResult uniform_baseline(const Objective& objective, const SearchSpace& space,
                              std::uint64_t seed) {
  auto h = start_history(space, {}, 1);
  record(h, objective, WeightVector{space.names, space.hi}, seed);
  return finish(std::move(h));
}

std::vector<SentencePair> mix_validation(std::span<const std::vector<SentencePair>> sets,
                                         std::span<const double> ratios,
                                         std::uint64_t seed) {
  if (sets.size() != ratios.size()) throw UsageError("one mixing ratio per validation set");
  double total = 0.0;
  for (double r : ratios) {
    if (!(r >= 0.0) || !std::isfinite(r)) throw UsageError("mixing ratios must be >= 0");
    total += r;
  }
  if (std::abs(total - 1.0) > 1e-9) throw UsageError("mixing ratios must sum to 1");

  std::size_t length = std::numeric_limits<std::size_t>::max();
  for (std::size_t k = 0; k < sets.size(); ++k) {
    if (ratios[k] == 0.0) continue;
    if (sets[k].empty())
      throw DataError("validation set " + std::to_string(k) + " is empty but has ratio > 0");
    length = std::min(length, static_cast<std::size_t>(std::floor(
                                  static_cast<double>(sets[k].size()) / ratios[k] + 1e-9)));
  }
  std::vector<SentencePair> out;
  for (std::size_t k = 0; k < sets.size(); ++k) {
    if (ratios[k] == 0.0) continue;
    const auto take = std::min<std::size_t>(
        sets[k].size(),
        static_cast<std::size_t>(std::llround(ratios[k] * static_cast<double>(length))));
    std::vector<std::size_t> idx(sets[k].size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng(derive_seed(seed, "mix", k));
    shuffle(idx, rng);
    for (std::size_t i = 0; i < take; ++i) out.push_back(sets[k][idx[i]]);
  }
  return out;
}

EvalProtocol::EvalProtocol(const ScoredCorpus& corpus_in, ToyTranslationModel warm,
                           Schedule schedule_in, TrainerConfig trainer_in,
                           std::span<const SentencePair> mixed_validation,
                           std::uint64_t seed_in)
    : corpus(&corpus_in),
      warm_model(std::move(warm)),
      encoded(warm_model.encode(corpus_in.pairs())),
      schedule(schedule_in),
      trainer(trainer_in),
      validation(warm_model.encode(mixed_validation)),
      seed(seed_in) {
  schedule.validate();
  if (validation.empty()) throw DataError("empty mixed validation set");
}

double evaluate_candidate(const WeightVector& v, const EvalProtocol& protocol) {
  ScoredCorpus scored = *protocol.corpus;
  score_and_normalize(scored, v);
  const auto run = run_curriculum(scored, protocol.encoded, protocol.schedule,
                                  protocol.warm_model, protocol.trainer, protocol.seed);
  return -perplexity(run.model, protocol.validation);
}

Objective make_objective(const EvalProtocol& protocol) {
  return [&protocol](const WeightVector& v) { return evaluate_candidate(v, protocol); };
}

}  // namespace mdc
