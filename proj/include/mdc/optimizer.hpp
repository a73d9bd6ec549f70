#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "mdc/corpus.hpp"
#include "mdc/curriculum.hpp"
#include "mdc/gp.hpp"
#include "mdc/toymt.hpp"

namespace mdc {

/// Box-bounded weight space, one dimension per feature name.
struct SearchSpace {
  std::vector<std::string> names;
  std::vector<double> lo;
  std::vector<double> hi;

  static SearchSpace unit_box(std::vector<std::string> names);

  std::size_t dim() const { return names.size(); }
  bool contains(const WeightVector& v) const;
  WeightVector from_unit(std::span<const double> u) const;
  std::vector<double> to_unit(const WeightVector& v) const;
  void validate() const;
};

struct Trial {
  std::size_t index = 0;
  WeightVector v;
  double p = 0.0;
  std::uint64_t seed = 0;
  double wall_time = 0.0;  // seconds; in memory only
};

struct TrialHistory {
  SearchSpace space;
  std::vector<Trial> trials;

  std::size_t size() const { return trials.size(); }
  const Trial& best() const;
  /// Cumulative max of p over trials.
  std::vector<double> best_so_far() const;
};

/// One JSON object per line: {"index", "V": {name: value}, "p", "seed"}.
void write_history(std::ostream& out, const TrialHistory& history);
void write_history(const std::filesystem::path& path, const TrialHistory& history);
TrialHistory read_history(std::istream& in, const SearchSpace& space);
TrialHistory read_history(const std::filesystem::path& path, const SearchSpace& space);

/// GP over trials: inputs scaled to the unit box, p standardized.
class GPSurrogate {
 public:
  GPSurrogate(SearchSpace space, GaussianProcess gp, double p_mean, double p_scale);

  /// Posterior on the p scale.
  GPPrediction predict(const WeightVector& v) const;
  GPPrediction predict_unit(std::span<const double> u) const;

  const GaussianProcess& gp() const { return gp_; }
  const SearchSpace& space() const { return space_; }
  double p_mean() const { return p_mean_; }
  double p_scale() const { return p_scale_; }

 private:
  SearchSpace space_;
  GaussianProcess gp_;
  double p_mean_;
  double p_scale_;
};

/// Needs at least two trials.
GPSurrogate fit_gp(const TrialHistory& history);

double expected_improvement(const GPSurrogate& surrogate, const WeightVector& v,
                            double best_p);

enum class Acquisition { kExpectedImprovement, kPosteriorMean };

struct ProposalConfig {
  std::size_t candidates = 2048;
  std::size_t local_steps = 50;

  bool operator==(const ProposalConfig&) const = default;
};

/// Argmax of the acquisition over seeded uniform candidates, refined by
/// coordinate-wise local steps. Ties go to the first candidate.
WeightVector propose_next(const GPSurrogate& surrogate, const TrialHistory& history,
                          std::uint64_t seed,
                          Acquisition acquisition = Acquisition::kExpectedImprovement,
                          const ProposalConfig& config = {});

using Objective = std::function<double(const WeightVector&)>;

struct SearchResult {
  WeightVector best_v;
  double best_p = 0.0;
  TrialHistory history;
};

struct BayesOptConfig {
  std::size_t total_trials = 30;
  std::size_t explore_trials = 25;
  std::uint64_t seed = 0;
  ProposalConfig proposal;
};

/// max(2, ceil(explore / 5)) seeded-random trials before the first GP fit.
std::size_t initial_random_trials(std::size_t explore_trials);

/// Sequential GP-EI search. The last total - explore trials maximize the
/// posterior mean instead of EI. `resume` continues an earlier history of
/// the same seed; the result equals an uninterrupted run.
SearchResult bayesopt(const Objective& objective, const SearchSpace& space,
                      const BayesOptConfig& config, TrialHistory resume = {});

SearchResult random_search(const Objective& objective, const SearchSpace& space,
                           std::size_t trials, std::uint64_t seed,
                           TrialHistory resume = {});

/// Single evaluation at the box upper bound (all ones by default).
SearchResult uniform_baseline(const Objective& objective, const SearchSpace& space,
                              std::uint64_t seed = 0);

/// Per-domain subsample: round(ratio_k * L) pairs from set k by seeded
/// shuffle, L = min over ratio_k > 0 of floor(|set_k| / ratio_k).
std::vector<SentencePair> mix_validation(
    std::span<const std::vector<SentencePair>> sets, std::span<const double> ratios,
    std::uint64_t seed);

/// Everything needed to score one candidate V.
struct EvalProtocol {
  const ScoredCorpus* corpus = nullptr;  // features populated
  ToyTranslationModel warm_model;
  std::vector<EncodedPair> encoded;  // corpus pairs under warm_model's vocab
  Schedule schedule;                 // max_steps = trial steps
  TrainerConfig trainer;
  std::vector<EncodedPair> validation;  // mixed
  std::uint64_t seed = 0;

  EvalProtocol(const ScoredCorpus& corpus, ToyTranslationModel warm,
               Schedule schedule, TrainerConfig trainer,
               std::span<const SentencePair> mixed_validation, std::uint64_t seed);
};

/// Aggregate with V, normalize, fine-tune the warm model with the resulting
/// curriculum, and return -perplexity on the mixed validation set.
double evaluate_candidate(const WeightVector& v, const EvalProtocol& protocol);

Objective make_objective(const EvalProtocol& protocol);

}  // namespace mdc
