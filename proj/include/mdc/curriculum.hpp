#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mdc/corpus.hpp"
#include "mdc/random.hpp"
#include "mdc/toymt.hpp"

namespace mdc {

/// rho(t) = 1 before warmup, then max(floor, 0.5^((t - warmup) / halving)).
struct Schedule {
  double halving = 1000.0;
  double floor = 0.2;
  std::int64_t warmup = 0;
  std::int64_t max_steps = 2000;

  /// Halving constant chosen so rho reaches `floor` exactly
  /// `decay_steps` steps after warmup.
  static Schedule plateau_after(std::int64_t decay_steps, double floor,
                                std::int64_t warmup, std::int64_t max_steps);
  /// rho == 1 at every step: plain uniform training.
  static Schedule constant(std::int64_t max_steps);

  void validate() const;
  bool operator==(const Schedule&) const = default;
};

double rho(const Schedule& schedule, std::int64_t t);

/// max(1, ceil(rho * n)), tolerant to rounding just above an integer.
std::size_t selected_count(double rho, std::size_t n);

/// The mask chi at one step: rows with percentile >= threshold.
struct SelectionState {
  std::int64_t step = 0;
  double rho = 1.0;
  std::size_t total = 0;
  std::size_t selected = 0;
  double threshold = 0.0;  // (total - selected) / total

  bool contains(double percentile) const { return percentile >= threshold; }
  bool contains(const ScoredCorpus& corpus, std::size_t row) const {
    return contains(corpus.percentile(row));
  }
};

SelectionState select(const ScoredCorpus& corpus, const Schedule& schedule,
                      std::int64_t t);
SelectionState select_ratio(const ScoredCorpus& corpus, double rho,
                            std::int64_t t = 0);

/// W_t per row: 1/n(t) on selected rows, 0 elsewhere.
std::vector<double> weights(const SelectionState& state, const ScoredCorpus& corpus);

/// Selected rows in record order.
std::vector<std::size_t> selected_rows(const SelectionState& state,
                                       const ScoredCorpus& corpus);

/// i.i.d. uniform draws with replacement from the selected set. Draw j
/// picks the j-th selected row in record order.
std::vector<std::size_t> sample_batch(const SelectionState& state,
                                      const ScoredCorpus& corpus,
                                      std::size_t batch_size, Rng& rng);

/// Incremental sampler for a training run: same draws as sample_batch, but
/// the selected set is kept in a Fenwick tree and updated as n(t) moves.
class DataFeeder {
 public:
  explicit DataFeeder(const ScoredCorpus& corpus);

  const SelectionState& advance(const Schedule& schedule, std::int64_t t);
  const SelectionState& state() const { return state_; }
  std::size_t draw(Rng& rng) const;

 private:
  void set_selected(std::size_t count);
  void toggle(std::size_t row, int delta);

  const ScoredCorpus& corpus_;
  std::vector<int> tree_;  // 1-based Fenwick tree over rows
  std::size_t top_bit_ = 1;
  SelectionState state_;
};

struct TrainerConfig {
  double lr = 0.05;
  std::size_t batch_size = 16;

  bool operator==(const TrainerConfig&) const = default;
};

struct StepLog {
  std::int64_t t = 0;
  double rho = 1.0;
  std::size_t n_selected = 0;
  double batch_mean_f = 0.0;
  double train_loss = 0.0;  // per target token, before the step

  bool operator==(const StepLog&) const = default;
};

struct TrainingRun {
  Schedule schedule;
  std::uint64_t seed = 0;
  TrainerConfig trainer;
  ToyTranslationModel model;
  std::vector<StepLog> log;
};

/// For t = 1..T: select, draw a batch, one ascent step on the batch mean
/// log-likelihood. The sampler is Rng(seed).
TrainingRun run_curriculum(const ScoredCorpus& corpus, const Schedule& schedule,
                           const ToyTranslationModel& initial,
                           const TrainerConfig& trainer, std::uint64_t seed);
TrainingRun run_curriculum(const ScoredCorpus& corpus,
                           std::span<const EncodedPair> encoded,
                           const Schedule& schedule,
                           const ToyTranslationModel& initial,
                           const TrainerConfig& trainer, std::uint64_t seed);

/// Min-max normalized f in [0, 1]; all ones when every f is equal.
std::vector<double> loss_weights(std::span<const double> f);

/// Uniform sampling over all rows with each pair's loss scaled by its
/// min-max normalized aggregate score.
TrainingRun run_loss_weighted(const ScoredCorpus& corpus, const WeightVector& v,
                              const ToyTranslationModel& initial,
                              const TrainerConfig& trainer, std::uint64_t seed,
                              std::int64_t steps);

void write_run_log(std::ostream& out, const std::vector<StepLog>& log);
void write_run_log(const std::filesystem::path& path, const std::vector<StepLog>& log);
std::vector<StepLog> read_run_log(const std::filesystem::path& path);

struct BalanceRow {
  double threshold = 0.0;
  std::size_t count = 0;
  std::vector<double> feature_means;
  double mean_f = 0.0;
  std::optional<double> mean_rating;
  bool empty() const { return count == 0; }
};

struct BalanceReport {
  std::vector<std::string> feature_names;
  bool has_ratings = false;
  std::vector<BalanceRow> rows;
};

/// Means over {percentile >= tau} for each threshold tau. `ratings`, when
/// non-empty, holds one human rating (0-4) per row.
BalanceReport dynamic_balance_report(const ScoredCorpus& corpus,
                                     const WeightVector& v,
                                     std::span<const double> thresholds,
                                     std::span<const double> ratings = {});

void write_balance_report(std::ostream& out, const BalanceReport& report);

}  // namespace mdc
