#include "mdc/curriculum.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>

#include "mdc/error.hpp"

namespace mdc {

namespace {

// Neumaier-compensated mean.
class MeanAccumulator {
 public:
  void add(double x) {
    const double t = sum_ + x;
    comp_ += std::abs(sum_) >= std::abs(x) ? (sum_ - t) + x : (x - t) + sum_;
    sum_ = t;
    ++n_;
  }
  double mean() const { return n_ ? (sum_ + comp_) / static_cast<double>(n_) : 0.0; }
  std::size_t count() const { return n_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
  std::size_t n_ = 0;
};

void require_percentiles(const ScoredCorpus& corpus) {
  if (!corpus.has_percentiles())
    throw DataError("corpus must be scored and percentile-normalized");
}

}  // namespace

Schedule Schedule::plateau_after(std::int64_t decay_steps, double floor,
                                 std::int64_t warmup, std::int64_t max_steps) {
  if (!(floor > 0.0 && floor < 1.0)) throw UsageError("plateau floor must be in (0, 1)");
  if (decay_steps <= 0) throw UsageError("decay steps must be > 0");
  Schedule s;
  s.halving = static_cast<double>(decay_steps) * std::log(2.0) / std::log(1.0 / floor);
  s.floor = floor;
  s.warmup = warmup;
  s.max_steps = max_steps;
  s.validate();
  return s;
}

Schedule Schedule::constant(std::int64_t max_steps) {
  Schedule s;
  s.floor = 1.0;
  s.max_steps = max_steps;
  s.validate();
  return s;
}

void Schedule::validate() const {
  if (!(halving > 0.0) || !std::isfinite(halving))
    throw UsageError("schedule halving constant must be positive");
  if (!(floor > 0.0 && floor <= 1.0)) throw UsageError("schedule floor must be in (0, 1]");
  if (warmup < 0) throw UsageError("warmup steps must be >= 0");
  if (max_steps < 0) throw UsageError("max steps must be >= 0");
}

double rho(const Schedule& schedule, std::int64_t t) {
  if (t < 0) throw UsageError("step must be >= 0");
  if (t < schedule.warmup) return 1.0;
  const double decayed =
      std::pow(0.5, static_cast<double>(t - schedule.warmup) / schedule.halving);
  return std::clamp(decayed, schedule.floor, 1.0);
}

std::size_t selected_count(double rho, std::size_t n) {
  if (n == 0) return 0;
  const double scaled = rho * static_cast<double>(n);
  const auto c = static_cast<std::size_t>(std::ceil(scaled - 1e-9));
  return std::clamp<std::size_t>(c, 1, n);
}

SelectionState select_ratio(const ScoredCorpus& corpus, double ratio,
                            std::int64_t t) {
  require_percentiles(corpus);
  SelectionState s;
  s.step = t;
  s.rho = ratio;
  s.total = corpus.size();
  s.selected = selected_count(ratio, s.total);
  s.threshold = static_cast<double>(s.total - s.selected) / static_cast<double>(s.total);
  return s;
}

SelectionState select(const ScoredCorpus& corpus, const Schedule& schedule,
                      std::int64_t t) {
  return select_ratio(corpus, rho(schedule, t), t);
}

std::vector<double> weights(const SelectionState& state, const ScoredCorpus& corpus) {
  std::vector<double> w(corpus.size(), 0.0);
  const double each = 1.0 / static_cast<double>(state.selected);
  for (std::size_t row = 0; row < corpus.size(); ++row)
    if (state.contains(corpus, row)) w[row] = each;
  return w;
}

std::vector<std::size_t> selected_rows(const SelectionState& state,
                                       const ScoredCorpus& corpus) {
  std::vector<std::size_t> rows;
  rows.reserve(state.selected);
  for (std::size_t row = 0; row < corpus.size(); ++row)
    if (state.contains(corpus, row)) rows.push_back(row);
  return rows;
}

std::vector<std::size_t> sample_batch(const SelectionState& state,
                                      const ScoredCorpus& corpus,
                                      std::size_t batch_size, Rng& rng) {
  if (batch_size == 0) throw UsageError("batch size must be >= 1");
  const auto rows = selected_rows(state, corpus);
  std::vector<std::size_t> batch(batch_size);
  for (auto& b : batch) b = rows[uniform_index(rng, rows.size())];
  return batch;
}

DataFeeder::DataFeeder(const ScoredCorpus& corpus) : corpus_(corpus) {
  require_percentiles(corpus);
  const std::size_t n = corpus.size();
  tree_.assign(n + 1, 0);
  // all rows selected: O(n) Fenwick build
  for (std::size_t i = 1; i <= n; ++i) {
    tree_[i] += 1;
    const std::size_t parent = i + (i & (~i + 1));
    if (parent <= n) tree_[parent] += tree_[i];
  }
  while (top_bit_ * 2 <= n) top_bit_ *= 2;
  state_ = select_ratio(corpus, 1.0, 0);
}

void DataFeeder::toggle(std::size_t row, int delta) {
  for (std::size_t i = row + 1; i < tree_.size(); i += i & (~i + 1)) tree_[i] += delta;
}

void DataFeeder::set_selected(std::size_t count) {
  const auto& order = corpus_.ascending_order();
  const std::size_t n = corpus_.size();
  std::size_t current = state_.selected;
  // selected rows are order[n - count, n)
  while (current > count) {
    toggle(order[n - current], -1);
    --current;
  }
  while (current < count) {
    ++current;
    toggle(order[n - current], +1);
  }
}

const SelectionState& DataFeeder::advance(const Schedule& schedule, std::int64_t t) {
  auto next = select(corpus_, schedule, t);
  set_selected(next.selected);
  state_ = next;
  return state_;
}

std::size_t DataFeeder::draw(Rng& rng) const {
  // (j+1)-th selected row in record order
  std::size_t remaining = uniform_index(rng, state_.selected) + 1;
  std::size_t pos = 0;
  for (std::size_t step = top_bit_; step > 0; step >>= 1) {
    const std::size_t next = pos + step;
    if (next < tree_.size() && static_cast<std::size_t>(tree_[next]) < remaining) {
      pos = next;
      remaining -= static_cast<std::size_t>(tree_[next]);
    }
  }
  return pos;  // 0-based row
}

TrainingRun run_curriculum(const ScoredCorpus& corpus,
                           std::span<const EncodedPair> encoded,
                           const Schedule& schedule,
                           const ToyTranslationModel& initial,
                           const TrainerConfig& trainer, std::uint64_t seed) {
  schedule.validate();
  if (trainer.batch_size == 0) throw UsageError("batch size must be >= 1");
  if (encoded.size() != corpus.size()) throw DataError("encoded corpus size mismatch");
  TrainingRun run{schedule, seed, trainer, initial, {}};
  run.log.reserve(static_cast<std::size_t>(schedule.max_steps));
  DataFeeder feeder(corpus);
  Rng rng(seed);
  const auto& f = corpus.scores();
  std::vector<const EncodedPair*> batch(trainer.batch_size);
  const std::vector<double> scales(trainer.batch_size,
                                   1.0 / static_cast<double>(trainer.batch_size));
  for (std::int64_t t = 1; t <= schedule.max_steps; ++t) {
    const auto& state = feeder.advance(schedule, t);
    MeanAccumulator mean_f;
    double tokens = 0.0;
    for (auto& b : batch) {
      const auto row = feeder.draw(rng);
      b = &encoded[row];
      mean_f.add(f[row]);
      tokens += static_cast<double>(b->target.size());
    }
    const double ll = ascent_step(run.model, batch, scales, trainer.lr);
    run.log.push_back({t, state.rho, state.selected, mean_f.mean(), -ll / tokens});
  }
  if (!run.model.theta().allFinite()) throw NumericalError("training diverged");
  return run;
}

TrainingRun run_curriculum(const ScoredCorpus& corpus, const Schedule& schedule,
                           const ToyTranslationModel& initial,
                           const TrainerConfig& trainer, std::uint64_t seed) {
  const auto encoded = initial.encode(corpus.pairs());
  return run_curriculum(corpus, encoded, schedule, initial, trainer, seed);
}

std::vector<double> loss_weights(std::span<const double> f) {
  std::vector<double> w(f.size(), 1.0);
  if (f.empty()) return w;
  const auto [lo, hi] = std::minmax_element(f.begin(), f.end());
  const double range = *hi - *lo;
  if (!(range > 0.0)) return w;
  for (std::size_t i = 0; i < f.size(); ++i) w[i] = (f[i] - *lo) / range;
  return w;
}

TrainingRun run_loss_weighted(const ScoredCorpus& corpus, const WeightVector& v,
                              const ToyTranslationModel& initial,
                              const TrainerConfig& trainer, std::uint64_t seed,
                              std::int64_t steps) {
  if (trainer.batch_size == 0) throw UsageError("batch size must be >= 1");
  if (corpus.empty()) throw DataError("empty corpus");
  const auto f = aggregate(corpus, v);
  const auto w = loss_weights(f);
  const auto encoded = initial.encode(corpus.pairs());
  TrainingRun run{Schedule::constant(steps), seed, trainer, initial, {}};
  run.log.reserve(static_cast<std::size_t>(steps));
  Rng rng(seed);
  std::vector<const EncodedPair*> batch(trainer.batch_size);
  std::vector<double> scales(trainer.batch_size);
  const double inv_b = 1.0 / static_cast<double>(trainer.batch_size);
  for (std::int64_t t = 1; t <= steps; ++t) {
    MeanAccumulator mean_f;
    double tokens = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto row = uniform_index(rng, corpus.size());
      batch[i] = &encoded[row];
      scales[i] = w[row] * inv_b;
      mean_f.add(f[row]);
      tokens += static_cast<double>(batch[i]->target.size());
    }
    const double ll = ascent_step(run.model, batch, scales, trainer.lr);
    run.log.push_back({t, 1.0, corpus.size(), mean_f.mean(), -ll / tokens});
  }
  if (!run.model.theta().allFinite()) throw NumericalError("training diverged");
  return run;
}

void write_run_log(std::ostream& out, const std::vector<StepLog>& log) {
  out << "t\trho\tn_selected\tbatch_mean_f\ttrain_loss\n";
  for (const auto& s : log)
    out << s.t << '\t' << format_double(s.rho) << '\t' << s.n_selected << '\t'
        << format_double(s.batch_mean_f) << '\t' << format_double(s.train_loss)
        << '\n';
}

void write_run_log(const std::filesystem::path& path, const std::vector<StepLog>& log) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  write_run_log(out, log);
}

std::vector<StepLog> read_run_log(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "t\trho\tn_selected\tbatch_mean_f\ttrain_loss")
    throw DataError(path.string() + ": not a run log");
  std::vector<StepLog> log;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    StepLog s;
    std::string rho_s, f_s, loss_s;
    if (!(row >> s.t >> rho_s >> s.n_selected >> f_s >> loss_s))
      throw DataError(path.string() + ": malformed run log row");
    auto parse = [&](const std::string& text) {
      double x = 0.0;
      auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), x);
      if (ec != std::errc()) throw DataError(path.string() + ": bad number " + text);
      return x;
    };
    s.rho = parse(rho_s);
    s.batch_mean_f = parse(f_s);
    s.train_loss = parse(loss_s);
    log.push_back(s);
  }
  return log;
}

BalanceReport dynamic_balance_report(const ScoredCorpus& corpus,
                                     const WeightVector& v,
                                     std::span<const double> thresholds,
                                     std::span<const double> ratings) {
  if (!ratings.empty() && ratings.size() != corpus.size())
    throw DataError("need one rating per pair");
  ScoredCorpus scored = corpus;
  score_and_normalize(scored, v);

  BalanceReport report;
  report.feature_names = scored.feature_names();
  report.has_ratings = !ratings.empty();
  const std::size_t nf = scored.feature_count();
  for (double tau : thresholds) {
    std::vector<MeanAccumulator> feats(nf);
    MeanAccumulator f, rating;
    for (std::size_t row = 0; row < scored.size(); ++row) {
      if (scored.percentile(row) < tau) continue;
      for (std::size_t k = 0; k < nf; ++k) feats[k].add(scored.feature(row, k));
      f.add(scored.score(row));
      if (report.has_ratings) rating.add(ratings[row]);
    }
    BalanceRow r;
    r.threshold = tau;
    r.count = f.count();
    if (r.count > 0) {
      for (const auto& m : feats) r.feature_means.push_back(m.mean());
      r.mean_f = f.mean();
      if (report.has_ratings) r.mean_rating = rating.mean();
    }
    report.rows.push_back(std::move(r));
  }
  return report;
}

void write_balance_report(std::ostream& out, const BalanceReport& report) {
  out << "threshold\tcount";
  for (const auto& n : report.feature_names) out << "\tmean_" << n;
  out << "\tmean_f";
  if (report.has_ratings) out << "\tmean_rating";
  out << '\n';
  for (const auto& r : report.rows) {
    out << format_double(r.threshold) << '\t' << r.count;
    if (r.empty()) {
      for (std::size_t k = 0; k < report.feature_names.size(); ++k) out << "\tempty";
      out << "\tempty";
      if (report.has_ratings) out << "\tempty";
    } else {
      for (double m : r.feature_means) out << '\t' << format_double(m);
      out << '\t' << format_double(r.mean_f);
      if (report.has_ratings) out << '\t' << format_double(*r.mean_rating);
    }
    out << '\n';
  }
}

}  // namespace mdc
