#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace mdc {

using Tokens = std::vector<std::string>;

/// Splits on ASCII whitespace; runs of whitespace collapse.
Tokens tokenize(std::string_view text);
std::string join_tokens(const Tokens& tokens);

struct SentencePair {
  std::int64_t id = 0;
  Tokens source;
  Tokens target;

  bool operator==(const SentencePair&) const = default;
};

/// A small trusted parallel set for one domain.
struct DomainSeedSet {
  std::string name;
  std::vector<SentencePair> pairs;
};

/// Feature weights, matched to corpus features by name.
struct WeightVector {
  std::vector<std::string> names;
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
  double at(std::string_view name) const;

  bool operator==(const WeightVector&) const = default;
};

enum class CorpusFormat { kTsv, kJsonl };

CorpusFormat parse_format(std::string_view name);
/// tsv unless the extension is .jsonl or .json.
CorpusFormat format_from_path(const std::filesystem::path& path);

/// Parallel corpus with a dense per-pair feature table, the aggregated
/// score f and its offline percentile.
///
/// Rows are kept in record order. Feature values are stored raw; nothing
/// is rescaled before weighting.
class ScoredCorpus {
 public:
  ScoredCorpus() = default;
  explicit ScoredCorpus(std::vector<SentencePair> pairs);

  std::size_t size() const { return pairs_->size(); }
  bool empty() const { return pairs_->empty(); }
  const std::vector<SentencePair>& pairs() const { return *pairs_; }
  const SentencePair& pair(std::size_t row) const { return (*pairs_)[row]; }

  /// Row holding `id`; throws DataError when absent.
  std::size_t row_of(std::int64_t id) const;
  bool contains(std::int64_t id) const { return row_by_id_->count(id) != 0; }

  const std::vector<std::string>& feature_names() const { return names_; }
  std::size_t feature_count() const { return names_.size(); }
  std::size_t feature_index(std::string_view name) const;
  double feature(std::size_t row, std::size_t k) const {
    return values_[row * names_.size() + k];
  }
  std::span<const double> features(std::size_t row) const {
    return {values_.data() + row * names_.size(), names_.size()};
  }
  /// One column, in row order.
  std::vector<double> feature_column(std::size_t k) const;

  /// Appends a feature column given in row order. Values must be finite.
  void add_feature(const std::string& name, std::span<const double> column);

  bool has_scores() const { return f_.size() == size() && !empty(); }
  const std::vector<double>& scores() const { return f_; }
  double score(std::size_t row) const { return f_[row]; }
  void set_scores(std::vector<double> f);

  bool has_percentiles() const { return !order_.empty(); }
  const std::vector<double>& percentiles() const { return percentile_; }
  double percentile(std::size_t row) const { return percentile_[row]; }
  /// Rows sorted ascending by (f, id).
  const std::vector<std::size_t>& ascending_order() const { return order_; }

  friend void percentile_normalize(ScoredCorpus& corpus);

 private:
  // Pairs are immutable once ingested; copies share them.
  std::shared_ptr<const std::vector<SentencePair>> pairs_ =
      std::make_shared<const std::vector<SentencePair>>();
  std::shared_ptr<const std::unordered_map<std::int64_t, std::size_t>> row_by_id_ =
      std::make_shared<const std::unordered_map<std::int64_t, std::size_t>>();
  std::vector<std::string> names_;
  std::vector<double> values_;  // row-major, size() x feature_count()
  std::vector<double> f_;
  std::vector<double> percentile_;
  std::vector<std::size_t> order_;
};

/// Reads one pair per record; ids follow record order from 0.
ScoredCorpus ingest_parallel(const std::filesystem::path& path,
                             CorpusFormat format);
ScoredCorpus ingest_parallel(const std::filesystem::path& path);
std::vector<SentencePair> parse_parallel(std::istream& in, CorpusFormat format,
                                         std::string_view origin = "<stream>");

void write_parallel_tsv(const std::filesystem::path& path,
                        std::span<const SentencePair> pairs);

/// Joins an `id<TAB>value` column under `name`. Every corpus id must
/// appear exactly once.
void join_external_features(ScoredCorpus& corpus,
                            const std::filesystem::path& path,
                            const std::string& name);
void join_external_features(ScoredCorpus& corpus, std::istream& in,
                            const std::string& name);
/// Feature name from the file stem.
void join_external_features(ScoredCorpus& corpus,
                            const std::filesystem::path& path);

void write_feature_file(const std::filesystem::path& path,
                        const ScoredCorpus& corpus, std::size_t k);

/// f = V . F per pair. V is matched by name; a mismatch throws with the
/// symmetric difference.
std::vector<double> aggregate(const ScoredCorpus& corpus, const WeightVector& v);

/// Stores aggregate(corpus, v) on the corpus and refreshes percentiles.
void score_and_normalize(ScoredCorpus& corpus, const WeightVector& v);

/// Sorts ascending by (f, id); the row at sorted position k of n gets k/n.
void percentile_normalize(ScoredCorpus& corpus);

/// Shortest decimal that round-trips the double.
std::string format_double(double x);

}  // namespace mdc
