#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <span>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mdc/corpus.hpp"

namespace mdc {

struct NGramConfig {
  int order = 3;
  double add_k = 0.1;
  /// Per-order interpolation weights, lowest order first. Empty = uniform.
  std::vector<double> interpolation;

  bool operator==(const NGramConfig&) const = default;
};

/// Interpolated add-k n-gram language model.
///
/// Each sentence is padded with order-1 `<s>` symbols and one `</s>`. The
/// vocabulary holds every training token plus `</s>`; any other token is
/// UNK. At every order the continuation distribution is
///   (c(h, w) + k) / (c(h) + k |V + UNK|)
/// and unseen contexts fall back to uniform over V + UNK, so each order
/// (and their convex mixture) is normalized over V + UNK.
class NGramLM {
 public:
  static constexpr std::string_view kStart = "<s>";
  static constexpr std::string_view kEnd = "</s>";

  int order() const { return config_.order; }
  double add_k() const { return config_.add_k; }
  const std::vector<double>& interpolation() const { return config_.interpolation; }
  const NGramConfig& config() const { return config_; }

  bool in_vocab(const std::string& token) const { return vocab_.count(token) != 0; }
  /// |V| + 1 for the UNK class.
  std::size_t outcome_count() const { return vocab_.size() + 1; }
  std::vector<std::string> vocabulary() const;

  /// P(word | history), where history holds the preceding tokens
  /// (already padded). Unknown words are scored as the UNK class.
  double prob(std::span<const std::string> history, const std::string& word) const;

  /// Probability of every scored position of x: each token, then `</s>`.
  std::vector<double> token_probs(const Tokens& x) const;

  /// Continuation counts for a context of length order-1 or shorter.
  std::uint64_t context_count(std::span<const std::string> context) const;
  std::vector<std::vector<std::string>> contexts(int ngram_order) const;

  std::string serialize() const;
  static NGramLM deserialize(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static NGramLM load(const std::filesystem::path& path);

  friend NGramLM train_ngram_lm(const std::vector<Tokens>& sentences,
                                const NGramConfig& config);

 private:
  struct ContextCounts {
    std::uint64_t total = 0;
    std::unordered_map<std::string, std::uint64_t> next;
  };
  // Context tokens joined with '\x1f'; one table per n-gram order.
  using Table = std::unordered_map<std::string, ContextCounts>;

  double order_prob(int n, std::span<const std::string> history,
                    const std::string& word, bool known) const;

  NGramConfig config_;
  std::unordered_set<std::string> vocab_;
  std::vector<Table> tables_;
};

NGramLM train_ngram_lm(const std::vector<Tokens>& sentences,
                       const NGramConfig& config = {});

/// Mean natural-log probability per scored position; |x| counts `</s>`.
double avg_logprob(const NGramLM& lm, const Tokens& x);

/// Domain-adapted LM: token-level mixture
///   P_Z = mu * P_domain_only + (1 - mu) * P_base.
/// N-gram models have no gradient fine-tuning, so adaptation to domain text
/// is emulated by interpolating with a model trained on that text alone.
class DomainLM {
 public:
  DomainLM(std::shared_ptr<const NGramLM> base,
           std::shared_ptr<const NGramLM> domain_only, double mu);

  const NGramLM& base() const { return *base_; }
  const NGramLM& domain_only() const { return *domain_; }
  double mu() const { return mu_; }

  std::vector<double> token_probs(const Tokens& x) const;

 private:
  std::shared_ptr<const NGramLM> base_;
  std::shared_ptr<const NGramLM> domain_;
  double mu_;
};

DomainLM adapt_lm(std::shared_ptr<const NGramLM> base,
                  const std::vector<Tokens>& domain_sentences, double mu = 0.5);

double avg_logprob(const DomainLM& lm, const Tokens& x);

/// d_Z(x) = avg_logprob(domain, x) - avg_logprob(base, x).
template <typename Base, typename Domain>
double nlm_domain_feature(const Tokens& x, const Base& base_lm,
                          const Domain& domain_lm) {
  return avg_logprob(domain_lm, x) - avg_logprob(base_lm, x);
}

/// Sparse bag of hashed character n-grams (n in [3, 6]).
struct HashedSentVec {
  std::size_t buckets = 0;
  std::vector<std::pair<std::uint32_t, double>> entries;  // sorted by bucket

  double norm() const;
  HashedSentVec scaled(double factor) const;
};

inline constexpr std::size_t kDefaultBuckets = 200003;

/// Character n-grams of " " + text + " ", hashed with FNV-1a mod buckets.
/// Characters are UTF-8 code points.
HashedSentVec hashed_sentence_vector(std::string_view text,
                                     std::size_t buckets = kDefaultBuckets);

double cosine(const HashedSentVec& a, const HashedSentVec& b);

/// Cosine of the hashed vectors of the two sides, in [-1, 1].
double embedding_similarity_feature(const SentencePair& pair,
                                    std::size_t buckets = kDefaultBuckets);

}  // namespace mdc
