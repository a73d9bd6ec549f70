#pragma once

#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "mdc/corpus.hpp"

namespace mdc {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Token <-> index map. Index 0 is always `<unk>`.
class Vocabulary {
 public:
  static constexpr const char* kUnk = "<unk>";

  /// Sorted unique tokens, `<unk>` first.
  explicit Vocabulary(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  int index(const std::string& token) const;
  const std::string& token(int i) const { return tokens_[static_cast<std::size_t>(i)]; }
  const std::vector<std::string>& tokens() const { return tokens_; }

  bool operator==(const Vocabulary& o) const { return tokens_ == o.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

struct VocabularyPair {
  std::shared_ptr<const Vocabulary> source;
  std::shared_ptr<const Vocabulary> target;
};

/// Vocabularies covering every token of the given pair lists.
VocabularyPair build_vocabularies(std::span<const std::vector<SentencePair>* const> sets);
VocabularyPair build_vocabularies(const std::vector<SentencePair>& pairs);

/// A pair mapped to vocabulary indices; out-of-vocabulary tokens are UNK.
struct EncodedPair {
  std::vector<int> source;
  std::vector<int> target;
};

/// Bag-of-source log-linear translation model:
///   P(y_j | x) = softmax_t( (1/|x|) sum_i theta[x_i, t] )[y_j]
/// with theta indexed (source token, target token).
class ToyTranslationModel {
 public:
  ToyTranslationModel(VocabularyPair vocab, Matrix theta);
  static ToyTranslationModel zeros(VocabularyPair vocab);

  const Vocabulary& source_vocab() const { return *vocab_.source; }
  const Vocabulary& target_vocab() const { return *vocab_.target; }
  const VocabularyPair& vocabularies() const { return vocab_; }
  bool same_vocabularies(const ToyTranslationModel& other) const;

  const Matrix& theta() const { return theta_; }
  Matrix& mutable_theta() { return theta_; }

  EncodedPair encode(const SentencePair& pair) const;
  std::vector<EncodedPair> encode(std::span<const SentencePair> pairs) const;

  std::string serialize() const;
  static ToyTranslationModel deserialize(std::string_view bytes);
  void save(const std::filesystem::path& path) const;
  static ToyTranslationModel load(const std::filesystem::path& path);

  bool operator==(const ToyTranslationModel& o) const;

 private:
  VocabularyPair vocab_;
  Matrix theta_;
};

/// d(sum of log-likelihoods)/d(theta); same shape as theta.
struct GradientVector {
  Matrix values;

  double dot(const GradientVector& other) const {
    return values.cwiseProduct(other.values).sum();
  }
  double squared_norm() const { return values.squaredNorm(); }
};

/// log P(y | x; theta), summed over target tokens.
double log_likelihood(const ToyTranslationModel& model, const SentencePair& pair);
double log_likelihood(const ToyTranslationModel& model, const EncodedPair& pair);

/// Exact gradient of the summed log-likelihood over `pairs` (summed, not
/// averaged).
GradientVector gradient(const ToyTranslationModel& model,
                        std::span<const SentencePair> pairs);

/// Adds scale * d log P(y|x) / d theta for one pair into `out` and returns
/// the pair's log-likelihood.
double accumulate_gradient(const Matrix& theta, const EncodedPair& pair,
                           double scale, Matrix& out);

/// One simultaneous ascent step: theta += lr * sum_i scale_i * g_i, with every
/// g_i evaluated at the current theta. Returns sum_i log P(y_i | x_i) before
/// the update.
double ascent_step(ToyTranslationModel& model,
                   std::span<const EncodedPair* const> batch,
                   std::span<const double> scales, double lr);

/// `steps` rounds of theta += lr * gradient(theta, seed). The input is not
/// modified.
ToyTranslationModel finetune(const ToyTranslationModel& model,
                             std::span<const SentencePair> seed, double lr,
                             int steps);
ToyTranslationModel finetune(const ToyTranslationModel& model,
                             const DomainSeedSet& seed, double lr, int steps);

/// Fine-tunes on the concatenation of all seed sets.
ToyTranslationModel build_domain_model(const ToyTranslationModel& base,
                                       std::span<const DomainSeedSet> seeds,
                                       double lr, int steps);

/// q(x, y) = (log P(y|x; domain) - log P(y|x; base)) / |y|.
double nmt_domain_feature(const SentencePair& pair,
                          const ToyTranslationModel& base,
                          const ToyTranslationModel& domain);

/// q against a model fine-tuned on the concatenated seeds.
double multi_domain_feature(const SentencePair& pair,
                            const ToyTranslationModel& base,
                            std::span<const DomainSeedSet> seeds, double lr,
                            int steps);

struct TaylorCheck {
  double lhs = 0.0;  // log P(y|x; theta_Z) - log P(y|x; theta_base)
  double rhs = 0.0;  // lr * <g(pair), g(seed)>
  double abs_error = 0.0;
};

/// Compares the one-step fine-tuning log-likelihood gain with its
/// first-order gradient dot-product approximation.
TaylorCheck taylor_check(const SentencePair& pair,
                         const ToyTranslationModel& base,
                         std::span<const SentencePair> seed, double lr);

/// exp(-(sum log-likelihood) / (sum |y|)).
double perplexity(const ToyTranslationModel& model,
                  std::span<const SentencePair> eval);
double perplexity(const ToyTranslationModel& model,
                  std::span<const EncodedPair> eval);

}  // namespace mdc
