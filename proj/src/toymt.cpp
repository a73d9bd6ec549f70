#include "mdc/toymt.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "mdc/error.hpp"

namespace mdc {

namespace {

constexpr char kMagic[8] = {'M', 'D', 'C', 'T', 'O', 'Y', 'M', 'T'};
constexpr std::uint32_t kFormatVersion = 1;

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }
  std::string get_string() {
    const auto len = get<std::uint32_t>();
    need(len);
    std::string s(bytes_.substr(pos_, len));
    pos_ += len;
    return s;
  }
  std::string_view raw(std::size_t n) {
    need(n);
    auto v = bytes_.substr(pos_, n);
    pos_ += n;
    return v;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw DataError("truncated model file");
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

void put_vocab(std::string& out, const Vocabulary& v) {
  put<std::uint64_t>(out, v.size());
  for (const auto& t : v.tokens()) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.size()));
    out += t;
  }
}

std::shared_ptr<const Vocabulary> get_vocab(Reader& r) {
  const auto n = r.get<std::uint64_t>();
  std::vector<std::string> tokens;
  tokens.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) tokens.push_back(r.get_string());
  auto v = std::make_shared<const Vocabulary>(tokens);
  if (v->tokens() != tokens) throw DataError("model vocabulary is not canonical");
  return v;
}

// Mean-pooled logits of the source bag.
void pooled_logits(const Matrix& theta, const std::vector<int>& source,
                   Eigen::VectorXd& h) {
  h.setZero(theta.cols());
  for (int s : source) h += theta.row(s).transpose();
  h /= static_cast<double>(source.size());
}

double log_sum_exp(const Eigen::VectorXd& h) {
  const double m = h.maxCoeff();
  return m + std::log((h.array() - m).exp().sum());
}

}  // namespace

Vocabulary::Vocabulary(std::vector<std::string> tokens) {
  std::set<std::string> uniq(tokens.begin(), tokens.end());
  uniq.erase(kUnk);
  tokens_.reserve(uniq.size() + 1);
  tokens_.emplace_back(kUnk);
  tokens_.insert(tokens_.end(), uniq.begin(), uniq.end());
  for (std::size_t i = 0; i < tokens_.size(); ++i)
    index_.emplace(tokens_[i], static_cast<int>(i));
}

int Vocabulary::index(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? 0 : it->second;
}

VocabularyPair build_vocabularies(
    std::span<const std::vector<SentencePair>* const> sets) {
  std::set<std::string> src, tgt;
  for (const auto* set : sets)
    for (const auto& p : *set) {
      src.insert(p.source.begin(), p.source.end());
      tgt.insert(p.target.begin(), p.target.end());
    }
  return {std::make_shared<const Vocabulary>(
              std::vector<std::string>(src.begin(), src.end())),
          std::make_shared<const Vocabulary>(
              std::vector<std::string>(tgt.begin(), tgt.end()))};
}

VocabularyPair build_vocabularies(const std::vector<SentencePair>& pairs) {
  const std::vector<SentencePair>* sets[] = {&pairs};
  return build_vocabularies(sets);
}

ToyTranslationModel::ToyTranslationModel(VocabularyPair vocab, Matrix theta)
    : vocab_(std::move(vocab)), theta_(std::move(theta)) {
  if (!vocab_.source || !vocab_.target) throw UsageError("model needs vocabularies");
  if (theta_.rows() != static_cast<Eigen::Index>(vocab_.source->size()) ||
      theta_.cols() != static_cast<Eigen::Index>(vocab_.target->size()))
    throw DataError("theta shape does not match vocabularies");
  if (!theta_.allFinite()) throw NumericalError("theta has non-finite entries");
}

ToyTranslationModel ToyTranslationModel::zeros(VocabularyPair vocab) {
  Matrix theta = Matrix::Zero(static_cast<Eigen::Index>(vocab.source->size()),
                              static_cast<Eigen::Index>(vocab.target->size()));
  return {std::move(vocab), std::move(theta)};
}

bool ToyTranslationModel::same_vocabularies(const ToyTranslationModel& other) const {
  auto same = [](const auto& a, const auto& b) { return a == b || *a == *b; };
  return same(vocab_.source, other.vocab_.source) &&
         same(vocab_.target, other.vocab_.target);
}

bool ToyTranslationModel::operator==(const ToyTranslationModel& o) const {
  return same_vocabularies(o) && theta_ == o.theta_;
}

EncodedPair ToyTranslationModel::encode(const SentencePair& pair) const {
  EncodedPair e;
  e.source.reserve(pair.source.size());
  e.target.reserve(pair.target.size());
  for (const auto& t : pair.source) e.source.push_back(vocab_.source->index(t));
  for (const auto& t : pair.target) e.target.push_back(vocab_.target->index(t));
  return e;
}

std::vector<EncodedPair> ToyTranslationModel::encode(
    std::span<const SentencePair> pairs) const {
  std::vector<EncodedPair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(encode(p));
  return out;
}

std::string ToyTranslationModel::serialize() const {
  std::string out(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kFormatVersion);
  put_vocab(out, *vocab_.source);
  put_vocab(out, *vocab_.target);
  put<std::uint64_t>(out, static_cast<std::uint64_t>(theta_.rows()));
  put<std::uint64_t>(out, static_cast<std::uint64_t>(theta_.cols()));
  out.append(reinterpret_cast<const char*>(theta_.data()),
             static_cast<std::size_t>(theta_.size()) * sizeof(double));
  return out;
}

ToyTranslationModel ToyTranslationModel::deserialize(std::string_view bytes) {
  Reader r(bytes);
  if (r.raw(sizeof kMagic) != std::string_view(kMagic, sizeof kMagic))
    throw DataError("not a toy translation model file");
  if (r.get<std::uint32_t>() != kFormatVersion)
    throw DataError("unsupported model file version");
  VocabularyPair vocab;
  vocab.source = get_vocab(r);
  vocab.target = get_vocab(r);
  const auto rows = r.get<std::uint64_t>();
  const auto cols = r.get<std::uint64_t>();
  Matrix theta(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  const auto raw = r.raw(rows * cols * sizeof(double));
  std::memcpy(theta.data(), raw.data(), raw.size());
  if (!r.done()) throw DataError("trailing bytes in model file");
  return {std::move(vocab), std::move(theta)};
}

void ToyTranslationModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  const auto bytes = serialize();
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

ToyTranslationModel ToyTranslationModel::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return deserialize(ss.str());
}

double log_likelihood(const ToyTranslationModel& model, const EncodedPair& pair) {
  Eigen::VectorXd h;
  pooled_logits(model.theta(), pair.source, h);
  const double lse = log_sum_exp(h);
  double ll = 0.0;
  for (int t : pair.target) ll += h[t] - lse;
  return ll;
}

double log_likelihood(const ToyTranslationModel& model, const SentencePair& pair) {
  return log_likelihood(model, model.encode(pair));
}

double accumulate_gradient(const Matrix& theta, const EncodedPair& pair,
                           double scale, Matrix& out) {
  Eigen::VectorXd h;
  pooled_logits(theta, pair.source, h);
  const double lse = log_sum_exp(h);
  double ll = 0.0;
  for (int t : pair.target) ll += h[t] - lse;
  if (scale == 0.0) return ll;
  // dLL/dh = counts(y) - |y| softmax(h)
  Eigen::VectorXd r = -static_cast<double>(pair.target.size()) * (h.array() - lse).exp();
  for (int t : pair.target) r[t] += 1.0;
  r *= scale / static_cast<double>(pair.source.size());
  for (int s : pair.source) out.row(s) += r.transpose();
  return ll;
}

GradientVector gradient(const ToyTranslationModel& model,
                        std::span<const SentencePair> pairs) {
  if (pairs.empty()) throw DataError("gradient of an empty pair list");
  GradientVector g{Matrix::Zero(model.theta().rows(), model.theta().cols())};
  for (const auto& p : pairs) accumulate_gradient(model.theta(), model.encode(p), 1.0, g.values);
  return g;
}

double ascent_step(ToyTranslationModel& model,
                   std::span<const EncodedPair* const> batch,
                   std::span<const double> scales, double lr) {
  if (scales.size() != batch.size()) throw UsageError("one scale per batch pair");
  const Matrix& theta = model.theta();
  // Residuals are computed against the pre-step theta, then applied.
  std::vector<Eigen::VectorXd> residuals(batch.size());
  double total_ll = 0.0;
  Eigen::VectorXd h;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& pair = *batch[i];
    pooled_logits(theta, pair.source, h);
    const double lse = log_sum_exp(h);
    for (int t : pair.target) total_ll += h[t] - lse;
    if (scales[i] == 0.0) continue;
    Eigen::VectorXd r = -static_cast<double>(pair.target.size()) * (h.array() - lse).exp();
    for (int t : pair.target) r[t] += 1.0;
    residuals[i] = r * (lr * scales[i] / static_cast<double>(pair.source.size()));
  }
  Matrix& out = model.mutable_theta();
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (residuals[i].size() == 0) continue;
    for (int s : batch[i]->source) out.row(s) += residuals[i].transpose();
  }
  return total_ll;
}

ToyTranslationModel finetune(const ToyTranslationModel& model,
                             std::span<const SentencePair> seed, double lr,
                             int steps) {
  if (!(lr > 0.0)) throw UsageError("fine-tuning rate must be > 0");
  if (steps < 0) throw UsageError("fine-tuning steps must be >= 0");
  ToyTranslationModel out = model;
  if (steps == 0) return out;
  if (seed.empty()) throw DataError("fine-tuning on an empty seed set");
  const auto encoded = model.encode(seed);
  Matrix g(out.theta().rows(), out.theta().cols());
  for (int step = 0; step < steps; ++step) {
    g.setZero();
    for (const auto& p : encoded) accumulate_gradient(out.theta(), p, 1.0, g);
    out.mutable_theta() += lr * g;
  }
  if (!out.theta().allFinite()) throw NumericalError("fine-tuning diverged");
  return out;
}

ToyTranslationModel finetune(const ToyTranslationModel& model,
                             const DomainSeedSet& seed, double lr, int steps) {
  return finetune(model, std::span<const SentencePair>(seed.pairs), lr, steps);
}

ToyTranslationModel build_domain_model(const ToyTranslationModel& base,
                                       std::span<const DomainSeedSet> seeds,
                                       double lr, int steps) {
  if (seeds.empty()) throw DataError("multi-domain feature needs at least one seed set");
  std::vector<SentencePair> all;
  for (const auto& s : seeds) all.insert(all.end(), s.pairs.begin(), s.pairs.end());
  return finetune(base, std::span<const SentencePair>(all), lr, steps);
}

double nmt_domain_feature(const SentencePair& pair,
                          const ToyTranslationModel& base,
                          const ToyTranslationModel& domain) {
  if (!base.same_vocabularies(domain))
    throw DataError("NMT feature models have different vocabularies");
  return (log_likelihood(domain, pair) - log_likelihood(base, pair)) /
         static_cast<double>(pair.target.size());
}

double multi_domain_feature(const SentencePair& pair,
                            const ToyTranslationModel& base,
                            std::span<const DomainSeedSet> seeds, double lr,
                            int steps) {
  return nmt_domain_feature(pair, base, build_domain_model(base, seeds, lr, steps));
}

TaylorCheck taylor_check(const SentencePair& pair,
                         const ToyTranslationModel& base,
                         std::span<const SentencePair> seed, double lr) {
  const auto adapted = finetune(base, seed, lr, 1);
  TaylorCheck out;
  out.lhs = log_likelihood(adapted, pair) - log_likelihood(base, pair);
  const SentencePair one[] = {pair};
  out.rhs = lr * gradient(base, one).dot(gradient(base, seed));
  out.abs_error = std::abs(out.lhs - out.rhs);
  return out;
}

double perplexity(const ToyTranslationModel& model,
                  std::span<const EncodedPair> eval) {
  if (eval.empty()) throw DataError("perplexity of an empty evaluation set");
  double ll = 0.0;
  double tokens = 0.0;
  for (const auto& p : eval) {
    ll += log_likelihood(model, p);
    tokens += static_cast<double>(p.target.size());
  }
  return std::exp(-ll / tokens);
}

double perplexity(const ToyTranslationModel& model,
                  std::span<const SentencePair> eval) {
  const auto encoded = model.encode(eval);
  return perplexity(model, std::span<const EncodedPair>(encoded));
}

}  // namespace mdc
