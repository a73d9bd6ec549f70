#include "mdc/features.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "json.hpp"

#include "mdc/error.hpp"
#include "mdc/random.hpp"

namespace mdc {

namespace {

constexpr char kSep = '\x1f';
constexpr int kFormatVersion = 1;

std::string context_key(std::span<const std::string> history, int n) {
  std::string key;
  const std::size_t len = static_cast<std::size_t>(n - 1);
  for (std::size_t i = history.size() - len; i < history.size(); ++i) {
    if (i != history.size() - len) key += kSep;
    key += history[i];
  }
  return key;
}

std::vector<std::string> split_key(const std::string& key) {
  std::vector<std::string> out;
  if (key.empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto pos = key.find(kSep, start);
    out.push_back(key.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

std::vector<std::string> padded(const Tokens& x, int order) {
  std::vector<std::string> out(static_cast<std::size_t>(order - 1),
                               std::string(NGramLM::kStart));
  out.insert(out.end(), x.begin(), x.end());
  out.emplace_back(NGramLM::kEnd);
  return out;
}

NGramConfig validated(NGramConfig config) {
  if (config.order < 1) throw UsageError("n-gram order must be >= 1");
  if (!(config.add_k >= 0.0) || !std::isfinite(config.add_k))
    throw UsageError("add-k must be finite and >= 0");
  if (config.interpolation.empty()) {
    config.interpolation.assign(static_cast<std::size_t>(config.order),
                                1.0 / config.order);
  }
  if (config.interpolation.size() != static_cast<std::size_t>(config.order))
    throw UsageError("need one interpolation weight per order");
  double total = 0.0;
  for (double w : config.interpolation) {
    if (!(w >= 0.0)) throw UsageError("interpolation weights must be >= 0");
    total += w;
  }
  if (!(total > 0.0)) throw UsageError("interpolation weights sum to zero");
  for (double& w : config.interpolation) w /= total;
  return config;
}

double mean_log(const std::vector<double>& probs) {
  double s = 0.0;
  for (double p : probs) s += std::log(p);
  return s / static_cast<double>(probs.size());
}

}  // namespace

NGramLM train_ngram_lm(const std::vector<Tokens>& sentences,
                       const NGramConfig& config) {
  if (sentences.empty()) throw DataError("cannot train an LM on no sentences");
  NGramLM lm;
  lm.config_ = validated(config);
  const int order = lm.config_.order;
  lm.tables_.assign(static_cast<std::size_t>(order), {});
  lm.vocab_.insert(std::string(NGramLM::kEnd));
  for (const auto& s : sentences) {
    for (const auto& tok : s) lm.vocab_.insert(tok);
    const auto p = padded(s, order);
    std::span<const std::string> all(p);
    for (std::size_t i = static_cast<std::size_t>(order - 1); i < p.size(); ++i) {
      const auto history = all.first(i);
      for (int n = 1; n <= order; ++n) {
        auto& cc = lm.tables_[static_cast<std::size_t>(n - 1)][context_key(history, n)];
        ++cc.total;
        ++cc.next[p[i]];
      }
    }
  }
  return lm;
}

std::vector<std::string> NGramLM::vocabulary() const {
  std::vector<std::string> v(vocab_.begin(), vocab_.end());
  std::sort(v.begin(), v.end());
  return v;
}

double NGramLM::order_prob(int n, std::span<const std::string> history,
                           const std::string& word, bool known) const {
  const double outcomes = static_cast<double>(outcome_count());
  const auto& table = tables_[static_cast<std::size_t>(n - 1)];
  auto it = table.find(context_key(history, n));
  if (it == table.end() || it->second.total == 0) return 1.0 / outcomes;
  const auto& cc = it->second;
  double c = 0.0;
  if (known) {
    auto w = cc.next.find(word);
    if (w != cc.next.end()) c = static_cast<double>(w->second);
  }
  const double k = config_.add_k;
  return (c + k) / (static_cast<double>(cc.total) + k * outcomes);
}

double NGramLM::prob(std::span<const std::string> history,
                     const std::string& word) const {
  const auto order = config_.order;
  if (history.size() < static_cast<std::size_t>(order - 1))
    throw DataError("history shorter than order - 1; pad with <s>");
  const bool known = in_vocab(word);
  double p = 0.0;
  for (int n = 1; n <= order; ++n)
    p += config_.interpolation[static_cast<std::size_t>(n - 1)] *
         order_prob(n, history, word, known);
  return p;
}

std::vector<double> NGramLM::token_probs(const Tokens& x) const {
  const auto p = padded(x, config_.order);
  std::span<const std::string> all(p);
  std::vector<double> out;
  out.reserve(x.size() + 1);
  for (std::size_t i = static_cast<std::size_t>(config_.order - 1); i < p.size(); ++i)
    out.push_back(prob(all.first(i), p[i]));
  return out;
}

std::uint64_t NGramLM::context_count(std::span<const std::string> context) const {
  const int n = static_cast<int>(context.size()) + 1;
  if (n > config_.order) throw DataError("context longer than order - 1");
  const auto& table = tables_[static_cast<std::size_t>(n - 1)];
  auto it = table.find(context_key(context, n));
  return it == table.end() ? 0 : it->second.total;
}

std::vector<std::vector<std::string>> NGramLM::contexts(int ngram_order) const {
  if (ngram_order < 1 || ngram_order > config_.order)
    throw DataError("n-gram order out of range");
  std::vector<std::string> keys;
  for (const auto& [key, cc] : tables_[static_cast<std::size_t>(ngram_order - 1)])
    keys.push_back(key);
  std::sort(keys.begin(), keys.end());
  std::vector<std::vector<std::string>> out;
  out.reserve(keys.size());
  for (const auto& k : keys) out.push_back(split_key(k));
  return out;
}

std::string NGramLM::serialize() const {
  nlohmann::json j;
  j["format"] = "mdc-ngram-lm";
  j["version"] = kFormatVersion;
  j["order"] = config_.order;
  j["add_k"] = config_.add_k;
  j["interpolation"] = config_.interpolation;
  j["vocab"] = vocabulary();
  auto tables = nlohmann::json::array();
  for (const auto& table : tables_) {
    auto jt = nlohmann::json::array();
    std::map<std::string, const ContextCounts*> sorted;
    for (const auto& [key, cc] : table) sorted.emplace(key, &cc);
    for (const auto& [key, cc] : sorted) {
      std::map<std::string, std::uint64_t> next(cc->next.begin(), cc->next.end());
      jt.push_back({{"context", split_key(key)}, {"total", cc->total}, {"next", next}});
    }
    tables.push_back(std::move(jt));
  }
  j["tables"] = std::move(tables);
  return j.dump();
}

NGramLM NGramLM::deserialize(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("invalid LM file: ") + e.what());
  }
  if (j.value("format", "") != "mdc-ngram-lm" || j.value("version", 0) != kFormatVersion)
    throw DataError("unsupported LM file format or version");
  NGramLM lm;
  try {
    NGramConfig cfg;
    cfg.order = j.at("order").get<int>();
    cfg.add_k = j.at("add_k").get<double>();
    cfg.interpolation = j.at("interpolation").get<std::vector<double>>();
    lm.config_ = validated(cfg);
    for (const auto& tok : j.at("vocab")) lm.vocab_.insert(tok.get<std::string>());
    const auto& tables = j.at("tables");
    if (tables.size() != static_cast<std::size_t>(lm.config_.order))
      throw DataError("LM file has wrong number of tables");
    int n = 1;
    for (const auto& jt : tables) {
      Table table;
      for (const auto& entry : jt) {
        const auto ctx = entry.at("context").get<std::vector<std::string>>();
        if (ctx.size() != static_cast<std::size_t>(n - 1))
          throw DataError("LM context length does not match its order");
        ContextCounts cc;
        cc.total = entry.at("total").get<std::uint64_t>();
        std::uint64_t sum = 0;
        for (const auto& [w, c] : entry.at("next").items()) {
          cc.next.emplace(w, c.get<std::uint64_t>());
          sum += c.get<std::uint64_t>();
        }
        if (sum != cc.total) throw DataError("LM context count != continuation sum");
        table.emplace(context_key(ctx, n), std::move(cc));
      }
      lm.tables_.push_back(std::move(table));
      ++n;
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed LM file: ") + e.what());
  }
  return lm;
}

void NGramLM::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << serialize();
}

NGramLM NGramLM::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return deserialize(ss.str());
}

double avg_logprob(const NGramLM& lm, const Tokens& x) {
  return mean_log(lm.token_probs(x));
}

DomainLM::DomainLM(std::shared_ptr<const NGramLM> base,
                   std::shared_ptr<const NGramLM> domain_only, double mu)
    : base_(std::move(base)), domain_(std::move(domain_only)), mu_(mu) {
  if (!base_ || !domain_) throw UsageError("DomainLM needs two models");
  if (!(mu_ >= 0.0 && mu_ <= 1.0)) throw UsageError("mu must be in [0, 1]");
}

std::vector<double> DomainLM::token_probs(const Tokens& x) const {
  auto p = base_->token_probs(x);
  const auto q = domain_->token_probs(x);
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = mu_ * q[i] + (1.0 - mu_) * p[i];
  return p;
}

DomainLM adapt_lm(std::shared_ptr<const NGramLM> base,
                  const std::vector<Tokens>& domain_sentences, double mu) {
  auto domain = std::make_shared<const NGramLM>(
      train_ngram_lm(domain_sentences, base->config()));
  return DomainLM(std::move(base), std::move(domain), mu);
}

double avg_logprob(const DomainLM& lm, const Tokens& x) {
  return mean_log(lm.token_probs(x));
}

double HashedSentVec::norm() const {
  double s = 0.0;
  for (const auto& [b, v] : entries) s += v * v;
  return std::sqrt(s);
}

HashedSentVec HashedSentVec::scaled(double factor) const {
  HashedSentVec out = *this;
  for (auto& [b, v] : out.entries) v *= factor;
  return out;
}

HashedSentVec hashed_sentence_vector(std::string_view text, std::size_t buckets) {
  if (buckets == 0 || buckets > UINT32_MAX) throw UsageError("bad bucket count");
  std::string s = " ";
  s += text;
  s += ' ';
  // code point start offsets, plus end sentinel
  std::vector<std::size_t> starts;
  for (std::size_t i = 0; i < s.size(); ++i)
    if ((static_cast<unsigned char>(s[i]) & 0xC0) != 0x80) starts.push_back(i);
  starts.push_back(s.size());
  const std::size_t chars = starts.size() - 1;

  std::map<std::uint32_t, double> acc;
  for (std::size_t n = 3; n <= 6; ++n) {
    for (std::size_t i = 0; i + n <= chars; ++i) {
      const std::string_view gram(s.data() + starts[i], starts[i + n] - starts[i]);
      acc[static_cast<std::uint32_t>(fnv1a64(gram) % buckets)] += 1.0;
    }
  }
  HashedSentVec v;
  v.buckets = buckets;
  v.entries.assign(acc.begin(), acc.end());
  return v;
}

double cosine(const HashedSentVec& a, const HashedSentVec& b) {
  if (a.buckets != b.buckets) throw DataError("cosine of vectors with different bucket counts");
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  double dot = 0.0;
  auto i = a.entries.begin();
  auto j = b.entries.begin();
  while (i != a.entries.end() && j != b.entries.end()) {
    if (i->first < j->first) {
      ++i;
    } else if (j->first < i->first) {
      ++j;
    } else {
      dot += i->second * j->second;
      ++i;
      ++j;
    }
  }
  return std::clamp(dot / (na * nb), -1.0, 1.0);
}

double embedding_similarity_feature(const SentencePair& pair, std::size_t buckets) {
  return cosine(hashed_sentence_vector(join_tokens(pair.source), buckets),
                hashed_sentence_vector(join_tokens(pair.target), buckets));
}

}  // namespace mdc
