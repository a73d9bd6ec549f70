#include <cmath>
#include <memory>

#include "doctest.h"
#include "mdc/error.hpp"
#include "mdc/features.hpp"
#include "mdc/synthetic.hpp"
#include "test_util.hpp"

using namespace mdc;

namespace {

std::vector<Tokens> random_sentences(Rng& rng, std::size_t n, std::size_t vocab) {
  std::vector<Tokens> out;
  for (std::size_t i = 0; i < n; ++i) {
    Tokens s;
    const auto len = 1 + uniform_index(rng, 6);
    for (std::size_t k = 0; k < len; ++k) s.push_back("w" + std::to_string(uniform_index(rng, vocab)));
    out.push_back(std::move(s));
  }
  return out;
}

// Sum of P(w | h) over the vocabulary plus the UNK class.
double total_mass(const NGramLM& lm, std::span<const std::string> history) {
  double s = lm.prob(history, "\x01never-seen");
  for (const auto& w : lm.vocabulary()) s += lm.prob(history, w);
  return s;
}

}  // namespace

TEST_CASE("unigram counts with the end symbol") {
  const auto lm = train_ngram_lm({{"a", "a", "b"}}, {1, 0.0, {}});
  const std::vector<std::string> none;
  CHECK(lm.prob(none, "a") == doctest::Approx(2.0 / 4.0).epsilon(1e-15));
  CHECK(lm.prob(none, "b") == doctest::Approx(1.0 / 4.0).epsilon(1e-15));
  CHECK(lm.prob(none, "</s>") == doctest::Approx(1.0 / 4.0).epsilon(1e-15));
  const double expect = (std::log(2.0 / 4) + std::log(1.0 / 4) + std::log(1.0 / 4)) / 3.0;
  CHECK(avg_logprob(lm, {"a", "b"}) == doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("uniform unigram scores log(1/4)") {
  const auto lm = train_ngram_lm({{"a", "b", "c"}}, {1, 0.0, {}});
  CHECK(lm.vocabulary().size() == 4);
  CHECK(avg_logprob(lm, {"c", "a"}) == doctest::Approx(std::log(0.25)).epsilon(1e-14));
  CHECK(avg_logprob(lm, {"b"}) == doctest::Approx(std::log(0.25)).epsilon(1e-14));
}

TEST_CASE("continuation distributions sum to one for every context") {
  Rng rng(17);
  for (int order = 1; order <= 3; ++order) {
    for (int trial = 0; trial < 5; ++trial) {
      const auto sentences = random_sentences(rng, 30, 8);
      const auto lm = train_ngram_lm(sentences, {order, 0.1, {}});
      for (int n = 1; n <= order; ++n) {
        for (const auto& ctx : lm.contexts(n)) {
          // pad the context out to order-1 with <s> on the left
          std::vector<std::string> h(static_cast<std::size_t>(order - 1 - static_cast<int>(ctx.size())),
                                     "<s>");
          h.insert(h.end(), ctx.begin(), ctx.end());
          CHECK(std::abs(total_mass(lm, h) - 1.0) < 1e-9);
        }
      }
      // an unseen history as well
      std::vector<std::string> h(static_cast<std::size_t>(order - 1), "zzz");
      CHECK(std::abs(total_mass(lm, h) - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("context counts equal the sum of continuation counts") {
  Rng rng(2);
  const auto sentences = random_sentences(rng, 40, 5);
  const auto lm = train_ngram_lm(sentences, {2, 0.1, {}});
  std::uint64_t tokens = 0;
  for (const auto& s : sentences) tokens += s.size() + 1;
  CHECK(lm.context_count(std::span<const std::string>()) == tokens);
  // every serialized table passes the same consistency check on load
  CHECK_NOTHROW(NGramLM::deserialize(lm.serialize()));
}

TEST_CASE("training is deterministic and serialization round trips") {
  Rng rng(4);
  const auto sentences = random_sentences(rng, 50, 10);
  const auto a = train_ngram_lm(sentences);
  const auto b = train_ngram_lm(sentences);
  CHECK(a.serialize() == b.serialize());
  const auto c = NGramLM::deserialize(a.serialize());
  CHECK(c.serialize() == a.serialize());
  for (const auto& s : sentences) CHECK(avg_logprob(c, s) == avg_logprob(a, s));
  CHECK_THROWS_AS(NGramLM::deserialize("{\"format\": \"other\"}"), DataError);
  CHECK_THROWS_AS(train_ngram_lm({}), DataError);
}

TEST_CASE("avg_logprob is never positive and finite for unknown words") {
  Rng rng(8);
  const auto lm = train_ngram_lm(random_sentences(rng, 20, 6));
  for (const auto& s : random_sentences(rng, 50, 12)) CHECK(avg_logprob(lm, s) <= 0.0);
  const double unk = avg_logprob(lm, {"q1", "q2", "q3"});
  CHECK(std::isfinite(unk));
}

TEST_CASE("domain feature identity and antisymmetry") {
  Rng rng(9);
  const auto base = train_ngram_lm(random_sentences(rng, 40, 8));
  const auto other = train_ngram_lm(random_sentences(rng, 40, 8));
  for (const auto& x : random_sentences(rng, 20, 10)) {
    CHECK(nlm_domain_feature(x, base, base) == 0.0);
    CHECK(nlm_domain_feature(x, base, other) == -nlm_domain_feature(x, other, base));
  }
  auto shared_base = std::make_shared<const NGramLM>(base);
  const auto same = adapt_lm(shared_base, random_sentences(rng, 10, 8), 0.0);
  for (const auto& x : random_sentences(rng, 20, 10))
    CHECK(nlm_domain_feature(x, base, same) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("domain feature is positive on in-domain text") {
  SyntheticConfig sc;
  sc.pairs = 4000;
  sc.validation_pairs = 1000;
  sc.monolingual = 1000;
  const auto data = generate_synthetic(sc);
  std::vector<Tokens> general;
  for (std::size_t i = 0; i < data.corpus.size(); ++i)
    if (data.labels[i].domain < 0) general.push_back(data.corpus[i].source);
  auto base = std::make_shared<const NGramLM>(train_ngram_lm(general));
  const auto domain = adapt_lm(base, data.monolingual[0]);
  double mean = 0.0;
  for (const auto& p : data.validation[0]) mean += nlm_domain_feature(p.source, *base, domain);
  mean /= static_cast<double>(data.validation[0].size());
  CHECK(mean > 0.0);
}

TEST_CASE("identically augmented corpora reproduce the feature") {
  Rng rng(21);
  auto base_text = random_sentences(rng, 30, 8);
  auto dom_text = random_sentences(rng, 15, 8);
  const auto extra = random_sentences(rng, 5, 8);
  auto build = [&](std::vector<Tokens> b, std::vector<Tokens> d) {
    for (const auto& e : extra) {
      b.push_back(e);
      d.push_back(e);
    }
    auto base = std::make_shared<const NGramLM>(train_ngram_lm(b));
    return std::make_pair(base, adapt_lm(base, d));
  };
  const auto [b1, d1] = build(base_text, dom_text);
  const auto [b2, d2] = build(base_text, dom_text);
  for (const auto& x : random_sentences(rng, 20, 9))
    CHECK(std::abs(nlm_domain_feature(x, *b1, d1) - nlm_domain_feature(x, *b2, d2)) < 1e-9);
}

TEST_CASE("hashed cosine") {
  CHECK(embedding_similarity_feature({0, {"the", "cat"}, {"the", "cat"}}) ==
        doctest::Approx(1.0).epsilon(1e-12));
  CHECK(embedding_similarity_feature({0, {"abc"}, {"xyz"}}) == 0.0);

  const SentencePair p{0, {"curriculum", "learning", "for", "translation"},
                       {"curricula", "learned", "in", "translations"}};
  const double big = embedding_similarity_feature(p, 200000);
  const double small = embedding_similarity_feature(p, 50021);
  CHECK(std::abs(big - small) < 0.05);
  CHECK(big > 0.0);
  CHECK(big <= 1.0);

  const SentencePair q{0, p.target, p.source};
  CHECK(embedding_similarity_feature(q) == embedding_similarity_feature(p));

  const auto a = hashed_sentence_vector("multi domain data");
  const auto b = hashed_sentence_vector("domain data selection");
  CHECK(std::abs(cosine(a.scaled(2.0), b) - cosine(a, b)) < 1e-6);
  CHECK(a.norm() > 0.0);
}

TEST_CASE("hashed vectors use code points, not bytes") {
  // Three code points, six bytes: exactly one 3-gram per padded window size.
  const auto v = hashed_sentence_vector("\xc3\xa9\xc3\xa9\xc3\xa9");
  double mass = 0.0;
  for (const auto& [bucket, count] : v.entries) mass += count;
  // " ééé " has 5 code points: 3 + 2 + 1 n-grams for n = 3, 4, 5.
  CHECK(mass == 6.0);
}
