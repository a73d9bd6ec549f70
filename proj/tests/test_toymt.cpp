#include <cmath>
#include <numeric>

#include "doctest.h"
#include "mdc/error.hpp"
#include "mdc/synthetic.hpp"
#include "mdc/toymt.hpp"
#include "test_util.hpp"

using namespace mdc;

namespace {

ToyTranslationModel random_model(Rng& rng, const std::vector<SentencePair>& pairs,
                                 double scale = 1.0) {
  auto m = ToyTranslationModel::zeros(build_vocabularies(pairs));
  for (Eigen::Index i = 0; i < m.theta().size(); ++i)
    m.mutable_theta().data()[i] = uniform_real(rng, -scale, scale);
  return m;
}

double total_ll(const ToyTranslationModel& m, std::span<const SentencePair> pairs) {
  double s = 0.0;
  for (const auto& p : pairs) s += log_likelihood(m, p);
  return s;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

TEST_CASE("zero model is uniform over the target vocabulary") {
  Rng rng(1);
  const auto pairs = testutil::random_pairs(rng, 10);
  const auto m = ToyTranslationModel::zeros(build_vocabularies(pairs));
  const double t = static_cast<double>(m.target_vocab().size());
  for (const auto& p : pairs)
    CHECK(log_likelihood(m, p) ==
          doctest::Approx(static_cast<double>(p.target.size()) * std::log(1.0 / t)).epsilon(1e-14));
}

TEST_CASE("hand softmax on a 2x2 model") {
  const std::vector<SentencePair> pairs{{0, {"s0"}, {"t0"}}};
  const auto vocab = build_vocabularies(pairs);
  REQUIRE(vocab.source->size() == 2);  // <unk>, s0
  Matrix theta(2, 2);
  theta << 1, 0, 0, 1;
  const ToyTranslationModel m(vocab, theta);
  const double e = std::exp(1.0);
  CHECK(log_likelihood(m, pairs[0]) == doctest::Approx(std::log(e / (e + 1.0))).epsilon(1e-15));
}

TEST_CASE("log-likelihood is invariant to a constant shift") {
  Rng rng(2);
  const auto pairs = testutil::random_pairs(rng, 20);
  auto m = random_model(rng, pairs, 2.0);
  for (double c : {-10.0, -1.5, 3.0, 10.0}) {
    auto shifted = m;
    shifted.mutable_theta().array() += c;
    for (const auto& p : pairs)
      CHECK(std::abs(log_likelihood(shifted, p) - log_likelihood(m, p)) < 1e-12);
  }
}

TEST_CASE("gradient matches central differences") {
  Rng rng(3);
  for (int inst = 0; inst < 5; ++inst) {
    const auto pairs = testutil::random_pairs(rng, 6);
    auto m = random_model(rng, pairs);
    const auto g = gradient(m, pairs);
    const double eps = 1e-4;
    for (Eigen::Index i = 0; i < m.theta().size(); ++i) {
      auto plus = m, minus = m;
      plus.mutable_theta().data()[i] += eps;
      minus.mutable_theta().data()[i] -= eps;
      const double fd = (total_ll(plus, pairs) - total_ll(minus, pairs)) / (2 * eps);
      CHECK(std::abs(fd - g.values.data()[i]) < 1e-5);
    }
  }
}

TEST_CASE("gradient support and linearity") {
  Rng rng(4);
  const std::vector<SentencePair> pairs{{0, {"a", "b"}, {"x"}},
                                        {1, {"c"}, {"y", "x"}},
                                        {2, {"d"}, {"y"}}};
  auto m = random_model(rng, pairs);
  const auto g = gradient(m, std::span(pairs).first(1));
  for (int r = 0; r < static_cast<int>(m.source_vocab().size()); ++r) {
    const auto& tok = m.source_vocab().token(r);
    const bool used = tok == "a" || tok == "b";
    CHECK((g.values.row(r).cwiseAbs().sum() > 0.0) == used);
  }
  const auto all = gradient(m, pairs);
  Matrix sum = Matrix::Zero(m.theta().rows(), m.theta().cols());
  for (const auto& p : pairs) sum += gradient(m, std::span(&p, 1)).values;
  CHECK((all.values - sum).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_THROWS(gradient(m, std::span<const SentencePair>()));
}

TEST_CASE("finetune") {
  Rng rng(5);
  const auto pairs = testutil::random_pairs(rng, 50);
  const auto base = random_model(rng, pairs, 0.5);
  const auto copy = base;
  CHECK(finetune(base, pairs, 0.1, 0) == base);

  const auto one = finetune(base, pairs, 0.1, 1);
  const Matrix expect = base.theta() + 0.1 * gradient(base, pairs).values;
  CHECK(one.theta() == expect);
  CHECK(base == copy);

  const auto small = finetune(base, pairs, 1e-3, 1);
  CHECK(total_ll(small, pairs) > total_ll(base, pairs));
  CHECK_THROWS_AS(finetune(base, pairs, 0.0, 1), UsageError);
}

TEST_CASE("nmt domain feature") {
  Rng rng(6);
  const auto pairs = testutil::random_pairs(rng, 30);
  const auto base = random_model(rng, pairs, 0.5);
  for (const auto& p : pairs) CHECK(nmt_domain_feature(p, base, base) == 0.0);

  const std::vector<SentencePair> seed(pairs.begin(), pairs.begin() + 5);
  const auto domain = finetune(base, seed, 1e-2, 1);
  CHECK(nmt_domain_feature(pairs[0], base, domain) > 0.0);
  for (const auto& p : pairs)
    CHECK(nmt_domain_feature(p, base, domain) == -nmt_domain_feature(p, domain, base));

  const auto other = ToyTranslationModel::zeros(build_vocabularies(testutil::random_pairs(rng, 3, 2, 2)));
  CHECK_THROWS_AS(nmt_domain_feature(pairs[0], base, other), DataError);
}

TEST_CASE("multi-domain feature reductions") {
  Rng rng(7);
  const auto pairs = testutil::random_pairs(rng, 40);
  const auto base = random_model(rng, pairs, 0.5);
  const DomainSeedSet a{"a", {pairs.begin(), pairs.begin() + 10}};
  const std::vector<DomainSeedSet> single{a};
  const auto domain = finetune(base, a, 1e-2, 3);
  for (const auto& p : pairs)
    CHECK(multi_domain_feature(p, base, single, 1e-2, 3) == nmt_domain_feature(p, base, domain));

  const std::vector<DomainSeedSet> doubled{a, a};
  for (const auto& p : pairs)
    CHECK(std::abs(multi_domain_feature(p, base, doubled, 5e-3, 1) -
                   multi_domain_feature(p, base, single, 1e-2, 1)) < 1e-9);
  CHECK_THROWS(multi_domain_feature(pairs[0], base, std::span<const DomainSeedSet>(), 1e-2, 1));
}

TEST_CASE("multi-domain feature correlates with each per-domain feature") {
  SyntheticConfig sc;
  sc.pairs = 1000;
  sc.seed_pairs = 100;
  const auto data = generate_synthetic(sc);
  std::vector<const std::vector<SentencePair>*> sets{&data.corpus, &data.seeds[0].pairs,
                                                     &data.seeds[1].pairs};
  const auto base = ToyTranslationModel::zeros(build_vocabularies(sets));
  const auto m0 = finetune(base, data.seeds[0], 0.1, 10);
  const auto m1 = finetune(base, data.seeds[1], 0.1, 10);
  const auto mm = build_domain_model(base, data.seeds, 0.1, 10);
  std::vector<double> q0, q1, qm;
  for (const auto& p : data.corpus) {
    q0.push_back(nmt_domain_feature(p, base, m0));
    q1.push_back(nmt_domain_feature(p, base, m1));
    qm.push_back(nmt_domain_feature(p, base, mm));
  }
  CHECK(pearson(qm, q0) > 0.0);
  CHECK(pearson(qm, q1) > 0.0);
}

TEST_CASE("taylor check") {
  Rng rng(8);
  const auto pairs = testutil::random_pairs(rng, 30);
  const auto base = random_model(rng, pairs, 0.5);
  const std::vector<SentencePair> seed(pairs.begin() + 1, pairs.begin() + 11);

  SUBCASE("error decays quadratically") {
    double prev = taylor_check(pairs[0], base, seed, 1e-2).abs_error;
    for (double lr : {5e-3, 2.5e-3}) {
      const double err = taylor_check(pairs[0], base, seed, lr).abs_error;
      CHECK(err <= 0.35 * prev);
      prev = err;
    }
  }
  SUBCASE("log-log slope near two") {
    std::vector<double> xs, ys;
    for (double lr = 1e-2; lr > 1e-2 / 17; lr /= 2) {
      xs.push_back(std::log(lr));
      ys.push_back(std::log(taylor_check(pairs[0], base, seed, lr).abs_error));
    }
    const double n = static_cast<double>(xs.size());
    const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
    double sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      sxy += (xs[i] - mx) * (ys[i] - my);
      sxx += (xs[i] - mx) * (xs[i] - mx);
    }
    const double slope = sxy / sxx;
    CHECK(slope >= 1.7);
    CHECK(slope <= 2.3);
  }
  SUBCASE("disjoint source vocabulary gives exact zeros") {
    const std::vector<SentencePair> all{{0, {"a"}, {"x", "y"}}, {1, {"b", "c"}, {"y"}}};
    const auto m = random_model(rng, all);
    const auto tc = taylor_check(all[0], m, std::span(all).subspan(1), 1e-2);
    CHECK(tc.lhs == 0.0);
    CHECK(tc.rhs == 0.0);
  }
  SUBCASE("seed holding the pair itself") {
    const auto tc = taylor_check(pairs[0], base, std::span(pairs).first(1), 1e-3);
    const auto g = gradient(base, std::span(pairs).first(1));
    CHECK(tc.rhs == doctest::Approx(1e-3 * g.squared_norm()).epsilon(1e-12));
    CHECK(tc.rhs > 0.0);
    CHECK(tc.lhs > 0.0);
  }
}

TEST_CASE("perplexity") {
  std::vector<SentencePair> pairs;
  for (int i = 0; i < 6; ++i) pairs.push_back({i, {"s"}, {"t" + std::to_string(i)}});
  const auto m = ToyTranslationModel::zeros(build_vocabularies(pairs));
  REQUIRE(m.target_vocab().size() == 7);
  CHECK(perplexity(m, pairs) == doctest::Approx(7.0).epsilon(1e-13));

  Rng rng(9);
  const auto rp = testutil::random_pairs(rng, 20);
  const auto r = random_model(rng, rp, 3.0);
  CHECK(perplexity(r, rp) >= 1.0);

  const std::vector<SentencePair> one{rp[0]};
  const auto zero = ToyTranslationModel::zeros(r.vocabularies());
  const auto memorized = finetune(zero, one, 1.0, 200);
  CHECK(perplexity(memorized, one) < perplexity(zero, one));
  CHECK_THROWS(perplexity(zero, std::span<const SentencePair>()));
}

TEST_CASE("model serialization round trips") {
  Rng rng(10);
  const auto pairs = testutil::random_pairs(rng, 10);
  const auto m = random_model(rng, pairs);
  const auto bytes = m.serialize();
  const auto back = ToyTranslationModel::deserialize(bytes);
  CHECK(back == m);
  CHECK(back.serialize() == bytes);
  CHECK_THROWS_AS(ToyTranslationModel::deserialize("garbage"), DataError);
  CHECK_THROWS_AS(ToyTranslationModel::deserialize(bytes.substr(0, bytes.size() - 3)), DataError);
}
