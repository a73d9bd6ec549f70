#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "doctest.h"
#include "mdc/curriculum.hpp"
#include "mdc/error.hpp"
#include "test_util.hpp"

using namespace mdc;
using testutil::corpus_with_scores;

namespace {

std::vector<std::size_t> brute_top(const std::vector<double>& f, std::size_t k) {
  std::vector<std::size_t> rows(f.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  std::sort(rows.begin(), rows.end(), [&](std::size_t a, std::size_t b) {
    return f[a] != f[b] ? f[a] > f[b] : a > b;
  });
  rows.resize(k);
  std::sort(rows.begin(), rows.end());
  return rows;
}

// Corpus with one feature, a warm-start model and its encoding.
struct TrainFixture {
  ScoredCorpus corpus;
  ToyTranslationModel model;

  explicit TrainFixture(std::uint64_t seed, std::size_t n = 60)
      : corpus(make(seed, n)), model(ToyTranslationModel::zeros(build_vocabularies(corpus.pairs()))) {}

  static ScoredCorpus make(std::uint64_t seed, std::size_t n) {
    Rng rng(seed);
    ScoredCorpus c(testutil::random_pairs(rng, n));
    std::vector<double> f(n);
    for (auto& x : f) x = uniform_real(rng, -1, 1);
    c.add_feature("f", f);
    score_and_normalize(c, WeightVector{{"f"}, {1.0}});
    return c;
  }
};

}  // namespace

TEST_CASE("rho exact points") {
  Schedule s{300.0, 0.1, 50, 1000};
  CHECK(rho(s, 0) == 1.0);
  CHECK(rho(s, 49) == 1.0);
  CHECK(rho(s, 50) == 1.0);
  CHECK(std::abs(rho(s, 350) - 0.5) <= 1e-12);
  CHECK_THROWS_AS(rho(s, -1), UsageError);
}

TEST_CASE("plateau at 20% from step 2000") {
  const auto s = Schedule::plateau_after(2000, 0.2, 0, 4000);
  CHECK(s.halving == doctest::Approx(2000.0 * std::log(2.0) / std::log(5.0)).epsilon(1e-15));
  CHECK(s.halving == doctest::Approx(861.35).epsilon(1e-5));
  for (std::int64_t t = 2000; t <= 4000; ++t) CHECK(std::abs(rho(s, t) - 0.2) <= 1e-12);
  CHECK(rho(s, 1999) > 0.2);
}

TEST_CASE("rho is monotone and bounded") {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    Schedule s{uniform_real(rng, 1, 500), uniform_real(rng, 0.01, 1.0),
               static_cast<std::int64_t>(uniform_index(rng, 100)), 1000};
    double prev = 1.0;
    for (std::int64_t t = 0; t < 1000; ++t) {
      const double r = rho(s, t);
      CHECK(r <= prev);
      CHECK(r >= s.floor);
      CHECK(r <= 1.0);
      prev = r;
    }
  }
}

TEST_CASE("selection matches brute force") {
  SUBCASE("rho 1 keeps everything") {
    const auto c = corpus_with_scores({3, 1, 2, 5});
    CHECK(select_ratio(c, 1.0).selected == 4);
    CHECK(selected_rows(select_ratio(c, 1.0), c).size() == 4);
  }
  SUBCASE("n = 10, rho = 0.2") {
    const std::vector<double> f{0.3, 0.9, 0.1, 0.9, 0.5, 0.2, 0.8, 0.7, 0.4, 0.6};
    const auto c = corpus_with_scores(f);
    CHECK(selected_rows(select_ratio(c, 0.2), c) == brute_top(f, 2));
  }
  SUBCASE("never empty") {
    const auto c = corpus_with_scores({1, 2, 3});
    const auto st = select(c, Schedule{10.0, 0.2, 0, 100}, 100);
    CHECK(st.rho == 0.2);
    CHECK(st.selected == 1);
    CHECK(selected_count(1e-9, 3) == 1);
  }
  SUBCASE("random corpora") {
    Rng rng(2);
    for (int trial = 0; trial < 200; ++trial) {
      const std::size_t n = 1 + uniform_index(rng, 200);
      std::vector<double> f(n);
      for (auto& x : f) x = static_cast<double>(uniform_index(rng, 20));
      const auto c = corpus_with_scores(f);
      const double r = uniform_real(rng, 0.01, 1.0);
      const auto st = select_ratio(c, r);
      const auto k = static_cast<std::size_t>(std::max(1.0, std::ceil(r * static_cast<double>(n) - 1e-9)));
      CHECK(st.selected == k);
      CHECK(selected_rows(st, c) == brute_top(f, k));
    }
  }
}

TEST_CASE("weights form a pmf with zeros on filtered pairs") {
  const auto c = corpus_with_scores({3, 2, 1});
  const auto st = select_ratio(c, 2.0 / 3.0);
  CHECK(weights(st, c) == std::vector<double>{0.5, 0.5, 0.0});
  const auto all = weights(select_ratio(c, 1.0), c);
  for (double w : all) CHECK(w == doctest::Approx(1.0 / 3.0));

  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> f(1 + uniform_index(rng, 50));
    for (auto& x : f) x = uniform_unit(rng);
    const auto d = corpus_with_scores(f);
    const auto s = select_ratio(d, uniform_unit(rng));
    const auto w = weights(s, d);
    CHECK(std::accumulate(w.begin(), w.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
    for (std::size_t r = 0; r < w.size(); ++r) CHECK((w[r] == 0.0) == !s.contains(d, r));
  }
}

TEST_CASE("selected sets are nested and their mean f grows") {
  Rng rng(4);
  std::vector<double> f(150);
  for (auto& x : f) x = uniform_real(rng, -5, 5);
  const auto c = corpus_with_scores(f);
  const Schedule s{40.0, 0.05, 20, 400};
  std::vector<std::size_t> prev = selected_rows(select(c, s, s.warmup), c);
  double prev_mean = -1e300;
  for (std::int64_t t = s.warmup; t <= s.max_steps; t += 7) {
    const auto rows = selected_rows(select(c, s, t), c);
    CHECK(std::includes(prev.begin(), prev.end(), rows.begin(), rows.end()));
    double m = 0.0;
    for (auto r : rows) m += f[r];
    m /= static_cast<double>(rows.size());
    CHECK(m >= prev_mean - 1e-12);
    prev_mean = m;
    prev = rows;
  }
}

TEST_CASE("batch sampling") {
  SUBCASE("single selected pair repeats") {
    const auto c = corpus_with_scores({1, 2, 3, 4});
    const auto st = select_ratio(c, 0.25);
    Rng rng(5);
    for (auto r : sample_batch(st, c, 20, rng)) CHECK(r == 3);
  }
  SUBCASE("uniform within 3 sigma") {
    std::vector<double> f(40);
    std::iota(f.begin(), f.end(), 0.0);
    const auto c = corpus_with_scores(f);
    const auto st = select_ratio(c, 0.25);  // rows 30..39
    Rng rng(6);
    const std::size_t draws = 100000;
    std::vector<std::size_t> counts(40, 0);
    for (auto r : sample_batch(st, c, draws, rng)) ++counts[r];
    const double p = 0.1;
    const double sigma = std::sqrt(static_cast<double>(draws) * p * (1 - p));
    for (std::size_t r = 0; r < 40; ++r) {
      if (r < 30) {
        CHECK(counts[r] == 0);
      } else {
        CHECK(std::abs(static_cast<double>(counts[r]) - static_cast<double>(draws) * p) <= 3 * sigma);
      }
    }
  }
  SUBCASE("same seed, same batches; feeder agrees") {
    TrainFixture fx(7);
    const Schedule s{50.0, 0.1, 10, 300};
    Rng a(9), b(9);
    DataFeeder feeder(fx.corpus);
    for (std::int64_t t = 1; t <= 300; t += 13) {
      const auto st = select(fx.corpus, s, t);
      const auto batch = sample_batch(st, fx.corpus, 8, a);
      const auto& fs = feeder.advance(s, t);
      CHECK(fs.selected == st.selected);
      for (auto r : batch) CHECK(feeder.draw(b) == r);
    }
  }
}

TEST_CASE("constant schedule reproduces plain uniform training") {
  TrainFixture fx(11);
  const TrainerConfig trainer{0.5, 4};
  const auto run = run_curriculum(fx.corpus, Schedule::constant(200), fx.model, trainer, 42);

  auto model = fx.model;
  const auto encoded = model.encode(fx.corpus.pairs());
  Rng rng(42);
  std::vector<const EncodedPair*> batch(4);
  const std::vector<double> scales(4, 0.25);
  for (int t = 1; t <= 200; ++t) {
    for (auto& b : batch) b = &encoded[uniform_index(rng, encoded.size())];
    ascent_step(model, batch, scales, 0.5);
  }
  CHECK(run.model.theta() == model.theta());
}

TEST_CASE("curriculum runs are reproducible and logged") {
  TrainFixture fx(12);
  const Schedule s{30.0, 0.2, 25, 250};
  const TrainerConfig trainer{0.5, 8};
  const auto a = run_curriculum(fx.corpus, s, fx.model, trainer, 3);
  const auto b = run_curriculum(fx.corpus, s, fx.model, trainer, 3);
  CHECK(a.model == b.model);
  CHECK(a.log == b.log);
  REQUIRE(a.log.size() == 250);
  for (std::size_t i = 1; i < a.log.size(); ++i)
    if (a.log[i - 1].t >= s.warmup) CHECK(a.log[i].n_selected <= a.log[i - 1].n_selected);
}

TEST_CASE("batch mean f trends upward") {
  TrainFixture fx(13, 400);
  const auto s = Schedule::plateau_after(1500, 0.2, 0, 2000);
  const auto run = run_curriculum(fx.corpus, s, fx.model, {0.5, 8}, 5);
  double mt = 0, mf = 0;
  for (const auto& l : run.log) {
    mt += static_cast<double>(l.t);
    mf += l.batch_mean_f;
  }
  mt /= static_cast<double>(run.log.size());
  mf /= static_cast<double>(run.log.size());
  double sxy = 0, sxx = 0;
  for (const auto& l : run.log) {
    sxy += (static_cast<double>(l.t) - mt) * (l.batch_mean_f - mf);
    sxx += (static_cast<double>(l.t) - mt) * (static_cast<double>(l.t) - mt);
  }
  CHECK(sxy / sxx >= 0.0);
}

TEST_CASE("loss weighting") {
  CHECK(loss_weights(std::vector<double>{2, 4, 3}) == std::vector<double>{0.0, 1.0, 0.5});
  CHECK(loss_weights(std::vector<double>{7, 7}) == std::vector<double>{1.0, 1.0});

  SUBCASE("flat scores equal unweighted training") {
    TrainFixture fx(14);
    ScoredCorpus flat = fx.corpus;
    flat.set_scores(std::vector<double>(flat.size(), 1.0));
    percentile_normalize(flat);
    const WeightVector zero{{"f"}, {0.0}};
    const auto lw = run_loss_weighted(fx.corpus, zero, fx.model, {0.5, 4}, 8, 150);
    const auto plain = run_curriculum(flat, Schedule::constant(150), fx.model, {0.5, 4}, 8);
    CHECK(lw.model.theta() == plain.model.theta());
  }
  SUBCASE("zero-weight pairs leave their parameters untouched") {
    std::vector<SentencePair> pairs{{0, {"a"}, {"x"}}, {1, {"b"}, {"y"}}};
    ScoredCorpus c(pairs);
    c.add_feature("f", std::vector<double>{0.0, 1.0});
    const auto m = ToyTranslationModel::zeros(build_vocabularies(pairs));
    const auto run = run_loss_weighted(c, WeightVector{{"f"}, {1.0}}, m, {1.0, 4}, 1, 50);
    const int a = m.source_vocab().index("a");
    const int b = m.source_vocab().index("b");
    CHECK(run.model.theta().row(a).cwiseAbs().maxCoeff() == 0.0);
    CHECK(run.model.theta().row(b).cwiseAbs().maxCoeff() > 0.0);
  }
}

TEST_CASE("run log round trip") {
  testutil::TempDir dir("runlog");
  TrainFixture fx(15);
  const auto run = run_curriculum(fx.corpus, Schedule{20.0, 0.3, 5, 60}, fx.model, {0.5, 4}, 1);
  write_run_log(dir / "log.tsv", run.log);
  CHECK(read_run_log(dir / "log.tsv") == run.log);
  CHECK(testutil::read_file(dir / "log.tsv").rfind("t\trho\tn_selected\tbatch_mean_f\ttrain_loss\n", 0) == 0);
}

TEST_CASE("dynamic balance report") {
  Rng rng(16);
  std::vector<SentencePair> pairs;
  for (int i = 0; i < 50; ++i) pairs.push_back({i, {"a"}, {"b"}});
  ScoredCorpus c(pairs);
  std::vector<double> x(50), y(50), ratings(50);
  for (int i = 0; i < 50; ++i) {
    x[static_cast<std::size_t>(i)] = uniform_real(rng, 0, 1);
    y[static_cast<std::size_t>(i)] = uniform_real(rng, -1, 1);
    ratings[static_cast<std::size_t>(i)] = static_cast<double>(uniform_index(rng, 5));
  }
  c.add_feature("x", x);
  c.add_feature("y", y);
  const WeightVector v{{"x", "y"}, {0.6, 0.3}};
  const std::vector<double> taus{0.0, 0.2, 0.5, 0.9, 1.0};
  const auto rep = dynamic_balance_report(c, v, taus, ratings);
  REQUIRE(rep.rows.size() == 5);
  CHECK(rep.rows[0].count == 50);
  CHECK(rep.rows[0].feature_means[0] ==
        doctest::Approx(std::accumulate(x.begin(), x.end(), 0.0) / 50).epsilon(1e-12));
  CHECK(*rep.rows[0].mean_rating ==
        doctest::Approx(std::accumulate(ratings.begin(), ratings.end(), 0.0) / 50).epsilon(1e-12));
  for (std::size_t i = 1; i + 1 < rep.rows.size(); ++i)
    CHECK(rep.rows[i].mean_f >= rep.rows[i - 1].mean_f);
  CHECK(rep.rows[4].empty());
  std::ostringstream out;
  write_balance_report(out, rep);
  CHECK(out.str().find("empty") != std::string::npos);
  CHECK(out.str().rfind("threshold\tcount\tmean_x\tmean_y\tmean_f\tmean_rating\n", 0) == 0);
}
