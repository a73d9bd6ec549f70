#include <algorithm>
#include <cmath>
#include <set>

#include "doctest.h"
#include "mdc/error.hpp"
#include "mdc/synthetic.hpp"
#include "test_util.hpp"

using namespace mdc;

namespace {

SyntheticConfig small() {
  SyntheticConfig c;
  c.pairs = 2000;
  c.seed_pairs = 30;
  c.validation_pairs = 50;
  c.monolingual = 80;
  return c;
}

}  // namespace

TEST_CASE("synthetic corpus shape") {
  const auto c = small();
  const auto d = generate_synthetic(c);
  REQUIRE(d.corpus.size() == 2000);
  REQUIRE(d.labels.size() == 2000);
  CHECK(d.domains == c.domains);

  std::size_t noisy = 0, per_domain[2] = {0, 0};
  std::set<std::int64_t> ids;
  for (std::size_t i = 0; i < d.corpus.size(); ++i) {
    ids.insert(d.corpus[i].id);
    const auto& p = d.corpus[i];
    CHECK(p.source.size() >= c.min_length);
    CHECK(p.source.size() <= c.max_length);
    CHECK_FALSE(p.target.empty());
    const auto& l = d.labels[i];
    if (l.noise) {
      ++noisy;
      CHECK(l.rating <= 1.0);
    } else {
      CHECK(l.rating >= 3.0);
    }
    if (l.domain >= 0) ++per_domain[l.domain];
  }
  CHECK(ids.size() == 2000);
  CHECK(noisy == 600);
  CHECK(per_domain[0] == 200);
  CHECK(per_domain[1] == 200);

  REQUIRE(d.seeds.size() == 2);
  CHECK(d.seeds[0].name == "news");
  CHECK(d.seeds[1].pairs.size() == 30);
  CHECK(d.validation[0].size() == 50);
  CHECK(d.monolingual[1].size() == 80);
}

TEST_CASE("synthetic corpus is seeded") {
  auto c = small();
  const auto a = generate_synthetic(c);
  const auto b = generate_synthetic(c);
  CHECK(a.corpus == b.corpus);
  CHECK(a.validation == b.validation);
  c.seed = 2;
  CHECK(generate_synthetic(c).corpus != a.corpus);
}

TEST_CASE("ambiguous words translate by domain") {
  const auto d = generate_synthetic(small());
  std::size_t in_domain = 0, general = 0;
  for (std::size_t i = 0; i < d.corpus.size(); ++i) {
    if (d.labels[i].noise) continue;
    for (const auto& w : d.corpus[i].target) {
      if (w.rfind("xamb", 0) != 0) continue;
      if (w.back() == 'd') ++in_domain;
      if (w.back() == 'g') CHECK(d.labels[i].domain < 0);
      if (w.back() == 'g') ++general;
    }
  }
  CHECK(in_domain > 0);
  CHECK(general > 0);
}

TEST_CASE("bad synthetic configs") {
  auto c = small();
  c.noise_ratio = 1.0;
  CHECK_THROWS_AS(generate_synthetic(c), UsageError);
  c = small();
  c.domain_fraction = 0.6;
  CHECK_THROWS_AS(generate_synthetic(c), UsageError);
  c = small();
  c.domains.clear();
  CHECK_THROWS_AS(generate_synthetic(c), UsageError);
}

TEST_CASE("written files read back") {
  testutil::TempDir dir("synthetic_io");
  const auto d = generate_synthetic(small());
  write_synthetic(d, dir.path());
  const auto corpus = ingest_parallel(dir / "corpus.tsv");
  CHECK(corpus.pairs() == d.corpus);
  CHECK(ingest_parallel(dir / "valid_ted.tsv").pairs() == d.validation[1]);
  CHECK(ingest_parallel(dir / "seed_news.tsv").pairs() == d.seeds[0].pairs);
  CHECK(read_monolingual(dir / "mono_news.txt") == d.monolingual[0]);
  const auto ratings = testutil::read_file(dir / "ratings.tsv");
  CHECK(std::count(ratings.begin(), ratings.end(), '\n') == 2000);
  testutil::write_file(dir / "empty.txt", "\n \n");
  CHECK_THROWS_AS(read_monolingual(dir / "empty.txt"), DataError);
  CHECK_THROWS_AS(read_monolingual(dir / "nope.txt"), DataError);
}
