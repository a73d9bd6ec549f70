#include "mdc/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "mdc/error.hpp"
#include "mdc/random.hpp"

namespace mdc {

namespace {

// Zipf(1) over a word class.
class WordClass {
 public:
  WordClass(std::string prefix, std::size_t size) : prefix_(std::move(prefix)) {
    double total = 0.0;
    for (std::size_t k = 0; k < size; ++k) {
      total += 1.0 / static_cast<double>(k + 1);
      cdf_.push_back(total);
    }
    for (auto& c : cdf_) c /= total;
  }

  std::size_t draw(Rng& rng) const {
    const double u = uniform_unit(rng);
    const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    return std::min<std::size_t>(static_cast<std::size_t>(it - cdf_.begin()),
                                 cdf_.size() - 1);
  }
  std::string word(std::size_t k) const { return prefix_ + std::to_string(k); }

 private:
  std::string prefix_;
  std::vector<double> cdf_;
};

class Generator {
 public:
  explicit Generator(const SyntheticConfig& c)
      : config_(c), general_("gen", c.general_words), ambiguous_("amb", c.ambiguous_words) {
    for (const auto& d : c.domains) domain_.emplace_back(d, c.domain_words);
  }

  // domain < 0 generates general text.
  SentencePair sentence(int domain, Rng& rng) const {
    const std::size_t span = config_.max_length - config_.min_length + 1;
    const std::size_t len = config_.min_length + uniform_index(rng, span);
    SentencePair p;
    for (std::size_t i = 0; i < len; ++i) {
      const double u = uniform_unit(rng);
      if (domain >= 0 && u < 0.5) {
        const auto& cls = domain_[static_cast<std::size_t>(domain)];
        const auto w = cls.word(cls.draw(rng));
        p.source.push_back(w);
        p.target.push_back("x" + w);
      } else if (u < (domain >= 0 ? 0.8 : 0.3)) {
        const auto w = ambiguous_.word(ambiguous_.draw(rng));
        p.source.push_back(w);
        p.target.push_back("x" + w + (domain >= 0 ? "d" : "g"));
      } else {
        const auto w = general_.word(general_.draw(rng));
        p.source.push_back(w);
        p.target.push_back("x" + w);
      }
    }
    return p;
  }

 private:
  const SyntheticConfig& config_;
  WordClass general_;
  WordClass ambiguous_;
  std::vector<WordClass> domain_;
};

std::vector<SentencePair> clean_set(const Generator& gen, int domain, std::size_t n,
                                    Rng& rng) {
  std::vector<SentencePair> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto p = gen.sentence(domain, rng);
    p.id = static_cast<std::int64_t>(i);
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace

SyntheticData generate_synthetic(const SyntheticConfig& config) {
  if (config.domains.empty()) throw UsageError("synthetic corpus needs a domain");
  if (config.pairs < 2) throw UsageError("synthetic corpus needs >= 2 pairs");
  if (config.min_length < 1 || config.max_length < config.min_length)
    throw UsageError("bad synthetic sentence lengths");
  if (!(config.noise_ratio >= 0.0 && config.noise_ratio < 1.0))
    throw UsageError("noise ratio must be in [0, 1)");
  const double domain_total = config.domain_fraction * static_cast<double>(config.domains.size());
  if (!(config.domain_fraction >= 0.0) || domain_total > 1.0)
    throw UsageError("domain fractions exceed the corpus");

  const Generator gen(config);
  SyntheticData data;
  data.domains = config.domains;
  const int n_domains = static_cast<int>(config.domains.size());

  // corpus composition, shuffled
  std::vector<int> origin;
  const auto per_domain = static_cast<std::size_t>(
      std::llround(config.domain_fraction * static_cast<double>(config.pairs)));
  for (int d = 0; d < n_domains; ++d) origin.insert(origin.end(), per_domain, d);
  origin.resize(config.pairs, -1);
  Rng mix_rng(derive_seed(config.seed, "synthetic-mix"));
  shuffle(origin, mix_rng);

  Rng text_rng(derive_seed(config.seed, "synthetic-corpus"));
  data.corpus.reserve(config.pairs);
  data.labels.reserve(config.pairs);
  for (std::size_t i = 0; i < config.pairs; ++i) {
    auto p = gen.sentence(origin[i], text_rng);
    p.id = static_cast<std::int64_t>(i);
    data.corpus.push_back(std::move(p));
    data.labels.push_back({origin[i], false, origin[i] >= 0 ? 4.0 : 3.0});
  }

  // noise: targets taken from another random pair
  Rng noise_rng(derive_seed(config.seed, "synthetic-noise"));
  std::vector<std::size_t> rows(config.pairs);
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  shuffle(rows, noise_rng);
  const auto n_noise = static_cast<std::size_t>(
      std::llround(config.noise_ratio * static_cast<double>(config.pairs)));
  std::vector<Tokens> clean_targets;
  clean_targets.reserve(config.pairs);
  for (const auto& p : data.corpus) clean_targets.push_back(p.target);
  for (std::size_t k = 0; k < n_noise; ++k) {
    const std::size_t row = rows[k];
    std::size_t other = uniform_index(noise_rng, config.pairs - 1);
    if (other >= row) ++other;
    data.corpus[row].target = clean_targets[other];
    data.labels[row].noise = true;
    data.labels[row].rating = static_cast<double>(uniform_index(noise_rng, 2));
  }

  for (int d = 0; d < n_domains; ++d) {
    const auto& name = config.domains[static_cast<std::size_t>(d)];
    Rng seed_rng(derive_seed(config.seed, "synthetic-seed-" + name));
    data.seeds.push_back({name, clean_set(gen, d, config.seed_pairs, seed_rng)});
    Rng val_rng(derive_seed(config.seed, "synthetic-valid-" + name));
    data.validation.push_back(clean_set(gen, d, config.validation_pairs, val_rng));
    Rng mono_rng(derive_seed(config.seed, "synthetic-mono-" + name));
    std::vector<Tokens> mono;
    for (std::size_t i = 0; i < config.monolingual; ++i)
      mono.push_back(gen.sentence(d, mono_rng).source);
    data.monolingual.push_back(std::move(mono));
  }
  return data;
}

void write_synthetic(const SyntheticData& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_parallel_tsv(dir / "corpus.tsv", data.corpus);
  {
    std::ofstream out(dir / "ratings.tsv", std::ios::binary);
    for (std::size_t i = 0; i < data.corpus.size(); ++i)
      out << data.corpus[i].id << '\t' << format_double(data.labels[i].rating) << '\n';
  }
  for (std::size_t d = 0; d < data.domains.size(); ++d) {
    const auto& name = data.domains[d];
    write_parallel_tsv(dir / ("seed_" + name + ".tsv"), data.seeds[d].pairs);
    write_parallel_tsv(dir / ("valid_" + name + ".tsv"), data.validation[d]);
    std::ofstream out(dir / ("mono_" + name + ".txt"), std::ios::binary);
    for (const auto& s : data.monolingual[d]) out << join_tokens(s) << '\n';
  }
}

std::vector<Tokens> read_monolingual(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<Tokens> out;
  std::string line;
  while (std::getline(in, line)) {
    auto toks = tokenize(line);
    if (!toks.empty()) out.push_back(std::move(toks));
  }
  if (out.empty()) throw DataError(path.string() + ": no sentences");
  return out;
}

}  // namespace mdc
