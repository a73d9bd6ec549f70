#include "mdc/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"

#include "mdc/error.hpp"

namespace mdc {

namespace {

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\f' ||
         c == '\v';
}

std::string location(std::string_view origin, std::size_t line) {
  std::ostringstream os;
  os << origin << ":" << line;
  return os.str();
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return in;
}

}  // namespace

Tokens tokenize(std::string_view text) {
  Tokens out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    std::size_t j = i;
    while (j < text.size() && !is_space(text[j])) ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

std::string join_tokens(const Tokens& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

double WeightVector::at(std::string_view name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return values[i];
  throw DataError("weight vector has no entry '" + std::string(name) + "'");
}

CorpusFormat parse_format(std::string_view name) {
  if (name == "tsv") return CorpusFormat::kTsv;
  if (name == "jsonl") return CorpusFormat::kJsonl;
  throw UsageError("unknown corpus format '" + std::string(name) + "'");
}

CorpusFormat format_from_path(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  return ext == ".jsonl" || ext == ".json" ? CorpusFormat::kJsonl
                                           : CorpusFormat::kTsv;
}

ScoredCorpus::ScoredCorpus(std::vector<SentencePair> pairs) {
  std::unordered_map<std::int64_t, std::size_t> rows;
  rows.reserve(pairs.size());
  for (std::size_t row = 0; row < pairs.size(); ++row) {
    const auto& p = pairs[row];
    if (p.source.empty() || p.target.empty())
      throw DataError("pair " + std::to_string(p.id) + " has an empty side");
    if (!rows.emplace(p.id, row).second)
      throw DataError("duplicate pair id " + std::to_string(p.id));
  }
  pairs_ = std::make_shared<const std::vector<SentencePair>>(std::move(pairs));
  row_by_id_ = std::make_shared<const std::unordered_map<std::int64_t, std::size_t>>(
      std::move(rows));
}

std::size_t ScoredCorpus::row_of(std::int64_t id) const {
  auto it = row_by_id_->find(id);
  if (it == row_by_id_->end())
    throw DataError("no pair with id " + std::to_string(id));
  return it->second;
}

std::size_t ScoredCorpus::feature_index(std::string_view name) const {
  for (std::size_t k = 0; k < names_.size(); ++k)
    if (names_[k] == name) return k;
  throw DataError("corpus has no feature '" + std::string(name) + "'");
}

std::vector<double> ScoredCorpus::feature_column(std::size_t k) const {
  std::vector<double> col(size());
  for (std::size_t row = 0; row < size(); ++row) col[row] = feature(row, k);
  return col;
}

void ScoredCorpus::add_feature(const std::string& name,
                               std::span<const double> column) {
  if (column.size() != size())
    throw DataError("feature '" + name + "' has " +
                    std::to_string(column.size()) + " values for " +
                    std::to_string(size()) + " pairs");
  if (std::find(names_.begin(), names_.end(), name) != names_.end())
    throw DataError("feature '" + name + "' already present");
  for (std::size_t row = 0; row < column.size(); ++row)
    if (!std::isfinite(column[row]))
      throw DataError("non-finite value for feature '" + name + "' at id " +
                      std::to_string(pair(row).id));

  const std::size_t old_n = names_.size();
  std::vector<double> grown(size() * (old_n + 1));
  for (std::size_t row = 0; row < size(); ++row) {
    std::copy_n(values_.begin() + row * old_n, old_n,
                grown.begin() + row * (old_n + 1));
    grown[row * (old_n + 1) + old_n] = column[row];
  }
  values_ = std::move(grown);
  names_.push_back(name);
}

void ScoredCorpus::set_scores(std::vector<double> f) {
  if (f.size() != size()) throw DataError("score count does not match corpus");
  f_ = std::move(f);
  percentile_.clear();
  order_.clear();
}

std::vector<SentencePair> parse_parallel(std::istream& in, CorpusFormat format,
                                         std::string_view origin) {
  std::vector<SentencePair> pairs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::string src, tgt;
    if (format == CorpusFormat::kTsv) {
      const auto tab = line.find('\t');
      if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos)
        throw DataError(location(origin, lineno) +
                        ": expected exactly one tab between source and target");
      src = line.substr(0, tab);
      tgt = line.substr(tab + 1);
    } else {
      nlohmann::json rec;
      try {
        rec = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception& e) {
        throw DataError(location(origin, lineno) + ": invalid JSON: " + e.what());
      }
      if (!rec.is_object() || !rec.contains("src") || !rec.contains("tgt") ||
          !rec["src"].is_string() || !rec["tgt"].is_string())
        throw DataError(location(origin, lineno) +
                        ": record needs string fields 'src' and 'tgt'");
      src = rec["src"].get<std::string>();
      tgt = rec["tgt"].get<std::string>();
    }
    SentencePair p{static_cast<std::int64_t>(pairs.size()), tokenize(src),
                   tokenize(tgt)};
    if (p.source.empty())
      throw DataError(location(origin, lineno) + ": empty source field");
    if (p.target.empty())
      throw DataError(location(origin, lineno) + ": empty target field");
    pairs.push_back(std::move(p));
  }
  if (pairs.empty()) throw DataError(std::string(origin) + ": no records");
  return pairs;
}

ScoredCorpus ingest_parallel(const std::filesystem::path& path,
                             CorpusFormat format) {
  auto in = open_input(path);
  return ScoredCorpus(parse_parallel(in, format, path.string()));
}

ScoredCorpus ingest_parallel(const std::filesystem::path& path) {
  return ingest_parallel(path, format_from_path(path));
}

void write_parallel_tsv(const std::filesystem::path& path,
                        std::span<const SentencePair> pairs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& p : pairs)
    out << join_tokens(p.source) << '\t' << join_tokens(p.target) << '\n';
}

void join_external_features(ScoredCorpus& corpus, std::istream& in,
                            const std::string& name) {
  std::vector<double> column(corpus.size(),
                             std::numeric_limits<double>::quiet_NaN());
  std::vector<char> seen(corpus.size(), 0);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw DataError("feature '" + name + "' line " + std::to_string(lineno) +
                      ": expected id<TAB>value");
    std::int64_t id = 0;
    const char* id_end = line.data() + tab;
    auto [p, ec] = std::from_chars(line.data(), id_end, id);
    if (ec != std::errc() || p != id_end)
      throw DataError("feature '" + name + "' line " + std::to_string(lineno) +
                      ": bad id");
    double value = 0.0;
    const char* v_begin = line.data() + tab + 1;
    const char* v_end = line.data() + line.size();
    auto [q, ec2] = std::from_chars(v_begin, v_end, value);
    if (ec2 != std::errc() || q != v_end)
      throw DataError("feature '" + name + "' line " + std::to_string(lineno) +
                      ": bad value");
    if (!std::isfinite(value))
      throw DataError("non-finite value for feature '" + name + "' at id " +
                      std::to_string(id));
    if (!corpus.contains(id))
      throw DataError("feature '" + name + "' has unknown id " +
                      std::to_string(id));
    const auto row = corpus.row_of(id);
    if (seen[row])
      throw DataError("duplicate id " + std::to_string(id) + " in feature '" +
                      name + "'");
    seen[row] = 1;
    column[row] = value;
  }
  // Report the smallest missing id for a stable message.
  std::int64_t missing = 0;
  bool any_missing = false;
  for (std::size_t row = 0; row < corpus.size(); ++row) {
    if (seen[row]) continue;
    const auto id = corpus.pair(row).id;
    if (!any_missing || id < missing) missing = id;
    any_missing = true;
  }
  if (any_missing)
    throw DataError("missing feature '" + name + "' for id " +
                    std::to_string(missing));
  corpus.add_feature(name, column);
}

void join_external_features(ScoredCorpus& corpus,
                            const std::filesystem::path& path,
                            const std::string& name) {
  auto in = open_input(path);
  join_external_features(corpus, in, name);
}

void join_external_features(ScoredCorpus& corpus,
                            const std::filesystem::path& path) {
  join_external_features(corpus, path, path.stem().string());
}

std::string format_double(double x) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, end);
}

void write_feature_file(const std::filesystem::path& path,
                        const ScoredCorpus& corpus, std::size_t k) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (std::size_t row = 0; row < corpus.size(); ++row)
    out << corpus.pair(row).id << '\t' << format_double(corpus.feature(row, k))
        << '\n';
}

std::vector<double> aggregate(const ScoredCorpus& corpus,
                              const WeightVector& v) {
  if (v.names.size() != v.values.size())
    throw DataError("weight vector names and values differ in length");
  const auto& names = corpus.feature_names();
  std::set<std::string> have(names.begin(), names.end());
  std::set<std::string> want(v.names.begin(), v.names.end());
  if (have != want || want.size() != v.names.size()) {
    std::vector<std::string> diff;
    std::set_symmetric_difference(have.begin(), have.end(), want.begin(),
                                  want.end(), std::back_inserter(diff));
    std::string msg = "weight/feature name mismatch:";
    for (const auto& d : diff) msg += " " + d;
    if (diff.empty()) msg += " duplicate weight names";
    throw DataError(msg);
  }
  // weight for each corpus column
  std::vector<double> w(names.size());
  for (std::size_t k = 0; k < names.size(); ++k) w[k] = v.at(names[k]);

  std::vector<double> f(corpus.size(), 0.0);
  for (std::size_t row = 0; row < corpus.size(); ++row) {
    const auto x = corpus.features(row);
    double s = 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) s += w[k] * x[k];
    f[row] = s;
  }
  return f;
}

void percentile_normalize(ScoredCorpus& corpus) {
  const std::size_t n = corpus.size();
  if (!corpus.has_scores()) throw DataError("percentile_normalize needs scores");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto& f = corpus.f_;
  const auto& pairs = corpus.pairs();
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (f[a] != f[b]) return f[a] < f[b];
    return pairs[a].id < pairs[b].id;
  });
  corpus.percentile_.assign(n, 0.0);
  for (std::size_t k = 0; k < n; ++k)
    corpus.percentile_[order[k]] =
        static_cast<double>(k) / static_cast<double>(n);
  corpus.order_ = std::move(order);
}

void score_and_normalize(ScoredCorpus& corpus, const WeightVector& v) {
  corpus.set_scores(aggregate(corpus, v));
  percentile_normalize(corpus);
}

}  // namespace mdc
