#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mdc/corpus.hpp"

namespace mdc {

/// Desk-scale stand-in for a noisy multi-domain web corpus.
///
/// Source words come from four classes: per-domain words, general words and
/// a set of ambiguous words. Every source word has one target translation,
/// except that ambiguous words translate one way inside the domains and
/// another way in general text. A fraction of pairs get the target of a
/// random other pair.
struct SyntheticConfig {
  std::vector<std::string> domains = {"news", "ted"};
  std::size_t pairs = 20000;
  double noise_ratio = 0.3;
  double domain_fraction = 0.1;  // per domain, before noise
  std::size_t domain_words = 60;
  std::size_t general_words = 150;
  std::size_t ambiguous_words = 40;
  std::size_t min_length = 5;
  std::size_t max_length = 12;
  std::size_t seed_pairs = 100;        // trusted in-domain pairs per domain
  std::size_t validation_pairs = 500;  // per domain
  std::size_t monolingual = 2000;      // in-domain source sentences per domain
  std::uint64_t seed = 1;
};

struct SyntheticLabel {
  int domain = -1;  // -1: general text
  bool noise = false;
  double rating = 0.0;  // simulated 0-4 human quality rating
};

struct SyntheticData {
  std::vector<std::string> domains;
  std::vector<SentencePair> corpus;
  std::vector<SyntheticLabel> labels;  // one per corpus pair
  std::vector<DomainSeedSet> seeds;
  std::vector<std::vector<SentencePair>> validation;  // per domain
  std::vector<std::vector<Tokens>> monolingual;       // per domain
};

SyntheticData generate_synthetic(const SyntheticConfig& config);

/// Writes corpus.tsv, ratings.tsv, and per domain seed_<d>.tsv,
/// valid_<d>.tsv and mono_<d>.txt.
void write_synthetic(const SyntheticData& data, const std::filesystem::path& dir);

std::vector<Tokens> read_monolingual(const std::filesystem::path& path);

}  // namespace mdc
