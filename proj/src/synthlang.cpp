#include "dictmlm/synthlang.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <unordered_set>

namespace dictmlm {

namespace {

constexpr std::uint64_t kSurfaceTag = 0x73737572;  // "ssur"
constexpr std::uint64_t kCorpusTag = 0x73636f72;   // "scor"
constexpr std::uint64_t kPairTag = 0x73706172;     // "spar"

void check_inventory(const std::string& what, const std::string& chars, std::size_t want,
                     const std::string& code) {
  if (chars.size() != want) {
    fail_usage("language \"", code, "\": ", what, " needs exactly ", want, " characters, got ",
               chars.size());
  }
  std::unordered_set<char> seen(chars.begin(), chars.end());
  if (seen.size() != chars.size()) {
    fail_usage("language \"", code, "\": repeated character in ", what, " \"", chars, "\"");
  }
}

}  // namespace

void SynthConfig::check() const {
  if (lemma_count < 50) fail_usage("lemma_count must be at least 50, got ", lemma_count);
  if (lemma_count > 1000000) fail_usage("lemma_count ", lemma_count, " is beyond desk scale");
  if (languages.empty()) fail_usage("at least one language is required");
  if (!(zipf_s > 0.0)) fail_usage("zipf_s must be positive, got ", zipf_s);
  if (min_words < 1 || min_words > max_words) {
    fail_usage("bad sentence length range [", min_words, ", ", max_words, "]");
  }
  if (!(coverage >= 0.0 && coverage <= 1.0)) fail_usage("coverage must lie in [0, 1], got ", coverage);
  if (pair_count < 10) fail_usage("pair_count must be at least 10, got ", pair_count);
  if (!(repeat_prob >= 0.0 && repeat_prob <= 1.0)) {
    fail_usage("repeat_prob must lie in [0, 1], got ", repeat_prob);
  }
  std::unordered_set<std::string> codes;
  for (const SynthLanguage& lang : languages) {
    if (lang.code.empty()) fail_usage("empty language code");
    if (!codes.insert(lang.code).second) fail_usage("duplicate language code \"", lang.code, "\"");
    check_inventory("consonant inventory", lang.consonants, kConsonantSlots, lang.code);
    check_inventory("vowel inventory", lang.vowels, kVowelSlots, lang.code);
  }
}

SynthConfig near_pair_config() {
  SynthConfig cfg;
  cfg.languages = {
      {"na", "ptkmns", "aiu", "mi"},
      {"nb", "ptkmns", "aiu", "pu"},
  };
  return cfg;
}

SynthConfig far_pair_config() {
  SynthConfig cfg;
  cfg.languages = {
      {"fa", "ptkmns", "aiu", ""},
      {"fb", "bdgflr", "eoy", ""},
  };
  return cfg;
}

ZipfSampler::ZipfSampler(std::size_t n, double s) {
  if (n == 0) fail_usage("ZipfSampler needs at least one rank");
  weights_.resize(n);
  double total = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    weights_[k] = std::pow(static_cast<double>(k + 1), -s);
    total += weights_[k];
  }
  cumulative_.resize(n);
  double acc = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    weights_[k] /= total;
    acc += weights_[k];
    cumulative_[k] = acc;
  }
  cumulative_.back() = 1.0;
}

std::size_t ZipfSampler::sample(Rng& rng) const {
  double u = rng.uniform();
  auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
  if (it == cumulative_.end()) --it;
  return static_cast<std::size_t>(it - cumulative_.begin());
}

SynthLang::SynthLang(const SynthConfig& cfg, LanguageRegistry& registry)
    : cfg_(cfg), zipf_(cfg.lemma_count, cfg.zipf_s) {
  cfg_.check();
  for (const SynthLanguage& lang : cfg_.languages) lang_ids_.push_back(registry.add(lang.code));

  // Base codes are distinct draws from a syllable-sequence pool with at
  // least 2x headroom, so stems never repeat.
  std::size_t width = 2;
  std::size_t pool = kSyllableSlots * kSyllableSlots;
  while (pool < 2 * cfg_.lemma_count) {
    pool *= kSyllableSlots;
    ++width;
  }
  Rng surface_rng(derive_seed(cfg_.seed, kSurfaceTag));
  std::vector<std::size_t> bases = surface_rng.sample_without_replacement(pool, cfg_.lemma_count);

  surfaces_.resize(cfg_.languages.size());
  for (std::size_t li = 0; li < cfg_.languages.size(); ++li) {
    const SynthLanguage& lang = cfg_.languages[li];
    surfaces_[li].reserve(cfg_.lemma_count);
    std::unordered_set<std::string> seen;
    for (std::size_t k = 0; k < cfg_.lemma_count; ++k) {
      std::string word;
      std::size_t code = bases[k];
      for (std::size_t slot = 0; slot < width; ++slot) {
        std::size_t syllable = code % kSyllableSlots;
        code /= kSyllableSlots;
        word += lang.consonants[syllable / kVowelSlots];
        word += lang.vowels[syllable % kVowelSlots];
      }
      word += lang.suffix;
      if (!seen.insert(word).second) {
        fail_data("surface collision in \"", lang.code, "\": two lemmas render as \"", word, "\"");
      }
      surfaces_[li].push_back(std::move(word));
    }
  }
  for (std::size_t k = 0; k < cfg_.lemma_count; ++k) {
    for (std::size_t a = 0; a < surfaces_.size(); ++a) {
      for (std::size_t b = a + 1; b < surfaces_.size(); ++b) {
        if (surfaces_[a][k] == surfaces_[b][k]) {
          fail_data("lemma ", k, " renders identically (\"", surfaces_[a][k], "\") in \"",
                    cfg_.languages[a].code, "\" and \"", cfg_.languages[b].code, "\"");
        }
      }
    }
  }

  // Greedy by descending weight; the shortfall from the target mass is
  // below the smallest lemma weight.
  covered_.assign(cfg_.lemma_count, false);
  double mass = 0.0;
  for (std::size_t k = 0; k < cfg_.lemma_count; ++k) {
    if (mass + zipf_.weights()[k] <= cfg_.coverage + 1e-9) {
      covered_[k] = true;
      mass += zipf_.weights()[k];
    }
  }
}

LangId SynthLang::lang_id(std::size_t lang_index) const {
  if (lang_index >= lang_ids_.size()) {
    fail_usage("language index ", lang_index, " out of range (", lang_ids_.size(), " languages)");
  }
  return lang_ids_[lang_index];
}

const std::string& SynthLang::surface(std::size_t lang_index, std::size_t lemma) const {
  lang_id(lang_index);
  if (lemma >= cfg_.lemma_count) fail_usage("lemma ", lemma, " out of range");
  return surfaces_[lang_index][lemma];
}

void SynthLang::write_dictionary(std::ostream& out, std::size_t lang_a, std::size_t lang_b) const {
  lang_id(lang_a);
  lang_id(lang_b);
  if (lang_a == lang_b) fail_usage("dictionary needs two distinct languages");
  for (std::size_t k = 0; k < cfg_.lemma_count; ++k) {
    if (covered_[k]) out << surfaces_[lang_a][k] << ' ' << surfaces_[lang_b][k] << '\n';
  }
  if (!out) fail_data("failed writing dictionary");
}

std::vector<std::size_t> SynthLang::draw_lemmas(Rng& rng) const {
  std::size_t len = cfg_.min_words + rng.below(cfg_.max_words - cfg_.min_words + 1);
  std::vector<std::size_t> lemmas(len);
  for (std::size_t i = 0; i < len; ++i) {
    // An echoed position copies a marginally-Zipf variable, so the token
    // marginal stays exactly Zipf at any repeat_prob.
    if (i > 0 && rng.bernoulli(cfg_.repeat_prob)) {
      lemmas[i] = lemmas[rng.below(i)];
    } else {
      lemmas[i] = zipf_.sample(rng);
    }
  }
  return lemmas;
}

std::string SynthLang::render(std::size_t lang_index, const std::vector<std::size_t>& lemmas) const {
  std::string text;
  for (std::size_t i = 0; i < lemmas.size(); ++i) {
    if (i > 0) text += ' ';
    text += surfaces_[lang_index][lemmas[i]];
  }
  return text;
}

std::string SynthLang::sentence_text(std::size_t lang_index, std::uint64_t index) const {
  lang_id(lang_index);
  Rng rng(derive_seed(cfg_.seed, kCorpusTag, lang_index, index));
  return render(lang_index, draw_lemmas(rng));
}

void SynthLang::write_corpus(std::ostream& out, std::size_t lang_index, std::uint64_t count) const {
  for (std::uint64_t i = 0; i < count; ++i) out << sentence_text(lang_index, i) << '\n';
  if (!out) fail_data("failed writing corpus");
}

ParallelPair SynthLang::pair_at(std::size_t lang_a, std::size_t lang_b, std::uint64_t index) const {
  lang_id(lang_a);
  lang_id(lang_b);
  if (lang_a == lang_b) fail_usage("parallel pairs need two distinct languages");
  Rng rng(derive_seed(cfg_.seed, kPairTag, index));
  std::vector<std::size_t> lemmas = draw_lemmas(rng);
  return {render(lang_a, lemmas), lang_ids_[lang_a], render(lang_b, lemmas), lang_ids_[lang_b]};
}

std::vector<ParallelPair> SynthLang::make_pairs(std::size_t lang_a, std::size_t lang_b) const {
  std::vector<ParallelPair> pairs;
  pairs.reserve(cfg_.pair_count);
  for (std::uint64_t i = 0; i < cfg_.pair_count; ++i) pairs.push_back(pair_at(lang_a, lang_b, i));
  return pairs;
}

}  // namespace dictmlm
