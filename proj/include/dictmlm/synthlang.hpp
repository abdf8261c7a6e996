#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "dictmlm/evalsuite.hpp"
#include "dictmlm/lang.hpp"
#include "dictmlm/rng.hpp"

namespace dictmlm {

// Lemma base forms are sequences of abstract CV syllables, rendered through
// a per-language character inventory. Related languages share inventories
// (identical stems), unrelated ones use disjoint characters.
inline constexpr std::size_t kConsonantSlots = 6;
inline constexpr std::size_t kVowelSlots = 3;
inline constexpr std::size_t kSyllableSlots = kConsonantSlots * kVowelSlots;

struct SynthLanguage {
  std::string code;
  std::string consonants;  // exactly kConsonantSlots chars, no repeats
  std::string vowels;      // exactly kVowelSlots chars, no repeats
  std::string suffix;      // appended to every rendered lemma
};

struct SynthConfig {
  std::size_t lemma_count = 200;
  std::vector<SynthLanguage> languages;
  double zipf_s = 1.2;
  std::size_t min_words = 13;  // the [13,27] default makes the rounded
  std::size_t max_words = 27;  // mask budget average exactly 0.15
  std::size_t sentences = 2000;
  double coverage = 1.0;  // Zipf-mass share of lemmas in the dictionary
  std::size_t pair_count = 200;
  std::uint64_t seed = 0;
  // Probability that a word echoes a uniformly chosen earlier word of the
  // same sentence instead of a fresh Zipf draw. Context must carry
  // information about a word or masked prediction has nothing to learn
  // from; echoing a Zipf-distributed word keeps every token's marginal
  // exactly on the Zipf curve.
  double repeat_prob = 0.5;

  void check() const;
};

// Two-language presets: "near" shares all stems and differs only in a
// suffix, "far" renders through disjoint character inventories.
SynthConfig near_pair_config();
SynthConfig far_pair_config();

// Zipf draw over ranks 0..n-1 with p_k proportional to (k+1)^-s.
class ZipfSampler {
 public:
  ZipfSampler(std::size_t n, double s);

  std::size_t sample(Rng& rng) const;
  const std::vector<double>& weights() const { return weights_; }  // normalized

 private:
  std::vector<double> weights_;
  std::vector<double> cumulative_;
};

// Deterministic artificial language pair: every artifact is a pure function
// of (config, seed). Surfaces are distinct within and across languages or
// construction fails; the dictionary lemma set is grown greedily by Zipf
// mass, so measured token coverage lands on `coverage`.
class SynthLang {
 public:
  SynthLang(const SynthConfig& cfg, LanguageRegistry& registry);

  const SynthConfig& config() const { return cfg_; }
  std::size_t language_count() const { return cfg_.languages.size(); }
  LangId lang_id(std::size_t lang_index) const;
  const std::string& surface(std::size_t lang_index, std::size_t lemma) const;
  const std::vector<bool>& covered() const { return covered_; }

  // MUSE pairs for the covered lemmas, in lemma order. Exact translations
  // by construction.
  void write_dictionary(std::ostream& out, std::size_t lang_a, std::size_t lang_b) const;

  // Sentence `index` of one language's monolingual corpus. Corpora of
  // different languages are independent draws, not mutual translations.
  std::string sentence_text(std::size_t lang_index, std::uint64_t index) const;
  void write_corpus(std::ostream& out, std::size_t lang_index, std::uint64_t count) const;

  // Evaluation pair `index`: one lemma sequence rendered in two languages,
  // so the sides are exact translations.
  ParallelPair pair_at(std::size_t lang_a, std::size_t lang_b, std::uint64_t index) const;
  std::vector<ParallelPair> make_pairs(std::size_t lang_a, std::size_t lang_b) const;

 private:
  std::vector<std::size_t> draw_lemmas(Rng& rng) const;
  std::string render(std::size_t lang_index, const std::vector<std::size_t>& lemmas) const;

  SynthConfig cfg_;
  std::vector<LangId> lang_ids_;
  std::vector<std::vector<std::string>> surfaces_;  // [language][lemma]
  std::vector<bool> covered_;
  ZipfSampler zipf_;
};

}  // namespace dictmlm
