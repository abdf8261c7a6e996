#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dictmlm/lang.hpp"
#include "dictmlm/rng.hpp"

namespace dictmlm {

// One synonym: a whole word in some language.
struct SynonymEntry {
  std::string word;
  LangId lang;

  friend bool operator==(const SynonymEntry& a, const SynonymEntry& b) {
    return a.lang == b.lang && a.word == b.word;
  }
};

struct ParsedDictFile {
  LangId src;
  LangId tgt;
  // (source word, target synonym), line order preserved.
  std::vector<std::pair<std::string, SynonymEntry>> pairs;
  std::vector<Diagnostic> diagnostics;
};

struct ParseOptions {
  bool normalize = true;  // NFC + lowercase both sides
};

// Parse one MUSE-format dictionary: one "src tgt" pair per line, tab or
// space separated. Malformed lines go to diagnostics and are skipped.
ParsedDictFile parse_muse(std::istream& in, LangId src, LangId tgt,
                          const std::string& source_label,
                          const ParseOptions& opts = {});

enum class SynonymSampling {
  kTwoStage,  // uniform over languages, then uniform within the language
  kFlat,      // uniform over all synonyms
};

// Aggregated multilingual synonym dictionary. Immutable after merge.
class Lexicon {
 public:
  // Synonym sets are deduplicated, never contain their own key, and are
  // sorted by (language code, word) for deterministic iteration.
  const std::vector<SynonymEntry>& lookup(const std::string& word, LangId lang) const;

  // Two-stage draw by default: languages present in the set are
  // equiprobable, then uniform within the chosen language. Returns false
  // (out untouched) iff the synonym set is empty.
  bool sample_synonym(const std::string& word, LangId lang, Rng& rng,
                      SynonymEntry& out,
                      SynonymSampling mode = SynonymSampling::kTwoStage) const;

  bool has_entry(const std::string& word, LangId lang) const {
    return !lookup(word, lang).empty();
  }

  std::size_t entry_count() const { return entries_.size(); }
  std::size_t source_count() const { return source_count_; }
  const LanguageRegistry& registry() const { return registry_; }

  // JSON Lines, one record per key, keys sorted by (lang code, word);
  // synonyms sorted by (lang code, word).
  void write_jsonl(std::ostream& out) const;

  // Codes already present in `base` keep their ids; new codes are appended
  // in order of appearance.
  static Lexicon read_jsonl(std::istream& in, const std::string& source_label,
                            LanguageRegistry base = {});

  // Fraction of whole-word tokens with at least one synonym. The iterator
  // yields (word, lang) pairs; words are matched after normalization.
  struct Coverage {
    double overall = 0.0;
    bool empty_corpus = false;
    std::vector<std::uint64_t> tokens_per_lang;
    std::vector<std::uint64_t> covered_per_lang;
    double per_lang(LangId id) const {
      std::uint64_t n = tokens_per_lang[id.value];
      return n == 0 ? 0.0 : static_cast<double>(covered_per_lang[id.value]) / static_cast<double>(n);
    }
  };
  template <typename Iter>
  Coverage coverage(Iter begin, Iter end) const;

  friend Lexicon merge(const LanguageRegistry& registry,
                       const std::vector<ParsedDictFile>& files, bool symmetrize);

 private:
  struct KeyHash {
    std::size_t operator()(const std::pair<std::string, std::uint16_t>& k) const {
      return std::hash<std::string>()(k.first) * 31 + k.second;
    }
  };
  std::unordered_map<std::pair<std::string, std::uint16_t>, std::vector<SynonymEntry>, KeyHash>
      entries_;
  std::size_t source_count_ = 0;
  LanguageRegistry registry_;
};

// Aggregate parsed files into one lexicon. With symmetrize, every a->b pair
// also inserts b->a. Idempotent and order-insensitive over input files.
Lexicon merge(const LanguageRegistry& registry,
              const std::vector<ParsedDictFile>& files, bool symmetrize);

template <typename Iter>
Lexicon::Coverage Lexicon::coverage(Iter begin, Iter end) const {
  Coverage cov;
  cov.tokens_per_lang.assign(registry_.size(), 0);
  cov.covered_per_lang.assign(registry_.size(), 0);
  std::uint64_t total = 0, covered = 0;
  for (Iter it = begin; it != end; ++it) {
    const auto& [word, lang] = *it;
    ++total;
    ++cov.tokens_per_lang[lang.value];
    if (has_entry(word, lang)) {
      ++covered;
      ++cov.covered_per_lang[lang.value];
    }
  }
  cov.empty_corpus = (total == 0);
  cov.overall = total == 0 ? 0.0 : static_cast<double>(covered) / static_cast<double>(total);
  return cov;
}

}  // namespace dictmlm
