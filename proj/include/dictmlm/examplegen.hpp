#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "dictmlm/common.hpp"
#include "dictmlm/corpus.hpp"
#include "dictmlm/lexicon.hpp"
#include "dictmlm/rng.hpp"
#include "dictmlm/tokenizer.hpp"

namespace dictmlm {

enum class GenMode { kDictMlm, kDictTlm, kVanillaMlm };

// Which words the masking budget is computed over. The default computes
// the budget over all words and fills it from dictionary-covered words
// first; the alternative restricts both budget and selection to covered
// words (falling back to the all-words rule when nothing is covered).
enum class MaskPool { kAllWords, kEligibleOnly };

const char* gen_mode_name(GenMode mode);
GenMode parse_gen_mode(const std::string& name);

struct GenConfig {
  double mask_rate = 0.15;
  double t = 0.5;          // cross-lingual label probability
  std::uint32_t dup = 5;   // dynamic-masking duplication factor
  GenMode mode = GenMode::kDictMlm;
  double tlm_replace_prob = 1.0;
  std::size_t max_seq_len = 128;
  std::uint64_t seed = 0;
  MaskPool pool = MaskPool::kAllWords;
  SynonymSampling sampling = SynonymSampling::kTwoStage;

  void check() const;
};

struct TrainingExample {
  std::vector<PieceId> token_ids;  // [CLS] ... [SEP] (DICT-TLM: two segments)
  std::vector<LangId> lang_ids;
  std::vector<std::uint8_t> segment_ids;
  std::vector<std::uint32_t> masked_positions;  // strictly increasing
  std::vector<PieceId> label_ids;
  std::vector<LangId> label_lang_ids;
};

// Throws DataError when the example breaks a structural invariant.
void validate(const TrainingExample& ex, std::size_t max_seq_len);

struct GenStats {
  std::uint64_t sentence_count = 0;
  std::uint64_t example_count = 0;
  std::uint64_t skipped_count = 0;
  std::uint64_t word_count = 0;    // words in emitted examples
  std::uint64_t masked_words = 0;  // selected whole words
  std::uint64_t labels_xling = 0;  // label language != sentence language
  std::uint64_t corrupt_mask = 0;  // per-piece corruption outcomes
  std::uint64_t corrupt_keep = 0;
  std::uint64_t corrupt_random = 0;
  std::map<std::uint16_t, std::uint64_t> label_lang_counts;  // LangId value -> labels

  void merge(const GenStats& other);
  double mask_rate() const;
  double xling_fraction() const;  // over masked words
};

// Whole-word mask selection, ascending indices. Budget is
// max(1, round(mask_rate * word_count)) filled covered-first (see MaskPool).
std::vector<std::size_t> select_mask_words(const TokenizedSentence& sent, const Lexicon& lex,
                                           const GenConfig& cfg, Rng& rng);

struct WordLabel {
  std::string word;
  LangId lang;
  bool is_original = true;
};

// Cross-lingual synonym with probability t for covered words, otherwise
// the word itself. Consumes no draws when t = 0 or the word is uncovered,
// so vanilla MLM and t = 0 share one RNG stream.
WordLabel choose_label(const std::string& word, LangId lang, bool eligible, const Lexicon& lex,
                       const GenConfig& cfg, Rng& rng);

TrainingExample build_dict_mlm_example(const TokenizedSentence& sent, const GenConfig& cfg,
                                       const Lexicon& lex, const Vocab& vocab, Rng& rng,
                                       GenStats& stats);

// [CLS] original [SEP] code-switched copy [SEP], plain MLM labels.
TrainingExample build_tlm_example(const TokenizedSentence& sent, const GenConfig& cfg,
                                  const Lexicon& lex, const Vocab& vocab, Rng& rng,
                                  GenStats& stats);

// All dup variants of one sentence. The RNG stream is derived from
// (seed, sentence_index, variant), so output is independent of worker
// count and processing order. Unusable sentences yield no examples and a
// diagnostic.
std::vector<TrainingExample> examples_for_sentence(const std::string& text, LangId lang,
                                                   std::uint64_t sentence_index,
                                                   const GenConfig& cfg, const Lexicon& lex,
                                                   const Vocab& vocab, GenStats& stats,
                                                   std::vector<Diagnostic>& diagnostics);

// Serial driver over a sentence stream.
std::vector<TrainingExample> generate(SentenceStream& stream, std::uint64_t sentence_count,
                                      const GenConfig& cfg, const Lexicon& lex, const Vocab& vocab,
                                      GenStats& stats, std::vector<Diagnostic>& diagnostics);

// JSON Lines, one example per line, six integer-array fields.
void write_examples(std::ostream& out, const std::vector<TrainingExample>& examples);
std::vector<TrainingExample> read_examples(std::istream& in, const std::string& source_label);

void write_stats(std::ostream& out, const GenStats& stats, const LanguageRegistry& registry);

}  // namespace dictmlm
