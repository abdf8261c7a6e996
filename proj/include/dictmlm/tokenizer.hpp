#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dictmlm/common.hpp"
#include "dictmlm/lang.hpp"

namespace dictmlm {

using PieceId = std::uint32_t;

// Shared multilingual WordPiece vocabulary. Continuation pieces carry the
// "##" prefix. Special ids are fixed.
class Vocab {
 public:
  static constexpr PieceId kPad = 0;
  static constexpr PieceId kUnk = 1;
  static constexpr PieceId kCls = 2;
  static constexpr PieceId kSep = 3;
  static constexpr PieceId kMask = 4;
  static constexpr std::size_t kSpecialCount = 5;

  static const char* special_name(PieceId id);

  Vocab() = default;
  explicit Vocab(std::vector<std::string> pieces);

  PieceId id_of(const std::string& piece) const {
    auto it = index_.find(piece);
    return it == index_.end() ? kUnk : it->second;
  }
  bool has(const std::string& piece) const { return index_.count(piece) > 0; }
  const std::string& piece(PieceId id) const {
    if (id >= pieces_.size()) fail_data("piece id ", id, " out of range (vocab size ", pieces_.size(), ")");
    return pieces_[id];
  }
  std::size_t size() const { return pieces_.size(); }
  bool is_special(PieceId id) const { return id < kSpecialCount; }
  bool is_continuation(PieceId id) const {
    const std::string& p = piece(id);
    return p.size() > 2 && p[0] == '#' && p[1] == '#';
  }

  // One piece per line, line number = id, specials on lines 0-4.
  void write(std::ostream& out) const;
  static Vocab read(std::istream& in, const std::string& source_label);

 private:
  std::vector<std::string> pieces_;
  std::unordered_map<std::string, PieceId> index_;
};

// Word-split text with per-word piece spans; specials are never included.
struct TokenizedSentence {
  std::vector<PieceId> piece_ids;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> word_spans;  // half-open
  std::vector<LangId> lang_per_word;
  // Surface form of each word as pre-tokenized (needed for lexicon lookup).
  std::vector<std::string> words;

  std::size_t word_count() const { return word_spans.size(); }
};

// Whitespace split, then punctuation split into standalone pre-tokens.
std::vector<std::string> pretokenize(const std::string& text);

// Frequency-scored pair merging over whole pre-tokens. Deterministic:
// ties break on the lexicographically smallest pair. Merging stops when
// the best pair frequency drops below min_freq or the budget is reached.
Vocab train_vocab(const std::vector<std::string>& corpus, std::size_t vocab_size,
                  std::uint64_t min_freq = 2);

// Greedy longest-match-first segmentation per pre-token. A word that
// cannot be segmented, or that needs more than max_pieces_per_word pieces,
// becomes a single [UNK] piece with its own span. Whitespace-only text
// yields an empty sentence.
inline constexpr std::size_t kMaxPiecesPerWord = 32;
TokenizedSentence encode(const std::string& text, LangId lang, const Vocab& vocab);

// Segment one word (no whitespace) into piece ids; returns {kUnk} when
// unsegmentable or over the piece limit.
std::vector<PieceId> encode_word(const std::string& word, const Vocab& vocab);

// Continuation pieces concatenate without a space; words join with single
// spaces. Structural specials are dropped; [UNK] prints its literal marker.
// Out-of-range ids are an error.
std::string decode(const std::vector<PieceId>& piece_ids, const Vocab& vocab);

}  // namespace dictmlm
