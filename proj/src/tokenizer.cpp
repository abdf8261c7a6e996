#include "dictmlm/tokenizer.hpp"

#include <algorithm>
#include <istream>
#include <map>
#include <ostream>
#include <set>

#include "dictmlm/unicode.hpp"

namespace dictmlm {

namespace {

const char* const kSpecialNames[Vocab::kSpecialCount] = {"[PAD]", "[UNK]", "[CLS]", "[SEP]",
                                                         "[MASK]"};

}  // namespace

const char* Vocab::special_name(PieceId id) {
  if (id >= kSpecialCount) fail_data("no special piece with id ", id);
  return kSpecialNames[id];
}

Vocab::Vocab(std::vector<std::string> pieces) : pieces_(std::move(pieces)) {
  if (pieces_.size() < kSpecialCount) {
    fail_data("vocab needs at least the ", kSpecialCount, " special pieces, got ", pieces_.size());
  }
  for (std::size_t i = 0; i < kSpecialCount; ++i) {
    if (pieces_[i] != kSpecialNames[i]) {
      fail_data("vocab piece ", i, " must be ", kSpecialNames[i], ", got \"", pieces_[i], "\"");
    }
  }
  for (std::size_t i = 0; i < pieces_.size(); ++i) {
    auto [it, inserted] = index_.emplace(pieces_[i], static_cast<PieceId>(i));
    if (!inserted) fail_data("duplicate vocab piece \"", pieces_[i], "\" at ids ", it->second, " and ", i);
  }
}

void Vocab::write(std::ostream& out) const {
  for (const std::string& p : pieces_) out << p << '\n';
  if (!out) fail_data("failed writing vocab");
}

Vocab Vocab::read(std::istream& in, const std::string& source_label) {
  std::vector<std::string> pieces;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) fail_data(source_label, ":", pieces.size() + 1, ": empty vocab line");
    pieces.push_back(line);
  }
  if (pieces.empty()) fail_data(source_label, ": empty vocab file");
  return Vocab(std::move(pieces));
}

std::vector<std::string> pretokenize(const std::string& text) {
  std::vector<char32_t> cps = uni::decode_utf8(text);
  std::vector<std::string> words;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) {
      words.push_back(cur);
      cur.clear();
    }
  };
  for (char32_t cp : cps) {
    if (uni::is_whitespace(cp)) {
      flush();
    } else if (uni::is_punct(cp)) {
      flush();
      words.push_back(uni::encode_utf8({cp}));
    } else {
      cur += uni::encode_utf8({cp});
    }
  }
  flush();
  return words;
}

namespace {

// Word as a sequence of symbol strings: plain first char, ##-prefixed rest.
std::vector<std::string> word_symbols(const std::string& word) {
  std::vector<char32_t> cps = uni::decode_utf8(word);
  std::vector<std::string> symbols;
  symbols.reserve(cps.size());
  for (std::size_t i = 0; i < cps.size(); ++i) {
    std::string s = uni::encode_utf8({cps[i]});
    symbols.push_back(i == 0 ? s : "##" + s);
  }
  return symbols;
}

std::string merge_symbol(const std::string& left, const std::string& right) {
  bool cont = right.size() > 2 && right[0] == '#' && right[1] == '#';
  return left + (cont ? right.substr(2) : right);
}

}  // namespace

Vocab train_vocab(const std::vector<std::string>& corpus, std::size_t vocab_size,
                  std::uint64_t min_freq) {
  // std::map everywhere: iteration order must not depend on hashing.
  std::map<std::string, std::uint64_t> word_freq;
  for (const std::string& line : corpus) {
    for (std::string& w : pretokenize(line)) word_freq[std::move(w)]++;
  }
  if (word_freq.empty()) fail_data("vocab training corpus has no words");

  std::set<std::string> alphabet;
  std::vector<std::pair<std::vector<std::string>, std::uint64_t>> reps;
  reps.reserve(word_freq.size());
  for (const auto& [word, freq] : word_freq) {
    std::vector<std::string> symbols = word_symbols(word);
    for (const std::string& s : symbols) alphabet.insert(s);
    reps.emplace_back(std::move(symbols), freq);
  }

  std::size_t floor = Vocab::kSpecialCount + alphabet.size();
  if (vocab_size < floor) {
    fail_usage("vocab size ", vocab_size, " is below the ", floor, " needed for specials plus the ",
               alphabet.size(), "-symbol alphabet");
  }

  std::vector<std::string> pieces(std::begin(kSpecialNames) + 0, std::end(kSpecialNames));
  for (const std::string& s : alphabet) pieces.push_back(s);
  std::set<std::string> have(pieces.begin(), pieces.end());

  while (have.size() < vocab_size) {
    std::map<std::pair<std::string, std::string>, std::uint64_t> pair_freq;
    for (const auto& [symbols, freq] : reps) {
      for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
        pair_freq[{symbols[i], symbols[i + 1]}] += freq;
      }
    }
    if (pair_freq.empty()) break;
    // Highest frequency wins; the map order supplies the lexicographic tie-break.
    auto best = pair_freq.begin();
    for (auto it = std::next(pair_freq.begin()); it != pair_freq.end(); ++it) {
      if (it->second > best->second) best = it;
    }
    if (best->second < min_freq) break;

    const auto& [left, right] = best->first;
    std::string merged = merge_symbol(left, right);
    for (auto& [symbols, freq] : reps) {
      std::vector<std::string> out;
      out.reserve(symbols.size());
      for (std::size_t i = 0; i < symbols.size(); ++i) {
        if (i + 1 < symbols.size() && symbols[i] == left && symbols[i + 1] == right) {
          out.push_back(merged);
          ++i;
        } else {
          out.push_back(symbols[i]);
        }
      }
      symbols = std::move(out);
    }
    // Distinct merge rules can produce an already-known piece; apply the
    // merge but spend no budget on it.
    if (have.insert(merged).second) pieces.push_back(merged);
  }

  return Vocab(std::move(pieces));
}

std::vector<PieceId> encode_word(const std::string& word, const Vocab& vocab) {
  std::vector<char32_t> cps = uni::decode_utf8(word);
  std::vector<PieceId> out;
  std::size_t pos = 0;
  while (pos < cps.size()) {
    std::size_t end = cps.size();
    PieceId found = Vocab::kUnk;
    bool matched = false;
    while (end > pos) {
      std::string candidate = uni::encode_utf8({cps.begin() + pos, cps.begin() + end});
      if (pos > 0) candidate = "##" + candidate;
      if (vocab.has(candidate)) {
        found = vocab.id_of(candidate);
        matched = true;
        break;
      }
      --end;
    }
    if (!matched) return {Vocab::kUnk};
    out.push_back(found);
    if (out.size() > kMaxPiecesPerWord) return {Vocab::kUnk};
    pos = end;
  }
  return out;
}

TokenizedSentence encode(const std::string& text, LangId lang, const Vocab& vocab) {
  TokenizedSentence sent;
  for (std::string& word : pretokenize(text)) {
    std::vector<PieceId> ids = encode_word(word, vocab);
    std::uint32_t start = static_cast<std::uint32_t>(sent.piece_ids.size());
    sent.piece_ids.insert(sent.piece_ids.end(), ids.begin(), ids.end());
    sent.word_spans.emplace_back(start, static_cast<std::uint32_t>(sent.piece_ids.size()));
    sent.lang_per_word.push_back(lang);
    sent.words.push_back(std::move(word));
  }
  return sent;
}

std::string decode(const std::vector<PieceId>& piece_ids, const Vocab& vocab) {
  std::string out;
  for (PieceId id : piece_ids) {
    const std::string& p = vocab.piece(id);
    // Structural specials vanish; [UNK] stands for a word and keeps its marker.
    if (vocab.is_special(id) && id != Vocab::kUnk) continue;
    if (p.size() > 2 && p[0] == '#' && p[1] == '#') {
      out += p.substr(2);
    } else {
      if (!out.empty()) out += ' ';
      out += p;
    }
  }
  return out;
}

}  // namespace dictmlm
