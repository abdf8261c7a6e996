#include "dictmlm/examplegen.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <iterator>
#include <ostream>

#include <nlohmann/json.hpp>

#include "dictmlm/unicode.hpp"

namespace dictmlm {

namespace {

constexpr std::uint64_t kGenStreamTag = 0x67656e65ULL;

std::string normalized_or_self(const std::string& word) {
  try {
    return uni::normalize_word(word);
  } catch (const DataError&) {
    return word;
  }
}

}  // namespace

const char* gen_mode_name(GenMode mode) {
  switch (mode) {
    case GenMode::kDictMlm: return "dict-mlm";
    case GenMode::kDictTlm: return "dict-tlm";
    case GenMode::kVanillaMlm: return "vanilla";
  }
  fail_usage("unknown generation mode");
}

GenMode parse_gen_mode(const std::string& name) {
  if (name == "dict-mlm") return GenMode::kDictMlm;
  if (name == "dict-tlm") return GenMode::kDictTlm;
  if (name == "vanilla") return GenMode::kVanillaMlm;
  fail_usage("unknown generation mode \"", name, "\" (expected dict-mlm, dict-tlm, or vanilla)");
}

void GenConfig::check() const {
  if (!(mask_rate > 0.0 && mask_rate < 1.0)) fail_usage("mask rate must be in (0, 1), got ", mask_rate);
  if (!(t >= 0.0 && t <= 1.0)) fail_usage("t must be in [0, 1], got ", t);
  if (dup < 1) fail_usage("duplication factor must be at least 1");
  if (!(tlm_replace_prob >= 0.0 && tlm_replace_prob <= 1.0)) {
    fail_usage("tlm replace probability must be in [0, 1], got ", tlm_replace_prob);
  }
  if (max_seq_len < 8) fail_usage("max sequence length must be at least 8, got ", max_seq_len);
}

void validate(const TrainingExample& ex, std::size_t max_seq_len) {
  std::size_t n = ex.token_ids.size();
  if (ex.lang_ids.size() != n || ex.segment_ids.size() != n) {
    fail_data("example streams disagree in length: ", n, " tokens, ", ex.lang_ids.size(), " langs, ",
              ex.segment_ids.size(), " segments");
  }
  if (n > max_seq_len) fail_data("example length ", n, " exceeds limit ", max_seq_len);
  if (n < 3 || ex.token_ids.front() != Vocab::kCls || ex.token_ids.back() != Vocab::kSep) {
    fail_data("example is not [CLS] ... [SEP] framed");
  }
  std::size_t m = ex.masked_positions.size();
  if (m == 0 || ex.label_ids.size() != m || ex.label_lang_ids.size() != m) {
    fail_data("example needs matching non-empty mask/label arrays, got ", m, "/", ex.label_ids.size(),
              "/", ex.label_lang_ids.size());
  }
  bool seen_one = false;
  for (std::size_t i = 0; i < n; ++i) {
    if (ex.segment_ids[i] > 1) fail_data("segment id ", int(ex.segment_ids[i]), " at position ", i);
    if (ex.segment_ids[i] == 1) seen_one = true;
    if (seen_one && ex.segment_ids[i] == 0) fail_data("segment ids must be 0s then 1s");
  }
  for (std::size_t i = 0; i < m; ++i) {
    std::uint32_t pos = ex.masked_positions[i];
    if (i > 0 && pos <= ex.masked_positions[i - 1]) fail_data("masked positions must strictly increase");
    if (pos >= n) fail_data("masked position ", pos, " out of range ", n);
    PieceId tok = ex.token_ids[pos];
    if (tok == Vocab::kPad || tok == Vocab::kCls || tok == Vocab::kSep) {
      fail_data("masked position ", pos, " lands on a structural special token");
    }
    PieceId lab = ex.label_ids[i];
    if (lab == Vocab::kPad || lab == Vocab::kCls || lab == Vocab::kSep || lab == Vocab::kMask) {
      fail_data("label ", lab, " at masked position ", pos, " is a special token");
    }
  }
}

void GenStats::merge(const GenStats& other) {
  sentence_count += other.sentence_count;
  example_count += other.example_count;
  skipped_count += other.skipped_count;
  word_count += other.word_count;
  masked_words += other.masked_words;
  labels_xling += other.labels_xling;
  corrupt_mask += other.corrupt_mask;
  corrupt_keep += other.corrupt_keep;
  corrupt_random += other.corrupt_random;
  for (const auto& [lang, count] : other.label_lang_counts) label_lang_counts[lang] += count;
}

double GenStats::mask_rate() const {
  return word_count == 0 ? 0.0 : static_cast<double>(masked_words) / static_cast<double>(word_count);
}

double GenStats::xling_fraction() const {
  return masked_words == 0 ? 0.0 : static_cast<double>(labels_xling) / static_cast<double>(masked_words);
}

namespace {

std::size_t mask_budget(double rate, std::size_t word_count) {
  auto rounded = static_cast<std::size_t>(std::llround(rate * static_cast<double>(word_count)));
  return std::min(word_count, std::max<std::size_t>(1, rounded));
}

std::vector<bool> eligibility(const TokenizedSentence& sent, const Lexicon& lex) {
  std::vector<bool> out(sent.word_count());
  for (std::size_t w = 0; w < sent.word_count(); ++w) {
    out[w] = lex.has_entry(normalized_or_self(sent.words[w]), sent.lang_per_word[w]);
  }
  return out;
}

}  // namespace

std::vector<std::size_t> select_mask_words(const TokenizedSentence& sent, const Lexicon& lex,
                                           const GenConfig& cfg, Rng& rng) {
  std::size_t wc = sent.word_count();
  if (wc == 0) fail_usage("cannot select mask words in an empty sentence");
  std::vector<bool> eligible = eligibility(sent, lex);
  std::vector<std::size_t> covered, uncovered;
  for (std::size_t w = 0; w < wc; ++w) (eligible[w] ? covered : uncovered).push_back(w);

  std::vector<std::size_t> picked;
  if (cfg.pool == MaskPool::kEligibleOnly && !covered.empty()) {
    std::size_t budget = mask_budget(cfg.mask_rate, covered.size());
    for (std::size_t i : rng.sample_without_replacement(covered.size(), budget)) {
      picked.push_back(covered[i]);
    }
  } else {
    std::size_t budget = mask_budget(cfg.mask_rate, wc);
    std::size_t from_covered = std::min(budget, covered.size());
    for (std::size_t i : rng.sample_without_replacement(covered.size(), from_covered)) {
      picked.push_back(covered[i]);
    }
    for (std::size_t i : rng.sample_without_replacement(uncovered.size(), budget - from_covered)) {
      picked.push_back(uncovered[i]);
    }
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

WordLabel choose_label(const std::string& word, LangId lang, bool eligible, const Lexicon& lex,
                       const GenConfig& cfg, Rng& rng) {
  // Draw parity: vanilla mode, t = 0, and uncovered words all consume
  // nothing here, which keeps those streams bitwise interchangeable.
  if (cfg.mode != GenMode::kVanillaMlm && eligible && rng.bernoulli(cfg.t)) {
    SynonymEntry syn;
    if (lex.sample_synonym(normalized_or_self(word), lang, rng, syn, cfg.sampling)) {
      return {syn.word, syn.lang, false};
    }
  }
  return {word, lang, true};
}

namespace {

struct StreamWord {
  std::vector<PieceId> pieces;
  LangId lang;
  std::uint8_t segment = 0;
  bool masked = false;
  LangId sentence_lang;  // language of the sentence the word came from
};

// Assemble [CLS] words [SEP] (plus [SEP] after segment 1 when present),
// corrupt masked pieces, and fill the example. Draws one uniform per
// masked piece, plus one more on the random-replacement branch.
TrainingExample finish_example(const std::vector<StreamWord>& words, bool two_segments,
                               const Vocab& vocab, Rng& rng, GenStats& stats) {
  TrainingExample ex;
  auto push = [&](PieceId id, LangId lang, std::uint8_t seg) {
    ex.token_ids.push_back(id);
    ex.lang_ids.push_back(lang);
    ex.segment_ids.push_back(seg);
  };
  LangId frame_lang = words.empty() ? LangId{0} : words.front().sentence_lang;
  push(Vocab::kCls, frame_lang, 0);

  std::uint64_t n_mask = 0, n_keep = 0, n_random = 0, n_xling = 0;
  std::map<std::uint16_t, std::uint64_t> lang_counts;
  std::uint8_t cur_segment = 0;
  for (const StreamWord& word : words) {
    if (two_segments && word.segment == 1 && cur_segment == 0) {
      push(Vocab::kSep, frame_lang, 0);
      cur_segment = 1;
    }
    if (word.masked) {
      n_xling += word.lang != word.sentence_lang ? 1 : 0;
      lang_counts[word.lang.value] += 1;
    }
    for (PieceId label : word.pieces) {
      PieceId emit = label;
      if (word.masked) {
        double u = rng.uniform();
        if (u < 0.8) {
          emit = Vocab::kMask;
          ++n_mask;
        } else if (u < 0.9) {
          ++n_keep;
        } else {
          emit = static_cast<PieceId>(Vocab::kSpecialCount +
                                      rng.below(vocab.size() - Vocab::kSpecialCount));
          ++n_random;
        }
        ex.masked_positions.push_back(static_cast<std::uint32_t>(ex.token_ids.size()));
        ex.label_ids.push_back(label);
        ex.label_lang_ids.push_back(word.lang);
      }
      push(emit, word.lang, word.segment);
    }
  }
  push(Vocab::kSep, frame_lang, cur_segment);

  if (ex.masked_positions.empty()) return ex;  // caller skips, nothing counted
  stats.word_count += words.size();
  for (const StreamWord& w : words) stats.masked_words += w.masked ? 1 : 0;
  stats.labels_xling += n_xling;
  stats.corrupt_mask += n_mask;
  stats.corrupt_keep += n_keep;
  stats.corrupt_random += n_random;
  for (const auto& [lang, count] : lang_counts) stats.label_lang_counts[lang] += count;
  return ex;
}

std::vector<PieceId> span_pieces(const TokenizedSentence& sent, std::size_t w) {
  auto [lo, hi] = sent.word_spans[w];
  return {sent.piece_ids.begin() + lo, sent.piece_ids.begin() + hi};
}

std::size_t piece_total(const std::vector<StreamWord>& words) {
  std::size_t n = 0;
  for (const StreamWord& w : words) n += w.pieces.size();
  return n;
}

}  // namespace

TrainingExample build_dict_mlm_example(const TokenizedSentence& sent, const GenConfig& cfg,
                                       const Lexicon& lex, const Vocab& vocab, Rng& rng,
                                       GenStats& stats) {
  std::vector<bool> eligible = eligibility(sent, lex);
  std::vector<std::size_t> selected = select_mask_words(sent, lex, cfg, rng);

  std::vector<StreamWord> words(sent.word_count());
  for (std::size_t w = 0; w < sent.word_count(); ++w) {
    words[w] = {span_pieces(sent, w), sent.lang_per_word[w], 0, false, sent.lang_per_word[w]};
  }
  for (std::size_t w : selected) {
    WordLabel label = choose_label(sent.words[w], sent.lang_per_word[w], eligible[w], lex, cfg, rng);
    words[w].masked = true;
    if (!label.is_original) {
      words[w].pieces = encode_word(label.word, vocab);
      words[w].lang = label.lang;
    }
  }
  // Whole-word truncation from the right; the budget leaves room for
  // [CLS] and [SEP].
  while (!words.empty() && piece_total(words) + 2 > cfg.max_seq_len) words.pop_back();
  return finish_example(words, false, vocab, rng, stats);
}

TrainingExample build_tlm_example(const TokenizedSentence& sent, const GenConfig& cfg,
                                  const Lexicon& lex, const Vocab& vocab, Rng& rng,
                                  GenStats& stats) {
  std::vector<bool> eligible = eligibility(sent, lex);
  std::vector<StreamWord> words;
  words.reserve(sent.word_count() * 2);
  for (std::size_t w = 0; w < sent.word_count(); ++w) {
    words.push_back({span_pieces(sent, w), sent.lang_per_word[w], 0, false, sent.lang_per_word[w]});
  }
  // Code-switched copy: covered words swap to a sampled synonym with
  // probability tlm_replace_prob.
  for (std::size_t w = 0; w < sent.word_count(); ++w) {
    StreamWord copy{span_pieces(sent, w), sent.lang_per_word[w], 1, false, sent.lang_per_word[w]};
    if (eligible[w] && rng.bernoulli(cfg.tlm_replace_prob)) {
      SynonymEntry syn;
      if (lex.sample_synonym(normalized_or_self(sent.words[w]), sent.lang_per_word[w], rng, syn,
                             cfg.sampling)) {
        copy.pieces = encode_word(syn.word, vocab);
        copy.lang = syn.lang;
      }
    }
    words.push_back(std::move(copy));
  }

  // Proportional-ish truncation: drop the trailing word of whichever half
  // currently holds more pieces. Three specials frame the two segments.
  auto half_pieces = [&](std::uint8_t seg) {
    std::size_t n = 0;
    for (const StreamWord& w : words) n += w.segment == seg ? w.pieces.size() : 0;
    return n;
  };
  while (!words.empty() && piece_total(words) + 3 > cfg.max_seq_len) {
    std::uint8_t victim = half_pieces(0) > half_pieces(1) ? 0 : 1;
    for (std::size_t i = words.size(); i-- > 0;) {
      if (words[i].segment == victim) {
        words.erase(words.begin() + i);
        break;
      }
    }
  }
  if (words.empty()) return {};

  // Plain whole-word masking over the union of both halves.
  std::size_t budget = mask_budget(cfg.mask_rate, words.size());
  for (std::size_t w : rng.sample_without_replacement(words.size(), budget)) words[w].masked = true;
  return finish_example(words, true, vocab, rng, stats);
}

std::vector<TrainingExample> examples_for_sentence(const std::string& text, LangId lang,
                                                   std::uint64_t sentence_index,
                                                   const GenConfig& cfg, const Lexicon& lex,
                                                   const Vocab& vocab, GenStats& stats,
                                                   std::vector<Diagnostic>& diagnostics) {
  std::vector<TrainingExample> out;
  TokenizedSentence sent = encode(text, lang, vocab);
  stats.sentence_count += 1;
  if (sent.word_count() == 0) {
    diagnostics.push_back({"gen", sentence_index, "sentence is empty after tokenization"});
    stats.skipped_count += cfg.dup;
    return out;
  }
  for (std::uint32_t d = 0; d < cfg.dup; ++d) {
    Rng rng(derive_seed(cfg.seed, kGenStreamTag, sentence_index, d));
    TrainingExample ex = cfg.mode == GenMode::kDictTlm
                             ? build_tlm_example(sent, cfg, lex, vocab, rng, stats)
                             : build_dict_mlm_example(sent, cfg, lex, vocab, rng, stats);
    if (ex.masked_positions.empty()) {
      diagnostics.push_back({"gen", sentence_index, "truncation left no masked words"});
      stats.skipped_count += 1;
      continue;
    }
    validate(ex, cfg.max_seq_len);
    stats.example_count += 1;
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<TrainingExample> generate(SentenceStream& stream, std::uint64_t sentence_count,
                                      const GenConfig& cfg, const Lexicon& lex, const Vocab& vocab,
                                      GenStats& stats, std::vector<Diagnostic>& diagnostics) {
  std::vector<TrainingExample> out;
  out.reserve(sentence_count * cfg.dup);
  for (std::uint64_t i = 0; i < sentence_count; ++i) {
    RawSentence s = stream.next();
    std::vector<TrainingExample> exs =
        examples_for_sentence(s.text, s.lang, i, cfg, lex, vocab, stats, diagnostics);
    std::move(exs.begin(), exs.end(), std::back_inserter(out));
  }
  return out;
}

namespace {

std::vector<std::uint16_t> lang_values(const std::vector<LangId>& langs) {
  std::vector<std::uint16_t> out;
  out.reserve(langs.size());
  for (LangId l : langs) out.push_back(l.value);
  return out;
}

std::vector<LangId> lang_ids_from(const nlohmann::json& arr) {
  std::vector<LangId> out;
  out.reserve(arr.size());
  for (const auto& v : arr) out.push_back(LangId{v.get<std::uint16_t>()});
  return out;
}

}  // namespace

void write_examples(std::ostream& out, const std::vector<TrainingExample>& examples) {
  for (const TrainingExample& ex : examples) {
    nlohmann::ordered_json j;
    j["token_ids"] = ex.token_ids;
    j["lang_ids"] = lang_values(ex.lang_ids);
    j["segment_ids"] = ex.segment_ids;
    j["masked_positions"] = ex.masked_positions;
    j["label_ids"] = ex.label_ids;
    j["label_lang_ids"] = lang_values(ex.label_lang_ids);
    out << j.dump() << '\n';
  }
  if (!out) fail_data("failed writing examples");
}

std::vector<TrainingExample> read_examples(std::istream& in, const std::string& source_label) {
  std::vector<TrainingExample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      fail_data(source_label, ":", line_no, ": malformed example record");
    }
    try {
      TrainingExample ex;
      ex.token_ids = j.at("token_ids").get<std::vector<PieceId>>();
      ex.lang_ids = lang_ids_from(j.at("lang_ids"));
      ex.segment_ids = j.at("segment_ids").get<std::vector<std::uint8_t>>();
      ex.masked_positions = j.at("masked_positions").get<std::vector<std::uint32_t>>();
      ex.label_ids = j.at("label_ids").get<std::vector<PieceId>>();
      ex.label_lang_ids = lang_ids_from(j.at("label_lang_ids"));
      out.push_back(std::move(ex));
    } catch (const nlohmann::json::exception& e) {
      fail_data(source_label, ":", line_no, ": bad example record: ", e.what());
    }
  }
  return out;
}

void write_stats(std::ostream& out, const GenStats& stats, const LanguageRegistry& registry) {
  nlohmann::ordered_json j;
  j["example_count"] = stats.example_count;
  j["sentence_count"] = stats.sentence_count;
  j["skipped_count"] = stats.skipped_count;
  j["word_count"] = stats.word_count;
  j["masked_words"] = stats.masked_words;
  j["mask_rate"] = stats.mask_rate();
  j["xling_label_fraction"] = stats.xling_fraction();
  std::uint64_t pieces = stats.corrupt_mask + stats.corrupt_keep + stats.corrupt_random;
  nlohmann::ordered_json corr;
  corr["mask"] = pieces ? static_cast<double>(stats.corrupt_mask) / pieces : 0.0;
  corr["keep"] = pieces ? static_cast<double>(stats.corrupt_keep) / pieces : 0.0;
  corr["random"] = pieces ? static_cast<double>(stats.corrupt_random) / pieces : 0.0;
  j["corruption"] = corr;
  nlohmann::ordered_json langs;
  for (const auto& [lang, count] : stats.label_lang_counts) {
    langs[registry.code_of(LangId{lang})] = count;
  }
  j["label_languages"] = langs;
  out << j.dump(2) << '\n';
  if (!out) fail_data("failed writing stats");
}

}  // namespace dictmlm
