#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "dictmlm/corpus.hpp"
#include "dictmlm/examplegen.hpp"
#include "dictmlm/lang.hpp"
#include "dictmlm/lexicon.hpp"
#include "dictmlm/rng.hpp"
#include "dictmlm/tokenizer.hpp"

using namespace dictmlm;

namespace {

Vocab hand_vocab(std::vector<std::string> extra) {
  std::vector<std::string> pieces = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
  pieces.insert(pieces.end(), extra.begin(), extra.end());
  return Vocab(std::move(pieces));
}

Lexicon make_lexicon(LanguageRegistry& reg,
                     const std::vector<std::tuple<std::string, std::string, std::string, std::string>>&
                         rows) {
  std::vector<ParsedDictFile> files;
  for (const auto& [src_code, tgt_code, word, syn] : rows) {
    std::istringstream in(word + " " + syn + "\n");
    files.push_back(parse_muse(in, reg.add(src_code), reg.add(tgt_code), "fixture"));
  }
  return merge(reg, files, false);
}

bool same_example(const TrainingExample& a, const TrainingExample& b) {
  return a.token_ids == b.token_ids && a.lang_ids == b.lang_ids &&
         a.segment_ids == b.segment_ids && a.masked_positions == b.masked_positions &&
         a.label_ids == b.label_ids && a.label_lang_ids == b.label_lang_ids;
}

// en sentence with exactly one lexicon-covered word, "life" -> es "vida".
struct LifeFixture {
  LanguageRegistry reg;
  Lexicon lex;
  Vocab vocab;
  TokenizedSentence sent;

  LifeFixture()
      : lex(make_lexicon(reg, {{"en", "es", "life", "vida"}})),
        vocab(hand_vocab({"food", "and", "water", "are", "necessities", "of", "life", "vida"})),
        sent(encode("food and water are necessities of life", reg.id_of("en"), vocab)) {}
};

struct Scratch {
  std::filesystem::path dir;
  Scratch() {
    static int counter = 0;
    dir = std::filesystem::temp_directory_path() /
          ("dictmlm_gen_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(dir);
  }
  ~Scratch() { std::filesystem::remove_all(dir); }
  std::string file(const std::string& name, const std::string& content) const {
    std::ofstream out(dir / name, std::ios::binary);
    out << content;
    return (dir / name).string();
  }
};

}  // namespace

TEST_CASE("mask selection fills the rounded budget covered-first") {
  LanguageRegistry reg;
  Lexicon lex = make_lexicon(reg, {{"en", "es", "w3", "s3"}});
  LangId en = reg.id_of("en");
  Vocab vocab = hand_vocab({"w0", "w1", "w2", "w3", "w4"});
  GenConfig cfg;

  std::string text;
  for (int i = 0; i < 20; ++i) text += "w" + std::to_string(i % 5) + " ";
  TokenizedSentence sent = encode(text, en, vocab);
  REQUIRE(sent.word_count() == 20);

  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    std::vector<std::size_t> picked = select_mask_words(sent, lex, cfg, rng);
    CHECK(picked.size() == 3);  // round(0.15 * 20)
    CHECK(std::is_sorted(picked.begin(), picked.end()));
    // The four "w3" positions are the covered pool; with budget 3 every
    // pick comes from it.
    for (std::size_t w : picked) CHECK(sent.words[w] == "w3");
  }

  // A single covered word is always taken before any uncovered one.
  TokenizedSentence one = encode("w0 w1 w2 w3 w0 w1 w2 w0 w1 w2 w0 w1 w2 w0 w1 w2 w0 w1 w2 w0",
                                 en, vocab);
  bool found_uncovered = false;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    std::vector<std::size_t> picked = select_mask_words(one, lex, cfg, rng);
    REQUIRE(picked.size() == 3);
    CHECK(std::count(picked.begin(), picked.end(), std::size_t{3}) == 1);
    for (std::size_t w : picked) found_uncovered |= w != 3;
  }
  CHECK(found_uncovered);

  // No lexicon for the language: the budget is filled with plain words.
  Lexicon empty;
  Rng rng(1);
  CHECK(select_mask_words(sent, empty, cfg, rng).size() == 3);

  // Budget floor: short sentences still mask one word.
  TokenizedSentence tiny = encode("w0 w1", en, vocab);
  Rng rng2(2);
  CHECK(select_mask_words(tiny, empty, cfg, rng2).size() == 1);
}

TEST_CASE("eligible-only pool restricts budget and selection to covered words") {
  LanguageRegistry reg;
  Lexicon lex = make_lexicon(reg, {{"en", "es", "cov", "syn"}});
  LangId en = reg.id_of("en");
  Vocab vocab = hand_vocab({"cov", "oth"});
  GenConfig cfg;
  cfg.pool = MaskPool::kEligibleOnly;

  // 10 covered of 20 words: budget = round(0.15 * 10) = 2, all covered.
  std::string text;
  for (int i = 0; i < 10; ++i) text += "cov oth ";
  TokenizedSentence sent = encode(text, en, vocab);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    std::vector<std::size_t> picked = select_mask_words(sent, lex, cfg, rng);
    REQUIRE(picked.size() == 2);
    for (std::size_t w : picked) CHECK(sent.words[w] == "cov");
  }

  // Nothing covered: falls back to the all-words budget.
  Lexicon empty;
  Rng rng(3);
  CHECK(select_mask_words(sent, empty, cfg, rng).size() == 3);
}

TEST_CASE("label choice follows the cross-lingual probability") {
  LifeFixture fx;
  LangId en = fx.reg.id_of("en"), es = fx.reg.id_of("es");
  GenConfig cfg;

  // t = 0 keeps the original and consumes no randomness.
  cfg.t = 0.0;
  Rng a(7), b(7);
  WordLabel lab = choose_label("life", en, true, fx.lex, cfg, a);
  CHECK(lab.is_original);
  CHECK(lab.word == "life");
  CHECK(lab.lang == en);
  CHECK(a.uniform() == b.uniform());

  // t = 1 on a covered word with only cross-language synonyms.
  cfg.t = 1.0;
  Rng c(7);
  lab = choose_label("life", en, true, fx.lex, cfg, c);
  CHECK_FALSE(lab.is_original);
  CHECK(lab.word == "vida");
  CHECK(lab.lang == es);

  // Uncovered words keep the original even at t = 1, without drawing.
  Rng d(9), e(9);
  lab = choose_label("water", en, false, fx.lex, cfg, d);
  CHECK(lab.is_original);
  CHECK(d.uniform() == e.uniform());

  // Vanilla mode ignores t entirely.
  cfg.mode = GenMode::kVanillaMlm;
  Rng f(9), g(9);
  lab = choose_label("life", en, true, fx.lex, cfg, f);
  CHECK(lab.is_original);
  CHECK(f.uniform() == g.uniform());

  // t = 0.5 lands on half cross-lingual labels.
  cfg = GenConfig{};
  cfg.t = 0.5;
  Rng mc(11);
  int xling = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    xling += choose_label("life", en, true, fx.lex, cfg, mc).is_original ? 0 : 1;
  }
  CHECK(std::abs(double(xling) / n - 0.5) < 0.005);
}

TEST_CASE("a masked covered word carries its synonym's pieces and language") {
  LifeFixture fx;
  LangId en = fx.reg.id_of("en"), es = fx.reg.id_of("es");
  GenConfig cfg;
  cfg.t = 1.0;
  const PieceId vida = fx.vocab.id_of("vida");
  const PieceId life = fx.vocab.id_of("life");

  int saw_mask = 0, saw_keep = 0, saw_random = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Rng rng(seed);
    GenStats stats;
    TrainingExample ex = build_dict_mlm_example(fx.sent, cfg, fx.lex, fx.vocab, rng, stats);
    validate(ex, cfg.max_seq_len);
    REQUIRE(ex.token_ids.size() == 9);  // [CLS] + 7 words + [SEP]

    // Budget 1 and covered-first selection pin the masked word to "life";
    // the label is always the synonym.
    REQUIRE(ex.masked_positions.size() == 1);
    std::uint32_t pos = ex.masked_positions[0];
    CHECK(pos == 7);
    CHECK(ex.label_ids[0] == vida);
    CHECK(ex.label_lang_ids[0] == es);
    CHECK(ex.lang_ids[pos] == es);
    for (std::size_t i = 1; i + 1 < ex.token_ids.size(); ++i) {
      if (i != pos) {
        CHECK(ex.lang_ids[i] == en);
        CHECK(ex.token_ids[i] != life);  // unmasked words are untouched
      }
    }
    for (std::uint8_t seg : ex.segment_ids) CHECK(seg == 0);

    // The in-stream token is the corrupted synonym. The 10% random branch
    // may land on any non-special piece, "life" included.
    PieceId tok = ex.token_ids[pos];
    if (tok == Vocab::kMask) {
      ++saw_mask;
    } else if (tok == vida) {
      ++saw_keep;
    } else {
      ++saw_random;
    }
    CHECK(stats.labels_xling == 1);
    CHECK(stats.label_lang_counts.at(es.value) == 1);
  }
  CHECK(saw_mask > saw_keep);
  CHECK(saw_mask > saw_random);
  CHECK(saw_keep > 0);
  CHECK(saw_random > 0);
}

TEST_CASE("a multi-piece label replaces the word's span piece for piece") {
  LanguageRegistry reg;
  Lexicon lex = make_lexicon(reg, {{"en", "es", "life", "vida"}});
  LangId es = reg.id_of("es");
  // No whole "vida": the label segments as two pieces.
  Vocab vocab = hand_vocab({"one", "life", "vi", "##da"});
  TokenizedSentence sent = encode("one life", reg.id_of("en"), vocab);
  GenConfig cfg;
  cfg.t = 1.0;

  Rng rng(4);
  GenStats stats;
  TrainingExample ex = build_dict_mlm_example(sent, cfg, lex, vocab, rng, stats);
  validate(ex, cfg.max_seq_len);
  REQUIRE(ex.token_ids.size() == 5);  // [CLS] one vi ##da [SEP]
  REQUIRE(ex.masked_positions.size() == 2);
  CHECK(ex.masked_positions[0] == 2);
  CHECK(ex.masked_positions[1] == 3);
  CHECK(ex.label_ids[0] == vocab.id_of("vi"));
  CHECK(ex.label_ids[1] == vocab.id_of("##da"));
  CHECK(ex.label_lang_ids[0] == es);
  CHECK(ex.label_lang_ids[1] == es);
  for (std::size_t i = 0; i < ex.masked_positions.size(); ++i) {
    CHECK(ex.label_lang_ids[i] == ex.lang_ids[ex.masked_positions[i]]);
  }
}

TEST_CASE("one example can mix three languages") {
  LanguageRegistry reg;
  Lexicon lex = make_lexicon(reg, {{"en", "es", "alpha", "uno"}, {"en", "fr", "beta", "deux"}});
  LangId en = reg.id_of("en"), es = reg.id_of("es"), fr = reg.id_of("fr");
  Vocab vocab = hand_vocab({"alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta",
                            "iota", "kappa", "uno", "deux"});
  TokenizedSentence sent =
      encode("alpha beta gamma delta epsilon zeta eta theta iota kappa", en, vocab);
  GenConfig cfg;
  cfg.t = 1.0;

  Rng rng(0);
  GenStats stats;
  TrainingExample ex = build_dict_mlm_example(sent, cfg, lex, vocab, rng, stats);
  validate(ex, cfg.max_seq_len);
  // Budget 2 = both covered words, each swapped to its only synonym.
  std::set<std::uint16_t> langs;
  for (LangId l : ex.lang_ids) langs.insert(l.value);
  CHECK(langs == std::set<std::uint16_t>{en.value, es.value, fr.value});
  REQUIRE(ex.masked_positions.size() == 2);
  CHECK(ex.label_ids[0] == vocab.id_of("uno"));
  CHECK(ex.label_ids[1] == vocab.id_of("deux"));
}

TEST_CASE("dict-mlm at t zero is bitwise vanilla") {
  LifeFixture fx;
  GenConfig dict;
  dict.t = 0.0;
  dict.dup = 3;
  GenConfig vanilla;
  vanilla.mode = GenMode::kVanillaMlm;
  vanilla.dup = 3;
  vanilla.t = 0.7;  // ignored by the mode, must not desync the stream

  GenStats sa, sb;
  std::vector<Diagnostic> da, db;
  std::vector<TrainingExample> a =
      examples_for_sentence("food and water are necessities of life", fx.reg.id_of("en"), 12, dict,
                            fx.lex, fx.vocab, sa, da);
  std::vector<TrainingExample> b =
      examples_for_sentence("food and water are necessities of life", fx.reg.id_of("en"), 12,
                            vanilla, fx.lex, fx.vocab, sb, db);
  REQUIRE(a.size() == 3);
  REQUIRE(b.size() == 3);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(same_example(a[i], b[i]));
  CHECK(sa.labels_xling == 0);
  CHECK(sb.labels_xling == 0);
}

TEST_CASE("duplication emits distinct masks from one sentence") {
  LanguageRegistry reg;
  Lexicon lex;
  std::vector<std::string> words;
  for (int i = 0; i < 20; ++i) words.push_back("w" + std::to_string(i));
  Vocab vocab = hand_vocab(words);
  std::string text;
  for (const std::string& w : words) text += w + " ";

  GenConfig cfg;
  cfg.dup = 5;
  GenStats stats;
  std::vector<Diagnostic> diags;
  std::vector<TrainingExample> exs =
      examples_for_sentence(text, reg.add("en"), 0, cfg, lex, vocab, stats, diags);
  REQUIRE(exs.size() == 5);
  std::set<std::vector<std::uint32_t>> masks;
  for (const TrainingExample& ex : exs) masks.insert(ex.masked_positions);
  CHECK(masks.size() == 5);

  // The variant streams are pure functions of (seed, sentence index,
  // variant): a second call reproduces them exactly.
  GenStats stats2;
  std::vector<Diagnostic> diags2;
  std::vector<TrainingExample> again =
      examples_for_sentence(text, LangId{0}, 0, cfg, lex, vocab, stats2, diags2);
  REQUIRE(again.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) CHECK(same_example(exs[i], again[i]));

  // A different sentence index reshuffles the masks.
  std::vector<TrainingExample> other =
      examples_for_sentence(text, LangId{0}, 1, cfg, lex, vocab, stats2, diags2);
  CHECK_FALSE(same_example(exs[0], other[0]));

  cfg.dup = 1;
  GenStats stats3;
  std::vector<TrainingExample> one =
      examples_for_sentence(text, LangId{0}, 0, cfg, lex, vocab, stats3, diags2);
  CHECK(one.size() == 1);
}

TEST_CASE("generation over a corpus stream hits the exact mask rate") {
  Scratch tmp;
  std::string line;
  for (int i = 0; i < 20; ++i) line += "tok ";
  std::string corpus;
  for (int i = 0; i < 500; ++i) corpus += line + "\n";
  std::string corpus_path = tmp.file("en.txt", corpus);
  std::string manifest_path =
      tmp.file("manifest.json", "[{\"lang\": \"en\", \"path\": \"" + corpus_path + "\"}]");

  LanguageRegistry reg;
  CorpusManifest manifest = load_manifest(manifest_path, reg);
  SamplingPolicy policy;
  SentenceStream stream(manifest, policy, reg);

  Lexicon lex;
  Vocab vocab = hand_vocab({"tok"});
  GenConfig cfg;
  cfg.dup = 2;
  GenStats stats;
  std::vector<Diagnostic> diags;
  std::vector<TrainingExample> exs = generate(stream, 500, cfg, lex, vocab, stats, diags);

  CHECK(exs.size() == 1000);
  CHECK(stats.example_count == 1000);
  CHECK(stats.sentence_count == 500);
  CHECK(stats.word_count == 20000);
  // 20-word sentences make the rounded budget exactly 3.
  CHECK(stats.masked_words == 3000);
  CHECK(stats.mask_rate() == doctest::Approx(0.15).epsilon(1e-12));
  CHECK(diags.empty());

  // Corruption outcomes concentrate near 80/10/10 over 3000 pieces.
  std::uint64_t pieces = stats.corrupt_mask + stats.corrupt_keep + stats.corrupt_random;
  CHECK(pieces == 3000);
  CHECK(std::abs(double(stats.corrupt_mask) / pieces - 0.8) < 0.03);
  CHECK(std::abs(double(stats.corrupt_keep) / pieces - 0.1) < 0.02);
  CHECK(std::abs(double(stats.corrupt_random) / pieces - 0.1) < 0.02);
}

TEST_CASE("unusable sentences are skipped with a diagnostic") {
  LifeFixture fx;
  GenConfig cfg;
  cfg.dup = 4;
  GenStats stats;
  std::vector<Diagnostic> diags;
  std::vector<TrainingExample> exs =
      examples_for_sentence("   ", fx.reg.id_of("en"), 9, cfg, fx.lex, fx.vocab, stats, diags);
  CHECK(exs.empty());
  CHECK(stats.skipped_count == 4);
  REQUIRE(diags.size() == 1);
  CHECK(diags[0].line == 9);

  // Truncation that consumes the whole sentence also skips.
  Vocab chars = hand_vocab({"a", "##b", "##c", "##d", "##e", "##f", "##g"});
  GenConfig small;
  small.max_seq_len = 8;
  small.dup = 1;
  GenStats stats2;
  std::vector<Diagnostic> diags2;
  std::vector<TrainingExample> none = examples_for_sentence(
      "abcdefg abcdefg", LangId{0}, 0, small, Lexicon{}, chars, stats2, diags2);
  CHECK(none.empty());
  CHECK(stats2.skipped_count == 1);
  REQUIRE(diags2.size() == 1);

  // With room for one of the two words, the example either shrinks (the
  // kept word was masked) or is skipped (the mask landed on the dropped
  // word). Both branches occur across sentence indices.
  small.max_seq_len = 12;
  int shrunk = 0, dropped = 0;
  for (std::uint64_t idx = 0; idx < 10; ++idx) {
    GenStats stats3;
    std::vector<TrainingExample> one = examples_for_sentence(
        "abcdefg abcdefg", LangId{0}, idx, small, Lexicon{}, chars, stats3, diags2);
    if (one.empty()) {
      ++dropped;
      CHECK(stats3.skipped_count == 1);
    } else {
      ++shrunk;
      CHECK(one[0].token_ids.size() == 9);  // [CLS] + 7 pieces + [SEP]
      validate(one[0], small.max_seq_len);
    }
  }
  CHECK(shrunk > 0);
  CHECK(dropped > 0);
}

TEST_CASE("validation rejects each broken structural invariant") {
  LifeFixture fx;
  GenConfig cfg;
  Rng rng(1);
  GenStats stats;
  TrainingExample good = build_dict_mlm_example(fx.sent, cfg, fx.lex, fx.vocab, rng, stats);
  validate(good, cfg.max_seq_len);

  auto broken = [&](auto&& mutate) {
    TrainingExample ex = good;
    mutate(ex);
    CHECK_THROWS_AS(validate(ex, cfg.max_seq_len), DataError);
  };
  broken([](TrainingExample& ex) { ex.lang_ids.pop_back(); });
  broken([](TrainingExample& ex) { ex.token_ids.front() = 7; });
  broken([](TrainingExample& ex) { ex.token_ids.back() = Vocab::kPad; });
  broken([](TrainingExample& ex) {
    ex.masked_positions.clear();
    ex.label_ids.clear();
    ex.label_lang_ids.clear();
  });
  broken([](TrainingExample& ex) { ex.label_ids.push_back(9); });
  broken([](TrainingExample& ex) {
    ex.masked_positions.push_back(ex.masked_positions.back());
    ex.label_ids.push_back(ex.label_ids.back());
    ex.label_lang_ids.push_back(ex.label_lang_ids.back());
  });
  broken([](TrainingExample& ex) { ex.masked_positions[0] = 0; });  // [CLS]
  broken([](TrainingExample& ex) { ex.label_ids[0] = Vocab::kMask; });
  broken([](TrainingExample& ex) { ex.segment_ids[2] = 2; });
  broken([](TrainingExample& ex) {
    ex.segment_ids[1] = 1;  // 1 then 0 is out of order
  });
  CHECK_THROWS_AS(validate(good, 4), DataError);  // length cap
}

TEST_CASE("tlm examples concatenate the original and a code-switched copy") {
  LanguageRegistry reg;
  Lexicon lex = make_lexicon(reg, {{"en", "es", "red", "rojo"}});
  LangId en = reg.id_of("en"), es = reg.id_of("es");
  Vocab vocab = hand_vocab({"red", "fish", "rojo"});
  TokenizedSentence sent = encode("red fish", en, vocab);

  GenConfig cfg;
  cfg.mode = GenMode::kDictTlm;

  // Full replacement: the covered word's copy is the synonym.
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    Rng rng(seed);
    GenStats stats;
    TrainingExample ex = build_tlm_example(sent, cfg, lex, vocab, rng, stats);
    validate(ex, cfg.max_seq_len);
    REQUIRE(ex.token_ids.size() == 7);  // [CLS] red fish [SEP] rojo fish [SEP]
    CHECK(ex.token_ids[3] == Vocab::kSep);
    CHECK((std::vector<std::uint8_t>(ex.segment_ids) ==
           std::vector<std::uint8_t>{0, 0, 0, 0, 1, 1, 1}));
    CHECK(ex.lang_ids[4] == es);
    CHECK(ex.lang_ids[5] == en);
    REQUIRE(ex.masked_positions.size() == 1);  // budget over 4 words is 1
    // Labels are the in-place tokens: position 4 labels as the synonym.
    std::uint32_t pos = ex.masked_positions[0];
    if (pos == 4) {
      CHECK(ex.label_ids[0] == vocab.id_of("rojo"));
      CHECK(ex.label_lang_ids[0] == es);
    } else {
      CHECK(ex.label_lang_ids[0] == en);
    }
    CHECK(ex.label_lang_ids[0] == ex.lang_ids[pos]);
  }

  // No replacement: the second half repeats the first.
  cfg.tlm_replace_prob = 0.0;
  Rng rng(5);
  GenStats stats;
  TrainingExample ex = build_tlm_example(sent, cfg, lex, vocab, rng, stats);
  REQUIRE(ex.token_ids.size() == 7);
  CHECK(ex.lang_ids[4] == en);
  std::uint32_t pos = ex.masked_positions.empty() ? 0 : ex.masked_positions[0];
  for (std::size_t i = 1; i <= 2; ++i) {
    if (i != pos && i + 3 != pos) CHECK(ex.token_ids[i] == ex.token_ids[i + 3]);
  }

  // A single covered word still masks exactly one of the two copies.
  cfg.tlm_replace_prob = 1.0;
  TokenizedSentence solo = encode("red", en, vocab);
  Rng rng2(8);
  GenStats stats2;
  TrainingExample tiny = build_tlm_example(solo, cfg, lex, vocab, rng2, stats2);
  validate(tiny, cfg.max_seq_len);
  REQUIRE(tiny.token_ids.size() == 5);  // [CLS] red [SEP] rojo [SEP]
  CHECK(tiny.masked_positions.size() == 1);
  CHECK(tiny.lang_ids[3] == es);
}

TEST_CASE("examples round-trip through the jsonl format") {
  LifeFixture fx;
  GenConfig cfg;
  cfg.t = 1.0;
  cfg.dup = 3;
  GenStats stats;
  std::vector<Diagnostic> diags;
  std::vector<TrainingExample> exs =
      examples_for_sentence("food and water are necessities of life", fx.reg.id_of("en"), 0, cfg,
                            fx.lex, fx.vocab, stats, diags);
  REQUIRE(exs.size() == 3);

  std::ostringstream out;
  write_examples(out, exs);
  std::istringstream in(out.str());
  std::vector<TrainingExample> back = read_examples(in, "mem");
  REQUIRE(back.size() == exs.size());
  for (std::size_t i = 0; i < exs.size(); ++i) CHECK(same_example(exs[i], back[i]));

  std::istringstream bad("this is not json\n");
  CHECK_THROWS_AS(read_examples(bad, "mem"), DataError);
  std::istringstream missing("{\"token_ids\": [2, 6, 3]}\n");
  CHECK_THROWS_AS(read_examples(missing, "mem"), DataError);

  // The stats sidecar names languages by code.
  std::ostringstream sout;
  write_stats(sout, stats, fx.reg);
  CHECK(sout.str().find("\"es\"") != std::string::npos);
  CHECK(sout.str().find("mask_rate") != std::string::npos);
}

TEST_CASE("stats merge adds counters fieldwise") {
  GenStats a, b;
  a.example_count = 3;
  a.masked_words = 10;
  a.word_count = 60;
  a.labels_xling = 4;
  a.label_lang_counts[1] = 4;
  b.example_count = 2;
  b.masked_words = 5;
  b.word_count = 40;
  b.labels_xling = 5;
  b.label_lang_counts[1] = 2;
  b.label_lang_counts[2] = 3;
  a.merge(b);
  CHECK(a.example_count == 5);
  CHECK(a.word_count == 100);
  CHECK(a.mask_rate() == doctest::Approx(0.15).epsilon(1e-12));
  CHECK(a.xling_fraction() == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(a.label_lang_counts[1] == 6);
  CHECK(a.label_lang_counts[2] == 3);

  GenStats zero;
  CHECK(zero.mask_rate() == 0.0);
  CHECK(zero.xling_fraction() == 0.0);
}

TEST_CASE("config validation and mode names reject bad input") {
  auto reject = [](auto&& mutate) {
    GenConfig cfg;
    mutate(cfg);
    CHECK_THROWS_AS(cfg.check(), UsageError);
  };
  reject([](GenConfig& c) { c.mask_rate = 0.0; });
  reject([](GenConfig& c) { c.mask_rate = 1.0; });
  reject([](GenConfig& c) { c.t = 1.5; });
  reject([](GenConfig& c) { c.dup = 0; });
  reject([](GenConfig& c) { c.tlm_replace_prob = -0.5; });
  reject([](GenConfig& c) { c.max_seq_len = 4; });
  GenConfig{}.check();

  CHECK(parse_gen_mode("dict-mlm") == GenMode::kDictMlm);
  CHECK(parse_gen_mode("dict-tlm") == GenMode::kDictTlm);
  CHECK(parse_gen_mode("vanilla") == GenMode::kVanillaMlm);
  CHECK(gen_mode_name(GenMode::kDictTlm) == std::string("dict-tlm"));
  CHECK_THROWS_AS(parse_gen_mode("bert"), UsageError);
}
