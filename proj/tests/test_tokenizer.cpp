#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>
#include <string>
#include <vector>

#include "dictmlm/common.hpp"
#include "dictmlm/tokenizer.hpp"

using namespace dictmlm;

namespace {

Vocab hand_vocab(std::vector<std::string> extra) {
  std::vector<std::string> pieces = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
  pieces.insert(pieces.end(), extra.begin(), extra.end());
  return Vocab(std::move(pieces));
}

}  // namespace

TEST_CASE("special pieces hold their fixed ids") {
  CHECK(Vocab::kPad == 0);
  CHECK(Vocab::kUnk == 1);
  CHECK(Vocab::kCls == 2);
  CHECK(Vocab::kSep == 3);
  CHECK(Vocab::kMask == 4);
  Vocab v = hand_vocab({"walk", "##ing"});
  CHECK(v.piece(Vocab::kMask) == "[MASK]");
  CHECK(v.is_special(4));
  CHECK_FALSE(v.is_special(5));
  CHECK(v.is_continuation(v.id_of("##ing")));
  CHECK_FALSE(v.is_continuation(v.id_of("walk")));

  // A vocab that reorders or omits the specials is rejected.
  CHECK_THROWS_AS((Vocab({"[UNK]", "[PAD]", "[CLS]", "[SEP]", "[MASK]"})), DataError);
  CHECK_THROWS_AS((Vocab({"[PAD]", "[UNK]", "[CLS]"})), DataError);
  CHECK_THROWS_AS((hand_vocab({"walk", "walk"})), DataError);
}

TEST_CASE("pretokenize splits whitespace and isolates punctuation") {
  std::vector<std::string> words = pretokenize("don't stop,  now!");
  CHECK((words == std::vector<std::string>{"don", "'", "t", "stop", ",", "now", "!"}));
  CHECK(pretokenize(" \t\n ").empty());
  CHECK((pretokenize("a b") == std::vector<std::string>{"a", "b"}));  // NBSP is whitespace
}

TEST_CASE("vocab training merges the most frequent pair") {
  // Alphabet of "aa" is {a, ##a}: floor is 7 pieces. One more slot admits
  // the single merge and produces the whole-word piece.
  std::vector<std::string> corpus = {"aa aa aa"};
  Vocab merged = train_vocab(corpus, 8, 1);
  CHECK(merged.has("aa"));

  // At the floor itself there is no merge budget: characters plus specials.
  Vocab floor = train_vocab(corpus, 7, 1);
  CHECK(floor.size() == 7);
  CHECK(floor.has("a"));
  CHECK(floor.has("##a"));
  CHECK_FALSE(floor.has("aa"));

  CHECK_THROWS_AS(train_vocab(corpus, 6, 1), UsageError);
  CHECK_THROWS_AS(train_vocab({"   "}, 100, 1), DataError);
}

TEST_CASE("vocab training respects the merge frequency threshold") {
  // Every pair occurs once, so min_freq 2 stops before any merge.
  std::vector<std::string> corpus = {"ab cd"};
  Vocab v = train_vocab(corpus, 50, 2);
  CHECK(v.size() == Vocab::kSpecialCount + 4);  // a, ##b, c, ##d
  CHECK_FALSE(v.has("ab"));

  Vocab v1 = train_vocab(corpus, 50, 1);
  CHECK(v1.has("ab"));
  CHECK(v1.has("cd"));
}

TEST_CASE("vocab training is deterministic") {
  std::vector<std::string> corpus = {"the cat sat on the mat", "the bat and the rat",
                                     "cats chase rats", "a cat and a mat"};
  std::ostringstream run1, run2;
  train_vocab(corpus, 60, 1).write(run1);
  train_vocab(corpus, 60, 1).write(run2);
  CHECK(run1.str() == run2.str());
  CHECK(run1.str().find("[PAD]\n[UNK]\n[CLS]\n[SEP]\n[MASK]\n") == 0);
}

TEST_CASE("vocab file round-trips and rejects malformed input") {
  Vocab v = hand_vocab({"walk", "##ing", "w"});
  std::ostringstream out;
  v.write(out);
  std::istringstream in(out.str());
  Vocab back = Vocab::read(in, "test");
  CHECK(back.size() == v.size());
  CHECK(back.id_of("##ing") == v.id_of("##ing"));

  std::istringstream crlf("[PAD]\r\n[UNK]\r\n[CLS]\r\n[SEP]\r\n[MASK]\r\n");
  CHECK(Vocab::read(crlf, "crlf").size() == 5);

  std::istringstream blank("[PAD]\n\n[CLS]\n");
  CHECK_THROWS_AS(Vocab::read(blank, "blank"), DataError);
  std::istringstream empty("");
  CHECK_THROWS_AS(Vocab::read(empty, "empty"), DataError);
}

TEST_CASE("encode segments greedily with longest match first") {
  Vocab v = hand_vocab({"walk", "##ing", "walking"});
  // The full word is itself a piece, so greedy takes it in one span.
  TokenizedSentence whole = encode("walking", LangId{0}, v);
  REQUIRE(whole.piece_ids.size() == 1);
  CHECK(whole.piece_ids[0] == v.id_of("walking"));

  // Without the whole-word piece the prefix plus continuation is chosen.
  Vocab split = hand_vocab({"walk", "##ing"});
  TokenizedSentence s = encode("walking", LangId{0}, split);
  REQUIRE(s.piece_ids.size() == 2);
  CHECK(s.piece_ids[0] == split.id_of("walk"));
  CHECK(s.piece_ids[1] == split.id_of("##ing"));
  REQUIRE(s.word_count() == 1);
  CHECK((s.word_spans[0] == std::pair<std::uint32_t, std::uint32_t>{0, 2}));
  CHECK(s.words[0] == "walking");
}

TEST_CASE("unsegmentable and oversized words become single unk spans") {
  Vocab v = hand_vocab({"a", "##a", "b"});
  TokenizedSentence s = encode("zebra aa", LangId{0}, v);
  REQUIRE(s.word_count() == 2);
  CHECK(s.piece_ids[0] == Vocab::kUnk);  // no piece covers 'z'
  CHECK((s.word_spans[0] == std::pair<std::uint32_t, std::uint32_t>{0, 1}));
  CHECK((s.word_spans[1] == std::pair<std::uint32_t, std::uint32_t>{1, 3}));

  // A word needing more than the per-word piece limit collapses to [UNK].
  std::string long_word(kMaxPiecesPerWord + 1, 'a');
  std::vector<PieceId> pieces = encode_word(long_word, v);
  CHECK(pieces == std::vector<PieceId>{Vocab::kUnk});
  std::string at_limit(kMaxPiecesPerWord, 'a');
  CHECK(encode_word(at_limit, v).size() == kMaxPiecesPerWord);

  CHECK(encode("   ", LangId{0}, v).piece_ids.empty());
}

TEST_CASE("encode upholds span structure invariants") {
  std::vector<std::string> corpus = {"the cat sat on the mat", "matting patterns", "on and on"};
  Vocab v = train_vocab(corpus, 45, 1);
  TokenizedSentence s = encode("the matting cat sat patterns on", LangId{3}, v);
  REQUIRE(s.word_count() == 6);
  CHECK((s.lang_per_word == std::vector<LangId>(6, LangId{3})));

  std::size_t covered = 0;
  std::uint32_t prev_end = 0;
  for (auto [start, end] : s.word_spans) {
    CHECK(start == prev_end);  // ordered, disjoint, gap-free
    CHECK(end > start);
    CHECK_FALSE(v.is_continuation(s.piece_ids[start]) );
    for (std::uint32_t i = start + 1; i < end; ++i) {
      if (s.piece_ids[i] != Vocab::kUnk) CHECK(v.is_continuation(s.piece_ids[i]));
    }
    covered += end - start;
    prev_end = end;
  }
  CHECK(covered == s.piece_ids.size());
}

TEST_CASE("no longer prefix piece exists than the one greedy chose") {
  std::vector<std::string> corpus = {"interchange internal inter in intern",
                                     "interchange interchange internal intern"};
  Vocab v = train_vocab(corpus, 64, 1);
  for (std::string word : {"interchange", "internal", "intern", "inter", "int"}) {
    std::vector<PieceId> ids = encode_word(word, v);
    if (ids.size() == 1 && ids[0] == Vocab::kUnk) continue;
    std::size_t pos = 0;
    for (PieceId id : ids) {
      const std::string& piece = v.piece(id);
      std::size_t len = piece.size() - (v.is_continuation(id) ? 2 : 0);
      // Exhaustive scan: every strictly longer prefix must be absent.
      for (std::size_t longer = len + 1; longer <= word.size() - pos; ++longer) {
        std::string cand = word.substr(pos, longer);
        if (pos > 0) cand = "##" + cand;
        CHECK_FALSE(v.has(cand));
      }
      pos += len;
    }
    CHECK(pos == word.size());
  }
}

TEST_CASE("decode inverts encode and keeps the unk marker") {
  std::vector<std::string> corpus = {"shared word pieces join back together",
                                     "pieces of shared words"};
  Vocab v = train_vocab(corpus, 80, 1);
  std::string text = "shared pieces join back";
  CHECK(decode(encode(text, LangId{0}, v).piece_ids, v) == text);

  // Structural specials vanish; [UNK] survives as its literal marker.
  TokenizedSentence s = encode("shared zzz pieces", LangId{0}, v);
  CHECK(decode(s.piece_ids, v) == "shared [UNK] pieces");
  std::vector<PieceId> framed = {Vocab::kCls, v.id_of("join"), Vocab::kSep, Vocab::kPad};
  CHECK(decode(framed, v) == "join");

  CHECK_THROWS_AS((void)decode({PieceId(60000)}, v), DataError);
}
