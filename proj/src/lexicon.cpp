#include "dictmlm/lexicon.hpp"

#include <algorithm>
#include <istream>
#include <ostream>

#include <json.hpp>

#include "dictmlm/unicode.hpp"

namespace dictmlm {

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
    if (j > i) fields.push_back(line.substr(i, j - i));
    i = j;
  }
  return fields;
}

}  // namespace

ParsedDictFile parse_muse(std::istream& in, LangId src, LangId tgt,
                          const std::string& source_label, const ParseOptions& opts) {
  ParsedDictFile out;
  out.src = src;
  out.tgt = tgt;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto fields = split_fields(line);
    if (fields.empty()) continue;
    if (fields.size() != 2) {
      out.diagnostics.push_back({source_label, line_no,
                                 strcat_all("expected 2 fields, got ", fields.size())});
      continue;
    }
    try {
      std::string w = opts.normalize ? uni::normalize_word(fields[0]) : fields[0];
      std::string s = opts.normalize ? uni::normalize_word(fields[1]) : fields[1];
      out.pairs.emplace_back(std::move(w), SynonymEntry{std::move(s), tgt});
    } catch (const DataError& e) {
      out.diagnostics.push_back({source_label, line_no, e.what()});
    }
  }
  return out;
}

const std::vector<SynonymEntry>& Lexicon::lookup(const std::string& word, LangId lang) const {
  static const std::vector<SynonymEntry> kEmpty;
  auto it = entries_.find({word, lang.value});
  return it == entries_.end() ? kEmpty : it->second;
}

bool Lexicon::sample_synonym(const std::string& word, LangId lang, Rng& rng,
                             SynonymEntry& out, SynonymSampling mode) const {
  const auto& syns = lookup(word, lang);
  if (syns.empty()) return false;
  if (mode == SynonymSampling::kFlat) {
    out = syns[rng.below(syns.size())];
    return true;
  }
  // Entries are sorted by (lang code, word), so same-language synonyms are
  // contiguous. Pick a language block uniformly, then a word within it.
  std::vector<std::pair<std::size_t, std::size_t>> blocks;  // [begin, end)
  std::size_t i = 0;
  while (i < syns.size()) {
    std::size_t j = i;
    while (j < syns.size() && syns[j].lang == syns[i].lang) ++j;
    blocks.emplace_back(i, j);
    i = j;
  }
  const auto& [b, e] = blocks[rng.below(blocks.size())];
  out = syns[b + rng.below(e - b)];
  return true;
}

Lexicon merge(const LanguageRegistry& registry,
              const std::vector<ParsedDictFile>& files, bool symmetrize) {
  Lexicon lex;
  lex.registry_ = registry;
  lex.source_count_ = files.size();
  for (const auto& f : files) {
    for (const auto& [word, syn] : f.pairs) {
      lex.entries_[{word, f.src.value}].push_back(syn);
      if (symmetrize) {
        lex.entries_[{syn.word, syn.lang.value}].push_back(SynonymEntry{word, f.src});
      }
    }
  }
  auto by_code_then_word = [&registry](const SynonymEntry& a, const SynonymEntry& b) {
    const std::string& ca = registry.code_of(a.lang);
    const std::string& cb = registry.code_of(b.lang);
    if (ca != cb) return ca < cb;
    return a.word < b.word;
  };
  for (auto it = lex.entries_.begin(); it != lex.entries_.end();) {
    auto& [key, syns] = *it;
    std::sort(syns.begin(), syns.end(), by_code_then_word);
    syns.erase(std::unique(syns.begin(), syns.end()), syns.end());
    // A set never contains its own key pair.
    syns.erase(std::remove(syns.begin(), syns.end(),
                           SynonymEntry{key.first, LangId{key.second}}),
               syns.end());
    if (syns.empty()) {
      it = lex.entries_.erase(it);
    } else {
      ++it;
    }
  }
  return lex;
}

void Lexicon::write_jsonl(std::ostream& out) const {
  std::vector<const decltype(entries_)::value_type*> rows;
  rows.reserve(entries_.size());
  for (const auto& kv : entries_) rows.push_back(&kv);
  std::sort(rows.begin(), rows.end(), [this](const auto* a, const auto* b) {
    const std::string& ca = registry_.code_of(LangId{a->first.second});
    const std::string& cb = registry_.code_of(LangId{b->first.second});
    if (ca != cb) return ca < cb;
    return a->first.first < b->first.first;
  });
  for (const auto* row : rows) {
    nlohmann::json rec;
    rec["word"] = row->first.first;
    rec["lang"] = registry_.code_of(LangId{row->first.second});
    nlohmann::json syns = nlohmann::json::array();
    for (const auto& s : row->second) {
      syns.push_back({{"word", s.word}, {"lang", registry_.code_of(s.lang)}});
    }
    rec["synonyms"] = std::move(syns);
    out << rec.dump() << "\n";
  }
}

Lexicon Lexicon::read_jsonl(std::istream& in, const std::string& source_label,
                            LanguageRegistry base) {
  Lexicon lex;
  lex.registry_ = std::move(base);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      fail_data(source_label, ":", line_no, ": bad JSON record: ", e.what());
    }
    if (!rec.contains("word") || !rec.contains("lang") || !rec.contains("synonyms")) {
      fail_data(source_label, ":", line_no, ": record missing word/lang/synonyms");
    }
    LangId key_lang = lex.registry_.add(rec["lang"].get<std::string>());
    auto& syns = lex.entries_[{rec["word"].get<std::string>(), key_lang.value}];
    for (const auto& s : rec["synonyms"]) {
      syns.push_back(SynonymEntry{s.at("word").get<std::string>(),
                                  lex.registry_.add(s.at("lang").get<std::string>())});
    }
  }
  lex.source_count_ = 1;
  return lex;
}

}  // namespace dictmlm
