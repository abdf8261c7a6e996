#include "dictmlm/corpus.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "dictmlm/unicode.hpp"

namespace dictmlm {

std::vector<std::string> load_corpus_lines(const std::string& path,
                                           std::vector<Diagnostic>* diagnostics) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail_data("cannot open corpus file \"", path, "\"");
  std::vector<std::string> lines;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!uni::is_valid_utf8(line)) {
      if (diagnostics) diagnostics->push_back({path, line_no, "invalid UTF-8, line skipped"});
      continue;
    }
    lines.push_back(line);
  }
  return lines;
}

namespace {

std::uint64_t count_usable_lines(const std::string& path) {
  return load_corpus_lines(path, nullptr).size();
}

}  // namespace

CorpusManifest load_manifest(const std::string& path, LanguageRegistry& registry) {
  std::ifstream in(path);
  if (!in) fail_data("cannot open manifest \"", path, "\"");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::parse_error& e) {
    fail_data("manifest \"", path, "\": bad JSON: ", e.what());
  }
  if (!doc.is_array()) fail_data("manifest \"", path, "\": expected a JSON array");

  const std::string cache_path = path + ".counts.json";
  nlohmann::json cache = nlohmann::json::object();
  {
    std::ifstream cf(cache_path);
    if (cf) {
      try {
        cf >> cache;
      } catch (const nlohmann::json::parse_error&) {
        cache = nlohmann::json::object();  // stale cache, recompute
      }
    }
  }

  CorpusManifest manifest;
  std::set<std::uint16_t> seen;
  bool cache_dirty = false;
  for (const auto& rec : doc) {
    if (!rec.contains("lang") || !rec.contains("path")) {
      fail_data("manifest \"", path, "\": record missing lang/path: ", rec.dump());
    }
    CorpusEntry entry;
    entry.lang = registry.add(rec["lang"].get<std::string>());
    entry.path = rec["path"].get<std::string>();
    if (!seen.insert(entry.lang.value).second) {
      fail_data("manifest \"", path, "\": duplicate language \"",
                rec["lang"].get<std::string>(), "\"");
    }
    std::error_code ec;
    auto fsize = std::filesystem::file_size(entry.path, ec);
    if (ec) fail_data("manifest \"", path, "\": cannot stat \"", entry.path, "\"");

    if (cache.contains(entry.path) && cache[entry.path].value("size", std::uint64_t(0)) == fsize) {
      entry.sentence_count = cache[entry.path].value("count", std::uint64_t(0));
    } else {
      entry.sentence_count = count_usable_lines(entry.path);
      cache[entry.path] = {{"size", fsize}, {"count", entry.sentence_count}};
      cache_dirty = true;
    }
    if (entry.sentence_count == 0) {
      fail_data("manifest \"", path, "\": corpus \"", entry.path, "\" has no usable sentences");
    }
    manifest.total_sentences += entry.sentence_count;
    manifest.entries.push_back(std::move(entry));
  }
  if (manifest.entries.empty()) fail_data("manifest \"", path, "\": no corpora listed");
  if (cache_dirty) {
    std::ofstream cf(cache_path);
    if (cf) cf << cache.dump(2) << "\n";
  }
  return manifest;
}

std::vector<double> temperature_weights(const std::vector<std::uint64_t>& sizes,
                                        double temperature) {
  if (sizes.empty()) fail_data("invalid manifest: no corpus sizes");
  if (temperature < 1.0) fail_usage("sampling temperature must be >= 1, got ", temperature);
  double total = 0.0;
  for (auto s : sizes) {
    if (s == 0) fail_data("invalid manifest: corpus size must be positive");
    total += static_cast<double>(s);
  }
  std::vector<double> w(sizes.size());
  double wsum = 0.0;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    w[i] = std::pow(static_cast<double>(sizes[i]) / total, 1.0 / temperature);
    wsum += w[i];
  }
  for (auto& x : w) x /= wsum;
  return w;
}

std::size_t sample_language(const SamplingPolicy& policy, const std::vector<double>& weights,
                            std::uint64_t draw_index) {
  const double u = static_cast<double>(derive_seed(policy.seed, 0x6c616e67ULL, draw_index) >> 11) *
                   0x1.0p-53;
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    acc += weights[i];
    if (u < acc) return i;
  }
  return weights.size() - 1;
}

SentenceStream::SentenceStream(const CorpusManifest& manifest, const SamplingPolicy& policy,
                               const LanguageRegistry& registry)
    : policy_(policy) {
  if (policy.temperature < 1.0) {
    fail_usage("sampling temperature must be >= 1, got ", policy.temperature);
  }
  std::vector<std::uint64_t> sizes;
  for (const auto& entry : manifest.entries) {
    LangLines ll;
    ll.lang = entry.lang;
    ll.lines = load_corpus_lines(entry.path, &diagnostics_);
    if (ll.lines.empty()) fail_data("corpus \"", entry.path, "\" has no usable sentences");
    sizes.push_back(ll.lines.size());
    per_lang_.push_back(std::move(ll));
  }
  (void)registry;
  weights_ = temperature_weights(sizes, policy.temperature);
}

RawSentence SentenceStream::next() {
  std::size_t li = per_lang_.size() == 1 ? 0 : sample_language(policy_, weights_, index_);
  ++index_;
  auto& ll = per_lang_[li];
  RawSentence s{ll.lines[ll.cursor], ll.lang};
  ll.cursor = (ll.cursor + 1) % ll.lines.size();
  return s;
}

std::vector<RawSentence> SentenceStream::take(std::uint64_t n) {
  std::vector<RawSentence> out;
  out.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) out.push_back(next());
  return out;
}

void SentenceStream::reset() {
  index_ = 0;
  for (auto& ll : per_lang_) ll.cursor = 0;
}

std::vector<RawSentence> SentenceStream::take_shard(std::uint64_t n_total,
                                                    std::uint64_t shard_index,
                                                    std::uint64_t shard_count) {
  if (shard_count == 0 || shard_index >= shard_count) {
    fail_usage("bad shard ", shard_index, "/", shard_count);
  }
  reset();
  std::vector<RawSentence> out;
  for (std::uint64_t i = 0; i < n_total; ++i) {
    RawSentence s = next();
    if (i % shard_count == shard_index) out.push_back(std::move(s));
  }
  return out;
}

std::uint64_t SentenceStream::shard_seed(std::uint64_t shard_index) const {
  return derive_seed(policy_.seed, 0x7368617264ULL, shard_index);
}

}  // namespace dictmlm
