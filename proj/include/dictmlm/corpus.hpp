#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dictmlm/common.hpp"
#include "dictmlm/lang.hpp"
#include "dictmlm/rng.hpp"

namespace dictmlm {

struct CorpusEntry {
  LangId lang;
  std::string path;
  std::uint64_t sentence_count = 0;
};

// Per-language monolingual corpora. Counts are usable (non-empty, valid
// UTF-8) lines.
struct CorpusManifest {
  std::vector<CorpusEntry> entries;
  std::uint64_t total_sentences = 0;
};

struct SamplingPolicy {
  double temperature = 5.0;  // T >= 1
  std::uint64_t seed = 0;
};

// Load a manifest: a JSON array of {"lang","path"} records. Registers
// languages in record order. Line counts are cached in a sidecar
// "<path>.counts.json" keyed by file size.
CorpusManifest load_manifest(const std::string& path, LanguageRegistry& registry);

// p_l proportional to (n_l / sum n)^(1/T). Sums to 1 within 1e-12,
// monotone in sizes.
std::vector<double> temperature_weights(const std::vector<std::uint64_t>& sizes, double temperature);

// Counter-based categorical draw: a pure function of (policy seed,
// draw_index), so any sharding of the index space sees the same sequence.
std::size_t sample_language(const SamplingPolicy& policy, const std::vector<double>& weights,
                            std::uint64_t draw_index);

struct RawSentence {
  std::string text;
  LangId lang;
};

// Deterministic interleaved sentence stream. Within a language, sentences
// cycle in file order; across languages, interleaving follows
// sample_language. Epoch-wrapping: unbounded unless taken.
class SentenceStream {
 public:
  SentenceStream(const CorpusManifest& manifest, const SamplingPolicy& policy,
                 const LanguageRegistry& registry);

  RawSentence next();
  std::vector<RawSentence> take(std::uint64_t n);
  void reset();

  const std::vector<Diagnostic>& diagnostics() const { return diagnostics_; }
  const std::vector<double>& weights() const { return weights_; }

  // Items of the global stream at indices congruent to shard_index modulo
  // shard_count. The union over shards equals the unsharded stream for any
  // shard_count. shard_seed(i) = derive_seed(policy seed, shard index) is
  // exposed for shard-local randomness downstream.
  std::vector<RawSentence> take_shard(std::uint64_t n_total, std::uint64_t shard_index,
                                      std::uint64_t shard_count);
  std::uint64_t shard_seed(std::uint64_t shard_index) const;

 private:
  struct LangLines {
    LangId lang;
    std::vector<std::string> lines;
    std::uint64_t cursor = 0;
  };
  SamplingPolicy policy_;
  std::vector<double> weights_;
  std::vector<LangLines> per_lang_;
  std::uint64_t index_ = 0;
  std::vector<Diagnostic> diagnostics_;
};

// All usable lines of a corpus file; invalid UTF-8 lines are recorded and
// skipped, empty lines are skipped silently. Throws DataError if the file
// cannot be opened.
std::vector<std::string> load_corpus_lines(const std::string& path,
                                           std::vector<Diagnostic>* diagnostics);

}  // namespace dictmlm
