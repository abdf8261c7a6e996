#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dictmlm/corpus.hpp"
#include "dictmlm/evalsuite.hpp"
#include "dictmlm/examplegen.hpp"
#include "dictmlm/lexicon.hpp"
#include "dictmlm/model.hpp"
#include "dictmlm/synthlang.hpp"
#include "dictmlm/tokenizer.hpp"
#include "dictmlm/trainer.hpp"

namespace dictmlm {

// One flat configuration shared by every pipeline stage. A config file is
// a single JSON object over the keys listed by config_key_help(); unknown
// keys and type mismatches are errors. The global seed feeds every
// sub-config; the modules separate their streams by purpose tags.
struct RunConfig {
  GenConfig gen;
  SamplingPolicy sampling;
  ModelConfig model;        // vocab_size/lang_count are filled at use time
  TrainConfig train;
  SynthConfig synth;        // languages come from the preset
  std::string synth_preset = "near";
  std::size_t vocab_size = 2000;
  std::size_t min_freq = 2;
  std::uint64_t sentence_count = 2000;
  std::size_t lang_count = 0;  // 0: manifest size, else example maximum
  std::size_t workers = 1;
  std::uint64_t seed = 0;

  std::string manifest;
  std::string lexicon;
  std::string vocab;
  std::string examples;
  std::string stats;
  std::string checkpoint;
  std::string resume;
  std::string metrics;
  std::string pairs;
  std::string report;
  std::string out_dir;
};

// Sets one key. Throws DataError naming the key on unknown names and type
// mismatches; callers add file/flag context.
void apply_config_key(RunConfig& cfg, const std::string& key, const nlohmann::json& value);

// Reads a JSON object file and applies every key.
void load_config_file(RunConfig& cfg, const std::string& path);

// Copies the global seed into every sub-config and resolves the synth
// preset. Call once after all overrides are applied.
void finalize_config(RunConfig& cfg);

// One line per config key: name, default, meaning.
std::string config_key_help();

std::vector<TrainingExample> load_examples_file(const std::string& path);
Vocab load_vocab_file(const std::string& path);

struct GenDataResult {
  GenStats stats;
  std::vector<Diagnostic> diagnostics;
};

// Streams cfg.sentence_count sentences from the manifest mixture and
// writes examples to `out`. Sentences are sharded across cfg.workers
// threads and merged back in stream order, so the bytes written are
// independent of the worker count.
GenDataResult run_gen_data(const RunConfig& cfg, const CorpusManifest& manifest,
                           const LanguageRegistry& registry, const Lexicon& lex,
                           const Vocab& vocab, std::ostream& out);

struct TrainRunResult {
  ModelParams params;
  AdamState state;
  TrainLog log;
};

// Initializes (or resumes from cfg.resume) and trains. lang_count falls
// back to the largest language id seen in the examples plus one.
TrainRunResult run_train(const RunConfig& cfg, const std::vector<TrainingExample>& examples,
                         const Vocab& vocab, std::ostream* metrics);

// Per-run rows plus per-model means of the paired code-switched-vs-vanilla
// experiment on a synthetic language pair.
struct CompareRow {
  std::string name;
  std::uint64_t seed = 0;
  double last4_avg = 0.0;
};

struct CompareOutcome {
  std::vector<double> dict_last4;     // per seed, same order as seeds
  std::vector<double> vanilla_last4;  // per seed
  double unconditioned_last4 = -1.0;  // single run, -1 when not requested
  double random_baseline = 0.0;       // 1/K
  std::vector<CompareRow> rows;
};

// Builds the synthetic pair, trains each variant with identical budgets,
// and scores retrieval on one shared pair set. Seeds are cfg.seed + i.
// with_unconditioned adds one code-switched run without the
// language-conditioned head.
CompareOutcome run_compare(const RunConfig& cfg, std::size_t seed_count, bool with_unconditioned,
                           std::ostream* detail);

// Two rows (model, mean last4_avg), plus one for the unconditioned variant
// when present.
void write_compare_summary(std::ostream& out, const CompareOutcome& outcome);

struct SynthArtifacts {
  std::vector<std::string> corpus_paths;
  std::vector<std::string> dict_paths;
  std::string manifest_path;
  std::string pairs_path;  // empty with fewer than two languages
};

// Writes corpora, dictionaries for every language pair, a corpus manifest,
// and an eval pair file for the first two languages into out_dir.
SynthArtifacts run_synth(const RunConfig& cfg, const std::string& out_dir);

}  // namespace dictmlm
