#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dictmlm/pipeline.hpp"

namespace {

using namespace dictmlm;

void print_diagnostics(const std::vector<Diagnostic>& diags) {
  for (const Diagnostic& d : diags) {
    std::cerr << d.source;
    if (d.line > 0) std::cerr << ':' << d.line;
    std::cerr << ": " << d.message << '\n';
  }
}

// Shared flags; file values load first, then --set pairs, then sugar flags.
struct Common {
  std::string config_path;
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* workers_opt = nullptr;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON config file");
    cmd->add_option("--set", sets, "KEY=VALUE config override (repeatable)");
    seed_opt = cmd->add_option("--seed", seed, "global seed");
    workers_opt = cmd->add_option("--workers", workers, "shard parallelism");
  }

  RunConfig build() const {
    RunConfig cfg;
    if (!config_path.empty()) load_config_file(cfg, config_path);
    for (const std::string& kv : sets) {
      std::size_t eq = kv.find('=');
      if (eq == std::string::npos || eq == 0) fail_usage("--set needs KEY=VALUE, got \"", kv, "\"");
      std::string key = kv.substr(0, eq);
      std::string raw = kv.substr(eq + 1);
      nlohmann::json value = nlohmann::json::parse(raw, nullptr, /*allow_exceptions=*/false);
      if (value.is_discarded()) value = raw;  // bare strings need no quotes
      try {
        apply_config_key(cfg, key, value);
      } catch (const DataError& e) {
        fail_usage("--set ", kv, ": ", e.what());
      }
    }
    if (seed_opt->count() > 0) cfg.seed = seed;
    if (workers_opt->count() > 0) cfg.workers = workers;
    return cfg;
  }
};

// Loads manifest (registers languages in record order) and layers the
// lexicon's codes on top, mirroring gen-data so ids line up across stages.
struct DataContext {
  CorpusManifest manifest;
  LanguageRegistry manifest_registry;
  Lexicon lexicon;
  bool has_lexicon = false;

  const LanguageRegistry& registry() const {
    return has_lexicon ? lexicon.registry() : manifest_registry;
  }
};

DataContext load_data_context(const std::string& manifest_path, const std::string& lexicon_path) {
  DataContext ctx;
  if (!manifest_path.empty()) {
    ctx.manifest = load_manifest(manifest_path, ctx.manifest_registry);
  }
  if (!lexicon_path.empty()) {
    std::ifstream in(lexicon_path, std::ios::binary);
    if (!in) fail_data("cannot open ", lexicon_path);
    ctx.lexicon = Lexicon::read_jsonl(in, lexicon_path, ctx.manifest_registry);
    ctx.has_lexicon = true;
  }
  return ctx;
}

std::ofstream must_open(const std::string& path, std::ios::openmode mode = std::ios::binary) {
  std::ofstream out(path, mode);
  if (!out) fail_data("cannot open ", path, " for writing");
  return out;
}

int run_merge_dicts(const Common& common, const std::vector<std::string>& dict_specs,
                    const std::string& out_path, bool no_symmetrize) {
  RunConfig cfg = common.build();
  std::string target = out_path.empty() ? cfg.lexicon : out_path;
  if (target.empty()) fail_usage("merge-dicts needs --out (or the lexicon config key)");
  if (dict_specs.empty()) fail_usage("merge-dicts needs at least one --dict SRC:TGT:PATH");

  LanguageRegistry registry;
  std::vector<ParsedDictFile> files;
  for (const std::string& spec : dict_specs) {
    std::size_t c1 = spec.find(':');
    std::size_t c2 = c1 == std::string::npos ? std::string::npos : spec.find(':', c1 + 1);
    if (c2 == std::string::npos || c1 == 0 || c2 == c1 + 1 || c2 + 1 >= spec.size()) {
      fail_usage("--dict needs SRC:TGT:PATH, got \"", spec, "\"");
    }
    std::string src = spec.substr(0, c1);
    std::string tgt = spec.substr(c1 + 1, c2 - c1 - 1);
    std::string path = spec.substr(c2 + 1);
    std::ifstream in(path, std::ios::binary);
    if (!in) fail_data("cannot open ", path);
    files.push_back(parse_muse(in, registry.add(src), registry.add(tgt), path));
    print_diagnostics(files.back().diagnostics);
  }
  Lexicon lex = merge(registry, files, !no_symmetrize);
  std::ofstream out = must_open(target);
  lex.write_jsonl(out);
  std::cout << "merged " << files.size() << " dictionaries into " << lex.entry_count()
            << " synonym sets -> " << target << '\n';
  return 0;
}

int run_build_vocab(const Common& common, const std::string& manifest_path,
                    const std::string& out_path) {
  RunConfig cfg = common.build();
  std::string manifest = manifest_path.empty() ? cfg.manifest : manifest_path;
  std::string target = out_path.empty() ? cfg.vocab : out_path;
  if (manifest.empty()) fail_usage("build-vocab needs --manifest");
  if (target.empty()) fail_usage("build-vocab needs --out (or the vocab config key)");

  LanguageRegistry registry;
  CorpusManifest mf = load_manifest(manifest, registry);
  std::vector<std::string> lines;
  std::vector<Diagnostic> diags;
  for (const CorpusEntry& entry : mf.entries) {
    std::vector<std::string> file_lines = load_corpus_lines(entry.path, &diags);
    for (std::string& line : file_lines) lines.push_back(std::move(line));
  }
  print_diagnostics(diags);
  Vocab vocab = train_vocab(lines, cfg.vocab_size, cfg.min_freq);
  std::ofstream out = must_open(target);
  vocab.write(out);
  std::cout << "trained " << vocab.size() << " pieces from " << lines.size() << " sentences -> "
            << target << '\n';
  return 0;
}

int run_gen_data_cmd(const Common& common, RunConfig cfg) {
  finalize_config(cfg);
  if (cfg.manifest.empty()) fail_usage("gen-data needs --manifest");
  if (cfg.vocab.empty()) fail_usage("gen-data needs --vocab");
  if (cfg.examples.empty()) fail_usage("gen-data needs --out (or the examples config key)");

  DataContext ctx = load_data_context(cfg.manifest, cfg.lexicon);
  Vocab vocab = load_vocab_file(cfg.vocab);
  std::ofstream out = must_open(cfg.examples);
  GenDataResult result = run_gen_data(cfg, ctx.manifest, ctx.registry(), ctx.lexicon, vocab, out);
  print_diagnostics(result.diagnostics);
  if (!cfg.stats.empty()) {
    std::ofstream stats_out = must_open(cfg.stats);
    write_stats(stats_out, result.stats, ctx.registry());
  }
  std::cout << "generated " << result.stats.example_count << " examples from "
            << result.stats.sentence_count << " sentences (" << result.stats.skipped_count
            << " skipped) -> " << cfg.examples << '\n';
  (void)common;
  return 0;
}

int run_stats_cmd(RunConfig cfg) {
  finalize_config(cfg);
  if (cfg.examples.empty()) fail_usage("stats needs --examples");
  if (cfg.vocab.empty()) fail_usage("stats needs --vocab");

  std::vector<TrainingExample> examples = load_examples_file(cfg.examples);
  Vocab vocab = load_vocab_file(cfg.vocab);
  GenStats stats = masking_stats_report(examples, vocab);

  LanguageRegistry registry;
  if (!cfg.manifest.empty()) {
    DataContext ctx = load_data_context(cfg.manifest, cfg.lexicon);
    registry = ctx.registry();
  }
  // Ids beyond the registry get placeholder codes so the report is
  // printable without the original manifest.
  std::uint16_t max_id = 0;
  for (const auto& [id, count] : stats.label_lang_counts) max_id = std::max(max_id, id);
  while (registry.size() <= max_id) {
    registry.add("lang" + std::to_string(registry.size()));
  }
  if (cfg.stats.empty()) {
    write_stats(std::cout, stats, registry);
  } else {
    std::ofstream out = must_open(cfg.stats);
    write_stats(out, stats, registry);
    std::cout << "stats for " << stats.example_count << " examples -> " << cfg.stats << '\n';
  }
  return 0;
}

int run_train_cmd(RunConfig cfg) {
  finalize_config(cfg);
  if (cfg.examples.empty()) fail_usage("train needs --examples");
  if (cfg.vocab.empty()) fail_usage("train needs --vocab");
  if (cfg.checkpoint.empty()) fail_usage("train needs --out (or the checkpoint config key)");

  std::vector<TrainingExample> examples = load_examples_file(cfg.examples);
  Vocab vocab = load_vocab_file(cfg.vocab);
  if (cfg.lang_count == 0 && !cfg.manifest.empty()) {
    LanguageRegistry registry;
    load_manifest(cfg.manifest, registry);
    cfg.lang_count = registry.size();
  }

  std::ofstream metrics;
  if (!cfg.metrics.empty()) {
    metrics = must_open(cfg.metrics, cfg.resume.empty() ? std::ios::binary
                                                        : std::ios::binary | std::ios::app);
  }
  TrainRunResult result =
      run_train(cfg, examples, vocab, cfg.metrics.empty() ? nullptr : &metrics);
  save_checkpoint_file(cfg.checkpoint, result.params);
  save_optimizer_file(cfg.checkpoint + ".opt", result.state, result.params.manifest());
  double final_loss = result.log.losses.empty() ? 0.0 : result.log.losses.back();
  std::cout << "trained to step " << result.log.final_step << ", final loss " << final_loss
            << " -> " << cfg.checkpoint << '\n';
  return 0;
}

int run_eval_cmd(RunConfig cfg) {
  finalize_config(cfg);
  if (cfg.pairs.empty()) fail_usage("eval-retrieval needs --pairs");
  if (cfg.checkpoint.empty()) fail_usage("eval-retrieval needs --checkpoint");
  if (cfg.vocab.empty()) fail_usage("eval-retrieval needs --vocab");
  if (cfg.manifest.empty()) {
    fail_usage("eval-retrieval needs --manifest (the one used for training; it fixes language ids)");
  }

  ModelParams params = load_checkpoint_file(cfg.checkpoint);
  Vocab vocab = load_vocab_file(cfg.vocab);
  if (vocab.size() != params.cfg.vocab_size) {
    fail_data(cfg.vocab, ": ", vocab.size(), " pieces, but the checkpoint was trained with ",
              params.cfg.vocab_size);
  }
  DataContext ctx = load_data_context(cfg.manifest, cfg.lexicon);
  LanguageRegistry registry = ctx.registry();
  std::ifstream pairs_in(cfg.pairs, std::ios::binary);
  if (!pairs_in) fail_data("cannot open ", cfg.pairs);
  std::vector<ParallelPair> pairs = read_pairs(pairs_in, cfg.pairs, registry);
  for (const ParallelPair& p : pairs) {
    for (LangId lang : {p.src_lang, p.tgt_lang}) {
      if (lang.value >= params.cfg.lang_count) {
        fail_data(cfg.pairs, ": language \"", registry.code_of(lang),
                  "\" is outside the model's language table");
      }
    }
  }

  RetrievalReport report = layerwise_report(params, pairs, vocab, cfg.workers);
  if (cfg.report.empty()) {
    write_retrieval_json(std::cout, report);
  } else {
    std::ofstream csv = must_open(cfg.report + ".csv");
    write_retrieval_csv(csv, report);
    std::ofstream json = must_open(cfg.report + ".json");
    write_retrieval_json(json, report);
    std::cout << "last4_avg " << report.last4_avg << " over " << report.pair_count << " pairs -> "
              << cfg.report << ".{csv,json}\n";
  }
  return 0;
}

int run_synth_cmd(RunConfig cfg, const std::string& preset, const std::string& out_dir) {
  if (!preset.empty()) cfg.synth_preset = preset;
  if (!out_dir.empty()) cfg.out_dir = out_dir;
  finalize_config(cfg);
  SynthArtifacts artifacts = run_synth(cfg, cfg.out_dir);
  for (const std::string& p : artifacts.corpus_paths) std::cout << "corpus " << p << '\n';
  for (const std::string& p : artifacts.dict_paths) std::cout << "dictionary " << p << '\n';
  std::cout << "manifest " << artifacts.manifest_path << '\n';
  if (!artifacts.pairs_path.empty()) std::cout << "pairs " << artifacts.pairs_path << '\n';
  return 0;
}

int run_compare_cmd(RunConfig cfg, std::size_t seeds, bool with_unconditioned) {
  finalize_config(cfg);
  std::ofstream detail;
  std::ostream* detail_out = nullptr;
  if (!cfg.report.empty()) {
    detail = must_open(cfg.report + ".runs.csv");
    detail_out = &detail;
  }
  CompareOutcome outcome = run_compare(cfg, seeds, with_unconditioned, detail_out);
  write_compare_summary(std::cout, outcome);
  std::cerr << "random baseline " << outcome.random_baseline << " (1/" << cfg.synth.pair_count
            << " pairs)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dict-mlm: dictionary-driven code-switched masked language modeling toolkit"};
  app.require_subcommand(1);
  app.footer(config_key_help());

  int rc = 0;

  auto* merge_cmd = app.add_subcommand("merge-dicts", "Merge MUSE dictionaries into one lexicon");
  static Common merge_common;
  merge_common.attach(merge_cmd);
  static std::vector<std::string> dict_specs;
  static std::string merge_out;
  static bool no_symmetrize = false;
  merge_cmd->add_option("--dict", dict_specs, "SRC:TGT:PATH dictionary file (repeatable)");
  merge_cmd->add_option("--out", merge_out, "lexicon JSONL output");
  merge_cmd->add_flag("--no-symmetrize", no_symmetrize, "keep pairs directional");
  merge_cmd->callback(
      [&] { rc = run_merge_dicts(merge_common, dict_specs, merge_out, no_symmetrize); });

  auto* vocab_cmd = app.add_subcommand("build-vocab", "Train a wordpiece vocabulary");
  static Common vocab_common;
  vocab_common.attach(vocab_cmd);
  static std::string vocab_manifest, vocab_out;
  vocab_cmd->add_option("--manifest", vocab_manifest, "corpus manifest JSON");
  vocab_cmd->add_option("--out", vocab_out, "vocabulary output path");
  vocab_cmd->callback([&] { rc = run_build_vocab(vocab_common, vocab_manifest, vocab_out); });

  // Flags that are sugar for config keys follow the build(): apply only
  // when passed, so precedence stays flags > file > defaults.
  struct PathFlags {
    std::string manifest, lexicon, vocab, examples, out, stats, metrics, resume, pairs, checkpoint,
        report;
    CLI::Option *o_manifest = nullptr, *o_lexicon = nullptr, *o_vocab = nullptr,
                *o_examples = nullptr, *o_out = nullptr, *o_stats = nullptr, *o_metrics = nullptr,
                *o_resume = nullptr, *o_pairs = nullptr, *o_checkpoint = nullptr,
                *o_report = nullptr;
  };

  auto* gen_cmd = app.add_subcommand("gen-data", "Generate masked training examples");
  static Common gen_common;
  gen_common.attach(gen_cmd);
  static PathFlags gen_paths;
  static std::string gen_mode;
  static double gen_t = 0.5;
  static std::uint64_t gen_count = 0;
  gen_paths.o_manifest = gen_cmd->add_option("--manifest", gen_paths.manifest, "corpus manifest");
  gen_paths.o_lexicon = gen_cmd->add_option("--lexicon", gen_paths.lexicon, "lexicon JSONL");
  gen_paths.o_vocab = gen_cmd->add_option("--vocab", gen_paths.vocab, "vocabulary path");
  gen_paths.o_out = gen_cmd->add_option("--out", gen_paths.out, "example JSONL output");
  gen_paths.o_stats = gen_cmd->add_option("--stats", gen_paths.stats, "stats JSON output");
  auto* gen_mode_opt = gen_cmd->add_option("--mode", gen_mode, "dict-mlm | dict-tlm | vanilla");
  auto* gen_t_opt = gen_cmd->add_option("--t", gen_t, "cross-lingual label probability");
  auto* gen_count_opt = gen_cmd->add_option("--count", gen_count, "sentences to draw");
  gen_cmd->callback([&] {
    RunConfig cfg = gen_common.build();
    if (gen_paths.o_manifest->count()) cfg.manifest = gen_paths.manifest;
    if (gen_paths.o_lexicon->count()) cfg.lexicon = gen_paths.lexicon;
    if (gen_paths.o_vocab->count()) cfg.vocab = gen_paths.vocab;
    if (gen_paths.o_out->count()) cfg.examples = gen_paths.out;
    if (gen_paths.o_stats->count()) cfg.stats = gen_paths.stats;
    if (gen_mode_opt->count()) cfg.gen.mode = parse_gen_mode(gen_mode);
    if (gen_t_opt->count()) cfg.gen.t = gen_t;
    if (gen_count_opt->count()) cfg.sentence_count = gen_count;
    rc = run_gen_data_cmd(gen_common, cfg);
  });

  auto* stats_cmd = app.add_subcommand("stats", "Recompute statistics from an example file");
  static Common stats_common;
  stats_common.attach(stats_cmd);
  static PathFlags stats_paths;
  stats_paths.o_examples = stats_cmd->add_option("--examples", stats_paths.examples, "example JSONL");
  stats_paths.o_vocab = stats_cmd->add_option("--vocab", stats_paths.vocab, "vocabulary path");
  stats_paths.o_manifest =
      stats_cmd->add_option("--manifest", stats_paths.manifest, "manifest for language codes");
  stats_paths.o_out = stats_cmd->add_option("--out", stats_paths.out, "stats JSON output");
  stats_cmd->callback([&] {
    RunConfig cfg = stats_common.build();
    if (stats_paths.o_examples->count()) cfg.examples = stats_paths.examples;
    if (stats_paths.o_vocab->count()) cfg.vocab = stats_paths.vocab;
    if (stats_paths.o_manifest->count()) cfg.manifest = stats_paths.manifest;
    if (stats_paths.o_out->count()) cfg.stats = stats_paths.out;
    rc = run_stats_cmd(cfg);
  });

  auto* train_cmd = app.add_subcommand("train", "Train the encoder on generated examples");
  static Common train_common;
  train_common.attach(train_cmd);
  static PathFlags train_paths;
  static bool no_conditioning = false;
  train_paths.o_examples = train_cmd->add_option("--examples", train_paths.examples, "example JSONL");
  train_paths.o_vocab = train_cmd->add_option("--vocab", train_paths.vocab, "vocabulary path");
  train_paths.o_manifest =
      train_cmd->add_option("--manifest", train_paths.manifest, "manifest fixing the language count");
  train_paths.o_out = train_cmd->add_option("--out", train_paths.out, "checkpoint output path");
  train_paths.o_metrics = train_cmd->add_option("--metrics", train_paths.metrics, "metrics CSV");
  train_paths.o_resume = train_cmd->add_option("--resume", train_paths.resume, "resume checkpoint");
  train_cmd->add_flag("--no-lang-conditioning", no_conditioning,
                      "drop the language-conditioned head input");
  train_cmd->callback([&] {
    RunConfig cfg = train_common.build();
    if (train_paths.o_examples->count()) cfg.examples = train_paths.examples;
    if (train_paths.o_vocab->count()) cfg.vocab = train_paths.vocab;
    if (train_paths.o_manifest->count()) cfg.manifest = train_paths.manifest;
    if (train_paths.o_out->count()) cfg.checkpoint = train_paths.out;
    if (train_paths.o_metrics->count()) cfg.metrics = train_paths.metrics;
    if (train_paths.o_resume->count()) cfg.resume = train_paths.resume;
    if (no_conditioning) cfg.model.conditioning = false;
    rc = run_train_cmd(cfg);
  });

  auto* eval_cmd = app.add_subcommand("eval-retrieval", "Layer-wise retrieval over parallel pairs");
  static Common eval_common;
  eval_common.attach(eval_cmd);
  static PathFlags eval_paths;
  eval_paths.o_pairs = eval_cmd->add_option("--pairs", eval_paths.pairs, "parallel pair TSV");
  eval_paths.o_checkpoint =
      eval_cmd->add_option("--checkpoint", eval_paths.checkpoint, "model checkpoint");
  eval_paths.o_vocab = eval_cmd->add_option("--vocab", eval_paths.vocab, "vocabulary path");
  eval_paths.o_manifest =
      eval_cmd->add_option("--manifest", eval_paths.manifest, "manifest fixing language ids");
  eval_paths.o_lexicon = eval_cmd->add_option("--lexicon", eval_paths.lexicon, "lexicon JSONL");
  eval_paths.o_report =
      eval_cmd->add_option("--report", eval_paths.report, "report path prefix (.csv and .json)");
  eval_cmd->callback([&] {
    RunConfig cfg = eval_common.build();
    if (eval_paths.o_pairs->count()) cfg.pairs = eval_paths.pairs;
    if (eval_paths.o_checkpoint->count()) cfg.checkpoint = eval_paths.checkpoint;
    if (eval_paths.o_vocab->count()) cfg.vocab = eval_paths.vocab;
    if (eval_paths.o_manifest->count()) cfg.manifest = eval_paths.manifest;
    if (eval_paths.o_lexicon->count()) cfg.lexicon = eval_paths.lexicon;
    if (eval_paths.o_report->count()) cfg.report = eval_paths.report;
    rc = run_eval_cmd(cfg);
  });

  auto* synth_cmd = app.add_subcommand("synth", "Emit a synthetic language pair");
  static Common synth_common;
  synth_common.attach(synth_cmd);
  static std::string synth_preset, synth_out_dir;
  synth_cmd->add_option("--preset", synth_preset, "near | far");
  synth_cmd->add_option("--out-dir", synth_out_dir, "output directory");
  synth_cmd->callback(
      [&] { rc = run_synth_cmd(synth_common.build(), synth_preset, synth_out_dir); });

  auto* compare_cmd =
      app.add_subcommand("compare", "Paired code-switched vs vanilla pretraining experiment");
  static Common compare_common;
  compare_common.attach(compare_cmd);
  static std::size_t compare_seeds = 3;
  static bool compare_uncond = false;
  static std::string compare_report;
  compare_cmd->add_option("--seeds", compare_seeds, "seeds per variant");
  compare_cmd->add_flag("--with-unconditioned", compare_uncond,
                        "add one run without language conditioning");
  auto* compare_report_opt =
      compare_cmd->add_option("--report", compare_report, "per-run CSV path prefix");
  compare_cmd->callback([&] {
    RunConfig cfg = compare_common.build();
    if (compare_report_opt->count()) cfg.report = compare_report;
    rc = run_compare_cmd(cfg, compare_seeds, compare_uncond);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;  // usage errors exit 1
  } catch (const dictmlm::UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const dictmlm::DataError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return rc;
}
