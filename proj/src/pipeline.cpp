#include "dictmlm/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <thread>
#include <utility>

namespace dictmlm {

namespace {

constexpr std::uint64_t kInitTag = 0x696e6974;  // "init"

double as_double(const std::string& key, const nlohmann::json& v) {
  if (!v.is_number()) fail_data("config key \"", key, "\": expected a number");
  return v.get<double>();
}

std::uint64_t as_count(const std::string& key, const nlohmann::json& v) {
  if (!v.is_number_integer() || (v.is_number_integer() && v.get<std::int64_t>() < 0)) {
    fail_data("config key \"", key, "\": expected a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

bool as_bool(const std::string& key, const nlohmann::json& v) {
  if (!v.is_boolean()) fail_data("config key \"", key, "\": expected true or false");
  return v.get<bool>();
}

std::string as_string(const std::string& key, const nlohmann::json& v) {
  if (!v.is_string()) fail_data("config key \"", key, "\": expected a string");
  return v.get<std::string>();
}

MaskPool parse_mask_pool(const std::string& name) {
  if (name == "all-words") return MaskPool::kAllWords;
  if (name == "eligible-only") return MaskPool::kEligibleOnly;
  fail_data("unknown mask_pool \"", name, "\" (all-words, eligible-only)");
}

SynonymSampling parse_synonym_sampling(const std::string& name) {
  if (name == "two-stage") return SynonymSampling::kTwoStage;
  if (name == "flat") return SynonymSampling::kFlat;
  fail_data("unknown synonym_sampling \"", name, "\" (two-stage, flat)");
}

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail_data("cannot open ", path);
  return in;
}

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail_data("cannot open ", path, " for writing");
  return out;
}

std::size_t infer_lang_count(const std::vector<TrainingExample>& examples) {
  if (examples.empty()) fail_usage("cannot infer the language count from zero examples");
  std::uint16_t max_id = 0;
  for (const TrainingExample& ex : examples) {
    for (LangId l : ex.lang_ids) max_id = std::max(max_id, l.value);
    for (LangId l : ex.label_lang_ids) max_id = std::max(max_id, l.value);
  }
  return static_cast<std::size_t>(max_id) + 1;
}

void run_sharded(std::size_t shard_count, const std::function<void(std::size_t)>& body) {
  if (shard_count <= 1) {
    body(0);
    return;
  }
  std::vector<std::thread> threads;
  std::vector<std::exception_ptr> errors(shard_count);
  for (std::size_t shard = 0; shard < shard_count; ++shard) {
    threads.emplace_back([&, shard] {
      try {
        body(shard);
      } catch (...) {
        errors[shard] = std::current_exception();
      }
    });
  }
  for (std::thread& t : threads) t.join();
  for (const std::exception_ptr& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

void apply_config_key(RunConfig& cfg, const std::string& key, const nlohmann::json& v) {
  if (key == "mode") {
    cfg.gen.mode = parse_gen_mode(as_string(key, v));
  } else if (key == "mask_rate") {
    cfg.gen.mask_rate = as_double(key, v);
  } else if (key == "t") {
    cfg.gen.t = as_double(key, v);
  } else if (key == "dup") {
    cfg.gen.dup = static_cast<std::uint32_t>(as_count(key, v));
  } else if (key == "tlm_replace_prob") {
    cfg.gen.tlm_replace_prob = as_double(key, v);
  } else if (key == "max_seq_len") {
    cfg.gen.max_seq_len = static_cast<std::size_t>(as_count(key, v));
  } else if (key == "mask_pool") {
    cfg.gen.pool = parse_mask_pool(as_string(key, v));
  } else if (key == "synonym_sampling") {
    cfg.gen.sampling = parse_synonym_sampling(as_string(key, v));
  } else if (key == "temperature") {
    cfg.sampling.temperature = as_double(key, v);
  } else if (key == "hidden") {
    cfg.model.hidden = static_cast<std::size_t>(as_count(key, v));
  } else if (key == "layers") {
    cfg.model.layers = static_cast<std::size_t>(as_count(key, v));
  } else if (key == "heads") {
    cfg.model.heads = static_cast<std::size_t>(as_count(key, v));
  } else if (key == "ffn_dim") {
    cfg.model.ffn_dim = static_cast<std::size_t>(as_count(key, v));
  } else if (key == "lang_emb_dim") {
    cfg.model.lang_emb_dim = static_cast<std::size_t>(as_count(key, v));
  } else if (key == "max_positions") {
    cfg.model.max_positions = static_cast<std::size_t>(as_count(key, v));
  } else if (key == "dropout") {
    cfg.model.dropout = as_double(key, v);
  } else if (key == "lang_conditioning") {
    cfg.model.conditioning = as_bool(key, v);
  } else if (key == "tie_output") {
    cfg.model.tie_output = as_bool(key, v);
  } else if (key == "lang_count") {
    cfg.lang_count = static_cast<std::size_t>(as_count(key, v));
  } else if (key == "lr") {
    cfg.train.lr = as_double(key, v);
  } else if (key == "warmup_steps") {
    cfg.train.warmup_steps = static_cast<std::size_t>(as_count(key, v));
  } else if (key == "total_steps") {
    cfg.train.total_steps = static_cast<std::size_t>(as_count(key, v));
  } else if (key == "batch_size") {
    cfg.train.batch_size = static_cast<std::size_t>(as_count(key, v));
  } else if (key == "weight_decay") {
    cfg.train.weight_decay = as_double(key, v);
  } else if (key == "beta1") {
    cfg.train.beta1 = as_double(key, v);
  } else if (key == "beta2") {
    cfg.train.beta2 = as_double(key, v);
  } else if (key == "eps") {
    cfg.train.eps = as_double(key, v);
  } else if (key == "grad_clip") {
    cfg.train.grad_clip = as_double(key, v);
  } else if (key == "checkpoint_every") {
    cfg.train.checkpoint_every = static_cast<std::size_t>(as_count(key, v));
  } else if (key == "synth_preset") {
    cfg.synth_preset = as_string(key, v);
  } else if (key == "lemma_count") {
    cfg.synth.lemma_count = static_cast<std::size_t>(as_count(key, v));
  } else if (key == "zipf_s") {
    cfg.synth.zipf_s = as_double(key, v);
  } else if (key == "min_words") {
    cfg.synth.min_words = static_cast<std::size_t>(as_count(key, v));
  } else if (key == "max_words") {
    cfg.synth.max_words = static_cast<std::size_t>(as_count(key, v));
  } else if (key == "synth_sentences") {
    cfg.synth.sentences = static_cast<std::size_t>(as_count(key, v));
  } else if (key == "coverage") {
    cfg.synth.coverage = as_double(key, v);
  } else if (key == "pair_count") {
    cfg.synth.pair_count = static_cast<std::size_t>(as_count(key, v));
  } else if (key == "repeat_prob") {
    cfg.synth.repeat_prob = as_double(key, v);
  } else if (key == "seed") {
    cfg.seed = as_count(key, v);
  } else if (key == "workers") {
    cfg.workers = static_cast<std::size_t>(as_count(key, v));
  } else if (key == "vocab_size") {
    cfg.vocab_size = static_cast<std::size_t>(as_count(key, v));
  } else if (key == "min_freq") {
    cfg.min_freq = static_cast<std::size_t>(as_count(key, v));
  } else if (key == "sentence_count") {
    cfg.sentence_count = as_count(key, v);
  } else if (key == "manifest") {
    cfg.manifest = as_string(key, v);
  } else if (key == "lexicon") {
    cfg.lexicon = as_string(key, v);
  } else if (key == "vocab") {
    cfg.vocab = as_string(key, v);
  } else if (key == "examples") {
    cfg.examples = as_string(key, v);
  } else if (key == "stats") {
    cfg.stats = as_string(key, v);
  } else if (key == "checkpoint") {
    cfg.checkpoint = as_string(key, v);
  } else if (key == "resume") {
    cfg.resume = as_string(key, v);
  } else if (key == "metrics") {
    cfg.metrics = as_string(key, v);
  } else if (key == "pairs") {
    cfg.pairs = as_string(key, v);
  } else if (key == "report") {
    cfg.report = as_string(key, v);
  } else if (key == "out_dir") {
    cfg.out_dir = as_string(key, v);
  } else {
    fail_data("unknown config key \"", key, "\"");
  }
}

void load_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in = open_input(path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail_data(path, ": not valid JSON: ", e.what());
  }
  if (!doc.is_object()) fail_data(path, ": config must be a JSON object");
  for (const auto& [key, value] : doc.items()) {
    try {
      apply_config_key(cfg, key, value);
    } catch (const std::runtime_error& e) {
      fail_data(path, ": ", e.what());
    }
  }
}

void finalize_config(RunConfig& cfg) {
  cfg.gen.seed = cfg.seed;
  cfg.sampling.seed = cfg.seed;
  cfg.train.seed = cfg.seed;
  cfg.synth.seed = cfg.seed;
  if (!cfg.synth_preset.empty()) {
    if (cfg.synth_preset == "near") {
      cfg.synth.languages = near_pair_config().languages;
    } else if (cfg.synth_preset == "far") {
      cfg.synth.languages = far_pair_config().languages;
    } else {
      fail_data("unknown synth_preset \"", cfg.synth_preset, "\" (near, far)");
    }
  }
}

std::string config_key_help() {
  return
      "config keys (JSON object; flags override file values):\n"
      "  mode              dict-mlm      objective: dict-mlm | dict-tlm | vanilla\n"
      "  mask_rate         0.15          fraction of whole words masked per sentence\n"
      "  t                 0.5           cross-lingual label probability\n"
      "  dup               5             dynamic-masking duplication factor\n"
      "  tlm_replace_prob  1.0           dict-tlm: synonym probability per covered word\n"
      "  max_seq_len       128           example length cap in pieces\n"
      "  mask_pool         all-words     mask budget pool: all-words | eligible-only\n"
      "  synonym_sampling  two-stage     synonym draw: two-stage | flat\n"
      "  temperature       5.0           language sampling temperature T\n"
      "  hidden            64            encoder width\n"
      "  layers            4             encoder depth\n"
      "  heads             4             attention heads\n"
      "  ffn_dim           256           feed-forward width\n"
      "  lang_emb_dim      0             language embedding width (0: hidden)\n"
      "  max_positions     128           position table size\n"
      "  dropout           0.1           dropout probability\n"
      "  lang_conditioning true          language-conditioned output head\n"
      "  tie_output        true          tie output projection to token embeddings\n"
      "  lang_count        0             language table size (0: infer)\n"
      "  lr                0.001         peak learning rate\n"
      "  warmup_steps      100           linear warmup steps\n"
      "  total_steps       1000          training steps\n"
      "  batch_size        32            examples per step\n"
      "  weight_decay      0.01          decoupled weight decay\n"
      "  beta1             0.9           Adam beta1\n"
      "  beta2             0.999         Adam beta2\n"
      "  eps               1e-8          Adam epsilon\n"
      "  grad_clip         1.0           global gradient-norm clip (0 disables)\n"
      "  checkpoint_every  0             periodic checkpoint interval (0 disables)\n"
      "  synth_preset      near          synthetic pair: near | far | \"\" (custom)\n"
      "  lemma_count       200           synthetic lemma inventory\n"
      "  zipf_s            1.2           lemma frequency exponent\n"
      "  min_words         13            synthetic sentence length lower bound\n"
      "  max_words         27            synthetic sentence length upper bound\n"
      "  synth_sentences   2000          synthetic corpus size per language\n"
      "  coverage          1.0           dictionary token-mass coverage in [0,1]\n"
      "  pair_count        200           synthetic eval pair count\n"
      "  repeat_prob       0.5           in-sentence word echo probability\n"
      "  seed              0             global seed\n"
      "  workers           1             shard parallelism for gen-data/eval\n"
      "  vocab_size        2000          wordpiece vocabulary budget\n"
      "  min_freq          2             wordpiece merge frequency floor\n"
      "  sentence_count    2000          sentences to draw in gen-data\n"
      "  manifest          \"\"            corpus manifest path\n"
      "  lexicon           \"\"            lexicon JSONL path\n"
      "  vocab             \"\"            vocabulary path\n"
      "  examples          \"\"            example JSONL path\n"
      "  stats             \"\"            stats JSON path\n"
      "  checkpoint        \"\"            model checkpoint path\n"
      "  resume            \"\"            checkpoint to resume training from\n"
      "  metrics           \"\"            training metrics CSV path\n"
      "  pairs             \"\"            parallel pair TSV path\n"
      "  report            \"\"            retrieval report path prefix\n"
      "  out_dir           \"\"            output directory for synth\n";
}

std::vector<TrainingExample> load_examples_file(const std::string& path) {
  std::ifstream in = open_input(path);
  return read_examples(in, path);
}

Vocab load_vocab_file(const std::string& path) {
  std::ifstream in = open_input(path);
  return Vocab::read(in, path);
}

GenDataResult run_gen_data(const RunConfig& cfg, const CorpusManifest& manifest,
                           const LanguageRegistry& registry, const Lexicon& lex,
                           const Vocab& vocab, std::ostream& out) {
  cfg.gen.check();
  const std::uint64_t n = cfg.sentence_count;
  if (n == 0) fail_usage("sentence_count must be positive");
  const std::size_t shard_count = std::max<std::size_t>(1, cfg.workers);

  // Per shard, per local sentence: the sentence's examples and diagnostics.
  std::vector<std::vector<std::vector<TrainingExample>>> shard_examples(shard_count);
  std::vector<std::vector<std::vector<Diagnostic>>> shard_diags(shard_count);
  std::vector<GenStats> shard_stats(shard_count);

  run_sharded(shard_count, [&](std::size_t shard) {
    SentenceStream stream(manifest, cfg.sampling, registry);
    std::vector<RawSentence> sentences = stream.take_shard(n, shard, shard_count);
    shard_examples[shard].reserve(sentences.size());
    shard_diags[shard].reserve(sentences.size());
    for (std::size_t j = 0; j < sentences.size(); ++j) {
      std::uint64_t global_index = shard + j * shard_count;
      std::vector<Diagnostic> diags;
      shard_examples[shard].push_back(examples_for_sentence(
          sentences[j].text, sentences[j].lang, global_index, cfg.gen, lex, vocab,
          shard_stats[shard], diags));
      shard_diags[shard].push_back(std::move(diags));
    }
  });

  GenDataResult result;
  for (const GenStats& s : shard_stats) result.stats.merge(s);
  for (std::uint64_t g = 0; g < n; ++g) {
    std::size_t shard = g % shard_count;
    std::size_t j = g / shard_count;
    write_examples(out, shard_examples[shard][j]);
    for (Diagnostic& d : shard_diags[shard][j]) result.diagnostics.push_back(std::move(d));
  }
  if (!out) fail_data("failed writing examples");
  return result;
}

TrainRunResult run_train(const RunConfig& cfg, const std::vector<TrainingExample>& examples,
                         const Vocab& vocab, std::ostream* metrics) {
  TrainConfig tc = cfg.train;
  if (tc.checkpoint_every > 0 && tc.checkpoint_prefix.empty()) {
    if (cfg.checkpoint.empty()) fail_usage("checkpoint_every needs a checkpoint path");
    tc.checkpoint_prefix = cfg.checkpoint + ".step";
  }

  TrainRunResult result;
  if (!cfg.resume.empty()) {
    result.params = load_checkpoint_file(cfg.resume);
    if (result.params.cfg.vocab_size != vocab.size()) {
      fail_data(cfg.resume, ": checkpoint vocab size ", result.params.cfg.vocab_size,
                " does not match the vocabulary (", vocab.size(), ")");
    }
    result.state = load_optimizer_file(cfg.resume + ".opt", result.params.manifest());
    if (result.state.step > tc.total_steps) {
      fail_data(cfg.resume, ": checkpoint is at step ", result.state.step, ", beyond total_steps ",
                tc.total_steps);
    }
    tc.start_step = result.state.step;
  } else {
    ModelConfig mc = cfg.model;
    mc.vocab_size = vocab.size();
    mc.lang_count = cfg.lang_count > 0 ? cfg.lang_count : infer_lang_count(examples);
    mc.check();
    Rng init_rng(derive_seed(cfg.seed, kInitTag));
    result.params = ModelParams::init(mc, init_rng);
    result.state = make_adam_state(result.params.manifest());
  }
  result.log = train(examples, result.params, result.state, tc, metrics);
  return result;
}

CompareOutcome run_compare(const RunConfig& cfg, std::size_t seed_count, bool with_unconditioned,
                           std::ostream* detail) {
  if (seed_count == 0) fail_usage("compare needs at least one seed");
  LanguageRegistry registry;
  SynthLang synth(cfg.synth, registry);
  if (synth.language_count() < 2) fail_usage("compare needs a two-language synthetic config");

  std::stringstream dict_stream;
  synth.write_dictionary(dict_stream, 0, 1);
  ParsedDictFile dict =
      parse_muse(dict_stream, synth.lang_id(0), synth.lang_id(1), "synthetic-dictionary");
  Lexicon lex = merge(registry, {dict}, /*symmetrize=*/true);

  const std::size_t per_lang = cfg.synth.sentences;
  std::vector<std::vector<std::string>> corpus(2);
  std::vector<std::string> vocab_lines;
  for (std::size_t li = 0; li < 2; ++li) {
    corpus[li].reserve(per_lang);
    for (std::size_t i = 0; i < per_lang; ++i) {
      corpus[li].push_back(synth.sentence_text(li, i));
      vocab_lines.push_back(corpus[li].back());
    }
  }
  Vocab vocab = train_vocab(vocab_lines, cfg.vocab_size, cfg.min_freq);
  std::vector<ParallelPair> pairs = synth.make_pairs(0, 1);

  CompareOutcome outcome;
  outcome.random_baseline = 1.0 / static_cast<double>(pairs.size());

  auto run_variant = [&](const std::string& name, GenMode mode, bool conditioning,
                         std::uint64_t run_seed) {
    GenConfig gen = cfg.gen;
    gen.mode = mode;
    gen.seed = run_seed;
    GenStats stats;
    std::vector<Diagnostic> diags;
    std::vector<TrainingExample> examples;
    for (std::size_t g = 0; g < 2 * per_lang; ++g) {
      std::size_t li = g % 2;
      auto batch = examples_for_sentence(corpus[li][g / 2], synth.lang_id(li), g, gen, lex, vocab,
                                         stats, diags);
      for (TrainingExample& ex : batch) examples.push_back(std::move(ex));
    }
    RunConfig rc = cfg;
    rc.seed = run_seed;
    rc.train.seed = run_seed;
    rc.lang_count = registry.size();
    rc.resume.clear();
    rc.model.conditioning = conditioning;
    rc.train.checkpoint_every = 0;
    TrainRunResult trained = run_train(rc, examples, vocab, nullptr);
    RetrievalReport report = layerwise_report(trained.params, pairs, vocab, cfg.workers);
    outcome.rows.push_back({name, run_seed, report.last4_avg});
    if (detail) {
      (*detail) << name << ',' << run_seed << ',' << report.last4_avg << '\n';
    }
    return report.last4_avg;
  };

  if (detail) (*detail) << "model,seed,last4_avg\n";
  for (std::size_t i = 0; i < seed_count; ++i) {
    std::uint64_t run_seed = cfg.seed + i;
    outcome.dict_last4.push_back(
        run_variant(gen_mode_name(GenMode::kDictMlm), GenMode::kDictMlm, true, run_seed));
    outcome.vanilla_last4.push_back(
        run_variant(gen_mode_name(GenMode::kVanillaMlm), GenMode::kVanillaMlm, true, run_seed));
  }
  if (with_unconditioned) {
    outcome.unconditioned_last4 =
        run_variant("dict-mlm-no-conditioning", GenMode::kDictMlm, false, cfg.seed);
  }
  return outcome;
}

void write_compare_summary(std::ostream& out, const CompareOutcome& outcome) {
  auto mean = [](const std::vector<double>& xs) {
    double s = 0.0;
    for (double x : xs) s += x;
    return xs.empty() ? 0.0 : s / static_cast<double>(xs.size());
  };
  out << "model,last4_avg\n";
  out << gen_mode_name(GenMode::kDictMlm) << ',' << mean(outcome.dict_last4) << '\n';
  out << gen_mode_name(GenMode::kVanillaMlm) << ',' << mean(outcome.vanilla_last4) << '\n';
  if (outcome.unconditioned_last4 >= 0.0) {
    out << "dict-mlm-no-conditioning," << outcome.unconditioned_last4 << '\n';
  }
}

SynthArtifacts run_synth(const RunConfig& cfg, const std::string& out_dir) {
  if (out_dir.empty()) fail_usage("synth needs an output directory");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) fail_data("cannot create ", out_dir, ": ", ec.message());

  LanguageRegistry registry;
  SynthLang synth(cfg.synth, registry);
  SynthArtifacts artifacts;
  nlohmann::ordered_json manifest = nlohmann::ordered_json::array();

  for (std::size_t li = 0; li < synth.language_count(); ++li) {
    const std::string& code = registry.code_of(synth.lang_id(li));
    std::string path = (std::filesystem::path(out_dir) / (code + ".txt")).string();
    std::ofstream out = open_output(path);
    synth.write_corpus(out, li, cfg.synth.sentences);
    artifacts.corpus_paths.push_back(path);
    manifest.push_back({{"lang", code}, {"path", path}});
  }
  for (std::size_t a = 0; a < synth.language_count(); ++a) {
    for (std::size_t b = a + 1; b < synth.language_count(); ++b) {
      const std::string& ca = registry.code_of(synth.lang_id(a));
      const std::string& cb = registry.code_of(synth.lang_id(b));
      std::string path = (std::filesystem::path(out_dir) / (ca + "-" + cb + ".dict")).string();
      std::ofstream out = open_output(path);
      synth.write_dictionary(out, a, b);
      artifacts.dict_paths.push_back(path);
    }
  }
  artifacts.manifest_path = (std::filesystem::path(out_dir) / "manifest.json").string();
  {
    std::ofstream out = open_output(artifacts.manifest_path);
    out << manifest.dump(2) << '\n';
    if (!out) fail_data("failed writing ", artifacts.manifest_path);
  }
  if (synth.language_count() >= 2) {
    artifacts.pairs_path = (std::filesystem::path(out_dir) / "pairs.tsv").string();
    std::ofstream out = open_output(artifacts.pairs_path);
    write_pairs(out, synth.make_pairs(0, 1), registry);
  }
  return artifacts;
}

}  // namespace dictmlm
