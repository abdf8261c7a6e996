#include "dictmlm/evalsuite.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <ostream>
#include <thread>

#include <nlohmann/json.hpp>

namespace dictmlm {

namespace {

std::vector<std::string> split_tab(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == '\t') {
      out.push_back(line.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

}  // namespace

std::vector<ParallelPair> read_pairs(std::istream& in, const std::string& source_label,
                                     LanguageRegistry& registry) {
  std::string line;
  if (!std::getline(in, line)) fail_data(source_label, ": empty pairs file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> header = split_tab(line);
  if (header.size() != 2 || header[0].empty() || header[1].empty()) {
    fail_data(source_label, ":1: header must be two tab-separated language codes");
  }
  if (header[0] == header[1]) {
    fail_data(source_label, ":1: source and target language are both ", header[0]);
  }
  LangId src_lang = registry.add(header[0]);
  LangId tgt_lang = registry.add(header[1]);

  std::vector<ParallelPair> pairs;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields = split_tab(line);
    if (fields.size() != 2 || fields[0].empty() || fields[1].empty()) {
      fail_data(source_label, ":", line_no, ": expected two tab-separated sentences");
    }
    pairs.push_back({fields[0], src_lang, fields[1], tgt_lang});
  }
  return pairs;
}

void write_pairs(std::ostream& out, const std::vector<ParallelPair>& pairs,
                 const LanguageRegistry& registry) {
  if (pairs.empty()) fail_usage("refusing to write an empty pairs file");
  out << registry.code_of(pairs.front().src_lang) << '\t' << registry.code_of(pairs.front().tgt_lang)
      << '\n';
  for (const ParallelPair& p : pairs) out << p.src_text << '\t' << p.tgt_text << '\n';
  if (!out) fail_data("failed writing pairs");
}

double retrieval_accuracy(const std::vector<std::vector<Real>>& src_vecs,
                          const std::vector<std::vector<Real>>& tgt_vecs) {
  if (src_vecs.empty() || src_vecs.size() != tgt_vecs.size()) {
    fail_usage("retrieval needs equal non-empty sides, got ", src_vecs.size(), " and ",
               tgt_vecs.size());
  }
  auto norm_of = [](const std::vector<Real>& v) {
    double s = 0.0;
    for (Real x : v) s += static_cast<double>(x) * static_cast<double>(x);
    return std::sqrt(s);
  };
  std::vector<double> tgt_norm(tgt_vecs.size());
  for (std::size_t j = 0; j < tgt_vecs.size(); ++j) {
    tgt_norm[j] = norm_of(tgt_vecs[j]);
    if (tgt_norm[j] == 0.0) fail_data("target vector ", j, " is zero");
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < src_vecs.size(); ++i) {
    double src_norm = norm_of(src_vecs[i]);
    if (src_norm == 0.0) fail_data("source vector ", i, " is zero");
    std::size_t best = 0;
    double best_cos = -2.0;
    for (std::size_t j = 0; j < tgt_vecs.size(); ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < src_vecs[i].size(); ++k) {
        dot += static_cast<double>(src_vecs[i][k]) * static_cast<double>(tgt_vecs[j][k]);
      }
      double cos = dot / (src_norm * tgt_norm[j]);
      if (cos > best_cos) {  // strict: ties keep the lowest index
        best_cos = cos;
        best = j;
      }
    }
    if (best == i) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(src_vecs.size());
}

RetrievalReport layerwise_report(const ModelParams& params, const std::vector<ParallelPair>& pairs,
                                 const Vocab& vocab, std::size_t workers) {
  if (pairs.empty()) fail_usage("retrieval needs at least one pair");
  std::size_t layer_count = params.cfg.layers + 1;
  std::vector<std::vector<std::vector<Real>>> src(layer_count), tgt(layer_count);
  for (std::size_t l = 0; l < layer_count; ++l) {
    src[l].resize(pairs.size());
    tgt[l].resize(pairs.size());
  }
  std::size_t shard_count = std::max<std::size_t>(1, std::min(workers, pairs.size()));
  auto embed_shard = [&](std::size_t shard) {
    for (std::size_t i = shard; i < pairs.size(); i += shard_count) {
      auto src_layers = embed_sentence_layers(pairs[i].src_text, pairs[i].src_lang, params, vocab);
      auto tgt_layers = embed_sentence_layers(pairs[i].tgt_text, pairs[i].tgt_lang, params, vocab);
      for (std::size_t l = 0; l < layer_count; ++l) {
        src[l][i] = std::move(src_layers[l]);
        tgt[l][i] = std::move(tgt_layers[l]);
      }
    }
  };
  if (shard_count == 1) {
    embed_shard(0);
  } else {
    std::vector<std::thread> threads;
    std::vector<std::exception_ptr> errors(shard_count);
    for (std::size_t shard = 0; shard < shard_count; ++shard) {
      threads.emplace_back([&, shard] {
        try {
          embed_shard(shard);
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
  RetrievalReport report;
  report.pair_count = pairs.size();
  for (std::size_t l = 0; l < layer_count; ++l) {
    report.per_layer_acc.push_back(retrieval_accuracy(src[l], tgt[l]));
  }
  std::size_t tail = std::min<std::size_t>(4, report.per_layer_acc.size());
  double sum = 0.0;
  for (std::size_t l = layer_count - tail; l < layer_count; ++l) sum += report.per_layer_acc[l];
  report.last4_avg = sum / static_cast<double>(tail);
  return report;
}

void write_retrieval_csv(std::ostream& out, const RetrievalReport& report) {
  out << "layer,accuracy\n";
  for (std::size_t l = 0; l < report.per_layer_acc.size(); ++l) {
    out << l << ',' << std::setprecision(10) << report.per_layer_acc[l] << '\n';
  }
  if (!out) fail_data("failed writing retrieval CSV");
}

void write_retrieval_json(std::ostream& out, const RetrievalReport& report) {
  nlohmann::ordered_json j;
  j["last4_avg"] = report.last4_avg;
  j["pair_count"] = report.pair_count;
  j["per_layer"] = report.per_layer_acc;
  out << j.dump(2) << '\n';
  if (!out) fail_data("failed writing retrieval JSON");
}

GenStats masking_stats_report(const std::vector<TrainingExample>& examples, const Vocab& vocab) {
  GenStats s;
  s.example_count = examples.size();
  for (const TrainingExample& ex : examples) {
    std::uint16_t frame_lang = ex.lang_ids.empty() ? 0 : ex.lang_ids[0].value;
    std::size_t mi = 0;
    for (std::size_t pos = 0; pos < ex.token_ids.size(); ++pos) {
      bool masked = mi < ex.masked_positions.size() && ex.masked_positions[mi] == pos;
      if (masked) {
        PieceId label = ex.label_ids[mi];
        if (!vocab.is_continuation(label)) {
          s.word_count += 1;
          s.masked_words += 1;
          if (ex.label_lang_ids[mi].value != frame_lang) s.labels_xling += 1;
          s.label_lang_counts[ex.label_lang_ids[mi].value] += 1;
        }
        PieceId tok = ex.token_ids[pos];
        if (tok == Vocab::kMask) {
          s.corrupt_mask += 1;
        } else if (tok == label) {
          s.corrupt_keep += 1;
        } else {
          s.corrupt_random += 1;
        }
        ++mi;
      } else {
        PieceId tok = ex.token_ids[pos];
        // [UNK] stands in for a whole unsegmentable word.
        if (tok == Vocab::kUnk || (tok >= Vocab::kSpecialCount && !vocab.is_continuation(tok))) {
          s.word_count += 1;
        }
      }
    }
  }
  return s;
}

}  // namespace dictmlm
