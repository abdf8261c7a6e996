#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "dictmlm/model.hpp"

namespace dictmlm {

struct ParallelPair {
  std::string src_text;
  LangId src_lang;
  std::string tgt_text;
  LangId tgt_lang;
};

// TSV with a "src_code\ttgt_code" header line, then one pair per line.
std::vector<ParallelPair> read_pairs(std::istream& in, const std::string& source_label,
                                     LanguageRegistry& registry);
void write_pairs(std::ostream& out, const std::vector<ParallelPair>& pairs,
                 const LanguageRegistry& registry);

struct RetrievalReport {
  std::vector<double> per_layer_acc;  // layers 0..N
  double last4_avg = 0.0;
  std::size_t pair_count = 0;
};

// Cosine nearest-neighbor accuracy@1, source to target only. Ties go to
// the lowest target index. A zero vector is an error naming its index.
double retrieval_accuracy(const std::vector<std::vector<Real>>& src_vecs,
                          const std::vector<std::vector<Real>>& tgt_vecs);

// Mean-pools both sides of every pair at every layer and scores
// retrieval per layer. last4_avg averages the final four layer rows
// (all rows when the stack is shallower). Pairs are sharded across
// workers by index; the report is identical for any worker count.
RetrievalReport layerwise_report(const ModelParams& params, const std::vector<ParallelPair>& pairs,
                                 const Vocab& vocab, std::size_t workers = 1);

void write_retrieval_csv(std::ostream& out, const RetrievalReport& report);
void write_retrieval_json(std::ostream& out, const RetrievalReport& report);

// Recomputes generation statistics from an example stream. Word counts
// come from continuation-piece structure: a masked word's pieces are its
// label pieces, an unmasked word's pieces sit in the token stream.
GenStats masking_stats_report(const std::vector<TrainingExample>& examples, const Vocab& vocab);

}  // namespace dictmlm
