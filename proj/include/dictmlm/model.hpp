#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "dictmlm/examplegen.hpp"
#include "dictmlm/tensor.hpp"
#include "dictmlm/tokenizer.hpp"

namespace dictmlm {

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t hidden = 64;
  std::size_t layers = 4;
  std::size_t heads = 4;
  std::size_t ffn_dim = 256;
  std::size_t lang_count = 0;
  std::size_t lang_emb_dim = 0;  // 0 means same as hidden
  std::size_t max_positions = 128;
  double dropout = 0.1;
  bool conditioning = true;      // language-conditioned MLM head
  bool tie_output = true;        // output projection = token embedding

  std::size_t lang_dim() const { return lang_emb_dim == 0 ? hidden : lang_emb_dim; }
  std::size_t head_in() const { return conditioning ? hidden + lang_dim() : hidden; }
  void check() const;
};

struct LayerParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln1_gain, ln1_bias;
  Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  Tensor ln2_gain, ln2_bias;
};

// One language-embedding table serves both the input layer and the head.
struct ModelParams {
  ModelConfig cfg;
  Tensor token_emb;  // [V, H]
  Tensor pos_emb;    // [P, H]
  Tensor seg_emb;    // [2, H]
  Tensor lang_emb;   // [L, E]
  Tensor emb_ln_gain, emb_ln_bias;
  std::vector<LayerParams> layers;
  Tensor head_w1;  // [head_in, H]
  Tensor head_b1;
  Tensor head_ln_gain, head_ln_bias;
  Tensor out_bias;  // [V]
  Tensor out_emb;   // [V, H], only when untied

  // Truncated-normal(0.02) weights, zero biases, unit layer-norm gains.
  static ModelParams init(const ModelConfig& cfg, Rng& rng);

  // Stable (name, tensor) order shared by checkpoints, optimizer state,
  // and gradient diagnostics. Handles share storage with the fields.
  std::vector<std::pair<std::string, Tensor>> manifest() const;
};

// Examples padded to one rectangular batch. Masked positions are flat
// b*seq + s indices into the padded stream.
struct Batch {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::vector<std::size_t> token_ids;
  std::vector<std::size_t> lang_ids;
  std::vector<std::size_t> segment_ids;
  std::vector<std::size_t> lengths;      // unpadded length per example
  std::vector<std::size_t> masked_flat;
  std::vector<std::size_t> label_ids;
  std::vector<std::size_t> label_lang_ids;
};

Batch make_batch(const std::vector<TrainingExample>& examples, std::size_t lo, std::size_t hi);

struct ForwardResult {
  std::vector<Tensor> hiddens;  // layers+1 tensors of shape [batch*seq, hidden]
  Tensor logits;                // [masked, vocab]; undefined when no masked positions
};

// dropout_p = 0 gives the deterministic evaluation path (no RNG draws).
ForwardResult forward(const ModelParams& params, const Batch& batch, double dropout_p, Rng& rng);

// Mean cross-entropy over masked positions.
Tensor mlm_loss(const Tensor& logits, const std::vector<std::size_t>& label_ids);

// Mean-pooled hidden state over non-special token positions, one vector
// per layer 0..N. Layer 0 is the post-input-embedding state.
std::vector<std::vector<Real>> embed_sentence_layers(const std::string& text, LangId lang,
                                                     const ModelParams& params, const Vocab& vocab);
std::vector<Real> embed_sentence(const std::string& text, LangId lang, std::size_t layer,
                                 const ModelParams& params, const Vocab& vocab);

// Self-describing container: magic, JSON header (config + manifest with
// shapes), then raw little-endian f64 arrays in manifest order.
void save_checkpoint(std::ostream& out, const ModelParams& params);
ModelParams load_checkpoint(std::istream& in, const std::string& source_label);
void save_checkpoint_file(const std::string& path, const ModelParams& params);
ModelParams load_checkpoint_file(const std::string& path);

}  // namespace dictmlm
