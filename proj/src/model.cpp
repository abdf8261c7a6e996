#include "dictmlm/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include <nlohmann/json.hpp>

namespace dictmlm {

void ModelConfig::check() const {
  if (vocab_size <= Vocab::kSpecialCount) fail_usage("vocab size ", vocab_size, " is too small");
  if (hidden == 0 || heads == 0 || hidden % heads != 0) {
    fail_usage("hidden ", hidden, " must be a positive multiple of heads ", heads);
  }
  if (layers == 0) fail_usage("need at least one transformer layer");
  if (ffn_dim == 0) fail_usage("ffn dim must be positive");
  if (lang_count == 0) fail_usage("language count must be positive");
  if (lang_dim() > hidden) fail_usage("language embedding dim ", lang_dim(), " exceeds hidden ", hidden);
  if (max_positions < 4) fail_usage("max positions ", max_positions, " is too small");
  if (dropout < 0.0 || dropout >= 1.0) fail_usage("dropout must be in [0, 1), got ", dropout);
}

namespace {

ModelParams make_zero(const ModelConfig& cfg) {
  cfg.check();
  std::size_t h = cfg.hidden;
  auto leaf = [](Shape shape) { return Tensor::zeros(std::move(shape), true); };
  ModelParams p;
  p.cfg = cfg;
  p.token_emb = leaf({cfg.vocab_size, h});
  p.pos_emb = leaf({cfg.max_positions, h});
  p.seg_emb = leaf({2, h});
  p.lang_emb = leaf({cfg.lang_count, cfg.lang_dim()});
  p.emb_ln_gain = leaf({h});
  p.emb_ln_bias = leaf({h});
  p.layers.resize(cfg.layers);
  for (LayerParams& l : p.layers) {
    l.wq = leaf({h, h});
    l.bq = leaf({h});
    l.wk = leaf({h, h});
    l.bk = leaf({h});
    l.wv = leaf({h, h});
    l.bv = leaf({h});
    l.wo = leaf({h, h});
    l.bo = leaf({h});
    l.ln1_gain = leaf({h});
    l.ln1_bias = leaf({h});
    l.ffn_w1 = leaf({h, cfg.ffn_dim});
    l.ffn_b1 = leaf({cfg.ffn_dim});
    l.ffn_w2 = leaf({cfg.ffn_dim, h});
    l.ffn_b2 = leaf({h});
    l.ln2_gain = leaf({h});
    l.ln2_bias = leaf({h});
  }
  p.head_w1 = leaf({cfg.head_in(), h});
  p.head_b1 = leaf({h});
  p.head_ln_gain = leaf({h});
  p.head_ln_bias = leaf({h});
  p.out_bias = leaf({cfg.vocab_size});
  if (!cfg.tie_output) p.out_emb = leaf({cfg.vocab_size, h});
  return p;
}

void fill_truncated_normal(Tensor& t, Rng& rng) {
  for (Real& v : t.mutable_value()) v = Real(rng.truncated_normal(0.0, 0.02));
}

void fill_ones(Tensor& t) {
  for (Real& v : t.mutable_value()) v = Real(1);
}

bool is_gain(const std::string& name) {
  return name.size() >= 4 && name.compare(name.size() - 4, 4, "gain") == 0;
}

bool is_weight(const std::string& name) {
  // Embedding tables and projection matrices get random init; biases and
  // layer-norm shifts stay zero.
  return name.find("emb") != std::string::npos || name.find("_w") != std::string::npos ||
         name.find("w1") != std::string::npos;
}

}  // namespace

ModelParams ModelParams::init(const ModelConfig& cfg, Rng& rng) {
  ModelParams p = make_zero(cfg);
  for (auto& [name, tensor] : p.manifest()) {
    Tensor t = tensor;
    if (is_gain(name)) {
      fill_ones(t);
    } else if (t.rank() == 2 && is_weight(name)) {
      fill_truncated_normal(t, rng);
    }
  }
  return p;
}

std::vector<std::pair<std::string, Tensor>> ModelParams::manifest() const {
  std::vector<std::pair<std::string, Tensor>> m;
  m.emplace_back("token_emb", token_emb);
  m.emplace_back("pos_emb", pos_emb);
  m.emplace_back("seg_emb", seg_emb);
  m.emplace_back("lang_emb", lang_emb);
  m.emplace_back("emb_ln_gain", emb_ln_gain);
  m.emplace_back("emb_ln_bias", emb_ln_bias);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerParams& l = layers[i];
    std::string pre = strcat_all("layer", i, ".");
    m.emplace_back(pre + "attn_wq", l.wq);
    m.emplace_back(pre + "attn_bq", l.bq);
    m.emplace_back(pre + "attn_wk", l.wk);
    m.emplace_back(pre + "attn_bk", l.bk);
    m.emplace_back(pre + "attn_wv", l.wv);
    m.emplace_back(pre + "attn_bv", l.bv);
    m.emplace_back(pre + "attn_wo", l.wo);
    m.emplace_back(pre + "attn_bo", l.bo);
    m.emplace_back(pre + "ln1_gain", l.ln1_gain);
    m.emplace_back(pre + "ln1_bias", l.ln1_bias);
    m.emplace_back(pre + "ffn_w1", l.ffn_w1);
    m.emplace_back(pre + "ffn_b1", l.ffn_b1);
    m.emplace_back(pre + "ffn_w2", l.ffn_w2);
    m.emplace_back(pre + "ffn_b2", l.ffn_b2);
    m.emplace_back(pre + "ln2_gain", l.ln2_gain);
    m.emplace_back(pre + "ln2_bias", l.ln2_bias);
  }
  m.emplace_back("head_w1", head_w1);
  m.emplace_back("head_b1", head_b1);
  m.emplace_back("head_ln_gain", head_ln_gain);
  m.emplace_back("head_ln_bias", head_ln_bias);
  m.emplace_back("out_bias", out_bias);
  if (!cfg.tie_output) m.emplace_back("out_emb", out_emb);
  return m;
}

Batch make_batch(const std::vector<TrainingExample>& examples, std::size_t lo, std::size_t hi) {
  if (lo >= hi || hi > examples.size()) {
    fail_usage("batch range [", lo, ", ", hi, ") invalid for ", examples.size(), " examples");
  }
  Batch b;
  b.batch = hi - lo;
  for (std::size_t i = lo; i < hi; ++i) b.seq = std::max(b.seq, examples[i].token_ids.size());
  b.token_ids.assign(b.batch * b.seq, Vocab::kPad);
  b.lang_ids.assign(b.batch * b.seq, 0);
  b.segment_ids.assign(b.batch * b.seq, 0);
  for (std::size_t i = lo; i < hi; ++i) {
    const TrainingExample& ex = examples[i];
    std::size_t base = (i - lo) * b.seq;
    b.lengths.push_back(ex.token_ids.size());
    for (std::size_t j = 0; j < ex.token_ids.size(); ++j) {
      b.token_ids[base + j] = ex.token_ids[j];
      b.lang_ids[base + j] = ex.lang_ids[j].value;
      b.segment_ids[base + j] = ex.segment_ids[j];
    }
    for (std::size_t k = 0; k < ex.masked_positions.size(); ++k) {
      b.masked_flat.push_back(base + ex.masked_positions[k]);
      b.label_ids.push_back(ex.label_ids[k]);
      b.label_lang_ids.push_back(ex.label_lang_ids[k].value);
    }
  }
  return b;
}

ForwardResult forward(const ModelParams& params, const Batch& batch, double dropout_p, Rng& rng) {
  const ModelConfig& cfg = params.cfg;
  if (batch.batch == 0 || batch.seq == 0) fail_usage("forward on an empty batch");
  if (batch.seq > cfg.max_positions) {
    fail_usage("sequence length ", batch.seq, " exceeds the position table (", cfg.max_positions, ")");
  }
  std::size_t bs = batch.batch * batch.seq;
  std::size_t h = cfg.hidden;
  std::size_t dh = h / cfg.heads;

  std::vector<std::size_t> pos_ids(bs);
  for (std::size_t i = 0; i < bs; ++i) pos_ids[i] = i % batch.seq;

  ForwardResult res;
  Tensor x = rows(params.token_emb, batch.token_ids);
  x = add(x, rows(params.pos_emb, pos_ids));
  x = add(x, rows(params.seg_emb, batch.segment_ids));
  Tensor lang = rows(params.lang_emb, batch.lang_ids);
  if (cfg.lang_dim() < h) {
    lang = concat_last(lang, Tensor::zeros({bs, h - cfg.lang_dim()}));
  }
  x = add(x, lang);
  x = layer_norm(x, params.emb_ln_gain, params.emb_ln_bias);
  x = dropout(x, dropout_p, rng);
  res.hiddens.push_back(x);

  // Additive attention bias: padded key positions get -1e9, which exp()
  // underflows to an exact zero weight after softmax.
  std::vector<Real> bias(batch.batch * cfg.heads * batch.seq * batch.seq, Real(0));
  for (std::size_t b = 0; b < batch.batch; ++b) {
    for (std::size_t j = batch.lengths[b]; j < batch.seq; ++j) {
      for (std::size_t a = 0; a < cfg.heads; ++a) {
        Real* block = bias.data() + ((b * cfg.heads + a) * batch.seq) * batch.seq;
        for (std::size_t i = 0; i < batch.seq; ++i) block[i * batch.seq + j] = Real(-1e9);
      }
    }
  }
  Tensor attn_bias =
      Tensor::from_vector({batch.batch * cfg.heads, batch.seq, batch.seq}, std::move(bias));
  Real inv_sqrt_dh = Real(1) / std::sqrt(Real(dh));

  for (const LayerParams& l : params.layers) {
    Tensor q = split_heads(add(matmul(x, l.wq), l.bq), batch.batch, batch.seq, cfg.heads);
    Tensor k = split_heads(add(matmul(x, l.wk), l.bk), batch.batch, batch.seq, cfg.heads);
    Tensor v = split_heads(add(matmul(x, l.wv), l.bv), batch.batch, batch.seq, cfg.heads);
    Tensor scores = add(scale(batched_matmul_nt(q, k), inv_sqrt_dh), attn_bias);
    Tensor attn = dropout(softmax_last(scores), dropout_p, rng);
    Tensor ctx = merge_heads(batched_matmul(attn, v), batch.batch, batch.seq, cfg.heads);
    Tensor att_out = dropout(add(matmul(ctx, l.wo), l.bo), dropout_p, rng);
    x = layer_norm(add(x, att_out), l.ln1_gain, l.ln1_bias);
    Tensor ff = gelu(add(matmul(x, l.ffn_w1), l.ffn_b1));
    ff = dropout(add(matmul(ff, l.ffn_w2), l.ffn_b2), dropout_p, rng);
    x = layer_norm(add(x, ff), l.ln2_gain, l.ln2_bias);
    res.hiddens.push_back(x);
  }

  if (!batch.masked_flat.empty()) {
    for (std::size_t flat : batch.masked_flat) {
      if (flat >= bs) fail_data("masked position ", flat, " outside the batch");
      if (batch.token_ids[flat] == Vocab::kPad) {
        fail_data("masked position ", flat, " points at padding");
      }
    }
    Tensor hm = rows(x, batch.masked_flat);
    Tensor head_in = cfg.conditioning
                         ? concat_last(hm, rows(params.lang_emb, batch.label_lang_ids))
                         : hm;
    Tensor g = gelu(add(matmul(head_in, params.head_w1), params.head_b1));
    g = layer_norm(g, params.head_ln_gain, params.head_ln_bias);
    const Tensor& table = cfg.tie_output ? params.token_emb : params.out_emb;
    res.logits = add(matmul_nt(g, table), params.out_bias);
  }
  return res;
}

Tensor mlm_loss(const Tensor& logits, const std::vector<std::size_t>& label_ids) {
  return cross_entropy_mean(logits, label_ids);
}

std::vector<std::vector<Real>> embed_sentence_layers(const std::string& text, LangId lang,
                                                     const ModelParams& params, const Vocab& vocab) {
  TokenizedSentence sent = encode(text, lang, vocab);
  if (sent.word_count() == 0) fail_data("cannot embed an empty sentence");
  std::size_t budget = params.cfg.max_positions - 2;
  std::vector<PieceId> pieces = sent.piece_ids;
  if (pieces.size() > budget) pieces.resize(budget);

  TrainingExample ex;
  ex.token_ids.push_back(Vocab::kCls);
  for (PieceId id : pieces) ex.token_ids.push_back(id);
  ex.token_ids.push_back(Vocab::kSep);
  ex.lang_ids.assign(ex.token_ids.size(), lang);
  ex.segment_ids.assign(ex.token_ids.size(), 0);

  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < ex.token_ids.size(); ++i) {
    if (ex.token_ids[i] >= Vocab::kSpecialCount) pool.push_back(i);
  }
  if (pool.empty()) fail_data("sentence has no content tokens to pool: \"", text, "\"");

  NoGradGuard no_grad;
  Rng rng(0);
  Batch batch = make_batch({ex}, 0, 1);
  ForwardResult res = forward(params, batch, 0.0, rng);

  std::size_t h = params.cfg.hidden;
  std::vector<std::vector<Real>> out;
  out.reserve(res.hiddens.size());
  for (const Tensor& layer : res.hiddens) {
    std::vector<Real> mean(h, Real(0));
    for (std::size_t i : pool) {
      const Real* row = layer.value().data() + i * h;
      for (std::size_t j = 0; j < h; ++j) mean[j] += row[j];
    }
    for (Real& v : mean) v /= Real(pool.size());
    out.push_back(std::move(mean));
  }
  return out;
}

std::vector<Real> embed_sentence(const std::string& text, LangId lang, std::size_t layer,
                                 const ModelParams& params, const Vocab& vocab) {
  if (layer > params.cfg.layers) {
    fail_usage("layer ", layer, " out of range 0..", params.cfg.layers);
  }
  return embed_sentence_layers(text, lang, params, vocab)[layer];
}

namespace {

constexpr char kMagic[4] = {'D', 'M', 'L', 'M'};
constexpr std::uint32_t kFormatVersion = 1;

void write_u64(std::ostream& out, std::uint64_t v) {
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(bytes, 8);
}

std::uint64_t read_u64(std::istream& in, const std::string& source_label) {
  char bytes[8];
  if (!in.read(bytes, 8)) fail_data(source_label, ": truncated checkpoint");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(static_cast<unsigned char>(bytes[i])) << (8 * i);
  return v;
}

nlohmann::ordered_json config_to_json(const ModelConfig& cfg) {
  nlohmann::ordered_json j;
  j["vocab_size"] = cfg.vocab_size;
  j["hidden"] = cfg.hidden;
  j["layers"] = cfg.layers;
  j["heads"] = cfg.heads;
  j["ffn_dim"] = cfg.ffn_dim;
  j["lang_count"] = cfg.lang_count;
  j["lang_emb_dim"] = cfg.lang_emb_dim;
  j["max_positions"] = cfg.max_positions;
  j["dropout"] = cfg.dropout;
  j["conditioning"] = cfg.conditioning;
  j["tie_output"] = cfg.tie_output;
  return j;
}

ModelConfig config_from_json(const nlohmann::json& j, const std::string& source_label) {
  try {
    ModelConfig cfg;
    cfg.vocab_size = j.at("vocab_size").get<std::size_t>();
    cfg.hidden = j.at("hidden").get<std::size_t>();
    cfg.layers = j.at("layers").get<std::size_t>();
    cfg.heads = j.at("heads").get<std::size_t>();
    cfg.ffn_dim = j.at("ffn_dim").get<std::size_t>();
    cfg.lang_count = j.at("lang_count").get<std::size_t>();
    cfg.lang_emb_dim = j.at("lang_emb_dim").get<std::size_t>();
    cfg.max_positions = j.at("max_positions").get<std::size_t>();
    cfg.dropout = j.at("dropout").get<double>();
    cfg.conditioning = j.at("conditioning").get<bool>();
    cfg.tie_output = j.at("tie_output").get<bool>();
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    fail_data(source_label, ": bad checkpoint config: ", e.what());
  }
}

}  // namespace

void save_checkpoint(std::ostream& out, const ModelParams& params) {
  nlohmann::ordered_json header;
  header["format_version"] = kFormatVersion;
  header["config"] = config_to_json(params.cfg);
  nlohmann::ordered_json manifest = nlohmann::ordered_json::array();
  for (const auto& [name, tensor] : params.manifest()) {
    nlohmann::ordered_json entry;
    entry["name"] = name;
    entry["shape"] = tensor.shape();
    manifest.push_back(entry);
  }
  header["params"] = manifest;
  std::string header_bytes = header.dump();

  out.write(kMagic, 4);
  write_u64(out, header_bytes.size());
  out.write(header_bytes.data(), static_cast<std::streamsize>(header_bytes.size()));
  for (const auto& [name, tensor] : params.manifest()) {
    for (Real v : tensor.value()) {
      double d = static_cast<double>(v);
      std::uint64_t bits;
      std::memcpy(&bits, &d, 8);
      write_u64(out, bits);
    }
  }
  if (!out) fail_data("failed writing checkpoint");
}

ModelParams load_checkpoint(std::istream& in, const std::string& source_label) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    fail_data(source_label, ": not a model checkpoint");
  }
  std::uint64_t header_len = read_u64(in, source_label);
  if (header_len == 0 || header_len > (std::uint64_t(1) << 24)) {
    fail_data(source_label, ": implausible checkpoint header length ", header_len);
  }
  std::string header_bytes(header_len, '\0');
  if (!in.read(header_bytes.data(), static_cast<std::streamsize>(header_len))) {
    fail_data(source_label, ": truncated checkpoint header");
  }
  nlohmann::json header = nlohmann::json::parse(header_bytes, nullptr, false);
  if (header.is_discarded()) fail_data(source_label, ": unparseable checkpoint header");
  if (header.value("format_version", 0u) != kFormatVersion) {
    fail_data(source_label, ": unsupported checkpoint format version");
  }
  ModelConfig cfg = config_from_json(header.at("config"), source_label);
  ModelParams params = make_zero(cfg);

  auto manifest = params.manifest();
  const nlohmann::json& stored = header.at("params");
  if (!stored.is_array() || stored.size() != manifest.size()) {
    fail_data(source_label, ": checkpoint manifest has ", stored.size(), " entries, expected ",
              manifest.size());
  }
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    auto& [name, tensor] = manifest[i];
    std::string stored_name = stored[i].at("name").get<std::string>();
    Shape stored_shape = stored[i].at("shape").get<Shape>();
    if (stored_name != name || stored_shape != tensor.shape()) {
      fail_data(source_label, ": checkpoint entry ", i, " is ", stored_name, shape_str(stored_shape),
                ", expected ", name, shape_str(tensor.shape()));
    }
    Tensor t = tensor;
    for (Real& v : t.mutable_value()) {
      std::uint64_t bits = read_u64(in, source_label);
      double d;
      std::memcpy(&d, &bits, 8);
      v = static_cast<Real>(d);
    }
  }
  return params;
}

void save_checkpoint_file(const std::string& path, const ModelParams& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail_data("cannot open ", path, " for writing");
  save_checkpoint(out, params);
}

ModelParams load_checkpoint_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail_data("cannot open checkpoint ", path);
  return load_checkpoint(in, path);
}

}  // namespace dictmlm
