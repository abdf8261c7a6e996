#include "dictmlm/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>

#include <nlohmann/json.hpp>

namespace dictmlm {

namespace {

constexpr std::uint64_t kShuffleTag = 0x73687566ULL;
constexpr std::uint64_t kDropoutTag = 0x64726f70ULL;

}  // namespace

void TrainConfig::check() const {
  if (lr <= 0.0) fail_usage("learning rate must be positive, got ", lr);
  if (warmup_steps > total_steps) {
    fail_usage("warmup (", warmup_steps, ") cannot exceed total steps (", total_steps, ")");
  }
  if (total_steps == 0) fail_usage("total steps must be positive");
  if (batch_size == 0) fail_usage("batch size must be positive");
  if (weight_decay < 0.0) fail_usage("weight decay must be non-negative, got ", weight_decay);
  if (start_step > total_steps) {
    fail_usage("start step ", start_step, " is past total steps ", total_steps);
  }
}

AdamState make_adam_state(const std::vector<std::pair<std::string, Tensor>>& params) {
  AdamState state;
  state.m.reserve(params.size());
  state.v.reserve(params.size());
  for (const auto& [name, tensor] : params) {
    state.m.emplace_back(tensor.size(), Real(0));
    state.v.emplace_back(tensor.size(), Real(0));
  }
  return state;
}

double lr_at(std::size_t step, const TrainConfig& cfg) {
  if (step >= cfg.total_steps) return 0.0;
  if (step < cfg.warmup_steps) {
    return cfg.lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  }
  return cfg.lr * static_cast<double>(cfg.total_steps - step) /
         static_cast<double>(cfg.total_steps - cfg.warmup_steps);
}

void adamw_step(const std::vector<std::pair<std::string, Tensor>>& params, AdamState& state,
                const TrainConfig& cfg, std::size_t step) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    fail_usage("optimizer state has ", state.m.size(), " slots for ", params.size(), " parameters");
  }
  double sq_norm = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, tensor] = params[i];
    if (!tensor.has_grad()) fail_data("parameter ", name, " has no gradient");
    for (Real g : tensor.grad()) {
      if (!std::isfinite(g)) fail_data("non-finite gradient in ", name);
      sq_norm += static_cast<double>(g) * static_cast<double>(g);
    }
  }
  double norm = std::sqrt(sq_norm);
  double clip_scale = (cfg.grad_clip > 0.0 && norm > cfg.grad_clip) ? cfg.grad_clip / norm : 1.0;

  double lr = lr_at(step, cfg);
  double t = static_cast<double>(state.step) + 1.0;
  double bc1 = 1.0 - std::pow(cfg.beta1, t);
  double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor tensor = params[i].second;
    std::vector<Real>& p = tensor.mutable_value();
    const std::vector<Real>& grad = tensor.grad();
    std::vector<Real>& m = state.m[i];
    std::vector<Real>& v = state.v[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      double g = static_cast<double>(grad[j]) * clip_scale;
      double mj = cfg.beta1 * static_cast<double>(m[j]) + (1.0 - cfg.beta1) * g;
      double vj = cfg.beta2 * static_cast<double>(v[j]) + (1.0 - cfg.beta2) * g * g;
      m[j] = Real(mj);
      v[j] = Real(vj);
      double update = (mj / bc1) / (std::sqrt(vj / bc2) + cfg.eps) +
                      cfg.weight_decay * static_cast<double>(p[j]);
      p[j] = Real(static_cast<double>(p[j]) - lr * update);
    }
  }
  state.step += 1;
}

namespace {

std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, std::uint64_t epoch) {
  Rng rng(derive_seed(seed, kShuffleTag, epoch));
  return rng.sample_without_replacement(n, n);
}

double batch_xling_fraction(const Batch& batch) {
  if (batch.masked_flat.empty()) return 0.0;
  std::size_t xling = 0;
  for (std::size_t i = 0; i < batch.masked_flat.size(); ++i) {
    std::size_t example = batch.masked_flat[i] / batch.seq;
    std::size_t frame_lang = batch.lang_ids[example * batch.seq];  // [CLS] carries it
    if (batch.label_lang_ids[i] != frame_lang) ++xling;
  }
  return static_cast<double>(xling) / static_cast<double>(batch.masked_flat.size());
}

void write_checkpoint_pair(const std::string& prefix, std::size_t step, const ModelParams& model,
                           const AdamState& state) {
  // The sidecar sits at "<checkpoint>.opt" so any written checkpoint can
  // be passed to resume as-is.
  std::string path = strcat_all(prefix, step, ".ckpt");
  save_checkpoint_file(path, model);
  save_optimizer_file(path + ".opt", state, model.manifest());
}

}  // namespace

TrainLog train(const std::vector<TrainingExample>& examples, ModelParams& model, AdamState& state,
               const TrainConfig& cfg, std::ostream* metrics_csv) {
  cfg.check();
  if (examples.empty()) fail_data("no training examples");
  auto params = model.manifest();
  if (state.m.empty()) state = make_adam_state(params);

  std::size_t bs = std::min(cfg.batch_size, examples.size());
  std::size_t batches_per_epoch = examples.size() / bs;

  if (metrics_csv && cfg.start_step == 0) *metrics_csv << "step,loss,lr,xling_frac\n";

  // Epoch permutations are re-derived from (seed, epoch), so a resumed
  // run sees exactly the batches the uninterrupted run would have seen.
  std::uint64_t cur_epoch = std::uint64_t(-1);
  std::vector<std::size_t> perm;

  TrainLog log;
  for (std::size_t step = cfg.start_step; step < cfg.total_steps; ++step) {
    std::uint64_t epoch = step / batches_per_epoch;
    std::size_t slot = step % batches_per_epoch;
    if (epoch != cur_epoch) {
      perm = epoch_permutation(examples.size(), cfg.seed, epoch);
      cur_epoch = epoch;
    }
    std::vector<TrainingExample> chosen;
    chosen.reserve(bs);
    for (std::size_t i = 0; i < bs; ++i) chosen.push_back(examples[perm[slot * bs + i]]);
    Batch batch = make_batch(chosen, 0, bs);

    for (auto& [name, tensor] : params) {
      Tensor t = tensor;
      t.zero_grad();
    }
    Rng dropout_rng(derive_seed(cfg.seed, kDropoutTag, step));
    ForwardResult fwd = forward(model, batch, model.cfg.dropout, dropout_rng);
    if (!fwd.logits.defined()) fail_data("batch at step ", step, " has no masked positions");
    Tensor loss = mlm_loss(fwd.logits, batch.label_ids);
    double loss_value = loss.item();
    if (!std::isfinite(loss_value)) fail_data("non-finite loss at step ", step);
    loss.backward();
    adamw_step(params, state, cfg, step);

    log.losses.push_back(loss_value);
    log.final_step = step + 1;
    if (metrics_csv) {
      *metrics_csv << step << ',' << std::setprecision(10) << loss_value << ','
                   << std::setprecision(10) << lr_at(step, cfg) << ','
                   << std::setprecision(6) << batch_xling_fraction(batch) << '\n';
    }
    if (cfg.checkpoint_every > 0 && !cfg.checkpoint_prefix.empty() &&
        (step + 1) % cfg.checkpoint_every == 0 && step + 1 < cfg.total_steps) {
      write_checkpoint_pair(cfg.checkpoint_prefix, step + 1, model, state);
    }
  }
  if (!cfg.checkpoint_prefix.empty()) {
    write_checkpoint_pair(cfg.checkpoint_prefix, cfg.total_steps, model, state);
  }
  return log;
}

namespace {

constexpr char kOptMagic[4] = {'D', 'O', 'P', 'T'};
constexpr std::uint32_t kOptVersion = 1;

void write_u64le(std::ostream& out, std::uint64_t v) {
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(bytes, 8);
}

std::uint64_t read_u64le(std::istream& in, const std::string& source_label) {
  char bytes[8];
  if (!in.read(bytes, 8)) fail_data(source_label, ": truncated optimizer state");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(static_cast<unsigned char>(bytes[i])) << (8 * i);
  return v;
}

void write_array(std::ostream& out, const std::vector<Real>& a) {
  for (Real x : a) {
    double d = static_cast<double>(x);
    std::uint64_t bits;
    std::memcpy(&bits, &d, 8);
    write_u64le(out, bits);
  }
}

void read_array(std::istream& in, const std::string& source_label, std::vector<Real>& a) {
  for (Real& x : a) {
    std::uint64_t bits = read_u64le(in, source_label);
    double d;
    std::memcpy(&d, &bits, 8);
    x = static_cast<Real>(d);
  }
}

}  // namespace

void save_optimizer(std::ostream& out, const AdamState& state,
                    const std::vector<std::pair<std::string, Tensor>>& params) {
  if (state.m.size() != params.size()) {
    fail_usage("optimizer state has ", state.m.size(), " slots for ", params.size(), " parameters");
  }
  nlohmann::ordered_json header;
  header["format_version"] = kOptVersion;
  header["step"] = state.step;
  nlohmann::ordered_json manifest = nlohmann::ordered_json::array();
  for (const auto& [name, tensor] : params) {
    nlohmann::ordered_json entry;
    entry["name"] = name;
    entry["size"] = tensor.size();
    manifest.push_back(entry);
  }
  header["params"] = manifest;
  std::string header_bytes = header.dump();
  out.write(kOptMagic, 4);
  write_u64le(out, header_bytes.size());
  out.write(header_bytes.data(), static_cast<std::streamsize>(header_bytes.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    write_array(out, state.m[i]);
    write_array(out, state.v[i]);
  }
  if (!out) fail_data("failed writing optimizer state");
}

AdamState load_optimizer(std::istream& in, const std::string& source_label,
                         const std::vector<std::pair<std::string, Tensor>>& params) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kOptMagic, 4) != 0) {
    fail_data(source_label, ": not an optimizer state file");
  }
  std::uint64_t header_len = read_u64le(in, source_label);
  if (header_len == 0 || header_len > (std::uint64_t(1) << 24)) {
    fail_data(source_label, ": implausible optimizer header length ", header_len);
  }
  std::string header_bytes(header_len, '\0');
  if (!in.read(header_bytes.data(), static_cast<std::streamsize>(header_len))) {
    fail_data(source_label, ": truncated optimizer header");
  }
  nlohmann::json header = nlohmann::json::parse(header_bytes, nullptr, false);
  if (header.is_discarded()) fail_data(source_label, ": unparseable optimizer header");
  if (header.value("format_version", 0u) != kOptVersion) {
    fail_data(source_label, ": unsupported optimizer format version");
  }
  const nlohmann::json& stored = header.at("params");
  if (!stored.is_array() || stored.size() != params.size()) {
    fail_data(source_label, ": optimizer manifest has ", stored.size(), " entries, expected ",
              params.size());
  }
  AdamState state = make_adam_state(params);
  state.step = header.at("step").get<std::uint64_t>();
  for (std::size_t i = 0; i < params.size(); ++i) {
    std::string name = stored[i].at("name").get<std::string>();
    std::size_t size = stored[i].at("size").get<std::size_t>();
    if (name != params[i].first || size != params[i].second.size()) {
      fail_data(source_label, ": optimizer entry ", i, " is ", name, "(", size, "), expected ",
                params[i].first, "(", params[i].second.size(), ")");
    }
    read_array(in, source_label, state.m[i]);
    read_array(in, source_label, state.v[i]);
  }
  return state;
}

void save_optimizer_file(const std::string& path, const AdamState& state,
                         const std::vector<std::pair<std::string, Tensor>>& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail_data("cannot open ", path, " for writing");
  save_optimizer(out, state, params);
}

AdamState load_optimizer_file(const std::string& path,
                              const std::vector<std::pair<std::string, Tensor>>& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail_data("cannot open optimizer state ", path);
  return load_optimizer(in, path, params);
}

}  // namespace dictmlm
