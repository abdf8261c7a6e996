#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "dictmlm/model.hpp"

namespace dictmlm {

struct TrainConfig {
  double lr = 1e-3;
  std::size_t warmup_steps = 100;
  std::size_t total_steps = 1000;
  std::size_t batch_size = 32;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip = 1.0;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;    // 0 disables periodic checkpoints
  std::string checkpoint_prefix;       // "<prefix><step>.ckpt" + ".ckpt.opt"
  std::size_t start_step = 0;          // resume point

  void check() const;
};

struct AdamState {
  std::vector<std::vector<Real>> m;
  std::vector<std::vector<Real>> v;
  std::uint64_t step = 0;
};

AdamState make_adam_state(const std::vector<std::pair<std::string, Tensor>>& params);

// Linear warmup 0 -> lr over warmup_steps, then linear decay to 0 at
// total_steps.
double lr_at(std::size_t step, const TrainConfig& cfg);

// Decoupled-weight-decay Adam with global-norm gradient clipping. Expects
// gradients already populated; errors on a non-finite gradient, naming
// the parameter.
void adamw_step(const std::vector<std::pair<std::string, Tensor>>& params, AdamState& state,
                const TrainConfig& cfg, std::size_t step);

struct TrainLog {
  std::vector<double> losses;  // one entry per executed step
  std::size_t final_step = 0;
};

// Runs steps [start_step, total_steps). The batch at a step is a pure
// function of (seed, step), so a resumed run replays the original
// schedule bitwise. metrics_csv, when set, receives "step,loss,lr,xling_frac"
// rows.
TrainLog train(const std::vector<TrainingExample>& examples, ModelParams& model, AdamState& state,
               const TrainConfig& cfg, std::ostream* metrics_csv);

// Optimizer sidecar: same container style as model checkpoints (JSON
// header, raw little-endian f64 arrays, m then v per parameter).
void save_optimizer(std::ostream& out, const AdamState& state,
                    const std::vector<std::pair<std::string, Tensor>>& params);
AdamState load_optimizer(std::istream& in, const std::string& source_label,
                         const std::vector<std::pair<std::string, Tensor>>& params);
void save_optimizer_file(const std::string& path, const AdamState& state,
                         const std::vector<std::pair<std::string, Tensor>>& params);
AdamState load_optimizer_file(const std::string& path,
                              const std::vector<std::pair<std::string, Tensor>>& params);

}  // namespace dictmlm
