#pragma once

#include <string>
#include <vector>

#include "haris/checkpoint.hpp"

namespace haris {

// Standard Adam with bias correction; gradients are read from each
// parameter's grad field. Frozen parameters never appear in `params`.
void adam_step(const std::vector<Parameter*>& params, AdamState& state,
               const Config& cfg, double lr);

// lr * (decay_factor once epoch reaches decay_epoch)
double lr_at(int epoch, const Config& cfg);

struct EpochLog {
  int epoch = 0;
  double train_loss = 0;
  MetricsReport val;
};

struct TrainResult {
  std::vector<EpochLog> epochs;
  MetricsReport final_val;
  double best_val_mean_iou = 0;
  int best_epoch = -1;
  std::string checkpoint_path;
  std::string csv_path;
};

// Owns the model, data and optimizer state for one run. Exposed stepwise so
// tests can drive (and poison) individual pieces.
class Trainer {
 public:
  explicit Trainer(const Config& cfg);

  ModelParams& model() { return model_; }
  const std::vector<EncodedSample>& train_split() const { return train_; }
  const std::vector<EncodedSample>& val_split() const { return val_; }

  // one optimizer step over `batch` sample indices; throws ContractError
  // naming the step index when the loss goes non-finite
  double train_step(const std::vector<int>& batch, double lr);

  // Replaces the EMA running stats with cumulative-average batch moments
  // over `n` train samples, then freezes them; subsequent train steps
  // normalize with these fixed stats exactly as inference does.
  void recalibrate_and_freeze_bn(int n);
  bool bn_frozen() const { return bn_frozen_; }

  MetricsReport evaluate(const std::vector<EncodedSample>& samples);

  // full schedule; writes <out_dir>/model.ckpt and <out_dir>/metrics.csv
  TrainResult run(const std::string& out_dir);

  std::uint64_t global_step() const { return global_step_; }
  AdamState& adam() { return adam_; }
  std::string rng_state() const { return rng_.state_string(); }

 private:
  Config cfg_;
  ModelParams model_;
  std::vector<EncodedSample> train_, val_;
  std::vector<Parameter*> trainable_;
  AdamState adam_;
  Rng rng_;
  std::uint64_t global_step_ = 0;
  bool bn_frozen_ = false;
};

// Deterministic inference metrics for a stored checkpoint.
MetricsReport evaluate_checkpoint(const std::string& checkpoint_path,
                                  const std::string& split);

// Min-max normalization of one affinity column onto [0, 255]; constant maps
// (a single word's all-ones column, for instance) come out mid-gray 128.
std::vector<std::uint8_t> normalize_map_bytes(const Tensor& affinity,
                                              int column);

// Per-word affinity maps for one sample as 8-bit PGM files named
// block{i}_round{r}_word{j}_{token}.pgm (min-max normalized, mid-gray when
// the map is constant).
void dump_attention(const std::string& checkpoint_path, int sample_id,
                    const std::string& split, const std::string& out_dir);

struct AblationRow {
  std::string variant;
  MetricsReport val;
};

// Trains the baseline plus each named flag variant with shared seeds and
// writes one CSV row per variant.
std::vector<AblationRow> ablate(const Config& cfg,
                                const std::vector<std::string>& flag_names,
                                const std::string& out_csv,
                                const std::string& work_dir);

struct GradCheckReport {
  double max_rel_err = 0;
  int n_parameters = 0;
  std::int64_t n_coordinates = 0;
};

// Sweeps every trainable parameter of a model built from cfg against central
// finite differences of the full loss on one fixed synthetic sample.
GradCheckReport run_gradcheck(const Config& cfg, double h = 1e-5);

// S=16, C=C_t=8, one decoder layer, three-word expression
Config tiny_gradcheck_config();

}  // namespace haris
