#include "haris/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace haris {

namespace fs = std::filesystem;

void adam_step(const std::vector<Parameter*>& params, AdamState& state,
               const Config& cfg, double lr) {
  if (state.m.size() != params.size())
    throw ContractError("adam_step: state is misaligned with parameters");
  state.t += 1;
  const double b1 = cfg.beta1, b2 = cfg.beta2;
  const double bc1 = 1.0 - std::pow(b1, double(state.t));
  const double bc2 = 1.0 - std::pow(b2, double(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    if (!p.grad.same_shape(p.value))
      throw DimensionError("adam_step: grad " + p.grad.shape_str() +
                           " vs value " + p.value.shape_str() + " for " +
                           p.name);
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    for (std::size_t k = 0; k < p.value.data.size(); ++k) {
      const double g = p.grad.data[k];
      m.data[k] = b1 * m.data[k] + (1.0 - b1) * g;
      v.data[k] = b2 * v.data[k] + (1.0 - b2) * g * g;
      const double m_hat = m.data[k] / bc1;
      const double v_hat = v.data[k] / bc2;
      p.value.data[k] -= lr * m_hat / (std::sqrt(v_hat) + cfg.adam_eps);
    }
  }
}

double lr_at(int epoch, const Config& cfg) {
  if (epoch < 0 || epoch >= cfg.epochs)
    throw ContractError("lr_at: epoch " + std::to_string(epoch) +
                        " outside [0, " + std::to_string(cfg.epochs) + ")");
  return cfg.lr * (epoch >= cfg.decay_epoch ? cfg.decay_factor : 1.0);
}

namespace {

MetricsReport evaluate_model(ModelParams& model,
                             const std::vector<EncodedSample>& samples,
                             const Config& cfg) {
  std::vector<std::pair<BinaryMask, BinaryMask>> pairs;
  pairs.reserve(samples.size());
  for (const EncodedSample& s : samples) {
    Tape t(false);
    ModelForwardOut out = model_forward(t, model, s, cfg, false, false);
    pairs.emplace_back(binarize(out.mask.logits, out.mask.height,
                                out.mask.width),
                       s.gt_mask);
  }
  return aggregate_metrics(pairs);
}

std::vector<EncodedSample> split_samples(const Config& cfg,
                                         const EncoderStubParams& stub,
                                         const std::string& split) {
  if (split == "train")
    return make_split(cfg.train_samples, cfg.data_seed, stub, cfg.image_size);
  if (split == "val")
    return make_split(cfg.val_samples, kValSeedOffset + cfg.data_seed, stub,
                      cfg.image_size);
  throw ContractError("unknown split: " + split);
}

EncodedSample synthetic_gradcheck_sample(const Config& cfg,
                                         std::uint64_t seed) {
  Rng rng(splitmix64(seed) ^ 0x9dc4f1b3u);
  const int g = cfg.image_size / 4;
  const int l_v = g * g, l_t = 3;
  auto randn = [&rng](int r, int c, double s) {
    Tensor t({r, c});
    for (double& v : t.data) v = rng.normal() * s;
    return t;
  };
  EncodedSample s;
  s.f_v1 = randn(l_v, cfg.channels, 0.5);
  s.f_v2 = randn(l_v, cfg.channels, 0.5);
  s.f_v3 = randn(l_v, cfg.channels, 0.5);
  s.f_w = randn(l_t, cfg.text_channels, 1.0);
  s.f_s = randn(1, cfg.text_channels, 1.0);
  s.gt_mask = BinaryMask(cfg.image_size, cfg.image_size);
  for (auto& b : s.gt_mask.v) b = rng.uniform() < 0.3 ? 1 : 0;
  if (s.gt_mask.count() == 0) s.gt_mask.v[0] = 1;
  return s;
}

}  // namespace

Trainer::Trainer(const Config& cfg)
    : cfg_(cfg),
      model_(make_model(cfg)),
      rng_(splitmix64(cfg.init_seed) ^ 0x7a41c3d2u) {
  cfg_.validate();
  train_ = split_samples(cfg_, model_.stub, "train");
  val_ = split_samples(cfg_, model_.stub, "val");
  for (const auto* split : {&train_, &val_})
    for (const EncodedSample& s : *split)
      if (int(s.scene.expression.size()) > cfg_.word_cap)
        throw ContractError("expression longer than word_cap in sample " +
                            std::to_string(s.seed));
  trainable_ = model_.trainable();
  adam_ = make_adam_state(trainable_);
}

double Trainer::train_step(const std::vector<int>& batch, double lr) {
  if (batch.empty()) throw ContractError("train_step: empty batch");
  for (Parameter* p : trainable_) p->zero_grad();
  double loss_sum = 0.0;
  for (int idx : batch) {
    const EncodedSample& s = train_.at(std::size_t(idx));
    Tape t(true);
    ModelForwardOut out =
        model_forward(t, model_, s, cfg_, !bn_frozen_, !bn_frozen_);
    LossBreakdown lb = segmentation_loss(t, out.mask.logits, s.gt_mask,
                                         cfg_.focal_gamma, cfg_.focal_alpha);
    if (!std::isfinite(lb.total))
      throw ContractError("non-finite loss at step " +
                          std::to_string(global_step_));
    loss_sum += lb.total;
    t.backward(lb.total_node);
    t.accumulate_param_grads();
  }
  const double inv_b = 1.0 / double(batch.size());
  for (Parameter* p : trainable_)
    for (double& g : p->grad.data) g *= inv_b;
  adam_step(trainable_, adam_, cfg_, lr);
  ++global_step_;
  return loss_sum * inv_b;
}

MetricsReport Trainer::evaluate(const std::vector<EncodedSample>& samples) {
  return evaluate_model(model_, samples, cfg_);
}

void Trainer::recalibrate_and_freeze_bn(int n) {
  std::vector<ConvBAParams*> convs = model_.conv_blocks();
  for (ConvBAParams* c : convs) {
    std::fill(c->bn_mean.value.data.begin(), c->bn_mean.value.data.end(), 0.0);
    std::fill(c->bn_var.value.data.begin(), c->bn_var.value.data.end(), 0.0);
  }
  // momentum 1/k turns the EMA update into a cumulative average
  const int count = std::min<int>(n, int(train_.size()));
  for (int k = 1; k <= count; ++k) {
    for (ConvBAParams* c : convs) c->bn_momentum = 1.0 / double(k);
    Tape t(false);
    model_forward(t, model_, train_[std::size_t(k - 1)], cfg_, true, true);
  }
  for (ConvBAParams* c : convs) c->bn_momentum = 0.1;
  bn_frozen_ = true;
}

TrainResult Trainer::run(const std::string& out_dir) {
  fs::create_directories(out_dir);
  TrainResult result;
  result.csv_path = out_dir + "/metrics.csv";
  result.checkpoint_path = out_dir + "/model.ckpt";

  std::ofstream csv(result.csv_path);
  if (!csv) throw IoError("cannot open for write: " + result.csv_path);
  csv << "epoch," << kMetricsCsvColumns << "\n";

  std::vector<int> order(train_.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = int(i);

  for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
    const double lr = lr_at(epoch, cfg_);
    if (epoch == cfg_.bn_freeze_epoch)
      recalibrate_and_freeze_bn(std::min(500, cfg_.train_samples));
    for (int i = int(order.size()) - 1; i > 0; --i)
      std::swap(order[i], order[rng_.uniform_int(0, i)]);

    double epoch_loss = 0.0;
    for (int step = 0; step < cfg_.steps_per_epoch; ++step) {
      std::vector<int> batch(cfg_.batch_size);
      for (int k = 0; k < cfg_.batch_size; ++k)
        batch[k] = order[(std::size_t(step) * cfg_.batch_size + k) %
                         order.size()];
      epoch_loss += train_step(batch, lr);
    }
    epoch_loss /= double(cfg_.steps_per_epoch);

    EpochLog log;
    log.epoch = epoch;
    log.train_loss = epoch_loss;
    log.val = evaluate(val_);
    csv << epoch << "," << metrics_csv_row(log.val) << "\n";
    if (log.val.mean_iou > result.best_val_mean_iou) {
      result.best_val_mean_iou = log.val.mean_iou;
      result.best_epoch = epoch;
    }
    result.final_val = log.val;
    std::cout << "epoch " << epoch << " lr " << lr << " loss " << epoch_loss
              << " val_mean_iou " << log.val.mean_iou << std::endl;
    result.epochs.push_back(std::move(log));
  }
  csv.close();
  if (!csv) throw IoError("write failed: " + result.csv_path);

  save_checkpoint(result.checkpoint_path, cfg_, model_, &adam_, global_step_,
                  rng_.state_string());
  return result;
}

MetricsReport evaluate_checkpoint(const std::string& checkpoint_path,
                                  const std::string& split) {
  LoadedCheckpoint ck = load_checkpoint(checkpoint_path);
  std::vector<EncodedSample> samples =
      split_samples(ck.cfg, ck.model.stub, split);
  return evaluate_model(ck.model, samples, ck.cfg);
}

std::vector<std::uint8_t> normalize_map_bytes(const Tensor& affinity,
                                              int column) {
  double lo = affinity.at(0, column), hi = affinity.at(0, column);
  for (int r = 1; r < affinity.rows(); ++r) {
    lo = std::min(lo, affinity.at(r, column));
    hi = std::max(hi, affinity.at(r, column));
  }
  std::vector<std::uint8_t> bytes(std::size_t(affinity.rows()), 128);
  if (hi - lo > 1e-12 * std::max(1.0, std::abs(hi))) {
    for (int r = 0; r < affinity.rows(); ++r)
      bytes[r] = std::uint8_t(
          std::lround(255.0 * (affinity.at(r, column) - lo) / (hi - lo)));
  }
  return bytes;
}

void dump_attention(const std::string& checkpoint_path, int sample_id,
                    const std::string& split, const std::string& out_dir) {
  LoadedCheckpoint ck = load_checkpoint(checkpoint_path);
  const int split_size =
      split == "train" ? ck.cfg.train_samples : ck.cfg.val_samples;
  const std::uint64_t base = split == "train"
                                 ? ck.cfg.data_seed
                                 : kValSeedOffset + ck.cfg.data_seed;
  if (split != "train" && split != "val")
    throw ContractError("unknown split: " + split);
  if (sample_id < 0 || sample_id >= split_size)
    throw ContractError("missing sample " + std::to_string(sample_id) +
                        " in split " + split + " of size " +
                        std::to_string(split_size));
  std::vector<EncodedSample> one =
      make_split(1, base + std::uint64_t(sample_id), ck.model.stub,
                 ck.cfg.image_size);
  const EncodedSample& s = one[0];

  Tape t(false);
  ModelForwardOut out = model_forward(t, ck.model, s, ck.cfg, false, false);

  fs::create_directories(out_dir);
  const int side = grid_side(s.f_v1.rows());
  for (int b = 0; b < 3; ++b) {
    if (!out.fusion.per_block[b]) continue;
    const HABlockOutput& block = *out.fusion.per_block[b];
    for (int round = 1; round <= 2; ++round) {
      const Tensor& aff = round == 1 ? block.affinity_r1 : block.affinity_r2;
      for (int j = 0; j < aff.cols(); ++j) {
        // column count equals the expression length for every block (the
        // linguistic chain preserves L_t), so columns map to tokens directly
        const std::string token = j < int(s.scene.expression.size())
                                      ? s.scene.expression[j]
                                      : std::to_string(j);
        std::vector<std::uint8_t> bytes = normalize_map_bytes(aff, j);
        char name[128];
        std::snprintf(name, sizeof(name), "block%d_round%d_word%d_%s.pgm",
                      b + 1, round, j, token.c_str());
        write_pgm(out_dir + "/" + name, bytes, side, side);
      }
    }
  }
}

std::vector<AblationRow> ablate(const Config& cfg,
                                const std::vector<std::string>& flag_names,
                                const std::string& out_csv,
                                const std::string& work_dir) {
  std::vector<std::pair<std::string, Config>> variants;
  variants.emplace_back("baseline", cfg);
  for (const std::string& name : flag_names) {
    Config v = cfg;
    if (!apply_ablation_flag(v, name))
      throw ContractError("unknown ablation flag: " + name);
    variants.emplace_back(name, v);
  }

  std::vector<AblationRow> rows;
  for (auto& [name, vcfg] : variants) {
    std::cout << "ablate: training variant " << name << std::endl;
    Trainer trainer(vcfg);
    TrainResult res = trainer.run(work_dir + "/" + name);
    rows.push_back({name, res.final_val});
  }

  fs::create_directories(fs::path(out_csv).parent_path().empty()
                             ? "."
                             : fs::path(out_csv).parent_path().string());
  std::ofstream f(out_csv);
  if (!f) throw IoError("cannot open for write: " + out_csv);
  f << "variant," << kMetricsCsvColumns << "\n";
  for (const AblationRow& r : rows)
    f << r.variant << "," << metrics_csv_row(r.val) << "\n";
  if (!f) throw IoError("write failed: " + out_csv);
  return rows;
}

Config tiny_gradcheck_config() {
  Config cfg;
  cfg.image_size = 16;
  cfg.channels = 8;
  cfg.text_channels = 8;
  cfg.decoder_layers = 1;
  return cfg;
}

GradCheckReport run_gradcheck(const Config& cfg, double h) {
  ModelParams model = make_model(cfg);
  const EncodedSample sample = synthetic_gradcheck_sample(cfg, 12345);
  auto f = [&](Tape& t) -> Tensor {
    ModelForwardOut out = model_forward(t, model, sample, cfg, true, false);
    return segmentation_loss(t, out.mask.logits, sample.gt_mask,
                             cfg.focal_gamma, cfg.focal_alpha)
        .total_node;
  };
  std::vector<Parameter*> params = model.trainable();
  GradCheckReport rep;
  rep.n_parameters = int(params.size());
  for (Parameter* p : params) rep.n_coordinates += p->value.numel();
  rep.max_rel_err = grad_check(f, params, h);
  return rep;
}

}  // namespace haris
