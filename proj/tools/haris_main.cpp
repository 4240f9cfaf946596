#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "haris/trainer.hpp"

namespace {

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"HARIS desk-scale referring image segmentation"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "export a synthetic split");
  int gen_n = 100;
  std::uint64_t gen_seed = 0;
  std::string gen_out;
  int gen_size = 32;
  gen->add_option("--n", gen_n, "number of samples")->required();
  gen->add_option("--seed", gen_seed, "base seed");
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--image-size", gen_size, "square image size");

  auto* train = app.add_subcommand("train", "train a model");
  std::string train_cfg, train_out;
  train->add_option("--config", train_cfg, "config file")->required();
  train->add_option("--out", train_out, "output directory")->required();

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string eval_ckpt, eval_split = "val";
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  eval->add_option("--split", eval_split, "train or val");

  auto* gradcheck = app.add_subcommand("gradcheck",
                                       "finite-difference gradient sweep");
  std::string gc_cfg, gc_dims;
  gradcheck->add_option("--config", gc_cfg, "config file");
  gradcheck->add_option("--dims", gc_dims, "tiny: S=16 C=C_t=8 N_dec=1");

  auto* dump = app.add_subcommand("dump-attention",
                                  "write per-word affinity maps as PGM");
  std::string dump_ckpt, dump_out, dump_split = "val";
  int dump_sample = 0;
  dump->add_option("--checkpoint", dump_ckpt, "checkpoint file")->required();
  dump->add_option("--sample", dump_sample, "sample index")->required();
  dump->add_option("--split", dump_split, "train or val");
  dump->add_option("--out", dump_out, "output directory")->required();

  auto* ablate_cmd = app.add_subcommand("ablate", "train flag variants");
  std::string ab_cfg, ab_flags, ab_out;
  ablate_cmd->add_option("--config", ab_cfg, "config file")->required();
  ablate_cmd->add_option("--flags", ab_flags,
                         "csv list: no_hs,r_ca,no_fb,no_vw,no_lw,r_de");
  ablate_cmd->add_option("--out", ab_out, "output csv")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      haris::export_split(gen_out, gen_n, gen_seed, gen_size);
      std::cout << "wrote " << gen_n << " samples to " << gen_out << std::endl;
    } else if (train->parsed()) {
      haris::Config cfg = haris::load_config(train_cfg);
      haris::Trainer trainer(cfg);
      haris::TrainResult res = trainer.run(train_out);
      std::cout << "checkpoint: " << res.checkpoint_path << "\n"
                << "metrics:    " << res.csv_path << "\n"
                << "best val mean IoU " << res.best_val_mean_iou << " at epoch "
                << res.best_epoch << std::endl;
    } else if (eval->parsed()) {
      haris::MetricsReport r = haris::evaluate_checkpoint(eval_ckpt, eval_split);
      std::cout << haris::kMetricsCsvColumns << "\n"
                << haris::metrics_csv_row(r) << std::endl;
    } else if (gradcheck->parsed()) {
      haris::Config cfg;
      if (!gc_cfg.empty()) cfg = haris::load_config(gc_cfg);
      if (gc_dims == "tiny") {
        haris::Config tiny = haris::tiny_gradcheck_config();
        cfg.image_size = tiny.image_size;
        cfg.channels = tiny.channels;
        cfg.text_channels = tiny.text_channels;
        cfg.decoder_layers = tiny.decoder_layers;
      } else if (!gc_dims.empty()) {
        throw haris::ContractError("unknown --dims preset: " + gc_dims);
      }
      haris::GradCheckReport rep = haris::run_gradcheck(cfg);
      std::printf("gradcheck: %d parameters, %lld coordinates, "
                  "max relative error %.3e\n",
                  rep.n_parameters, (long long)rep.n_coordinates,
                  rep.max_rel_err);
      if (rep.max_rel_err > 1e-4) {
        std::printf("FAIL: exceeds 1e-4\n");
        return 1;
      }
      std::printf("PASS: within 1e-4\n");
    } else if (dump->parsed()) {
      haris::dump_attention(dump_ckpt, dump_sample, dump_split, dump_out);
      std::cout << "attention maps written to " << dump_out << std::endl;
    } else if (ablate_cmd->parsed()) {
      haris::Config cfg = haris::load_config(ab_cfg);
      const std::string work = ab_out + ".runs";
      auto rows = haris::ablate(cfg, split_csv(ab_flags), ab_out, work);
      for (const auto& r : rows)
        std::cout << r.variant << "," << haris::metrics_csv_row(r.val)
                  << std::endl;
    }
  } catch (const haris::IoError& e) {
    std::cerr << "io error: " << e.what() << std::endl;
    return 2;
  } catch (const haris::ContractError& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  return 0;
}
