#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "haris/model.hpp"

namespace haris {

// Adam state aligned with ModelParams::trainable() order.
struct AdamState {
  std::vector<Tensor> m, v;
  std::uint64_t t = 0;
};

AdamState make_adam_state(const std::vector<Parameter*>& trainable);

// Little-endian binary container: magic "HARISCKP", u32 version, the exact
// canonical config text, every parameter by name with shape and raw values,
// optimizer moments, step counter and RNG state. save -> load -> save is
// byte-identical.
inline constexpr char kCheckpointMagic[8] = {'H', 'A', 'R', 'I',
                                             'S', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const Config& cfg,
                     ModelParams& model, const AdamState* adam,
                     std::uint64_t global_step, const std::string& rng_state);

struct LoadedCheckpoint {
  Config cfg;
  ModelParams model;
  AdamState adam;
  bool has_adam = false;
  std::uint64_t global_step = 0;
  std::string rng_state;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace haris
