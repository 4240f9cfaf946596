#pragma once

#include <functional>

#include "haris/config.hpp"
#include "haris/decoder.hpp"
#include "haris/fusion.hpp"
#include "haris/synthetic.hpp"

namespace haris {

// Full parameter set: frozen encoder stubs plus the trainable fusion stack,
// decoder, query token and upsample head.
struct ModelParams {
  EncoderStubParams stub;
  FusionStackParams fusion;
  DecoderParams decoder;

  // fixed enumeration order; the checkpoint layout depends on it
  void visit(const std::function<void(Parameter&)>& fn);
  std::vector<Parameter*> all();
  std::vector<Parameter*> trainable();
  std::vector<ConvBAParams*> conv_blocks();
  void zero_grads();
};

ModelParams make_model(const Config& cfg);

struct ModelForwardOut {
  MaskLogits mask;
  FusionOutput fusion;
  Tensor m_out, v_out;
};

ModelForwardOut model_forward(Tape& t, ModelParams& m,
                              const EncodedSample& sample, const Config& cfg,
                              bool training, bool update_bn);

FusionOptions fusion_options(const Config& cfg);

}  // namespace haris
