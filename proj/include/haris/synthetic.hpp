#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "haris/loss_metrics.hpp"
#include "haris/rng.hpp"
#include "haris/tensor.hpp"

namespace haris {

class VocabularyError : public ContractError {
 public:
  using ContractError::ContractError;
};

enum class ShapeKind { circle, square, triangle };
enum class ShapeColor { red, green, blue, yellow };

const char* to_token(ShapeKind k);
const char* to_token(ShapeColor c);

struct ShapeSpec {
  ShapeKind kind;
  ShapeColor color;
  int cx = 0, cy = 0;
  int size = 0;  // radius / half-extent in pixels
};

struct SceneSpec {
  int image_size = 0;
  std::vector<ShapeSpec> objects;  // 2..4, pairwise disjoint footprints
  int referred_index = 0;
  std::vector<std::string> expression;
};

struct Image {
  int width = 0, height = 0;
  std::vector<double> rgb;  // row-major, 3 channels, values in [0, 1]

  Image() = default;
  Image(int w, int h) : width(w), height(h), rgb(std::size_t(w) * h * 3, 0) {}
  double& at(int y, int x, int c) {
    return rgb[(std::size_t(y) * width + x) * 3 + c];
  }
  double at(int y, int x, int c) const {
    return rgb[(std::size_t(y) * width + x) * 3 + c];
  }
};

struct SceneRender {
  Image image;
  std::vector<BinaryMask> footprints;  // one per object
};

// side predicates used by spatial expressions: left means 2*cx < S, etc.
bool on_side(const ShapeSpec& obj, const std::string& side_word,
             int image_size);
// does `obj` satisfy the expression template (the generator's own predicate)
bool expression_matches(const std::vector<std::string>& expr,
                        const ShapeSpec& obj, int image_size);

// Deterministic scene from a seed: 2-4 non-overlapping shapes on a dark
// background plus an expression that identifies the referred object
// uniquely. Ambiguous draws are rejected; after 100 attempts the generator
// falls back to a 2-object distinct-color layout that always succeeds.
std::pair<SceneSpec, SceneRender> generate_scene(std::uint64_t seed,
                                                 int image_size);

// Fixed token inventory: colors, shape kinds, spatial words, fillers.
class Vocabulary {
 public:
  static const Vocabulary& instance();
  int id(const std::string& token) const;  // VocabularyError when unknown
  const std::vector<std::string>& tokens() const { return tokens_; }
  int size() const { return int(tokens_.size()); }

 private:
  Vocabulary();
  std::vector<std::string> tokens_;
};

// Frozen stand-ins for the pretrained image/text encoders: seeded random
// projections plus pooling for depth and a sinusoidal position code. None of
// these parameters ever receives a gradient.
struct EncoderStubParams {
  Parameter embed;                   // V-by-C_t
  Parameter proj1, proj2, proj3;     // 48-by-C
  Parameter sentence_transform;      // C_t-by-C_t
  int C = 0, C_t = 0;
};

EncoderStubParams encoder_stub_params(std::uint64_t stub_seed, int C, int C_t);

// image -> (G*G)-by-48 flattened 4x4 patch vectors, G = S/4
Tensor patchify(const Image& img);
// mean over the in-bounds k-by-k patch-grid neighborhood, k odd
Tensor pool_patches(const Tensor& patches, int grid, int k);
// sinusoidal 2-d position code over the patch grid, C divisible by 4
Tensor position_code(int grid, int C, double amplitude = 0.5);

struct EncodedLevels {
  Tensor f_v1, f_v2, f_v3;  // (G*G)-by-C each
};

EncodedLevels encode_image_stub(const EncoderStubParams& stub,
                                const Image& img);

struct EncodedText {
  Tensor f_w;  // L_t-by-C_t
  Tensor f_s;  // 1-by-C_t
};

// 1 <= L_t <= 25; unknown tokens raise VocabularyError
EncodedText encode_text_stub(const EncoderStubParams& stub,
                             const std::vector<std::string>& expression);

struct EncodedSample {
  std::uint64_t seed = 0;
  SceneSpec scene;
  Tensor f_v1, f_v2, f_v3;  // constants, (G*G)-by-C
  Tensor f_w;               // L_t-by-C_t
  Tensor f_s;               // 1-by-C_t
  BinaryMask gt_mask;       // S-by-S footprint of the referred object
};

inline constexpr std::uint64_t kValSeedOffset = 1000000;
inline constexpr std::uint64_t kHeldOutSeedOffset = 2000000;

std::vector<EncodedSample> make_split(int n, std::uint64_t base_seed,
                                      const EncoderStubParams& stub,
                                      int image_size);

// ---- dataset files: P6 images, P5 masks (255 = foreground), samples.txt ----
void write_ppm(const std::string& path, const Image& img);
Image read_ppm(const std::string& path);
void write_pgm(const std::string& path, const std::vector<std::uint8_t>& gray,
               int width, int height);
std::vector<std::uint8_t> read_pgm(const std::string& path, int& width,
                                   int& height);
// one directory per split: <id>.ppm, <id>_mask.pgm, and index lines
// "<id> <token...>" in samples.txt
void export_split(const std::string& dir, int n, std::uint64_t base_seed,
                  int image_size);

}  // namespace haris
