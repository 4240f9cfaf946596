#include "haris/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace haris {

namespace {

constexpr double kBackground[3] = {0.08, 0.08, 0.10};

const double kColorRgb[4][3] = {
    {0.85, 0.15, 0.15},  // red
    {0.15, 0.75, 0.20},  // green
    {0.20, 0.35, 0.85},  // blue
    {0.90, 0.85, 0.20},  // yellow
};

bool inside_shape(const ShapeSpec& o, int x, int y) {
  const int dx = x - o.cx, dy = y - o.cy;
  switch (o.kind) {
    case ShapeKind::circle:
      return dx * dx + dy * dy <= o.size * o.size;
    case ShapeKind::square:
      return std::abs(dx) <= o.size && std::abs(dy) <= o.size;
    case ShapeKind::triangle: {
      // upward isoceles: apex (cx, cy-s), base at cy+s
      if (dy < -o.size || dy > o.size) return false;
      const double half_width = (dy + o.size) / 2.0;
      return std::abs(dx) <= half_width;
    }
  }
  return false;
}

bool footprints_disjoint(const ShapeSpec& a, const ShapeSpec& b) {
  // shapes fit in Chebyshev boxes of radius size
  const int cheb = std::max(std::abs(a.cx - b.cx), std::abs(a.cy - b.cy));
  return cheb > a.size + b.size;
}

const char* kSideWords[4] = {"left", "right", "top", "bottom"};

// candidate expressions for `obj`, simplest first
std::vector<std::vector<std::string>> candidate_expressions(
    const ShapeSpec& obj, int image_size) {
  std::vector<std::vector<std::string>> out;
  out.push_back({to_token(obj.color), to_token(obj.kind)});
  for (const char* side : kSideWords)
    if (on_side(obj, side, image_size))
      out.push_back({to_token(obj.kind), "on", side});
  for (const char* side : kSideWords)
    if (on_side(obj, side, image_size))
      out.push_back({to_token(obj.color), "object", "on", side, "side"});
  return out;
}

SceneRender render_scene(const SceneSpec& spec) {
  const int S = spec.image_size;
  SceneRender r;
  r.image = Image(S, S);
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x)
      for (int c = 0; c < 3; ++c) r.image.at(y, x, c) = kBackground[c];
  for (const ShapeSpec& o : spec.objects) {
    BinaryMask fp(S, S);
    const double* rgb = kColorRgb[int(o.color)];
    for (int y = 0; y < S; ++y) {
      for (int x = 0; x < S; ++x) {
        if (!inside_shape(o, x, y)) continue;
        fp.at(y, x) = 1;
        for (int c = 0; c < 3; ++c) r.image.at(y, x, c) = rgb[c];
      }
    }
    r.footprints.push_back(std::move(fp));
  }
  return r;
}

bool try_place(Rng& rng, std::vector<ShapeSpec>& placed, ShapeSpec& obj,
               int image_size) {
  const int margin = obj.size + 1;
  if (image_size - 1 - margin < margin) return false;
  for (int attempt = 0; attempt < 100; ++attempt) {
    obj.cx = rng.uniform_int(margin, image_size - 1 - margin);
    obj.cy = rng.uniform_int(margin, image_size - 1 - margin);
    bool ok = true;
    for (const ShapeSpec& other : placed)
      if (!footprints_disjoint(obj, other)) {
        ok = false;
        break;
      }
    if (ok) return true;
  }
  return false;
}

// expression uniqueness: the predicate must match the referent and nothing else
bool is_unique(const std::vector<std::string>& expr, const SceneSpec& spec,
               int referent) {
  for (int i = 0; i < int(spec.objects.size()); ++i) {
    const bool match = expression_matches(expr, spec.objects[i],
                                          spec.image_size);
    if (i == referent && !match) return false;
    if (i != referent && match) return false;
  }
  return true;
}

}  // namespace

const char* to_token(ShapeKind k) {
  switch (k) {
    case ShapeKind::circle: return "circle";
    case ShapeKind::square: return "square";
    case ShapeKind::triangle: return "triangle";
  }
  return "";
}

const char* to_token(ShapeColor c) {
  switch (c) {
    case ShapeColor::red: return "red";
    case ShapeColor::green: return "green";
    case ShapeColor::blue: return "blue";
    case ShapeColor::yellow: return "yellow";
  }
  return "";
}

bool on_side(const ShapeSpec& obj, const std::string& side_word,
             int image_size) {
  if (side_word == "left") return 2 * obj.cx < image_size;
  if (side_word == "right") return 2 * obj.cx >= image_size;
  if (side_word == "top") return 2 * obj.cy < image_size;
  if (side_word == "bottom") return 2 * obj.cy >= image_size;
  throw ContractError("unknown side word: " + side_word);
}

bool expression_matches(const std::vector<std::string>& expr,
                        const ShapeSpec& obj, int image_size) {
  // templates: [color kind], [kind on side], [color object on side side]
  if (expr.size() == 2)
    return expr[0] == to_token(obj.color) && expr[1] == to_token(obj.kind);
  if (expr.size() == 3)
    return expr[0] == to_token(obj.kind) && on_side(obj, expr[2], image_size);
  if (expr.size() == 5)
    return expr[0] == to_token(obj.color) && on_side(obj, expr[3], image_size);
  throw ContractError("unrecognized expression template of length " +
                      std::to_string(expr.size()));
}

std::pair<SceneSpec, SceneRender> generate_scene(std::uint64_t seed,
                                                 int image_size) {
  if (image_size < 16)
    throw ContractError("generate_scene: image size must be at least 16");
  Rng rng(splitmix64(seed) ^ 0x5ce9e5u);
  const int min_size = std::max(2, (6 * image_size) / 32);
  const int max_size = std::max(min_size, (7 * image_size) / 32);

  for (int scene_attempt = 0; scene_attempt < 100; ++scene_attempt) {
    SceneSpec spec;
    spec.image_size = image_size;
    const int n = rng.uniform_int(2, 4);
    bool placed_all = true;
    for (int i = 0; i < n; ++i) {
      ShapeSpec o;
      o.kind = ShapeKind(rng.uniform_int(0, 2));
      o.color = ShapeColor(rng.uniform_int(0, 3));
      o.size = rng.uniform_int(min_size, max_size);
      if (!try_place(rng, spec.objects, o, image_size)) {
        placed_all = false;
        break;
      }
      spec.objects.push_back(o);
    }
    if (!placed_all) continue;

    // a two-object scene with distinct colors always gets [color kind]
    if (n == 2 && spec.objects[0].color != spec.objects[1].color) {
      const int idx = rng.uniform_int(0, 1);
      spec.referred_index = idx;
      spec.expression = {to_token(spec.objects[idx].color),
                         to_token(spec.objects[idx].kind)};
      return {spec, render_scene(spec)};
    }

    // otherwise draw uniformly over every (object, template) pair whose
    // predicate is unique, which keeps spatial wording in the data mix
    std::vector<std::pair<int, std::vector<std::string>>> unique_pairs;
    for (int idx = 0; idx < n; ++idx)
      for (auto& expr : candidate_expressions(spec.objects[idx], image_size))
        if (is_unique(expr, spec, idx)) unique_pairs.emplace_back(idx, expr);
    if (!unique_pairs.empty()) {
      auto& [idx, expr] =
          unique_pairs[rng.uniform_int(0, int(unique_pairs.size()) - 1)];
      spec.referred_index = idx;
      spec.expression = std::move(expr);
      return {spec, render_scene(spec)};
    }
  }

  // fallback: two distinct-color objects at opposite corners; [color kind]
  // is unique by color alone. Corner placement with s < (S-3)/4 keeps the
  // footprints disjoint without any search.
  SceneSpec spec;
  spec.image_size = image_size;
  const int s = std::min(std::max(2, (6 * image_size) / 32),
                         (image_size - 4) / 4);
  const int near = s + 1, far = image_size - 2 - s;
  const int c1 = rng.uniform_int(0, 3);
  int c2 = rng.uniform_int(0, 3);
  if (c2 == c1) c2 = (c2 + 1) % 4;
  ShapeSpec a{ShapeKind(rng.uniform_int(0, 2)), ShapeColor(c1), near, near, s};
  ShapeSpec b{ShapeKind(rng.uniform_int(0, 2)), ShapeColor(c2), far, far, s};
  spec.objects = {a, b};
  spec.referred_index = rng.uniform_int(0, 1);
  const ShapeSpec& ref = spec.objects[spec.referred_index];
  spec.expression = {to_token(ref.color), to_token(ref.kind)};
  return {spec, render_scene(spec)};
}

Vocabulary::Vocabulary() {
  tokens_ = {"red",  "green",  "blue",   "yellow", "circle",
             "square", "triangle", "left",   "right",  "top",
             "bottom", "the",    "object", "on",     "side"};
}

const Vocabulary& Vocabulary::instance() {
  static Vocabulary v;
  return v;
}

int Vocabulary::id(const std::string& token) const {
  for (int i = 0; i < int(tokens_.size()); ++i)
    if (tokens_[i] == token) return i;
  throw VocabularyError("unknown token: " + token);
}

EncoderStubParams encoder_stub_params(std::uint64_t stub_seed, int C, int C_t) {
  if (C % 4 != 0)
    throw ContractError("encoder stub: C must be divisible by 4, got " +
                        std::to_string(C));
  const int V = Vocabulary::instance().size();
  EncoderStubParams stub;
  stub.C = C;
  stub.C_t = C_t;
  auto normal_matrix = [](std::uint64_t seed, int rows, int cols,
                          double scale) {
    Rng rng(seed);
    Tensor t({rows, cols});
    for (double& v : t.data) v = rng.normal() * scale;
    return t;
  };
  stub.embed = Parameter("stub.embed",
                         normal_matrix(splitmix64(stub_seed) ^ 1, V, C_t, 1.0),
                         false);
  const double proj_scale = 1.0 / std::sqrt(48.0);
  stub.proj1 = Parameter(
      "stub.proj1", normal_matrix(splitmix64(stub_seed) ^ 2, 48, C, proj_scale),
      false);
  stub.proj2 = Parameter(
      "stub.proj2", normal_matrix(splitmix64(stub_seed) ^ 3, 48, C, proj_scale),
      false);
  stub.proj3 = Parameter(
      "stub.proj3", normal_matrix(splitmix64(stub_seed) ^ 4, 48, C, proj_scale),
      false);
  stub.sentence_transform = Parameter(
      "stub.sentence_transform",
      normal_matrix(splitmix64(stub_seed) ^ 5, C_t, C_t,
                    1.0 / std::sqrt(double(C_t))),
      false);
  return stub;
}

Tensor patchify(const Image& img) {
  if (img.width != img.height || img.width % 4 != 0)
    throw ContractError("patchify: image must be square with size divisible "
                        "by 4, got " +
                        std::to_string(img.width) + "x" +
                        std::to_string(img.height));
  const int G = img.width / 4;
  Tensor out({G * G, 48});
  for (int gy = 0; gy < G; ++gy) {
    for (int gx = 0; gx < G; ++gx) {
      double* row = out.data.data() + std::size_t(gy * G + gx) * 48;
      int k = 0;
      for (int py = 0; py < 4; ++py)
        for (int px = 0; px < 4; ++px)
          for (int c = 0; c < 3; ++c)
            row[k++] = img.at(gy * 4 + py, gx * 4 + px, c);
    }
  }
  return out;
}

Tensor pool_patches(const Tensor& patches, int grid, int k) {
  if (patches.rows() != grid * grid)
    throw DimensionError("pool_patches: " + patches.shape_str() +
                         " does not match grid " + std::to_string(grid));
  if (k % 2 == 0) throw ContractError("pool_patches: k must be odd");
  const int C = patches.cols();
  const int r = (k - 1) / 2;
  Tensor out({grid * grid, C});
  for (int gy = 0; gy < grid; ++gy) {
    for (int gx = 0; gx < grid; ++gx) {
      double* dst = out.data.data() + std::size_t(gy * grid + gx) * C;
      int count = 0;
      for (int dy = -r; dy <= r; ++dy) {
        for (int dx = -r; dx <= r; ++dx) {
          const int sy = gy + dy, sx = gx + dx;
          if (sy < 0 || sy >= grid || sx < 0 || sx >= grid) continue;
          const double* src =
              patches.data.data() + std::size_t(sy * grid + sx) * C;
          for (int c = 0; c < C; ++c) dst[c] += src[c];
          ++count;
        }
      }
      for (int c = 0; c < C; ++c) dst[c] /= double(count);
    }
  }
  return out;
}

Tensor position_code(int grid, int C, double amplitude) {
  if (C % 4 != 0)
    throw ContractError("position_code: C must be divisible by 4");
  const int quarter = C / 4;
  Tensor out({grid * grid, C});
  for (int gy = 0; gy < grid; ++gy) {
    for (int gx = 0; gx < grid; ++gx) {
      double* row = out.data.data() + std::size_t(gy * grid + gx) * C;
      for (int i = 0; i < quarter; ++i) {
        const double freq = std::pow(10000.0, -double(i) / double(quarter));
        row[4 * i + 0] = amplitude * std::sin(gy * freq);
        row[4 * i + 1] = amplitude * std::cos(gy * freq);
        row[4 * i + 2] = amplitude * std::sin(gx * freq);
        row[4 * i + 3] = amplitude * std::cos(gx * freq);
      }
    }
  }
  return out;
}

EncodedLevels encode_image_stub(const EncoderStubParams& stub,
                                const Image& img) {
  Tensor patches = patchify(img);
  const int G = img.width / 4;
  Tape t(false);
  Tensor pos = position_code(G, stub.C);
  EncodedLevels out;
  out.f_v1 = t.add(t.matmul(patches, stub.proj1.value), pos);
  out.f_v2 = t.add(t.matmul(pool_patches(patches, G, 3), stub.proj2.value), pos);
  out.f_v3 = t.add(t.matmul(pool_patches(patches, G, 5), stub.proj3.value), pos);
  return out;
}

EncodedText encode_text_stub(const EncoderStubParams& stub,
                             const std::vector<std::string>& expression) {
  if (expression.empty() || expression.size() > 25)
    throw ContractError("encode_text_stub: expression length " +
                        std::to_string(expression.size()) +
                        " outside [1, 25]");
  const Vocabulary& vocab = Vocabulary::instance();
  const int L = int(expression.size());
  EncodedText out;
  out.f_w = Tensor({L, stub.C_t});
  for (int i = 0; i < L; ++i) {
    const int id = vocab.id(expression[i]);
    const double* src = stub.embed.value.data.data() + std::size_t(id) * stub.C_t;
    std::copy(src, src + stub.C_t,
              out.f_w.data.data() + std::size_t(i) * stub.C_t);
  }
  Tensor mean({1, stub.C_t});
  for (int i = 0; i < L; ++i)
    for (int c = 0; c < stub.C_t; ++c)
      mean.data[c] += out.f_w.data[std::size_t(i) * stub.C_t + c];
  for (int c = 0; c < stub.C_t; ++c) mean.data[c] /= double(L);
  Tape t(false);
  out.f_s = t.matmul(mean, stub.sentence_transform.value);
  return out;
}

std::vector<EncodedSample> make_split(int n, std::uint64_t base_seed,
                                      const EncoderStubParams& stub,
                                      int image_size) {
  if (n < 1) throw ContractError("make_split: n must be positive");
  std::vector<EncodedSample> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    const std::uint64_t seed = base_seed + std::uint64_t(i);
    auto [spec, render] = generate_scene(seed, image_size);
    EncodedSample s;
    s.seed = seed;
    EncodedLevels levels = encode_image_stub(stub, render.image);
    s.f_v1 = std::move(levels.f_v1);
    s.f_v2 = std::move(levels.f_v2);
    s.f_v3 = std::move(levels.f_v3);
    EncodedText text = encode_text_stub(stub, spec.expression);
    s.f_w = std::move(text.f_w);
    s.f_s = std::move(text.f_s);
    s.gt_mask = render.footprints[spec.referred_index];
    s.scene = std::move(spec);
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// dataset files
// ---------------------------------------------------------------------------

namespace {

std::uint8_t to_byte(double v) {
  const double clamped = std::clamp(v, 0.0, 1.0);
  return std::uint8_t(std::lround(clamped * 255.0));
}

}  // namespace

void write_ppm(const std::string& path, const Image& img) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for write: " + path);
  f << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::vector<std::uint8_t> bytes;
  bytes.reserve(img.rgb.size());
  for (double v : img.rgb) bytes.push_back(to_byte(v));
  f.write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  if (!f) throw IoError("write failed: " + path);
}

Image read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  std::string magic;
  int w, h, maxval;
  f >> magic >> w >> h >> maxval;
  if (magic != "P6" || maxval != 255)
    throw IoError("not a P6/255 ppm: " + path);
  f.get();  // single whitespace after header
  Image img(w, h);
  std::vector<std::uint8_t> bytes(std::size_t(w) * h * 3);
  f.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!f) throw IoError("truncated ppm: " + path);
  for (std::size_t i = 0; i < bytes.size(); ++i)
    img.rgb[i] = bytes[i] / 255.0;
  return img;
}

void write_pgm(const std::string& path, const std::vector<std::uint8_t>& gray,
               int width, int height) {
  if (int(gray.size()) != width * height)
    throw ContractError("write_pgm: byte count does not match dimensions");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for write: " + path);
  f << "P5\n" << width << " " << height << "\n255\n";
  f.write(reinterpret_cast<const char*>(gray.data()), gray.size());
  if (!f) throw IoError("write failed: " + path);
}

std::vector<std::uint8_t> read_pgm(const std::string& path, int& width,
                                   int& height) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  std::string magic;
  int maxval;
  f >> magic >> width >> height >> maxval;
  if (magic != "P5" || maxval != 255)
    throw IoError("not a P5/255 pgm: " + path);
  f.get();
  std::vector<std::uint8_t> bytes(std::size_t(width) * height);
  f.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!f) throw IoError("truncated pgm: " + path);
  return bytes;
}

void export_split(const std::string& dir, int n, std::uint64_t base_seed,
                  int image_size) {
  std::filesystem::create_directories(dir);
  std::ofstream index(dir + "/samples.txt");
  if (!index) throw IoError("cannot open for write: " + dir + "/samples.txt");
  for (int i = 0; i < n; ++i) {
    auto [spec, render] = generate_scene(base_seed + std::uint64_t(i),
                                         image_size);
    const std::string id = std::to_string(i);
    write_ppm(dir + "/" + id + ".ppm", render.image);
    const BinaryMask& gt = render.footprints[spec.referred_index];
    std::vector<std::uint8_t> gray(gt.v.size());
    for (std::size_t k = 0; k < gt.v.size(); ++k) gray[k] = gt.v[k] ? 255 : 0;
    write_pgm(dir + "/" + id + "_mask.pgm", gray, gt.width, gt.height);
    index << id;
    for (const std::string& tok : spec.expression) index << " " << tok;
    index << "\n";
  }
  if (!index) throw IoError("write failed: " + dir + "/samples.txt");
}

}  // namespace haris
