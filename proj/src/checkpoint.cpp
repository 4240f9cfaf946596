#include "haris/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <unordered_map>

namespace haris {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  put_u64(out, bits);
}

void put_str(std::string& out, const std::string& s) {
  put_u32(out, std::uint32_t(s.size()));
  out += s;
}

class Reader {
 public:
  Reader(std::string bytes, std::string path)
      : bytes_(std::move(bytes)), path_(std::move(path)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= std::uint32_t(std::uint8_t(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= std::uint64_t(std::uint8_t(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64() {
    const std::uint64_t bits = u64();
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
  }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint8_t u8() {
    need(1);
    return std::uint8_t(bytes_[pos_++]);
  }
  void raw(char* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) {
    if (pos_ + n > bytes_.size())
      throw IoError("truncated checkpoint: " + path_);
  }
  std::string bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

void append_tensor_data(std::string& out, const Tensor& t) {
  for (double d : t.data) put_f64(out, d);
}

}  // namespace

AdamState make_adam_state(const std::vector<Parameter*>& trainable) {
  AdamState s;
  s.m.reserve(trainable.size());
  s.v.reserve(trainable.size());
  for (Parameter* p : trainable) {
    s.m.push_back(Tensor::zeros(p->value.shape));
    s.v.push_back(Tensor::zeros(p->value.shape));
  }
  return s;
}

void save_checkpoint(const std::string& path, const Config& cfg,
                     ModelParams& model, const AdamState* adam,
                     std::uint64_t global_step, const std::string& rng_state) {
  std::string out;
  out.append(kCheckpointMagic, 8);
  put_u32(out, kCheckpointVersion);
  put_str(out, serialize_config(cfg));
  put_u64(out, global_step);

  std::vector<Parameter*> params = model.all();
  put_u64(out, params.size());
  for (Parameter* p : params) {
    put_str(out, p->name);
    out.push_back(p->trainable ? 1 : 0);
    put_u32(out, std::uint32_t(p->value.shape.size()));
    for (int d : p->value.shape) put_u32(out, std::uint32_t(d));
    append_tensor_data(out, p->value);
  }

  std::vector<Parameter*> trainable = model.trainable();
  out.push_back(adam ? 1 : 0);
  if (adam) {
    if (adam->m.size() != trainable.size())
      throw ContractError("save_checkpoint: optimizer state misaligned");
    put_u64(out, adam->t);
    put_u64(out, trainable.size());
    for (std::size_t i = 0; i < trainable.size(); ++i) {
      put_str(out, trainable[i]->name);
      append_tensor_data(out, adam->m[i]);
      append_tensor_data(out, adam->v[i]);
    }
  }
  put_str(out, rng_state);

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for write: " + path);
  f.write(out.data(), std::streamsize(out.size()));
  if (!f) throw IoError("write failed: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint: " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)),
                    std::istreambuf_iterator<char>());
  Reader r(std::move(bytes), path);

  char magic[8];
  r.raw(magic, 8);
  if (std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw IoError("not a HARIS checkpoint: " + path);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw IoError("checkpoint version mismatch: have " +
                  std::to_string(version) + ", expected " +
                  std::to_string(kCheckpointVersion));

  LoadedCheckpoint out;
  out.cfg = parse_config_text(r.str());
  out.global_step = r.u64();
  out.model = make_model(out.cfg);

  std::unordered_map<std::string, Parameter*> by_name;
  for (Parameter* p : out.model.all()) by_name.emplace(p->name, p);

  const std::uint64_t n_params = r.u64();
  if (n_params != by_name.size())
    throw IoError("checkpoint parameter count mismatch");
  for (std::uint64_t i = 0; i < n_params; ++i) {
    const std::string name = r.str();
    const bool trainable = r.u8() != 0;
    const std::uint32_t rank = r.u32();
    std::vector<int> shape(rank);
    for (std::uint32_t d = 0; d < rank; ++d) shape[d] = int(r.u32());
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw IoError("checkpoint has unknown parameter: " + name);
    Parameter* p = it->second;
    if (p->value.shape != shape || p->trainable != trainable)
      throw IoError("checkpoint parameter " + name +
                    " does not match the rebuilt model");
    for (double& v : p->value.data) v = r.f64();
  }

  std::vector<Parameter*> trainable = out.model.trainable();
  out.has_adam = r.u8() != 0;
  out.adam = make_adam_state(trainable);
  if (out.has_adam) {
    out.adam.t = r.u64();
    const std::uint64_t n = r.u64();
    if (n != trainable.size())
      throw IoError("checkpoint optimizer entry count mismatch");
    for (std::size_t i = 0; i < trainable.size(); ++i) {
      const std::string name = r.str();
      if (name != trainable[i]->name)
        throw IoError("checkpoint optimizer entry out of order: " + name);
      for (double& v : out.adam.m[i].data) v = r.f64();
      for (double& v : out.adam.v[i].data) v = r.f64();
    }
  }
  out.rng_state = r.str();
  if (!r.done()) throw IoError("trailing bytes in checkpoint: " + path);
  return out;
}

}  // namespace haris
