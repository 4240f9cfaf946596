#include "haris/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "haris/tensor.hpp"

namespace haris {

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ContractError("config: bad boolean for " + key + ": " + v);
}

}  // namespace

void Config::validate() const {
  if (image_size < 16 || image_size % 4 != 0)
    throw ContractError("config: image_size must be >= 16 and divisible by 4");
  if (channels < 4 || channels % 4 != 0)
    throw ContractError("config: channels must be a positive multiple of 4");
  if (text_channels < 2) throw ContractError("config: text_channels too small");
  if (decoder_layers < 1) throw ContractError("config: decoder_layers >= 1");
  if (!(lr > 0.0)) throw ContractError("config: lr must be positive");
  if (decay_epoch >= epochs && epochs > 0)
    throw ContractError("config: decay_epoch must be below epochs");
  if (epochs < 0 || batch_size < 1 || steps_per_epoch < 1)
    throw ContractError("config: bad schedule");
  if (train_samples < 1 || val_samples < 1)
    throw ContractError("config: sample counts must be positive");
  if (bn_freeze_epoch < 0)
    throw ContractError("config: bn_freeze_epoch must be non-negative");
  if (word_cap < 1) throw ContractError("config: word_cap must be positive");
  if (level_order != "shallow_first" && level_order != "deep_first")
    throw ContractError("config: level_order must be shallow_first or "
                        "deep_first");
}

Config parse_config_text(const std::string& text) {
  Config cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    // trim
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    const auto e = line.find_last_not_of(" \t\r");
    line = line.substr(b, e - b + 1);
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ContractError("config line " + std::to_string(line_no) +
                          ": expected key=value");
    std::string key = line.substr(0, eq);
    std::string val = line.substr(eq + 1);
    auto trim = [](std::string& s) {
      const auto b2 = s.find_first_not_of(" \t");
      const auto e2 = s.find_last_not_of(" \t");
      s = (b2 == std::string::npos) ? "" : s.substr(b2, e2 - b2 + 1);
    };
    trim(key);
    trim(val);

    if (key == "image_size") cfg.image_size = std::stoi(val);
    else if (key == "channels") cfg.channels = std::stoi(val);
    else if (key == "text_channels") cfg.text_channels = std::stoi(val);
    else if (key == "decoder_layers") cfg.decoder_layers = std::stoi(val);
    else if (key == "data_seed") cfg.data_seed = std::stoull(val);
    else if (key == "stub_seed") cfg.stub_seed = std::stoull(val);
    else if (key == "init_seed") cfg.init_seed = std::stoull(val);
    else if (key == "lr") cfg.lr = std::stod(val);
    else if (key == "beta1") cfg.beta1 = std::stod(val);
    else if (key == "beta2") cfg.beta2 = std::stod(val);
    else if (key == "adam_eps") cfg.adam_eps = std::stod(val);
    else if (key == "decay_factor") cfg.decay_factor = std::stod(val);
    else if (key == "decay_epoch") cfg.decay_epoch = std::stoi(val);
    else if (key == "epochs") cfg.epochs = std::stoi(val);
    else if (key == "batch_size") cfg.batch_size = std::stoi(val);
    else if (key == "steps_per_epoch") cfg.steps_per_epoch = std::stoi(val);
    else if (key == "train_samples") cfg.train_samples = std::stoi(val);
    else if (key == "val_samples") cfg.val_samples = std::stoi(val);
    else if (key == "bn_freeze_epoch") cfg.bn_freeze_epoch = std::stoi(val);
    else if (key == "focal_gamma") cfg.focal_gamma = std::stod(val);
    else if (key == "focal_alpha") cfg.focal_alpha = std::stod(val);
    else if (key == "word_cap") cfg.word_cap = std::stoi(val);
    else if (key == "level_order") cfg.level_order = val;
    else if (key == "no_hierarchy")
      cfg.flags.no_hierarchy = parse_bool(val, key);
    else if (key == "replace_cross_attention")
      cfg.flags.replace_cross_attention = parse_bool(val, key);
    else if (key == "no_feedback")
      cfg.flags.no_feedback = parse_bool(val, key);
    else if (key == "no_vision_weighted")
      cfg.flags.no_vision_weighted = parse_bool(val, key);
    else if (key == "no_language_weighted")
      cfg.flags.no_language_weighted = parse_bool(val, key);
    else if (key == "replace_decoder")
      cfg.flags.replace_decoder = parse_bool(val, key);
    else if (key == "decoder_query_swap")
      cfg.flags.decoder_query_swap = parse_bool(val, key);
    else if (key == "fuse_uses_intermediate")
      cfg.flags.fuse_uses_intermediate = parse_bool(val, key);
    else if (key == "decoder_learned_pos")
      cfg.flags.decoder_learned_pos = parse_bool(val, key);
    else
      throw ContractError("config line " + std::to_string(line_no) +
                          ": unknown key " + key);
  }
  cfg.validate();
  return cfg;
}

Config load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  Config cfg = parse_config_text(ss.str());
  if (const char* env = std::getenv("HARIS_SEED")) {
    const std::uint64_t s = std::stoull(env);
    cfg.data_seed = s;
    cfg.stub_seed = s;
    cfg.init_seed = s;
  }
  return cfg;
}

std::string serialize_config(const Config& cfg) {
  std::ostringstream os;
  os << "image_size=" << cfg.image_size << "\n";
  os << "channels=" << cfg.channels << "\n";
  os << "text_channels=" << cfg.text_channels << "\n";
  os << "decoder_layers=" << cfg.decoder_layers << "\n";
  os << "data_seed=" << cfg.data_seed << "\n";
  os << "stub_seed=" << cfg.stub_seed << "\n";
  os << "init_seed=" << cfg.init_seed << "\n";
  os << "lr=" << fmt_double(cfg.lr) << "\n";
  os << "beta1=" << fmt_double(cfg.beta1) << "\n";
  os << "beta2=" << fmt_double(cfg.beta2) << "\n";
  os << "adam_eps=" << fmt_double(cfg.adam_eps) << "\n";
  os << "decay_factor=" << fmt_double(cfg.decay_factor) << "\n";
  os << "decay_epoch=" << cfg.decay_epoch << "\n";
  os << "epochs=" << cfg.epochs << "\n";
  os << "batch_size=" << cfg.batch_size << "\n";
  os << "steps_per_epoch=" << cfg.steps_per_epoch << "\n";
  os << "train_samples=" << cfg.train_samples << "\n";
  os << "val_samples=" << cfg.val_samples << "\n";
  os << "bn_freeze_epoch=" << cfg.bn_freeze_epoch << "\n";
  os << "focal_gamma=" << fmt_double(cfg.focal_gamma) << "\n";
  os << "focal_alpha=" << fmt_double(cfg.focal_alpha) << "\n";
  os << "word_cap=" << cfg.word_cap << "\n";
  os << "level_order=" << cfg.level_order << "\n";
  os << "no_hierarchy=" << (cfg.flags.no_hierarchy ? "true" : "false") << "\n";
  os << "replace_cross_attention="
     << (cfg.flags.replace_cross_attention ? "true" : "false") << "\n";
  os << "no_feedback=" << (cfg.flags.no_feedback ? "true" : "false") << "\n";
  os << "no_vision_weighted="
     << (cfg.flags.no_vision_weighted ? "true" : "false") << "\n";
  os << "no_language_weighted="
     << (cfg.flags.no_language_weighted ? "true" : "false") << "\n";
  os << "replace_decoder=" << (cfg.flags.replace_decoder ? "true" : "false")
     << "\n";
  os << "decoder_query_swap="
     << (cfg.flags.decoder_query_swap ? "true" : "false") << "\n";
  os << "fuse_uses_intermediate="
     << (cfg.flags.fuse_uses_intermediate ? "true" : "false") << "\n";
  os << "decoder_learned_pos="
     << (cfg.flags.decoder_learned_pos ? "true" : "false") << "\n";
  return os.str();
}

bool apply_ablation_flag(Config& cfg, const std::string& name) {
  if (name == "no_hs") cfg.flags.no_hierarchy = true;
  else if (name == "r_ca") cfg.flags.replace_cross_attention = true;
  else if (name == "no_fb") cfg.flags.no_feedback = true;
  else if (name == "no_vw") cfg.flags.no_vision_weighted = true;
  else if (name == "no_lw") cfg.flags.no_language_weighted = true;
  else if (name == "r_de") cfg.flags.replace_decoder = true;
  else return false;
  return true;
}

}  // namespace haris
