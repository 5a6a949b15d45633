#include "dbpmae/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace dbp {

std::string to_string(TrainMode mode) { return mode == TrainMode::BP ? "bp" : "dbp"; }

TrainMode mode_from_string(const std::string& s) {
  if (s == "bp") return TrainMode::BP;
  if (s == "dbp") return TrainMode::DBP;
  throw ConfigError("unknown train mode: " + s);
}

void TrainConfig::validate() const {
  mae.validate();
  decorr.validate();
  schedule().validate();
  if (mode == TrainMode::DBP && decorr.eta < 0)
    throw ConfigError("train.mode=dbp requires decorr.eta >= 0");
  if (epochs < 0) throw ConfigError("train.epochs must be non-negative");
  if (batch_size < 1) throw ConfigError("train.batch_size must be positive");
  if (!(val_fraction > 0.0 && val_fraction < 1.0))
    throw ConfigError("train.val_fraction must lie in (0, 1)");
  if (!(augment.min_scale > 0.0 && augment.min_scale <= augment.max_scale &&
        augment.max_scale <= 1.0))
    throw ConfigError("augment scale range must satisfy 0 < min <= max <= 1");
  if (!use_synthetic && dataset_path.empty())
    throw ConfigError("data.source=file requires data.path");
}

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

long long parse_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    long long r = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return r;
  } catch (...) {
    throw ConfigError("bad integer for " + key + ": '" + v + "'");
  }
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    unsigned long long r = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return r;
  } catch (...) {
    throw ConfigError("bad unsigned integer for " + key + ": '" + v + "'");
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    double r = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return r;
  } catch (...) {
    throw ConfigError("bad number for " + key + ": '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("bad boolean for " + key + ": '" + v + "'");
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

using Setter = std::function<void(TrainConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"mae.image_size", [](TrainConfig& c, const std::string& k, const std::string& v) { c.mae.image_size = static_cast<int>(parse_int(k, v)); }},
      {"mae.patch_size", [](TrainConfig& c, const std::string& k, const std::string& v) { c.mae.patch_size = static_cast<int>(parse_int(k, v)); }},
      {"mae.channels", [](TrainConfig& c, const std::string& k, const std::string& v) { c.mae.channels = static_cast<int>(parse_int(k, v)); }},
      {"mae.embed_dim", [](TrainConfig& c, const std::string& k, const std::string& v) { c.mae.embed_dim = static_cast<int>(parse_int(k, v)); }},
      {"mae.depth", [](TrainConfig& c, const std::string& k, const std::string& v) { c.mae.depth = static_cast<int>(parse_int(k, v)); }},
      {"mae.heads", [](TrainConfig& c, const std::string& k, const std::string& v) { c.mae.heads = static_cast<int>(parse_int(k, v)); }},
      {"mae.decoder_embed_dim", [](TrainConfig& c, const std::string& k, const std::string& v) { c.mae.decoder_embed_dim = static_cast<int>(parse_int(k, v)); }},
      {"mae.decoder_depth", [](TrainConfig& c, const std::string& k, const std::string& v) { c.mae.decoder_depth = static_cast<int>(parse_int(k, v)); }},
      {"mae.decoder_heads", [](TrainConfig& c, const std::string& k, const std::string& v) { c.mae.decoder_heads = static_cast<int>(parse_int(k, v)); }},
      {"mae.mlp_ratio", [](TrainConfig& c, const std::string& k, const std::string& v) { c.mae.mlp_ratio = static_cast<int>(parse_int(k, v)); }},
      {"mae.mask_ratio", [](TrainConfig& c, const std::string& k, const std::string& v) { c.mae.mask_ratio = parse_double(k, v); }},
      {"mae.loss_on_masked_only", [](TrainConfig& c, const std::string& k, const std::string& v) { c.mae.loss_on_masked_only = parse_bool(k, v); }},
      {"mae.norm_pix_targets", [](TrainConfig& c, const std::string& k, const std::string& v) { c.mae.norm_pix_targets = parse_bool(k, v); }},
      {"decorr.eta", [](TrainConfig& c, const std::string& k, const std::string& v) { c.decorr.eta = parse_double(k, v); }},
      {"decorr.subsample_fraction", [](TrainConfig& c, const std::string& k, const std::string& v) { c.decorr.subsample_fraction = parse_double(k, v); }},
      {"decorr.scope", [](TrainConfig& c, const std::string&, const std::string& v) { c.decorr.scope = scope_from_string(v); }},
      {"decorr.stop_epoch", [](TrainConfig& c, const std::string& k, const std::string& v) {
         if (v == "none") c.decorr.stop_epoch.reset();
         else c.decorr.stop_epoch = static_cast<int>(parse_int(k, v));
       }},
      {"decorr.per_linear_mode", [](TrainConfig& c, const std::string& k, const std::string& v) { c.decorr.per_linear_mode = parse_bool(k, v); }},
      {"optim.lr", [](TrainConfig& c, const std::string& k, const std::string& v) { c.base_lr = parse_double(k, v); }},
      {"optim.beta1", [](TrainConfig& c, const std::string& k, const std::string& v) { c.adamw.beta1 = parse_double(k, v); }},
      {"optim.beta2", [](TrainConfig& c, const std::string& k, const std::string& v) { c.adamw.beta2 = parse_double(k, v); }},
      {"optim.weight_decay", [](TrainConfig& c, const std::string& k, const std::string& v) { c.adamw.weight_decay = parse_double(k, v); }},
      {"optim.epsilon", [](TrainConfig& c, const std::string& k, const std::string& v) { c.adamw.epsilon = parse_double(k, v); }},
      {"optim.warmup_epochs", [](TrainConfig& c, const std::string& k, const std::string& v) { c.warmup_epochs = static_cast<int>(parse_int(k, v)); }},
      {"optim.min_lr", [](TrainConfig& c, const std::string& k, const std::string& v) { c.min_lr = parse_double(k, v); }},
      {"train.mode", [](TrainConfig& c, const std::string&, const std::string& v) { c.mode = mode_from_string(v); }},
      {"train.epochs", [](TrainConfig& c, const std::string& k, const std::string& v) { c.epochs = static_cast<int>(parse_int(k, v)); }},
      {"train.batch_size", [](TrainConfig& c, const std::string& k, const std::string& v) { c.batch_size = static_cast<int>(parse_int(k, v)); }},
      {"train.seed", [](TrainConfig& c, const std::string& k, const std::string& v) { c.seed = parse_u64(k, v); }},
      {"train.val_fraction", [](TrainConfig& c, const std::string& k, const std::string& v) { c.val_fraction = parse_double(k, v); }},
      {"train.output_dir", [](TrainConfig& c, const std::string&, const std::string& v) { c.output_dir = v; }},
      {"train.deterministic_timing", [](TrainConfig& c, const std::string& k, const std::string& v) { c.deterministic_timing = parse_bool(k, v); }},
      {"data.source", [](TrainConfig& c, const std::string& k, const std::string& v) {
         if (v == "synthetic") c.use_synthetic = true;
         else if (v == "file") c.use_synthetic = false;
         else throw ConfigError("bad value for " + k + ": '" + v + "'");
       }},
      {"data.path", [](TrainConfig& c, const std::string&, const std::string& v) { c.dataset_path = v; }},
      {"data.count", [](TrainConfig& c, const std::string& k, const std::string& v) { c.synthetic.count = static_cast<uint32_t>(parse_u64(k, v)); }},
      {"data.channels", [](TrainConfig& c, const std::string& k, const std::string& v) { c.synthetic.channels = static_cast<uint32_t>(parse_u64(k, v)); }},
      {"data.size", [](TrainConfig& c, const std::string& k, const std::string& v) { c.synthetic.size = static_cast<uint32_t>(parse_u64(k, v)); }},
      {"data.correlation_length", [](TrainConfig& c, const std::string& k, const std::string& v) { c.synthetic.correlation_length = static_cast<int>(parse_int(k, v)); }},
      {"data.seed", [](TrainConfig& c, const std::string& k, const std::string& v) { c.synthetic.seed = parse_u64(k, v); }},
      {"augment.random_crop", [](TrainConfig& c, const std::string& k, const std::string& v) { c.augment.random_crop = parse_bool(k, v); }},
      {"augment.min_scale", [](TrainConfig& c, const std::string& k, const std::string& v) { c.augment.min_scale = parse_double(k, v); }},
      {"augment.max_scale", [](TrainConfig& c, const std::string& k, const std::string& v) { c.augment.max_scale = parse_double(k, v); }},
      {"augment.hflip", [](TrainConfig& c, const std::string& k, const std::string& v) { c.augment.hflip = parse_bool(k, v); }},
      {"augment.interpolation", [](TrainConfig& c, const std::string& k, const std::string& v) {
         if (v == "bilinear") c.augment.interpolation = Interpolation::Bilinear;
         else if (v == "bicubic") c.augment.interpolation = Interpolation::Bicubic;
         else throw ConfigError("bad value for " + k + ": '" + v + "'");
       }},
  };
  return table;
}

}  // namespace

void apply_config_override(TrainConfig& cfg, const std::string& assignment) {
  size_t eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ConfigError("expected key=value, got '" + assignment + "'");
  const std::string key = trim(assignment.substr(0, eq));
  const std::string value = trim(assignment.substr(eq + 1));
  auto it = setters().find(key);
  if (it == setters().end()) throw ConfigError("unknown config key: '" + key + "'");
  it->second(cfg, key, value);
}

TrainConfig parse_config_text(const std::string& text) {
  TrainConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    try {
      apply_config_override(cfg, line);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return cfg;
}

TrainConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

std::string serialize_config(const TrainConfig& c) {
  std::ostringstream out;
  out << "mae.image_size = " << c.mae.image_size << "\n";
  out << "mae.patch_size = " << c.mae.patch_size << "\n";
  out << "mae.channels = " << c.mae.channels << "\n";
  out << "mae.embed_dim = " << c.mae.embed_dim << "\n";
  out << "mae.depth = " << c.mae.depth << "\n";
  out << "mae.heads = " << c.mae.heads << "\n";
  out << "mae.decoder_embed_dim = " << c.mae.decoder_embed_dim << "\n";
  out << "mae.decoder_depth = " << c.mae.decoder_depth << "\n";
  out << "mae.decoder_heads = " << c.mae.decoder_heads << "\n";
  out << "mae.mlp_ratio = " << c.mae.mlp_ratio << "\n";
  out << "mae.mask_ratio = " << fmt_double(c.mae.mask_ratio) << "\n";
  out << "mae.loss_on_masked_only = " << (c.mae.loss_on_masked_only ? "true" : "false") << "\n";
  out << "mae.norm_pix_targets = " << (c.mae.norm_pix_targets ? "true" : "false") << "\n";
  out << "decorr.eta = " << fmt_double(c.decorr.eta) << "\n";
  out << "decorr.subsample_fraction = " << fmt_double(c.decorr.subsample_fraction) << "\n";
  out << "decorr.scope = " << to_string(c.decorr.scope) << "\n";
  out << "decorr.stop_epoch = "
      << (c.decorr.stop_epoch ? std::to_string(*c.decorr.stop_epoch) : std::string("none"))
      << "\n";
  out << "decorr.per_linear_mode = " << (c.decorr.per_linear_mode ? "true" : "false") << "\n";
  out << "optim.lr = " << fmt_double(c.base_lr) << "\n";
  out << "optim.beta1 = " << fmt_double(c.adamw.beta1) << "\n";
  out << "optim.beta2 = " << fmt_double(c.adamw.beta2) << "\n";
  out << "optim.weight_decay = " << fmt_double(c.adamw.weight_decay) << "\n";
  out << "optim.epsilon = " << fmt_double(c.adamw.epsilon) << "\n";
  out << "optim.warmup_epochs = " << c.warmup_epochs << "\n";
  out << "optim.min_lr = " << fmt_double(c.min_lr) << "\n";
  out << "train.mode = " << to_string(c.mode) << "\n";
  out << "train.epochs = " << c.epochs << "\n";
  out << "train.batch_size = " << c.batch_size << "\n";
  out << "train.seed = " << c.seed << "\n";
  out << "train.val_fraction = " << fmt_double(c.val_fraction) << "\n";
  out << "train.output_dir = " << c.output_dir << "\n";
  out << "train.deterministic_timing = " << (c.deterministic_timing ? "true" : "false") << "\n";
  out << "data.source = " << (c.use_synthetic ? "synthetic" : "file") << "\n";
  out << "data.path = " << c.dataset_path << "\n";
  out << "data.count = " << c.synthetic.count << "\n";
  out << "data.channels = " << c.synthetic.channels << "\n";
  out << "data.size = " << c.synthetic.size << "\n";
  out << "data.correlation_length = " << c.synthetic.correlation_length << "\n";
  out << "data.seed = " << c.synthetic.seed << "\n";
  out << "augment.random_crop = " << (c.augment.random_crop ? "true" : "false") << "\n";
  out << "augment.min_scale = " << fmt_double(c.augment.min_scale) << "\n";
  out << "augment.max_scale = " << fmt_double(c.augment.max_scale) << "\n";
  out << "augment.hflip = " << (c.augment.hflip ? "true" : "false") << "\n";
  out << "augment.interpolation = "
      << (c.augment.interpolation == Interpolation::Bilinear ? "bilinear" : "bicubic") << "\n";
  return out.str();
}

}  // namespace dbp
