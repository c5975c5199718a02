#include "mvm/config.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace mvm {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": expected a number, got '" + v + "'");
  }
}

long long parse_int(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const long long i = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return i;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": expected an integer, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ConfigError("config key " + key + ": expected true/false, got '" + v + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(static_cast<int>(parse_int(key, trim(item))));
  if (out.empty()) throw ConfigError("config key " + key + ": empty list");
  return out;
}

std::string fmt_int_list(const std::vector<int>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

struct Field {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> parse;
  std::function<std::string(const RunConfig&)> format;
};

#define MVM_DOUBLE(name, member)                                                      \
  Field {                                                                             \
    name, [](RunConfig& c, const std::string& v) { c.member = parse_double(name, v); }, \
        [](const RunConfig& c) { return fmt_double(c.member); }                       \
  }
#define MVM_INT(name, member)                                                                    \
  Field {                                                                                        \
    name,                                                                                        \
        [](RunConfig& c, const std::string& v) {                                                 \
          c.member = static_cast<decltype(c.member)>(parse_int(name, v));                        \
        },                                                                                       \
        [](const RunConfig& c) { return std::to_string(c.member); }                              \
  }
#define MVM_BOOL(name, member)                                                        \
  Field {                                                                             \
    name, [](RunConfig& c, const std::string& v) { c.member = parse_bool(name, v); }, \
        [](const RunConfig& c) { return std::string(c.member ? "true" : "false"); }  \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      // training
      MVM_DOUBLE("lr", train.lr),
      MVM_INT("batch_size", train.batch_size),
      MVM_INT("epochs", train.epochs),
      MVM_INT("warmup_epochs", train.warmup_epochs),
      MVM_DOUBLE("min_lr", train.min_lr),
      MVM_DOUBLE("weight_decay", train.weight_decay),
      Field{"betas",
            [](RunConfig& c, const std::string& v) {
              const auto comma = v.find(',');
              if (comma == std::string::npos) {
                throw ConfigError("config key betas: expected 'beta1,beta2', got '" + v + "'");
              }
              c.train.betas = {parse_double("betas", trim(v.substr(0, comma))),
                               parse_double("betas", trim(v.substr(comma + 1)))};
            },
            [](const RunConfig& c) {
              return fmt_double(c.train.betas[0]) + "," + fmt_double(c.train.betas[1]);
            }},
      MVM_DOUBLE("mask_ratio", train.mask_ratio),
      MVM_DOUBLE("gamma", train.gamma),
      MVM_INT("frame_gap", train.frame_gap),
      MVM_DOUBLE("momentum", train.momentum),
      Field{"seed",
            [](RunConfig& c, const std::string& v) {
              c.train.seed = static_cast<uint64_t>(parse_int("seed", v));
            },
            [](const RunConfig& c) { return std::to_string(c.train.seed); }},
      MVM_INT("pairs_per_epoch", train.pairs_per_epoch),
      MVM_INT("image_size", train.image_size),
      MVM_BOOL("symmetric_masking", train.symmetric_masking),
      MVM_BOOL("shared_augmentation", train.shared_augmentation),
      MVM_BOOL("color_jitter", train.color_jitter),
      MVM_BOOL("norm_pix_loss", train.norm_pix_loss),
      MVM_BOOL("use_consistency", train.use_consistency),
      Field{"precision",
            [](RunConfig& c, const std::string& v) {
              if (v == "f64") c.train.precision = Precision::f64;
              else if (v == "f32") c.train.precision = Precision::f32;
              else throw ConfigError("config key precision: expected f64 or f32, got '" + v + "'");
            },
            [](const RunConfig& c) {
              return std::string(c.train.precision == Precision::f64 ? "f64" : "f32");
            }},
      MVM_INT("checkpoint_every", train.checkpoint_every),
      Field{"target_grad_to_online",
            [](RunConfig& c, const std::string& v) { c.train.target_grad_to_online = v; },
            [](const RunConfig& c) { return c.train.target_grad_to_online; }},
      // encoder
      MVM_INT("stem_factor", model.encoder.stem_factor),
      Field{"stage_depths",
            [](RunConfig& c, const std::string& v) {
              c.model.encoder.stage_depths = parse_int_list("stage_depths", v);
            },
            [](const RunConfig& c) { return fmt_int_list(c.model.encoder.stage_depths); }},
      Field{"stage_widths",
            [](RunConfig& c, const std::string& v) {
              c.model.encoder.stage_widths = parse_int_list("stage_widths", v);
            },
            [](const RunConfig& c) { return fmt_int_list(c.model.encoder.stage_widths); }},
      Field{"block_kind",
            [](RunConfig& c, const std::string& v) {
              c.model.encoder.block_kind = parse_block_kind(v);
            },
            [](const RunConfig& c) { return to_string(c.model.encoder.block_kind); }},
      MVM_INT("downsample_factor_per_stage", model.encoder.downsample_factor_per_stage),
      // decoder
      MVM_INT("depth", model.decoder.depth),
      MVM_INT("width", model.decoder.width),
      MVM_INT("patch_size", model.decoder.patch_size),
      MVM_INT("out_channels", model.decoder.out_channels),
  };
  return table;
}

#undef MVM_DOUBLE
#undef MVM_INT
#undef MVM_BOOL

}  // namespace

int64_t TrainConfig::steps_per_epoch() const {
  return std::max<int64_t>(1, pairs_per_epoch / std::max(1, batch_size));
}

int64_t TrainConfig::total_steps() const { return steps_per_epoch() * epochs; }

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (warmup_epochs < 0 || warmup_epochs >= epochs) {
    throw ConfigError("warmup_epochs must satisfy 0 <= warmup_epochs < epochs");
  }
  if (min_lr < 0.0 || min_lr > lr) throw ConfigError("min_lr must lie in [0, lr]");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  for (double b : betas)
    if (!(b >= 0.0 && b < 1.0)) throw ConfigError("betas entries must lie in [0, 1)");
  if (!(mask_ratio >= 0.0 && mask_ratio < 1.0)) throw ConfigError("mask_ratio must lie in [0, 1)");
  if (!(gamma >= 0.0)) throw ConfigError("gamma must be >= 0");
  if (frame_gap < 1) throw ConfigError("frame_gap must be >= 1");
  if (!(momentum >= 0.0 && momentum <= 1.0)) throw ConfigError("momentum must lie in [0, 1]");
  if (pairs_per_epoch < 1) throw ConfigError("pairs_per_epoch must be >= 1");
  if (image_size < 1) throw ConfigError("image_size must be >= 1");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
  if (target_grad_to_online != "off") {
    throw ConfigError("target_grad_to_online: only 'off' is supported, got '" +
                      target_grad_to_online + "'");
  }
}

void RunConfig::validate() const {
  train.validate();
  model.validate();
  if (train.image_size % model.encoder.total_downsampling() != 0) {
    throw ConfigError("image_size " + std::to_string(train.image_size) +
                      " is not divisible by patch size " +
                      std::to_string(model.encoder.total_downsampling()));
  }
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& f : fields()) k.push_back(f.key);
    return k;
  }();
  return keys;
}

RunConfig parse_run_config(const std::string& text,
                           const std::map<std::string, std::string>& overrides) {
  std::map<std::string, std::string> values;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
    }
    const std::string key = trim(line.substr(0, eq));
    if (values.count(key)) throw ConfigError("duplicate config key: " + key);
    values[key] = trim(line.substr(eq + 1));
  }
  for (const auto& [k, v] : overrides) values[k] = v;

  const auto& table = fields();
  std::set<std::string> known;
  for (const auto& f : table) known.insert(f.key);
  for (const auto& [k, v] : values)
    if (!known.count(k)) throw ConfigError("unknown config key: " + k);

  RunConfig cfg;
  for (const auto& f : table) {
    auto it = values.find(f.key);
    if (it == values.end()) throw ConfigError("missing config key: " + f.key);
    f.parse(cfg, it->second);
  }
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path,
                          const std::map<std::string, std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), overrides);
}

std::string format_run_config(const RunConfig& config) {
  std::string out;
  for (const auto& f : fields()) out += f.key + " = " + f.format(config) + "\n";
  return out;
}

std::string content_hash(const std::string& text) {
  const std::string blob = "blob " + std::to_string(text.size()) + std::string(1, '\0') + text;
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(blob.data(), blob.size(), digest, &len, EVP_sha1(), nullptr) != 1) {
    throw std::runtime_error("SHA-1 digest failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 0xF];
  }
  return out;
}

}  // namespace mvm
