#include "dgsp/config.hpp"

#include <cstdlib>
#include <fstream>

#include "dgsp/common.hpp"

namespace dgsp {

nlohmann::json default_config() {
  return {
      {"seed", nullptr},
      {"model",
       {{"in_channels", 1},
        {"widths", {16, 32, 64, 128, 256}},
        {"dec_width", 32},
        {"latent_dim", 32},
        {"text_dim", 64},
        {"inv_channels", 32},
        {"inv_heads", 4},
        {"bridge_heads", 4},
        {"text_heads", 4},
        {"text_layers", 2},
        {"context_len", 77},
        {"n_tokens", 2}}},
      {"prompt", {{"scene", "the"}, {"vocab_file", ""}}},
      {"data", {{"root", ""}, {"crop", 64}, {"standardize", false}}},
      {"train",
       {{"epochs", 50},
        {"batch", 4},
        {"lr", 1e-4},
        {"lr_inversion", 3e-4},
        {"poly_power", 1.2},
        {"lambda1", 1.0},
        {"lambda2", 1.0},
        {"tau", 0.07},
        {"weight_decay", 0.01},
        {"out_dir", "runs/default"},
        {"init_checkpoint", ""},
        {"resume", ""},
        {"eval_every", 1},
        {"save_every", 1},
        {"threshold", 0.5}}},
      {"metrics", {{"radius", 3.0}, {"connectivity", 8}, {"threshold", 0.5}}}};
}

namespace {

bool types_compatible(const nlohmann::json& base, const nlohmann::json& incoming) {
  if (base.is_null() || incoming.is_null()) return true;
  if (base.is_number() && incoming.is_number()) return true;
  return base.type() == incoming.type();
}

void merge_checked(nlohmann::json& base, const nlohmann::json& incoming, const std::string& path) {
  if (!incoming.is_object()) {
    throw ConfigError("config node '" + (path.empty() ? "<root>" : path) + "' must be an object");
  }
  for (auto it = incoming.begin(); it != incoming.end(); ++it) {
    const std::string here = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("unknown config key: " + here);
    nlohmann::json& slot = base[it.key()];
    if (slot.is_object()) {
      merge_checked(slot, it.value(), here);
    } else {
      if (!types_compatible(slot, it.value())) {
        throw ConfigError("config key '" + here + "' has the wrong type");
      }
      slot = it.value();
    }
  }
}

}  // namespace

nlohmann::json load_config(const std::string& path) {
  nlohmann::json cfg = default_config();
  if (path.empty()) return cfg;
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  nlohmann::json user;
  try {
    in >> user;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
  }
  merge_checked(cfg, user, "");
  return cfg;
}

void apply_override(nlohmann::json& cfg, const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override must look like dotted.key=value, got '" + kv + "'");
  }
  const std::string key = kv.substr(0, eq);
  const std::string raw = kv.substr(eq + 1);

  nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;  // unquoted strings pass through

  nlohmann::json* node = &cfg;
  std::size_t start = 0;
  std::string walked;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? dot : dot - start);
    walked = walked.empty() ? part : walked + "." + part;
    if (!node->is_object() || !node->contains(part)) {
      throw ConfigError("unknown config key: " + walked);
    }
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  if (node->is_object()) throw ConfigError("config key '" + key + "' is a section, not a value");
  if (!types_compatible(*node, value)) {
    throw ConfigError("config key '" + key + "' has the wrong type");
  }
  *node = value;
}

std::uint64_t resolve_seed(const nlohmann::json& cfg) {
  const auto& s = cfg.at("seed");
  if (!s.is_null()) {
    if (!s.is_number_integer() || (!s.is_number_unsigned() && s.get<long long>() < 0)) {
      throw ConfigError("seed must be an unsigned integer");
    }
    return s.get<std::uint64_t>();
  }
  if (const char* env = std::getenv("DGSP_SEED")) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (env[0] == '\0' || end == nullptr || *end != '\0') {
      throw ConfigError("DGSP_SEED must be an unsigned integer");
    }
    return static_cast<std::uint64_t>(v);
  }
  return 0;
}

ModelConfig model_config_from(const nlohmann::json& cfg) {
  const auto& m = cfg.at("model");
  ModelConfig mc;
  mc.in_channels = m.at("in_channels").get<long>();
  mc.widths = m.at("widths").get<std::vector<long>>();
  mc.dec_width = m.at("dec_width").get<long>();
  mc.latent_dim = m.at("latent_dim").get<long>();
  mc.text_dim = m.at("text_dim").get<long>();
  mc.inv_channels = m.at("inv_channels").get<long>();
  mc.inv_heads = m.at("inv_heads").get<long>();
  mc.bridge_heads = m.at("bridge_heads").get<long>();
  mc.text_heads = m.at("text_heads").get<long>();
  mc.text_layers = m.at("text_layers").get<long>();
  mc.context_len = m.at("context_len").get<long>();
  mc.n_tokens = m.at("n_tokens").get<long>();
  return mc;  // caller sets vocab_size, then the model validates

}

}  // namespace dgsp
