// SPDX-License-Identifier: Apache-2.0
#include "ssp/config.hpp"

#include <functional>
#include <map>

#include <json.hpp>

#include "ssp/errors.hpp"
#include "ssp/serialize.hpp"

namespace ssp {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

std::size_t as_size(const json& v, const std::string& key) {
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
    throw ConfigError("key '" + key + "' must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

double as_double(const json& v, const std::string& key) {
  if (!v.is_number()) throw ConfigError("key '" + key + "' must be a number");
  return v.get<double>();
}

bool as_bool(const json& v, const std::string& key) {
  if (!v.is_boolean()) throw ConfigError("key '" + key + "' must be true or false");
  return v.get<bool>();
}

std::string as_string(const json& v, const std::string& key) {
  if (!v.is_string()) throw ConfigError("key '" + key + "' must be a string");
  return v.get<std::string>();
}

using Setter = std::function<void(const json&, RunConfig&)>;

#define SSP_SIZE(name, field) {name, [](const json& v, RunConfig& c) { c.field = as_size(v, name); }}
#define SSP_DOUBLE(name, field) {name, [](const json& v, RunConfig& c) { c.field = as_double(v, name); }}
#define SSP_BOOL(name, field) {name, [](const json& v, RunConfig& c) { c.field = as_bool(v, name); }}

const std::map<std::string, Setter>& run_setters() {
  static const std::map<std::string, Setter> setters = {
      SSP_SIZE("T", model.T),
      SSP_SIZE("C", model.C),
      SSP_SIZE("H", model.H),
      SSP_SIZE("W", model.W),
      SSP_SIZE("patch_h", model.patch_h),
      SSP_SIZE("patch_w", model.patch_w),
      SSP_SIZE("d", model.d),
      SSP_SIZE("D", model.D),
      SSP_SIZE("L", model.L),
      SSP_SIZE("d_s", model.d_s),
      SSP_SIZE("d_t", model.d_t),
      SSP_SIZE("n_ifs", model.n_ifs),
      SSP_SIZE("n_classes", model.n_classes),
      SSP_SIZE("expand", model.expand),
      {"strategy", [](const json& v, RunConfig& c) { c.model.strategy = parse_strategy(as_string(v, "strategy")); }},
      SSP_SIZE("samples_per_class", samples_per_class),
      SSP_DOUBLE("noise_sigma", noise_sigma),
      SSP_SIZE("data_seed", data_seed),
      {"policy", [](const json& v, RunConfig& c) { c.policy = parse_policy(as_string(v, "policy")); }},
      SSP_DOUBLE("lr", optim.lr),
      SSP_DOUBLE("min_lr", optim.min_lr),
      SSP_DOUBLE("weight_decay", optim.weight_decay),
      SSP_SIZE("epochs", optim.epochs),
      SSP_SIZE("warmup_epochs", optim.warmup_epochs),
      SSP_SIZE("batch_size", optim.batch_size),
      SSP_DOUBLE("grad_clip", optim.grad_clip),
      SSP_DOUBLE("beta_init", beta_init),
      SSP_BOOL("use_ifg", options.use_ifg),
      SSP_BOOL("use_ifs", options.use_ifs),
      SSP_BOOL("use_entropy_gate", options.use_entropy_gate),
      SSP_BOOL("use_variance_gate", options.use_variance_gate),
      {"slot_mode", [](const json& v, RunConfig& c) { c.options.slot_mode = parse_slot_mode(as_string(v, "slot_mode")); }},
      SSP_SIZE("seed", seed),
      {"out", [](const json& v, RunConfig& c) { c.out = as_string(v, "out"); }},
      {"dataset", [](const json& v, RunConfig& c) { c.dataset = as_string(v, "dataset"); }},
      {"threads", [](const json& v, RunConfig& c) { c.threads = static_cast<int>(as_size(v, "threads")); }},
  };
  return setters;
}

#undef SSP_SIZE
#undef SSP_DOUBLE
#undef SSP_BOOL

json parse_object(const std::string& text, const std::string& what) {
  json j;
  try {
    j = text.find_first_not_of(" \t\r\n") == std::string::npos ? json::object() : json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(what + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw ConfigError(what + " must be a JSON object");
  return j;
}

void put_model(ojson& j, const ModelConfig& m) {
  j["T"] = m.T;
  j["C"] = m.C;
  j["H"] = m.H;
  j["W"] = m.W;
  j["patch_h"] = m.patch_h;
  j["patch_w"] = m.patch_w;
  j["d"] = m.d;
  j["D"] = m.D;
  j["L"] = m.L;
  j["d_s"] = m.d_s;
  j["d_t"] = m.d_t;
  j["n_ifs"] = m.n_ifs;
  j["strategy"] = to_string(m.strategy);
  j["n_classes"] = m.n_classes;
  j["expand"] = m.expand;
}

}  // namespace

SynthSpec RunConfig::synth_spec() const {
  SynthSpec s;
  s.n_classes = model.n_classes;
  s.samples_per_class = samples_per_class;
  s.T = model.T;
  s.H = model.H;
  s.W = model.W;
  s.C = model.C;
  s.seed = data_seed;
  s.noise_sigma = noise_sigma;
  return s;
}

void RunConfig::validate() const {
  model.validate();
  synth_spec().validate();
  if (!(optim.lr >= 0) || !(optim.min_lr >= 0)) throw ConfigError("lr and min_lr must be >= 0");
  if (!(optim.weight_decay >= 0)) throw ConfigError("weight_decay must be >= 0");
  if (optim.epochs == 0) throw ConfigError("epochs must be positive");
  if (optim.warmup_epochs >= optim.epochs && optim.warmup_epochs > 0) {
    throw ConfigError("warmup_epochs must be smaller than epochs");
  }
  if (optim.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(optim.grad_clip > 0)) throw ConfigError("grad_clip must be positive");
}

RunConfig parse_run_config(const std::string& json_text) {
  const json j = parse_object(json_text, "run config");
  RunConfig c;
  const auto& setters = run_setters();
  for (const auto& [key, value] : j.items()) {
    auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second(value, c);
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  return parse_run_config(read_file(path));
}

std::string run_config_to_json(const RunConfig& c) {
  ojson j;
  put_model(j, c.model);
  j["samples_per_class"] = c.samples_per_class;
  j["noise_sigma"] = c.noise_sigma;
  j["data_seed"] = c.data_seed;
  j["policy"] = to_string(c.policy);
  j["lr"] = c.optim.lr;
  j["min_lr"] = c.optim.min_lr;
  j["weight_decay"] = c.optim.weight_decay;
  j["epochs"] = c.optim.epochs;
  j["warmup_epochs"] = c.optim.warmup_epochs;
  j["batch_size"] = c.optim.batch_size;
  j["grad_clip"] = c.optim.grad_clip;
  j["beta_init"] = c.beta_init;
  j["use_ifg"] = c.options.use_ifg;
  j["use_ifs"] = c.options.use_ifs;
  j["use_entropy_gate"] = c.options.use_entropy_gate;
  j["use_variance_gate"] = c.options.use_variance_gate;
  j["slot_mode"] = to_string(c.options.slot_mode);
  j["seed"] = c.seed;
  j["out"] = c.out;
  j["dataset"] = c.dataset;
  j["threads"] = c.threads;
  return j.dump(2) + "\n";
}

std::string model_config_to_json(const ModelConfig& config) {
  ojson j;
  put_model(j, config);
  return j.dump(2) + "\n";
}

ModelConfig model_config_from_json(const std::string& json_text) {
  const json j = parse_object(json_text, "model config");
  static const char* const kModelKeys[] = {"T", "C", "H", "W", "patch_h", "patch_w", "d", "D",
                                           "L", "d_s", "d_t", "n_ifs", "strategy", "n_classes", "expand"};
  RunConfig c;
  const auto& setters = run_setters();
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (const char* k : kModelKeys) known = known || key == k;
    if (!known) throw ConfigError("unknown model config key '" + key + "'");
    setters.at(key)(value, c);
  }
  return c.model;
}

}  // namespace ssp
