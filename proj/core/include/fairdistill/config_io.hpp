#pragma once

#include <string>

#include "fairdistill/distill.hpp"
#include "fairdistill/eval.hpp"
#include "fairdistill/sweep.hpp"

namespace fairdistill {

// JSON (de)serialization for the config types. Parse errors throw
// ConfigError carrying the offending key path.
class ConfigError : public std::runtime_error {
public:
    ConfigError(const std::string& key_path, const std::string& what)
        : std::runtime_error("config error at '" + key_path + "': " + what), key(key_path) {}
    std::string key;
};

BiasConfig bias_config_from_json(const std::string& json_text, const std::string& root = "");
std::string bias_config_to_json(const BiasConfig& cfg);

DistillConfig distill_config_from_json(const std::string& json_text, const std::string& root = "");
std::string distill_config_to_json(const DistillConfig& cfg);

EvalOptions eval_options_from_json(const std::string& json_text, const std::string& root = "");
std::string eval_options_to_json(const EvalOptions& opts);

SweepSpec sweep_spec_from_json(const std::string& json_text);
std::string sweep_spec_to_json(const SweepSpec& spec);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

// Distillation sidecar: config echo, per-iteration objective log, pass
// counters, mode notes.
std::string distill_sidecar_json(const DistillConfig& cfg, std::size_t ipc, InitPolicy policy,
                                 const DistillLog& log);

}  // namespace fairdistill
