#pragma once

#include <map>
#include <string>

#include "msscanet/dataset.hpp"
#include "msscanet/model.hpp"
#include "msscanet/train.hpp"

namespace msscanet {

// Plain `key = value` lines; '#' starts a comment; blank lines ignored.
// Duplicate keys are rejected.
std::map<std::string, std::string> parse_kv_text(const std::string& text);
std::map<std::string, std::string> load_kv_file(const std::string& path);

// Each apply_* consumes the keys it understands and leaves the rest in the
// map; callers reject leftovers with require_no_leftover when the file is
// expected to contain nothing else.
void apply_model_config(std::map<std::string, std::string>& kv, ModelConfig& config);
void apply_train_schedule(std::map<std::string, std::string>& kv, TrainSchedule& schedule);
void apply_synth_spec(std::map<std::string, std::string>& kv, SynthSpec& spec);

void require_no_leftover(const std::map<std::string, std::string>& kv, const std::string& context);

}  // namespace msscanet
