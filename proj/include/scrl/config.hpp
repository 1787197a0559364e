#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "scrl/trainer.hpp"

namespace scrl {

// Flat key=value text. '#' starts a comment; blank lines are ignored.
using KeyValues = std::vector<std::pair<std::string, std::string>>;

// Throws ConfigError naming the line of a malformed entry.
KeyValues parse_key_values(const std::string& text);

// Keys mirror the TrainConfig and LossConfig field names. Later entries win.
// Throws ConfigError on an unknown key or unparsable value.
void apply_config(TrainConfig& cfg, const KeyValues& kv);
void set_config_value(TrainConfig& cfg, const std::string& key, const std::string& value);

TrainConfig load_config_file(const std::filesystem::path& path, TrainConfig base = {});

// Every field, one per line, in a fixed order; doubles round-trip exactly.
std::string format_config(const TrainConfig& cfg);

// Shortest text that parses back to the same double.
std::string format_double(double v);
double parse_double(const std::string& text, const std::string& what);
std::uint64_t parse_u64(const std::string& text, const std::string& what);
bool parse_bool(const std::string& text, const std::string& what);

}  // namespace scrl
