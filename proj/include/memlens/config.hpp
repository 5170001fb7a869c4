#pragma once

#include "memlens/memoryless.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace memlens {

/// Knobs of the experiment drivers, section [experiment].
struct ExperimentConfig {
  std::string name;                 // empty: the command name
  std::vector<double> h_grid;       // empty: h_base * 2^-j, j < h_count
  double h_base = 1e-2;
  int h_count = 7;
  MemorylessKind memoryless;
  std::vector<long> ns{1, 5, 50, 200};
  long samples = 100000;            // Monte Carlo orderings
  std::uint64_t mc_seed = 1;
  double dt_divisor = 8.0;
  bool with_g2 = true;
  std::optional<double> slope_min;  // unset: the command's default gate
  std::optional<double> slope_max;
  double r2_min = 0.98;
  double min_fraction = 0.95;
  std::optional<double> lambda_h;   // closeness: weight decay lambda_h / h per h
  int points = 5;                   // gradcheck points besides theta0
  double tolerance = 1e-5;

  std::vector<double> grid() const;
};

struct Config {
  RunConfig run;
  ExperimentConfig experiment;

  Config();
};

struct ConfigKey {
  std::string section;
  std::string key;
  std::string unit;
  std::string help;
};

// Every accepted key, in canonical order.
const std::vector<ConfigKey>& config_keys();

// Sets section.key from text; throws Error naming the key on unknown keys or
// unparsable values.
void set_config_value(Config& config, const std::string& dotted_key, const std::string& value);
std::string get_config_value(const Config& config, const std::string& dotted_key);

/// Sectioned key = value text with [run], [optimizer], [loss] and
/// [experiment]; '#' and ';' start comments. A JSON object of sections (or a
/// manifest holding one under "config") is read the same way.
Config parse_config(const std::string& text, const std::string& origin);
Config load_config(const std::filesystem::path& path);

// Canonical text form listing every key; parse_config reads it back exactly.
std::string to_config_text(const Config& config);

// Checks cross-field constraints after all overrides are applied.
void validate(const Config& config);

// 16 hex digits derived from the canonical text.
std::string config_hash(const Config& config);

}  // namespace memlens
