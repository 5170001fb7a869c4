#include "memlens/config.hpp"

#include <nlohmann/json.hpp>

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

namespace memlens {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double parse_double(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  double value = 0.0;
  const auto [end, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
  if (t.empty() || ec != std::errc() || end != t.data() + t.size()) {
    throw Error(key + ": expected a number, got '" + text + "'");
  }
  return value;
}

long long parse_integer(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  long long value = 0;
  const auto [end, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
  if (t.empty() || ec != std::errc() || end != t.data() + t.size()) {
    throw Error(key + ": expected an integer, got '" + text + "'");
  }
  return value;
}

std::uint64_t parse_unsigned(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  std::uint64_t value = 0;
  const auto [end, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
  if (t.empty() || ec != std::errc() || end != t.data() + t.size()) {
    throw Error(key + ": expected a non-negative integer, got '" + text + "'");
  }
  return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  if (t == "true" || t == "1" || t == "yes") return true;
  if (t == "false" || t == "0" || t == "no") return false;
  throw Error(key + ": expected true or false, got '" + text + "'");
}

std::string join_doubles(const std::vector<double>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) out += (i ? "," : "") + format_double(values[i]);
  return out;
}

MemorylessKind parse_memoryless(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  if (t == "second-order") return {MemorylessOrder::SecondOrder, CorrectionVariant::FiniteN};
  if (t == "second-order-asymptotic") return {MemorylessOrder::SecondOrder, CorrectionVariant::Asymptotic};
  if (t == "first-order") return {MemorylessOrder::FirstOrder, CorrectionVariant::FiniteN};
  throw Error(key + ": expected second-order, second-order-asymptotic or first-order, got '" + text + "'");
}

template <typename Fn>
auto naming(const std::string& key, Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    throw Error(key + ": " + e.what());
  }
}

struct KeyDef {
  ConfigKey meta;
  std::function<void(Config&, const std::string& key, const std::string& value)> set;
  std::function<std::string(const Config&)> get;
};

// Loss parameters with the defaults the fixtures fall back to.
struct LossParam {
  const char* name;
  double fallback;
  const char* unit;
  const char* help;
};

constexpr LossParam kLossParams[] = {
    {"radius", 1e3, "parameter units", "domain is the open box ||theta||_inf < radius"},
    {"eig_min", 0.1, "1/time", "quadratic: smallest Hessian eigenvalue"},
    {"eig_max", 1.0, "1/time", "quadratic: largest Hessian eigenvalue"},
    {"offset_scale", 1.0, "gradient units", "quadratic: scale of the linear term b"},
    {"samples", 200, "count", "logistic: number of synthetic points m"},
    {"label_noise", 0.5, "dimensionless", "logistic: score noise before thresholding labels"},
    {"feature_scale", 1.0, "dimensionless", "logistic: features are feature_scale times standard normals"},
    {"ridge", 0.0, "1/time", "logistic: L2 penalty coefficient"},
    {"quartic_a", 1.0, "1/(time parameter^2)", "quartic: coefficient a in a/4 sum theta_i^4"},
    {"count", 6, "count", "minibatch-quadratic: number of batches n + 1"},
    {"spread", 0.5, "dimensionless", "minibatch-quadratic: size of per-batch perturbations"},
};

const std::vector<KeyDef>& registry() {
  static const std::vector<KeyDef> defs = [] {
    std::vector<KeyDef> d;
    auto add = [&d](std::string section, std::string key, std::string unit, std::string help, auto set, auto get) {
      d.push_back({{std::move(section), std::move(key), std::move(unit), std::move(help)}, set, get});
    };

    add("run", "seed", "integer", "seed for every random draw", [](Config& c, const std::string& k, const std::string& v) {
      c.run.seed = parse_unsigned(k, v);
    }, [](const Config& c) { return std::to_string(c.run.seed); });
    add("run", "dim", "count", "parameter dimension d", [](Config& c, const std::string& k, const std::string& v) {
      c.run.dim = static_cast<Index>(parse_integer(k, v));
    }, [](const Config& c) { return std::to_string(c.run.dim); });
    add("run", "T", "time", "horizon; runs take floor(T / h) steps", [](Config& c, const std::string& k, const std::string& v) {
      c.run.T = parse_double(k, v);
    }, [](const Config& c) { return format_double(c.run.T); });
    add("run", "theta0", "parameter units", "comma list; empty draws uniformly in the theta0_scale box",
        [](Config& c, const std::string& k, const std::string& v) {
          const auto items = split_list(v);
          c.run.initial_theta.resize(static_cast<Index>(items.size()));
          for (std::size_t i = 0; i < items.size(); ++i) c.run.initial_theta[static_cast<Index>(i)] = parse_double(k, items[i]);
        },
        [](const Config& c) {
          std::vector<double> v(c.run.initial_theta.data(), c.run.initial_theta.data() + c.run.initial_theta.size());
          return join_doubles(v);
        });
    add("run", "theta0_scale", "parameter units", "half-width of the random start box",
        [](Config& c, const std::string& k, const std::string& v) { c.run.theta0_scale = parse_double(k, v); },
        [](const Config& c) { return format_double(c.run.theta0_scale); });

    add("optimizer", "kind", "name", "heavyball, nesterov, adamw, nadamw, lionk or signum",
        [](Config& c, const std::string& k, const std::string& v) {
          c.run.optimizer.kind = naming(k, [&] { return parse_kind(trim(v)); });
        },
        [](const Config& c) { return to_string(c.run.optimizer.kind); });
    add("optimizer", "h", "time", "step size (learning rate)", [](Config& c, const std::string& k, const std::string& v) {
      c.run.optimizer.h = parse_double(k, v);
    }, [](const Config& c) { return format_double(c.run.optimizer.h); });
    add("optimizer", "beta1", "dimensionless", "first momentum decay in [0, 1); rho1 for lionk",
        [](Config& c, const std::string& k, const std::string& v) { c.run.optimizer.beta1 = parse_double(k, v); },
        [](const Config& c) { return format_double(c.run.optimizer.beta1); });
    add("optimizer", "beta2", "dimensionless", "second momentum decay in [0, 1); rho2 for lionk",
        [](Config& c, const std::string& k, const std::string& v) { c.run.optimizer.beta2 = parse_double(k, v); },
        [](const Config& c) { return format_double(c.run.optimizer.beta2); });
    add("optimizer", "lambda", "1/time", "decoupled weight decay", [](Config& c, const std::string& k, const std::string& v) {
      c.run.optimizer.lambda = parse_double(k, v);
    }, [](const Config& c) { return format_double(c.run.optimizer.lambda); });
    add("optimizer", "eps", "gradient units^2", "stability constant, also the one-norm smoothing",
        [](Config& c, const std::string& k, const std::string& v) { c.run.optimizer.eps = parse_double(k, v); },
        [](const Config& c) { return format_double(c.run.optimizer.eps); });
    add("optimizer", "kspec", "name", "lionk K: smoothed-one-norm, half-squared-two-norm or sign",
        [](Config& c, const std::string& k, const std::string& v) {
          c.run.optimizer.kspec = naming(k, [&] { return parse_kspec(trim(v)); });
        },
        [](const Config& c) { return to_string(c.run.optimizer.kspec); });
    add("optimizer", "bias_correction", "bool", "n-dependent normalisers instead of their limits",
        [](Config& c, const std::string& k, const std::string& v) { c.run.optimizer.bias_correction = parse_bool(k, v); },
        [](const Config& c) { return std::string(c.run.optimizer.bias_correction ? "true" : "false"); });

    add("loss", "id", "name", "quadratic, logistic, quartic or minibatch-quadratic",
        [](Config& c, const std::string&, const std::string& v) { c.run.loss.id = trim(v); },
        [](const Config& c) { return c.run.loss.id; });
    for (const LossParam& p : kLossParams) {
      const std::string name = p.name;
      add("loss", name, p.unit, p.help,
          [name](Config& c, const std::string& k, const std::string& v) { c.run.loss.params[name] = parse_double(k, v); },
          [name](const Config& c) { return format_double(c.run.loss.params.at(name)); });
    }

    add("experiment", "name", "text", "output file prefix; empty uses the command name",
        [](Config& c, const std::string&, const std::string& v) { c.experiment.name = trim(v); },
        [](const Config& c) { return c.experiment.name; });
    add("experiment", "h_grid", "time", "comma list of step sizes; empty uses h_base and h_count",
        [](Config& c, const std::string& k, const std::string& v) {
          c.experiment.h_grid.clear();
          for (const auto& item : split_list(v)) c.experiment.h_grid.push_back(parse_double(k, item));
        },
        [](const Config& c) { return join_doubles(c.experiment.h_grid); });
    add("experiment", "h_base", "time", "largest step of the halving grid", [](Config& c, const std::string& k, const std::string& v) {
      c.experiment.h_base = parse_double(k, v);
    }, [](const Config& c) { return format_double(c.experiment.h_base); });
    add("experiment", "h_count", "count", "points in the halving grid h_base * 2^-j",
        [](Config& c, const std::string& k, const std::string& v) { c.experiment.h_count = static_cast<int>(parse_integer(k, v)); },
        [](const Config& c) { return std::to_string(c.experiment.h_count); });
    add("experiment", "memoryless", "name", "second-order, second-order-asymptotic or first-order",
        [](Config& c, const std::string& k, const std::string& v) { c.experiment.memoryless = parse_memoryless(k, v); },
        [](const Config& c) { return to_string(c.experiment.memoryless); });
    add("experiment", "ns", "steps", "comma list of step indices n for corr-table",
        [](Config& c, const std::string& k, const std::string& v) {
          c.experiment.ns.clear();
          for (const auto& item : split_list(v)) c.experiment.ns.push_back(static_cast<long>(parse_integer(k, item)));
        },
        [](const Config& c) {
          std::string out;
          for (std::size_t i = 0; i < c.experiment.ns.size(); ++i) out += (i ? "," : "") + std::to_string(c.experiment.ns[i]);
          return out;
        });
    add("experiment", "samples", "count", "Monte Carlo orderings for minibatch-corr",
        [](Config& c, const std::string& k, const std::string& v) { c.experiment.samples = static_cast<long>(parse_integer(k, v)); },
        [](const Config& c) { return std::to_string(c.experiment.samples); });
    add("experiment", "mc_seed", "integer", "seed of the Monte Carlo orderings",
        [](Config& c, const std::string& k, const std::string& v) { c.experiment.mc_seed = parse_unsigned(k, v); },
        [](const Config& c) { return std::to_string(c.experiment.mc_seed); });
    add("experiment", "dt_divisor", "dimensionless", "ode-compare integrates with dt = h / dt_divisor (>= 4)",
        [](Config& c, const std::string& k, const std::string& v) { c.experiment.dt_divisor = parse_double(k, v); },
        [](const Config& c) { return format_double(c.experiment.dt_divisor); });
    add("experiment", "with_g2", "bool", "ode-compare keeps the h G2 term",
        [](Config& c, const std::string& k, const std::string& v) { c.experiment.with_g2 = parse_bool(k, v); },
        [](const Config& c) { return std::string(c.experiment.with_g2 ? "true" : "false"); });
    add("experiment", "slope_min", "dimensionless", "lower slope gate; auto uses the command default",
        [](Config& c, const std::string& k, const std::string& v) {
          if (trim(v) == "auto") c.experiment.slope_min.reset(); else c.experiment.slope_min = parse_double(k, v);
        },
        [](const Config& c) { return c.experiment.slope_min ? format_double(*c.experiment.slope_min) : std::string("auto"); });
    add("experiment", "slope_max", "dimensionless", "upper slope gate; auto uses the command default",
        [](Config& c, const std::string& k, const std::string& v) {
          if (trim(v) == "auto") c.experiment.slope_max.reset(); else c.experiment.slope_max = parse_double(k, v);
        },
        [](const Config& c) { return c.experiment.slope_max ? format_double(*c.experiment.slope_max) : std::string("auto"); });
    add("experiment", "r2_min", "dimensionless", "smallest r^2 a slope gate accepts",
        [](Config& c, const std::string& k, const std::string& v) { c.experiment.r2_min = parse_double(k, v); },
        [](const Config& c) { return format_double(c.experiment.r2_min); });
    add("experiment", "min_fraction", "dimensionless", "closeness gate on the share of steps with second <= first",
        [](Config& c, const std::string& k, const std::string& v) { c.experiment.min_fraction = parse_double(k, v); },
        [](const Config& c) { return format_double(c.experiment.min_fraction); });
    add("experiment", "lambda_h", "dimensionless", "closeness: weight decay lambda_h / h at each h; auto keeps optimizer.lambda",
        [](Config& c, const std::string& k, const std::string& v) {
          if (trim(v) == "auto") c.experiment.lambda_h.reset(); else c.experiment.lambda_h = parse_double(k, v);
        },
        [](const Config& c) { return c.experiment.lambda_h ? format_double(*c.experiment.lambda_h) : std::string("auto"); });
    add("experiment", "points", "count", "gradcheck: random points checked besides theta0",
        [](Config& c, const std::string& k, const std::string& v) { c.experiment.points = static_cast<int>(parse_integer(k, v)); },
        [](const Config& c) { return std::to_string(c.experiment.points); });
    add("experiment", "tolerance", "dimensionless", "gradcheck: largest accepted relative error",
        [](Config& c, const std::string& k, const std::string& v) { c.experiment.tolerance = parse_double(k, v); },
        [](const Config& c) { return format_double(c.experiment.tolerance); });
    return d;
  }();
  return defs;
}

const KeyDef& find_key(const std::string& dotted) {
  for (const KeyDef& def : registry()) {
    if (def.meta.section + "." + def.meta.key == dotted) return def;
  }
  throw Error("unknown config key '" + dotted + "'");
}

std::string json_scalar_text(const nlohmann::json& value, const std::string& key) {
  if (value.is_string()) return value.get<std::string>();
  if (value.is_boolean()) return value.get<bool>() ? "true" : "false";
  if (value.is_number_integer() || value.is_number_unsigned()) return value.dump();
  if (value.is_number_float()) return format_double(value.get<double>());
  throw Error(key + ": expected a scalar value");
}

Config parse_json(const std::string& text, const std::string& origin) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(origin + ": invalid JSON: " + e.what());
  }
  const nlohmann::json& sections = doc.contains("config") ? doc.at("config") : doc;
  if (!sections.is_object()) throw Error(origin + ": expected an object of sections");
  Config config;
  for (const auto& [section, body] : sections.items()) {
    if (!body.is_object()) throw Error(origin + ": section '" + section + "' is not an object");
    for (const auto& [key, value] : body.items()) {
      const std::string dotted = section + "." + key;
      find_key(dotted).set(config, dotted, json_scalar_text(value, dotted));
    }
  }
  return config;
}

}  // namespace

std::vector<double> ExperimentConfig::grid() const {
  if (!h_grid.empty()) return h_grid;
  std::vector<double> out;
  for (int j = 0; j < h_count; ++j) out.push_back(std::ldexp(h_base, -j));
  return out;
}

Config::Config() {
  run.dim = 10;
  run.T = 1.0;
  for (const LossParam& p : kLossParams) run.loss.params[p.name] = p.fallback;
}

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> out;
    for (const KeyDef& def : registry()) out.push_back(def.meta);
    return out;
  }();
  return keys;
}

void set_config_value(Config& config, const std::string& dotted_key, const std::string& value) {
  find_key(dotted_key).set(config, dotted_key, value);
}

std::string get_config_value(const Config& config, const std::string& dotted_key) {
  return find_key(dotted_key).get(config);
}

Config parse_config(const std::string& text, const std::string& origin) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') return parse_json(text, origin);

  Config config;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string where = origin + ":" + std::to_string(line_no);
    const auto comment = line.find_first_of("#;");
    if (comment != std::string::npos) line.erase(comment);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw Error(where + ": malformed section header '" + line + "'");
      section = trim(line.substr(1, line.size() - 2));
      if (section != "run" && section != "optimizer" && section != "loss" && section != "experiment") {
        throw Error(where + ": unknown section '" + section + "'");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(where + ": expected key = value, got '" + line + "'");
    if (section.empty()) throw Error(where + ": key outside of any section");
    const std::string dotted = section + "." + trim(line.substr(0, eq));
    try {
      set_config_value(config, dotted, trim(line.substr(eq + 1)));
    } catch (const Error& e) {
      throw Error(where + ": " + e.what());
    }
  }
  return config;
}

Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read config file '" + path.string() + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str(), path.string());
}

std::string to_config_text(const Config& config) {
  std::string out;
  std::string section;
  for (const KeyDef& def : registry()) {
    if (def.meta.section != section) {
      section = def.meta.section;
      out += (out.empty() ? "[" : "\n[") + section + "]\n";
    }
    out += def.meta.key + " = " + def.get(config) + "\n";
  }
  return out;
}

void validate(const Config& config) {
  const RunConfig& run = config.run;
  if (run.dim < 1) throw Error("run.dim must be at least 1");
  if (!(run.T > 0.0)) throw Error("run.T must be positive");
  if (run.initial_theta.size() != 0 && run.initial_theta.size() != run.dim) {
    throw Error("run.theta0 has " + std::to_string(run.initial_theta.size()) + " entries but run.dim is " +
                std::to_string(run.dim));
  }
  try {
    run.optimizer.validate();
  } catch (const Error& e) {
    throw Error(std::string("optimizer: ") + e.what());
  }
  const ExperimentConfig& ex = config.experiment;
  for (double h : ex.grid()) {
    if (!(h > 0.0)) throw Error("experiment.h_grid: step " + format_double(h) + " is not positive");
  }
  if (ex.h_grid.empty() && ex.h_count < 1) throw Error("experiment.h_count must be at least 1");
  if (!(ex.dt_divisor >= 4.0)) throw Error("experiment.dt_divisor must be at least 4");
  if (ex.samples < 1) throw Error("experiment.samples must be positive");
  if (ex.points < 0) throw Error("experiment.points must be non-negative");
}

std::string config_hash(const Config& config) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(to_config_text(config))));
  return buf;
}

}  // namespace memlens
