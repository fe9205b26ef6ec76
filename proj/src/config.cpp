#include "rtn/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace rtn {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& v, const std::string& where) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return d;
  } catch (const std::exception&) {
    throw ParseError("config: bad number '" + v + "' for " + where);
  }
}

int parse_int(const std::string& v, const std::string& where) {
  try {
    std::size_t pos = 0;
    const long d = std::stol(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return static_cast<int>(d);
  } catch (const std::exception&) {
    throw ParseError("config: bad integer '" + v + "' for " + where);
  }
}

std::uint64_t parse_u64(const std::string& v, const std::string& where) {
  try {
    std::size_t pos = 0;
    const unsigned long long d = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return d;
  } catch (const std::exception&) {
    throw ParseError("config: bad integer '" + v + "' for " + where);
  }
}

bool parse_bool(const std::string& v, const std::string& where) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ParseError("config: bad boolean '" + v + "' for " + where);
}

template <typename T, typename Parse>
std::vector<T> parse_list(const std::string& v, const std::string& where, Parse parse) {
  std::vector<T> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) throw ParseError("config: empty list item for " + where);
    out.push_back(parse(item, where));
  }
  if (out.empty()) throw ParseError("config: empty list for " + where);
  return out;
}

void apply_data_key(SyntheticConfig& d, const std::string& key, const std::string& value,
                    const std::string& where) {
  if (key == "size") {
    d.size = parse_int(value, where);
  } else if (key == "scale_min") {
    d.scale_min = parse_double(value, where);
  } else if (key == "scale_max") {
    d.scale_max = parse_double(value, where);
  } else if (key == "rot_max_deg") {
    d.rot_max_deg = parse_double(value, where);
  } else if (key == "trans_max") {
    d.trans_max = parse_double(value, where);
  } else if (key == "local_warp_amp") {
    d.local_warp_amp = parse_double(value, where);
  } else if (key == "local_warp_smoothness") {
    d.local_warp_smoothness = parse_double(value, where);
  } else if (key == "texture") {
    d.texture = value;
  } else {
    throw ConfigError("config: unknown key '" + where + "'");
  }
}

std::string fmt(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void emit_data_section(std::ostream& os, const char* name, const SyntheticConfig& d) {
  os << "[" << name << "]\n";
  os << "size = " << d.size << "\n";
  os << "scale_min = " << fmt(d.scale_min) << "\n";
  os << "scale_max = " << fmt(d.scale_max) << "\n";
  os << "rot_max_deg = " << fmt(d.rot_max_deg) << "\n";
  os << "trans_max = " << fmt(d.trans_max) << "\n";
  os << "local_warp_amp = " << fmt(d.local_warp_amp) << "\n";
  os << "local_warp_smoothness = " << fmt(d.local_warp_smoothness) << "\n";
  os << "texture = " << d.texture << "\n";
}

}  // namespace

TrainConfig parse_config_text(const std::string& text) {
  TrainConfig cfg;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ParseError("config:" + std::to_string(lineno) + ": unterminated section");
      section = line.substr(1, line.size() - 2);
      if (section != "train" && section != "recurrence" && section != "loss" &&
          section != "data" && section != "heldout" && section != "eval") {
        throw ConfigError("config: unknown section '[" + section + "]'");
      }
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ParseError("config:" + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (section.empty()) throw ParseError("config:" + std::to_string(lineno) + ": key outside any section");
    if (key.empty()) throw ParseError("config:" + std::to_string(lineno) + ": empty key");
    const std::string where = section + "." + key;

    if (section == "train") {
      if (key == "steps") {
        cfg.steps = parse_int(value, where);
      } else if (key == "batch_size") {
        cfg.batch_size = parse_int(value, where);
      } else if (key == "learning_rate") {
        cfg.learning_rate = parse_double(value, where);
      } else if (key == "momentum") {
        cfg.momentum = parse_double(value, where);
      } else if (key == "clip_norm") {
        cfg.clip_norm = parse_double(value, where);
      } else if (key == "seed") {
        cfg.seed = parse_u64(value, where);
      } else if (key == "checkpoint_interval") {
        cfg.checkpoint_interval = parse_int(value, where);
      } else if (key == "descriptor_dim") {
        cfg.descriptor_dim = parse_int(value, where);
      } else if (key == "eval_pairs") {
        cfg.eval_pairs = parse_int(value, where);
      } else {
        throw ConfigError("config: unknown key '" + where + "'");
      }
    } else if (section == "recurrence") {
      if (key == "k_max") {
        cfg.recurrence.k_max = parse_int(value, where);
      } else if (key == "window_radius") {
        cfg.recurrence.window_radius = parse_int(value, where);
      } else if (key == "dilation_schedule") {
        cfg.recurrence.dilation_schedule = parse_list<int>(value, where, parse_int);
      } else if (key == "correlation_eps") {
        cfg.recurrence.correlation_eps = parse_double(value, where);
      } else {
        throw ConfigError("config: unknown key '" + where + "'");
      }
    } else if (section == "loss") {
      if (key == "window_radius") {
        cfg.loss.window_radius = parse_int(value, where);
      } else if (key == "pixels_per_pair") {
        cfg.loss.pixels_per_pair = parse_int(value, where);
      } else if (key == "per_iteration") {
        cfg.loss.per_iteration = parse_bool(value, where);
      } else if (key == "window_normalized") {
        cfg.loss.window_normalized = parse_bool(value, where);
      } else {
        throw ConfigError("config: unknown key '" + where + "'");
      }
    } else if (section == "data") {
      apply_data_key(cfg.data, key, value, where);
    } else if (section == "heldout") {
      apply_data_key(cfg.heldout, key, value, where);
    } else if (section == "eval") {
      if (key == "threshold") {
        cfg.eval.threshold = parse_double(value, where);
      } else if (key == "norm_dim") {
        cfg.eval.norm_dim = parse_double(value, where);
      } else if (key == "alphas") {
        cfg.eval.alphas = parse_list<double>(value, where, parse_double);
      } else {
        throw ConfigError("config: unknown key '" + where + "'");
      }
    }
  }
  return cfg;
}

std::string serialize_config(const TrainConfig& cfg) {
  std::ostringstream os;
  os << "[train]\n";
  os << "steps = " << cfg.steps << "\n";
  os << "batch_size = " << cfg.batch_size << "\n";
  os << "learning_rate = " << fmt(cfg.learning_rate) << "\n";
  os << "momentum = " << fmt(cfg.momentum) << "\n";
  os << "clip_norm = " << fmt(cfg.clip_norm) << "\n";
  os << "seed = " << cfg.seed << "\n";
  os << "checkpoint_interval = " << cfg.checkpoint_interval << "\n";
  os << "descriptor_dim = " << cfg.descriptor_dim << "\n";
  os << "eval_pairs = " << cfg.eval_pairs << "\n";
  os << "[recurrence]\n";
  os << "k_max = " << cfg.recurrence.k_max << "\n";
  os << "window_radius = " << cfg.recurrence.window_radius << "\n";
  os << "dilation_schedule = ";
  for (std::size_t i = 0; i < cfg.recurrence.dilation_schedule.size(); ++i) {
    if (i) os << ",";
    os << cfg.recurrence.dilation_schedule[i];
  }
  os << "\n";
  os << "correlation_eps = " << fmt(cfg.recurrence.correlation_eps) << "\n";
  os << "[loss]\n";
  os << "window_radius = " << cfg.loss.window_radius << "\n";
  os << "pixels_per_pair = " << cfg.loss.pixels_per_pair << "\n";
  os << "per_iteration = " << (cfg.loss.per_iteration ? "true" : "false") << "\n";
  os << "window_normalized = " << (cfg.loss.window_normalized ? "true" : "false") << "\n";
  emit_data_section(os, "data", cfg.data);
  emit_data_section(os, "heldout", cfg.heldout);
  os << "[eval]\n";
  os << "threshold = " << fmt(cfg.eval.threshold) << "\n";
  os << "norm_dim = " << fmt(cfg.eval.norm_dim) << "\n";
  os << "alphas = ";
  for (std::size_t i = 0; i < cfg.eval.alphas.size(); ++i) {
    if (i) os << ",";
    os << fmt(cfg.eval.alphas[i]);
  }
  os << "\n";
  return os.str();
}

TrainConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError(path + ": cannot open config");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

void save_config_file(const TrainConfig& cfg, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError(path + ": cannot write config");
  out << serialize_config(cfg);
}

}  // namespace rtn
