#include "freeflow/run_config.hpp"

#include <algorithm>
#include <cctype>
#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace freeflow {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

bool valid_key(const std::string& k) {
  if (k.empty()) return false;
  for (char c : k) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.')) {
      return false;
    }
  }
  return true;
}

/// Strip quotes from a quoted value; bare values are taken verbatim.
std::string parse_value(const std::string& raw, const std::string& where) {
  std::string v = trim(raw);
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') {
    return v.substr(1, v.size() - 2);
  }
  if (!v.empty() && (v.front() == '"' || v.back() == '"')) {
    throw DomainError(where + ": unbalanced quotes in value");
  }
  // Strip a trailing comment on bare values.
  std::size_t hash = v.find('#');
  if (hash != std::string::npos) v = trim(v.substr(0, hash));
  if (v.empty()) throw DomainError(where + ": empty value");
  return v;
}

bool needs_quotes(const std::string& v) {
  if (v.empty()) return true;
  for (char c : v) {
    if (std::isspace(static_cast<unsigned char>(c)) || c == '#' || c == '"') {
      return true;
    }
  }
  // Bare booleans and numbers round-trip; anything else gets quoted so the
  // resolved copy stays parseable.
  if (v == "true" || v == "false") return false;
  char* end = nullptr;
  errno = 0;
  std::strtod(v.c_str(), &end);
  return !(errno == 0 && end == v.c_str() + v.size());
}

}  // namespace

const std::map<std::string, std::string>& RunConfig::schema() {
  static const std::map<std::string, std::string> s = {
      {"seed", ""},  // required, no default
      {"dataset_dir", "data/synth"},
      {"run_dir", "runs/run"},
      {"threads", "0"},
      {"synth.n_segments", "6500"},
      {"synth.county_grid", "8"},
      {"synth.noise_mph_sd", "0"},
      {"synth.chip_px", "224"},
      {"split.test_fraction", "0.07"},
      {"split.val_fraction", "0.01"},
      {"model.variant", "combined"},
      {"model.backbone_dim", "64"},
      {"model.hidden_dim", "512"},
      {"model.input_px", "224"},
      {"model.freeze_backbone", "false"},
      {"model.raw_metadata", "false"},
      {"train.batch_size", "16"},
      {"train.epochs", "15"},
      {"train.lr0", "0.001"},
      {"train.decay_factor", "10"},
      {"train.decay_epochs", "5"},
      {"train.decay_staircase", "false"},
      {"train.l2_scale", "0.00005"},
      {"eval.checkpoints", ""},
      {"eval.decoder", "argmax"},
      {"predict.checkpoint", ""},
      {"predict.split", "test"},
      {"predict.decoder", "argmax"},
      {"report.checkpoint", ""},
      {"report.split", "test"},
      {"report.threshold", "10"},
      {"report.decoder", "argmax"},
      {"stats.field", "freeflow_mph"},
  };
  return s;
}

RunConfig RunConfig::parse(const std::string& text,
                           const std::vector<std::string>& overrides) {
  RunConfig cfg;
  const auto& known = schema();
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string where = "config line " + std::to_string(line_no);
    std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    std::size_t eq = t.find('=');
    if (eq == std::string::npos) {
      throw DomainError(where + ": expected key = value");
    }
    std::string key = trim(t.substr(0, eq));
    if (!valid_key(key)) throw DomainError(where + ": bad key '" + key + "'");
    if (!known.count(key)) throw DomainError(where + ": unknown key '" + key + "'");
    if (cfg.values_.count(key)) {
      throw DomainError(where + ": duplicate key '" + key + "'");
    }
    cfg.values_[key] = parse_value(t.substr(eq + 1), where);
  }
  for (const auto& ov : overrides) {
    std::size_t eq = ov.find('=');
    if (eq == std::string::npos) {
      throw DomainError("override '" + ov + "': expected key=value");
    }
    std::string key = trim(ov.substr(0, eq));
    if (!valid_key(key) || !known.count(key)) {
      throw DomainError("override: unknown key '" + key + "'");
    }
    cfg.values_[key] = parse_value(ov.substr(eq + 1), "override " + key);
  }
  if (!cfg.has("seed")) {
    throw DomainError("config must set 'seed' (no silent nondeterminism)");
  }
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path,
                          const std::vector<std::string>& overrides) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return parse(buf.str(), overrides);
  } catch (const DomainError& e) {
    throw DomainError(path.string() + ": " + e.what());
  }
}

bool RunConfig::has(const std::string& key) const {
  auto it = values_.find(key);
  if (it != values_.end()) return !it->second.empty();
  auto def = schema().find(key);
  if (def == schema().end()) {
    throw DomainError("internal: key '" + key + "' is not in the schema");
  }
  return !def->second.empty();
}

std::string RunConfig::get_string(const std::string& key) const {
  auto it = values_.find(key);
  if (it != values_.end()) return it->second;
  auto def = schema().find(key);
  if (def == schema().end()) {
    throw DomainError("internal: key '" + key + "' is not in the schema");
  }
  if (def->second.empty() && key == "seed") {
    throw DomainError("config must set 'seed'");
  }
  return def->second;
}

std::int64_t RunConfig::get_int(const std::string& key) const {
  const std::string v = get_string(key);
  errno = 0;
  char* end = nullptr;
  long long x = std::strtoll(v.c_str(), &end, 10);
  if (errno != 0 || end != v.c_str() + v.size()) {
    throw DomainError("config key '" + key + "': '" + v + "' is not an integer");
  }
  return x;
}

std::uint64_t RunConfig::get_uint64(const std::string& key) const {
  const std::string v = get_string(key);
  if (!v.empty() && v.front() == '-') {
    throw DomainError("config key '" + key + "' must be non-negative");
  }
  errno = 0;
  char* end = nullptr;
  unsigned long long x = std::strtoull(v.c_str(), &end, 10);
  if (errno != 0 || end != v.c_str() + v.size()) {
    throw DomainError("config key '" + key + "': '" + v +
                      "' is not a non-negative integer");
  }
  return x;
}

double RunConfig::get_double(const std::string& key) const {
  const std::string v = get_string(key);
  errno = 0;
  char* end = nullptr;
  double x = std::strtod(v.c_str(), &end);
  if (errno != 0 || end != v.c_str() + v.size()) {
    throw DomainError("config key '" + key + "': '" + v + "' is not a number");
  }
  return x;
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string v = get_string(key);
  if (v == "true") return true;
  if (v == "false") return false;
  throw DomainError("config key '" + key + "': expected true or false, got '" +
                    v + "'");
}

std::string RunConfig::render_resolved() const {
  std::ostringstream out;
  out << "# resolved run configuration\n";
  for (const auto& [key, def] : schema()) {
    std::string value;
    auto it = values_.find(key);
    value = it != values_.end() ? it->second : def;
    if (key == "seed" && value.empty()) continue;  // unreachable after parse
    if (value.empty()) {
      out << key << " = \"\"\n";
    } else if (needs_quotes(value)) {
      out << key << " = \"" << value << "\"\n";
    } else {
      out << key << " = " << value << "\n";
    }
  }
  return out.str();
}

void RunConfig::write_resolved(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write resolved config " + path.string());
  out << render_resolved();
  if (!out) throw IoError("short write on " + path.string());
}

}  // namespace freeflow
