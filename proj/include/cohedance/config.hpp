#pragma once

#include <cctype>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace cohedance {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Flat key/value run configuration. Files hold `key = value` lines with
/// `#` comments; every key must be one of the known keys below.
class RunConfig {
 public:
  enum class Kind { Int, Real, Bool, Text };

  RunConfig() {
    def("seed", Kind::Int, "0");

    def("model.dim", Kind::Int, "64");
    def("model.heads", Kind::Int, "4");
    def("model.ffn_mult", Kind::Int, "2");
    def("model.layers", Kind::Int, "2");
    def("model.residual_dance", Kind::Bool, "true");
    def("model.residual_music", Kind::Bool, "false");
    def("model.head_gain", Kind::Real, "0.1");
    def("disc.dim", Kind::Int, "64");
    def("disc.heads", Kind::Int, "4");
    def("disc.layers", Kind::Int, "2");

    def("train.epochs", Kind::Int, "10");
    def("train.batch", Kind::Int, "4");
    def("train.lr_g", Kind::Real, "0.001");
    def("train.lr_d", Kind::Real, "0.0001");
    def("train.grad_clip", Kind::Real, "1.0");
    def("train.schedule_total", Kind::Int, "0");
    def("train.window", Kind::Int, "0");
    def("train.w_rec", Kind::Real, "1.0");
    def("train.w_cyc", Kind::Real, "1.0");
    def("train.w_fd", Kind::Real, "1.0");
    def("train.w_vel", Kind::Real, "1.0");
    def("train.cycle", Kind::Bool, "true");
    def("train.adversarial", Kind::Bool, "true");
    def("train.scheduled_sampling", Kind::Bool, "true");
    def("train.saturating_fool", Kind::Bool, "false");
    def("train.checkpoint_every", Kind::Int, "0");

    def("metric.sigma", Kind::Real, "3.0");
    def("metric.lead", Kind::Int, "-1");
    def("metric.ordered_pairs", Kind::Bool, "true");
    def("retrieval.dim", Kind::Int, "32");
    def("retrieval.heads", Kind::Int, "4");
    def("retrieval.layers", Kind::Int, "1");
    def("retrieval.embed", Kind::Int, "32");
    def("retrieval.temperature", Kind::Real, "0.1");
    def("retrieval.segment", Kind::Int, "60");
    def("retrieval.steps", Kind::Int, "300");
    def("retrieval.batch", Kind::Int, "8");
    def("retrieval.lr", Kind::Real, "0.002");

    def("synth.count", Kind::Int, "8");
    def("synth.min_duration", Kind::Real, "4.0");
    def("synth.max_duration", Kind::Real, "4.0");
    def("synth.min_dancers", Kind::Int, "2");
    def("synth.max_dancers", Kind::Int, "2");
    def("synth.amplitude", Kind::Real, "0.4");
    def("split.train", Kind::Real, "0.85");
    def("split.test", Kind::Real, "0.15");

    def("preprocess.alpha_rotation", Kind::Real, "0.9");
    def("preprocess.alpha_translation", Kind::Real, "0.8");
    def("preprocess.vel_thresh", Kind::Real, "10.0");
    def("preprocess.acc_thresh", Kind::Real, "100.0");
    def("preprocess.max_gap", Kind::Int, "15");

    def("generate.horizon", Kind::Int, "0");
    def("evaluate.split", Kind::Text, "test");
  }

  void set(const std::string& key, const std::string& value) {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key: " + key);
    check(key, kinds_.at(key), value);
    it->second = value;
  }

  /// Applies a `key=value` override.
  void apply_override(const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("override must look like key=value: " + kv);
    set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }

  void load_text(const std::string& text, const std::string& origin = "config") {
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
      try {
        set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
      } catch (const ConfigError& e) {
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
      }
    }
  }

  void load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    load_text(ss.str(), path);
  }

  std::int64_t integer(const std::string& key) const { return std::stoll(get(key, Kind::Int)); }
  double real(const std::string& key) const { return std::stod(get(key, Kind::Real)); }
  bool boolean(const std::string& key) const { return parse_bool(get(key, Kind::Bool)); }
  const std::string& text(const std::string& key) const { return get(key, Kind::Text); }
  std::uint64_t seed() const { return static_cast<std::uint64_t>(integer("seed")); }

  /// Every key with its resolved value, sorted, one `key = value` per line.
  std::string dump() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
  }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  void def(const std::string& key, Kind kind, const std::string& value) {
    values_[key] = value;
    kinds_[key] = kind;
  }

  const std::string& get(const std::string& key, Kind kind) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key: " + key);
    if (kinds_.at(key) != kind && !(kind == Kind::Real && kinds_.at(key) == Kind::Int))
      throw ConfigError("config key read with the wrong type: " + key);
    return it->second;
  }

  static std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
  }

  static bool parse_bool(const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("not a boolean: " + v);
  }

  static void check(const std::string& key, Kind kind, const std::string& v) {
    auto bad = [&] { return ConfigError("invalid value for " + key + ": '" + v + "'"); };
    switch (kind) {
      case Kind::Int: {
        long long x = 0;
        auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
        if (ec != std::errc() || p != v.data() + v.size()) throw bad();
        break;
      }
      case Kind::Real: {
        std::size_t used = 0;
        try {
          (void)std::stod(v, &used);
        } catch (const std::exception&) {
          throw bad();
        }
        if (used != v.size()) throw bad();
        break;
      }
      case Kind::Bool:
        try {
          (void)parse_bool(v);
        } catch (const ConfigError&) {
          throw bad();
        }
        break;
      case Kind::Text: break;
    }
  }

  std::map<std::string, std::string> values_;
  std::map<std::string, Kind> kinds_;
};

}  // namespace cohedance
