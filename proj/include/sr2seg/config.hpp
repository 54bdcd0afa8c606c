#pragma once

// Run configuration: plain-text `key = value` files, `#` comments.
// Every field is addressable by key; unknown keys are errors.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sr2seg/dbpn.hpp"
#include "sr2seg/optim.hpp"
#include "sr2seg/resample.hpp"
#include "sr2seg/segnet.hpp"

namespace sr2seg {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Mode { lr_baseline, hr_baseline, end2end };

inline std::string to_string(Mode m) {
  switch (m) {
    case Mode::lr_baseline: return "lr";
    case Mode::hr_baseline: return "hr";
    case Mode::end2end: return "end2end";
  }
  return "?";
}

/// Column label used in result tables.
inline std::string method_label(Mode m) {
  switch (m) {
    case Mode::lr_baseline: return "LR";
    case Mode::hr_baseline: return "HR";
    case Mode::end2end: return "End-to-end";
  }
  return "?";
}

inline Mode parse_mode(const std::string& s) {
  if (s == "lr" || s == "lr_baseline" || s == "LR_BASELINE") return Mode::lr_baseline;
  if (s == "hr" || s == "hr_baseline" || s == "HR_BASELINE") return Mode::hr_baseline;
  if (s == "end2end" || s == "END2END" || s == "e2e") return Mode::end2end;
  throw ConfigError("unknown mode '" + s + "' (expected lr, hr or end2end)");
}

struct LossWeights {
  double alpha = 0.1;
  double beta = 1000.0;

  void validate() const {
    if (alpha < 0 || beta < 0) throw ConfigError("loss weights must be non-negative");
    if (alpha == 0 && beta == 0) throw ConfigError("alpha and beta cannot both be zero");
  }
};

struct TrainConfig {
  Mode mode = Mode::end2end;
  std::size_t epochs = 300;
  double base_lr = 1e-5;
  double decay_factor = 10.0;
  AdamSettings sr_optimizer{0.9, 0.999, 1e-8, 1e-4};
  AdamSettings seg_optimizer{0.9, 0.999, 1e-8, 5e-4};
  std::size_t batch_size = 1;
  std::uint64_t seed = 0;
  LossWeights weights;
  std::size_t checkpoint_every = 10;  // epochs; the final epoch is always saved
  // End-to-end only: epochs of reconstruction-only training before the joint
  // phase, standing in for a pretrained SR network. 0 disables it.
  std::size_t sr_warmup_epochs = 0;
  double sr_warmup_lr = 0;  // 0 means base_lr

  void validate() const {
    if (epochs < 2) throw ConfigError("epochs must be >= 2");
    if (!(base_lr > 0)) throw ConfigError("base_lr must be > 0");
    if (!(decay_factor > 0)) throw ConfigError("decay_factor must be > 0");
    if (batch_size != 1) throw ConfigError("only batch_size = 1 is supported");
    if (!(sr_optimizer.lr_scale > 0) || !(seg_optimizer.lr_scale > 0)) throw ConfigError("lr_scale must be > 0");
    if (sr_warmup_lr < 0) throw ConfigError("sr_warmup_lr must be >= 0");
    weights.validate();
  }
};

struct DataConfig {
  std::string root = "data";
  std::string dataset = "synthetic";
  std::size_t tile = 480;
  DegradationSpec degradation;
};

struct RunConfig {
  TrainConfig train;
  SRConfig sr;
  SegConfig seg;
  DataConfig data;

  RunConfig() { seg.num_classes = 0; }  // 0: take the dataset's class count

  void set(const std::string& key, const std::string& value);
  std::string to_text() const;
  std::string fingerprint() const;
  std::vector<std::string> keys() const;

  void validate() const {
    train.validate();
    sr.validate();
    if (sr.factor != data.degradation.factor)
      throw ConfigError("sr.factor (" + std::to_string(sr.factor) + ") differs from data.factor (" +
                        std::to_string(data.degradation.factor) + ")");
    if (seg.num_classes != 0) seg.validate();
    if (data.tile % static_cast<std::size_t>(data.degradation.factor))
      throw ConfigError("data.tile must be divisible by the degradation factor");
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double d = 0;
  try {
    d = std::stod(v, &pos);
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": '" + v + "' is not a number");
  }
  if (pos != v.size()) throw ConfigError("config key " + key + ": '" + v + "' is not a number");
  return d;
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos)
    throw ConfigError("config key " + key + ": '" + v + "' is not a non-negative integer");
  return std::stoull(v);
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "off" || v == "no") return false;
  throw ConfigError("config key " + key + ": '" + v + "' is not a boolean");
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline std::vector<EncoderStage> parse_plan(const std::string& key, const std::string& v) {
  std::vector<EncoderStage> plan;
  for (const auto& item : split_list(v)) {
    const auto x = item.find('x');
    if (x == std::string::npos) throw ConfigError(key + ": stage '" + item + "' must be <depth>x<width>");
    plan.push_back({parse_uint(key, item.substr(0, x)), parse_uint(key, item.substr(x + 1))});
  }
  if (plan.empty()) throw ConfigError(key + ": empty encoder plan");
  return plan;
}

struct Field {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

inline void add_adam_fields(std::map<std::string, Field>& f, const std::string& prefix,
                            AdamSettings TrainConfig::*member) {
  f[prefix + ".beta1"] = {[=](RunConfig& c, auto& k, auto& v) { (c.train.*member).beta1 = parse_double(k, v); },
                          [=](const RunConfig& c) { return fmt_double((c.train.*member).beta1); }};
  f[prefix + ".beta2"] = {[=](RunConfig& c, auto& k, auto& v) { (c.train.*member).beta2 = parse_double(k, v); },
                          [=](const RunConfig& c) { return fmt_double((c.train.*member).beta2); }};
  f[prefix + ".eps"] = {[=](RunConfig& c, auto& k, auto& v) { (c.train.*member).eps = parse_double(k, v); },
                        [=](const RunConfig& c) { return fmt_double((c.train.*member).eps); }};
  f[prefix + ".weight_decay"] = {
      [=](RunConfig& c, auto& k, auto& v) { (c.train.*member).weight_decay = parse_double(k, v); },
      [=](const RunConfig& c) { return fmt_double((c.train.*member).weight_decay); }};
  f[prefix + ".lr_scale"] = {[=](RunConfig& c, auto& k, auto& v) { (c.train.*member).lr_scale = parse_double(k, v); },
                             [=](const RunConfig& c) { return fmt_double((c.train.*member).lr_scale); }};
}

inline const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> f;
    auto num = [&](const std::string& key, auto getter) {
      f[key] = {[=](RunConfig& c, auto& k, auto& v) { getter(c) = parse_double(k, v); },
                [=](const RunConfig& c) { return fmt_double(getter(const_cast<RunConfig&>(c))); }};
    };
    auto uint = [&](const std::string& key, auto getter) {
      f[key] = {[=](RunConfig& c, auto& k, auto& v) {
                  getter(c) = static_cast<std::remove_reference_t<decltype(getter(c))>>(parse_uint(k, v));
                },
                [=](const RunConfig& c) { return std::to_string(getter(const_cast<RunConfig&>(c))); }};
    };
    f["mode"] = {[](RunConfig& c, auto&, auto& v) { c.train.mode = parse_mode(v); },
                 [](const RunConfig& c) { return to_string(c.train.mode); }};
    uint("epochs", [](RunConfig& c) -> std::size_t& { return c.train.epochs; });
    num("base_lr", [](RunConfig& c) -> double& { return c.train.base_lr; });
    num("decay_factor", [](RunConfig& c) -> double& { return c.train.decay_factor; });
    uint("batch_size", [](RunConfig& c) -> std::size_t& { return c.train.batch_size; });
    uint("seed", [](RunConfig& c) -> std::uint64_t& { return c.train.seed; });
    num("alpha", [](RunConfig& c) -> double& { return c.train.weights.alpha; });
    num("beta", [](RunConfig& c) -> double& { return c.train.weights.beta; });
    uint("checkpoint_every", [](RunConfig& c) -> std::size_t& { return c.train.checkpoint_every; });
    uint("sr_warmup_epochs", [](RunConfig& c) -> std::size_t& { return c.train.sr_warmup_epochs; });
    num("sr_warmup_lr", [](RunConfig& c) -> double& { return c.train.sr_warmup_lr; });
    add_adam_fields(f, "sr_optimizer", &TrainConfig::sr_optimizer);
    add_adam_fields(f, "seg_optimizer", &TrainConfig::seg_optimizer);

    f["sr.factor"] = {[](RunConfig& c, auto& k, auto& v) { c.sr.factor = static_cast<int>(parse_uint(k, v)); },
                      [](const RunConfig& c) { return std::to_string(c.sr.factor); }};
    uint("sr.stages", [](RunConfig& c) -> std::size_t& { return c.sr.stages; });
    uint("sr.feat0", [](RunConfig& c) -> std::size_t& { return c.sr.feat0; });
    uint("sr.nr", [](RunConfig& c) -> std::size_t& { return c.sr.nr; });
    f["sr.residual"] = {[](RunConfig& c, auto& k, auto& v) { c.sr.residual = parse_bool(k, v); },
                        [](const RunConfig& c) { return std::string(c.sr.residual ? "true" : "false"); }};

    uint("seg.num_classes", [](RunConfig& c) -> std::size_t& { return c.seg.num_classes; });
    f["seg.encoder_plan"] = {[](RunConfig& c, auto& k, auto& v) { c.seg.encoder_plan = parse_plan(k, v); },
                             [](const RunConfig& c) {
                               std::string s;
                               for (const auto& st : c.seg.encoder_plan)
                                 s += (s.empty() ? "" : ",") + std::to_string(st.depth) + "x" + std::to_string(st.width);
                               return s;
                             }};
    f["seg.ignore_ids"] = {[](RunConfig& c, auto& k, auto& v) {
                             c.seg.ignore_ids.clear();
                             for (const auto& s : split_list(v)) c.seg.ignore_ids.insert(static_cast<std::int32_t>(parse_uint(k, s)));
                           },
                           [](const RunConfig& c) {
                             std::string s;
                             for (auto id : c.seg.ignore_ids) s += (s.empty() ? "" : ",") + std::to_string(id);
                             return s;
                           }};
    f["seg.class_weights"] = {[](RunConfig& c, auto& k, auto& v) {
                                c.seg.class_weights.clear();
                                for (const auto& s : split_list(v)) c.seg.class_weights.push_back(parse_double(k, s));
                              },
                              [](const RunConfig& c) {
                                std::string s;
                                for (double w : c.seg.class_weights) s += (s.empty() ? "" : ",") + fmt_double(w);
                                return s;
                              }};

    f["data.root"] = {[](RunConfig& c, auto&, auto& v) { c.data.root = v; },
                      [](const RunConfig& c) { return c.data.root; }};
    f["data.dataset"] = {[](RunConfig& c, auto&, auto& v) { c.data.dataset = v; },
                         [](const RunConfig& c) { return c.data.dataset; }};
    uint("data.tile", [](RunConfig& c) -> std::size_t& { return c.data.tile; });
    f["data.factor"] = {[](RunConfig& c, auto& k, auto& v) {
                          c.data.degradation.factor = static_cast<int>(parse_uint(k, v));
                        },
                        [](const RunConfig& c) { return std::to_string(c.data.degradation.factor); }};
    num("data.cubic_a", [](RunConfig& c) -> double& { return c.data.degradation.cubic_a; });
    f["data.antialias"] = {[](RunConfig& c, auto& k, auto& v) { c.data.degradation.antialias = parse_bool(k, v); },
                           [](const RunConfig& c) { return std::string(c.data.degradation.antialias ? "true" : "false"); }};
    return f;
  }();
  return table;
}

}  // namespace detail

inline void RunConfig::set(const std::string& key, const std::string& value) {
  if (key == "factor") {  // shorthand for sr.factor + data.factor
    set("sr.factor", value);
    set("data.factor", value);
    return;
  }
  const auto& f = detail::fields();
  auto it = f.find(key);
  if (it == f.end()) throw ConfigError("unknown config key: " + key);
  it->second.set(*this, key, value);
}

inline std::vector<std::string> RunConfig::keys() const {
  std::vector<std::string> k;
  for (const auto& [name, _] : detail::fields()) k.push_back(name);
  return k;
}

/// Canonical form: every key, sorted, one `key = value` per line.
inline std::string RunConfig::to_text() const {
  std::ostringstream os;
  for (const auto& [name, field] : detail::fields()) os << name << " = " << field.get(*this) << '\n';
  return os.str();
}

inline std::string RunConfig::fingerprint() const {
  // data.root is where the data lives, not what the run is; leave it out so
  // a relocated data tree can still resume.
  std::uint64_t h = 1469598103934665603ull;
  std::istringstream lines(to_text());
  std::string line;
  while (std::getline(lines, line)) {
    if (line.rfind("data.root =", 0) == 0) continue;
    for (unsigned char c : line + "\n") {
      h ^= c;
      h *= 1099511628211ull;
    }
  }
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Applies `key = value` lines from text onto cfg.
inline void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& origin = "<text>") {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
    try {
      cfg.set(detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

inline RunConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  RunConfig cfg;
  apply_config_text(cfg, ss.str(), path);
  return cfg;
}

/// Applies `key=value` override strings.
inline void apply_overrides(RunConfig& cfg, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + o + "' is not key=value");
    cfg.set(detail::trim(o.substr(0, eq)), detail::trim(o.substr(eq + 1)));
  }
}

}  // namespace sr2seg
