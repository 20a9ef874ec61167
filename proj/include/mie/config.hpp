// SPDX-License-Identifier: Apache-2.0
//
// Flat `key = value` run configuration with dotted sections. Unknown keys are
// errors. Every field has a default, so an empty file is a valid config.

#ifndef MIE_CONFIG_HPP
#define MIE_CONFIG_HPP

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mie/data.hpp"
#include "mie/errors.hpp"
#include "mie/eval.hpp"
#include "mie/gradmod.hpp"
#include "mie/trainer.hpp"

namespace mie {

inline constexpr const char* kArtifactVersion = "mie 1.0.0";

namespace cfg {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_list(std::string_view s, char sep = ',') {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    const std::string item = trim(s.substr(start, pos == std::string_view::npos ? s.npos : pos - start));
    if (!item.empty()) out.push_back(item);
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out)) {
    throw ValidationError(key + ": expected a number, got '" + v + "'");
  }
  return out;
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ValidationError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "on" || v == "yes" || v == "1") return true;
  if (v == "false" || v == "off" || v == "no" || v == "0") return false;
  throw ValidationError(key + ": expected on/off, got '" + v + "'");
}

inline std::vector<double> parse_doubles(const std::string& key, const std::string& v) {
  std::vector<double> out;
  for (const auto& item : split_list(v)) out.push_back(parse_double(key, item));
  if (out.empty()) throw ValidationError(key + ": empty list");
  return out;
}

inline std::string format_double(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  // Prefer the shortest representation that round-trips.
  for (int prec = 1; prec <= 17; ++prec) {
    char shortest[64];
    std::snprintf(shortest, sizeof shortest, "%.*g", prec, x);
    if (std::strtod(shortest, nullptr) == x) return shortest;
  }
  return buf;
}

template <class T, class F>
std::string join(const std::vector<T>& xs, F&& fmt, const char* sep = ",") {
  std::string s;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) s += sep;
    s += fmt(xs[i]);
  }
  return s;
}

/// Parses "off" or a GM scope: "head_only" or a fraction in [0,1].
/// Returns false for "off".
inline bool parse_scope(const std::string& key, const std::string& v, GmScope& out) {
  if (v == "off") return false;
  if (v == "head_only" || v == "head") {
    out = GmScope::head_only();
    return true;
  }
  out = GmScope::deep_fraction(parse_double(key, v));
  return true;
}

/// "full" (every ordered pair) or '+'-separated "k>j" pairs, 1-based:
/// "1>2" lets modality 1's matrices modify modality 2 and nothing else.
inline std::vector<std::vector<bool>> parse_mask(const std::string& key, const std::string& v, std::size_t m) {
  if (v == "full") return {};
  std::vector<std::vector<bool>> mask(m, std::vector<bool>(m, false));
  if (v == "none") return mask;
  for (const auto& pair : split_list(v, '+')) {
    const auto gt = pair.find('>');
    if (gt == std::string::npos) throw ValidationError(key + ": expected pairs like 1>2, got '" + pair + "'");
    const auto k = parse_uint(key, trim(pair.substr(0, gt)));
    const auto j = parse_uint(key, trim(pair.substr(gt + 1)));
    if (k == 0 || j == 0 || k > m || j > m) throw ValidationError(key + ": modality index out of range in '" + pair + "'");
    mask[k - 1][j - 1] = true;
  }
  return mask;
}

}  // namespace cfg

struct LandscapeConfig {
  double radius = 1.0;
  std::size_t points = 41;
  std::size_t modality = 1;  // 1-based
  std::size_t samples = 256;
  Split split = Split::train;
};

/// Fully resolved run configuration.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string data_path = "data.mmd";
  SyntheticSpec data;
  TrainConfig train;
  std::string gm_scope_text = "head_only";
  std::string gm_mask_text = "full";
  std::string output_dir = "run";
  LandscapeConfig landscape;

  /// Canonical `key = value` text; parsing it back yields the same config.
  std::string to_text() const {
    using cfg::format_double;
    auto dbl = [](double x) { return format_double(x); };
    auto uns = [](std::size_t x) { return std::to_string(x); };
    std::ostringstream os;
    os << "seed = " << seed << "\n";
    os << "data.path = " << data_path << "\n";
    os << "data.n = " << data.n << "\n";
    os << "data.c = " << data.num_classes << "\n";
    os << "data.dims = " << cfg::join(data.dims, uns) << "\n";
    os << "data.snr = " << cfg::join(data.snr, dbl) << "\n";
    os << "data.splits = " << format_double(data.train_fraction) << "," << format_double(data.val_fraction) << ","
       << format_double(data.test_fraction) << "\n";
    os << "model.encoder_hidden = " << train.arch.encoder_hidden << "\n";
    os << "model.feature_dim = " << train.arch.feature_dim << "\n";
    os << "train.out_iters = " << train.out_iters << "\n";
    os << "train.inner_iters = " << train.inner_iters << "\n";
    os << "train.batch_size = " << train.batch_size << "\n";
    os << "train.lr = " << cfg::join(train.lr, dbl) << "\n";
    os << "train.momentum = " << format_double(train.momentum) << "\n";
    os << "train.weight_decay = " << format_double(train.weight_decay) << "\n";
    os << "train.patience = " << train.patience << "\n";
    os << "train.eval_split = " << split_name(train.eval_split) << "\n";
    os << "sam.enabled = " << (train.ablation.sam_on ? "on" : "off") << "\n";
    os << "sam.rho = " << cfg::join(train.rho, dbl) << "\n";
    os << "sam.zero_grad_threshold = " << format_double(train.zero_grad_threshold) << "\n";
    os << "gm.enabled = " << (train.ablation.gm_on ? "on" : "off") << "\n";
    os << "gm.tau = " << format_double(train.gm.tau) << "\n";
    os << "gm.scope = " << gm_scope_text << "\n";
    os << "gm.mask = " << gm_mask_text << "\n";
    os << "gm.degenerate_tolerance = " << format_double(train.gm.degenerate_tolerance) << "\n";
    os << "fusion = " << fusion_name(train.fusion) << "\n";
    os << "output.dir = " << output_dir << "\n";
    os << "landscape.radius = " << format_double(landscape.radius) << "\n";
    os << "landscape.points = " << landscape.points << "\n";
    os << "landscape.modality = " << landscape.modality << "\n";
    os << "landscape.samples = " << landscape.samples << "\n";
    os << "landscape.split = " << split_name(landscape.split) << "\n";
    return os.str();
  }

  std::string label() const { return run_label(train.ablation); }
};

namespace cfg {

inline Split parse_split(const std::string& key, const std::string& v) {
  if (v == "train") return Split::train;
  if (v == "val") return Split::val;
  if (v == "test") return Split::test;
  throw ValidationError(key + ": expected train, val or test, got '" + v + "'");
}

/// Reads `key = value` lines; '#' starts a comment. Duplicate keys are errors.
inline std::vector<std::pair<std::string, std::string>> read_pairs(const std::string& text, const std::string& origin) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  std::map<std::string, std::size_t> seen;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ValidationError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    std::string key = trim(std::string_view(t).substr(0, eq));
    std::string value = trim(std::string_view(t).substr(eq + 1));
    if (key.empty()) throw ValidationError(origin + ":" + std::to_string(lineno) + ": empty key");
    if (auto [it, fresh] = seen.emplace(key, lineno); !fresh) {
      throw ValidationError(origin + ":" + std::to_string(lineno) + ": duplicate key '" + key + "' (first on line " +
                            std::to_string(it->second) + ")");
    }
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

inline std::string read_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot read config file " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace cfg

inline RunConfig parse_run_config(const std::string& text, const std::string& origin = "<config>") {
  RunConfig rc;
  using Setter = std::function<void(const std::string&, const std::string&)>;
  const std::map<std::string, Setter> setters = {
      {"seed", [&](auto& k, auto& v) { rc.seed = cfg::parse_uint(k, v); }},
      {"data.path", [&](auto&, auto& v) { rc.data_path = v; }},
      {"data.n", [&](auto& k, auto& v) { rc.data.n = cfg::parse_uint(k, v); }},
      {"data.c", [&](auto& k, auto& v) { rc.data.num_classes = cfg::parse_uint(k, v); }},
      {"data.dims",
       [&](auto& k, auto& v) {
         rc.data.dims.clear();
         for (const auto& item : cfg::split_list(v)) rc.data.dims.push_back(cfg::parse_uint(k, item));
       }},
      {"data.snr", [&](auto& k, auto& v) { rc.data.snr = cfg::parse_doubles(k, v); }},
      {"data.splits",
       [&](auto& k, auto& v) {
         const auto f = cfg::parse_doubles(k, v);
         if (f.size() != 3) throw ValidationError(k + ": expected three fractions train,val,test");
         rc.data.train_fraction = f[0];
         rc.data.val_fraction = f[1];
         rc.data.test_fraction = f[2];
       }},
      {"model.encoder_hidden", [&](auto& k, auto& v) { rc.train.arch.encoder_hidden = cfg::parse_uint(k, v); }},
      {"model.feature_dim", [&](auto& k, auto& v) { rc.train.arch.feature_dim = cfg::parse_uint(k, v); }},
      {"train.out_iters", [&](auto& k, auto& v) { rc.train.out_iters = cfg::parse_uint(k, v); }},
      {"train.inner_iters", [&](auto& k, auto& v) { rc.train.inner_iters = cfg::parse_uint(k, v); }},
      {"train.batch_size", [&](auto& k, auto& v) { rc.train.batch_size = cfg::parse_uint(k, v); }},
      {"train.lr", [&](auto& k, auto& v) { rc.train.lr = cfg::parse_doubles(k, v); }},
      {"train.momentum", [&](auto& k, auto& v) { rc.train.momentum = cfg::parse_double(k, v); }},
      {"train.weight_decay", [&](auto& k, auto& v) { rc.train.weight_decay = cfg::parse_double(k, v); }},
      {"train.patience", [&](auto& k, auto& v) { rc.train.patience = cfg::parse_uint(k, v); }},
      {"train.eval_split", [&](auto& k, auto& v) { rc.train.eval_split = cfg::parse_split(k, v); }},
      {"sam.enabled", [&](auto& k, auto& v) { rc.train.ablation.sam_on = cfg::parse_bool(k, v); }},
      {"sam.rho", [&](auto& k, auto& v) { rc.train.rho = cfg::parse_doubles(k, v); }},
      {"sam.zero_grad_threshold", [&](auto& k, auto& v) { rc.train.zero_grad_threshold = cfg::parse_double(k, v); }},
      {"gm.enabled", [&](auto& k, auto& v) { rc.train.ablation.gm_on = cfg::parse_bool(k, v); }},
      {"gm.tau", [&](auto& k, auto& v) { rc.train.gm.tau = cfg::parse_double(k, v); }},
      {"gm.scope", [&](auto&, auto& v) { rc.gm_scope_text = v; }},
      {"gm.mask", [&](auto&, auto& v) { rc.gm_mask_text = v; }},
      {"gm.degenerate_tolerance", [&](auto& k, auto& v) { rc.train.gm.degenerate_tolerance = cfg::parse_double(k, v); }},
      {"fusion",
       [&](auto& k, auto& v) {
         if (v == "average") rc.train.fusion = Fusion::average;
         else if (v == "weighted") rc.train.fusion = Fusion::weighted;
         else throw ValidationError(k + ": expected average or weighted, got '" + v + "'");
       }},
      {"output.dir", [&](auto&, auto& v) { rc.output_dir = v; }},
      {"landscape.radius", [&](auto& k, auto& v) { rc.landscape.radius = cfg::parse_double(k, v); }},
      {"landscape.points", [&](auto& k, auto& v) { rc.landscape.points = cfg::parse_uint(k, v); }},
      {"landscape.modality", [&](auto& k, auto& v) { rc.landscape.modality = cfg::parse_uint(k, v); }},
      {"landscape.samples", [&](auto& k, auto& v) { rc.landscape.samples = cfg::parse_uint(k, v); }},
      {"landscape.split", [&](auto& k, auto& v) { rc.landscape.split = cfg::parse_split(k, v); }},
  };
  for (const auto& [key, value] : cfg::read_pairs(text, origin)) {
    const auto it = setters.find(key);
    if (it == setters.end()) throw ValidationError(origin + ": unknown key '" + key + "'");
    it->second(key, value);
  }

  const std::size_t m = rc.data.dims.size();
  if (rc.gm_scope_text == "off") {
    rc.train.ablation.gm_on = false;
  } else {
    cfg::parse_scope("gm.scope", rc.gm_scope_text, rc.train.gm.scope);
  }
  rc.train.ablation.gm_mask = cfg::parse_mask("gm.mask", rc.gm_mask_text, m);
  rc.data.seed = rc.seed;
  rc.train.seed = rc.seed;
  rc.data.validate();
  rc.train.validate(m);
  if (rc.train.arch.encoder_hidden == 0 || rc.train.arch.feature_dim == 0)
    throw ValidationError("model: layer widths must be positive");
  if (rc.landscape.points % 2 == 0) throw ValidationError("landscape.points must be odd");
  if (rc.landscape.modality == 0 || rc.landscape.modality > m)
    throw ValidationError("landscape.modality must name an existing modality (1-based)");
  if (rc.landscape.samples == 0) throw ValidationError("landscape.samples must be positive");
  return rc;
}

inline RunConfig load_run_config(const std::string& path) { return parse_run_config(cfg::read_file(path), path); }

inline void override_seed(RunConfig& rc, std::uint64_t seed) {
  rc.seed = seed;
  rc.data.seed = seed;
  rc.train.seed = seed;
}

// ---------------------------------------------------------------------------
// Ablation grid files: the same `key = value` syntax with keys
//   grid.seeds    = 1,2,3,4,5            (required, non-empty)
//   grid.switches = off/off, on/off, off/on, on/on   (sam/gm)
//   grid.tau      = 1e-5, 1e-3, 0.1
//   grid.rho      = 1e-10, 0.05
//   grid.scope    = head_only, 0.3, 0.5, 1.0, off
//   grid.mask     = full, 1>2, 2>1
// The variants are the Cartesian product of the axes that are present.

struct GridSpec {
  std::vector<std::uint64_t> seeds;
  std::vector<std::pair<bool, bool>> switches;
  std::vector<double> tau;
  std::vector<double> rho;
  std::vector<std::string> scope;
  std::vector<std::string> mask;
};

inline GridSpec parse_grid(const std::string& text, const std::string& origin = "<grid>") {
  GridSpec g;
  bool has_seeds = false;
  for (const auto& [key, value] : cfg::read_pairs(text, origin)) {
    const auto items = cfg::split_list(value);
    if (key == "grid.seeds") {
      has_seeds = true;
      for (const auto& s : items) g.seeds.push_back(cfg::parse_uint(key, s));
    } else if (key == "grid.switches") {
      for (const auto& s : items) {
        const auto parts = cfg::split_list(s, '/');
        if (parts.size() != 2) throw ValidationError(key + ": expected sam/gm pairs like on/off, got '" + s + "'");
        g.switches.emplace_back(cfg::parse_bool(key, parts[0]), cfg::parse_bool(key, parts[1]));
      }
    } else if (key == "grid.tau") {
      for (const auto& s : items) g.tau.push_back(cfg::parse_double(key, s));
    } else if (key == "grid.rho") {
      for (const auto& s : items) g.rho.push_back(cfg::parse_double(key, s));
    } else if (key == "grid.scope") {
      g.scope = items;
    } else if (key == "grid.mask") {
      g.mask = items;
    } else {
      throw ValidationError(origin + ": unknown key '" + key + "'");
    }
  }
  if (!has_seeds || g.seeds.empty()) throw ValidationError(origin + ": grid.seeds must list at least one seed");
  return g;
}

/// Expands a grid over a base configuration.
inline AblationGrid expand_grid(const RunConfig& base, const GridSpec& g) {
  AblationGrid grid;
  grid.seeds = g.seeds;
  struct Partial {
    std::string label;
    TrainConfig config;
  };
  std::vector<Partial> acc{{"", base.train}};
  auto extend = [&](auto&& values, auto&& apply) {
    if (values.empty()) return;
    std::vector<Partial> next;
    for (const auto& p : acc) {
      for (const auto& v : values) {
        Partial q = p;
        const std::string piece = apply(q.config, v);
        q.label = q.label.empty() ? piece : q.label + "," + piece;
        next.push_back(std::move(q));
      }
    }
    acc = std::move(next);
  };
  const std::size_t m = base.data.dims.size();
  extend(g.switches, [](TrainConfig& c, const std::pair<bool, bool>& s) {
    c.ablation.sam_on = s.first;
    c.ablation.gm_on = s.second;
    return run_label(c.ablation);
  });
  extend(g.tau, [](TrainConfig& c, double t) {
    c.gm.tau = t;
    return "tau=" + cfg::format_double(t);
  });
  extend(g.rho, [](TrainConfig& c, double r) {
    c.rho = {r};
    return "rho=" + cfg::format_double(r);
  });
  extend(g.scope, [](TrainConfig& c, const std::string& s) {
    GmScope scope;
    if (cfg::parse_scope("grid.scope", s, scope)) {
      c.gm.scope = scope;
      c.ablation.gm_on = true;
    } else {
      c.ablation.gm_on = false;
    }
    return "scope=" + s;
  });
  extend(g.mask, [m](TrainConfig& c, const std::string& s) {
    c.ablation.gm_mask = cfg::parse_mask("grid.mask", s, m);
    return "mask=" + s;
  });
  for (auto& p : acc) {
    p.config.validate(m);
    grid.variants.push_back({p.label.empty() ? base.label() : p.label, std::move(p.config)});
  }
  return grid;
}

}  // namespace mie

#endif  // MIE_CONFIG_HPP
