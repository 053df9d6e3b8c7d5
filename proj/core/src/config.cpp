#include "exmap/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <functional>
#include <sstream>

#include "exmap/error.hpp"
#include "exmap/idx.hpp"

namespace exmap::config {
namespace {

// Thrown by the value parsers; turned into a line-anchored kConfig error.
struct BadValue {
  std::string why;
};

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = s.find(',', start);
    out.push_back(trim(s.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  if (out.size() == 1 && out[0].empty()) out.clear();
  return out;
}

double to_double(std::string_view s) {
  double v = 0.0;
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || end != s.data() + s.size() || s.empty()) throw BadValue{"expected a number, got '" + std::string(s) + "'"};
  return v;
}

std::uint64_t to_u64(std::string_view s) {
  std::uint64_t v = 0;
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || end != s.data() + s.size() || s.empty()) {
    throw BadValue{"expected a non-negative integer, got '" + std::string(s) + "'"};
  }
  return v;
}

std::string fmt(double v) {
  char buf[32];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

template <typename T, typename F>
std::string join(const std::vector<T>& values, F&& f) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ", ";
    out += f(values[i]);
  }
  return out;
}

template <typename Parse>
auto parse_enum(std::string_view s, Parse&& parse) {
  try {
    return parse(s);
  } catch (const Error& e) {
    throw BadValue{e.what()};
  }
}

std::string_view rule_name(lrp::Rule r) { return r == lrp::Rule::kEpsilon ? "epsilon" : "gamma"; }
lrp::Rule parse_rule(std::string_view s) {
  if (s == "epsilon") return lrp::Rule::kEpsilon;
  if (s == "gamma") return lrp::Rule::kGamma;
  throw BadValue{"expected epsilon|gamma, got '" + std::string(s) + "'"};
}

std::string_view solver_name(cluster::EigenSolver s) {
  switch (s) {
    case cluster::EigenSolver::kAuto: return "auto";
    case cluster::EigenSolver::kJacobi: return "jacobi";
    case cluster::EigenSolver::kTridiagonal: return "lapack";
  }
  return "?";
}
cluster::EigenSolver parse_solver(std::string_view s) {
  if (s == "auto") return cluster::EigenSolver::kAuto;
  if (s == "jacobi") return cluster::EigenSolver::kJacobi;
  if (s == "lapack") return cluster::EigenSolver::kTridiagonal;
  throw BadValue{"expected auto|jacobi|lapack, got '" + std::string(s) + "'"};
}

struct Key {
  std::string_view section;
  std::string_view name;
  std::function<void(PipelineConfig&, std::string_view)> set;
  std::function<std::string(const PipelineConfig&)> get;
};

std::string opt_corr(const std::optional<double>& v) { return v ? fmt(*v) : "same"; }
std::optional<double> parse_opt_corr(std::string_view s) {
  if (s == "same") return std::nullopt;
  return to_double(s);
}

const std::vector<Key>& keys() {
  using C = PipelineConfig;
  using V = std::string_view;
  static const std::vector<Key> table = {
      {"data", "shortcuts",
       [](C& c, V v) {
         c.data.shortcuts.clear();
         for (const auto& s : split_list(v)) c.data.shortcuts.push_back(parse_enum(s, data::parse_shortcut));
       },
       [](const C& c) { return join(c.data.shortcuts, [](auto k) { return std::string(data::shortcut_name(k)); }); }},
      {"data", "correlation", [](C& c, V v) { c.data.correlation = to_double(v); },
       [](const C& c) { return fmt(c.data.correlation); }},
      {"data", "val_correlation", [](C& c, V v) { c.data.val_correlation = parse_opt_corr(v); },
       [](const C& c) { return opt_corr(c.data.val_correlation); }},
      {"data", "test_correlation", [](C& c, V v) { c.data.test_correlation = parse_opt_corr(v); },
       [](const C& c) { return opt_corr(c.data.test_correlation); }},
      {"data", "train_size", [](C& c, V v) { c.data.train_size = to_u64(v); },
       [](const C& c) { return std::to_string(c.data.train_size); }},
      {"data", "val_size", [](C& c, V v) { c.data.val_size = to_u64(v); },
       [](const C& c) { return std::to_string(c.data.val_size); }},
      {"data", "test_size", [](C& c, V v) { c.data.test_size = to_u64(v); },
       [](const C& c) { return std::to_string(c.data.test_size); }},
      {"data", "side", [](C& c, V v) { c.data.side = to_u64(v); }, [](const C& c) { return std::to_string(c.data.side); }},
      {"data", "noise_sigma", [](C& c, V v) { c.data.noise_sigma = to_double(v); },
       [](const C& c) { return fmt(c.data.noise_sigma); }},
      {"data", "core_noise", [](C& c, V v) { c.data.core_noise = to_double(v); },
       [](const C& c) { return fmt(c.data.core_noise); }},

      {"train", "learning_rate", [](C& c, V v) { c.train.learning_rate = to_double(v); },
       [](const C& c) { return fmt(c.train.learning_rate); }},
      {"train", "weight_decay", [](C& c, V v) { c.train.weight_decay = to_double(v); },
       [](const C& c) { return fmt(c.train.weight_decay); }},
      {"train", "batch_size", [](C& c, V v) { c.train.batch_size = to_u64(v); },
       [](const C& c) { return std::to_string(c.train.batch_size); }},
      {"train", "epochs", [](C& c, V v) { c.train.epochs = to_u64(v); },
       [](const C& c) { return std::to_string(c.train.epochs); }},
      {"train", "schedule",
       [](C& c, V v) {
         if (v == "cosine") c.train.schedule = nn::LrSchedule::kCosine;
         else if (v == "constant") c.train.schedule = nn::LrSchedule::kConstant;
         else throw BadValue{"expected cosine|constant, got '" + std::string(v) + "'"};
       },
       [](const C& c) { return std::string(c.train.schedule == nn::LrSchedule::kCosine ? "cosine" : "constant"); }},

      {"lrp", "epsilon", [](C& c, V v) { c.lrp.epsilon = to_double(v); }, [](const C& c) { return fmt(c.lrp.epsilon); }},
      {"lrp", "gamma", [](C& c, V v) { c.lrp.gamma = to_double(v); }, [](const C& c) { return fmt(c.lrp.gamma); }},
      {"lrp", "dense_rule", [](C& c, V v) { c.lrp.dense_rule = parse_rule(v); },
       [](const C& c) { return std::string(rule_name(c.lrp.dense_rule)); }},
      {"lrp", "conv_rule", [](C& c, V v) { c.lrp.conv_rule = parse_rule(v); },
       [](const C& c) { return std::string(rule_name(c.lrp.conv_rule)); }},
      {"lrp", "target",
       [](C& c, V v) {
         if (v == "predicted") c.lrp.target_policy = lrp::TargetPolicy::kPredicted;
         else if (v == "given") c.lrp.target_policy = lrp::TargetPolicy::kGiven;
         else throw BadValue{"expected predicted|given, got '" + std::string(v) + "'"};
       },
       [](const C& c) {
         return std::string(c.lrp.target_policy == lrp::TargetPolicy::kPredicted ? "predicted" : "given");
       }},
      {"lrp", "downsize",
       [](C& c, V v) {
         if (v == "none") c.lrp.downsize.reset();
         else c.lrp.downsize = to_u64(v);
       },
       [](const C& c) { return c.lrp.downsize ? std::to_string(*c.lrp.downsize) : std::string("none"); }},

      {"cluster", "method",
       [](C& c, V v) {
         if (v == "spectral") c.cluster.method = cluster::Method::kSpectral;
         else if (v == "kmeans") c.cluster.method = cluster::Method::kKMeans;
         else throw BadValue{"expected spectral|kmeans, got '" + std::string(v) + "'"};
       },
       [](const C& c) { return std::string(cluster::method_name(c.cluster.method)); }},
      {"cluster", "kmeans_k", [](C& c, V v) { c.cluster.kmeans_k = to_u64(v); },
       [](const C& c) { return std::to_string(c.cluster.kmeans_k); }},
      {"cluster", "max_eigs", [](C& c, V v) { c.cluster.spectral.max_eigs = to_u64(v); },
       [](const C& c) { return std::to_string(c.cluster.spectral.max_eigs); }},
      {"cluster", "solver", [](C& c, V v) { c.cluster.spectral.solver = parse_solver(v); },
       [](const C& c) { return std::string(solver_name(c.cluster.spectral.solver)); }},

      {"pseudo", "source", [](C& c, V v) { c.source = parse_enum(v, pseudo::parse_source); },
       [](const C& c) { return std::string(pseudo::source_name(c.source)); }},

      {"retrain", "strategy", [](C& c, V v) { c.strategy = parse_enum(v, parse_strategy); },
       [](const C& c) { return std::string(strategy_name(c.strategy)); }},
      {"retrain", "l1_strengths",
       [](C& c, V v) {
         c.dfr.l1_strengths.clear();
         for (const auto& s : split_list(v)) c.dfr.l1_strengths.push_back(to_double(s));
       },
       [](const C& c) { return join(c.dfr.l1_strengths, [](double x) { return fmt(x); }); }},
      {"retrain", "sweep_splits", [](C& c, V v) { c.dfr.n_sweep_splits = to_u64(v); },
       [](const C& c) { return std::to_string(c.dfr.n_sweep_splits); }},
      {"retrain", "final_subsamples", [](C& c, V v) { c.dfr.n_final_subsamples = to_u64(v); },
       [](const C& c) { return std::to_string(c.dfr.n_final_subsamples); }},
      {"retrain", "jtt_id_epochs",
       [](C& c, V v) {
         c.jtt.id_epochs.clear();
         for (const auto& s : split_list(v)) c.jtt.id_epochs.push_back(to_u64(s));
       },
       [](const C& c) { return join(c.jtt.id_epochs, [](std::size_t x) { return std::to_string(x); }); }},
      {"retrain", "jtt_upweights",
       [](C& c, V v) {
         c.jtt.upweights.clear();
         for (const auto& s : split_list(v)) c.jtt.upweights.push_back(to_double(s));
       },
       [](const C& c) { return join(c.jtt.upweights, [](double x) { return fmt(x); }); }},
      {"retrain", "jtt_retrain_epochs", [](C& c, V v) { c.jtt.retrain_epochs = to_u64(v); },
       [](const C& c) { return std::to_string(c.jtt.retrain_epochs); }},

      {"run", "seeds",
       [](C& c, V v) {
         c.seeds.clear();
         for (const auto& s : split_list(v)) c.seeds.push_back(to_u64(s));
       },
       [](const C& c) { return join(c.seeds, [](std::uint64_t x) { return std::to_string(x); }); }},
      {"run", "output",
       [](C& c, V v) {
         if (v.empty()) throw BadValue{"output directory is empty"};
         c.output_dir = std::string(v);
       },
       [](const C& c) { return c.output_dir.string(); }},
  };
  return table;
}

const Key* find_key(std::string_view section, std::string_view name) {
  for (const auto& k : keys()) {
    if (k.section == section && k.name == name) return &k;
  }
  return nullptr;
}

bool known_section(std::string_view section) {
  for (const auto& k : keys()) {
    if (k.section == section) return true;
  }
  return false;
}

template <typename F>
void checked(std::string_view section, F&& f) {
  try {
    f();
  } catch (const Error& e) {
    throw Error(ErrorKind::kConfig, "[" + std::string(section) + "] " + e.what());
  }
}

}  // namespace

std::string_view strategy_name(Strategy strategy) {
  switch (strategy) {
    case Strategy::kDfr: return "dfr";
    case Strategy::kJtt: return "jtt";
    case Strategy::kNone: return "none";
  }
  return "?";
}

Strategy parse_strategy(std::string_view name) {
  for (Strategy s : {Strategy::kDfr, Strategy::kJtt, Strategy::kNone}) {
    if (name == strategy_name(s)) return s;
  }
  throw Error(ErrorKind::kInvalidArgument, "unknown strategy '" + std::string(name) + "' (expected dfr|jtt|none)");
}

void PipelineConfig::validate() const {
  checked("data", [&] { data.validate(); });
  checked("train", [&] { train.validate(); });
  checked("lrp", [&] { lrp.validate(); });
  checked("cluster", [&] {
    if (cluster.kmeans_k < 1) throw Error(ErrorKind::kInvalidArgument, "kmeans_k must be >= 1");
    if (cluster.spectral.max_eigs < 2) throw Error(ErrorKind::kInvalidArgument, "max_eigs must be >= 2");
  });
  checked("retrain", [&] {
    dfr.validate();
    jtt.validate();
  });
  checked("run", [&] {
    if (seeds.empty()) throw Error(ErrorKind::kInvalidArgument, "seeds must list at least one seed");
    if (output_dir.empty()) throw Error(ErrorKind::kInvalidArgument, "output directory is empty");
  });
}

PipelineConfig PipelineConfig::for_seed(std::uint64_t seed) const {
  PipelineConfig c = *this;
  c.data.seed = seed;
  c.train.seed = seed;
  c.cluster.seed = seed;
  c.dfr.seed = seed;
  c.jtt.seed = seed;
  c.seeds = {seed};
  return c;
}

PipelineConfig parse_config(std::string_view text) {
  PipelineConfig c;
  std::istringstream in{std::string(text)};
  std::string raw, section;
  std::vector<std::string> seen;
  std::size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const auto fail = [&](const std::string& why) {
      return Error(ErrorKind::kConfig, "line " + std::to_string(lineno) + ": " + why);
    };
    const auto hash = raw.find('#');
    const std::string line = trim(std::string_view(raw).substr(0, hash));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw fail("unterminated section header");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      if (!known_section(section)) throw fail("unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw fail("expected 'key = value'");
    if (section.empty()) throw fail("key outside of any section");
    const std::string name = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    const Key* key = find_key(section, name);
    if (!key) throw fail("unknown key '" + name + "' in [" + section + "]");
    const std::string full = section + "." + name;
    if (std::find(seen.begin(), seen.end(), full) != seen.end()) throw fail("duplicate key '" + full + "'");
    seen.push_back(full);
    try {
      key->set(c, value);
    } catch (const BadValue& e) {
      throw fail(full + ": " + e.why);
    }
  }
  try {
    c.validate();
  } catch (const Error& e) {
    throw Error(ErrorKind::kConfig, std::string("after line ") + std::to_string(lineno) + ": " + e.what());
  }
  return c;
}

void apply_override(PipelineConfig& config, std::string_view assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string_view::npos || dot == std::string_view::npos || dot > eq) {
    throw Error(ErrorKind::kConfig, "override '" + std::string(assignment) + "': expected section.key=value");
  }
  const std::string section = trim(assignment.substr(0, dot));
  const std::string name = trim(assignment.substr(dot + 1, eq - dot - 1));
  const Key* key = find_key(section, name);
  if (!key) throw Error(ErrorKind::kConfig, "override: unknown key '" + section + "." + name + "'");
  try {
    key->set(config, trim(assignment.substr(eq + 1)));
  } catch (const BadValue& e) {
    throw Error(ErrorKind::kConfig, "override " + section + "." + name + ": " + e.why);
  }
  config.validate();
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = io::read_text(path);
  } catch (const Error& e) {
    throw Error(ErrorKind::kConfig, "cannot read config " + path.string() + ": " + e.what());
  }
  PipelineConfig c;
  try {
    c = parse_config(text);
  } catch (const Error& e) {
    throw Error(ErrorKind::kConfig, path.string() + " " + e.what());
  }
  if (const char* out = std::getenv("EXMAP_OUT"); out && *out) c.output_dir = out;
  return c;
}

std::string format_config(const PipelineConfig& config) {
  std::string out;
  std::string_view section;
  for (const auto& k : keys()) {
    if (k.section != section) {
      if (!section.empty()) out += "\n";
      section = k.section;
      out += "[" + std::string(section) + "]\n";
    }
    out += std::string(k.name) + " = " + k.get(config) + "\n";
  }
  return out;
}

}  // namespace exmap::config
