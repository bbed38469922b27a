#include "gfnvi/harness/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include <fmt/format.h>

#include "gfnvi/error.hpp"

namespace gfnvi {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad(const std::string& key, const std::string& value, const std::string& why) {
  throw Error(ErrorCode::ConfigError, fmt::format("{} = '{}': {}", key, value, why));
}

double toDouble(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) bad(key, v, "not a number");
    return d;
  } catch (const std::logic_error&) {
    bad(key, v, "not a number");
  }
}

long long toInt(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size()) bad(key, v, "not an integer");
  return out;
}

std::uint64_t toUnsigned(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size()) bad(key, v, "not a non-negative integer");
  return out;
}

bool toBool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  bad(key, v, "not a boolean");
}

std::vector<int> toWidths(const std::string& key, const std::string& v) {
  std::vector<int> out;
  if (v == "none" || v.empty()) return out;
  for (const auto& part : splitList(v)) {
    const auto w = toInt(key, part);
    if (w < 1) bad(key, v, "widths must be positive");
    out.push_back(static_cast<int>(w));
  }
  return out;
}

std::string widthsText(const std::vector<int>& w) {
  if (w.empty()) return "none";
  std::string s;
  for (std::size_t i = 0; i < w.size(); ++i) s += (i ? "," : "") + std::to_string(w[i]);
  return s;
}

std::string num(double v) { return fmt::format("{}", v); }

OptimizerConfig::Method toMethod(const std::string& key, const std::string& v) {
  if (v == "sgd") return OptimizerConfig::Method::Sgd;
  if (v == "adam") return OptimizerConfig::Method::Adam;
  bad(key, v, "expected sgd or adam");
}

std::string methodText(OptimizerConfig::Method m) { return m == OptimizerConfig::Method::Sgd ? "sgd" : "adam"; }

std::string paramModeText(ParamMode m) {
  switch (m) {
    case ParamMode::Distinct: return "distinct";
    case ParamMode::SharedBackward: return "shared";
    case ParamMode::FixedBackward: return "fixed";
  }
  return "?";
}

struct Key {
  std::string name;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class F>
auto wrap(F f) {
  return [f](RunConfig& c, const std::string& k, const std::string& v) {
    try {
      f(c, k, v);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::ConfigError) throw;
      bad(k, v, e.what());
    }
  };
}

const std::vector<Key>& keys() {
  static const std::vector<Key> table = [] {
    std::vector<Key> t;
    auto add = [&](std::string name, auto set, auto get) { t.push_back({std::move(name), wrap(set), get}); };
    using C = RunConfig;
    using S = const std::string&;

    add("seed", [](C& c, S k, S v) { c.seed = toUnsigned(k, v); }, [](const C& c) { return std::to_string(c.seed); });
    add("steps", [](C& c, S k, S v) { c.steps = static_cast<int>(toInt(k, v)); },
        [](const C& c) { return std::to_string(c.steps); });
    add("eval.every", [](C& c, S k, S v) { c.evalEvery = static_cast<int>(toInt(k, v)); },
        [](const C& c) { return std::to_string(c.evalEvery); });
    add("eval.elbo_samples", [](C& c, S k, S v) { c.elboSamples = static_cast<int>(toInt(k, v)); },
        [](const C& c) { return std::to_string(c.elboSamples); });
    add("eval.nll_samples", [](C& c, S k, S v) { c.nllSamples = static_cast<int>(toInt(k, v)); },
        [](const C& c) { return std::to_string(c.nllSamples); });
    add("eval.oracle", [](C& c, S k, S v) {
          if (v != "auto" && v != "true" && v != "false") bad(k, v, "expected auto, true or false");
          c.oracle = v;
        },
        [](const C& c) { return c.oracle; });
    add("output.dir", [](C& c, S, S v) { c.outputDir = v; }, [](const C& c) { return c.outputDir; });
    add("output.record_wall_time", [](C& c, S k, S v) { c.recordWallTime = toBool(k, v); },
        [](const C& c) { return std::string(c.recordWallTime ? "true" : "false"); });

    add("target.kind", [](C& c, S k, S v) {
          if (v != "density" && v != "ising" && v != "tabular" && v != "ebm") bad(k, v, "unknown target kind");
          c.target.kind = v;
        },
        [](const C& c) { return c.target.kind; });
    add("target.density.name", [](C& c, S, S v) { c.target.density.name = v; },
        [](const C& c) { return c.target.density.name; });
    add("target.density.bits", [](C& c, S k, S v) { c.target.density.bits = static_cast<int>(toInt(k, v)); },
        [](const C& c) { return std::to_string(c.target.density.bits); });
    add("target.density.sigma", [](C& c, S k, S v) { c.target.density.sigma = toDouble(k, v); },
        [](const C& c) { return num(c.target.density.sigma); });
    add("target.density.extent", [](C& c, S k, S v) { c.target.density.extent = toDouble(k, v); },
        [](const C& c) { return num(c.target.density.extent); });
    add("target.density.file", [](C& c, S, S v) { c.target.densityFile = v; },
        [](const C& c) { return c.target.densityFile; });
    add("target.ising.side", [](C& c, S k, S v) { c.target.isingSide = static_cast<int>(toInt(k, v)); },
        [](const C& c) { return std::to_string(c.target.isingSide); });
    add("target.ising.beta", [](C& c, S k, S v) { c.target.isingBeta = toDouble(k, v); },
        [](const C& c) { return num(c.target.isingBeta); });
    add("target.tabular.dim", [](C& c, S k, S v) { c.target.tabularDim = static_cast<int>(toInt(k, v)); },
        [](const C& c) { return std::to_string(c.target.tabularDim); });
    add("target.tabular.seed", [](C& c, S k, S v) { c.target.tabularSeed = toUnsigned(k, v); },
        [](const C& c) { return std::to_string(c.target.tabularSeed); });
    add("target.sampler", [](C& c, S k, S v) {
          if (v != "exact" && v != "dataset" && v != "none") bad(k, v, "expected exact, dataset or none");
          c.target.sampler = v;
        },
        [](const C& c) { return c.target.sampler; });
    add("target.train_size", [](C& c, S k, S v) { c.target.trainSize = static_cast<int>(toInt(k, v)); },
        [](const C& c) { return std::to_string(c.target.trainSize); });
    add("target.test_size", [](C& c, S k, S v) { c.target.testSize = static_cast<int>(toInt(k, v)); },
        [](const C& c) { return std::to_string(c.target.testSize); });

    add("policy.hidden", [](C& c, S k, S v) { c.policy.hidden = toWidths(k, v); },
        [](const C& c) { return widthsText(c.policy.hidden); });
    add("policy.activation", [](C& c, S, S v) { c.policy.activation = parseActivation(v); },
        [](const C& c) { return activationName(c.policy.activation); });
    add("policy.init_scale", [](C& c, S k, S v) { c.policy.initScale = toDouble(k, v); },
        [](const C& c) { return num(c.policy.initScale); });
    add("policy.backward", [](C& c, S, S v) { c.policy.backward = parseBackwardMode(v); },
        [](const C& c) { return backwardModeName(c.policy.backward); });
    add("policy.logits", [](C& c, S k, S v) {
          if (v == "current") c.policy.logitInput = LogitInput::CurrentState;
          else if (v == "child") c.policy.logitInput = LogitInput::ChildState;
          else bad(k, v, "expected current or child");
        },
        [](const C& c) { return std::string(c.policy.logitInput == LogitInput::CurrentState ? "current" : "child"); });

    add("objective.family", [](C& c, S, S v) { c.objective.family = parseFamily(v); },
        [](const C& c) { return familyName(c.objective.family); });
    add("objective.alpha", [](C& c, S k, S v) { c.objective.alpha = toDouble(k, v); },
        [](const C& c) { return num(c.objective.alpha); });
    add("objective.cv", [](C& c, S, S v) { c.objective.cv = parseControlVariate(v); },
        [](const C& c) { return controlVariateName(c.objective.cv); });
    add("objective.c", [](C& c, S k, S v) { c.objective.fixedC = toDouble(k, v); },
        [](const C& c) { return num(c.objective.fixedC); });
    add("objective.batch_size", [](C& c, S k, S v) { c.objective.batchSize = static_cast<int>(toInt(k, v)); },
        [](const C& c) { return std::to_string(c.objective.batchSize); });
    add("objective.param_mode", [](C& c, S, S v) { c.objective.paramMode = parseParamMode(v); },
        [](const C& c) { return paramModeText(c.objective.paramMode); });
    add("objective.mixing", [](C& c, S, S v) { c.objective.mixing = parseMixing(v); },
        [](const C& c) {
          return std::string(c.objective.mixing == Mixing::Deterministic ? "deterministic" : "bernoulli");
        });
    add("objective.loo_opt_cap", [](C& c, S k, S v) { c.objective.looOptimalCap = toUnsigned(k, v); },
        [](const C& c) { return std::to_string(c.objective.looOptimalCap); });

    add("optimizer.method", [](C& c, S k, S v) { c.optimizer.method = toMethod(k, v); },
        [](const C& c) { return methodText(c.optimizer.method); });
    add("optimizer.lr", [](C& c, S k, S v) { c.optimizer.lr = toDouble(k, v); },
        [](const C& c) { return num(c.optimizer.lr); });
    add("optimizer.beta1", [](C& c, S k, S v) { c.optimizer.beta1 = toDouble(k, v); },
        [](const C& c) { return num(c.optimizer.beta1); });
    add("optimizer.beta2", [](C& c, S k, S v) { c.optimizer.beta2 = toDouble(k, v); },
        [](const C& c) { return num(c.optimizer.beta2); });
    add("optimizer.eps", [](C& c, S k, S v) { c.optimizer.eps = toDouble(k, v); },
        [](const C& c) { return num(c.optimizer.eps); });
    add("optimizer.psi_lr", [](C& c, S k, S v) { c.psiLr = toDouble(k, v); }, [](const C& c) { return num(c.psiLr); });

    add("ebm.hidden", [](C& c, S k, S v) { c.energy.hidden = toWidths(k, v); },
        [](const C& c) { return widthsText(c.energy.hidden); });
    add("ebm.activation", [](C& c, S, S v) { c.energy.activation = parseActivation(v); },
        [](const C& c) { return activationName(c.energy.activation); });
    add("ebm.init_scale", [](C& c, S k, S v) { c.energy.initScale = toDouble(k, v); },
        [](const C& c) { return num(c.energy.initScale); });
    add("ebm.method", [](C& c, S k, S v) { c.energy.optimizer.method = toMethod(k, v); },
        [](const C& c) { return methodText(c.energy.optimizer.method); });
    add("ebm.lr", [](C& c, S k, S v) { c.energy.optimizer.lr = toDouble(k, v); },
        [](const C& c) { return num(c.energy.optimizer.lr); });
    add("ebm.chain_steps", [](C& c, S k, S v) { c.energy.chainSteps = static_cast<int>(toInt(k, v)); },
        [](const C& c) { return std::to_string(c.energy.chainSteps); });
    add("ebm.back_depth", [](C& c, S k, S v) { c.energy.backDepth = static_cast<int>(toInt(k, v)); },
        [](const C& c) { return std::to_string(c.energy.backDepth); });
    add("ebm.batch", [](C& c, S k, S v) { c.energy.batch = static_cast<int>(toInt(k, v)); },
        [](const C& c) { return std::to_string(c.energy.batch); });
    add("ebm.every", [](C& c, S k, S v) { c.energy.every = static_cast<int>(toInt(k, v)); },
        [](const C& c) { return std::to_string(c.energy.every); });
    return t;
  }();
  return table;
}

}  // namespace

RunConfig::RunConfig() {
  policy.dim = 0;  // derived from the target
}

std::vector<std::string> splitList(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

KeyValues parseKeyValues(const std::string& text) {
  KeyValues kv;
  std::stringstream in(text);
  std::string line, section;
  int lineNo = 0;
  while (std::getline(in, line)) {
    ++lineNo;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw Error(ErrorCode::ConfigError, fmt::format("line {}: unterminated section", lineNo));
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::ConfigError, fmt::format("line {}: expected key = value", lineNo));
    std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw Error(ErrorCode::ConfigError, fmt::format("line {}: empty key", lineNo));
    if (!section.empty()) key = section + "." + key;
    if (!kv.emplace(key, value).second)
      throw Error(ErrorCode::ConfigError, fmt::format("line {}: duplicate key {}", lineNo, key));
  }
  return kv;
}

KeyValues readKeyValues(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ConfigError, "cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parseKeyValues(ss.str());
}

void applySetting(RunConfig& config, const std::string& key, const std::string& value) {
  for (const auto& k : keys()) {
    if (k.name == key) {
      k.set(config, key, value);
      return;
    }
  }
  throw Error(ErrorCode::ConfigError, "unknown config key: " + key);
}

RunConfig configFromKeyValues(const KeyValues& kv) {
  RunConfig config;
  for (const auto& [k, v] : kv) applySetting(config, k, v);
  return config;
}

RunConfig loadConfig(const std::filesystem::path& path) { return configFromKeyValues(readKeyValues(path)); }

nlohmann::json configToJson(const RunConfig& config) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& k : keys()) j[k.name] = k.get(config);
  return j;
}

std::string configToText(const RunConfig& config) {
  std::string out;
  for (const auto& k : keys()) out += k.name + " = " + k.get(config) + "\n";
  return out;
}

void validateConfig(const RunConfig& c) {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::ConfigError, m); };
  if (c.steps < 0) fail("steps must be >= 0");
  if (c.evalEvery < 1) fail("eval.every must be >= 1");
  if (c.elboSamples < 1 || c.nllSamples < 1) fail("evaluation sample counts must be >= 1");
  if (c.target.trainSize < 1 || c.target.testSize < 0) fail("dataset sizes out of range");
  if (c.target.kind == "ising" && (c.target.isingSide < 3 || c.target.isingSide > 8))
    fail("target.ising.side must lie in [3, 8]");
  if (c.target.kind == "tabular" && (c.target.tabularDim < 1 || c.target.tabularDim > 16))
    fail("target.tabular.dim must lie in [1, 16]");
  if (c.target.kind == "density" || c.target.kind == "ebm")
    if (c.target.densityFile.empty() && (c.target.density.bits < 1 || c.target.density.bits > 12))
      fail("target.density.bits must lie in [1, 12]");
  if (c.optimizer.lr <= 0 || c.psiLr <= 0) fail("learning rates must be positive");
  if (c.energy.chainSteps < 0 || c.energy.batch < 1 || c.energy.every < 1) fail("ebm settings out of range");
  if ((c.objective.paramMode == ParamMode::SharedBackward) != (c.policy.backward == BackwardMode::SharedWithForward))
    fail("objective.param_mode = shared requires policy.backward = shared and vice versa");
  if (c.objective.paramMode == ParamMode::Distinct && c.policy.backward != BackwardMode::LearnedDistinct)
    fail("objective.param_mode = distinct requires policy.backward = learned");
  const bool needsBackward = c.objective.alpha > 0.0;
  if (needsBackward && c.target.sampler == "none") fail("alpha > 0 needs a terminal sampler");
  if (c.target.kind == "ebm" && c.target.sampler == "exact")
    fail("ebm targets draw backward terminals from the dataset; set target.sampler = dataset or none");
  try {
    c.objective.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::ConfigError, e.what());
  }
}

}  // namespace gfnvi
