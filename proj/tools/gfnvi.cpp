// Command-line front end. Exit codes: 0 ok, 1 config or I/O error,
// 2 verification failure, 3 numeric abort.

#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "gfnvi/checkpoint.hpp"
#include "gfnvi/error.hpp"
#include "gfnvi/eval.hpp"
#include "gfnvi/harness/plot.hpp"
#include "gfnvi/harness/run.hpp"
#include "gfnvi/harness/sweep.hpp"
#include "gfnvi/harness/verify.hpp"

using namespace gfnvi;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitVerify = 2;
constexpr int kExitNumeric = 3;

RunConfig configWithOverrides(const std::string& path, const std::vector<std::string>& sets) {
  KeyValues kv = readKeyValues(path);
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::ConfigError, "--set expects key=value, got '" + s + "'");
    auto trim = [](std::string t) {
      const auto b = t.find_first_not_of(" \t");
      const auto e = t.find_last_not_of(" \t");
      return b == std::string::npos ? std::string() : t.substr(b, e - b + 1);
    };
    kv[trim(s.substr(0, eq))] = trim(s.substr(eq + 1));
  }
  return configFromKeyValues(kv);
}

int cmdTrain(const std::string& path, const std::vector<std::string>& sets, bool quiet) {
  const RunConfig cfg = configWithOverrides(path, sets);
  TrainOptions opts;
  opts.log = quiet ? nullptr : &std::cerr;
  const TrainResult r = runTraining(cfg, opts);
  if (r.exitCode != 0) {
    std::cerr << "numeric abort: " << r.message << "\n";
    return kExitNumeric;
  }
  std::cerr << "wrote " << cfg.outputDir << "/{metrics.csv,checkpoint.bin,config-echo.json}\n";
  return kExitOk;
}

int cmdVerify(const std::string& path, double corrupt) {
  KeyValues kv;
  if (!path.empty()) kv = readKeyValues(path);
  VerifyOptions o = verifyOptionsFromKeyValues(kv);
  if (corrupt != 0.0) o.corruptPsiGradient = corrupt;
  return reportVerification(runVerification(o), std::cout) == 0 ? kExitOk : kExitVerify;
}

int cmdSweep(const std::string& path, bool quiet) {
  const SweepPlan plan = planSweep(readKeyValues(path));
  const SweepResult r = runSweep(plan, quiet ? nullptr : &std::cerr);
  std::cerr << fmt::format("{} runs, {} failed; wrote {}/summary.csv and runs.csv\n", r.runs, r.failed,
                           plan.outputDir);
  return r.failed == 0 ? kExitOk : kExitNumeric;
}

int cmdExact(const std::string& path, const std::vector<std::string>& sets, const std::string& checkpoint) {
  const RunConfig cfg = configWithOverrides(path, sets);
  Experiment ex = buildExperiment(cfg);
  if (!checkpoint.empty()) {
    const Checkpoint ck = readCheckpoint(checkpoint);
    if (ck.layout != ex.layout) throw Error(ErrorCode::ConfigError, "checkpoint layout does not match the config");
    ex.params = ck.values;
  }
  if (ex.dim() > kOracleMaxDim)
    throw Error(ErrorCode::StateSpaceTooLarge, fmt::format("exact oracle needs D <= {}", kOracleMaxDim));
  const PolicyView view(*ex.policy, ex.params);
  const OracleResult o = oracleExact(view, ex.target(), false);
  nlohmann::json j;
  j["dim"] = ex.dim();
  j["log_z"] = o.logZ;
  j["psi"] = view.psi();
  j["kl_qp"] = o.klQP;
  j["kl_pq"] = o.klPQ;
  j["tv"] = o.tv;
  const auto qt = exactTerminalMarginal(view);
  const auto logR = terminalLogRewards(ex.target(), ex.params);
  nlohmann::json terms = nlohmann::json::array();
  for (std::size_t k = 0; k < qt.size(); ++k)
    terms.push_back({{"terminal", terminalFromIndex(k, ex.dim()).toString()}, {"log_q", qt[k]},
                     {"log_p", logR[k] - o.logZ}});
  j["terminals"] = terms;
  std::cout << j.dump(2) << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GFlowNet training with trajectory-balance and KL objectives"};
  app.require_subcommand(1);
  app.fallthrough();
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Suppress progress output");

  std::string configPath;
  std::vector<std::string> sets;

  auto* train = app.add_subcommand("train", "Train one run from a config file");
  train->add_option("config", configPath, "Config file")->required();
  train->add_option("--set", sets, "Override a setting, key=value (repeatable)");

  double corrupt = 0.0;
  auto* verify = app.add_subcommand("verify", "Run the structural checks at small D");
  verify->add_option("config", configPath, "Optional config with verify.* keys");
  verify->add_option("--corrupt-psi-gradient", corrupt, "Test hook: perturb the psi gradient by this amount");

  auto* sweep = app.add_subcommand("sweep", "Run a grid of configs and aggregate over seeds");
  sweep->add_option("config", configPath, "Sweep config file")->required();

  std::string csvPath, kind = "nll", outPath;
  auto* plot = app.add_subcommand("plot", "Render NLL or ELBO over steps as SVG");
  plot->add_option("csv", csvPath, "metrics.csv or runs.csv")->required();
  plot->add_option("--kind", kind, "nll | elbo");
  plot->add_option("--out", outPath, "Output SVG path")->required();

  DensityParams dp;
  std::string prefix;
  auto* exportCmd = app.add_subcommand("export-density", "Write a discretized density as .bin + .json");
  exportCmd->add_option("--name", dp.name, "8gaussians | 2spirals");
  exportCmd->add_option("--bits", dp.bits, "Bits per axis");
  exportCmd->add_option("--sigma", dp.sigma, "Kernel width (<= 0 for the default)");
  exportCmd->add_option("--extent", dp.extent, "Half-width of the grid");
  exportCmd->add_option("--out", prefix, "Output path prefix")->required();

  std::string checkpointPath;
  auto* exact = app.add_subcommand("exact", "Print the exact oracle for a config (D <= 6) as JSON");
  exact->add_option("config", configPath, "Config file")->required();
  exact->add_option("--set", sets, "Override a setting, key=value (repeatable)");
  exact->add_option("--checkpoint", checkpointPath, "Evaluate these parameters instead of the initial ones");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*train) return cmdTrain(configPath, sets, quiet);
    if (*verify) return cmdVerify(configPath, corrupt);
    if (*sweep) return cmdSweep(configPath, quiet);
    if (*plot) {
      plotMetrics(csvPath, parsePlotKind(kind), outPath);
      return kExitOk;
    }
    if (*exportCmd) {
      const auto density = DiscretizedDensity::build(dp);
      exportDensity(density, prefix + ".bin", prefix + ".json");
      std::cerr << "wrote " << prefix << ".bin and " << prefix << ".json\n";
      return kExitOk;
    }
    if (*exact) return cmdExact(configPath, sets, checkpointPath);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    if (e.code() == ErrorCode::NonFiniteGradient || e.code() == ErrorCode::NonFiniteLoss) return kExitNumeric;
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitOk;
}
