#include "gfnvi/harness/run.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include <fmt/format.h>

#include "gfnvi/checkpoint.hpp"
#include "gfnvi/error.hpp"

namespace gfnvi {

namespace {

std::string cell(double v) {
  if (std::isnan(v)) return "";
  return fmt::format("{:.17g}", v);
}

class CsvWriter {
 public:
  explicit CsvWriter(const std::filesystem::path& path) : out_(path, std::ios::trunc) {
    if (!out_) throw Error(ErrorCode::IoError, "cannot write " + path.string());
    std::string header;
    for (const auto& c : csvColumns()) header += (header.empty() ? "" : ",") + c;
    write(header);
  }

  // Whole lines only, flushed, so an interrupted run leaves a parseable file.
  void write(const std::string& line) {
    const std::string full = line + "\n";
    out_.write(full.data(), static_cast<std::streamsize>(full.size()));
    out_.flush();
  }

 private:
  std::ofstream out_;
};

std::unique_ptr<DiscretizedDensity> loadDensity(const RunConfig& c) {
  if (!c.target.densityFile.empty()) return std::make_unique<DiscretizedDensity>(importDensity(c.target.densityFile));
  return std::make_unique<DiscretizedDensity>(DiscretizedDensity::build(c.target.density));
}

}  // namespace

const Target& Experiment::target() const {
  if (energy) return *energy;
  if (fixedTarget) return *fixedTarget;
  return *density;
}

bool Experiment::oracleEnabled() const {
  if (config.oracle == "false") return false;
  if (config.oracle == "true") return true;
  return dim() <= kOracleMaxDim;
}

Checkpoint Experiment::checkpoint(std::uint64_t step) const {
  Checkpoint ck;
  ck.layout = layout;
  ck.seed = config.seed;
  ck.step = step;
  ck.nets = policy->netSpecs();
  if (energy) ck.nets.push_back({"energy", energy->net().spec()});
  ck.values = params;
  return ck;
}

Experiment buildExperiment(const RunConfig& config) {
  validateConfig(config);
  Experiment ex;
  ex.config = config;
  const auto& t = config.target;
  int dim = 0;
  try {
    if (t.kind == "density" || t.kind == "ebm") {
      ex.density = loadDensity(config);
      dim = ex.density->dim();
    } else if (t.kind == "ising") {
      ex.fixedTarget = std::make_unique<IsingTarget>(t.isingSide, t.isingBeta);
      dim = ex.fixedTarget->dim();
    } else {
      Rng rng(t.tabularSeed, StreamTag::Custom, 0, 0);
      std::vector<double> masses(std::size_t{1} << t.tabularDim);
      for (double& m : masses) m = 0.05 + rng.uniform();
      ex.fixedTarget = std::make_unique<TabularTarget>(t.tabularDim, std::move(masses));
      dim = t.tabularDim;
    }
  } catch (const Error& e) {
    if (e.code() == ErrorCode::IoError) throw;
    throw Error(ErrorCode::ConfigError, e.what());
  }

  PolicyConfig pc = config.policy;
  pc.dim = dim;
  ex.policy = std::make_unique<Policy>(pc);

  std::size_t xiCount = 0;
  MlpSpec energySpec{dim, config.energy.hidden, 1, config.energy.activation, config.energy.initScale};
  if (t.kind == "ebm") xiCount = Mlp(energySpec).parameterCount();
  ex.layout = Layout::make(ex.policy->phi().size, ex.policy->theta().size, xiCount);
  ex.params.assign(ex.layout.total(), 0.0);
  {
    Rng rng(config.seed, StreamTag::Init, 0, 0);
    ex.policy->initialize(std::span<double>(ex.params).first(ex.policy->parameterCount()), rng);
  }
  if (t.kind == "ebm") {
    ex.energy = std::make_unique<EnergyTarget>(energySpec, ex.layout.xi);
    Rng rng(config.seed, StreamTag::Init, 0, 1);
    ex.energy->net().initialize(std::span<double>(ex.params).subspan(ex.layout.xi.offset, xiCount), rng);
  }

  // Datasets. Ising and tabular targets draw test points exactly.
  if (ex.density) {
    Rng train(config.seed, StreamTag::Dataset, 0, 0);
    ex.trainData = sampleDataset(*ex.density, static_cast<std::size_t>(t.trainSize), train);
    Rng test(config.seed, StreamTag::TestSet, 0, 0);
    ex.testData = sampleDataset(*ex.density, static_cast<std::size_t>(t.testSize), test);
  } else if (dim <= kMaxEnumerationDim && t.testSize > 0) {
    ExactSampler exact(*ex.fixedTarget, ex.params);
    for (int k = 0; k < t.testSize; ++k) {
      Rng rng(config.seed, StreamTag::TestSet, 0, static_cast<std::uint64_t>(k));
      ex.testData.push_back(exact.sample(rng));
    }
  }

  if (t.sampler == "exact") {
    if (ex.density)
      ex.sampler = std::make_unique<DensitySampler>(*ex.density);
    else
      ex.sampler = std::make_unique<ExactSampler>(*ex.fixedTarget, ex.params);
  } else if (t.sampler == "dataset") {
    if (ex.trainData.empty()) {
      ExactSampler exact(*ex.fixedTarget, ex.params);
      for (int k = 0; k < t.trainSize; ++k) {
        Rng rng(config.seed, StreamTag::Dataset, 0, static_cast<std::uint64_t>(k));
        ex.trainData.push_back(exact.sample(rng));
      }
    }
    ex.sampler = std::make_unique<DatasetSampler>(ex.trainData);
  }
  return ex;
}

std::string formatCsvRow(const MetricRow& row) {
  std::string line = std::to_string(row.step);
  for (std::size_t c = 1; c < csvColumns().size(); ++c) line += "," + cell(row.get(csvColumns()[c]));
  return line;
}

TrainResult runTraining(const RunConfig& config, const TrainOptions& options) {
  Experiment ex = buildExperiment(config);
  const auto& policy = *ex.policy;
  const Target& target = ex.target();
  const auto started = std::chrono::steady_clock::now();

  std::unique_ptr<CsvWriter> csv;
  const std::filesystem::path dir = config.outputDir;
  if (options.writeArtifacts) {
    std::filesystem::create_directories(dir);
    std::ofstream echo(dir / "config-echo.json", std::ios::trunc);
    if (!echo) throw Error(ErrorCode::IoError, "cannot write into " + dir.string());
    echo << configToJson(config).dump(2) << "\n";
    csv = std::make_unique<CsvWriter>(dir / "metrics.csv");
  }

  const Slice policySlice{0, policy.psiIndex()};
  const Slice psiSlice{policy.psiIndex(), 1};
  Optimizer policyOpt(config.optimizer, policySlice);
  OptimizerConfig psiCfg = config.optimizer;
  psiCfg.lr = config.psiLr;
  Optimizer psiOpt(psiCfg, psiSlice);
  Optimizer energyOpt(config.energy.optimizer, ex.layout.xi);
  const int kBack = config.energy.backDepth > 0 ? config.energy.backDepth : defaultBackDepth(ex.dim());

  TrainResult result;
  std::vector<double> grad(ex.params.size());

  auto evaluate = [&](std::uint64_t step, const Diagnostics& diag, double loss) {
    MetricRow row;
    row.step = step;
    row.seed = config.seed;
    PolicyView view(policy, ex.params);
    row.set("loss", loss);
    row.set("mean_logw", diag.meanLogW);
    row.set("var_logw", diag.varLogW);
    row.set("ess", diag.ess);
    row.set("c_used", diag.cUsed);
    row.set("psi", view.psi());
    if (!ex.testData.empty()) row.set("nll_test", testNll(view, ex.testData, config.nllSamples, config.seed, step));
    row.set("elbo", expectedLogWeight(view, target, config.elboSamples, config.seed, step).mean);
    if (ex.oracleEnabled()) row.set("kl_exact", oracleExact(view, target, false).klQP);
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
    row.wallMs = ms;
    if (config.recordWallTime) row.set("wall_ms", ms);
    if (csv) csv->write(formatCsvRow(row));
    if (options.log)
      *options.log << fmt::format("step {:>7}  loss {:.5g}  elbo {:.5g}\n", step, loss, row.get("elbo"));
    result.report.append(std::move(row));
  };

  std::uint64_t step = 1;
  try {
    for (; step <= static_cast<std::uint64_t>(config.steps); ++step) {
      EstimatorOutput estimate;
      {
        PolicyView view(policy, ex.params);
        SamplingContext ctx{&view, &target, ex.sampler.get(), config.seed, step};
        StepResult sr = objectiveStep(config.objective, ctx);
        std::fill(grad.begin(), grad.end(), 0.0);
        accumulateGradient(view, sr.batch, sr.estimate, grad);
        estimate = std::move(sr.estimate);
      }
      policyOpt.step(ex.params, grad);
      psiOpt.step(ex.params, grad);

      if (ex.energy && step % static_cast<std::uint64_t>(config.energy.every) == 0) {
        std::vector<State> batch;
        for (int k = 0; k < config.energy.batch; ++k) {
          Rng rng(config.seed, StreamTag::Dataset, step, static_cast<std::uint64_t>(k));
          batch.push_back(ex.trainData[rng.below(ex.trainData.size())]);
        }
        PolicyView view(policy, ex.params);
        const CdResult cd =
            cdGradientStep(view, *ex.energy, batch, config.energy.chainSteps, kBack, config.seed, step);
        energyOpt.step(ex.params, cd.gradient);
      }

      if (step % static_cast<std::uint64_t>(config.evalEvery) == 0 || step == static_cast<std::uint64_t>(config.steps))
        evaluate(step, estimate.diagnostics, estimate.loss);
    }
  } catch (const Error& e) {
    if (e.code() != ErrorCode::NonFiniteGradient && e.code() != ErrorCode::NonFiniteLoss) throw;
    MetricRow row;
    row.step = step;
    row.seed = config.seed;
    row.set("loss", std::numeric_limits<double>::quiet_NaN());
    row.set("psi", ex.params[policy.psiIndex()]);
    if (csv) csv->write(formatCsvRow(row) + "  # aborted: " + e.what());
    result.report.append(std::move(row));
    result.exitCode = 3;
    result.message = e.what();
  }

  if (options.writeArtifacts) {
    const std::uint64_t last = result.exitCode == 0 ? static_cast<std::uint64_t>(config.steps) : step;
    writeCheckpoint(dir / "checkpoint.bin", ex.checkpoint(last));
  }
  result.finalParams = ex.params;
  return result;
}

}  // namespace gfnvi
