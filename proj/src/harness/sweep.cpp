#include "gfnvi/harness/sweep.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <mutex>
#include <ostream>
#include <thread>

#include <fmt/format.h>

#include "gfnvi/error.hpp"
#include "gfnvi/harness/run.hpp"

namespace gfnvi {

namespace {

constexpr int kExactLogZMaxDim = 16;

std::string cell(double v) { return std::isnan(v) ? "" : fmt::format("{:.17g}", v); }

std::size_t threadCount() {
  if (const char* env = std::getenv("GFNVI_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return static_cast<std::size_t>(n);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

struct RunOutcome {
  std::size_t cell = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  MetricReport report;
};

// Oracle log Z for fixed-reward targets small enough to enumerate, else NaN.
double exactLogZ(const SweepPlan& plan, const SweepCell& c) {
  RunConfig cfg = configFromKeyValues(plan.base);
  for (const auto& [k, v] : c.settings) applySetting(cfg, k, v);
  if (cfg.target.kind == "ebm") return std::numeric_limits<double>::quiet_NaN();
  cfg.target.trainSize = 1;
  cfg.target.testSize = 0;
  cfg.target.sampler = "none";
  cfg.objective.alpha = 0.0;
  const Experiment ex = buildExperiment(cfg);
  if (ex.dim() > kExactLogZMaxDim) return std::numeric_limits<double>::quiet_NaN();
  return exactLogPartition(ex.target(), ex.params);
}

}  // namespace

std::vector<SweepCell> SweepPlan::cells() const {
  std::vector<SweepCell> out{SweepCell{}};
  for (const auto& axis : axes) {
    std::vector<SweepCell> next;
    for (const auto& c : out)
      for (const auto& v : axis.values) {
        SweepCell n = c;
        n.settings.emplace_back(axis.key, v);
        n.label += (n.label.empty() ? "" : ";") + axis.key + "=" + v;
        next.push_back(std::move(n));
      }
    out = std::move(next);
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i].index = i;
  return out;
}

SweepPlan planSweep(const KeyValues& kv) {
  SweepPlan plan;
  for (const auto& [key, value] : kv) {
    if (key.rfind("sweep.", 0) != 0) {
      plan.base[key] = value;
      continue;
    }
    const std::string sub = key.substr(6);
    const auto values = splitList(value);
    if (values.empty()) throw Error(ErrorCode::ConfigError, "empty sweep list for " + key);
    if (sub == "seeds" || sub == "seed") {
      for (const auto& v : values) {
        try {
          plan.seeds.push_back(std::stoull(v));
        } catch (const std::exception&) {
          throw Error(ErrorCode::ConfigError, "bad seed '" + v + "'");
        }
      }
      continue;
    }
    plan.axes.push_back({sub, values});
  }
  // Reject bad keys and values before any run starts.
  RunConfig probe = configFromKeyValues(plan.base);
  for (const auto& axis : plan.axes)
    for (const auto& v : axis.values) {
      RunConfig c = probe;
      applySetting(c, axis.key, v);
    }
  for (const auto& c : plan.cells()) {
    RunConfig cfg = probe;
    for (const auto& [k, v] : c.settings) applySetting(cfg, k, v);
    validateConfig(cfg);
  }
  if (plan.seeds.empty()) plan.seeds.push_back(probe.seed);
  plan.outputDir = probe.outputDir;
  return plan;
}

SweepResult runSweep(const SweepPlan& plan, std::ostream* log) {
  const auto cells = plan.cells();
  std::vector<std::pair<std::size_t, std::uint64_t>> jobs;
  for (const auto& c : cells)
    for (auto s : plan.seeds) jobs.emplace_back(c.index, s);

  std::filesystem::create_directories(plan.outputDir);
  std::vector<RunOutcome> outcomes(jobs.size());
  std::atomic<std::size_t> next{0};
  std::mutex logMutex;

  auto worker = [&] {
    for (std::size_t j = next++; j < jobs.size(); j = next++) {
      const auto [ci, seed] = jobs[j];
      RunConfig cfg = configFromKeyValues(plan.base);
      for (const auto& [k, v] : cells[ci].settings) applySetting(cfg, k, v);
      cfg.seed = seed;
      cfg.outputDir = (std::filesystem::path(plan.outputDir) / fmt::format("cell_{}_seed_{}", ci, seed)).string();
      RunOutcome& out = outcomes[j];
      out.cell = ci;
      out.seed = seed;
      std::string message;
      try {
        TrainResult r = runTraining(cfg);
        out.ok = r.exitCode == 0;
        out.report = std::move(r.report);
        message = r.message;
      } catch (const std::exception& e) {
        message = e.what();
      }
      if (log) {
        std::lock_guard lock(logMutex);
        *log << fmt::format("[{}/{}] {} seed={} {}{}\n", j + 1, jobs.size(), cells[ci].label, seed,
                            out.ok ? "ok" : "FAILED", message.empty() ? "" : ": " + message);
      }
    }
  };
  const std::size_t nThreads = std::min(threadCount(), jobs.size());
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < nThreads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  const auto& cols = csvColumns();
  const std::filesystem::path dir = plan.outputDir;
  {
    std::ofstream runs(dir / "runs.csv", std::ios::trunc);
    if (!runs) throw Error(ErrorCode::IoError, "cannot write runs.csv");
    runs << "label,seed";
    for (const auto& c : cols) runs << "," << c;
    runs << "\n";
    for (const auto& o : outcomes)
      for (const auto& row : o.report.rows()) runs << cells[o.cell].label << "," << o.seed << "," << formatCsvRow(row) << "\n";
  }

  SweepResult result;
  result.runs = jobs.size();
  std::ofstream summary(dir / "summary.csv", std::ios::trunc);
  if (!summary) throw Error(ErrorCode::IoError, "cannot write summary.csv");
  const std::vector<std::string> metrics(cols.begin() + 1, cols.end());
  summary << "label,runs,failed,log_z";
  for (const auto& m : metrics) summary << "," << m << "," << m << "_mean," << m << "_sd";
  summary << "\n";
  for (const auto& c : cells) {
    std::size_t n = 0, failed = 0;
    std::vector<std::vector<double>> finals(metrics.size());
    for (const auto& o : outcomes) {
      if (o.cell != c.index) continue;
      ++n;
      if (!o.ok || o.report.empty()) {
        ++failed;
        continue;
      }
      const auto& last = o.report.rows().back();
      for (std::size_t m = 0; m < metrics.size(); ++m) {
        const double v = last.get(metrics[m]);
        if (!std::isnan(v)) finals[m].push_back(v);
      }
    }
    result.failed += failed;
    summary << c.label << "," << n << "," << failed << "," << cell(exactLogZ(plan, c));
    for (const auto& vals : finals) {
      if (vals.empty()) {
        summary << ",,,";
        continue;
      }
      double mean = 0.0;
      for (double v : vals) mean += v;
      mean /= static_cast<double>(vals.size());
      double var = 0.0;
      for (double v : vals) var += (v - mean) * (v - mean);
      const double sd = vals.size() > 1 ? std::sqrt(var / static_cast<double>(vals.size() - 1)) : 0.0;
      summary << "," << fmt::format("{:.3f}±{:.3f}", mean, sd) << "," << cell(mean) << "," << cell(sd);
    }
    summary << "\n";
  }
  return result;
}

}  // namespace gfnvi
