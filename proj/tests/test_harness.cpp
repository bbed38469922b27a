#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "gfnvi/checkpoint.hpp"
#include "gfnvi/error.hpp"
#include "gfnvi/harness/plot.hpp"
#include "gfnvi/harness/run.hpp"
#include "gfnvi/harness/sweep.hpp"
#include "gfnvi/harness/verify.hpp"

using namespace gfnvi;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "gfnvi_harness_tests" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t count(const std::string& text, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + 1)) ++n;
  return n;
}

// D=4 density (2 bits per axis), small nets, reverse KL.
RunConfig smallRun(const fs::path& dir, int steps) {
  KeyValues kv{{"steps", std::to_string(steps)},
               {"eval.every", "50"},
               {"output.dir", dir.string()},
               {"target.kind", "density"},
               {"target.density.bits", "2"},
               {"target.train_size", "200"},
               {"target.test_size", "50"},
               {"policy.hidden", "32"},
               {"objective.family", "alpha_kl"},
               {"objective.alpha", "0"},
               {"objective.cv", "loo_logw"}};
  return configFromKeyValues(kv);
}

int runCli(const std::string& args) {
  const int rc = std::system((std::string(GFNVI_CLI_PATH) + " -q " + args + " > /dev/null 2>&1").c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST_SUITE("harness") {

TEST_CASE("config text format") {
  const auto kv = parseKeyValues(
      "seed = 7   # trailing comment\n"
      "\n"
      "[objective]\n"
      "family = alpha_kl\n"
      "alpha = 0.25\n"
      "[policy]\n"
      "hidden = 8, 8\n");
  CHECK(kv.at("seed") == "7");
  CHECK(kv.at("objective.alpha") == "0.25");
  const RunConfig c = configFromKeyValues(kv);
  CHECK(c.seed == 7);
  CHECK(c.objective.family == Family::AlphaKL);
  CHECK(c.objective.alpha == 0.25);
  CHECK(c.policy.hidden == std::vector<int>{8, 8});

  CHECK_THROWS_AS(parseKeyValues("a = 1\na = 2\n"), Error);
  CHECK_THROWS_AS(parseKeyValues("no equals sign\n"), Error);
  RunConfig d;
  CHECK_THROWS_AS(applySetting(d, "objective.nonsense", "1"), Error);
  CHECK_THROWS_AS(applySetting(d, "steps", "ten"), Error);
  CHECK_THROWS_AS(applySetting(d, "objective.cv", "magic"), Error);

  // Text echo parses back to the same config.
  const RunConfig again = configFromKeyValues(parseKeyValues(configToText(c)));
  CHECK(configToJson(again) == configToJson(c));
}

TEST_CASE("config validation") {
  RunConfig c;
  c.objective.family = Family::AlphaTB;
  c.objective.cv = ControlVariate::LooOptimal;
  CHECK_THROWS_AS(validateConfig(c), Error);

  c = RunConfig();
  c.objective.alpha = 0.5;
  c.target.sampler = "none";
  try {
    validateConfig(c);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ConfigError);
  }

  c = RunConfig();
  c.target.kind = "ebm";
  c.target.sampler = "exact";
  CHECK_THROWS_AS(validateConfig(c), Error);
}

TEST_CASE("zero steps writes a header-only CSV and the initial checkpoint") {
  const auto dir = scratch("zero");
  const RunConfig c = smallRun(dir, 0);
  const auto r = runTraining(c);
  CHECK(r.exitCode == 0);
  CHECK(slurp(dir / "metrics.csv") == "step,loss,mean_logw,var_logw,ess,c_used,psi,nll_test,elbo,kl_exact,wall_ms\n");
  const Checkpoint ck = readCheckpoint(dir / "checkpoint.bin");
  CHECK(ck.step == 0);
  const Experiment ex = buildExperiment(c);
  CHECK(ck.values == ex.params);
  CHECK(ck.layout == ex.layout);
  CHECK(fs::exists(dir / "config-echo.json"));
}

TEST_CASE("identical configs give identical metrics bytes") {
  const auto a = scratch("det_a");
  const auto b = scratch("det_b");
  runTraining(smallRun(a, 120));
  runTraining(smallRun(b, 120));
  const std::string ma = slurp(a / "metrics.csv");
  CHECK(count(ma, "\n") == 4);  // header, 50, 100, 120
  CHECK(ma == slurp(b / "metrics.csv"));
  CHECK(slurp(a / "checkpoint.bin") == slurp(b / "checkpoint.bin"));

  RunConfig other = smallRun(b, 120);
  other.seed = 1;
  runTraining(other);
  CHECK(ma != slurp(b / "metrics.csv"));
}

TEST_CASE("reverse KL converges on a four-bit density") {
  const auto dir = scratch("converge");
  RunConfig c = smallRun(dir, 2000);
  c.evalEvery = 1000;
  c.policy.hidden = {64, 64};
  c.objective.batchSize = 16;
  const auto r = runTraining(c);
  REQUIRE(r.exitCode == 0);
  const double kl = r.report.rows().back().get("kl_exact");
  MESSAGE("final KL(Q||P) = " << kl);
  CHECK(kl < 1e-2);
}

TEST_CASE("energy-based runs alternate policy and contrastive divergence steps") {
  const auto dir = scratch("ebm");
  RunConfig c = smallRun(dir, 20);
  c.evalEvery = 10;
  c.target.kind = "ebm";
  c.target.sampler = "dataset";
  c.objective.alpha = 0.5;
  c.energy.hidden = {8};
  c.energy.chainSteps = 2;
  c.energy.batch = 4;
  const Experiment ex = buildExperiment(c);
  const auto r = runTraining(c);
  REQUIRE(r.exitCode == 0);
  bool moved = false;
  for (std::size_t i = ex.layout.xi.offset; i < ex.layout.xi.end(); ++i) moved = moved || r.finalParams[i] != ex.params[i];
  CHECK(moved);
  CHECK(readCheckpoint(dir / "checkpoint.bin").nets.size() == 2);
}

TEST_CASE("sweep counting and thread independence") {
  const auto dir = scratch("sweep");
  KeyValues kv{{"steps", "60"},
               {"eval.every", "30"},
               {"output.dir", dir.string()},
               {"target.kind", "density"},
               {"target.density.bits", "2"},
               {"target.test_size", "20"},
               {"policy.hidden", "8"},
               {"objective.family", "alpha_kl"},
               {"sweep.objective.alpha", "0, 1"},
               {"sweep.seeds", "1,2,3"}};
  const SweepPlan plan = planSweep(kv);
  CHECK(plan.cells().size() == 2);
  CHECK(plan.runCount() == 6);

  setenv("GFNVI_THREADS", "1", 1);
  const auto r1 = runSweep(plan);
  const std::string runs1 = slurp(dir / "runs.csv");
  setenv("GFNVI_THREADS", "3", 1);
  const auto r3 = runSweep(plan);
  unsetenv("GFNVI_THREADS");
  CHECK(r1.runs == 6);
  CHECK(r1.failed == 0);
  CHECK(r3.failed == 0);
  CHECK(runs1 == slurp(dir / "runs.csv"));
  for (int cell = 0; cell < 2; ++cell)
    for (int seed = 1; seed <= 3; ++seed)
      CHECK(fs::exists(dir / ("cell_" + std::to_string(cell) + "_seed_" + std::to_string(seed)) / "metrics.csv"));

  const std::string summary = slurp(dir / "summary.csv");
  CHECK(count(summary, "\n") == 3);
  CHECK(count(summary, "±") >= 2);
  CHECK(summary.find("objective.alpha=1,3,0,") != std::string::npos);

  KeyValues bad = kv;
  bad["sweep.objective.cv"] = "loo_logw, bogus";
  CHECK_THROWS_AS(planSweep(bad), Error);
}

TEST_CASE("one-cell sweep matches a plain training run") {
  const auto dir = scratch("one_cell");
  RunConfig c = smallRun(dir / "plain", 60);
  runTraining(c);
  KeyValues kv{{"steps", "60"},           {"eval.every", "50"},          {"output.dir", (dir / "sweep").string()},
               {"target.kind", "density"}, {"target.density.bits", "2"}, {"target.train_size", "200"},
               {"target.test_size", "50"}, {"policy.hidden", "32"},       {"objective.family", "alpha_kl"},
               {"objective.cv", "loo_logw"}, {"sweep.objective.alpha", "0"}};
  const auto r = runSweep(planSweep(kv));
  CHECK(r.runs == 1);
  CHECK(slurp(dir / "plain" / "metrics.csv") == slurp(dir / "sweep" / "cell_0_seed_0" / "metrics.csv"));
  CHECK(count(slurp(dir / "sweep" / "summary.csv"), "\n") == 2);
}

TEST_CASE("plots") {
  const auto dir = scratch("plot");
  {
    std::ofstream f(dir / "single.csv");
    f << "step,loss,nll_test,elbo\n10,1,3.0,-2\n20,1,2.5,-1.5\n30,1,2.2,-1.2\n";
  }
  plotMetrics(dir / "single.csv", PlotKind::Nll, dir / "single.svg");
  const std::string single = slurp(dir / "single.svg");
  CHECK(count(single, "<polyline") == 1);
  CHECK(single.rfind("<svg", 0) == 0);
  plotMetrics(dir / "single.csv", PlotKind::Nll, dir / "again.svg");
  CHECK(single == slurp(dir / "again.svg"));

  {
    std::ofstream f(dir / "runs.csv");
    f << "label,seed,step,nll_test,elbo\n";
    for (const char* a : {"0", "0.25", "0.5", "0.75", "1"})
      for (int seed = 0; seed < 2; ++seed)
        for (int step = 100; step <= 300; step += 100)
          f << "objective.alpha=" << a << "," << seed << "," << step << "," << 5.0 - step / 100.0 + seed << ",\n";
  }
  const auto series = loadPlotSeries(dir / "runs.csv", PlotKind::Nll);
  REQUIRE(series.size() == 5);
  CHECK(series[0].points.size() == 3);
  CHECK(series[0].points[0].second == doctest::Approx(4.5));  // averaged over the two seeds
  plotMetrics(dir / "runs.csv", PlotKind::Nll, dir / "runs.svg");
  const std::string multi = slurp(dir / "runs.svg");
  CHECK(count(multi, "<polyline") == 5);
  CHECK(multi.find("objective.alpha=0.75") != std::string::npos);

  {
    std::ofstream f(dir / "empty.csv");
  }
  CHECK_THROWS_AS(plotMetrics(dir / "empty.csv", PlotKind::Nll, dir / "x.svg"), Error);
  {
    std::ofstream f(dir / "header.csv");
    f << "step,loss,nll_test\n";
  }
  CHECK_THROWS_AS(plotMetrics(dir / "header.csv", PlotKind::Nll, dir / "x.svg"), Error);
  try {
    plotMetrics(dir / "single.csv", PlotKind::Nll, dir / "x.svg");
    std::ofstream f(dir / "nocol.csv");
    f << "step,loss\n1,2\n";
    f.close();
    plotMetrics(dir / "nocol.csv", PlotKind::Elbo, dir / "x.svg");
    FAIL("expected MissingColumn");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MissingColumn);
  }
}

TEST_CASE("verification suite passes and catches a corrupted psi gradient") {
  VerifyOptions o;
  o.mcBatches = 2000;
  const auto results = runVerification(o);
  for (const auto& r : results) CHECK_MESSAGE(r.passed, r.name << ": " << r.detail);
  std::ostringstream sink;
  CHECK(reportVerification(results, sink) == 0);

  o.corruptPsiGradient = 0.05;
  const auto bad = runVerification(o);
  std::size_t failed = 0;
  for (const auto& r : bad) failed += !r.passed;
  CHECK(failed == 1);
  CHECK(reportVerification(bad, sink) == 2);
}

TEST_CASE("command-line exit codes") {
  const auto dir = scratch("cli");
  {
    std::ofstream f(dir / "ok.cfg");
    f << "steps = 5\neval.every = 5\noutput.dir = " << (dir / "run").string()
      << "\ntarget.density.bits = 2\npolicy.hidden = 8\n";
    std::ofstream g(dir / "bad.cfg");
    g << "objective.alpha = 2\n";
  }
  CHECK(runCli("train " + (dir / "ok.cfg").string()) == 0);
  CHECK(fs::exists(dir / "run" / "metrics.csv"));
  CHECK(runCli("train " + (dir / "bad.cfg").string()) == 1);
  CHECK(runCli("train " + (dir / "missing.cfg").string()) == 1);
  CHECK(runCli("train " + (dir / "ok.cfg").string() + " --set objective.cv=nope") == 1);
  CHECK(runCli("verify --corrupt-psi-gradient 0.1") == 2);
  CHECK(runCli("exact " + (dir / "ok.cfg").string()) == 0);
  CHECK(runCli("plot " + (dir / "run" / "metrics.csv").string() + " --kind nll --out " + (dir / "p.svg").string()) == 0);
  CHECK(runCli("export-density --name 2spirals --bits 3 --out " + (dir / "spirals").string()) == 0);
  CHECK(fs::exists(dir / "spirals.json"));
}

}  // TEST_SUITE
