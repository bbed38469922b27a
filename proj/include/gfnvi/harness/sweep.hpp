#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "gfnvi/harness/config.hpp"

namespace gfnvi {

/// A grid of runs. `sweep.<key> = v1, v2, ...` lines in a config add an axis
/// over `<key>`; `sweep.seeds = 0, 1, 2` lists the seeds. Every other line is a
/// base setting shared by all cells.
struct SweepAxis {
  std::string key;
  std::vector<std::string> values;
};

struct SweepCell {
  std::size_t index = 0;
  std::string label;  // "key=value;key=value"
  std::vector<std::pair<std::string, std::string>> settings;
};

struct SweepPlan {
  KeyValues base;
  std::vector<SweepAxis> axes;
  std::vector<std::uint64_t> seeds;
  std::string outputDir;

  std::vector<SweepCell> cells() const;
  std::size_t runCount() const { return cells().size() * seeds.size(); }
};

SweepPlan planSweep(const KeyValues& kv);

struct SweepResult {
  std::size_t runs = 0;
  std::size_t failed = 0;
};

/// Runs every (cell, seed) pair into `<output.dir>/cell_<i>_seed_<s>` and writes
/// runs.csv (all evaluation rows) and summary.csv (one row per cell, final
/// metrics as mean and sample sd over seeds, plus the exact log Z when the
/// target is fixed and has D <= 16). Threads: GFNVI_THREADS, default
/// hardware concurrency.
SweepResult runSweep(const SweepPlan& plan, std::ostream* log = nullptr);

}  // namespace gfnvi
