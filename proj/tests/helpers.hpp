#pragma once

#include <cmath>
#include <vector>

#include "gfnvi/policy.hpp"
#include "gfnvi/targets.hpp"

namespace testutil {

struct Model {
  gfnvi::Policy policy;
  std::vector<double> params;
};

inline Model makeModel(int dim, std::vector<int> hidden, gfnvi::BackwardMode mode, std::uint64_t seed,
                       double initScale = 1.0, gfnvi::LogitInput input = gfnvi::LogitInput::CurrentState) {
  gfnvi::PolicyConfig cfg;
  cfg.dim = dim;
  cfg.hidden = std::move(hidden);
  cfg.backward = mode;
  cfg.initScale = initScale;
  cfg.logitInput = input;
  Model m{gfnvi::Policy(cfg), {}};
  m.params.assign(m.policy.parameterCount(), 0.0);
  if (seed != 0) {
    gfnvi::Rng rng(seed, gfnvi::StreamTag::Init);
    m.policy.initialize(m.params, rng);
  }
  return m;
}

inline gfnvi::TabularTarget randomTabular(int dim, std::uint64_t seed) {
  gfnvi::Rng rng(seed, gfnvi::StreamTag::Custom, 7);
  std::vector<double> m(std::size_t{1} << dim);
  for (double& v : m) v = 0.2 + 2.0 * rng.uniform();
  return gfnvi::TabularTarget(dim, m);
}

inline gfnvi::TabularTarget uniformTabular(int dim) {
  return gfnvi::TabularTarget(dim, std::vector<double>(std::size_t{1} << dim, 1.0));
}

inline double totalVariation(const std::vector<double>& a, const std::vector<double>& b) {
  double t = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) t += std::abs(a[i] - b[i]);
  return 0.5 * t;
}

inline double maxAbsDiff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace testutil
