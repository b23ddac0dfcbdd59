#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "rpt/core/tape.hpp"

namespace rpt {

/// A named set of parameters checked together (e.g. "doc-transformer").
struct ParameterGroup {
  std::string name;
  std::vector<std::string> prefixes;
};

struct GradcheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Denominator floor for the relative error |a - n| / max(|a|, |n|, floor).
  double denominator_floor = 1e-6;
  // 0 checks every coordinate; otherwise a seeded random subset per parameter.
  std::size_t max_coords_per_parameter = 0;
  std::uint64_t seed = 0;
  // Test hook: perturbs the analytic gradient of this group before comparing.
  std::string corrupt_group;
};

struct GroupReport {
  std::string group;
  std::size_t coordinates = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  double max_abs_grad = 0.0;
  bool passed = true;
};

/// Compares tape gradients with central finite differences. `build_loss`
/// must be a deterministic function of the parameter values that records a
/// scalar loss on the given tape.
template <std::floating_point T>
std::vector<GroupReport> gradcheck(ParameterStore<T>& store, const std::vector<ParameterGroup>& groups,
                                   const std::function<Var<T>(Tape<T>&)>& build_loss,
                                   const GradcheckOptions& opt = {}) {
  store.zero_grad();
  {
    Tape<T> tape;
    Var<T> loss = build_loss(tape);
    tape.backward(loss);
  }
  auto eval = [&] {
    Tape<T> tape;
    return static_cast<double>(build_loss(tape).value().item());
  };
  std::mt19937_64 rng(opt.seed);
  std::vector<GroupReport> reports;
  for (const auto& group : groups) {
    GroupReport rep;
    rep.group = group.name;
    for (auto& [name, p] : store) {
      const bool member = std::any_of(group.prefixes.begin(), group.prefixes.end(),
                                      [&](const std::string& pre) { return name.starts_with(pre); });
      if (!member) continue;
      std::vector<std::size_t> coords(p.value.size());
      for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
      if (opt.max_coords_per_parameter && coords.size() > opt.max_coords_per_parameter) {
        std::shuffle(coords.begin(), coords.end(), rng);
        coords.resize(opt.max_coords_per_parameter);
        std::sort(coords.begin(), coords.end());
      }
      for (std::size_t i : coords) {
        const T saved = p.value[i];
        p.value[i] = static_cast<T>(saved + opt.step);
        const double up = eval();
        p.value[i] = static_cast<T>(saved - opt.step);
        const double down = eval();
        p.value[i] = saved;
        const double numeric = (up - down) / (2.0 * opt.step);
        double analytic = static_cast<double>(p.grad[i]);
        if (group.name == opt.corrupt_group) analytic = analytic * 1.5 + 1e-3;
        const double abs_err = std::abs(analytic - numeric);
        const double denom = std::max({std::abs(analytic), std::abs(numeric), opt.denominator_floor});
        rep.max_abs_error = std::max(rep.max_abs_error, abs_err);
        rep.max_rel_error = std::max(rep.max_rel_error, abs_err / denom);
        rep.max_abs_grad = std::max(rep.max_abs_grad, std::abs(analytic));
        ++rep.coordinates;
      }
    }
    rep.passed = rep.coordinates > 0 && rep.max_rel_error < opt.tolerance;
    reports.push_back(rep);
  }
  store.zero_grad();
  return reports;
}

}  // namespace rpt
