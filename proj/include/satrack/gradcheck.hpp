#pragma once
// Central finite-difference gradient oracle.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "satrack/ops.hpp"
#include "satrack/rng.hpp"

namespace satrack {

struct GradCheckEntry {
  std::string name;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;

  double max_rel_error() const {
    double m = 0.0;
    for (const auto& e : entries) m = std::max(m, e.max_rel_error);
    return m;
  }
  const GradCheckEntry& worst() const {
    return *std::max_element(entries.begin(), entries.end(),
                             [](const auto& a, const auto& b) { return a.max_rel_error < b.max_rel_error; });
  }
};

struct GradCheckOptions {
  double h = 1e-6;
  /// Coordinates probed per tensor; 0 probes all of them. Larger tensors are
  /// probed at a seeded random subset.
  std::size_t max_entries = 0;
  std::uint64_t seed = 0;
};

/// |a - n| / max(1, |a|, |n|)
inline double grad_rel_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

/// Compares the tape gradient of scalar `f` with respect to each of `params`
/// (leaf tensors requiring grad) against (f(x+h) - f(x-h)) / 2h.
inline GradCheckReport finite_diff_check(const std::function<Tensor()>& f, std::vector<NamedTensor> params,
                                         const GradCheckOptions& opt = {}) {
  if (!(opt.h >= 1e-7 && opt.h <= 1e-3)) throw ConfigError("finite_diff_check: h must lie in [1e-7, 1e-3]");
  auto eval = [&] {
    NoGradGuard guard;
    return f().item();
  };
  const double f0 = eval(), f1 = eval();
  if (std::memcmp(&f0, &f1, sizeof(double)) != 0) {
    throw NumericError("finite_diff_check: function is not deterministic (" + std::to_string(f0) + " vs " +
                       std::to_string(f1) + ")");
  }
  for (auto& p : params) {
    if (!p.tensor.is_leaf() || !p.tensor.requires_grad()) {
      throw ConfigError("finite_diff_check: '" + p.name + "' is not a leaf requiring grad");
    }
    p.tensor.zero_grad();
  }
  backward(f());

  Rng rng(opt.seed);
  GradCheckReport report;
  for (auto& p : params) {
    const auto analytic = p.tensor.grad();
    std::vector<std::size_t> idx(p.tensor.numel());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (opt.max_entries > 0 && idx.size() > opt.max_entries) {
      Rng r = rng.split(p.name);
      r.shuffle(idx);
      idx.resize(opt.max_entries);
      std::sort(idx.begin(), idx.end());
    }
    GradCheckEntry e;
    e.name = p.name;
    auto data = p.tensor.mutable_data();
    for (std::size_t i : idx) {
      const double orig = data[i];
      data[i] = orig + opt.h;
      const double fp = eval();
      data[i] = orig - opt.h;
      const double fm = eval();
      data[i] = orig;
      const double num = (fp - fm) / (2.0 * opt.h);
      const double err = grad_rel_error(analytic[i], num);
      if (err >= e.max_rel_error) {
        e.max_rel_error = err;
        e.worst_index = i;
        e.analytic = analytic[i];
        e.numeric = num;
      }
      ++e.checked;
    }
    report.entries.push_back(e);
  }
  return report;
}

}  // namespace satrack
