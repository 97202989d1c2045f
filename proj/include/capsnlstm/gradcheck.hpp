#pragma once

#include <functional>
#include <span>
#include <vector>

#include "capsnlstm/autodiff.hpp"

namespace capsnlstm::ad {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  // Location of the worst coordinate.
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

using ScalarFunction = std::function<Var<double>(std::span<const Var<double>>)>;

// |a - n| / max(|a|, |n|, 1e-8)
double relative_error(double analytic, double numeric);

/// Compares reverse-mode gradients of `f` at `point` with central differences
/// on every coordinate of every input. `f` must be deterministic (reseed any
/// RNG inside it).
GradCheckResult grad_check(const ScalarFunction& f, const std::vector<Tensor<double>>& point,
                           double step = 1e-3);

/// Same check for a loss that closes over existing leaves (model parameters,
/// cell weights). Each coordinate is perturbed in place and restored.
GradCheckResult grad_check_leaves(const std::function<Var<double>()>& loss, std::span<const Var<double>> leaves,
                                  double step = 1e-3);

}  // namespace capsnlstm::ad
