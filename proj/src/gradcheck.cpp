#include "capsnlstm/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace capsnlstm::ad {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

namespace {

double evaluate(const ScalarFunction& f, const std::vector<Tensor<double>>& point) {
  NoGradGuard no_grad;
  std::vector<Var<double>> inputs;
  inputs.reserve(point.size());
  for (const auto& t : point) inputs.push_back(Var<double>::constant(t));
  const auto out = f(inputs);
  if (out.size() != 1) throw ContractError("grad_check: function must return a one-element tensor");
  return out.value()[0];
}

}  // namespace

GradCheckResult grad_check(const ScalarFunction& f, const std::vector<Tensor<double>>& point, double step) {
  if (!(step > 0.0)) throw ContractError("grad_check: step must be positive");

  std::vector<Var<double>> leaves;
  leaves.reserve(point.size());
  for (const auto& t : point) leaves.push_back(Var<double>::leaf(t));
  backward(f(leaves));

  GradCheckResult result;
  std::vector<Tensor<double>> probe = point;
  for (std::size_t input = 0; input < point.size(); ++input) {
    for (std::size_t i = 0; i < point[input].size(); ++i) {
      const double original = point[input][i];
      probe[input][i] = original + step;
      const double plus = evaluate(f, probe);
      probe[input][i] = original - step;
      const double minus = evaluate(f, probe);
      probe[input][i] = original;

      const double numeric = (plus - minus) / (2.0 * step);
      const double analytic = leaves[input].has_grad() ? leaves[input].grad()[i] : 0.0;
      const double err = relative_error(analytic, numeric);
      ++result.coordinates;
      if (err > result.max_rel_error || result.coordinates == 1) {
        result.max_rel_error = err;
        result.worst_input = input;
        result.worst_index = i;
        result.worst_analytic = analytic;
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

GradCheckResult grad_check_leaves(const std::function<Var<double>()>& loss, std::span<const Var<double>> leaves,
                                  double step) {
  if (!(step > 0.0)) throw ContractError("grad_check: step must be positive");
  for (auto leaf : leaves) {
    if (!leaf.requires_grad()) throw ContractError("grad_check: inputs must be leaves that require gradients");
    leaf.zero_grad();
  }
  backward(loss());
  std::vector<Tensor<double>> analytic;
  for (const auto& leaf : leaves)
    analytic.push_back(leaf.has_grad() ? leaf.grad() : Tensor<double>(leaf.shape()));

  const auto eval = [&] {
    NoGradGuard no_grad;
    return loss().value()[0];
  };
  GradCheckResult result;
  for (std::size_t input = 0; input < leaves.size(); ++input) {
    auto leaf = leaves[input];
    auto& value = leaf.mutable_value();
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double original = value[i];
      value[i] = original + step;
      const double plus = eval();
      value[i] = original - step;
      const double minus = eval();
      value[i] = original;

      const double numeric = (plus - minus) / (2.0 * step);
      const double err = relative_error(analytic[input][i], numeric);
      ++result.coordinates;
      if (err > result.max_rel_error || result.coordinates == 1) {
        result.max_rel_error = err;
        result.worst_input = input;
        result.worst_index = i;
        result.worst_analytic = analytic[input][i];
        result.worst_numeric = numeric;
      }
    }
  }
  for (auto leaf : leaves) leaf.zero_grad();
  return result;
}

}  // namespace capsnlstm::ad
