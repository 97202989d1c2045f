#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "capsnlstm/gradcheck.hpp"

namespace capsnlstm {

struct GradCheckRow {
  std::string name;
  ad::GradCheckResult result;
  double seconds = 0.0;
  double step = 1e-3;
  // Diagnostic rows (other step sizes) are reported but do not decide pass/fail.
  bool gating = true;

  bool passed() const;
};

/// Finite-difference checks (64-bit, step 1e-3) of every differentiable
/// primitive, the capsule and recurrent layers, and, when `composed` is set,
/// a small and the desk-scale CapsNet+NLSTM model with the MSE loss, plus a
/// step-1e-4 diagnostic of the desk model. Points are random but kept clear of
/// ReLU and max-pool kinks.
std::vector<GradCheckRow> run_gradcheck_suite(std::uint64_t seed, bool composed = true);

inline constexpr double kGradCheckTolerance = 1e-4;

/// Moves each conv bias so no pre-activation of `frames` lies within `margin`
/// of the ReLU kink, keeping a mix of active and inactive units.
void clear_relu_kinks(const ad::Var<double>& kernel, ad::Var<double> bias, std::span<const ad::Var<double>> frames,
                      std::size_t stride, double margin, std::mt19937_64& rng);

inline bool GradCheckRow::passed() const { return result.max_rel_error < kGradCheckTolerance; }

}  // namespace capsnlstm
