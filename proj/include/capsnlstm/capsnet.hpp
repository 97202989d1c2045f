#pragma once

#include <random>
#include <string>
#include <vector>

#include "capsnlstm/autodiff.hpp"
#include "capsnlstm/parameters.hpp"

namespace capsnlstm::caps {

struct ConvSpec {
  std::size_t kernel = 9;
  std::size_t channels = 128;
  std::size_t stride = 2;
};

struct CapsNetConfig {
  ConvSpec conv1{9, 128, 2};
  ConvSpec primary{9, 128, 4};
  std::size_t primary_dim = 8;    // d_p
  std::size_t num_advanced = 30;  // p
  std::size_t advanced_dim = 16;  // d_a
  std::size_t routing_iters = 3;
  // When set, the routing logits are computed outside the graph and only the
  // final weighted sum is differentiated.
  bool detach_routing = false;

  void validate() const;

  static CapsNetConfig full() { return {}; }
  static CapsNetConfig desk() { return {{5, 16, 2}, {5, 16, 2}, 4, 4, 4, 3, false}; }
};

/// Symbolic shapes of one forward pass.
struct CapsNetShapes {
  Shape input;     // [H,W,1]
  Shape conv1;     // [H1,W1,C1]
  Shape primary;   // [H2,W2,C2]
  Shape capsules;  // [N,d_p]
  Shape advanced;  // [p,d_a]
  Shape flat;      // [p*d_a]
};

CapsNetShapes capsnet_shapes(const CapsNetConfig& config, std::size_t rows, std::size_t cols);

struct LayerParamCount {
  std::string name;
  std::size_t count = 0;
};

/// conv layers k*k*Cin*Cout + Cout; TrafficCaps N*p*d_p*d_a (no bias).
std::vector<LayerParamCount> capsnet_param_count(const CapsNetConfig& config, std::size_t rows, std::size_t cols);

/// Scales each row (last axis) by |s| / (1 + |s|^2), i.e. |s|^2/(1+|s|^2) * s/|s|.
/// The norm is floored at 1e-12.
template <typename T>
ad::Var<T> squash(const ad::Var<T>& s);

/// u: [N,d_p], W: [N,p,d_p,d_a] -> u_hat[i,j,:] = u[i,:] * W[i,j]  ([N,p,d_a]).
template <typename T>
ad::Var<T> predict_vectors(const ad::Var<T>& u, const ad::Var<T>& weights);

/// s[j,:] = sum_i c[i,j] * u_hat[i,j,:]  (c: [N,p], u_hat: [N,p,d_a]).
template <typename T>
ad::Var<T> weighted_capsule_sum(const ad::Var<T>& coupling, const ad::Var<T>& u_hat);

/// a[i,j] = u_hat[i,j,:] . v[j,:]
template <typename T>
ad::Var<T> agreement(const ad::Var<T>& u_hat, const ad::Var<T>& v);

template <typename T>
struct RoutingState {
  ad::Var<T> logits;        // b: [N,p]
  ad::Var<T> coefficients;  // c: [N,p]
};

template <typename T>
struct RoutingIteration {
  RoutingState<T> state;  // c used by this iteration, b after its update
  ad::Var<T> outputs;     // v: [p,d_a]
};

/// One pass of: c = softmax(b) over advanced capsules; s = sum_i c u_hat;
/// v = squash(s); b += u_hat . v.
template <typename T>
RoutingIteration<T> routing_iteration(const ad::Var<T>& u_hat, const ad::Var<T>& logits);

template <typename T>
struct RoutingResult {
  ad::Var<T> outputs;  // v: [p,d_a], every row norm < 1
  Tensor<T> coefficients;
  Tensor<T> logits;
};

/// Routing from zero logits for `iterations` rounds. Throws NumericError
/// naming the iteration if anything turns non-finite.
template <typename T>
RoutingResult<T> dynamic_routing(const ad::Var<T>& u_hat, std::size_t iterations, bool detach = false);

/// Conv(ReLU) -> PrimaryCaps conv -> capsules (squashed) -> TrafficCaps routing
/// -> flattened [p*d_a]. Weights live in the caller's ParameterSet.
template <typename T>
class CapsNet {
 public:
  CapsNet(const CapsNetConfig& config, std::size_t rows, std::size_t cols, ParameterSet<T>& params,
          const std::string& prefix, std::mt19937_64& rng);

  // frame: [H,W,1]
  ad::Var<T> forward(const ad::Var<T>& frame) const;

  const CapsNetConfig& config() const noexcept { return config_; }
  const CapsNetShapes& shapes() const noexcept { return shapes_; }
  std::size_t output_size() const noexcept { return shapes_.flat[0]; }

 private:
  CapsNetConfig config_;
  CapsNetShapes shapes_;
  ad::Var<T> conv1_kernel_, conv1_bias_, primary_kernel_, primary_bias_, transform_;
};

extern template class CapsNet<float>;
extern template class CapsNet<double>;

}  // namespace capsnlstm::caps
