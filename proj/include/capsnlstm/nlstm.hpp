#pragma once

#include <random>
#include <span>
#include <string>
#include <vector>

#include "capsnlstm/autodiff.hpp"
#include "capsnlstm/parameters.hpp"

namespace capsnlstm::rnn {

// Gate blocks inside the fused weight matrices, each Hd wide.
enum Gate : std::size_t { kInput = 0, kForget = 1, kOutput = 2, kCandidate = 3 };

std::size_t lstm_param_count(std::size_t input, std::size_t hidden);
// Outer LSTM(D,Hd) plus an inner LSTM(Hd,Hd).
std::size_t nlstm_param_count(std::size_t input, std::size_t hidden);

/// Fused gate weights: wx [D,4Hd], wh [Hd,4Hd], b [4Hd], blocks ordered
/// i, f, o, c. Forget-gate biases start at 1, everything else Glorot / 0.
template <typename T>
struct GateWeights {
  ad::Var<T> wx, wh, b;
  std::size_t input = 0, hidden = 0;

  static GateWeights create(std::size_t input, std::size_t hidden, ParameterSet<T>& params,
                            const std::string& prefix, std::mt19937_64& rng);
  // x W_x + h W_h + b, length 4Hd.
  ad::Var<T> preactivation(const ad::Var<T>& x, const ad::Var<T>& h) const;
};

template <typename T>
struct LstmState {
  ad::Var<T> h, c;
  static LstmState zeros(std::size_t hidden);
};

/// h is the outer hidden, c the outer cell value (equal to the inner hidden
/// of the same step), inner_c the inner memory cell.
template <typename T>
struct NlstmState {
  ad::Var<T> h, c, inner_c;
  static NlstmState zeros(std::size_t hidden);
};

// Sigmoid gate activations seen during a step, appended in evaluation order.
template <typename T>
using GateTrace = std::vector<Tensor<T>>;

template <typename T>
class LstmCell {
 public:
  using State = LstmState<T>;

  LstmCell(std::size_t input, std::size_t hidden, ParameterSet<T>& params, const std::string& prefix,
           std::mt19937_64& rng);

  State step(const ad::Var<T>& x, const State& state, GateTrace<T>* trace = nullptr) const;
  State initial_state() const { return State::zeros(weights_.hidden); }

  std::size_t input_size() const noexcept { return weights_.input; }
  std::size_t hidden_size() const noexcept { return weights_.hidden; }
  const GateWeights<T>& weights() const noexcept { return weights_; }

 private:
  GateWeights<T> weights_;
};

template <typename T>
class NlstmCell {
 public:
  using State = NlstmState<T>;

  NlstmCell(std::size_t input, std::size_t hidden, ParameterSet<T>& params, const std::string& prefix,
            std::mt19937_64& rng);

  State step(const ad::Var<T>& x, const State& state, GateTrace<T>* trace = nullptr) const;
  State initial_state() const { return State::zeros(outer_.hidden); }

  std::size_t input_size() const noexcept { return outer_.input; }
  std::size_t hidden_size() const noexcept { return outer_.hidden; }
  const GateWeights<T>& outer() const noexcept { return outer_; }
  const GateWeights<T>& inner() const noexcept { return inner_; }

 private:
  GateWeights<T> outer_, inner_;
};

template <typename T>
struct Unrolled {
  ad::Var<T> last;                  // h_T
  std::vector<ad::Var<T>> hiddens;  // h_1..h_T
  ad::Var<T> trace() const;         // [T,Hd]
};

/// Runs `cell` over the inputs from a zero state.
template <typename Cell, typename T>
Unrolled<T> unroll(const Cell& cell, std::span<const ad::Var<T>> inputs, GateTrace<T>* trace = nullptr) {
  if (inputs.empty()) throw ContractError("unroll: empty sequence");
  Unrolled<T> out;
  auto state = cell.initial_state();
  for (const auto& x : inputs) {
    state = cell.step(x, state, trace);
    out.hiddens.push_back(state.h);
  }
  out.last = state.h;
  return out;
}

/// Same over the rows of a [T,D] tensor.
template <typename Cell, typename T>
Unrolled<T> unroll(const Cell& cell, const ad::Var<T>& sequence, GateTrace<T>* trace = nullptr) {
  if (sequence.value().rank() != 2 || sequence.shape()[0] == 0) throw ContractError("unroll: expected [T,D], T >= 1");
  std::vector<ad::Var<T>> rows;
  for (std::size_t t = 0; t < sequence.shape()[0]; ++t) rows.push_back(ad::row(sequence, t));
  return unroll<Cell, T>(cell, std::span<const ad::Var<T>>(rows), trace);
}

extern template class LstmCell<float>;
extern template class LstmCell<double>;
extern template class NlstmCell<float>;
extern template class NlstmCell<double>;

}  // namespace capsnlstm::rnn
