#include "capsnlstm/nlstm.hpp"

#include <algorithm>
#include <cmath>

namespace capsnlstm::rnn {

using ad::Var;

std::size_t lstm_param_count(std::size_t input, std::size_t hidden) {
  return 4 * ((input + hidden) * hidden + hidden);
}

std::size_t nlstm_param_count(std::size_t input, std::size_t hidden) {
  return lstm_param_count(input, hidden) + lstm_param_count(hidden, hidden);
}

template <typename T>
GateWeights<T> GateWeights<T>::create(std::size_t input, std::size_t hidden, ParameterSet<T>& params,
                                      const std::string& prefix, std::mt19937_64& rng) {
  if (input == 0 || hidden == 0) throw ContractError("recurrent cell: input and hidden sizes must be positive");
  GateWeights w;
  w.input = input;
  w.hidden = hidden;
  w.wx = params.add(prefix + "Wx", glorot_uniform<T>({input, 4 * hidden}, input, hidden, rng));
  w.wh = params.add(prefix + "Wh", glorot_uniform<T>({hidden, 4 * hidden}, hidden, hidden, rng));
  Tensor<T> bias(Shape{4 * hidden});
  for (std::size_t j = 0; j < hidden; ++j) bias[kForget * hidden + j] = T{1};
  w.b = params.add(prefix + "b", std::move(bias));
  return w;
}

template <typename T>
Var<T> GateWeights<T>::preactivation(const Var<T>& x, const Var<T>& h) const {
  if (x.value().rank() != 1 || x.size() != input)
    throw ShapeError("recurrent cell: expected input [" + std::to_string(input) + "], got " +
                     shape_to_string(x.shape()));
  return ad::add(ad::add(ad::matmul(x, wx), ad::matmul(h, wh)), b);
}

template <typename T>
LstmState<T> LstmState<T>::zeros(std::size_t hidden) {
  return {Var<T>::constant(Tensor<T>(Shape{hidden})), Var<T>::constant(Tensor<T>(Shape{hidden}))};
}

template <typename T>
NlstmState<T> NlstmState<T>::zeros(std::size_t hidden) {
  return {Var<T>::constant(Tensor<T>(Shape{hidden})), Var<T>::constant(Tensor<T>(Shape{hidden})),
          Var<T>::constant(Tensor<T>(Shape{hidden}))};
}

namespace {

template <typename T>
Var<T> block(const Var<T>& z, Gate g, std::size_t hidden) {
  return ad::slice(z, static_cast<std::size_t>(g) * hidden, hidden);
}

template <typename T>
void check_finite(const Var<T>& v, const char* what) {
  const auto data = v.value().data();
  if (!std::all_of(data.begin(), data.end(), [](T x) { return std::isfinite(x); }))
    throw NumericError(std::string("recurrent cell: non-finite ") + what);
}

template <typename T>
void record_gates(GateTrace<T>* trace, std::initializer_list<Var<T>> gates) {
  if (!trace) return;
  for (const auto& g : gates) trace->push_back(g.value());
}

template <typename T>
void check_state(const Var<T>& v, std::size_t hidden, const char* what) {
  if (v.value().rank() != 1 || v.size() != hidden)
    throw ShapeError(std::string("recurrent cell: ") + what + " must be [" + std::to_string(hidden) + "], got " +
                     shape_to_string(v.shape()));
}

}  // namespace

template <typename T>
LstmCell<T>::LstmCell(std::size_t input, std::size_t hidden, ParameterSet<T>& params, const std::string& prefix,
                      std::mt19937_64& rng)
    : weights_(GateWeights<T>::create(input, hidden, params, prefix, rng)) {}

template <typename T>
LstmState<T> LstmCell<T>::step(const Var<T>& x, const State& state, GateTrace<T>* trace) const {
  const std::size_t hd = weights_.hidden;
  check_state(state.h, hd, "h");
  check_state(state.c, hd, "c");
  const auto z = weights_.preactivation(x, state.h);
  const auto i = ad::sigmoid(block(z, kInput, hd));
  const auto f = ad::sigmoid(block(z, kForget, hd));
  const auto o = ad::sigmoid(block(z, kOutput, hd));
  const auto g = ad::tanh(block(z, kCandidate, hd));
  State next;
  next.c = f * state.c + i * g;
  next.h = o * ad::tanh(next.c);
  record_gates(trace, {i, f, o});
  check_finite(next.c, "cell state");
  check_finite(next.h, "hidden state");
  return next;
}

template <typename T>
NlstmCell<T>::NlstmCell(std::size_t input, std::size_t hidden, ParameterSet<T>& params, const std::string& prefix,
                        std::mt19937_64& rng)
    : outer_(GateWeights<T>::create(input, hidden, params, prefix + "outer.", rng)),
      inner_(GateWeights<T>::create(hidden, hidden, params, prefix + "inner.", rng)) {}

template <typename T>
NlstmState<T> NlstmCell<T>::step(const Var<T>& x, const State& state, GateTrace<T>* trace) const {
  const std::size_t hd = outer_.hidden;
  check_state(state.h, hd, "h");
  check_state(state.c, hd, "c");
  check_state(state.inner_c, hd, "inner c");

  const auto z = outer_.preactivation(x, state.h);
  const auto i = ad::sigmoid(block(z, kInput, hd));
  const auto f = ad::sigmoid(block(z, kForget, hd));
  const auto o = ad::sigmoid(block(z, kOutput, hd));
  // Inner unit inputs, built from the outer candidate and the outer forget gate.
  const auto inner_x = i * ad::tanh(block(z, kCandidate, hd));
  const auto inner_h = f * state.c;

  const auto zi = inner_.preactivation(inner_x, inner_h);
  const auto ii = ad::sigmoid(block(zi, kInput, hd));
  const auto fi = ad::sigmoid(block(zi, kForget, hd));
  const auto oi = ad::sigmoid(block(zi, kOutput, hd));
  const auto gi = ad::tanh(block(zi, kCandidate, hd));

  State next;
  next.inner_c = fi * state.inner_c + ii * gi;
  next.c = oi * ad::tanh(next.inner_c);
  next.h = o * ad::tanh(next.c);
  record_gates(trace, {i, f, o, ii, fi, oi});
  check_finite(next.inner_c, "inner cell state");
  check_finite(next.h, "hidden state");
  return next;
}

template <typename T>
Var<T> Unrolled<T>::trace() const {
  if (hiddens.empty()) throw ContractError("unroll: empty trace");
  return ad::reshape(ad::concat(hiddens), Shape{hiddens.size(), hiddens.front().size()});
}

template struct GateWeights<float>;
template struct GateWeights<double>;
template struct LstmState<float>;
template struct LstmState<double>;
template struct NlstmState<float>;
template struct NlstmState<double>;
template class LstmCell<float>;
template class LstmCell<double>;
template class NlstmCell<float>;
template class NlstmCell<double>;
template struct Unrolled<float>;
template struct Unrolled<double>;

}  // namespace capsnlstm::rnn
