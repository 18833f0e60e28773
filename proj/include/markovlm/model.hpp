#pragma once

// Forward pass of the attention-only-skip transformer: token + positional
// embedding, L x (causal softmax attention, ReLU FF), each with a residual
// skip, then a linear head and sigmoid/softmax. No layer norm, no dropout.

#include <cmath>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "markovlm/error.hpp"
#include "markovlm/markov.hpp"
#include "markovlm/params.hpp"

namespace markovlm {

template <typename Scalar>
struct LayerTraceT {
  MatrixX<Scalar> input;                 // d x n
  MatrixX<Scalar> queries, keys, values; // m x n
  std::vector<MatrixX<Scalar>> attention;  // per head, n x n; row = query, col = key
  MatrixX<Scalar> mixed;                 // m x n, concatenated head outputs
  MatrixX<Scalar> attn_out;              // d x n, W_O * mixed
  MatrixX<Scalar> y;                     // d x n
  MatrixX<Scalar> hidden;                // r x n, pre-activation W_1 y
  MatrixX<Scalar> relu;                  // r x n
  MatrixX<Scalar> z;                     // d x n
};

/// Per-position intermediates of one forward pass. Column n of each matrix
/// belongs to position n + 1 of the sequence.
template <typename Scalar>
struct ForwardTraceT {
  std::vector<int> tokens;
  std::vector<LayerTraceT<Scalar>> layers;
  MatrixX<Scalar> logits;  // K x n (K = 1 for the sigmoid head)
  MatrixX<Scalar> probs;   // S x n, column-stochastic

  int length() const noexcept { return static_cast<int>(tokens.size()); }
  const MatrixX<Scalar>& embedded() const { return layers.front().input; }
  const MatrixX<Scalar>& final_z() const { return layers.back().z; }
};

using LayerTrace = LayerTraceT<double>;
using ForwardTrace = ForwardTraceT<double>;

template <typename Scalar>
Scalar sigmoid(Scalar x) {
  using std::exp;
  if (x >= Scalar(0)) return Scalar(1) / (Scalar(1) + exp(-x));
  const Scalar ex = exp(x);
  return ex / (Scalar(1) + ex);
}

/// log(1 + exp(x)) without overflow.
template <typename Scalar>
Scalar softplus(Scalar x) {
  using std::exp;
  using std::log1p;
  if (x > Scalar(0)) return x + log1p(exp(-x));
  return log1p(exp(x));
}

template <typename Scalar>
void check_tokens(const ModelConfig& config, std::span<const int> tokens) {
  if (tokens.empty() || static_cast<int>(tokens.size()) > config.N) {
    throw Error(ErrorKind::ShapeMismatch, "sequence length " + std::to_string(tokens.size()) +
                                              " outside [1, N=" + std::to_string(config.N) + "]");
  }
  for (int t : tokens) {
    if (t < 0 || t >= config.states) {
      throw Error(ErrorKind::OutOfRange, "token " + std::to_string(t) + " outside vocabulary of size " +
                                             std::to_string(config.states));
    }
  }
}

/// Runs the model on `tokens`, reusing the storage in `trace`.
template <typename Scalar>
void forward_into(const ParamSetT<Scalar>& params, std::span<const int> tokens,
                  ForwardTraceT<Scalar>& trace) {
  using std::exp;
  using std::sqrt;
  const ModelConfig& cfg = params.config();
  check_tokens<Scalar>(cfg, tokens);
  const int n = static_cast<int>(tokens.size());
  const int dh = cfg.head_dim();
  const Scalar inv_scale = Scalar(1) / sqrt(static_cast<Scalar>(cfg.d));

  trace.tokens.assign(tokens.begin(), tokens.end());
  trace.layers.resize(static_cast<std::size_t>(cfg.layers));

  MatrixX<Scalar>& x0 = trace.layers[0].input;
  x0 = params.positional().leftCols(n);
  if (cfg.head == Head::Sigmoid) {
    for (int i = 0; i < n; ++i) {
      if (tokens[i] == 1) x0.col(i) += params.embedding().row(0).transpose();
    }
  } else {
    for (int i = 0; i < n; ++i) x0.col(i) += params.embedding().row(tokens[i]).transpose();
  }

  for (int l = 0; l < cfg.layers; ++l) {
    LayerTraceT<Scalar>& lt = trace.layers[static_cast<std::size_t>(l)];
    const LayerParamsT<Scalar>& w = params.layer(l);
    if (l > 0) lt.input = trace.layers[static_cast<std::size_t>(l - 1)].z;
    const MatrixX<Scalar>& x = lt.input;

    lt.queries.noalias() = w.wq * x;
    lt.keys.noalias() = w.wk * x;
    lt.values.noalias() = w.wv * x;
    lt.attention.resize(static_cast<std::size_t>(cfg.heads));
    lt.mixed.resize(cfg.m, n);
    for (int h = 0; h < cfg.heads; ++h) {
      MatrixX<Scalar>& att = lt.attention[static_cast<std::size_t>(h)];
      att.noalias() = lt.queries.middleRows(h * dh, dh).transpose() * lt.keys.middleRows(h * dh, dh);
      for (int q = 0; q < n; ++q) {
        Scalar peak = att(q, 0) * inv_scale;
        for (int k = 1; k <= q; ++k) peak = std::max<Scalar>(peak, att(q, k) * inv_scale);
        Scalar total = 0;
        for (int k = 0; k <= q; ++k) {
          att(q, k) = exp(att(q, k) * inv_scale - peak);
          total += att(q, k);
        }
        for (int k = 0; k <= q; ++k) att(q, k) /= total;
        for (int k = q + 1; k < n; ++k) att(q, k) = Scalar(0);
      }
      lt.mixed.middleRows(h * dh, dh).noalias() = lt.values.middleRows(h * dh, dh) * att.transpose();
    }
    lt.attn_out.noalias() = w.wo * lt.mixed;
    lt.y = x + lt.attn_out;
    lt.hidden.noalias() = w.w1 * lt.y;
    lt.relu = lt.hidden.cwiseMax(Scalar(0));
    lt.z = lt.y;
    lt.z.noalias() += w.w2 * lt.relu;
  }

  const MatrixX<Scalar>& z = trace.layers.back().z;
  trace.logits.noalias() = params.head_weight() * z;
  trace.logits.colwise() += params.bias().col(0);
  trace.probs.resize(cfg.states, n);
  if (cfg.head == Head::Sigmoid) {
    for (int i = 0; i < n; ++i) {
      const Scalar f = sigmoid(trace.logits(0, i));
      trace.probs(1, i) = f;
      trace.probs(0, i) = Scalar(1) - f;
    }
  } else {
    for (int i = 0; i < n; ++i) {
      const Scalar peak = trace.logits.col(i).maxCoeff();
      trace.probs.col(i) = (trace.logits.col(i).array() - peak).exp().matrix();
      trace.probs.col(i) /= trace.probs.col(i).sum();
    }
  }
}

template <typename Scalar>
ForwardTraceT<Scalar> forward(const ParamSetT<Scalar>& params, std::span<const int> tokens) {
  ForwardTraceT<Scalar> trace;
  forward_into(params, tokens, trace);
  return trace;
}

/// Next-token distribution after `prefix` (binary: (1 - f, f)).
template <typename Scalar>
VectorX<Scalar> predict_next(const ParamSetT<Scalar>& params, std::span<const int> prefix) {
  const ForwardTraceT<Scalar> trace = forward(params, prefix);
  return trace.probs.col(trace.length() - 1);
}

}  // namespace markovlm
