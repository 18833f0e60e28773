#pragma once

#include <type_traits>

// Reverse-mode pass through the forward trace. Hand-derived adjoints per
// layer; the gradient is accumulated into a ParamSetT of the same config so
// that, under tying, head and embedding contributions land in one block.

#include <Eigen/Dense>

#include "markovlm/model.hpp"

namespace markovlm {

template <typename Scalar>
struct BackwardWorkspaceT {
  MatrixX<Scalar> dlogits, dz, dy, drelu, dhidden, dmixed, dx;
  MatrixX<Scalar> dq, dk, dv, datt;
};

/// Cross-entropy of target distributions (columns of `targets`, S x n) against
/// the trace's predictions, summed over positions and scaled by `weight`.
template <typename Scalar>
Scalar cross_entropy(const ForwardTraceT<Scalar>& trace,
                     const std::type_identity_t<Eigen::Ref<const MatrixX<Scalar>>>& targets, std::type_identity_t<Scalar> weight,
                     Head head) {
  Scalar total = 0;
  const int n = trace.length();
  for (int i = 0; i < n; ++i) {
    if (head == Head::Sigmoid) {
      const Scalar l = trace.logits(0, i);
      total += targets(1, i) * softplus(-l) + targets(0, i) * softplus(l);
    } else {
      using std::exp;
      using std::log;
      const Scalar peak = trace.logits.col(i).maxCoeff();
      const Scalar lse = peak + log((trace.logits.col(i).array() - peak).exp().sum());
      for (Eigen::Index j = 0; j < targets.rows(); ++j) {
        if (targets(j, i) != Scalar(0)) total += targets(j, i) * (lse - trace.logits(j, i));
      }
    }
  }
  return weight * total;
}

/// Adds weight * d/dtheta [sum_n CE(targets_n, f_n)] into `grad` and returns
/// the weighted loss.
template <typename Scalar>
Scalar accumulate_backward(const ParamSetT<Scalar>& params, const ForwardTraceT<Scalar>& trace,
                           const std::type_identity_t<Eigen::Ref<const MatrixX<Scalar>>>& targets, std::type_identity_t<Scalar> weight,
                           ParamSetT<Scalar>& grad, BackwardWorkspaceT<Scalar>& ws) {
  const ModelConfig& cfg = params.config();
  const int n = trace.length();
  const int dh = cfg.head_dim();
  const Scalar inv_scale = Scalar(1) / std::sqrt(static_cast<Scalar>(cfg.d));
  if (targets.rows() != cfg.states || targets.cols() != n) {
    throw Error(ErrorKind::ShapeMismatch, "targets must be S x n");
  }

  const Scalar loss = cross_entropy(trace, targets, weight, cfg.head);

  // d loss / d logits.
  if (cfg.head == Head::Sigmoid) {
    ws.dlogits.resize(1, n);
    for (int i = 0; i < n; ++i) {
      ws.dlogits(0, i) =
          weight * ((targets(0, i) + targets(1, i)) * trace.probs(1, i) - targets(1, i));
    }
  } else {
    ws.dlogits.resize(cfg.states, n);
    for (int i = 0; i < n; ++i) {
      ws.dlogits.col(i) = weight * (targets.col(i).sum() * trace.probs.col(i) - targets.col(i));
    }
  }

  const MatrixX<Scalar>& z_final = trace.final_z();
  grad.head_weight().noalias() += ws.dlogits * z_final.transpose();
  grad.bias().col(0) += ws.dlogits.rowwise().sum();
  ws.dz.noalias() = params.head_weight().transpose() * ws.dlogits;

  for (int l = cfg.layers - 1; l >= 0; --l) {
    const LayerTraceT<Scalar>& lt = trace.layers[static_cast<std::size_t>(l)];
    const LayerParamsT<Scalar>& w = params.layer(l);
    LayerParamsT<Scalar>& g = grad.layer(l);

    // FF block: z = y + W2 relu(W1 y).
    g.w2.noalias() += ws.dz * lt.relu.transpose();
    ws.drelu.noalias() = w.w2.transpose() * ws.dz;
    ws.dhidden = (lt.hidden.array() > Scalar(0)).select(ws.drelu, Scalar(0));
    g.w1.noalias() += ws.dhidden * lt.y.transpose();
    ws.dy = ws.dz;
    ws.dy.noalias() += w.w1.transpose() * ws.dhidden;

    // Attention block: y = x + W_O concat_h(V_h att_h^T).
    g.wo.noalias() += ws.dy * lt.mixed.transpose();
    ws.dmixed.noalias() = w.wo.transpose() * ws.dy;
    ws.dq.resize(cfg.m, n);
    ws.dk.resize(cfg.m, n);
    ws.dv.resize(cfg.m, n);
    for (int h = 0; h < cfg.heads; ++h) {
      const MatrixX<Scalar>& att = lt.attention[static_cast<std::size_t>(h)];
      const auto d_out = ws.dmixed.middleRows(h * dh, dh);
      ws.dv.middleRows(h * dh, dh).noalias() = d_out * att;
      ws.datt.noalias() = d_out.transpose() * lt.values.middleRows(h * dh, dh);
      // Row-wise softmax adjoint over the causal support k <= q.
      for (int q = 0; q < n; ++q) {
        Scalar dot = 0;
        for (int k = 0; k <= q; ++k) dot += att(q, k) * ws.datt(q, k);
        for (int k = 0; k <= q; ++k) ws.datt(q, k) = att(q, k) * (ws.datt(q, k) - dot) * inv_scale;
        for (int k = q + 1; k < n; ++k) ws.datt(q, k) = Scalar(0);
      }
      ws.dq.middleRows(h * dh, dh).noalias() =
          lt.keys.middleRows(h * dh, dh) * ws.datt.transpose();
      ws.dk.middleRows(h * dh, dh).noalias() = lt.queries.middleRows(h * dh, dh) * ws.datt;
    }
    const MatrixX<Scalar>& x = lt.input;
    g.wq.noalias() += ws.dq * x.transpose();
    g.wk.noalias() += ws.dk * x.transpose();
    g.wv.noalias() += ws.dv * x.transpose();
    ws.dx = ws.dy;
    ws.dx.noalias() += w.wq.transpose() * ws.dq;
    ws.dx.noalias() += w.wk.transpose() * ws.dk;
    ws.dx.noalias() += w.wv.transpose() * ws.dv;
    ws.dz.swap(ws.dx);
  }

  // ws.dz now holds d loss / d x (embedded inputs).
  grad.positional().leftCols(n) += ws.dz;
  if (cfg.head == Head::Sigmoid) {
    for (int i = 0; i < n; ++i) {
      if (trace.tokens[static_cast<std::size_t>(i)] == 1) {
        grad.embedding().row(0) += ws.dz.col(i).transpose();
      }
    }
  } else {
    for (int i = 0; i < n; ++i) {
      grad.embedding().row(trace.tokens[static_cast<std::size_t>(i)]) += ws.dz.col(i).transpose();
    }
  }
  return loss;
}

}  // namespace markovlm
