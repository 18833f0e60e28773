#include "markovlm/grad.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Eigenvalues>

#include "markovlm/backward.hpp"
#include "markovlm/error.hpp"
#include "markovlm/model.hpp"

namespace markovlm {

namespace {

int batch_context(const ParamSet& params, std::span<const TokenSequence> batch) {
  if (batch.empty()) throw Error(ErrorKind::InvalidArgument, "empirical loss: empty batch");
  const std::size_t len = batch.front().size();
  for (const TokenSequence& seq : batch) {
    if (seq.size() != len) {
      throw Error(ErrorKind::ShapeMismatch, "empirical loss: sequences differ in length");
    }
  }
  if (len < 2 || static_cast<int>(len) - 1 > params.config().N) {
    throw Error(ErrorKind::ShapeMismatch,
                "empirical loss: each sequence needs T+1 tokens with 1 <= T <= N");
  }
  return static_cast<int>(len) - 1;
}

void one_hot_targets(const TokenSequence& seq, int context, int states, Eigen::MatrixXd& targets) {
  targets.setZero(states, context);
  for (int i = 0; i < context; ++i) targets(seq[static_cast<std::size_t>(i) + 1], i) = 1.0;
}

void kernel_targets(std::span<const int> tokens, const Eigen::MatrixXd& P,
                    Eigen::MatrixXd& targets) {
  targets.resize(P.cols(), static_cast<Eigen::Index>(tokens.size()));
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    targets.col(static_cast<Eigen::Index>(i)) = P.row(tokens[i]).transpose();
  }
}

void check_horizon(const ParamSet& params, const MarkovKernel& kernel, int horizon) {
  if (kernel.states() != params.config().states) {
    throw Error(ErrorKind::ShapeMismatch, "kernel and model disagree on the number of states");
  }
  if (horizon < 1 || horizon > params.config().N) {
    throw Error(ErrorKind::ShapeMismatch, "horizon must lie in [1, N]");
  }
}

template <bool WithGrad>
LossGrad batch_pass(const ParamSet& params, std::span<const TokenSequence> batch) {
  const int context = batch_context(params, batch);
  const int S = params.config().states;
  const double weight = 1.0 / (static_cast<double>(batch.size()) * context);
  ParamSet grad(params.config());
  ForwardTrace trace;
  BackwardWorkspaceT<double> ws;
  Eigen::MatrixXd targets;
  LossGrad out;
  for (const TokenSequence& seq : batch) {
    forward_into(params, std::span<const int>(seq.data(), static_cast<std::size_t>(context)), trace);
    one_hot_targets(seq, context, S, targets);
    if constexpr (WithGrad) {
      out.loss += accumulate_backward(params, trace, targets, weight, grad, ws);
    } else {
      out.loss += cross_entropy(trace, targets, weight, params.config().head);
    }
  }
  if constexpr (WithGrad) out.grad = grad.flatten();
  return out;
}

template <bool WithGrad>
LossGrad exact_pass(const ParamSet& params, const MarkovKernel& kernel, int horizon) {
  check_horizon(params, kernel, horizon);
  const Eigen::MatrixXd P = kernel.matrix();
  ParamSet grad(params.config());
  ForwardTrace trace;
  BackwardWorkspaceT<double> ws;
  Eigen::MatrixXd targets;
  LossGrad out;
  enumerate_weighted_sequences(kernel, horizon, [&](std::span<const int> tokens, double prob) {
    forward_into(params, tokens, trace);
    kernel_targets(tokens, P, targets);
    const double weight = prob / horizon;
    if constexpr (WithGrad) {
      out.loss += accumulate_backward(params, trace, targets, weight, grad, ws);
    } else {
      out.loss += cross_entropy(trace, targets, weight, params.config().head);
    }
  });
  if constexpr (WithGrad) out.grad = grad.flatten();
  return out;
}

}  // namespace

double empirical_loss(const ParamSet& params, std::span<const TokenSequence> batch) {
  return batch_pass<false>(params, batch).loss;
}

LossGrad empirical_loss_grad(const ParamSet& params, std::span<const TokenSequence> batch) {
  return batch_pass<true>(params, batch);
}

double exact_population_loss(const ParamSet& params, const MarkovKernel& kernel, int horizon) {
  return exact_pass<false>(params, kernel, horizon).loss;
}

LossGrad exact_loss_grad(const ParamSet& params, const MarkovKernel& kernel, int horizon) {
  return exact_pass<true>(params, kernel, horizon);
}

KlDecomposition loss_kl_decomposition(const ParamSet& params, const MarkovKernel& kernel,
                                      int horizon) {
  check_horizon(params, kernel, horizon);
  const Eigen::MatrixXd P = kernel.matrix();
  ForwardTrace trace;
  KlDecomposition out;
  enumerate_weighted_sequences(kernel, horizon, [&](std::span<const int> tokens, double prob) {
    forward_into(params, tokens, trace);
    double kl = 0.0;
    for (int i = 0; i < horizon; ++i) {
      for (int j = 0; j < P.cols(); ++j) {
        const double target = P(tokens[static_cast<std::size_t>(i)], j);
        kl += target * (std::log(target) - std::log(trace.probs(j, i)));
      }
    }
    out.avg_kl += prob * kl / horizon;
  });
  out.rate = entropy_rate(kernel);
  return out;
}

std::vector<Eigen::Index> alpha_indices(const ModelConfig& config) {
  const auto layout = param_layout(config);
  std::vector<Eigen::Index> idx;
  auto append = [&](const std::string& name) {
    const FieldOffset& f = find_field(layout, name);
    for (Eigen::Index k = 0; k < f.size(); ++k) idx.push_back(f.offset + k);
  };
  append("bias");
  append(config.tied ? "embedding" : "head");
  if (!config.tied) append("embedding");
  return idx;
}

Eigen::MatrixXd HessianReport::alpha_block() const {
  const auto k = static_cast<Eigen::Index>(alpha_indices.size());
  Eigen::MatrixXd block(k, k);
  for (Eigen::Index i = 0; i < k; ++i) {
    for (Eigen::Index j = 0; j < k; ++j) block(i, j) = matrix(alpha_indices[i], alpha_indices[j]);
  }
  return block;
}

double HessianReport::max_rest_magnitude() const {
  double worst = 0.0;
  for (Eigen::Index i : rest_indices) {
    worst = std::max(worst, matrix.row(i).cwiseAbs().maxCoeff());
  }
  return worst;
}

HessianReport numerical_hessian(const ParamSet& params, const MarkovKernel& kernel, int horizon,
                                double step) {
  const Eigen::Index D = params.size();
  if (D > kMaxHessianDim) {
    throw Error(ErrorKind::DimensionTooLarge, "numerical_hessian: flat dimension " +
                                                  std::to_string(D) + " exceeds 512");
  }
  check_horizon(params, kernel, horizon);
  const Eigen::VectorXd theta = params.flatten();
  ParamSet probe(params.config());
  Eigen::MatrixXd H(D, D);
  for (Eigen::Index j = 0; j < D; ++j) {
    Eigen::VectorXd shifted = theta;
    shifted[j] = theta[j] + step;
    probe.unflatten(shifted);
    const Eigen::VectorXd g_plus = exact_loss_grad(probe, kernel, horizon).grad;
    shifted[j] = theta[j] - step;
    probe.unflatten(shifted);
    const Eigen::VectorXd g_minus = exact_loss_grad(probe, kernel, horizon).grad;
    H.col(j) = (g_plus - g_minus) / (2.0 * step);
  }
  HessianReport report;
  report.asymmetry = (H - H.transpose()).cwiseAbs().maxCoeff();
  report.matrix = 0.5 * (H + H.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(report.matrix);
  report.eigenvalues = solver.eigenvalues();
  report.eigenvectors = solver.eigenvectors();
  report.alpha_indices = alpha_indices(params.config());
  std::vector<bool> in_alpha(static_cast<std::size_t>(D), false);
  for (Eigen::Index i : report.alpha_indices) in_alpha[static_cast<std::size_t>(i)] = true;
  for (Eigen::Index i = 0; i < D; ++i) {
    if (!in_alpha[static_cast<std::size_t>(i)]) report.rest_indices.push_back(i);
  }
  return report;
}

double directional_curvature(const ParamSet& params, const MarkovKernel& kernel, int horizon,
                             const Eigen::Ref<const Eigen::VectorXd>& direction, double step) {
  if (direction.size() != params.size()) {
    throw Error(ErrorKind::ShapeMismatch, "direction length differs from the parameter count");
  }
  const Eigen::VectorXd theta = params.flatten();
  const ParamSet plus = ParamSet::from_flat(params.config(), theta + step * direction);
  const ParamSet minus = ParamSet::from_flat(params.config(), theta - step * direction);
  const Eigen::VectorXd dg =
      exact_loss_grad(plus, kernel, horizon).grad - exact_loss_grad(minus, kernel, horizon).grad;
  return direction.dot(dg) / (2.0 * step);
}

}  // namespace markovlm
