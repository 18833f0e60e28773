#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "markovlm/markov.hpp"
#include "markovlm/params.hpp"

namespace markovlm {

/// Flat gradient, laid out exactly as ParamSet::flatten().
using GradVector = Eigen::VectorXd;

struct LossGrad {
  double loss = 0.0;
  GradVector grad;
};

/// Mean next-token cross entropy over a batch. Every sequence carries T + 1
/// tokens (T <= N): the model reads the first T, positions 2..T+1 are targets.
double empirical_loss(const ParamSet& params, std::span<const TokenSequence> batch);
LossGrad empirical_loss_grad(const ParamSet& params, std::span<const TokenSequence> batch);

/// Exact population loss over x_1^N by enumeration. Each prefix is scored
/// against the kernel row of its last token, so only S^N sequences are
/// visited for an (N+1)-token expectation.
double exact_population_loss(const ParamSet& params, const MarkovKernel& kernel, int horizon);
LossGrad exact_loss_grad(const ParamSet& params, const MarkovKernel& kernel, int horizon);

struct KlDecomposition {
  double avg_kl = 0.0;  // (1/N) sum_n E[KL(P(.|x_n) || f(.|x_1^n))]
  double rate = 0.0;    // entropy rate
};
KlDecomposition loss_kl_decomposition(const ParamSet& params, const MarkovKernel& kernel,
                                      int horizon);

/// Largest flat dimension accepted by numerical_hessian.
inline constexpr Eigen::Index kMaxHessianDim = 512;

struct HessianReport {
  Eigen::MatrixXd matrix;        // symmetrised
  Eigen::VectorXd eigenvalues;   // ascending
  Eigen::MatrixXd eigenvectors;  // columns match eigenvalues
  double asymmetry = 0.0;        // ||H - H^T||_inf before symmetrisation
  /// Flat indices of b, the head weight and (untied) the embedding, in that
  /// order; the remaining indices make up the rest of the vector.
  std::vector<Eigen::Index> alpha_indices;
  std::vector<Eigen::Index> rest_indices;

  Eigen::MatrixXd alpha_block() const;
  double min_eigenvalue() const { return eigenvalues[0]; }
  /// Largest |H_ij| with i or j outside alpha_indices.
  double max_rest_magnitude() const;
};

/// Central differences of the exact gradient, step `step` per coordinate.
HessianReport numerical_hessian(const ParamSet& params, const MarkovKernel& kernel, int horizon,
                                double step = 1e-4);

/// d^T H d via central differences of the exact gradient along d.
double directional_curvature(const ParamSet& params, const MarkovKernel& kernel, int horizon,
                             const Eigen::Ref<const Eigen::VectorXd>& direction,
                             double step = 1e-4);

/// (b, head, [embedding]) flat indices for the given config.
std::vector<Eigen::Index> alpha_indices(const ModelConfig& config);

}  // namespace markovlm
