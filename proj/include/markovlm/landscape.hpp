#pragma once

#include <span>
#include <string>

#include <Eigen/Dense>

#include "markovlm/markov.hpp"
#include "markovlm/params.hpp"

namespace markovlm {

/// Closed-form Hessian over (b, a) (tied) or (b, a, e) (untied) at theta_pi.
struct AlphaHessian {
  Eigen::MatrixXd matrix;
  Eigen::VectorXd u;  // mean positional encoding
  Eigen::MatrixXd V;  // second-moment block (tied: plus 2(p+q-1) I)
  double scale = 0.0; // pi_0 pi_1
  bool tied = true;
};

/// `pos_encodings` is d x N with column n holding p_{n+1}.
AlphaHessian analytic_alpha_hessian(const Eigen::Ref<const Eigen::MatrixXd>& pos_encodings,
                                    double p, double q, bool tied);

/// V - u u^T = 2(p+q-1) I + Cov({p_n}).
Eigen::MatrixXd schur_gap(const Eigen::Ref<const Eigen::MatrixXd>& pos_encodings, double p,
                          double q);

struct CurvatureResult {
  bool found = false;
  Eigen::VectorXd direction;  // unit, flat parameter layout
  double curvature = 0.0;     // d^T H d for the unit direction
  double raw_form = 0.0;      // closed-form value of the unnormalised family member
  double t = 0.0;
  std::string method;         // "constructive", "eigenvector" or "none"
};

/// Saddle direction at an untied unigram point: v_1 = -t v_2 on (a, e) with
/// the b component -u^T v_1, halving t from 0.1 until the measured curvature
/// is negative, then the bottom Hessian eigenvector as a fallback.
CurvatureResult find_negative_curvature(const ParamSet& params, const MarkovKernel& kernel,
                                        int horizon);

struct RankOneFit {
  Eigen::VectorXd v;  // sign vector of e
  double e = 0.0;
  double p = 0.0;
  double w1 = 0.0;
  int beta = 0;
  double residual = 0.0;  // ||W_1 - w1 w v^T||_F / ||W_1||_F
};

struct InterpretationReport {
  double attention_ratio = 0.0;
  double positional_spread = 0.0;
  RankOneFit fit;
  double b = 0.0;
  double logit_one = 0.0;  // x_n = 1
  double logit_zero = 0.0; // x_n = 0
  double prob_one = 0.0;
  double prob_zero = 0.0;
  bool degenerate = false;
  std::string note;
};

struct FormulaOutput {
  double logit_one, logit_zero, prob_one, prob_zero;
};

/// logit = e d (e x + p)(1 + w1^2 d ((2 beta - r) x + r - beta)) + b.
FormulaOutput low_rank_formula(double e, double p, double w1, double b, int beta, int d, int r);

/// Reads a trained single-layer binary model: attention share of y_n over the
/// probe batch, positional spread, and the sign-structured rank-one fit that
/// feeds low_rank_formula.
InterpretationReport interpret(const ParamSet& params, std::span<const TokenSequence> probe_batch);

}  // namespace markovlm
