#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "markovlm/markov.hpp"
#include "markovlm/params.hpp"

namespace markovlm {

/// How the blocks a construction leaves free are filled.
struct FreeFill {
  enum class Mode { Zeros, Gaussian };
  Mode mode = Mode::Zeros;
  std::uint64_t seed = 0;
  double std_dev = 0.02;

  static FreeFill zeros() { return {}; }
  static FreeFill gaussian(std::uint64_t seed, double std_dev = 0.02) {
    return {Mode::Gaussian, seed, std_dev};
  }
};

enum class PointKind { GlobalLowSwitch, GlobalHighSwitch, Unigram, UnigramUntied };

const char* to_string(PointKind kind) noexcept;
/// Accepts both "global_low_switch" and the CLI spelling "global-low".
PointKind point_kind_from_string(const std::string& name);

/// ln((1-p)(1-q)/(pq)); positive iff p + q < 1.
double switch_log_ratio(double p, double q);

/// FF weight of the high-switch construction for an r x d first FF matrix.
double high_switch_weight(double p, double q, int d, int r);

/// Bigram minimum for p + q < 1: e = a = sqrt(lambda/d) 1, p_n = 0, W_O = 0,
/// W_2 = 0, b = ln(p/(1-p)). Tied or untied per config.
ParamSet build_global_low_switch(double p, double q, const ModelConfig& config,
                                 const FreeFill& fill = {});

/// Bigram minimum through the ReLU: e = a = 1, p_n = -1/2, W_O = 0,
/// W_1 = w* 11^T, W_2 = -W_1^T, b = ln(p/(1-p)) + d/2.
ParamSet build_global_high_switch(double p, double q, const ModelConfig& config,
                                  const FreeFill& fill = {});

/// e = a = 0, W_O = 0, W_2 = 0, b = ln(p/q). Positional encodings, W_{Q,K,V}
/// and W_1 are free. `tied` overrides config.tied.
ParamSet build_unigram_point(double p, double q, const ModelConfig& config, bool tied,
                             const FreeFill& fill = {});

/// Low switch when p + q < 1, otherwise high switch.
ParamSet build_global_minimum(double p, double q, const ModelConfig& config,
                              const FreeFill& fill = {});

struct Check {
  std::string name;
  double value = 0.0;
  double tolerance = 0.0;
  /// "le": value <= tolerance, "ge": value >= tolerance.
  std::string relation = "le";
  bool pass = false;
  std::string note;
};

struct ConstructionReport {
  PointKind kind;
  MarkovKernel kernel;
  ParamSet params;
  int horizon;
  std::vector<Check> checks;

  bool all_pass() const;
  const Check& check(const std::string& name) const;
};

inline constexpr int kCertifyHorizon = 8;

/// Runs the checks that apply to `kind`:
///   global:  loss_kl_gap, prediction_kernel_deviation, loss_minus_entropy_rate, grad_inf_norm
///   unigram: prediction_pi1_deviation, loss_minus_marginal_entropy, grad_inf_norm,
///            alpha_block_vs_analytic, rest_block_max, analytic_alpha_eigen_deviation,
///            hessian_min_eigenvalue
///   untied:  prediction_pi1_deviation, loss_minus_marginal_entropy, grad_inf_norm,
///            negative_curvature, positive_curvature
ConstructionReport certify(const ParamSet& point, PointKind kind, const MarkovKernel& kernel,
                           int horizon = kCertifyHorizon);

/// Builds the point for `kind` and certifies it. A regime violation comes back
/// as a report with a single failing "regime" check rather than an exception.
ConstructionReport build_and_certify(PointKind kind, double p, double q, const ModelConfig& config,
                                     int horizon = kCertifyHorizon, const FreeFill& fill = {});

/// Largest |f(x_1^n) - P(x_{n+1}=1 | x_n)| over all prefixes of all 2^N
/// sequences (binary sigmoid head).
double max_kernel_deviation(const ParamSet& params, const MarkovKernel& kernel, int horizon);
/// Largest |f(x_1^n) - target| over all prefixes.
double max_constant_deviation(const ParamSet& params, double target, int horizon);

}  // namespace markovlm
