#include "markovlm/constructions.hpp"

#include <cmath>

#include "markovlm/error.hpp"
#include "markovlm/grad.hpp"
#include "markovlm/landscape.hpp"
#include "markovlm/model.hpp"

namespace markovlm {

namespace {

ModelConfig binary_config(const ModelConfig& config) {
  config.validate();
  if (config.head != Head::Sigmoid || config.states != 2) {
    throw Error(ErrorKind::Precondition, "constructions need the binary sigmoid head");
  }
  return config;
}

void check_probabilities(double p, double q) {
  if (!(p > 0.0 && p < 1.0 && q > 0.0 && q < 1.0)) {
    throw Error(ErrorKind::InvalidArgument, "p and q must lie in (0, 1)");
  }
}

void fill_block(MatrixX<double>& block, SplitMix64& rng, const FreeFill& fill) {
  if (fill.mode == FreeFill::Mode::Zeros) {
    block.setZero();
    return;
  }
  for (Eigen::Index j = 0; j < block.cols(); ++j) {
    for (Eigen::Index i = 0; i < block.rows(); ++i) block(i, j) = fill.std_dev * rng.normal();
  }
}

void fill_attention(ParamSet& params, SplitMix64& rng, const FreeFill& fill) {
  for (auto& layer : params.layers()) {
    fill_block(layer.wq, rng, fill);
    fill_block(layer.wk, rng, fill);
    fill_block(layer.wv, rng, fill);
  }
}

Check make_check(std::string name, double value, double tolerance, std::string relation = "le") {
  Check c{std::move(name), value, tolerance, std::move(relation), false, {}};
  if (c.relation == "le") c.pass = value <= tolerance;
  else if (c.relation == "ge") c.pass = value >= tolerance;
  else c.pass = value > tolerance;
  if (!std::isfinite(value)) c.pass = false;
  return c;
}

template <typename Fn>
void visit_all_prefixes(const ParamSet& params, int horizon, Fn&& fn) {
  ForwardTrace trace;
  const int S = params.config().states;
  // Probabilities are irrelevant here; a uniform chain visits every sequence.
  const MarkovKernel uniform = MarkovKernel::symmetric(1.0 - 1.0 / S, S);
  enumerate_weighted_sequences(uniform, horizon, [&](std::span<const int> tokens, double) {
    forward_into(params, tokens, trace);
    for (int n = 0; n < horizon; ++n) fn(tokens, n, trace.probs.col(n));
  });
}

}  // namespace

const char* to_string(PointKind kind) noexcept {
  switch (kind) {
    case PointKind::GlobalLowSwitch: return "global_low_switch";
    case PointKind::GlobalHighSwitch: return "global_high_switch";
    case PointKind::Unigram: return "unigram";
    case PointKind::UnigramUntied: return "unigram_untied";
  }
  return "unknown";
}

PointKind point_kind_from_string(const std::string& name) {
  if (name == "global_low_switch" || name == "global-low") return PointKind::GlobalLowSwitch;
  if (name == "global_high_switch" || name == "global-high") return PointKind::GlobalHighSwitch;
  if (name == "unigram") return PointKind::Unigram;
  if (name == "unigram_untied" || name == "unigram-untied") return PointKind::UnigramUntied;
  throw Error(ErrorKind::InvalidArgument, "unknown point kind '" + name + "'");
}

double switch_log_ratio(double p, double q) {
  return std::log((1.0 - p) * (1.0 - q) / (p * q));
}

double high_switch_weight(double p, double q, int d, int r) {
  check_probabilities(p, q);
  const double radicand = 2.0 * (d - switch_log_ratio(p, q)) / (static_cast<double>(r) * d * d);
  if (radicand < 0.0) {
    throw Error(ErrorKind::RegimeViolation,
                "high-switch construction needs ln((1-p)(1-q)/(pq)) <= d");
  }
  return std::sqrt(radicand);
}

ParamSet build_global_low_switch(double p, double q, const ModelConfig& config,
                                 const FreeFill& fill) {
  const ModelConfig cfg = binary_config(config);
  check_probabilities(p, q);
  if (!(p + q < 1.0)) {
    throw Error(ErrorKind::RegimeViolation, "low-switch construction needs p + q < 1");
  }
  ParamSet params(cfg);
  SplitMix64 rng(derive_seed(fill.seed, {0xF1EE, 1}));
  fill_attention(params, rng, fill);
  for (auto& layer : params.layers()) fill_block(layer.w1, rng, fill);
  params.e().setConstant(std::sqrt(switch_log_ratio(p, q) / cfg.d));
  if (!cfg.tied) params.a() = params.e();
  params.b() = std::log(p / (1.0 - p));
  return params;
}

ParamSet build_global_high_switch(double p, double q, const ModelConfig& config,
                                  const FreeFill& fill) {
  const ModelConfig cfg = binary_config(config);
  const double w = high_switch_weight(p, q, cfg.d, cfg.r);
  ParamSet params(cfg);
  SplitMix64 rng(derive_seed(fill.seed, {0xF1EE, 2}));
  fill_attention(params, rng, fill);
  // Layers past the first stay identity maps (W_O = 0, W_2 = 0) with free W_1.
  for (std::size_t l = 1; l < params.layers().size(); ++l) fill_block(params.layers()[l].w1, rng, fill);
  params.e().setOnes();
  if (!cfg.tied) params.a().setOnes();
  params.positional().setConstant(-0.5);
  params.layer(0).w1.setConstant(w);
  params.layer(0).w2 = -params.layer(0).w1.transpose();
  params.b() = std::log(p / (1.0 - p)) + 0.5 * cfg.d;
  return params;
}

ParamSet build_unigram_point(double p, double q, const ModelConfig& config, bool tied,
                             const FreeFill& fill) {
  ModelConfig cfg = config;
  cfg.tied = tied;
  cfg = binary_config(cfg);
  check_probabilities(p, q);
  ParamSet params(cfg);
  SplitMix64 rng(derive_seed(fill.seed, {0xF1EE, 3}));
  fill_block(params.positional(), rng, fill);
  fill_attention(params, rng, fill);
  for (auto& layer : params.layers()) fill_block(layer.w1, rng, fill);
  params.b() = std::log(p / q);
  return params;
}

ParamSet build_global_minimum(double p, double q, const ModelConfig& config, const FreeFill& fill) {
  if (p + q < 1.0) return build_global_low_switch(p, q, config, fill);
  return build_global_high_switch(p, q, config, fill);
}

double max_kernel_deviation(const ParamSet& params, const MarkovKernel& kernel, int horizon) {
  const Eigen::MatrixXd P = kernel.matrix();
  if (P.rows() != params.config().states) {
    throw Error(ErrorKind::ShapeMismatch, "kernel and model disagree on the number of states");
  }
  double worst = 0.0;
  visit_all_prefixes(params, horizon, [&](std::span<const int> tokens, int n, const auto& probs) {
    worst = std::max(worst, (probs - P.row(tokens[n]).transpose()).cwiseAbs().maxCoeff());
  });
  return worst;
}

double max_constant_deviation(const ParamSet& params, double target, int horizon) {
  double worst = 0.0;
  visit_all_prefixes(params, horizon, [&](std::span<const int>, int, const auto& probs) {
    worst = std::max(worst, std::abs(probs[1] - target));
  });
  return worst;
}

bool ConstructionReport::all_pass() const {
  if (checks.empty()) return false;
  for (const Check& c : checks) {
    if (!c.pass) return false;
  }
  return true;
}

const Check& ConstructionReport::check(const std::string& name) const {
  for (const Check& c : checks) {
    if (c.name == name) return c;
  }
  throw Error(ErrorKind::OutOfRange, "report has no check named '" + name + "'");
}

ConstructionReport certify(const ParamSet& point, PointKind kind, const MarkovKernel& kernel,
                           int horizon) {
  if (kernel.kind() != MarkovKernel::Kind::Binary) {
    throw Error(ErrorKind::Precondition, "certification needs a binary kernel");
  }
  ConstructionReport report{kind, kernel, point, horizon, {}};
  auto& checks = report.checks;
  const double p = kernel.p();
  const double q = kernel.q();
  const LossGrad lg = exact_loss_grad(point, kernel, horizon);
  const double grad_norm = lg.grad.cwiseAbs().maxCoeff();

  if (kind == PointKind::GlobalLowSwitch || kind == PointKind::GlobalHighSwitch) {
    const KlDecomposition kl = loss_kl_decomposition(point, kernel, horizon);
    checks.push_back(make_check("loss_kl_gap", std::abs(kl.avg_kl), 1e-9));
    checks.push_back(
        make_check("prediction_kernel_deviation", max_kernel_deviation(point, kernel, horizon), 1e-9));
    checks.push_back(make_check("loss_minus_entropy_rate", std::abs(lg.loss - entropy_rate(kernel)), 1e-9));
    checks.push_back(make_check("grad_inf_norm", grad_norm, 1e-8));
    return report;
  }

  const double pi1 = p / (p + q);
  checks.push_back(make_check("prediction_pi1_deviation", max_constant_deviation(point, pi1, horizon), 1e-9));
  checks.push_back(
      make_check("loss_minus_marginal_entropy", std::abs(lg.loss - marginal_entropy(kernel)), 1e-9));
  checks.push_back(make_check("grad_inf_norm", grad_norm, 1e-8));

  const bool tied = kind == PointKind::Unigram;
  if (point.tied() != tied) {
    throw Error(ErrorKind::Precondition, std::string("point kind ") + to_string(kind) +
                                             (tied ? " needs a tied" : " needs an untied") +
                                             " parameter set");
  }
  const HessianReport hessian = numerical_hessian(point, kernel, horizon);
  const AlphaHessian analytic = analytic_alpha_hessian(point.positional(), p, q, tied);
  const Eigen::MatrixXd block = hessian.alpha_block();
  checks.push_back(make_check("alpha_block_vs_analytic",
                              (block - analytic.matrix).cwiseAbs().maxCoeff(), 1e-5));
  checks.push_back(make_check("rest_block_max", hessian.max_rest_magnitude(), 1e-5));
  if (tied) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> num(block, Eigen::EigenvaluesOnly);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ana(analytic.matrix, Eigen::EigenvaluesOnly);
    checks.push_back(make_check("alpha_eigenvalues_vs_analytic",
                                (num.eigenvalues() - ana.eigenvalues()).cwiseAbs().maxCoeff(), 1e-6));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> gap(schur_gap(point.positional(), p, q),
                                                       Eigen::EigenvaluesOnly);
    checks.push_back(make_check("schur_gap_min_eigenvalue", gap.eigenvalues()[0], 0.0, "gt"));
    checks.push_back(make_check("hessian_min_eigenvalue", hessian.min_eigenvalue(), -1e-6, "ge"));
    return report;
  }

  Check neg = make_check("negative_curvature", 0.0, -1e-6);
  if (p + q > 1.0) {
    const CurvatureResult found = find_negative_curvature(point, kernel, horizon);
    neg = make_check("negative_curvature", found.curvature, -1e-6);
    neg.pass = neg.pass && found.found;
    neg.note = found.method;
  } else {
    neg.value = hessian.min_eigenvalue();
    neg.pass = neg.value <= -1e-6;
    neg.note = "p + q <= 1: bottom Hessian eigenvalue";
  }
  checks.push_back(neg);
  Eigen::VectorXd bias_axis = Eigen::VectorXd::Zero(point.size());
  bias_axis[alpha_indices(point.config())[0]] = 1.0;
  checks.push_back(make_check("positive_curvature",
                              directional_curvature(point, kernel, horizon, bias_axis), 1e-6, "ge"));
  return report;
}

ConstructionReport build_and_certify(PointKind kind, double p, double q, const ModelConfig& config,
                                     int horizon, const FreeFill& fill) {
  const MarkovKernel kernel = MarkovKernel::binary(p, q);
  try {
    ParamSet point = [&] {
      switch (kind) {
        case PointKind::GlobalLowSwitch: return build_global_low_switch(p, q, config, fill);
        case PointKind::GlobalHighSwitch: return build_global_high_switch(p, q, config, fill);
        case PointKind::Unigram: return build_unigram_point(p, q, config, true, fill);
        case PointKind::UnigramUntied: break;
      }
      return build_unigram_point(p, q, config, false, fill);
    }();
    return certify(point, kind, kernel, horizon);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::RegimeViolation) throw;
    ConstructionReport report{kind, kernel, ParamSet(binary_config(config)), horizon, {}};
    Check c{"regime", 1.0, 0.0, "le", false, e.what()};
    report.checks.push_back(c);
    return report;
  }
}

}  // namespace markovlm
