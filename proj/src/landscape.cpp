#include "markovlm/landscape.hpp"

#include <cmath>
#include <limits>

#include "markovlm/error.hpp"
#include "markovlm/grad.hpp"
#include "markovlm/model.hpp"

namespace markovlm {

namespace {

double stationary_product(double p, double q) { return p * q / ((p + q) * (p + q)); }

void require_binary(const MarkovKernel& kernel) {
  if (kernel.kind() != MarkovKernel::Kind::Binary) {
    throw Error(ErrorKind::Precondition, "binary kernel required");
  }
}

}  // namespace

AlphaHessian analytic_alpha_hessian(const Eigen::Ref<const Eigen::MatrixXd>& pos, double p,
                                    double q, bool tied) {
  const Eigen::Index d = pos.rows();
  const double N = static_cast<double>(pos.cols());
  const double c = p + q - 1.0;
  AlphaHessian h;
  h.tied = tied;
  h.scale = stationary_product(p, q);
  h.u = pos.rowwise().sum() / N;
  const Eigen::MatrixXd second = pos * pos.transpose() / N;
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(d, d);
  if (tied) {
    h.V = second + 2.0 * c * I;
    h.matrix.resize(1 + d, 1 + d);
    h.matrix << 1.0, h.u.transpose(), h.u, h.V;
  } else {
    h.V = second;
    h.matrix = Eigen::MatrixXd::Zero(1 + 2 * d, 1 + 2 * d);
    h.matrix(0, 0) = 1.0;
    h.matrix.block(0, 1, 1, d) = h.u.transpose();
    h.matrix.block(1, 0, d, 1) = h.u;
    h.matrix.block(1, 1, d, d) = h.V;
    h.matrix.block(1, 1 + d, d, d) = c * I;
    h.matrix.block(1 + d, 1, d, d) = c * I;
  }
  h.matrix *= h.scale;
  return h;
}

Eigen::MatrixXd schur_gap(const Eigen::Ref<const Eigen::MatrixXd>& pos, double p, double q) {
  const Eigen::VectorXd u = pos.rowwise().mean();
  const Eigen::MatrixXd centred = pos.colwise() - u;
  const Eigen::MatrixXd cov = centred * centred.transpose() / static_cast<double>(pos.cols());
  return 2.0 * (p + q - 1.0) * Eigen::MatrixXd::Identity(pos.rows(), pos.rows()) + cov;
}

CurvatureResult find_negative_curvature(const ParamSet& params, const MarkovKernel& kernel,
                                        int horizon) {
  const ModelConfig& cfg = params.config();
  if (cfg.tied) {
    throw Error(ErrorKind::Precondition, "find_negative_curvature needs an untied parameter set");
  }
  if (cfg.head != Head::Sigmoid) {
    throw Error(ErrorKind::Precondition, "find_negative_curvature needs the binary sigmoid head");
  }
  require_binary(kernel);
  const double p = kernel.p();
  const double q = kernel.q();
  if (!(p + q > 1.0)) throw Error(ErrorKind::RegimeViolation, "negative curvature search needs p + q > 1");

  const Eigen::Index d = cfg.d;
  const auto alpha = alpha_indices(cfg);  // b, a (head), e (embedding)
  const Eigen::MatrixXd& pos = params.positional();
  const Eigen::VectorXd u = pos.rowwise().mean();
  const Eigen::MatrixXd centred = pos.colwise() - u;
  const Eigen::MatrixXd cov = centred * centred.transpose() / static_cast<double>(pos.cols());
  const double scale = stationary_product(p, q);
  const double c = p + q - 1.0;

  CurvatureResult result;
  const Eigen::VectorXd v2 = Eigen::VectorXd::Unit(d, 0);
  for (double t = 0.1; t >= 1e-4; t /= 2.0) {
    const Eigen::VectorXd v1 = -t * v2;
    Eigen::VectorXd dir = Eigen::VectorXd::Zero(params.size());
    dir[alpha[0]] = -u.dot(v1);
    for (Eigen::Index i = 0; i < d; ++i) {
      dir[alpha[static_cast<std::size_t>(1 + i)]] = v1[i];
      dir[alpha[static_cast<std::size_t>(1 + d + i)]] = v2[i];
    }
    dir.normalize();
    const double curvature = directional_curvature(params, kernel, horizon, dir);
    if (curvature < 0.0) {
      result.found = true;
      result.direction = dir;
      result.curvature = curvature;
      result.raw_form = scale * (t * t * v2.dot(cov * v2) - 2.0 * t * c * v2.squaredNorm());
      result.t = t;
      result.method = "constructive";
      return result;
    }
  }

  const HessianReport hessian = numerical_hessian(params, kernel, horizon);
  if (hessian.min_eigenvalue() < 0.0) {
    result.found = true;
    result.direction = hessian.eigenvectors.col(0);
    result.curvature = directional_curvature(params, kernel, horizon, result.direction);
    result.raw_form = hessian.min_eigenvalue();
    result.method = "eigenvector";
    return result;
  }
  result.method = "none";
  result.direction = Eigen::VectorXd::Zero(params.size());
  return result;
}

FormulaOutput low_rank_formula(double e, double p, double w1, double b, int beta, int d, int r) {
  auto logit = [&](double x) {
    return e * d * (e * x + p) * (1.0 + w1 * w1 * d * ((2.0 * beta - r) * x + r - beta)) + b;
  };
  FormulaOutput out;
  out.logit_one = logit(1.0);
  out.logit_zero = logit(0.0);
  out.prob_one = sigmoid(out.logit_one);
  out.prob_zero = sigmoid(out.logit_zero);
  return out;
}

InterpretationReport interpret(const ParamSet& params, std::span<const TokenSequence> probe_batch) {
  const ModelConfig& cfg = params.config();
  if (cfg.head != Head::Sigmoid) {
    throw Error(ErrorKind::Precondition, "interpret needs the binary sigmoid head");
  }
  if (cfg.layers != 1) throw Error(ErrorKind::Precondition, "interpret needs a single-layer model");

  InterpretationReport report;
  ForwardTrace trace;
  double ratio_sum = 0.0;
  long ratio_count = 0;
  for (const TokenSequence& seq : probe_batch) {
    const std::size_t len = std::min<std::size_t>(seq.size(), static_cast<std::size_t>(cfg.N));
    if (len == 0) continue;
    forward_into(params, std::span<const int>(seq.data(), len), trace);
    const LayerTrace& lt = trace.layers.front();
    for (Eigen::Index n = 0; n < lt.y.cols(); ++n) {
      const double ynorm = lt.y.col(n).norm();
      if (ynorm == 0.0) continue;
      ratio_sum += lt.attn_out.col(n).norm() / ynorm;
      ++ratio_count;
    }
  }
  report.attention_ratio = ratio_count > 0 ? ratio_sum / static_cast<double>(ratio_count) : 0.0;

  const Eigen::MatrixXd& pos = params.positional();
  const Eigen::VectorXd pbar = pos.rowwise().mean();
  const double spread_num = (pos.colwise() - pbar).colwise().norm().maxCoeff();
  if (pbar.norm() > 0.0) {
    report.positional_spread = spread_num / pbar.norm();
  } else {
    report.positional_spread = spread_num == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  }

  const Eigen::VectorXd e = params.e();
  const int d = cfg.d;
  const int r = cfg.r;
  RankOneFit& fit = report.fit;
  fit.v = e.unaryExpr([](double x) { return x < 0.0 ? -1.0 : 1.0; });
  fit.e = e.cwiseAbs().mean();
  fit.p = pbar.dot(fit.v) / d;
  report.b = params.b();

  const Eigen::MatrixXd& w1 = params.layer(0).w1;
  if (e.squaredNorm() == 0.0 || w1.squaredNorm() == 0.0) {
    report.degenerate = true;
    report.note = e.squaredNorm() == 0.0 ? "zero embedding" : "zero first FF matrix";
  } else {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(w1, Eigen::ComputeThinU | Eigen::ComputeThinV);
    Eigen::VectorXd left = svd.matrixU().col(0);
    const Eigen::VectorXd right = svd.matrixV().col(0);
    if (right.dot(fit.v) < 0.0) left = -left;
    const Eigen::VectorXd w = left.unaryExpr([](double x) { return x < 0.0 ? -1.0 : 1.0; });
    const Eigen::MatrixXd pattern = w * fit.v.transpose();
    fit.w1 = (w1.array() * pattern.array()).sum() / static_cast<double>(r * d);
    fit.beta = static_cast<int>((w.array() > 0.0).count());
    fit.residual = (w1 - fit.w1 * pattern).norm() / w1.norm();
  }

  const FormulaOutput f = low_rank_formula(fit.e, fit.p, fit.w1, report.b, fit.beta, d, r);
  report.logit_one = f.logit_one;
  report.logit_zero = f.logit_zero;
  report.prob_one = f.prob_one;
  report.prob_zero = f.prob_zero;
  return report;
}

}  // namespace markovlm
