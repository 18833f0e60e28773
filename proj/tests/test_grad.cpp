#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "markovlm/constructions.hpp"
#include "markovlm/grad.hpp"
#include "markovlm/landscape.hpp"
#include "markovlm/model.hpp"

using namespace markovlm;

namespace {

constexpr double kRate_02_03 = 0.54458717494487;
constexpr double kMarginal_05_08 = 0.666278442414676;
constexpr double kGap_05_08 = 0.0472638607092528;

ModelConfig small_config(bool tied = true) {
  ModelConfig c;
  c.d = 4;
  c.m = 4;
  c.r = 16;
  c.N = 8;
  c.tied = tied;
  return c;
}

using gradcheck::sample_batch;

}  // namespace

TEST_CASE("empirical loss basics") {
  const ModelConfig c = small_config();
  const ParamSet zero(c);
  const auto batch = sample_batch(MarkovKernel::binary(0.3, 0.6), 16, 9, 1);
  CHECK(std::abs(empirical_loss(zero, batch) - std::log(2.0)) <= 1e-15);
  CHECK_THROWS_AS(empirical_loss(zero, std::vector<TokenSequence>{}), Error);
  std::vector<TokenSequence> ragged = {TokenSequence(9, 0), TokenSequence(8, 0)};
  CHECK_THROWS_AS(empirical_loss(zero, ragged), Error);
  CHECK_THROWS_AS(empirical_loss(zero, std::vector<TokenSequence>{TokenSequence(10, 0)}), Error);
}

TEST_CASE("empirical loss at constructed points") {
  ModelConfig c = small_config();
  c.N = 64;
  const auto low_k = MarkovKernel::binary(0.2, 0.3);
  const auto batch = sample_batch(low_k, 4096, 65, 2);
  CHECK(std::abs(empirical_loss(build_global_low_switch(0.2, 0.3, c), batch) - kRate_02_03) <= 0.01);
  const auto k = MarkovKernel::binary(0.5, 0.8);
  const auto batch2 = sample_batch(k, 4096, 65, 3);
  CHECK(std::abs(empirical_loss(build_unigram_point(0.5, 0.8, c, true), batch2) - kMarginal_05_08) <=
        0.01);
}

TEST_CASE("exact loss at constructed points") {
  const ModelConfig c = small_config();
  const auto low_k = MarkovKernel::binary(0.2, 0.3);
  const ParamSet theta_star = build_global_low_switch(0.2, 0.3, c);
  CHECK(std::abs(exact_population_loss(theta_star, low_k, 8) - kRate_02_03) <= 1e-9);
  const auto k = MarkovKernel::binary(0.5, 0.8);
  const ParamSet theta_pi = build_unigram_point(0.5, 0.8, c, true);
  CHECK(std::abs(exact_population_loss(theta_pi, k, 8) - kMarginal_05_08) <= 1e-9);

  const KlDecomposition at_star = loss_kl_decomposition(theta_star, low_k, 8);
  CHECK(std::abs(at_star.avg_kl) <= 1e-10);
  CHECK(std::abs(loss_kl_decomposition(theta_pi, k, 8).avg_kl - kGap_05_08) <= 1e-9);
  const auto half = MarkovKernel::binary(0.5, 0.5);
  CHECK(std::abs(loss_kl_decomposition(build_unigram_point(0.5, 0.5, c, true), half, 8).avg_kl) <= 1e-10);

  CHECK(exact_loss_grad(theta_star, low_k, 8).grad.cwiseAbs().maxCoeff() <= 1e-8);
  CHECK(exact_loss_grad(theta_pi, k, 8).grad.cwiseAbs().maxCoeff() <= 1e-8);
  CHECK_THROWS_AS(exact_population_loss(theta_pi, k, 9), Error);
  CHECK_THROWS_AS(exact_population_loss(theta_pi, MarkovKernel::symmetric(0.5, 3), 4), Error);
}

TEST_CASE("KL decomposition and the entropy-rate floor") {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    ModelConfig c = small_config(seed % 2 == 0);
    c.N = 6;
    const ParamSet p = init_params(c, seed, 0.5);
    for (const auto& k : {MarkovKernel::binary(0.5, 0.8), MarkovKernel::binary(0.1, 0.3)}) {
      const double loss = exact_population_loss(p, k, 6);
      const KlDecomposition kl = loss_kl_decomposition(p, k, 6);
      CHECK(std::abs(kl.avg_kl + kl.rate - loss) <= 1e-10);
      CHECK(loss >= entropy_rate(k) - 1e-12);
    }
  }
  const auto sym = MarkovKernel::symmetric(0.6, 3);
  const ParamSet p = init_params(ModelConfig::for_states(3, 4, 4, 8, 5, 1, false), 3, 0.5);
  const KlDecomposition kl = loss_kl_decomposition(p, sym, 5);
  CHECK(std::abs(kl.avg_kl + kl.rate - exact_population_loss(p, sym, 5)) <= 1e-10);
}

TEST_CASE("backprop matches central differences") {
  struct Case {
    int states, d, m, r, N, layers, heads;
    bool tied;
  };
  const std::vector<Case> cases = {
      {2, 4, 4, 16, 6, 1, 1, true}, {2, 4, 4, 16, 6, 1, 1, false}, {2, 3, 4, 5, 5, 2, 2, true},
      {3, 4, 4, 8, 5, 1, 1, false}, {4, 3, 6, 4, 4, 2, 3, true},
  };
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const Case& cs = cases[i];
    auto c = ModelConfig::for_states(cs.states, cs.d, cs.m, cs.r, cs.N, cs.layers, cs.tied, cs.heads);
    const ParamSet p = init_params(c, 100 + i, 0.3);
    const auto k = cs.states == 2 ? MarkovKernel::binary(0.4, 0.7) : MarkovKernel::symmetric(0.5, cs.states);
    const auto batch = sample_batch(k, 3, cs.N + 1, 7 + i);
    const gradcheck::Result r = gradcheck::compare(p, batch);
    INFO("case " << i << " skipped " << r.skipped);
    CHECK(r.max_rel <= 1e-5);
    CHECK(r.compared > 0);
  }
}

TEST_CASE("exact-mode gradient matches central differences") {
  ModelConfig c = small_config(false);
  c.N = 4;
  const ParamSet p = init_params(c, 5, 0.3);
  const auto k = MarkovKernel::binary(0.3, 0.9);
  const Eigen::VectorXd g = exact_loss_grad(p, k, 4).grad;
  const Eigen::VectorXd theta = p.flatten();
  double worst = 0.0;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    Eigen::VectorXd s = theta;
    s[i] += gradcheck::kStep;
    const double up = exact_population_loss(ParamSet::from_flat(c, s), k, 4);
    s[i] -= 2 * gradcheck::kStep;
    const double down = exact_population_loss(ParamSet::from_flat(c, s), k, 4);
    const double fd = (up - down) / (2 * gradcheck::kStep);
    worst = std::max(worst, std::abs(fd - g[i]) / std::max({std::abs(fd), std::abs(g[i]), gradcheck::kFloor}));
  }
  CHECK(worst <= 1e-5);
}

TEST_CASE("tied gradient is the sum of the embedding and head roles") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const ParamSet tied = init_params(small_config(true), seed, 0.4);
    ParamSet untied(small_config(false));
    tied.visit_blocks([&](const std::string& name, const Eigen::MatrixXd& block) {
      untied.visit_blocks([&](const std::string& other, Eigen::MatrixXd& dst) {
        if (name == other) dst = block;
      });
    });
    untied.head_weight() = tied.embedding();
    const auto batch = sample_batch(MarkovKernel::binary(0.5, 0.8), 4, 9, seed);
    const ParamSet gt = ParamSet::from_flat(small_config(true), empirical_loss_grad(tied, batch).grad);
    const ParamSet gu = ParamSet::from_flat(small_config(false), empirical_loss_grad(untied, batch).grad);
    CHECK((gt.embedding() - gu.embedding() - gu.head_weight()).cwiseAbs().maxCoeff() <= 1e-10);
  }
}

TEST_CASE("head gradient has the conditional-expectation form") {
  const ModelConfig c = small_config(false);
  const ParamSet p = init_params(c, 17, 0.4);
  const auto k = MarkovKernel::binary(0.3, 0.6);
  const int N = 8;
  double grad_b = 0.0;
  Eigen::VectorXd grad_a = Eigen::VectorXd::Zero(c.d);
  enumerate_weighted_sequences(k, N, [&](std::span<const int> tokens, double prob) {
    const ForwardTrace t = forward(p, tokens);
    for (int n = 0; n < N; ++n) {
      const double target = kernel_row(k, tokens[n])[1];
      const double resid = t.probs(1, n) - target;
      grad_b += prob * resid / N;
      grad_a += prob * resid / N * t.final_z().col(n);
    }
  });
  const ParamSet g = ParamSet::from_flat(c, exact_loss_grad(p, k, N).grad);
  CHECK(std::abs(g.b() - grad_b) <= 1e-10);
  CHECK((g.a() - grad_a).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("exact loss agrees with Monte Carlo") {
  const ModelConfig c = small_config();
  const ParamSet p = init_params(c, 2, 0.5);
  const auto k = MarkovKernel::binary(0.5, 0.8);
  const auto batch = sample_batch(k, 4000, 9, 99);
  double sum = 0.0;
  double sq = 0.0;
  for (const auto& seq : batch) {
    const double l = empirical_loss(p, std::span<const TokenSequence>(&seq, 1));
    sum += l;
    sq += l * l;
  }
  const double B = static_cast<double>(batch.size());
  const double mean = sum / B;
  const double sd = std::sqrt((sq - B * mean * mean) / (B - 1));
  CHECK(std::abs(mean - empirical_loss(p, batch)) <= 1e-12);
  CHECK(std::abs(exact_population_loss(p, k, 8) - mean) <= 4 * sd / std::sqrt(B));
}

TEST_CASE("Hessians at the unigram point") {
  const ModelConfig c = small_config();
  const auto k = MarkovKernel::binary(0.5, 0.8);
  const ParamSet tied = build_unigram_point(0.5, 0.8, c, true);
  const HessianReport h = numerical_hessian(tied, k, 8);
  CHECK(h.asymmetry <= 1e-6);
  const AlphaHessian analytic = analytic_alpha_hessian(tied.positional(), 0.5, 0.8, true);
  CHECK((h.alpha_block() - analytic.matrix).cwiseAbs().maxCoeff() <= 1e-5);
  CHECK(h.max_rest_magnitude() <= 1e-5);
  CHECK(h.min_eigenvalue() >= -1e-6);

  const HessianReport hu = numerical_hessian(build_unigram_point(0.5, 0.8, c, false), k, 8);
  CHECK(hu.min_eigenvalue() <= -1e-4);

  ModelConfig big = small_config();
  big.d = 16;
  big.m = 16;
  big.r = 64;
  try {
    numerical_hessian(ParamSet(big), k, 8);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::DimensionTooLarge);
  }
}
