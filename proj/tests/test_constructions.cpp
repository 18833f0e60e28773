#include <doctest.h>

#include <cmath>

#include "markovlm/constructions.hpp"
#include "markovlm/grad.hpp"
#include "markovlm/model.hpp"

using namespace markovlm;

namespace {

constexpr double kLn16 = 2.77258872223978;
constexpr double kLnQuarter = -1.38629436111989;
constexpr double kWStar_05_08_d4 = 0.410270275288128;
constexpr double kWStar_05_05_d4 = 0.353553390593274;
constexpr double kLn0625 = -0.470003629245736;
constexpr double kMarginal_05_08 = 0.666278442414676;

ModelConfig small_config(bool tied = true, int r = 16) {
  ModelConfig c;
  c.d = 4;
  c.m = 4;
  c.r = r;
  c.N = 8;
  c.tied = tied;
  return c;
}

}  // namespace

TEST_CASE("low-switch construction") {
  const ParamSet a = build_global_low_switch(0.2, 0.2, small_config());
  CHECK(std::abs(a.e().squaredNorm() - kLn16) <= 1e-12);
  const ParamSet b = build_global_low_switch(0.2, 0.3, small_config());
  CHECK(std::abs(b.b() - kLnQuarter) <= 1e-12);
  CHECK(b.layer(0).wo.isZero(0.0));
  CHECK(b.layer(0).w2.isZero(0.0));
  CHECK(b.positional().isZero(0.0));
  try {
    build_global_low_switch(0.6, 0.6, small_config());
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::RegimeViolation);
  }
  CHECK_THROWS_AS(build_global_low_switch(0.2, 0.8, small_config()), Error);
  const ParamSet u = build_global_low_switch(0.2, 0.3, small_config(false));
  CHECK(u.a() == u.e());
}

TEST_CASE("high-switch construction") {
  CHECK(std::abs(high_switch_weight(0.5, 0.8, 4, 4) - kWStar_05_08_d4) <= 1e-12);
  CHECK(std::abs(high_switch_weight(0.5, 0.5, 4, 4) - kWStar_05_05_d4) <= 1e-12);
  const ParamSet p = build_global_high_switch(0.5, 0.8, small_config(true, 4));
  CHECK(std::abs(p.b() - 2.0) <= 1e-12);
  CHECK(std::abs(p.layer(0).w1(0, 0) - kWStar_05_08_d4) <= 1e-12);
  CHECK(p.layer(0).w2 == -p.layer(0).w1.transpose());
  // ln((1-p)(1-q)/(pq)) = ln(81) > 4 at p = q = 0.1.
  CHECK_THROWS_AS(build_global_high_switch(0.1, 0.1, small_config()), Error);
  for (int r : {4, 16}) {
    const ParamSet q = build_global_high_switch(0.5, 0.8, small_config(true, r));
    CHECK(max_kernel_deviation(q, MarkovKernel::binary(0.5, 0.8), 8) <= 1e-9);
  }
}

TEST_CASE("unigram point") {
  const ParamSet p = build_unigram_point(0.5, 0.8, small_config(), true);
  CHECK(std::abs(p.b() - kLn0625) <= 1e-12);
  CHECK(max_constant_deviation(p, 5.0 / 13.0, 8) <= 1e-12);
  CHECK(std::abs(exact_population_loss(p, MarkovKernel::binary(0.5, 0.8), 8) - kMarginal_05_08) <= 1e-9);
  const ParamSet s = build_unigram_point(0.35, 0.35, small_config(), true);
  CHECK(s.b() == 0.0);
  CHECK(max_constant_deviation(s, 0.5, 8) == 0.0);
  const ParamSet u = build_unigram_point(0.5, 0.8, small_config(true), false);
  CHECK_FALSE(u.tied());
  CHECK(u.a().isZero(0.0));
  CHECK(u.e().isZero(0.0));
}

TEST_CASE("certification of the four point kinds") {
  const ConstructionReport high =
      build_and_certify(PointKind::GlobalHighSwitch, 0.5, 0.8, small_config());
  CHECK(high.checks.size() == 4);
  CHECK(high.all_pass());
  CHECK(high.check("grad_inf_norm").tolerance == 1e-8);

  const ConstructionReport uni = build_and_certify(PointKind::Unigram, 0.5, 0.8, small_config());
  CHECK(uni.all_pass());
  CHECK(uni.check("hessian_min_eigenvalue").value >= -1e-6);

  const ConstructionReport untied =
      build_and_certify(PointKind::UnigramUntied, 0.5, 0.8, small_config());
  CHECK(untied.all_pass());
  CHECK(untied.check("negative_curvature").value <= -1e-6);
  CHECK(untied.check("positive_curvature").value >= 1e-6);

  const ConstructionReport bad = build_and_certify(PointKind::GlobalLowSwitch, 0.6, 0.6, small_config());
  CHECK_FALSE(bad.all_pass());
  CHECK(bad.check("regime").note.find("p + q < 1") != std::string::npos);
  CHECK_THROWS_AS(bad.check("nonexistent"), Error);

  CHECK(point_kind_from_string("global-high") == PointKind::GlobalHighSwitch);
  CHECK(std::string(to_string(PointKind::UnigramUntied)) == "unigram_untied");
  CHECK_THROWS_AS(point_kind_from_string("saddle"), Error);
}

TEST_CASE("certification is invariant to the free blocks") {
  const FreeFill fill = FreeFill::gaussian(42);
  CHECK(build_and_certify(PointKind::GlobalLowSwitch, 0.2, 0.3, small_config(), 8, fill).all_pass());
  CHECK(build_and_certify(PointKind::GlobalHighSwitch, 0.9, 0.9, small_config(), 8, fill).all_pass());
  CHECK(build_and_certify(PointKind::Unigram, 0.5, 0.8, small_config(), 8, fill).all_pass());
  CHECK(build_and_certify(PointKind::UnigramUntied, 0.5, 0.8, small_config(), 8, fill).all_pass());
}

TEST_CASE("a global minimum exists on the whole grid") {
  for (int i = 1; i <= 9; ++i) {
    for (int j = 1; j <= 9; ++j) {
      const double p = 0.1 * i;
      const double q = 0.1 * j;
      const auto kernel = MarkovKernel::binary(p, q);
      const ParamSet point = build_global_minimum(p, q, small_config());
      CAPTURE(p);
      CAPTURE(q);
      CHECK(max_kernel_deviation(point, kernel, 8) <= 1e-9);
      CHECK(exact_loss_grad(point, kernel, 8).grad.cwiseAbs().maxCoeff() <= 1e-8);
    }
  }
}

TEST_CASE("the two regimes meet at p + q = 1") {
  const double p = 0.3;
  const ParamSet high = build_global_high_switch(p, 1.0 - p, small_config());
  const ParamSet low = build_global_low_switch(p, 1.0 - p - 1e-12, small_config());
  CHECK(max_constant_deviation(high, p, 8) <= 1e-9);
  CHECK(max_constant_deviation(low, p, 8) <= 1e-9);
}

TEST_CASE("optimality gap equals the mutual information") {
  for (auto [p, q] : {std::pair{0.5, 0.8}, std::pair{0.2, 0.3}, std::pair{0.9, 0.6}}) {
    const auto kernel = MarkovKernel::binary(p, q);
    const double gap = exact_population_loss(build_unigram_point(p, q, small_config(), true), kernel, 8) -
                       exact_population_loss(build_global_minimum(p, q, small_config()), kernel, 8);
    CHECK(std::abs(gap - mutual_info_gap(kernel)) <= 1e-9);
  }
}
