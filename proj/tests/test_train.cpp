#include <doctest.h>

#include <bit>
#include <cmath>
#include <set>

#include "markovlm/report_io.hpp"
#include "markovlm/train.hpp"

using namespace markovlm;

namespace {

TrainConfig tiny_config(bool tied = true) {
  TrainConfig c;
  c.kernel = KernelSpec::binary(0.2, 0.3);
  c.model = ModelConfig::for_states(2, 4, 4, 8, 8, 1, tied);
  c.batch_size = 8;
  c.iterations = 30;
  c.eval_every = 10;
  c.eval_batches = 2;
  c.probe_count = 10;
  c.seed = 3;
  return c;
}

std::uint64_t fnv1a(const Eigen::VectorXd& v) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(v[i]);
    for (int b = 0; b < 8; ++b) {
      h ^= (bits >> (8 * b)) & 0xff;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

}  // namespace

TEST_CASE("AdamW fixed point and descent") {
  AdamWConfig opt;
  opt.weight_decay = 0.0;
  Eigen::VectorXd w = Eigen::VectorXd::Constant(3, 0.7);
  AdamState s = AdamState::zeros(3);
  adamw_step(w, Eigen::VectorXd::Zero(3), s, 0, 10, opt);
  CHECK(w == Eigen::VectorXd::Constant(3, 0.7));

  Eigen::VectorXd x = Eigen::VectorXd::Ones(1);
  AdamState sx = AdamState::zeros(1);
  adamw_step(x, x, sx, 0, 1, opt);  // f(w) = w^2 / 2
  CHECK(x[0] < 1.0);
  CHECK(std::abs(x[0] - (1.0 - 1e-3)) <= 1e-9);

  Eigen::VectorXd bad = Eigen::VectorXd::Ones(2);
  CHECK_THROWS_AS(adamw_step(bad, Eigen::VectorXd::Ones(3), s, 0, 1, opt), Error);
}

TEST_CASE("cosine schedule") {
  AdamWConfig opt;
  CHECK(scheduled_lr(opt, 0, 100) == opt.lr);
  CHECK(std::abs(scheduled_lr(opt, 50, 100) - opt.lr / 2) <= 1e-15);
  CHECK(scheduled_lr(opt, 100, 100) <= 1e-18);
  opt.schedule = Schedule::Constant;
  CHECK(scheduled_lr(opt, 70, 100) == opt.lr);
  CHECK(schedule_from_string("cosine") == Schedule::Cosine);
  CHECK_THROWS_AS(schedule_from_string("step"), Error);
}

TEST_CASE("golden AdamW trace") {
  const ModelConfig model = ModelConfig::for_states(2, 4, 4, 16, 8, 1, true);
  ParamSet params = init_params(model, 11);
  Eigen::VectorXd theta = params.flatten();
  AdamState state = AdamState::zeros(theta.size());
  AdamWConfig opt;
  TrainConfig cfg = tiny_config();
  cfg.model = model;
  const MarkovKernel kernel = cfg.kernel.make();
  for (long t = 0; t < 10; ++t) {
    const auto batch = training_batch(kernel, cfg, t);
    const LossGrad lg = empirical_loss_grad(params, batch);
    adamw_step(theta, lg.grad, state, t, 10, opt);
    params.unflatten(theta);
  }
  CHECK(fnv1a(theta) == 11959014072828050062ULL);
}

TEST_CASE("classification bands") {
  const auto k = MarkovKernel::binary(0.5, 0.8);
  CHECK(classify_loss(0.6195, k) == Classification::Bigram);
  CHECK(classify_loss(0.6660, k) == Classification::Unigram);
  CHECK(classify_loss(0.70, k) == Classification::Neither);
  CHECK(classify_loss(std::nan(""), k) == Classification::Neither);
  // Both bands contain 0.64; the bigram label wins.
  CHECK(classify_loss(0.6428, k, 0.03, 0.03) == Classification::Bigram);
  RunRecord failed;
  failed.failed = true;
  failed.final_loss = 0.6195;
  CHECK(classify_convergence(failed, k) == Classification::Neither);
}

TEST_CASE("config validation") {
  TrainConfig c = tiny_config();
  c.iterations = 0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = tiny_config();
  c.optimizer.lr = 0.0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = tiny_config();
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = tiny_config();
  c.kernel = KernelSpec::symmetric(0.5, 3);
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("training batches are fresh and deterministic") {
  TrainConfig c = tiny_config();
  c.model = ModelConfig::for_states(2, 4, 4, 8, 64, 1, true);
  const MarkovKernel k = c.kernel.make();
  std::set<TokenSequence> seen;
  for (long t = 0; t < 50; ++t) {
    const auto batch = training_batch(k, c, t);
    CHECK(batch.size() == 8);
    CHECK(batch.front().size() == 65);
    CHECK(batch == training_batch(k, c, t));
    seen.insert(batch.begin(), batch.end());
  }
  CHECK(seen.size() == 400);
  CHECK(training_batch(k, c, 0) != training_batch(k, c, 1));
}

TEST_CASE("training is deterministic and records what it should") {
  const TrainConfig c = tiny_config();
  const RunRecord a = train(c);
  const RunRecord b = train(c);
  REQUIRE(a.loss_curve.size() == 4);
  CHECK(a.loss_curve.back().iteration == 30);
  for (std::size_t i = 0; i < a.loss_curve.size(); ++i) {
    CHECK(a.loss_curve[i].test_loss == b.loss_curve[i].test_loss);
    CHECK(a.loss_curve[i].train_loss == b.loss_curve[i].train_loss);
    CHECK(a.loss_curve[i].test_loss > 0.0);
  }
  CHECK(a.probe_zero.size() == 10);
  CHECK(a.probe_one.size() == 10);
  CHECK(a.final_loss == a.loss_curve.back().test_loss);
  CHECK_FALSE(a.failed);
  CHECK(to_json(a).dump() == to_json(b).dump());
  CHECK(a.classification == classify_convergence(a, c.kernel.make()));
}

TEST_CASE("divergence is recorded, not thrown") {
  TrainConfig c = tiny_config();
  c.optimizer.lr = 1e300;
  c.optimizer.schedule = Schedule::Constant;
  const RunRecord r = train(c);
  CHECK(r.failed);
  CHECK(r.classification == Classification::Neither);
  CHECK_FALSE(r.failure.empty());
}

TEST_CASE("parallel runs match serial runs") {
  std::vector<TrainConfig> configs;
  for (int k = 0; k < 3; ++k) {
    TrainConfig c = tiny_config(k % 2 == 0);
    c.seed = run_seed(1, k);
    configs.push_back(c);
  }
  const auto serial = run_all(configs, 1);
  const auto parallel = run_all(configs, 3);
  for (std::size_t i = 0; i < configs.size(); ++i) {
    CHECK(to_json(serial[i]).dump() == to_json(parallel[i]).dump());
  }
}

TEST_CASE("sweep and depth bookkeeping") {
  const TrainConfig base = tiny_config();
  const SweepResult s = sweep_pq({{0.2, 0.3}, {0.6, 0.7}}, false, 2, base, 1);
  CHECK(s.runs.size() == 4);
  CHECK(s.cells.size() == 2);
  CHECK(s.cells[1].p == 0.6);
  CHECK(s.cells[0].runs == 2);
  CHECK(std::abs(s.cells[0].mean_pred_zero - 0.5 * (s.runs[0].final_pred_zero + s.runs[1].final_pred_zero)) <=
        1e-15);
  const std::string csv = sweep_csv(s);
  CHECK(csv.rfind("p,q,tied,seed,final_loss,final_pred_zero,final_pred_one,classification\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
  CHECK(pq_grid(9).size() == 81);
  CHECK(pq_grid(9).front().first == doctest::Approx(0.1));

  const auto depth = depth_experiment({1, 2}, KernelSpec::binary(0.5, 0.8), true, 2, base, 1);
  REQUIRE(depth.size() == 4);
  CHECK(depth[2].config.model.layers == 2);
  CHECK(depth[0].config.seed == depth[2].config.seed);
}

TEST_CASE("multi-state runs use the softmax head") {
  TrainConfig c = tiny_config(false);
  c.kernel = KernelSpec::symmetric(0.9, 5);
  c.model = ModelConfig::for_states(5, 4, 4, 8, 8, 1, false);
  const RunRecord r = train(c);
  CHECK_FALSE(r.failed);
  CHECK(r.final_loss > 1.0);
}

TEST_CASE("train config json") {
  const TrainConfig c = tiny_config();
  const TrainConfig back = train_config_from_json(to_json(c));
  CHECK(to_json(back).dump() == to_json(c).dump());
  CHECK_THROWS_AS(train_config_from_json(Json{{"iters", 3}}), Error);
  CHECK_THROWS_AS(train_config_from_json(Json{{"kernel", {{"type", "binary"}, {"r", 0.1}}}}), Error);
  const TrainConfig sym = train_config_from_json(Json{{"kernel", {{"type", "symmetric"}, {"p", 0.9}, {"states", 5}}}});
  CHECK(sym.kernel.states == 5);

  const RunRecord r = train(c);
  const std::string curve = loss_curve_csv(r);
  CHECK(curve.rfind("# entropy_rate=0.544587175\n# marginal_entropy=0.673011667\niteration,test_loss,train_loss\n", 0) == 0);
  CHECK(spectrum_csv(Eigen::Vector2d(-1.0, 0.5)) == "index,eigenvalue\n0,-1\n1,0.5\n");
  CHECK(json_number(std::nan("")).is_null());
  CHECK(json_number(0.1234567891234).get<double>() == 0.123456789);
}
