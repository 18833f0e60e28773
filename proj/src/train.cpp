#include "markovlm/train.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <numbers>
#include <thread>

#include "markovlm/error.hpp"
#include "markovlm/grad.hpp"
#include "markovlm/model.hpp"

namespace markovlm {

namespace {

// Stream keys for derive_seed.
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kTrainStream = 2;
constexpr std::uint64_t kTestStream = 3;
constexpr std::uint64_t kProbeStream = 4;
constexpr std::uint64_t kSweepStream = 5;

std::vector<TokenSequence> sampled(const MarkovKernel& kernel, int count, int length,
                                   std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  std::vector<TokenSequence> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int b = 0; b < count; ++b) {
    out.push_back(
        sample_sequence(kernel, length, derive_seed(seed, {stream, index, static_cast<std::uint64_t>(b)})));
  }
  return out;
}

double test_loss(const ParamSet& params, const std::vector<std::vector<TokenSequence>>& test_set) {
  double total = 0.0;
  for (const auto& batch : test_set) total += empirical_loss(params, batch);
  return total / static_cast<double>(test_set.size());
}

struct Probe {
  std::size_t sequence;
  int position;
};

}  // namespace

MarkovKernel KernelSpec::make() const {
  return kind == MarkovKernel::Kind::Binary ? MarkovKernel::binary(p, q)
                                            : MarkovKernel::symmetric(p, states);
}

const char* to_string(Schedule s) noexcept { return s == Schedule::Cosine ? "cosine" : "constant"; }

Schedule schedule_from_string(const std::string& name) {
  if (name == "cosine") return Schedule::Cosine;
  if (name == "constant") return Schedule::Constant;
  throw Error(ErrorKind::InvalidArgument, "unknown schedule '" + name + "'");
}

double scheduled_lr(const AdamWConfig& opt, long t, long total) {
  if (opt.schedule == Schedule::Constant || total <= 0) return opt.lr;
  return opt.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(t) / static_cast<double>(total)));
}

void adamw_step(Eigen::Ref<Eigen::VectorXd> params, const Eigen::Ref<const Eigen::VectorXd>& grad,
                AdamState& state, long t, long total, const AdamWConfig& opt) {
  if (grad.size() != params.size() || state.m.size() != params.size() ||
      state.v.size() != params.size()) {
    throw Error(ErrorKind::ShapeMismatch, "adamw_step: parameter, gradient and state sizes differ");
  }
  const double lr = scheduled_lr(opt, t, total);
  ++state.steps;
  state.m = opt.beta1 * state.m + (1.0 - opt.beta1) * grad;
  state.v = opt.beta2 * state.v + (1.0 - opt.beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.steps));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.steps));
  params *= 1.0 - lr * opt.weight_decay;
  params.array() -= lr * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + opt.eps);
}

ModelConfig desk_model_config(int states, bool tied, int layers) {
  return ModelConfig::for_states(states, 8, 8, 32, 64, layers, tied);
}

void TrainConfig::validate() const {
  model.validate();
  if (iterations < 1) throw Error(ErrorKind::InvalidArgument, "iterations must be >= 1");
  if (batch_size < 1) throw Error(ErrorKind::InvalidArgument, "batch_size must be >= 1");
  if (!(optimizer.lr > 0.0)) throw Error(ErrorKind::InvalidArgument, "lr must be positive");
  if (optimizer.weight_decay < 0.0) throw Error(ErrorKind::InvalidArgument, "weight_decay must be >= 0");
  if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0 && optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0)) {
    throw Error(ErrorKind::InvalidArgument, "betas must lie in [0, 1)");
  }
  if (eval_every < 1) throw Error(ErrorKind::InvalidArgument, "eval_every must be >= 1");
  if (eval_batches < 1) throw Error(ErrorKind::InvalidArgument, "eval_batches must be >= 1");
  if (probe_count < 1) throw Error(ErrorKind::InvalidArgument, "probe_count must be >= 1");
  if (kernel.make().states() != model.states) {
    throw Error(ErrorKind::InvalidArgument, "kernel and model disagree on the number of states");
  }
}

const char* to_string(Classification c) noexcept {
  switch (c) {
    case Classification::Bigram: return "bigram";
    case Classification::Unigram: return "unigram";
    case Classification::Neither: return "neither";
  }
  return "neither";
}

Classification classify_loss(double final_loss, const MarkovKernel& kernel, double bigram_band,
                             double unigram_band) {
  if (!std::isfinite(final_loss)) return Classification::Neither;
  if (std::abs(final_loss - entropy_rate(kernel)) <= bigram_band) return Classification::Bigram;
  if (std::abs(final_loss - marginal_entropy(kernel)) <= unigram_band) return Classification::Unigram;
  return Classification::Neither;
}

Classification classify_convergence(const RunRecord& record, const MarkovKernel& kernel,
                                    double bigram_band, double unigram_band) {
  if (record.failed) return Classification::Neither;
  return classify_loss(record.final_loss, kernel, bigram_band, unigram_band);
}

std::vector<TokenSequence> training_batch(const MarkovKernel& kernel, const TrainConfig& config,
                                          long iteration) {
  return sampled(kernel, config.batch_size, config.model.N + 1, config.seed, kTrainStream,
                 static_cast<std::uint64_t>(iteration));
}

RunRecord train(const TrainConfig& config) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  const MarkovKernel kernel = config.kernel.make();
  const int N = config.model.N;

  RunRecord record;
  record.config = config;
  ParamSet params = init_params(config.model, derive_seed(config.seed, {kInitStream}), config.init_std);
  Eigen::VectorXd theta = params.flatten();
  AdamState state = AdamState::zeros(theta.size());

  std::vector<std::vector<TokenSequence>> test_set;
  for (int j = 0; j < config.eval_batches; ++j) {
    test_set.push_back(sampled(kernel, config.batch_size, N + 1, config.seed, kTestStream,
                               static_cast<std::uint64_t>(j)));
  }

  auto evaluate = [&](int iteration, double train_loss) {
    const double loss = test_loss(params, test_set);
    record.loss_curve.push_back({iteration, loss, train_loss});
    return std::isfinite(loss);
  };

  const long T = config.iterations;
  for (long t = 0; t < T; ++t) {
    const auto batch = training_batch(kernel, config, t);
    const LossGrad lg = empirical_loss_grad(params, batch);
    if (!std::isfinite(lg.loss) || !lg.grad.allFinite()) {
      record.failed = true;
      record.failure = "non-finite loss at iteration " + std::to_string(t);
      break;
    }
    if (t % config.eval_every == 0 && !evaluate(static_cast<int>(t), lg.loss)) {
      record.failed = true;
      record.failure = "non-finite test loss at iteration " + std::to_string(t);
      break;
    }
    adamw_step(theta, lg.grad, state, t, T, config.optimizer);
    params.unflatten(theta);
  }

  if (!record.failed) {
    const auto last = training_batch(kernel, config, T);
    const double train_loss = empirical_loss(params, last);
    if (!evaluate(static_cast<int>(T), train_loss) || !std::isfinite(train_loss)) {
      record.failed = true;
      record.failure = "non-finite loss after training";
    }
  }

  if (!record.failed) {
    record.final_loss = record.loss_curve.back().test_loss;
    // Probe positions: the first probe_count indices with x_n = 0 (and = 1)
    // across a fixed stream of probe sequences.
    std::vector<TokenSequence> probe_seqs;
    std::vector<Probe> zeros, ones;
    for (std::uint64_t s = 0; (zeros.size() < static_cast<std::size_t>(config.probe_count) ||
                               ones.size() < static_cast<std::size_t>(config.probe_count)) && s < 10000;
         ++s) {
      probe_seqs.push_back(sample_sequence(kernel, N, derive_seed(config.seed, {kProbeStream, s})));
      const TokenSequence& seq = probe_seqs.back();
      for (int n = 0; n < N; ++n) {
        auto& bucket = seq[n] == 0 ? zeros : ones;
        if (seq[n] <= 1 && bucket.size() < static_cast<std::size_t>(config.probe_count)) {
          bucket.push_back({probe_seqs.size() - 1, n});
        }
      }
    }
    std::vector<ForwardTrace> traces(probe_seqs.size());
    for (std::size_t s = 0; s < probe_seqs.size(); ++s) forward_into(params, probe_seqs[s], traces[s]);
    auto collect = [&](const std::vector<Probe>& probes, std::vector<double>& out) {
      double sum = 0.0;
      for (const Probe& pr : probes) {
        out.push_back(traces[pr.sequence].probs(1, pr.position));
        sum += out.back();
      }
      return probes.empty() ? 0.0 : sum / static_cast<double>(probes.size());
    };
    record.final_pred_zero = collect(zeros, record.probe_zero);
    record.final_pred_one = collect(ones, record.probe_one);

    const double marginal = marginal_entropy(kernel);
    int streak = 0;
    for (const LossPoint& lp : record.loss_curve) {
      streak = std::abs(lp.test_loss - marginal) <= kUnigramBand ? streak + 1 : 0;
      if (streak >= 3) record.visited_unigram_plateau = true;
    }
  }
  record.classification = classify_convergence(record, kernel);
  if (config.keep_params) record.params = params;
  record.wall_time =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return record;
}

int default_jobs() {
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

std::vector<RunRecord> run_all(const std::vector<TrainConfig>& configs, int jobs) {
  std::vector<std::optional<RunRecord>> slots(configs.size());
  std::vector<std::string> errors(configs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < configs.size(); i = next++) {
      try {
        slots[i] = train(configs[i]);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  const int workers = std::max(1, std::min<int>(jobs, static_cast<int>(configs.size())));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  std::vector<RunRecord> out;
  out.reserve(configs.size());
  for (std::size_t i = 0; i < configs.size(); ++i) {
    if (!slots[i]) {
      RunRecord failed;
      failed.config = configs[i];
      failed.failed = true;
      failed.failure = errors[i];
      out.push_back(std::move(failed));
    } else {
      out.push_back(std::move(*slots[i]));
    }
  }
  return out;
}

std::uint64_t run_seed(std::uint64_t master, int k) {
  return derive_seed(master, {kSweepStream, static_cast<std::uint64_t>(k)});
}

std::vector<std::pair<double, double>> pq_grid(int g) {
  if (g < 1) throw Error(ErrorKind::InvalidArgument, "grid size must be >= 1");
  std::vector<std::pair<double, double>> grid;
  for (int i = 1; i <= g; ++i) {
    for (int j = 1; j <= g; ++j) {
      grid.emplace_back(static_cast<double>(i) / (g + 1), static_cast<double>(j) / (g + 1));
    }
  }
  return grid;
}

SweepResult sweep_pq(const std::vector<std::pair<double, double>>& grid, bool tied, int seeds,
                     const TrainConfig& base, int jobs) {
  if (seeds < 1) throw Error(ErrorKind::InvalidArgument, "seeds must be >= 1");
  std::vector<TrainConfig> configs;
  for (const auto& [p, q] : grid) {
    for (int k = 0; k < seeds; ++k) {
      TrainConfig c = base;
      c.kernel = KernelSpec::binary(p, q);
      c.model.states = 2;
      c.model.head = Head::Sigmoid;
      c.model.tied = tied;
      c.seed = run_seed(base.seed, k);
      configs.push_back(c);
    }
  }
  SweepResult result;
  result.tied = tied;
  result.runs = run_all(configs, jobs);
  for (std::size_t cell = 0; cell < grid.size(); ++cell) {
    SweepCell sc;
    sc.p = grid[cell].first;
    sc.q = grid[cell].second;
    for (int k = 0; k < seeds; ++k) {
      const RunRecord& r = result.runs[cell * static_cast<std::size_t>(seeds) + static_cast<std::size_t>(k)];
      if (r.failed) {
        ++sc.failed;
        continue;
      }
      sc.mean_pred_zero += r.final_pred_zero;
      sc.mean_pred_one += r.final_pred_one;
      ++sc.runs;
    }
    if (sc.runs > 0) {
      sc.mean_pred_zero /= sc.runs;
      sc.mean_pred_one /= sc.runs;
    }
    result.cells.push_back(sc);
  }
  return result;
}

std::vector<RunRecord> depth_experiment(const std::vector<int>& layers, const KernelSpec& kernel,
                                        bool tied, int seeds, const TrainConfig& base, int jobs) {
  if (seeds < 1) throw Error(ErrorKind::InvalidArgument, "seeds must be >= 1");
  std::vector<TrainConfig> configs;
  for (int L : layers) {
    if (L < 1) throw Error(ErrorKind::InvalidArgument, "layer counts must be >= 1");
    for (int k = 0; k < seeds; ++k) {
      TrainConfig c = base;
      c.kernel = kernel;
      c.model.layers = L;
      c.model.tied = tied;
      c.model.states = kernel.make().states();
      c.model.head = c.model.states == 2 ? Head::Sigmoid : Head::Softmax;
      c.seed = run_seed(base.seed, k);
      configs.push_back(c);
    }
  }
  return run_all(configs, jobs);
}

}  // namespace markovlm
