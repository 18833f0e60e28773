#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "markovlm/config.hpp"
#include "markovlm/markov.hpp"
#include "markovlm/params.hpp"

namespace markovlm {

struct KernelSpec {
  MarkovKernel::Kind kind = MarkovKernel::Kind::Binary;
  double p = 0.5;
  double q = 0.8;
  int states = 2;

  static KernelSpec binary(double p, double q) { return {MarkovKernel::Kind::Binary, p, q, 2}; }
  static KernelSpec symmetric(double p, int states) {
    return {MarkovKernel::Kind::Symmetric, p, p, states};
  }
  MarkovKernel make() const;
};

enum class Schedule { Cosine, Constant };
const char* to_string(Schedule s) noexcept;
Schedule schedule_from_string(const std::string& name);

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 1e-3;
  Schedule schedule = Schedule::Cosine;
};

struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  long steps = 0;

  static AdamState zeros(Eigen::Index size) {
    return {Eigen::VectorXd::Zero(size), Eigen::VectorXd::Zero(size), 0};
  }
};

/// lr (1 + cos(pi t / T)) / 2 for the cosine schedule, lr otherwise.
double scheduled_lr(const AdamWConfig& opt, long t, long total);

/// One AdamW update at step t of `total` with bias-corrected moments and
/// decoupled weight decay.
void adamw_step(Eigen::Ref<Eigen::VectorXd> params, const Eigen::Ref<const Eigen::VectorXd>& grad,
                AdamState& state, long t, long total, const AdamWConfig& opt);

/// Desk-scale defaults: N = 64, d = m = 8, r = 32, batch 64.
ModelConfig desk_model_config(int states = 2, bool tied = true, int layers = 1);

struct TrainConfig {
  KernelSpec kernel;
  ModelConfig model = desk_model_config();
  int batch_size = 64;
  int iterations = 4000;
  AdamWConfig optimizer;
  std::uint64_t seed = 0;
  int eval_every = 100;
  int eval_batches = 20;
  double init_std = 0.02;
  int probe_count = 100;
  bool keep_params = false;

  /// Throws InvalidArgument on a bad field or a kernel/model state mismatch.
  void validate() const;
};

enum class Classification { Bigram, Unigram, Neither };
const char* to_string(Classification c) noexcept;

struct LossPoint {
  int iteration;
  double test_loss;
  double train_loss;
};

struct RunRecord {
  TrainConfig config;
  std::vector<LossPoint> loss_curve;
  double final_loss = 0.0;
  /// Mean predicted P(x_{n+1} = 1 | x_1^n) at probe positions with x_n = 0
  /// and x_n = 1 respectively.
  double final_pred_zero = 0.0;
  double final_pred_one = 0.0;
  std::vector<double> probe_zero;
  std::vector<double> probe_one;
  Classification classification = Classification::Neither;
  bool visited_unigram_plateau = false;
  bool failed = false;
  std::string failure;
  double wall_time = 0.0;
  std::optional<ParamSet> params;
};

inline constexpr double kBigramBand = 0.01;
inline constexpr double kUnigramBand = 0.01;

Classification classify_loss(double final_loss, const MarkovKernel& kernel,
                             double bigram_band = kBigramBand, double unigram_band = kUnigramBand);
Classification classify_convergence(const RunRecord& record, const MarkovKernel& kernel,
                                    double bigram_band = kBigramBand,
                                    double unigram_band = kUnigramBand);

/// Training batch for an iteration: B sequences of N + 1 tokens, seeded by
/// hash(seed, iteration, row).
std::vector<TokenSequence> training_batch(const MarkovKernel& kernel, const TrainConfig& config,
                                          long iteration);

/// Online training: a fresh batch every step, test loss on a held-out sample
/// of eval_batches batches every eval_every steps and at the end.
RunRecord train(const TrainConfig& config);

/// Runs each config on up to `jobs` threads; result i belongs to configs[i].
std::vector<RunRecord> run_all(const std::vector<TrainConfig>& configs, int jobs);

/// Per-run seed for seed index k of a sweep with master seed `master`.
std::uint64_t run_seed(std::uint64_t master, int k);

struct SweepCell {
  double p = 0.0;
  double q = 0.0;
  double mean_pred_zero = 0.0;
  double mean_pred_one = 0.0;
  int runs = 0;
  int failed = 0;
};

struct SweepResult {
  bool tied = true;
  std::vector<RunRecord> runs;   // cell-major, seed-minor
  std::vector<SweepCell> cells;
};

/// The g x g grid p, q in {1/(g+1), ..., g/(g+1)}; g = 9 gives 0.1 .. 0.9.
std::vector<std::pair<double, double>> pq_grid(int g);

SweepResult sweep_pq(const std::vector<std::pair<double, double>>& grid, bool tied, int seeds,
                     const TrainConfig& base, int jobs);

/// Trains every depth in `layers` with `seeds` seeds each; records are
/// depth-major.
std::vector<RunRecord> depth_experiment(const std::vector<int>& layers, const KernelSpec& kernel,
                                        bool tied, int seeds, const TrainConfig& base, int jobs);

/// Default worker count: hardware concurrency, at least 1.
int default_jobs();

}  // namespace markovlm
