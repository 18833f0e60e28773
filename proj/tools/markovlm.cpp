// Command-line front end: sample, verify, train, sweep, depth, interpret.
//
// Exit codes: 0 success, 1 check failure (or every run failed), 2 usage error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "markovlm/constructions.hpp"
#include "markovlm/error.hpp"
#include "markovlm/grad.hpp"
#include "markovlm/io.hpp"
#include "markovlm/landscape.hpp"
#include "markovlm/report_io.hpp"
#include "markovlm/train.hpp"

namespace fs = std::filesystem;
using namespace markovlm;

namespace {

constexpr int kExitCheckFailure = 1;
constexpr int kExitUsage = 2;

const CLI::Validator kOpenUnit(
    [](std::string& s) -> std::string {
      try {
        const double x = std::stod(s);
        if (x > 0.0 && x < 1.0) return {};
      } catch (const std::exception&) {
      }
      return "value " + s + " must lie strictly between 0 and 1";
    },
    "(0,1)");

struct KernelFlags {
  double p = 0.5;
  double q = 0.8;
  int states = 2;
  CLI::Option* p_opt = nullptr;
  CLI::Option* q_opt = nullptr;
  CLI::Option* states_opt = nullptr;

  void add(CLI::App* app, double p0, double q0) {
    p = p0;
    q = q0;
    p_opt = app->add_option("--p", p, "switch probability out of state 0 (symmetric: leave probability)")
                ->check(kOpenUnit)
                ->capture_default_str();
    q_opt = app->add_option("--q", q, "switch probability out of state 1 (binary only)")
                ->check(kOpenUnit)
                ->capture_default_str();
    states_opt = app->add_option("--states", states, "number of states; > 2 selects the symmetric kernel")
                     ->check(CLI::Range(2, 64))
                     ->capture_default_str();
  }

  KernelSpec spec() const {
    return states == 2 ? KernelSpec::binary(p, q) : KernelSpec::symmetric(p, states);
  }

  void apply(KernelSpec& spec) const {
    if (states_opt->count() > 0) {
      spec.states = states;
      spec.kind = states == 2 ? MarkovKernel::Kind::Binary : MarkovKernel::Kind::Symmetric;
    }
    if (p_opt->count() > 0) spec.p = p;
    if (q_opt->count() > 0) spec.q = q;
    if (spec.kind == MarkovKernel::Kind::Symmetric) spec.q = spec.p;
  }
};

struct TrainFlags {
  std::string config_path;
  KernelFlags kernel;
  bool tied = true;
  bool untied = false;
  int layers = 1, d = 8, m = 8, r = 32, N = 64, heads = 1;
  int batch = 64, iterations = 4000, eval_every = 100, eval_batches = 20;
  double lr = 1e-3, weight_decay = 1e-3, init_std = 0.02;
  std::string schedule = "cosine";
  std::uint64_t seed = 0;
  std::vector<CLI::Option*> model_opts;
  CLI::Option *layers_opt, *d_opt, *m_opt, *r_opt, *N_opt, *heads_opt, *tied_opt, *untied_opt;
  CLI::Option *batch_opt, *iter_opt, *eval_opt, *eval_b_opt, *lr_opt, *wd_opt, *std_opt, *sched_opt,
      *seed_opt;

  void add(CLI::App* app, bool with_layers = true) {
    app->add_option("--config", config_path, "JSON config file; flags override its values")
        ->check(CLI::ExistingFile);
    kernel.add(app, 0.5, 0.8);
    tied_opt = app->add_flag("--tied", tied, "tie the head to the embedding (default)");
    untied_opt = app->add_flag("--untied", untied, "separate head and embedding");
    layers_opt = with_layers ? app->add_option("--layers", layers, "transformer layers")->check(CLI::PositiveNumber)
                             : nullptr;
    d_opt = app->add_option("--d", d, "embedding dimension")->check(CLI::PositiveNumber)->capture_default_str();
    m_opt = app->add_option("--m", m, "attention dimension")->check(CLI::PositiveNumber)->capture_default_str();
    r_opt = app->add_option("--r", r, "FF hidden width")->check(CLI::PositiveNumber)->capture_default_str();
    N_opt = app->add_option("--n", N, "context length N")->check(CLI::PositiveNumber)->capture_default_str();
    heads_opt = app->add_option("--heads", heads, "attention heads")->check(CLI::PositiveNumber)->capture_default_str();
    batch_opt = app->add_option("--batch", batch, "batch size")->check(CLI::PositiveNumber)->capture_default_str();
    iter_opt = app->add_option("--iterations", iterations, "training steps")->check(CLI::PositiveNumber)->capture_default_str();
    eval_opt = app->add_option("--eval-every", eval_every, "steps between test evaluations")->check(CLI::PositiveNumber)->capture_default_str();
    eval_b_opt = app->add_option("--eval-batches", eval_batches, "held-out batches per evaluation")->check(CLI::PositiveNumber)->capture_default_str();
    lr_opt = app->add_option("--lr", lr, "peak learning rate")->check(CLI::PositiveNumber)->capture_default_str();
    wd_opt = app->add_option("--weight-decay", weight_decay, "decoupled weight decay")->check(CLI::NonNegativeNumber)->capture_default_str();
    std_opt = app->add_option("--init-std", init_std, "initial weight std")->check(CLI::PositiveNumber)->capture_default_str();
    sched_opt = app->add_option("--schedule", schedule, "learning-rate schedule")->check(CLI::IsMember({"cosine", "constant"}))->capture_default_str();
    seed_opt = app->add_option("--seed", seed, "master seed")->capture_default_str();
  }

  TrainConfig build() const {
    if (tied && untied && tied_opt->count() > 0) {
      throw Error(ErrorKind::InvalidArgument, "--tied and --untied are mutually exclusive");
    }
    TrainConfig c;
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      Json j;
      try {
        j = Json::parse(in);
      } catch (const Json::exception& e) {
        throw Error(ErrorKind::InvalidArgument, "--config: " + std::string(e.what()));
      }
      c = train_config_from_json(j, c);
    }
    kernel.apply(c.kernel);
    if (layers_opt && layers_opt->count() > 0) c.model.layers = layers;
    if (d_opt->count() > 0) c.model.d = d;
    if (m_opt->count() > 0) c.model.m = m;
    if (r_opt->count() > 0) c.model.r = r;
    if (N_opt->count() > 0) c.model.N = N;
    if (heads_opt->count() > 0) c.model.heads = heads;
    if (untied_opt->count() > 0) c.model.tied = false;
    if (tied_opt->count() > 0) c.model.tied = true;
    c.model.states = c.kernel.make().states();
    c.model.head = c.model.states == 2 ? Head::Sigmoid : Head::Softmax;
    if (batch_opt->count() > 0) c.batch_size = batch;
    if (iter_opt->count() > 0) c.iterations = iterations;
    if (eval_opt->count() > 0) c.eval_every = eval_every;
    if (eval_b_opt->count() > 0) c.eval_batches = eval_batches;
    if (lr_opt->count() > 0) c.optimizer.lr = lr;
    if (wd_opt->count() > 0) c.optimizer.weight_decay = weight_decay;
    if (std_opt->count() > 0) c.init_std = init_std;
    if (sched_opt->count() > 0) c.optimizer.schedule = schedule_from_string(schedule);
    if (seed_opt->count() > 0) c.seed = seed;
    c.validate();
    return c;
  }
};

void emit(const std::string& text, const std::string& path) {
  if (path.empty() || path == "-") {
    std::cout << text;
  } else {
    write_text_file(path, text);
  }
}

int cmd_sample(const KernelFlags& kf, int n, int count, std::uint64_t seed, const std::string& out) {
  const MarkovKernel kernel = kf.spec().make();
  std::ostringstream text;
  for (int i = 0; i < count; ++i) {
    const TokenSequence seq = sample_sequence(kernel, n, derive_seed(seed, {static_cast<std::uint64_t>(i)}));
    for (std::size_t k = 0; k < seq.size(); ++k) text << (k ? " " : "") << seq[k];
    text << "\n";
  }
  emit(text.str(), out);
  return 0;
}

struct VerifyFlags {
  std::string kind;
  KernelFlags kernel;
  bool tied = false;
  bool untied = false;
  int d = 4, m = 4, r = 16, N = 8;
  std::string fill = "zeros";
  std::uint64_t fill_seed = 0;
  std::string out;
  std::string spectrum_out;
};

int cmd_verify(const VerifyFlags& f) {
  if (f.tied && f.untied) throw Error(ErrorKind::InvalidArgument, "--tied and --untied are mutually exclusive");
  PointKind kind = point_kind_from_string(f.kind);
  if (kind == PointKind::Unigram && f.untied) kind = PointKind::UnigramUntied;
  ModelConfig config;
  config.d = f.d;
  config.m = f.m;
  config.r = f.r;
  config.N = f.N;
  config.tied = !f.untied;
  config.validate();
  const FreeFill fill = f.fill == "gaussian" ? FreeFill::gaussian(f.fill_seed) : FreeFill::zeros();
  const ConstructionReport report =
      build_and_certify(kind, f.kernel.p, f.kernel.q, config, config.N, fill);
  Json j = to_json(report);
  if (!f.spectrum_out.empty() && !(report.checks.size() == 1 && report.checks[0].name == "regime")) {
    const HessianReport h = numerical_hessian(report.params, report.kernel, report.horizon);
    write_text_file(f.spectrum_out, spectrum_csv(h.eigenvalues));
    j["min_eigenvalue"] = json_number(h.min_eigenvalue());
  }
  emit(j.dump(2) + "\n", f.out);
  for (const Check& c : report.checks) {
    std::fprintf(stderr, "%-32s %-4s value=%s tol=%s %s\n", c.name.c_str(), c.pass ? "PASS" : "FAIL",
                 fmt9(c.value).c_str(), fmt9(c.tolerance).c_str(), c.note.c_str());
  }
  return report.all_pass() ? 0 : kExitCheckFailure;
}

void print_run_summary(const RunRecord& r) {
  std::printf("%-8s L=%d tied=%-5s seed=%-20llu loss=%-12s pred0=%-12s pred1=%-12s %s%s\n",
              r.config.kernel.make().describe().c_str(), r.config.model.layers,
              r.config.model.tied ? "true" : "false", static_cast<unsigned long long>(r.config.seed),
              fmt9(r.final_loss).c_str(), fmt9(r.final_pred_zero).c_str(), fmt9(r.final_pred_one).c_str(),
              to_string(r.classification), r.failed ? (" FAILED: " + r.failure).c_str() : "");
}

int cmd_train(const TrainFlags& f, const std::string& out, bool timing) {
  TrainConfig config = f.build();
  config.keep_params = true;
  const RunRecord r = train(config);
  const fs::path dir(out);
  write_text_file(dir / "run.json", to_json(r, timing).dump(2) + "\n");
  write_text_file(dir / "loss_curve.csv", loss_curve_csv(r));
  write_text_file(dir / "probes.csv", probe_csv(r));
  if (r.params) save_params(dir / "run.params", *r.params);
  print_run_summary(r);
  return r.failed ? kExitCheckFailure : 0;
}

int cmd_sweep(const TrainFlags& f, int grid, int seeds, int jobs, const std::string& out) {
  const TrainConfig base = f.build();
  if (base.kernel.kind != MarkovKernel::Kind::Binary) {
    throw Error(ErrorKind::InvalidArgument, "sweep runs over binary kernels only");
  }
  const SweepResult sweep = sweep_pq(pq_grid(grid), base.model.tied, seeds, base, jobs);
  const fs::path dir(out);
  write_text_file(dir / "sweep.csv", sweep_csv(sweep));
  std::ostringstream cells;
  cells << "p,q,tied,mean_pred_zero,mean_pred_one,runs,failed\n";
  for (const SweepCell& c : sweep.cells) {
    cells << fmt9(c.p) << "," << fmt9(c.q) << "," << (sweep.tied ? "true" : "false") << ","
          << fmt9(c.mean_pred_zero) << "," << fmt9(c.mean_pred_one) << "," << c.runs << ","
          << c.failed << "\n";
  }
  write_text_file(dir / "sweep_cells.csv", cells.str());
  std::printf("%-6s %-6s %-12s %-12s %s\n", "p", "q", "pred_zero", "pred_one", "runs(failed)");
  int succeeded = 0;
  for (const SweepCell& c : sweep.cells) {
    std::printf("%-6s %-6s %-12s %-12s %d(%d)\n", fmt9(c.p).c_str(), fmt9(c.q).c_str(),
                fmt9(c.mean_pred_zero).c_str(), fmt9(c.mean_pred_one).c_str(), c.runs, c.failed);
    succeeded += c.runs;
  }
  return succeeded > 0 ? 0 : kExitCheckFailure;
}

std::vector<int> parse_layers(const std::string& list) {
  std::vector<int> out;
  std::stringstream in(list);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      std::size_t used = 0;
      const int v = std::stoi(item, &used);
      if (used != item.size() || v < 1) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::exception&) {
      throw Error(ErrorKind::InvalidArgument, "--layers: '" + item + "' is not a positive integer");
    }
  }
  if (out.empty()) throw Error(ErrorKind::InvalidArgument, "--layers: empty list");
  return out;
}

int cmd_depth(const TrainFlags& f, const std::string& layer_list, int seeds, int jobs,
              const std::string& out) {
  const TrainConfig base = f.build();
  const std::vector<int> layers = parse_layers(layer_list);
  const auto runs = depth_experiment(layers, base.kernel, base.model.tied, seeds, base, jobs);
  const fs::path dir(out);
  std::ostringstream csv;
  csv << "layers,seed,final_loss,final_pred_zero,final_pred_one,classification,visited_unigram_plateau\n";
  int succeeded = 0;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const RunRecord& r = runs[i];
    csv << r.config.model.layers << "," << r.config.seed << ",";
    if (r.failed) {
      csv << "nan,nan,nan,failed,false\n";
    } else {
      ++succeeded;
      csv << fmt9(r.final_loss) << "," << fmt9(r.final_pred_zero) << "," << fmt9(r.final_pred_one)
          << "," << to_string(r.classification) << "," << (r.visited_unigram_plateau ? "true" : "false")
          << "\n";
    }
    const std::string stem = "L" + std::to_string(r.config.model.layers) + "_seed" + std::to_string(i % seeds);
    write_text_file(dir / (stem + "_loss_curve.csv"), loss_curve_csv(r));
    print_run_summary(r);
  }
  write_text_file(dir / "depth.csv", csv.str());
  for (int L : layers) {
    int counts[3] = {0, 0, 0};
    for (const RunRecord& r : runs) {
      if (r.config.model.layers == L) ++counts[static_cast<int>(r.classification)];
    }
    std::printf("L=%d bigram=%d unigram=%d neither=%d\n", L, counts[0], counts[1], counts[2]);
  }
  return succeeded > 0 ? 0 : kExitCheckFailure;
}

int cmd_interpret(const std::string& params_path, const KernelFlags& kf, int probes,
                  std::uint64_t seed, const std::string& out) {
  const ParamSet params = load_params(params_path);
  const MarkovKernel kernel = kf.spec().make();
  std::vector<TokenSequence> batch;
  for (int i = 0; i < probes; ++i) {
    batch.push_back(sample_sequence(kernel, params.config().N, derive_seed(seed, {static_cast<std::uint64_t>(i)})));
  }
  const InterpretationReport report = interpret(params, batch);
  emit(to_json(report).dump(2) + "\n", out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Minimal transformers on first-order Markov chains: constructions, landscape checks "
               "and training experiments."};
  app.require_subcommand(1);

  auto* sample = app.add_subcommand("sample", "write sampled token sequences, one per line");
  KernelFlags sample_kernel;
  sample_kernel.add(sample, 0.5, 0.8);
  int sample_n = 64, sample_count = 10;
  std::uint64_t sample_seed = 0;
  std::string sample_out;
  sample->add_option("--n", sample_n, "sequence length")->check(CLI::PositiveNumber)->capture_default_str();
  sample->add_option("--count", sample_count, "number of sequences")->check(CLI::PositiveNumber)->capture_default_str();
  sample->add_option("--seed", sample_seed, "seed")->capture_default_str();
  sample->add_option("--out", sample_out, "output file (default stdout)");

  auto* verify = app.add_subcommand("verify", "build a parameter point and certify its properties");
  VerifyFlags vf;
  verify->add_option("--kind", vf.kind, "global-low, global-high, unigram or unigram-untied")
      ->required()
      ->check(CLI::IsMember({"global-low", "global-high", "unigram", "unigram-untied", "global_low_switch",
                             "global_high_switch", "unigram_untied"}));
  vf.kernel.add(verify, 0.5, 0.8);
  verify->add_flag("--tied", vf.tied, "weight tying (default)");
  verify->add_flag("--untied", vf.untied, "separate head; with --kind unigram selects the untied point");
  verify->add_option("--d", vf.d, "embedding dimension")->check(CLI::PositiveNumber)->capture_default_str();
  verify->add_option("--m", vf.m, "attention dimension")->check(CLI::PositiveNumber)->capture_default_str();
  verify->add_option("--r", vf.r, "FF hidden width")->check(CLI::PositiveNumber)->capture_default_str();
  verify->add_option("--n", vf.N, "context length and enumeration horizon")->check(CLI::Range(1, 16))->capture_default_str();
  verify->add_option("--fill", vf.fill, "free-block fill")->check(CLI::IsMember({"zeros", "gaussian"}))->capture_default_str();
  verify->add_option("--fill-seed", vf.fill_seed, "seed for --fill gaussian")->capture_default_str();
  verify->add_option("--out", vf.out, "report file (default stdout)");
  verify->add_option("--spectrum-out", vf.spectrum_out, "write the Hessian spectrum as CSV");

  auto* train_cmd = app.add_subcommand("train", "train one model and write run.json, loss_curve.csv, probes.csv, run.params");
  TrainFlags tf;
  tf.add(train_cmd);
  std::string train_out = "run";
  bool timing = false;
  train_cmd->add_option("--out", train_out, "output directory")->capture_default_str();
  train_cmd->add_flag("--timing", timing, "include wall time in run.json");

  auto* sweep = app.add_subcommand("sweep", "train over a (p, q) grid; writes sweep.csv and sweep_cells.csv");
  TrainFlags sf;
  sf.add(sweep);
  int grid = 9, sweep_seeds = 5, sweep_jobs = default_jobs();
  std::string sweep_out = "sweep";
  sweep->add_option("--grid", grid, "grid size g (p, q in 1/(g+1) .. g/(g+1))")->check(CLI::Range(1, 99))->capture_default_str();
  sweep->add_option("--seeds", sweep_seeds, "runs per cell")->check(CLI::PositiveNumber)->capture_default_str();
  sweep->add_option("--jobs", sweep_jobs, "parallel runs")->check(CLI::PositiveNumber)->capture_default_str();
  sweep->add_option("--out", sweep_out, "output directory")->capture_default_str();

  auto* depth = app.add_subcommand("depth", "train several depths; writes depth.csv and per-run loss curves");
  TrainFlags df;
  df.add(depth, false);
  std::string layer_list = "1,2";
  int depth_seeds = 5, depth_jobs = default_jobs();
  std::string depth_out = "depth";
  depth->add_option("--layers", layer_list, "comma-separated layer counts")->capture_default_str();
  depth->add_option("--seeds", depth_seeds, "runs per depth")->check(CLI::PositiveNumber)->capture_default_str();
  depth->add_option("--jobs", depth_jobs, "parallel runs")->check(CLI::PositiveNumber)->capture_default_str();
  depth->add_option("--out", depth_out, "output directory")->capture_default_str();

  auto* interp = app.add_subcommand("interpret", "read a trained single-layer model into the low-rank formula");
  std::string params_path, interp_out;
  KernelFlags ikf;
  int probe_seqs = 100;
  std::uint64_t interp_seed = 0;
  interp->add_option("--params", params_path, "parameter file written by train")->required()->check(CLI::ExistingFile);
  ikf.add(interp, 0.2, 0.3);
  interp->add_option("--probes", probe_seqs, "probe sequences")->check(CLI::PositiveNumber)->capture_default_str();
  interp->add_option("--seed", interp_seed, "probe seed")->capture_default_str();
  interp->add_option("--out", interp_out, "report file (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*sample) return cmd_sample(sample_kernel, sample_n, sample_count, sample_seed, sample_out);
    if (*verify) return cmd_verify(vf);
    if (*train_cmd) return cmd_train(tf, train_out, timing);
    if (*sweep) return cmd_sweep(sf, grid, sweep_seeds, sweep_jobs, sweep_out);
    if (*depth) return cmd_depth(df, layer_list, depth_seeds, depth_jobs, depth_out);
    if (*interp) return cmd_interpret(params_path, ikf, probe_seqs, interp_seed, interp_out);
  } catch (const Error& e) {
    std::fprintf(stderr, "error (%s): %s\n", to_string(e.kind()), e.what());
    const bool usage = e.kind() == ErrorKind::InvalidArgument || e.kind() == ErrorKind::OutOfRange ||
                       e.kind() == ErrorKind::ShapeMismatch || e.kind() == ErrorKind::InstanceTooLarge ||
                       e.kind() == ErrorKind::DimensionTooLarge;
    return usage ? kExitUsage : kExitCheckFailure;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitCheckFailure;
  }
  return kExitUsage;
}
