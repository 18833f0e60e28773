#include "markovlm/report_io.hpp"

#include <cmath>
#include <sstream>

#include "markovlm/error.hpp"

namespace markovlm {

Json json_number(double x) {
  if (!std::isfinite(x)) return nullptr;
  return round9(x);
}

Json to_json(const MarkovKernel& kernel) {
  if (kernel.kind() == MarkovKernel::Kind::Binary) {
    return Json{{"type", "binary"}, {"p", json_number(kernel.p())}, {"q", json_number(kernel.q())}};
  }
  return Json{{"type", "symmetric"}, {"p", json_number(kernel.p())}, {"states", kernel.states()}};
}

Json to_json(const KernelSpec& spec) { return to_json(spec.make()); }

KernelSpec kernel_spec_from_json(const Json& j, KernelSpec base) {
  if (!j.is_object()) throw Error(ErrorKind::InvalidArgument, "kernel must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key == "type") {
      const auto t = value.get<std::string>();
      if (t == "binary") base.kind = MarkovKernel::Kind::Binary;
      else if (t == "symmetric") base.kind = MarkovKernel::Kind::Symmetric;
      else throw Error(ErrorKind::InvalidArgument, "unknown kernel type '" + t + "'");
    } else if (key == "p") {
      base.p = value.get<double>();
    } else if (key == "q") {
      base.q = value.get<double>();
    } else if (key == "states") {
      base.states = value.get<int>();
    } else {
      throw Error(ErrorKind::InvalidArgument, "unknown kernel key '" + key + "'");
    }
  }
  if (base.kind == MarkovKernel::Kind::Binary) base.states = 2;
  base.make();
  return base;
}

Json to_json(const Check& c) {
  Json j{{"name", c.name},
         {"value", json_number(c.value)},
         {"tolerance", json_number(c.tolerance)},
         {"relation", c.relation},
         {"pass", c.pass}};
  if (!c.note.empty()) j["note"] = c.note;
  return j;
}

Json to_json(const ConstructionReport& report) {
  Json checks = Json::array();
  for (const Check& c : report.checks) checks.push_back(to_json(c));
  return Json{{"kind", to_string(report.kind)},
              {"kernel", to_json(report.kernel)},
              {"horizon", report.horizon},
              {"tied", report.params.tied()},
              {"all_pass", report.all_pass()},
              {"checks", checks}};
}

Json to_json(const CurvatureResult& r) {
  return Json{{"found", r.found},
              {"curvature", json_number(r.curvature)},
              {"raw_form", json_number(r.raw_form)},
              {"t", json_number(r.t)},
              {"method", r.method}};
}

Json to_json(const InterpretationReport& r) {
  Json v = Json::array();
  for (Eigen::Index i = 0; i < r.fit.v.size(); ++i) v.push_back(static_cast<int>(r.fit.v[i]));
  Json j{{"attention_ratio", json_number(r.attention_ratio)},
         {"positional_spread", json_number(r.positional_spread)},
         {"rank1_fit",
          {{"v", v},
           {"e", json_number(r.fit.e)},
           {"p", json_number(r.fit.p)},
           {"w1", json_number(r.fit.w1)},
           {"beta", r.fit.beta},
           {"residual", json_number(r.fit.residual)}}},
         {"b", json_number(r.b)},
         {"formula_logits", {json_number(r.logit_one), json_number(r.logit_zero)}},
         {"formula_probs", {json_number(r.prob_one), json_number(r.prob_zero)}},
         {"degenerate", r.degenerate}};
  if (!r.note.empty()) j["note"] = r.note;
  return j;
}

Json to_json(const TrainConfig& c) {
  return Json{{"kernel", to_json(c.kernel)},
              {"model", to_json(c.model)},
              {"batch_size", c.batch_size},
              {"iterations", c.iterations},
              {"lr", json_number(c.optimizer.lr)},
              {"weight_decay", json_number(c.optimizer.weight_decay)},
              {"beta1", json_number(c.optimizer.beta1)},
              {"beta2", json_number(c.optimizer.beta2)},
              {"eps", json_number(c.optimizer.eps)},
              {"schedule", to_string(c.optimizer.schedule)},
              {"seed", c.seed},
              {"eval_every", c.eval_every},
              {"eval_batches", c.eval_batches},
              {"init_std", json_number(c.init_std)},
              {"probe_count", c.probe_count}};
}

TrainConfig train_config_from_json(const Json& j, TrainConfig base) {
  if (!j.is_object()) throw Error(ErrorKind::InvalidArgument, "config must be a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "kernel") base.kernel = kernel_spec_from_json(value, base.kernel);
      else if (key == "model") base.model = model_config_from_json(value, base.model);
      else if (key == "batch_size") base.batch_size = value.get<int>();
      else if (key == "iterations") base.iterations = value.get<int>();
      else if (key == "lr") base.optimizer.lr = value.get<double>();
      else if (key == "weight_decay") base.optimizer.weight_decay = value.get<double>();
      else if (key == "beta1") base.optimizer.beta1 = value.get<double>();
      else if (key == "beta2") base.optimizer.beta2 = value.get<double>();
      else if (key == "eps") base.optimizer.eps = value.get<double>();
      else if (key == "schedule") base.optimizer.schedule = schedule_from_string(value.get<std::string>());
      else if (key == "seed") base.seed = value.get<std::uint64_t>();
      else if (key == "eval_every") base.eval_every = value.get<int>();
      else if (key == "eval_batches") base.eval_batches = value.get<int>();
      else if (key == "init_std") base.init_std = value.get<double>();
      else if (key == "probe_count") base.probe_count = value.get<int>();
      else throw Error(ErrorKind::InvalidArgument, "unknown config key '" + key + "'");
    }
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::InvalidArgument, std::string("config: ") + e.what());
  }
  return base;
}

Json to_json(const RunRecord& r, bool with_wall_time) {
  Json curve = Json::array();
  for (const LossPoint& lp : r.loss_curve) {
    curve.push_back({{"iteration", lp.iteration},
                     {"test_loss", json_number(lp.test_loss)},
                     {"train_loss", json_number(lp.train_loss)}});
  }
  auto numbers = [](const std::vector<double>& xs) {
    Json a = Json::array();
    for (double x : xs) a.push_back(json_number(x));
    return a;
  };
  const MarkovKernel kernel = r.config.kernel.make();
  Json j{{"config", to_json(r.config)},
         {"entropy_rate", json_number(entropy_rate(kernel))},
         {"marginal_entropy", json_number(marginal_entropy(kernel))},
         {"loss_curve", curve},
         {"final_loss", json_number(r.final_loss)},
         {"final_pred_zero", json_number(r.final_pred_zero)},
         {"final_pred_one", json_number(r.final_pred_one)},
         {"probe_zero", numbers(r.probe_zero)},
         {"probe_one", numbers(r.probe_one)},
         {"classification", to_string(r.classification)},
         {"visited_unigram_plateau", r.visited_unigram_plateau},
         {"failed", r.failed}};
  if (r.failed) j["failure"] = r.failure;
  if (with_wall_time) j["wall_time"] = json_number(r.wall_time);
  return j;
}

std::string loss_curve_csv(const RunRecord& r) {
  const MarkovKernel kernel = r.config.kernel.make();
  std::ostringstream out;
  out << "# entropy_rate=" << fmt9(entropy_rate(kernel)) << "\n";
  out << "# marginal_entropy=" << fmt9(marginal_entropy(kernel)) << "\n";
  out << "iteration,test_loss,train_loss\n";
  for (const LossPoint& lp : r.loss_curve) {
    out << lp.iteration << "," << fmt9(lp.test_loss) << "," << fmt9(lp.train_loss) << "\n";
  }
  return out.str();
}

std::string probe_csv(const RunRecord& r) {
  const MarkovKernel kernel = r.config.kernel.make();
  std::ostringstream out;
  out << "# p=" << fmt9(kernel.p()) << "\n";
  out << "# pi1=" << fmt9(stationary(kernel)[1]) << "\n";
  out << "index,token,prediction\n";
  for (std::size_t i = 0; i < r.probe_zero.size(); ++i) out << i << ",0," << fmt9(r.probe_zero[i]) << "\n";
  for (std::size_t i = 0; i < r.probe_one.size(); ++i) out << i << ",1," << fmt9(r.probe_one[i]) << "\n";
  return out.str();
}

std::string sweep_csv(const SweepResult& sweep) {
  std::ostringstream out;
  out << "p,q,tied,seed,final_loss,final_pred_zero,final_pred_one,classification\n";
  for (const RunRecord& r : sweep.runs) {
    out << fmt9(r.config.kernel.p) << "," << fmt9(r.config.kernel.q) << ","
        << (r.config.model.tied ? "true" : "false") << "," << r.config.seed << ",";
    if (r.failed) {
      out << "nan,nan,nan,failed\n";
      continue;
    }
    out << fmt9(r.final_loss) << "," << fmt9(r.final_pred_zero) << "," << fmt9(r.final_pred_one)
        << "," << to_string(r.classification) << "\n";
  }
  return out.str();
}

std::string spectrum_csv(const Eigen::Ref<const Eigen::VectorXd>& eigenvalues) {
  std::ostringstream out;
  out << "index,eigenvalue\n";
  for (Eigen::Index i = 0; i < eigenvalues.size(); ++i) out << i << "," << fmt9(eigenvalues[i]) << "\n";
  return out.str();
}

}  // namespace markovlm
