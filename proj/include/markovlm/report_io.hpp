#pragma once

#include <string>

#include "markovlm/constructions.hpp"
#include "markovlm/grad.hpp"
#include "markovlm/io.hpp"
#include "markovlm/landscape.hpp"
#include "markovlm/train.hpp"

namespace markovlm {

/// 9-significant-digit JSON number; null when not finite.
Json json_number(double x);

Json to_json(const MarkovKernel& kernel);
Json to_json(const KernelSpec& spec);
KernelSpec kernel_spec_from_json(const Json& j, KernelSpec base = {});

Json to_json(const Check& check);
Json to_json(const ConstructionReport& report);
Json to_json(const CurvatureResult& result);
Json to_json(const InterpretationReport& report);

/// Keys: kernel, model, batch_size, iterations, lr, weight_decay, beta1,
/// beta2, eps, schedule, seed, eval_every, eval_batches, init_std,
/// probe_count. Unknown keys are rejected.
Json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const Json& j, TrainConfig base = {});

/// Wall time is left out unless asked for, so records stay byte-stable.
Json to_json(const RunRecord& record, bool with_wall_time = false);

/// iteration,test_loss,train_loss with the two entropy baselines as leading
/// "# name=value" lines.
std::string loss_curve_csv(const RunRecord& record);
/// index,token,prediction for every probe position, with p and pi_1 (binary)
/// as leading comment lines.
std::string probe_csv(const RunRecord& record);
/// p,q,tied,seed,final_loss,final_pred_zero,final_pred_one,classification
std::string sweep_csv(const SweepResult& sweep);
/// index,eigenvalue
std::string spectrum_csv(const Eigen::Ref<const Eigen::VectorXd>& eigenvalues);

}  // namespace markovlm
