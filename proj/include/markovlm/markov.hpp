#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace markovlm {

using TokenSequence = std::vector<int>;
using StationaryDist = Eigen::VectorXd;

/// First-order Markov kernel on {0, ..., S-1}.
///
/// Binary(p, q) has P = [1-p, p; q, 1-q]. Symmetric(p, S) stays put with
/// probability 1-p and otherwise jumps uniformly to one of the other S-1
/// states. Both constructors validate their arguments, so every live kernel
/// has rows summing to one.
class MarkovKernel {
 public:
  enum class Kind { Binary, Symmetric };

  static MarkovKernel binary(double p, double q);
  static MarkovKernel symmetric(double p, int states);

  Kind kind() const noexcept { return kind_; }
  double p() const noexcept { return p_; }
  /// Binary only; for a symmetric kernel this returns p.
  double q() const noexcept { return q_; }
  int states() const noexcept { return states_; }

  double transition(int from, int to) const;
  Eigen::MatrixXd matrix() const;

  /// Short human-readable tag, e.g. "binary(p=0.5,q=0.8)".
  std::string describe() const;

 private:
  MarkovKernel(Kind kind, double p, double q, int states)
      : kind_(kind), p_(p), q_(q), states_(states) {}

  Kind kind_;
  double p_;
  double q_;
  int states_;
};

/// Binary entropy in nats; h(0) = h(1) = 0.
double binary_entropy(double x);
/// Shannon entropy in nats of a probability vector.
double entropy(const Eigen::Ref<const Eigen::VectorXd>& probs);

StationaryDist stationary(const MarkovKernel& kernel);
double entropy_rate(const MarkovKernel& kernel);
double marginal_entropy(const MarkovKernel& kernel);
/// H(pi) - H(x_{n+1} | x_n); the mutual information between consecutive states.
double mutual_info_gap(const MarkovKernel& kernel);
Eigen::VectorXd kernel_row(const MarkovKernel& kernel, int state);

/// x_1 ~ pi, then x_{n+1} | x_n ~ row(x_n). Deterministic in `seed`.
TokenSequence sample_sequence(const MarkovKernel& kernel, int length, std::uint64_t seed);

/// Largest S^N accepted by the exact enumerators.
inline constexpr std::uint64_t kMaxEnumeration = std::uint64_t{1} << 24;

using WeightedSequenceVisitor =
    std::function<void(std::span<const int> tokens, double probability)>;

/// Visits all S^N sequences in lexicographic order with their path
/// probability pi(x_1) * prod P(x_n, x_{n+1}). Throws InstanceTooLarge past
/// the guard.
void enumerate_weighted_sequences(const MarkovKernel& kernel, int length,
                                  const WeightedSequenceVisitor& visit);

struct WeightedSequence {
  TokenSequence tokens;
  double probability;
};

/// Materialised form of enumerate_weighted_sequences.
std::vector<WeightedSequence> weighted_sequences(const MarkovKernel& kernel, int length);

}  // namespace markovlm
