#include "markovlm/markov.hpp"

#include <cmath>
#include <sstream>

#include "markovlm/error.hpp"
#include "markovlm/rng.hpp"

namespace markovlm {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "invalid-argument";
    case ErrorKind::OutOfRange: return "out-of-range";
    case ErrorKind::ShapeMismatch: return "shape-mismatch";
    case ErrorKind::InstanceTooLarge: return "instance-too-large";
    case ErrorKind::DimensionTooLarge: return "dimension-too-large";
    case ErrorKind::RegimeViolation: return "regime-violation";
    case ErrorKind::Precondition: return "precondition";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

namespace {

bool open_unit(double x) { return x > 0.0 && x < 1.0; }

}  // namespace

MarkovKernel MarkovKernel::binary(double p, double q) {
  if (!open_unit(p) || !open_unit(q)) {
    std::ostringstream msg;
    msg << "binary kernel needs 0 < p, q < 1 (got p=" << p << ", q=" << q << ")";
    throw Error(ErrorKind::InvalidArgument, msg.str());
  }
  return MarkovKernel(Kind::Binary, p, q, 2);
}

MarkovKernel MarkovKernel::symmetric(double p, int states) {
  if (!open_unit(p) || states < 2) {
    std::ostringstream msg;
    msg << "symmetric kernel needs 0 < p < 1 and S >= 2 (got p=" << p << ", S=" << states << ")";
    throw Error(ErrorKind::InvalidArgument, msg.str());
  }
  return MarkovKernel(Kind::Symmetric, p, p, states);
}

double MarkovKernel::transition(int from, int to) const {
  if (from < 0 || from >= states_ || to < 0 || to >= states_) {
    throw Error(ErrorKind::OutOfRange, "state index outside the kernel's state space");
  }
  if (kind_ == Kind::Binary) {
    if (from == 0) return to == 0 ? 1.0 - p_ : p_;
    return to == 0 ? q_ : 1.0 - q_;
  }
  return from == to ? 1.0 - p_ : p_ / static_cast<double>(states_ - 1);
}

Eigen::MatrixXd MarkovKernel::matrix() const {
  Eigen::MatrixXd m(states_, states_);
  for (int i = 0; i < states_; ++i) {
    for (int j = 0; j < states_; ++j) m(i, j) = transition(i, j);
  }
  return m;
}

std::string MarkovKernel::describe() const {
  std::ostringstream out;
  if (kind_ == Kind::Binary) {
    out << "binary(p=" << p_ << ",q=" << q_ << ")";
  } else {
    out << "symmetric(p=" << p_ << ",S=" << states_ << ")";
  }
  return out.str();
}

double binary_entropy(double x) {
  if (x <= 0.0 || x >= 1.0) return 0.0;
  return -x * std::log(x) - (1.0 - x) * std::log1p(-x);
}

double entropy(const Eigen::Ref<const Eigen::VectorXd>& probs) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    if (probs[i] > 0.0) h -= probs[i] * std::log(probs[i]);
  }
  return h;
}

StationaryDist stationary(const MarkovKernel& kernel) {
  if (kernel.kind() == MarkovKernel::Kind::Binary) {
    const double s = kernel.p() + kernel.q();
    StationaryDist pi(2);
    pi << kernel.q() / s, kernel.p() / s;
    return pi;
  }
  return StationaryDist::Constant(kernel.states(), 1.0 / kernel.states());
}

double entropy_rate(const MarkovKernel& kernel) {
  const double p = kernel.p();
  if (kernel.kind() == MarkovKernel::Kind::Binary) {
    const double q = kernel.q();
    return (q * binary_entropy(p) + p * binary_entropy(q)) / (p + q);
  }
  return binary_entropy(p) + p * std::log(static_cast<double>(kernel.states() - 1));
}

double marginal_entropy(const MarkovKernel& kernel) {
  return entropy(stationary(kernel));
}

double mutual_info_gap(const MarkovKernel& kernel) {
  // Rounding can push the exact-zero case a hair negative.
  return std::max(0.0, marginal_entropy(kernel) - entropy_rate(kernel));
}

Eigen::VectorXd kernel_row(const MarkovKernel& kernel, int state) {
  if (state < 0 || state >= kernel.states()) {
    throw Error(ErrorKind::OutOfRange, "kernel_row: state " + std::to_string(state) +
                                           " outside [0, " + std::to_string(kernel.states()) + ")");
  }
  Eigen::VectorXd row(kernel.states());
  for (int j = 0; j < kernel.states(); ++j) row[j] = kernel.transition(state, j);
  return row;
}

namespace {

int draw_categorical(const Eigen::Ref<const Eigen::VectorXd>& probs, SplitMix64& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  const int last = static_cast<int>(probs.size()) - 1;
  for (int j = 0; j < last; ++j) {
    acc += probs[j];
    if (u < acc) return j;
  }
  return last;
}

}  // namespace

TokenSequence sample_sequence(const MarkovKernel& kernel, int length, std::uint64_t seed) {
  if (length < 1) throw Error(ErrorKind::InvalidArgument, "sample_sequence: length must be >= 1");
  SplitMix64 rng(seed);
  const Eigen::MatrixXd P = kernel.matrix();
  TokenSequence tokens(static_cast<std::size_t>(length));
  tokens[0] = draw_categorical(stationary(kernel), rng);
  for (int n = 1; n < length; ++n) {
    tokens[static_cast<std::size_t>(n)] =
        draw_categorical(P.row(tokens[static_cast<std::size_t>(n - 1)]).transpose(), rng);
  }
  return tokens;
}

void enumerate_weighted_sequences(const MarkovKernel& kernel, int length,
                                  const WeightedSequenceVisitor& visit) {
  if (length < 1) throw Error(ErrorKind::InvalidArgument, "enumeration length must be >= 1");
  const int S = kernel.states();
  std::uint64_t count = 1;
  for (int n = 0; n < length; ++n) {
    count *= static_cast<std::uint64_t>(S);
    if (count > kMaxEnumeration) {
      throw Error(ErrorKind::InstanceTooLarge,
                  "S^N exceeds the 2^24 enumeration guard (S=" + std::to_string(S) +
                      ", N=" + std::to_string(length) + ")");
    }
  }
  const Eigen::MatrixXd P = kernel.matrix();
  const StationaryDist pi = stationary(kernel);

  // Odometer over tokens with running prefix products so each step is O(1)
  // amortised.
  std::vector<int> tokens(static_cast<std::size_t>(length), 0);
  std::vector<double> prefix(static_cast<std::size_t>(length));
  prefix[0] = pi[0];
  for (int n = 1; n < length; ++n) prefix[n] = prefix[n - 1] * P(0, 0);
  for (std::uint64_t k = 0; k < count; ++k) {
    visit(std::span<const int>(tokens), prefix[length - 1]);
    int pos = length - 1;
    while (pos >= 0 && tokens[pos] == S - 1) {
      tokens[pos] = 0;
      --pos;
    }
    if (pos < 0) break;
    ++tokens[pos];
    for (int n = pos; n < length; ++n) {
      prefix[n] = n == 0 ? pi[tokens[0]] : prefix[n - 1] * P(tokens[n - 1], tokens[n]);
    }
  }
}

std::vector<WeightedSequence> weighted_sequences(const MarkovKernel& kernel, int length) {
  std::vector<WeightedSequence> out;
  enumerate_weighted_sequences(kernel, length, [&](std::span<const int> tokens, double prob) {
    out.push_back({TokenSequence(tokens.begin(), tokens.end()), prob});
  });
  return out;
}

}  // namespace markovlm
