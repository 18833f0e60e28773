#pragma once

#include <string>

namespace markovlm {

/// Output head. Sigmoid is the binary reduced form: one embedding vector
/// e = E_1 - E_0, one head vector a = A_1 - A_0 and a scalar bias. Softmax
/// keeps one row per state.
enum class Head { Sigmoid, Softmax };

struct ModelConfig {
  int d = 4;        // embedding dimension
  int m = 4;        // attention dimension (split across heads)
  int r = 16;       // FF hidden width
  int N = 8;        // context length
  int layers = 1;
  int states = 2;   // vocabulary size S
  int heads = 1;
  bool tied = true;
  Head head = Head::Sigmoid;

  /// Rows of the embedding / head matrices: 1 for Sigmoid, S for Softmax.
  int token_rows() const noexcept { return head == Head::Sigmoid ? 1 : states; }
  int head_dim() const noexcept { return m / heads; }

  /// Throws InvalidArgument on non-positive sizes, m % heads != 0, or a
  /// Sigmoid head with S != 2.
  void validate() const;

  /// Config whose head matches the vocabulary: Sigmoid for S = 2.
  static ModelConfig for_states(int states, int d, int m, int r, int N, int layers, bool tied,
                                int heads = 1);
};

const char* to_string(Head head) noexcept;
Head head_from_string(const std::string& name);

}  // namespace markovlm
