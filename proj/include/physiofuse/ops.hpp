#pragma once

#include <optional>
#include <vector>

#include "physiofuse/rng.hpp"
#include "physiofuse/tensor.hpp"

namespace physiofuse {

// Differentiable operations. Binary elementwise operations require equal shapes
// or one operand with a single element (scalar broadcast); nothing else broadcasts.

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> transpose(const Tensor<T>& a);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);

template <typename T>
Tensor<T> relu(const Tensor<T>& a);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a);
template <typename T>
Tensor<T> exp(const Tensor<T>& a);
/// Throws DomainError on any non-positive element.
template <typename T>
Tensor<T> log(const Tensor<T>& a);

/// Reductions drop the reduced axis; without an axis the result has shape {1}.
template <typename T>
Tensor<T> sum(const Tensor<T>& a, std::optional<std::size_t> axis = std::nullopt);
template <typename T>
Tensor<T> mean(const Tensor<T>& a, std::optional<std::size_t> axis = std::nullopt);
/// Gradient flows to the first maximal element on ties.
template <typename T>
Tensor<T> max(const Tensor<T>& a, std::optional<std::size_t> axis = std::nullopt);

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape);

/// x[r×c] + bias[c] on every row.
template <typename T>
Tensor<T> add_row_bias(const Tensor<T>& x, const Tensor<T>& bias);

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x);

/// Per-row normalization to zero mean and unit variance, then gamma * x + beta.
template <typename T>
Tensor<T> layer_norm_rows(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                          T eps = T(1e-5));

/// Cross-correlation of x[Cin×T] with weight[Cout×Cin×K], stride 1, `padding`
/// zeros on each side, plus bias[Cout]. Output is [Cout×(T + 2·padding − K + 1)].
template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t padding);

/// Inverted dropout: identity when !train, otherwise zero with probability p and
/// scale survivors by 1/(1−p).
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, Rng& rng, bool train);

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts);
template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts);
template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t count);
template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t count);

/// Mean binary cross-entropy of logits against {0,1} labels, in the stable form
/// max(z,0) − z·y + log(1 + e^{−|z|}).
template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, const Tensor<T>& labels);

/// Mean squared error over the rows of pred/target[T×C] selected by mask[T].
template <typename T>
Tensor<T> mse_masked(const Tensor<T>& pred, const Tensor<T>& target, const std::vector<bool>& mask);

}  // namespace physiofuse
