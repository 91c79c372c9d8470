#pragma once

// Differentiable primitives. Every function here records a backward rule when
// gradients are enabled and at least one input requires a gradient.
//
// Binary elementwise ops broadcast NumPy-style: shapes are right-aligned and
// each extent must match or be 1 on one side.

#include <cstdint>
#include <span>
#include <vector>

#include "dit/tensor.hpp"

namespace dit {

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& x, double s);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& x, double s);

/// [..., m, k] x [k, n] -> [..., m, n], or batched when both operands share
/// the same leading extents: [B..., m, k] x [B..., k, n].
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
/// x[..., k] * w[k, n] + bias[n]; `bias` may be undefined.
template <typename T> Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias);

template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T> Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& perm);
template <typename T> Tensor<T> transpose(const Tensor<T>& x, int axis0, int axis1);
template <typename T> Tensor<T> concat(std::span<const Tensor<T>> parts, int axis);
template <typename T> Tensor<T> slice(const Tensor<T>& x, int axis, std::size_t start, std::size_t length);

template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);
/// Reduces `axis`; the result keeps it as extent 1 when `keepdim`.
template <typename T> Tensor<T> sum_axis(const Tensor<T>& x, int axis, bool keepdim = false);
template <typename T> Tensor<T> mean_axis(const Tensor<T>& x, int axis, bool keepdim = false);

/// Normalizes the last axis to zero mean / unit (biased) variance. No affine.
template <typename T> Tensor<T> layer_norm(const Tensor<T>& x, double eps);
template <typename T> Tensor<T> gelu_tanh(const Tensor<T>& x);
template <typename T> Tensor<T> silu(const Tensor<T>& x);
template <typename T> Tensor<T> tanh(const Tensor<T>& x);
template <typename T> Tensor<T> exp(const Tensor<T>& x);
template <typename T> Tensor<T> log(const Tensor<T>& x);
template <typename T> Tensor<T> square(const Tensor<T>& x);
template <typename T> Tensor<T> abs(const Tensor<T>& x);
template <typename T> Tensor<T> softmax_lastdim(const Tensor<T>& x);

/// Gathers rows of table[V, d] -> [n, d].
template <typename T> Tensor<T> embedding(const Tensor<T>& table, std::span<const std::int64_t> rows);

/// Stop-gradient.
template <typename T> Tensor<T> detach(const Tensor<T>& x) { return x.detach(); }

template <typename T> Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T> Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T> Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }

Shape broadcast_shape(const Shape& a, const Shape& b);

}  // namespace dit
