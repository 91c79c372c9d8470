#include "dit/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "dit/errors.hpp"

namespace dit {

namespace {

template <typename T>
using NodePtr = std::shared_ptr<detail::Node<T>>;

template <typename T>
using BackwardFn = std::function<void(detail::Node<T>&)>;

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data, const char* op, std::vector<NodePtr<T>> inputs,
                      BackwardFn<T> backward) {
  if (finite_checks()) {
    for (const T v : data) {
      if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by ") + op);
    }
  }
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  const bool track = grad_enabled() && std::any_of(inputs.begin(), inputs.end(),
                                                   [](const NodePtr<T>& n) { return n->requires_grad; });
  if (track) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
  }
  return Tensor<T>::from_node(std::move(node));
}

std::vector<std::size_t> contiguous_strides(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

std::size_t normalize_axis(int axis, std::size_t rank, const Shape& shape) {
  const auto r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw IndexError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
  return static_cast<std::size_t>(a);
}

struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> stride_a;
  std::vector<std::size_t> stride_b;
  bool same = false;
};

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b) {
  BroadcastPlan plan;
  plan.out = broadcast_shape(a, b);
  plan.same = (a == b);
  const std::size_t r = plan.out.size();
  auto padded = [r](const Shape& s) {
    Shape p(r - s.size(), 1);
    p.insert(p.end(), s.begin(), s.end());
    return p;
  };
  const Shape pa = padded(a), pb = padded(b);
  auto sa = contiguous_strides(pa), sb = contiguous_strides(pb);
  for (std::size_t i = 0; i < r; ++i) {
    if (pa[i] == 1 && plan.out[i] != 1) sa[i] = 0;
    if (pb[i] == 1 && plan.out[i] != 1) sb[i] = 0;
  }
  plan.stride_a = std::move(sa);
  plan.stride_b = std::move(sb);
  return plan;
}

// Calls f(out_index, a_offset, b_offset) for every output element in order.
template <typename F>
void for_each_broadcast(const BroadcastPlan& plan, F&& f) {
  const std::size_t n = shape_numel(plan.out);
  if (plan.same) {
    for (std::size_t i = 0; i < n; ++i) f(i, i, i);
    return;
  }
  const std::size_t r = plan.out.size();
  std::vector<std::size_t> idx(r, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t i = 0; i < n; ++i) {
    f(i, ia, ib);
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      ia += plan.stride_a[d];
      ib += plan.stride_b[d];
      if (idx[d] < plan.out[d]) break;
      ia -= plan.stride_a[d] * plan.out[d];
      ib -= plan.stride_b[d] * plan.out[d];
      idx[d] = 0;
    }
  }
}

template <typename T, typename Fwd, typename DA, typename DB>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, const char* op, Fwd fwd, DA da, DB db) {
  auto plan = std::make_shared<BroadcastPlan>(plan_broadcast(a.shape(), b.shape()));
  auto ad = a.data(), bd = b.data();
  std::vector<T> out(shape_numel(plan->out));
  for_each_broadcast(*plan, [&](std::size_t i, std::size_t ia, std::size_t ib) { out[i] = fwd(ad[ia], bd[ib]); });
  return make_result<T>(plan->out, std::move(out), op, {a.node(), b.node()}, [plan, da, db](detail::Node<T>& self) {
    auto& na = *self.inputs[0];
    auto& nb = *self.inputs[1];
    const auto& g = self.grad;
    if (na.requires_grad) {
      auto& ga = na.ensure_grad();
      for_each_broadcast(*plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
        ga[ia] += g[i] * da(na.data[ia], nb.data[ib]);
      });
    }
    if (nb.requires_grad) {
      auto& gb = nb.ensure_grad();
      for_each_broadcast(*plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
        gb[ib] += g[i] * db(na.data[ia], nb.data[ib]);
      });
    }
  });
}

// Elementwise op whose derivative is expressed through input x and output y.
template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary(const Tensor<T>& x, const char* op, Fwd fwd, Deriv deriv) {
  auto xd = x.data();
  std::vector<T> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) out[i] = fwd(xd[i]);
  return make_result<T>(x.shape(), std::move(out), op, {x.node()}, [deriv](detail::Node<T>& self) {
    auto& in = *self.inputs[0];
    auto& gi = in.ensure_grad();
    for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += self.grad[i] * deriv(in.data[i], self.data[i]);
  });
}

// Rows x cols addressing for reductions along one axis.
struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t ea = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t eb = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (ea != eb && ea != 1 && eb != 1) {
      throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    out[i] = std::max(ea, eb);
  }
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(
      a, b, "add", [](T x, T y) { return x + y; }, [](T, T) { return T{1}; }, [](T, T) { return T{1}; });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(
      a, b, "sub", [](T x, T y) { return x - y; }, [](T, T) { return T{1}; }, [](T, T) { return T{-1}; });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(
      a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y) { return y; }, [](T x, T) { return x; });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, double s) {
  const T f = static_cast<T>(s);
  return unary(
      x, "scale", [f](T v) { return v * f; }, [f](T, T) { return f; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, double s) {
  const T c = static_cast<T>(s);
  return unary(
      x, "add_scalar", [c](T v) { return v + c; }, [](T, T) { return T{1}; });
}

namespace {

template <typename T>
void gemm_accumulate(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = arow[p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  auto mismatch = [&] { return ShapeError("matmul shape mismatch: " + shape_str(sa) + " x " + shape_str(sb)); };
  if (sa.size() < 2 || sb.size() < 2) throw mismatch();
  const std::size_t k = sa.back();
  std::size_t batch = 1, m = 0, n = sb.back();
  bool shared_b = false;
  Shape out_shape(sa.begin(), sa.end() - 1);
  out_shape.push_back(n);
  if (sb.size() == 2) {
    if (sb[0] != k) throw mismatch();
    shared_b = true;
    m = a.numel() / k;
  } else {
    if (sa.size() != sb.size() || sb[sb.size() - 2] != k) throw mismatch();
    for (std::size_t i = 0; i + 2 < sa.size(); ++i) {
      if (sa[i] != sb[i]) throw mismatch();
      batch *= sa[i];
    }
    m = sa[sa.size() - 2];
  }
  const std::size_t a_step = m * k, b_step = shared_b ? 0 : k * n, c_step = m * n;
  std::vector<T> out(batch * m * n, T{0});
  const T* ad = a.data().data();
  const T* bd = b.data().data();
  for (std::size_t bi = 0; bi < batch; ++bi) {
    gemm_accumulate(ad + bi * a_step, bd + bi * b_step, out.data() + bi * c_step, m, k, n);
  }
  return make_result<T>(std::move(out_shape), std::move(out), "matmul", {a.node(), b.node()},
                        [batch, m, k, n, a_step, b_step, c_step](detail::Node<T>& self) {
                          auto& na = *self.inputs[0];
                          auto& nb = *self.inputs[1];
                          const T* g = self.grad.data();
                          if (na.requires_grad) {
                            // dA = dC * B^T
                            T* ga = na.ensure_grad().data();
                            for (std::size_t bi = 0; bi < batch; ++bi) {
                              const T* gc = g + bi * c_step;
                              const T* bm = nb.data.data() + bi * b_step;
                              T* gam = ga + bi * a_step;
                              for (std::size_t i = 0; i < m; ++i) {
                                for (std::size_t p = 0; p < k; ++p) {
                                  T acc{0};
                                  for (std::size_t j = 0; j < n; ++j) acc += gc[i * n + j] * bm[p * n + j];
                                  gam[i * k + p] += acc;
                                }
                              }
                            }
                          }
                          if (nb.requires_grad) {
                            // dB = A^T * dC
                            T* gb = nb.ensure_grad().data();
                            for (std::size_t bi = 0; bi < batch; ++bi) {
                              const T* gc = g + bi * c_step;
                              const T* am = na.data.data() + bi * a_step;
                              T* gbm = gb + bi * b_step;
                              for (std::size_t i = 0; i < m; ++i) {
                                for (std::size_t p = 0; p < k; ++p) {
                                  const T aip = am[i * k + p];
                                  for (std::size_t j = 0; j < n; ++j) gbm[p * n + j] += aip * gc[i * n + j];
                                }
                              }
                            }
                          }
                        });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  auto y = matmul(x, w);
  return bias.defined() ? add(y, bias) : y;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  auto xd = x.data();
  return make_result<T>(std::move(shape), std::vector<T>(xd.begin(), xd.end()), "reshape", {x.node()},
                        [](detail::Node<T>& self) {
                          auto& gi = self.inputs[0]->ensure_grad();
                          for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += self.grad[i];
                        });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& perm) {
  const Shape& in_shape = x.shape();
  const std::size_t r = in_shape.size();
  if (perm.size() != r) throw ShapeError("permutation rank does not match " + shape_str(in_shape));
  std::vector<bool> used(r, false);
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) {
    if (perm[i] >= r || used[perm[i]]) throw ShapeError("invalid permutation for " + shape_str(in_shape));
    used[perm[i]] = true;
    out_shape[i] = in_shape[perm[i]];
  }
  const auto in_strides = contiguous_strides(in_shape);
  const std::size_t n = x.numel();
  auto source = std::make_shared<std::vector<std::size_t>>(n);
  std::vector<std::size_t> idx(r, 0);
  std::size_t off = 0;
  for (std::size_t i = 0; i < n; ++i) {
    (*source)[i] = off;
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      off += in_strides[perm[d]];
      if (idx[d] < out_shape[d]) break;
      off -= in_strides[perm[d]] * out_shape[d];
      idx[d] = 0;
    }
  }
  auto xd = x.data();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = xd[(*source)[i]];
  return make_result<T>(std::move(out_shape), std::move(out), "permute", {x.node()}, [source](detail::Node<T>& self) {
    auto& gi = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < source->size(); ++i) gi[(*source)[i]] += self.grad[i];
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x, int axis0, int axis1) {
  const std::size_t r = x.rank();
  std::vector<std::size_t> perm(r);
  std::iota(perm.begin(), perm.end(), 0);
  std::swap(perm[normalize_axis(axis0, r, x.shape())], perm[normalize_axis(axis1, r, x.shape())]);
  return permute(x, perm);
}

template <typename T>
Tensor<T> concat(std::span<const Tensor<T>> parts, int axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape& first = parts[0].shape();
  const std::size_t ax = normalize_axis(axis, first.size(), first);
  Shape out_shape = first;
  out_shape[ax] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == ax) || s[i] == first[i];
    if (!ok) throw ShapeError("concat mismatch: " + shape_str(first) + " vs " + shape_str(s));
    out_shape[ax] += s[ax];
  }
  const AxisSplit whole = split_at(out_shape, ax);
  auto chunk = std::make_shared<std::vector<std::size_t>>();
  std::vector<NodePtr<T>> inputs;
  for (const auto& p : parts) {
    chunk->push_back(p.shape()[ax] * whole.inner);
    inputs.push_back(p.node());
  }
  const std::size_t row = whole.len * whole.inner;
  std::vector<T> out(shape_numel(out_shape));
  for (std::size_t o = 0; o < whole.outer; ++o) {
    std::size_t pos = o * row;
    for (std::size_t pi = 0; pi < parts.size(); ++pi) {
      auto src = parts[pi].data().subspan(o * (*chunk)[pi], (*chunk)[pi]);
      std::copy(src.begin(), src.end(), out.begin() + static_cast<std::ptrdiff_t>(pos));
      pos += (*chunk)[pi];
    }
  }
  const std::size_t outer = whole.outer;
  return make_result<T>(std::move(out_shape), std::move(out), "concat", std::move(inputs),
                        [chunk, outer, row](detail::Node<T>& self) {
                          for (std::size_t o = 0; o < outer; ++o) {
                            std::size_t pos = o * row;
                            for (std::size_t pi = 0; pi < self.inputs.size(); ++pi) {
                              auto& in = *self.inputs[pi];
                              const std::size_t c = (*chunk)[pi];
                              if (in.requires_grad) {
                                auto& gi = in.ensure_grad();
                                for (std::size_t j = 0; j < c; ++j) gi[o * c + j] += self.grad[pos + j];
                              }
                              pos += c;
                            }
                          }
                        });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, int axis, std::size_t start, std::size_t length) {
  const Shape& in_shape = x.shape();
  const std::size_t ax = normalize_axis(axis, in_shape.size(), in_shape);
  if (length == 0 || start + length > in_shape[ax]) {
    throw IndexError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) + ") out of range for " +
                     shape_str(in_shape));
  }
  const AxisSplit s = split_at(in_shape, ax);
  Shape out_shape = in_shape;
  out_shape[ax] = length;
  const std::size_t in_row = s.len * s.inner, out_row = length * s.inner, skip = start * s.inner;
  auto xd = x.data();
  std::vector<T> out(s.outer * out_row);
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(xd.begin() + static_cast<std::ptrdiff_t>(o * in_row + skip), out_row,
                out.begin() + static_cast<std::ptrdiff_t>(o * out_row));
  }
  const std::size_t outer = s.outer;
  return make_result<T>(std::move(out_shape), std::move(out), "slice", {x.node()},
                        [outer, in_row, out_row, skip](detail::Node<T>& self) {
                          auto& gi = self.inputs[0]->ensure_grad();
                          for (std::size_t o = 0; o < outer; ++o) {
                            for (std::size_t j = 0; j < out_row; ++j) gi[o * in_row + skip + j] += self.grad[o * out_row + j];
                          }
                        });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  double acc = 0.0;
  for (const T v : x.data()) acc += v;
  return make_result<T>(Shape{1}, {static_cast<T>(acc)}, "sum", {x.node()}, [](detail::Node<T>& self) {
    auto& gi = self.inputs[0]->ensure_grad();
    for (auto& g : gi) g += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

template <typename T>
Tensor<T> sum_axis(const Tensor<T>& x, int axis, bool keepdim) {
  const Shape& in_shape = x.shape();
  const std::size_t ax = normalize_axis(axis, in_shape.size(), in_shape);
  const AxisSplit s = split_at(in_shape, ax);
  Shape out_shape;
  for (std::size_t i = 0; i < in_shape.size(); ++i) {
    if (i != ax) out_shape.push_back(in_shape[i]);
    else if (keepdim) out_shape.push_back(1);
  }
  if (out_shape.empty()) out_shape.push_back(1);
  auto xd = x.data();
  std::vector<T> out(s.outer * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      double acc = 0.0;
      for (std::size_t l = 0; l < s.len; ++l) acc += xd[(o * s.len + l) * s.inner + i];
      out[o * s.inner + i] = static_cast<T>(acc);
    }
  }
  return make_result<T>(std::move(out_shape), std::move(out), "sum_axis", {x.node()}, [s](detail::Node<T>& self) {
    auto& gi = self.inputs[0]->ensure_grad();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t l = 0; l < s.len; ++l) {
        for (std::size_t i = 0; i < s.inner; ++i) gi[(o * s.len + l) * s.inner + i] += self.grad[o * s.inner + i];
      }
    }
  });
}

template <typename T>
Tensor<T> mean_axis(const Tensor<T>& x, int axis, bool keepdim) {
  return scale(sum_axis(x, axis, keepdim), 1.0 / static_cast<double>(x.dim(axis)));
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, double eps) {
  const std::size_t d = x.shape().back();
  if (d < 2) throw ShapeError("layer_norm needs a last dimension >= 2, got " + shape_str(x.shape()));
  const std::size_t rows = x.numel() / d;
  auto xd = x.data();
  std::vector<T> out(x.numel());
  auto inv_std = std::make_shared<std::vector<T>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xd.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = static_cast<T>(is);
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = static_cast<T>((row[j] - mu) * is);
  }
  return make_result<T>(x.shape(), std::move(out), "layer_norm", {x.node()}, [inv_std, d, rows](detail::Node<T>& self) {
    auto& gi = self.inputs[0]->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = self.data.data() + r * d;
      const T* g = self.grad.data() + r * d;
      double mean_g = 0.0, mean_gy = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        mean_g += g[j];
        mean_gy += g[j] * y[j];
      }
      mean_g /= static_cast<double>(d);
      mean_gy /= static_cast<double>(d);
      const double is = (*inv_std)[r];
      for (std::size_t j = 0; j < d; ++j) gi[r * d + j] += static_cast<T>(is * (g[j] - mean_g - y[j] * mean_gy));
    }
  });
}

template <typename T>
Tensor<T> gelu_tanh(const Tensor<T>& x) {
  constexpr T c = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T k = T(0.044715);
  return unary(
      x, "gelu_tanh",
      [](T v) { return T(0.5) * v * (T(1) + std::tanh(c * (v + k * v * v * v))); },
      [](T v, T) {
        const T t = std::tanh(c * (v + k * v * v * v));
        return T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * c * (T(1) + T(3) * k * v * v);
      });
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
  return unary(
      x, "silu", [](T v) { return v / (T(1) + std::exp(-v)); },
      [](T v, T) {
        const T s = T(1) / (T(1) + std::exp(-v));
        return s * (T(1) + v * (T(1) - s));
      });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return unary(
      x, "tanh", [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return unary(
      x, "exp", [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  return unary(
      x, "log", [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
  return unary(
      x, "square", [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
  return unary(
      x, "abs", [](T v) { return std::abs(v); },
      [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x) {
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  auto xd = x.data();
  std::vector<T> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xd.data() + r * n;
    const T mx = *std::max_element(row, row + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const T e = std::exp(row[j] - mx);
      out[r * n + j] = e;
      z += e;
    }
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = static_cast<T>(out[r * n + j] / z);
  }
  return make_result<T>(x.shape(), std::move(out), "softmax", {x.node()}, [n, rows](detail::Node<T>& self) {
    auto& gi = self.inputs[0]->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = self.data.data() + r * n;
      const T* g = self.grad.data() + r * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < n; ++j) gi[r * n + j] += static_cast<T>(y[j] * (g[j] - dot));
    }
  });
}

template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const std::int64_t> rows) {
  if (table.rank() != 2) throw ShapeError("embedding table must be 2-D, got " + shape_str(table.shape()));
  const std::size_t vocab = table.shape()[0], d = table.shape()[1];
  if (rows.empty()) throw ShapeError("embedding lookup of zero rows");
  auto idx = std::make_shared<std::vector<std::size_t>>();
  for (auto r : rows) {
    if (r < 0 || static_cast<std::size_t>(r) >= vocab) {
      throw IndexError("embedding row " + std::to_string(r) + " outside table of " + std::to_string(vocab) + " rows");
    }
    idx->push_back(static_cast<std::size_t>(r));
  }
  auto td = table.data();
  std::vector<T> out(idx->size() * d);
  for (std::size_t i = 0; i < idx->size(); ++i) {
    std::copy_n(td.begin() + static_cast<std::ptrdiff_t>((*idx)[i] * d), d, out.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  return make_result<T>(Shape{idx->size(), d}, std::move(out), "embedding", {table.node()}, [idx, d](detail::Node<T>& self) {
    auto& gi = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < idx->size(); ++i) {
      for (std::size_t j = 0; j < d; ++j) gi[(*idx)[i] * d + j] += self.grad[i * d + j];
    }
  });
}

#define DIT_INSTANTIATE_OPS(T)                                                                   \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> scale(const Tensor<T>&, double);                                            \
  template Tensor<T> add_scalar(const Tensor<T>&, double);                                       \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);               \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                           \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);                 \
  template Tensor<T> transpose(const Tensor<T>&, int, int);                                      \
  template Tensor<T> concat(std::span<const Tensor<T>>, int);                                    \
  template Tensor<T> slice(const Tensor<T>&, int, std::size_t, std::size_t);                     \
  template Tensor<T> sum(const Tensor<T>&);                                                      \
  template Tensor<T> mean(const Tensor<T>&);                                                     \
  template Tensor<T> sum_axis(const Tensor<T>&, int, bool);                                      \
  template Tensor<T> mean_axis(const Tensor<T>&, int, bool);                                     \
  template Tensor<T> layer_norm(const Tensor<T>&, double);                                       \
  template Tensor<T> gelu_tanh(const Tensor<T>&);                                                \
  template Tensor<T> silu(const Tensor<T>&);                                                     \
  template Tensor<T> tanh(const Tensor<T>&);                                                     \
  template Tensor<T> exp(const Tensor<T>&);                                                      \
  template Tensor<T> log(const Tensor<T>&);                                                      \
  template Tensor<T> square(const Tensor<T>&);                                                   \
  template Tensor<T> abs(const Tensor<T>&);                                                      \
  template Tensor<T> softmax_lastdim(const Tensor<T>&);                                          \
  template Tensor<T> embedding(const Tensor<T>&, std::span<const std::int64_t>);

DIT_INSTANTIATE_OPS(float)
DIT_INSTANTIATE_OPS(double)

#undef DIT_INSTANTIATE_OPS

}  // namespace dit
