#include "physiofuse/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "gemm.hpp"

namespace physiofuse {

using detail::make_op;

namespace {

template <typename T>
void require_rank(const Tensor<T>& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                         shape_str(t.shape()));
  }
}

/// Grad buffer of input i, or nullptr when that input does not need one.
template <typename T>
T* grad_of(Node<T>& self, std::size_t i) {
  auto& in = *self.inputs[i];
  if (!in.requires_grad) return nullptr;
  return in.ensure_grad().data();
}

template <typename T>
Shape broadcast_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() == b.shape()) return a.shape();
  if (b.numel() == 1) return a.shape();
  if (a.numel() == 1) return b.shape();
  throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                       shape_str(b.shape()) + " are not broadcastable");
}

enum class Binary { kAdd, kSub, kMul };

template <typename T>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, Binary kind, const char* name) {
  const Shape shape = broadcast_shape(a, b, name);
  const std::size_t n = shape_numel(shape);
  const bool a_scalar = a.numel() == 1 && n != 1;
  const bool b_scalar = b.numel() == 1 && n != 1;
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T x = av[a_scalar ? 0 : i];
    const T y = bv[b_scalar ? 0 : i];
    switch (kind) {
      case Binary::kAdd: out[i] = x + y; break;
      case Binary::kSub: out[i] = x - y; break;
      case Binary::kMul: out[i] = x * y; break;
    }
  }
  return make_op<T>(shape, std::move(out), {a, b}, name, [kind, a_scalar, b_scalar](Node<T>& self) {
    const auto& g = self.grad;
    const auto& x = self.inputs[0]->value;
    const auto& y = self.inputs[1]->value;
    const std::size_t n = g.size();
    if (T* ga = grad_of(self, 0)) {
      for (std::size_t i = 0; i < n; ++i) {
        T d = g[i];
        if (kind == Binary::kMul) d *= y[b_scalar ? 0 : i];
        ga[a_scalar ? 0 : i] += d;
      }
    }
    if (T* gb = grad_of(self, 1)) {
      for (std::size_t i = 0; i < n; ++i) {
        T d = g[i];
        if (kind == Binary::kSub) d = -d;
        if (kind == Binary::kMul) d *= x[a_scalar ? 0 : i];
        gb[b_scalar ? 0 : i] += d;
      }
    }
  });
}

/// Applies f elementwise; df(x, y) is the derivative given input x and output y.
template <typename T, typename F, typename DF>
Tensor<T> unary(const Tensor<T>& a, const char* name, F f, DF df) {
  const auto av = a.data();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  return make_op<T>(a.shape(), std::move(out), {a}, name, [df](Node<T>& self) {
    T* ga = grad_of(self, 0);
    if (!ga) return;
    const auto& x = self.inputs[0]->value;
    for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] * df(x[i], self.value[i]);
  });
}

/// Splits a shape around `axis` into (outer, extent, inner) for strided reductions.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

enum class Reduce { kSum, kMean, kMax };

template <typename T>
Tensor<T> reduce(const Tensor<T>& a, std::optional<std::size_t> axis, Reduce kind, const char* name) {
  if (a.numel() == 0) throw DomainError(std::string(name) + ": empty tensor");
  Shape out_shape;
  AxisSplit s;
  if (axis) {
    if (*axis >= a.rank()) {
      throw DimensionError(std::string(name) + ": axis " + std::to_string(*axis) + " out of range for shape " +
                           shape_str(a.shape()));
    }
    s = split_axis(a.shape(), *axis);
    out_shape = a.shape();
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(*axis));
    if (out_shape.empty()) out_shape = {1};
  } else {
    s.extent = a.numel();
    out_shape = {1};
  }
  const auto av = a.data();
  std::vector<T> out(s.outer * s.inner);
  std::vector<std::size_t> argmax;
  if (kind == Reduce::kMax) argmax.resize(out.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.extent * s.inner + in;
      const std::size_t dst = o * s.inner + in;
      if (kind == Reduce::kMax) {
        std::size_t best = 0;
        T best_v = av[base];
        for (std::size_t e = 1; e < s.extent; ++e) {
          const T v = av[base + e * s.inner];
          if (v > best_v) {
            best_v = v;
            best = e;
          }
        }
        out[dst] = best_v;
        argmax[dst] = best;
      } else {
        T acc = 0;
        for (std::size_t e = 0; e < s.extent; ++e) acc += av[base + e * s.inner];
        out[dst] = kind == Reduce::kMean ? acc / static_cast<T>(s.extent) : acc;
      }
    }
  }
  return make_op<T>(out_shape, std::move(out), {a}, name, [s, kind, argmax = std::move(argmax)](Node<T>& self) {
    T* ga = grad_of(self, 0);
    if (!ga) return;
    const T factor = kind == Reduce::kMean ? T(1) / static_cast<T>(s.extent) : T(1);
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.extent * s.inner + in;
        const T g = self.grad[o * s.inner + in];
        if (kind == Reduce::kMax) {
          ga[base + argmax[o * s.inner + in] * s.inner] += g;
        } else {
          for (std::size_t e = 0; e < s.extent; ++e) ga[base + e * s.inner] += g * factor;
        }
      }
    }
  });
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner extents differ: " + shape_str(a.shape()) + " · " + shape_str(b.shape()));
  }
  std::vector<T> out(m * n, T(0));
  if (k > 0) detail::gemm(false, false, m, n, k, a.data().data(), b.data().data(), out.data(), false);
  return make_op<T>({m, n}, std::move(out), {a, b}, "matmul", [m, n, k](Node<T>& self) {
    if (k == 0) return;
    const T* g = self.grad.data();
    if (T* ga = grad_of(self, 0)) {
      detail::gemm(false, true, m, k, n, g, self.inputs[1]->value.data(), ga, true);
    }
    if (T* gb = grad_of(self, 1)) {
      detail::gemm(true, false, k, n, m, self.inputs[0]->value.data(), g, gb, true);
    }
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  require_rank(a, 2, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  const auto av = a.data();
  std::vector<T> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = av[i * c + j];
  return make_op<T>({c, r}, std::move(out), {a}, "transpose", [r, c](Node<T>& self) {
    T* ga = grad_of(self, 0);
    if (!ga) return;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += self.grad[j * r + i];
  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, Binary::kAdd, "add");
}
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, Binary::kSub, "sub");
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, Binary::kMul, "mul");
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  return unary(
      a, "scale", [factor](T x) { return x * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return unary(
      a, "relu", [](T x) { return x < T(0) ? T(0) : x; }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return unary(
      a, "sigmoid",
      [](T x) {
        if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
        const T e = std::exp(x);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  return unary(
      a, "exp", [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  for (T x : a.data()) {
    if (!(x > T(0))) throw DomainError("log: non-positive input " + std::to_string(static_cast<double>(x)));
  }
  return unary(
      a, "log", [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a, std::optional<std::size_t> axis) {
  return reduce(a, axis, Reduce::kSum, "sum");
}
template <typename T>
Tensor<T> mean(const Tensor<T>& a, std::optional<std::size_t> axis) {
  return reduce(a, axis, Reduce::kMean, "mean");
}
template <typename T>
Tensor<T> max(const Tensor<T>& a, std::optional<std::size_t> axis) {
  return reduce(a, axis, Reduce::kMax, "max");
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  std::vector<T> out(a.data().begin(), a.data().end());
  return make_op<T>(std::move(shape), std::move(out), {a}, "reshape", [](Node<T>& self) {
    T* ga = grad_of(self, 0);
    if (!ga) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> add_row_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  require_rank(x, 2, "add_row_bias");
  const std::size_t r = x.dim(0), c = x.dim(1);
  if (bias.numel() != c) {
    throw DimensionError("add_row_bias: bias " + shape_str(bias.shape()) + " does not match columns of " +
                         shape_str(x.shape()));
  }
  const auto xv = x.data();
  const auto bv = bias.data();
  std::vector<T> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = xv[i * c + j] + bv[j];
  return make_op<T>(x.shape(), std::move(out), {x, bias}, "add_row_bias", [r, c](Node<T>& self) {
    const auto& g = self.grad;
    if (T* gx = grad_of(self, 0)) {
      for (std::size_t i = 0; i < r * c; ++i) gx[i] += g[i];
    }
    if (T* gb = grad_of(self, 1)) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gb[j] += g[i * c + j];
    }
  });
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  require_rank(x, 2, "softmax_rows");
  const std::size_t r = x.dim(0), c = x.dim(1);
  const auto xv = x.data();
  std::vector<T> out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    const T* row = xv.data() + i * c;
    T* dst = out.data() + i * c;
    const T mx = *std::max_element(row, row + c);
    T total = 0;
    for (std::size_t j = 0; j < c; ++j) {
      dst[j] = std::exp(row[j] - mx);
      total += dst[j];
    }
    const T inv = T(1) / total;
    for (std::size_t j = 0; j < c; ++j) dst[j] *= inv;
  }
  return make_op<T>(x.shape(), std::move(out), {x}, "softmax_rows", [r, c](Node<T>& self) {
    T* gx = grad_of(self, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < r; ++i) {
      const T* y = self.value.data() + i * c;
      const T* g = self.grad.data() + i * c;
      T dot = 0;
      for (std::size_t j = 0; j < c; ++j) dot += g[j] * y[j];
      T* dst = gx + i * c;
      for (std::size_t j = 0; j < c; ++j) dst[j] += y[j] * (g[j] - dot);
    }
  });
}

template <typename T>
Tensor<T> layer_norm_rows(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  require_rank(x, 2, "layer_norm_rows");
  const std::size_t r = x.dim(0), c = x.dim(1);
  if (gamma.numel() != c || beta.numel() != c) {
    throw DimensionError("layer_norm_rows: affine parameters do not match width " + std::to_string(c));
  }
  const auto xv = x.data();
  const auto gv = gamma.data();
  const auto bv = beta.data();
  std::vector<T> out(r * c);
  std::vector<T> xhat(r * c);
  std::vector<T> inv_std(r);
  for (std::size_t i = 0; i < r; ++i) {
    const T* row = xv.data() + i * c;
    T mu = 0;
    for (std::size_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<T>(c);
    T var = 0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(c);
    inv_std[i] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat[i * c + j] = (row[j] - mu) * inv_std[i];
      out[i * c + j] = xhat[i * c + j] * gv[j] + bv[j];
    }
  }
  return make_op<T>(x.shape(), std::move(out), {x, gamma, beta}, "layer_norm_rows",
                    [r, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
                      const auto& g = self.grad;
                      const auto& gam = self.inputs[1]->value;
                      if (T* gx = grad_of(self, 0)) {
                        for (std::size_t i = 0; i < r; ++i) {
                          T mean_dy = 0, mean_dy_xhat = 0;
                          for (std::size_t j = 0; j < c; ++j) {
                            const T dy = g[i * c + j] * gam[j];
                            mean_dy += dy;
                            mean_dy_xhat += dy * xhat[i * c + j];
                          }
                          mean_dy /= static_cast<T>(c);
                          mean_dy_xhat /= static_cast<T>(c);
                          for (std::size_t j = 0; j < c; ++j) {
                            const T dy = g[i * c + j] * gam[j];
                            gx[i * c + j] += inv_std[i] * (dy - mean_dy - xhat[i * c + j] * mean_dy_xhat);
                          }
                        }
                      }
                      if (T* gg = grad_of(self, 1)) {
                        for (std::size_t i = 0; i < r; ++i)
                          for (std::size_t j = 0; j < c; ++j) gg[j] += g[i * c + j] * xhat[i * c + j];
                      }
                      if (T* gb = grad_of(self, 2)) {
                        for (std::size_t i = 0; i < r; ++i)
                          for (std::size_t j = 0; j < c; ++j) gb[j] += g[i * c + j];
                      }
                    });
}

template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, std::size_t padding) {
  require_rank(x, 2, "conv1d");
  require_rank(weight, 3, "conv1d");
  const std::size_t cin = x.dim(0), len = x.dim(1);
  const std::size_t cout = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != cin) {
    throw DimensionError("conv1d: input has " + std::to_string(cin) + " channels, weight " +
                         shape_str(weight.shape()) + " expects " + std::to_string(weight.dim(1)));
  }
  if (bias.numel() != cout) throw DimensionError("conv1d: bias " + shape_str(bias.shape()) + " != out channels");
  if (len + 2 * padding < k) throw DimensionError("conv1d: kernel longer than padded input");
  const std::size_t out_len = len + 2 * padding - k + 1;
  const std::size_t rows = cin * k;

  // im2col: cols[(ci·K + kk) × t] = x[ci, t + kk − padding]
  std::vector<T> cols(rows * out_len, T(0));
  const auto xv = x.data();
  for (std::size_t ci = 0; ci < cin; ++ci) {
    for (std::size_t kk = 0; kk < k; ++kk) {
      T* dst = cols.data() + (ci * k + kk) * out_len;
      const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(kk) - static_cast<std::ptrdiff_t>(padding);
      const std::ptrdiff_t t_lo = std::max<std::ptrdiff_t>(0, -shift);
      const std::ptrdiff_t t_hi = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(out_len),
                                                           static_cast<std::ptrdiff_t>(len) - shift);
      for (std::ptrdiff_t t = t_lo; t < t_hi; ++t) dst[t] = xv[ci * len + static_cast<std::size_t>(t + shift)];
    }
  }
  std::vector<T> out(cout * out_len);
  const auto bv = bias.data();
  for (std::size_t co = 0; co < cout; ++co) std::fill_n(out.data() + co * out_len, out_len, bv[co]);
  detail::gemm(false, false, cout, out_len, rows, weight.data().data(), cols.data(), out.data(), true);

  return make_op<T>({cout, out_len}, std::move(out), {x, weight, bias}, "conv1d",
                    [=, cols = std::move(cols)](Node<T>& self) {
                      const T* g = self.grad.data();
                      if (T* gw = grad_of(self, 1)) {
                        detail::gemm(false, true, cout, rows, out_len, g, cols.data(), gw, true);
                      }
                      if (T* gb = grad_of(self, 2)) {
                        for (std::size_t co = 0; co < cout; ++co) {
                          T acc = 0;
                          for (std::size_t t = 0; t < out_len; ++t) acc += g[co * out_len + t];
                          gb[co] += acc;
                        }
                      }
                      if (T* gx = grad_of(self, 0)) {
                        std::vector<T> gcols(rows * out_len);
                        detail::gemm(true, false, rows, out_len, cout, self.inputs[1]->value.data(), g,
                                     gcols.data(), false);
                        for (std::size_t ci = 0; ci < cin; ++ci) {
                          for (std::size_t kk = 0; kk < k; ++kk) {
                            const T* src = gcols.data() + (ci * k + kk) * out_len;
                            const std::ptrdiff_t shift =
                                static_cast<std::ptrdiff_t>(kk) - static_cast<std::ptrdiff_t>(padding);
                            const std::ptrdiff_t t_lo = std::max<std::ptrdiff_t>(0, -shift);
                            const std::ptrdiff_t t_hi = std::min<std::ptrdiff_t>(
                                static_cast<std::ptrdiff_t>(out_len), static_cast<std::ptrdiff_t>(len) - shift);
                            for (std::ptrdiff_t t = t_lo; t < t_hi; ++t)
                              gx[ci * len + static_cast<std::size_t>(t + shift)] += src[t];
                          }
                        }
                      }
                    });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, Rng& rng, bool train) {
  if (p < 0.0 || p >= 1.0) throw DomainError("dropout: probability must lie in [0, 1)");
  if (!train || p == 0.0) return x;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  std::vector<T> mask(x.numel());
  for (auto& m : mask) m = rng.uniform() < p ? T(0) : keep_scale;
  const auto xv = x.data();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * mask[i];
  return make_op<T>(x.shape(), std::move(out), {x}, "dropout", [mask = std::move(mask)](Node<T>& self) {
    T* gx = grad_of(self, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < mask.size(); ++i) gx[i] += self.grad[i] * mask[i];
  });
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  const std::size_t c = parts[0].rank() == 2 ? parts[0].dim(1) : 0;
  std::size_t rows = 0;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_rows");
    if (p.dim(1) != c) throw DimensionError("concat_rows: column counts differ");
    rows += p.dim(0);
  }
  std::vector<T> out;
  out.reserve(rows * c);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return make_op<T>({rows, c}, std::move(out), parts, "concat_rows", [](Node<T>& self) {
    std::size_t offset = 0;
    for (std::size_t i = 0; i < self.inputs.size(); ++i) {
      const std::size_t n = self.inputs[i]->value.size();
      if (T* g = grad_of(self, i)) {
        for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[offset + j];
      }
      offset += n;
    }
  });
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  const std::size_t r = parts[0].rank() == 2 ? parts[0].dim(0) : 0;
  std::size_t cols = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_cols");
    if (p.dim(0) != r) throw DimensionError("concat_cols: row counts differ");
    widths.push_back(p.dim(1));
    cols += p.dim(1);
  }
  std::vector<T> out(r * cols);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.dim(1);
    const auto pv = p.data();
    for (std::size_t i = 0; i < r; ++i) std::copy_n(pv.data() + i * w, w, out.data() + i * cols + offset);
    offset += w;
  }
  return make_op<T>({r, cols}, std::move(out), parts, "concat_cols", [r, cols, widths](Node<T>& self) {
    std::size_t offset = 0;
    for (std::size_t p = 0; p < widths.size(); ++p) {
      const std::size_t w = widths[p];
      if (T* g = grad_of(self, p)) {
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < w; ++j) g[i * w + j] += self.grad[i * cols + offset + j];
      }
      offset += w;
    }
  });
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t count) {
  require_rank(x, 2, "slice_rows");
  const std::size_t c = x.dim(1);
  if (begin + count > x.dim(0)) throw DimensionError("slice_rows: range exceeds " + shape_str(x.shape()));
  std::vector<T> out(x.data().begin() + static_cast<std::ptrdiff_t>(begin * c),
                     x.data().begin() + static_cast<std::ptrdiff_t>((begin + count) * c));
  return make_op<T>({count, c}, std::move(out), {x}, "slice_rows", [begin, c](Node<T>& self) {
    T* gx = grad_of(self, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[begin * c + i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t count) {
  require_rank(x, 2, "slice_cols");
  const std::size_t r = x.dim(0), c = x.dim(1);
  if (begin + count > c) throw DimensionError("slice_cols: range exceeds " + shape_str(x.shape()));
  std::vector<T> out(r * count);
  const auto xv = x.data();
  for (std::size_t i = 0; i < r; ++i) std::copy_n(xv.data() + i * c + begin, count, out.data() + i * count);
  return make_op<T>({r, count}, std::move(out), {x}, "slice_cols", [r, c, begin, count](Node<T>& self) {
    T* gx = grad_of(self, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < count; ++j) gx[i * c + begin + j] += self.grad[i * count + j];
  });
}

template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, const Tensor<T>& labels) {
  if (logits.shape() != labels.shape()) {
    throw DimensionError("bce_with_logits: logits " + shape_str(logits.shape()) + " vs labels " +
                         shape_str(labels.shape()));
  }
  const auto z = logits.data();
  const auto y = labels.data();
  const std::size_t n = z.size();
  if (n == 0) throw DomainError("bce_with_logits: empty batch");
  T total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (y[i] != T(0) && y[i] != T(1)) {
      throw DomainError("bce_with_logits: label " + std::to_string(static_cast<double>(y[i])) + " not in {0,1}");
    }
    total += std::max(z[i], T(0)) - z[i] * y[i] + std::log1p(std::exp(-std::abs(z[i])));
  }
  return make_op<T>({1}, {total / static_cast<T>(n)}, {logits, labels}, "bce_with_logits", [n](Node<T>& self) {
    T* gz = grad_of(self, 0);
    if (!gz) return;
    const auto& z = self.inputs[0]->value;
    const auto& y = self.inputs[1]->value;
    const T g = self.grad[0] / static_cast<T>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const T s = z[i] >= T(0) ? T(1) / (T(1) + std::exp(-z[i])) : std::exp(z[i]) / (T(1) + std::exp(z[i]));
      gz[i] += g * (s - y[i]);
    }
  });
}

template <typename T>
Tensor<T> mse_masked(const Tensor<T>& pred, const Tensor<T>& target, const std::vector<bool>& mask) {
  require_rank(pred, 2, "mse_masked");
  if (pred.shape() != target.shape()) {
    throw DimensionError("mse_masked: prediction " + shape_str(pred.shape()) + " vs target " +
                         shape_str(target.shape()));
  }
  const std::size_t rows = pred.dim(0), c = pred.dim(1);
  if (mask.size() != rows) {
    throw DimensionError("mse_masked: mask length " + std::to_string(mask.size()) + " != " + std::to_string(rows));
  }
  const std::size_t masked = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
  if (masked == 0) throw ContractError("mse_masked: mask selects no positions");
  const auto p = pred.data();
  const auto t = target.data();
  T total = 0;
  for (std::size_t i = 0; i < rows; ++i) {
    if (!mask[i]) continue;
    for (std::size_t j = 0; j < c; ++j) {
      const T d = p[i * c + j] - t[i * c + j];
      total += d * d;
    }
  }
  const T count = static_cast<T>(masked * c);
  return make_op<T>({1}, {total / count}, {pred, target}, "mse_masked", [mask, rows, c, count](Node<T>& self) {
    const auto& p = self.inputs[0]->value;
    const auto& t = self.inputs[1]->value;
    const T g = self.grad[0] * T(2) / count;
    T* gp = grad_of(self, 0);
    T* gt = grad_of(self, 1);
    for (std::size_t i = 0; i < rows; ++i) {
      if (!mask[i]) continue;
      for (std::size_t j = 0; j < c; ++j) {
        const T d = g * (p[i * c + j] - t[i * c + j]);
        if (gp) gp[i * c + j] += d;
        if (gt) gt[i * c + j] -= d;
      }
    }
  });
}

#define PHYSIOFUSE_INSTANTIATE_OPS(T)                                                                  \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> transpose(const Tensor<T>&);                                                      \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                          \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                          \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                          \
  template Tensor<T> scale(const Tensor<T>&, T);                                                       \
  template Tensor<T> relu(const Tensor<T>&);                                                           \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                        \
  template Tensor<T> exp(const Tensor<T>&);                                                            \
  template Tensor<T> log(const Tensor<T>&);                                                            \
  template Tensor<T> sum(const Tensor<T>&, std::optional<std::size_t>);                                \
  template Tensor<T> mean(const Tensor<T>&, std::optional<std::size_t>);                               \
  template Tensor<T> max(const Tensor<T>&, std::optional<std::size_t>);                                \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                                 \
  template Tensor<T> add_row_bias(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> softmax_rows(const Tensor<T>&);                                                   \
  template Tensor<T> layer_norm_rows(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);         \
  template Tensor<T> conv1d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t);        \
  template Tensor<T> dropout(const Tensor<T>&, double, Rng&, bool);                                    \
  template Tensor<T> concat_rows(const std::vector<Tensor<T>>&);                                       \
  template Tensor<T> concat_cols(const std::vector<Tensor<T>>&);                                       \
  template Tensor<T> slice_rows(const Tensor<T>&, std::size_t, std::size_t);                           \
  template Tensor<T> slice_cols(const Tensor<T>&, std::size_t, std::size_t);                           \
  template Tensor<T> bce_with_logits(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> mse_masked(const Tensor<T>&, const Tensor<T>&, const std::vector<bool>&);

PHYSIOFUSE_INSTANTIATE_OPS(float)
PHYSIOFUSE_INSTANTIATE_OPS(double)

#undef PHYSIOFUSE_INSTANTIATE_OPS

}  // namespace physiofuse
