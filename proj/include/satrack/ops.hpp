#pragma once
// Differentiable operators over satrack::Tensor.
//
// Layout conventions: feature maps are NHWC, token sequences are (N, L, C),
// convolution kernels are (C_out, k_h, k_w, C_in / groups). All reductions
// and products accumulate in float64 in a fixed loop order so repeated
// evaluation is bit-identical.

#include <cmath>
#include <cstdint>
#include <iostream>
#include <limits>
#include <mutex>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "satrack/tensor.hpp"

namespace satrack {

namespace detail {

struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

inline AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

inline Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ConfigError("cannot broadcast shapes " + to_string(a) + " and " + to_string(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

/// For every element of `out`, the flat index of the broadcast source in `in`.
inline std::vector<std::size_t> broadcast_index(const Shape& in, const Shape& out) {
  const std::size_t r = out.size();
  std::vector<std::size_t> stride(r, 0);
  std::size_t acc = 1;
  for (std::size_t i = r; i-- > 0;) {
    const std::size_t k = i + in.size();
    if (k < r) continue;  // leading broadcast dim
    const std::size_t d = in[k - r];
    stride[i] = d == 1 ? 0 : acc;
    acc *= d;
  }
  const std::size_t total = numel(out);
  std::vector<std::size_t> idx(total);
  std::vector<std::size_t> counter(r, 0);
  std::size_t cur = 0;
  for (std::size_t e = 0; e < total; ++e) {
    idx[e] = cur;
    for (std::size_t i = r; i-- > 0;) {
      if (++counter[i] < out[i]) {
        cur += stride[i];
        break;
      }
      cur -= stride[i] * (out[i] - 1);
      counter[i] = 0;
    }
  }
  return idx;
}

template <class F, class DA, class DB>
Tensor binary(const char* name, const Tensor& a, const Tensor& b, F f, DA da, DB db) {
  const auto& av = a.values();
  const auto& bv = b.values();
  if (a.shape() == b.shape()) {
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i], bv[i]);
    return record(name, a.shape(), std::move(out), {a, b}, [an = a.node(), bn = b.node(), da, db](const Node& o) {
      const auto& g = o.grad;
      if (an->requires_grad) {
        auto& ga = an->grad_ref();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * da(an->value[i], bn->value[i], o.value[i]);
      }
      if (bn->requires_grad) {
        auto& gb = bn->grad_ref();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * db(an->value[i], bn->value[i], o.value[i]);
      }
    });
  }
  Shape shape = broadcast_shapes(a.shape(), b.shape());
  auto ia = std::make_shared<std::vector<std::size_t>>(broadcast_index(a.shape(), shape));
  auto ib = std::make_shared<std::vector<std::size_t>>(broadcast_index(b.shape(), shape));
  std::vector<double> out(ia->size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[(*ia)[i]], bv[(*ib)[i]]);
  return record(name, std::move(shape), std::move(out), {a, b},
                [an = a.node(), bn = b.node(), ia, ib, da, db](const Node& o) {
                  const auto& g = o.grad;
                  if (an->requires_grad) {
                    auto& ga = an->grad_ref();
                    for (std::size_t i = 0; i < g.size(); ++i) {
                      const double x = an->value[(*ia)[i]], y = bn->value[(*ib)[i]];
                      ga[(*ia)[i]] += g[i] * da(x, y, o.value[i]);
                    }
                  }
                  if (bn->requires_grad) {
                    auto& gb = bn->grad_ref();
                    for (std::size_t i = 0; i < g.size(); ++i) {
                      const double x = an->value[(*ia)[i]], y = bn->value[(*ib)[i]];
                      gb[(*ib)[i]] += g[i] * db(x, y, o.value[i]);
                    }
                  }
                });
}

template <class F, class D>
Tensor unary(const char* name, const Tensor& x, F f, D df) {
  const auto& xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  return record(name, x.shape(), std::move(out), {x}, [xn = x.node(), df](const Node& o) {
    auto& gx = xn->grad_ref();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += o.grad[i] * df(xn->value[i], o.value[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; });
}
inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; });
}
inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
      [](double x, double, double) { return x; });
}
inline Tensor div(const Tensor& a, const Tensor& b) {
  return detail::binary(
      "div", a, b, [](double x, double y) { return x / y; }, [](double, double y, double) { return 1.0 / y; },
      [](double x, double y, double) { return -x / (y * y); });
}
/// Ties route the gradient to the first operand.
inline Tensor minimum(const Tensor& a, const Tensor& b) {
  return detail::binary(
      "minimum", a, b, [](double x, double y) { return x <= y ? x : y; },
      [](double x, double y, double) { return x <= y ? 1.0 : 0.0; },
      [](double x, double y, double) { return x <= y ? 0.0 : 1.0; });
}
inline Tensor maximum(const Tensor& a, const Tensor& b) {
  return detail::binary(
      "maximum", a, b, [](double x, double y) { return x >= y ? x : y; },
      [](double x, double y, double) { return x >= y ? 1.0 : 0.0; },
      [](double x, double y, double) { return x >= y ? 0.0 : 1.0; });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }

inline Tensor scale(const Tensor& x, double s) {
  return detail::unary(
      "scale", x, [s](double v) { return v * s; }, [s](double, double) { return s; });
}
inline Tensor add_scalar(const Tensor& x, double s) {
  return detail::unary(
      "add_scalar", x, [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}
inline Tensor operator*(const Tensor& x, double s) { return scale(x, s); }
inline Tensor operator*(double s, const Tensor& x) { return scale(x, s); }
inline Tensor operator+(const Tensor& x, double s) { return add_scalar(x, s); }
inline Tensor operator-(const Tensor& x, double s) { return add_scalar(x, -s); }
inline Tensor operator-(double s, const Tensor& x) { return add_scalar(scale(x, -1.0), s); }
inline Tensor operator-(const Tensor& x) { return scale(x, -1.0); }

inline Tensor exp(const Tensor& x) {
  return detail::unary(
      "exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}
inline Tensor log(const Tensor& x) {
  return detail::unary(
      "log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}
inline Tensor square(const Tensor& x) {
  return detail::unary(
      "square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}
inline Tensor sqrt(const Tensor& x) {
  return detail::unary(
      "sqrt", x, [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}
inline Tensor abs(const Tensor& x) {
  return detail::unary(
      "abs", x, [](double v) { return std::abs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}
inline Tensor relu(const Tensor& x) {
  return detail::unary(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}
inline Tensor sigmoid(const Tensor& x) {
  return detail::unary(
      "sigmoid", x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}
inline Tensor tanh(const Tensor& x) {
  return detail::unary(
      "tanh", x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}
/// Exact (erf) GELU.
inline Tensor gelu(const Tensor& x) {
  return detail::unary(
      "gelu", x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0)); },
      [](double v, double) {
        const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
        const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * std::numbers::pi);
        return cdf + v * pdf;
      });
}
/// Clamps below at `lo` (gradient 0 where clamped).
inline Tensor clamp_min(const Tensor& x, double lo) {
  return detail::unary(
      "clamp_min", x, [lo](double v) { return v > lo ? v : lo; }, [lo](double v, double) { return v > lo ? 1.0 : 0.0; });
}

// ----------------------------------------------------------------- reductions

inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  return detail::record("sum", {1}, {s}, {x}, [xn = x.node()](const detail::Node& o) {
    auto& g = xn->grad_ref();
    for (auto& v : g) v += o.grad[0];
  });
}

inline Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

inline Tensor sum(const Tensor& x, int axis, bool keepdim = false) {
  const std::size_t ax = x.normalize_axis(axis);
  const auto s = detail::split_axis(x.shape(), ax);
  std::vector<double> out(s.outer * s.inner, 0.0);
  const auto& xv = x.values();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t k = 0; k < s.n; ++k)
      for (std::size_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += xv[(o * s.n + k) * s.inner + i];
  Shape shape = x.shape();
  if (keepdim) {
    shape[ax] = 1;
  } else {
    shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(ax));
    if (shape.empty()) shape = {1};
  }
  return detail::record("sum_axis", std::move(shape), std::move(out), {x}, [xn = x.node(), s](const detail::Node& o) {
    auto& g = xn->grad_ref();
    for (std::size_t a = 0; a < s.outer; ++a)
      for (std::size_t k = 0; k < s.n; ++k)
        for (std::size_t i = 0; i < s.inner; ++i) g[(a * s.n + k) * s.inner + i] += o.grad[a * s.inner + i];
  });
}

inline Tensor mean(const Tensor& x, int axis, bool keepdim = false) {
  const double n = static_cast<double>(x.dim(axis));
  return scale(sum(x, axis, keepdim), 1.0 / n);
}

/// Maximum along an axis; ties route the gradient to the lowest index.
inline Tensor max(const Tensor& x, int axis, bool keepdim = false) {
  const std::size_t ax = x.normalize_axis(axis);
  const auto s = detail::split_axis(x.shape(), ax);
  std::vector<double> out(s.outer * s.inner);
  auto arg = std::make_shared<std::vector<std::size_t>>(out.size());
  const auto& xv = x.values();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      std::size_t best = o * s.n * s.inner + i;
      for (std::size_t k = 1; k < s.n; ++k) {
        const std::size_t idx = (o * s.n + k) * s.inner + i;
        if (xv[idx] > xv[best]) best = idx;
      }
      out[o * s.inner + i] = xv[best];
      (*arg)[o * s.inner + i] = best;
    }
  Shape shape = x.shape();
  if (keepdim) {
    shape[ax] = 1;
  } else {
    shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(ax));
    if (shape.empty()) shape = {1};
  }
  return detail::record("max_axis", std::move(shape), std::move(out), {x}, [xn = x.node(), arg](const detail::Node& o) {
    auto& g = xn->grad_ref();
    for (std::size_t i = 0; i < arg->size(); ++i) g[(*arg)[i]] += o.grad[i];
  });
}

// -------------------------------------------------------------- shape algebra

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw ConfigError("cannot reshape " + to_string(x.shape()) + " to " + to_string(shape));
  }
  return detail::record("reshape", std::move(shape), x.values(), {x}, [xn = x.node()](const detail::Node& o) {
    auto& g = xn->grad_ref();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
  });
}

inline Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm) {
  const std::size_t r = x.rank();
  if (perm.size() != r) throw ConfigError("permute rank mismatch for shape " + to_string(x.shape()));
  Shape out_shape(r);
  std::vector<std::size_t> in_stride(r), src_stride(r);
  std::size_t acc = 1;
  for (std::size_t i = r; i-- > 0;) {
    in_stride[i] = acc;
    acc *= x.shape()[i];
  }
  for (std::size_t i = 0; i < r; ++i) {
    if (perm[i] >= r) throw ConfigError("permute index out of range");
    out_shape[i] = x.shape()[perm[i]];
    src_stride[i] = in_stride[perm[i]];
  }
  const std::size_t total = x.numel();
  auto map = std::make_shared<std::vector<std::size_t>>(total);
  std::vector<std::size_t> counter(r, 0);
  std::size_t cur = 0;
  for (std::size_t e = 0; e < total; ++e) {
    (*map)[e] = cur;
    for (std::size_t i = r; i-- > 0;) {
      if (++counter[i] < out_shape[i]) {
        cur += src_stride[i];
        break;
      }
      cur -= src_stride[i] * (out_shape[i] - 1);
      counter[i] = 0;
    }
  }
  std::vector<double> out(total);
  const auto& xv = x.values();
  for (std::size_t e = 0; e < total; ++e) out[e] = xv[(*map)[e]];
  return detail::record("permute", std::move(out_shape), std::move(out), {x}, [xn = x.node(), map](const detail::Node& o) {
    auto& g = xn->grad_ref();
    for (std::size_t e = 0; e < map->size(); ++e) g[(*map)[e]] += o.grad[e];
  });
}

/// Contiguous slice [start, start + length) along `axis`.
inline Tensor slice(const Tensor& x, int axis, std::size_t start, std::size_t length) {
  const std::size_t ax = x.normalize_axis(axis);
  const auto s = detail::split_axis(x.shape(), ax);
  if (length == 0 || start + length > s.n) {
    throw ConfigError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                      ") out of range for shape " + to_string(x.shape()));
  }
  Shape shape = x.shape();
  shape[ax] = length;
  std::vector<double> out(s.outer * length * s.inner);
  const auto& xv = x.values();
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>((o * s.n + start) * s.inner), length * s.inner,
                out.begin() + static_cast<std::ptrdiff_t>(o * length * s.inner));
  return detail::record("slice", std::move(shape), std::move(out), {x},
                        [xn = x.node(), s, start, length](const detail::Node& o) {
                          auto& g = xn->grad_ref();
                          for (std::size_t a = 0; a < s.outer; ++a)
                            for (std::size_t j = 0; j < length * s.inner; ++j)
                              g[(a * s.n + start) * s.inner + j] += o.grad[a * length * s.inner + j];
                        });
}

inline Tensor concat(const std::vector<Tensor>& xs, int axis) {
  if (xs.empty()) throw ConfigError("concat of zero tensors");
  if (xs.size() == 1) return xs.front();
  const std::size_t ax = xs[0].normalize_axis(axis);
  Shape shape = xs[0].shape();
  shape[ax] = 0;
  for (const auto& t : xs) {
    Shape a = t.shape(), b = xs[0].shape();
    if (a.size() != b.size()) throw ConfigError("concat rank mismatch");
    a[ax] = b[ax] = 0;
    if (a != b) throw ConfigError("concat shape mismatch: " + to_string(t.shape()) + " vs " + to_string(xs[0].shape()));
    shape[ax] += t.shape()[ax];
  }
  const auto total = detail::split_axis(shape, ax);
  std::vector<double> out(numel(shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& t : xs) {
    offsets.push_back(off);
    const auto s = detail::split_axis(t.shape(), ax);
    const auto& v = t.values();
    for (std::size_t o = 0; o < s.outer; ++o)
      std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(o * s.n * s.inner), s.n * s.inner,
                  out.begin() + static_cast<std::ptrdiff_t>((o * total.n + off) * total.inner));
    off += s.n;
  }
  std::vector<detail::NodePtr> nodes;
  for (const auto& t : xs) nodes.push_back(t.node());
  return detail::record("concat", std::move(shape), std::move(out), xs,
                        [nodes, offsets, ax, total](const detail::Node& o) {
                          for (std::size_t k = 0; k < nodes.size(); ++k) {
                            auto& n = *nodes[k];
                            if (!n.requires_grad) continue;
                            auto& g = n.grad_ref();
                            const auto s = detail::split_axis(n.shape, ax);
                            for (std::size_t a = 0; a < s.outer; ++a)
                              for (std::size_t j = 0; j < s.n * s.inner; ++j)
                                g[a * s.n * s.inner + j] += o.grad[(a * total.n + offsets[k]) * total.inner + j];
                          }
                        });
}

// ------------------------------------------------------------- linear algebra

/// Batched product (..., M, K) x (..., K, N). A rank-2 right operand is shared across the batch.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) throw ConfigError("matmul needs rank >= 2 operands");
  const std::size_t M = a.dim(-2), K = a.dim(-1), K2 = b.dim(-2), N = b.dim(-1);
  if (K != K2) throw ConfigError("matmul inner dims differ: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  const std::size_t batch = a.numel() / (M * K);
  const bool shared_b = b.rank() == 2;
  if (!shared_b) {
    if (b.rank() != a.rank() || !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin())) {
      throw ConfigError("matmul batch dims differ: " + to_string(a.shape()) + " x " + to_string(b.shape()));
    }
  }
  Shape shape = a.shape();
  shape.back() = N;
  std::vector<double> out(batch * M * N, 0.0);
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t t = 0; t < batch; ++t) {
    const double* A = av.data() + t * M * K;
    const double* B = bv.data() + (shared_b ? 0 : t * K * N);
    double* C = out.data() + t * M * N;
    for (std::size_t i = 0; i < M; ++i)
      for (std::size_t k = 0; k < K; ++k) {
        const double aik = A[i * K + k];
        for (std::size_t j = 0; j < N; ++j) C[i * N + j] += aik * B[k * N + j];
      }
  }
  return detail::record("matmul", std::move(shape), std::move(out), {a, b},
                        [an = a.node(), bn = b.node(), batch, M, K, N, shared_b](const detail::Node& o) {
                          const auto& g = o.grad;
                          if (an->requires_grad) {
                            auto& ga = an->grad_ref();
                            for (std::size_t t = 0; t < batch; ++t) {
                              const double* G = g.data() + t * M * N;
                              const double* B = bn->value.data() + (shared_b ? 0 : t * K * N);
                              double* GA = ga.data() + t * M * K;
                              for (std::size_t i = 0; i < M; ++i)
                                for (std::size_t k = 0; k < K; ++k) {
                                  double s = 0.0;
                                  for (std::size_t j = 0; j < N; ++j) s += G[i * N + j] * B[k * N + j];
                                  GA[i * K + k] += s;
                                }
                            }
                          }
                          if (bn->requires_grad) {
                            auto& gb = bn->grad_ref();
                            for (std::size_t t = 0; t < batch; ++t) {
                              const double* G = g.data() + t * M * N;
                              const double* A = an->value.data() + t * M * K;
                              double* GB = gb.data() + (shared_b ? 0 : t * K * N);
                              for (std::size_t i = 0; i < M; ++i)
                                for (std::size_t k = 0; k < K; ++k) {
                                  const double aik = A[i * K + k];
                                  for (std::size_t j = 0; j < N; ++j) GB[k * N + j] += aik * G[i * N + j];
                                }
                            }
                          }
                        });
}

/// y = x W^T + b over the last axis; W is (out, in), b is (out) or undefined.
inline Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (weight.rank() != 2 || x.dim(-1) != weight.dim(1)) {
    throw ConfigError("linear: input " + to_string(x.shape()) + " incompatible with weight " + to_string(weight.shape()));
  }
  const std::size_t in = weight.dim(1), outd = weight.dim(0), rows = x.numel() / in;
  const bool has_bias = bias.defined();
  if (has_bias && bias.numel() != outd) throw ConfigError("linear: bias size mismatch");
  Shape shape = x.shape();
  shape.back() = outd;
  std::vector<double> out(rows * outd);
  const auto& xv = x.values();
  const auto& wv = weight.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* X = xv.data() + r * in;
    for (std::size_t o = 0; o < outd; ++o) {
      const double* W = wv.data() + o * in;
      double s = has_bias ? bias[o] : 0.0;
      for (std::size_t i = 0; i < in; ++i) s += X[i] * W[i];
      out[r * outd + o] = s;
    }
  }
  std::initializer_list<Tensor> inputs = {x, weight, has_bias ? bias : weight};
  return detail::record(
      "linear", std::move(shape), std::move(out), inputs,
      [xn = x.node(), wn = weight.node(), bn = has_bias ? bias.node() : nullptr, rows, in, outd](const detail::Node& o) {
        const auto& g = o.grad;
        if (xn->requires_grad) {
          auto& gx = xn->grad_ref();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t oo = 0; oo < outd; ++oo) {
              const double go = g[r * outd + oo];
              const double* W = wn->value.data() + oo * in;
              double* GX = gx.data() + r * in;
              for (std::size_t i = 0; i < in; ++i) GX[i] += go * W[i];
            }
        }
        if (wn->requires_grad) {
          auto& gw = wn->grad_ref();
          for (std::size_t r = 0; r < rows; ++r) {
            const double* X = xn->value.data() + r * in;
            for (std::size_t oo = 0; oo < outd; ++oo) {
              const double go = g[r * outd + oo];
              double* GW = gw.data() + oo * in;
              for (std::size_t i = 0; i < in; ++i) GW[i] += go * X[i];
            }
          }
        }
        if (bn && bn->requires_grad) {
          auto& gb = bn->grad_ref();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t oo = 0; oo < outd; ++oo) gb[oo] += g[r * outd + oo];
        }
      });
}

// ------------------------------------------------------------------- softmax

/// Softmax along `axis`, stabilised by subtracting the running maximum.
inline Tensor softmax(const Tensor& x, int axis) {
  const std::size_t ax = x.normalize_axis(axis);
  const auto s = detail::split_axis(x.shape(), ax);
  std::vector<double> out(x.numel());
  const auto& xv = x.values();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.n * s.inner + i;
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < s.n; ++k) m = std::max(m, xv[base + k * s.inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < s.n; ++k) {
        const double e = std::exp(xv[base + k * s.inner] - m);
        out[base + k * s.inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < s.n; ++k) out[base + k * s.inner] /= z;
    }
  return detail::record("softmax", x.shape(), std::move(out), {x}, [xn = x.node(), s](const detail::Node& o) {
    auto& g = xn->grad_ref();
    for (std::size_t a = 0; a < s.outer; ++a)
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = a * s.n * s.inner + i;
        double dot = 0.0;
        for (std::size_t k = 0; k < s.n; ++k) dot += o.grad[base + k * s.inner] * o.value[base + k * s.inner];
        for (std::size_t k = 0; k < s.n; ++k) {
          const std::size_t idx = base + k * s.inner;
          g[idx] += o.value[idx] * (o.grad[idx] - dot);
        }
      }
  });
}

/// Softmax over the last axis of x (B, ..., Lk) with a per-batch key mask of
/// B * Lk bytes (nonzero = visible). Masked keys get weight exactly 0 and their
/// logits never enter the computation. A row with no visible key is all zero.
inline Tensor masked_softmax(const Tensor& x, const std::vector<std::uint8_t>& key_mask) {
  const std::size_t B = x.dim(0), Lk = x.dim(-1);
  if (key_mask.size() != B * Lk) {
    throw ConfigError("masked_softmax: mask has " + std::to_string(key_mask.size()) + " entries, expected " +
                      std::to_string(B * Lk));
  }
  const std::size_t rows = x.numel() / Lk, rows_per_batch = rows / B;
  std::vector<double> out(x.numel(), 0.0);
  const auto& xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const std::uint8_t* m = key_mask.data() + (r / rows_per_batch) * Lk;
    const double* X = xv.data() + r * Lk;
    double* Y = out.data() + r * Lk;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < Lk; ++k)
      if (m[k]) mx = std::max(mx, X[k]);
    if (mx == -std::numeric_limits<double>::infinity()) continue;
    double z = 0.0;
    for (std::size_t k = 0; k < Lk; ++k)
      if (m[k]) z += (Y[k] = std::exp(X[k] - mx));
    for (std::size_t k = 0; k < Lk; ++k)
      if (m[k]) Y[k] /= z;
  }
  return detail::record("masked_softmax", x.shape(), std::move(out), {x}, [xn = x.node(), rows, Lk](const detail::Node& o) {
    auto& g = xn->grad_ref();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* Y = o.value.data() + r * Lk;
      const double* G = o.grad.data() + r * Lk;
      double dot = 0.0;
      for (std::size_t k = 0; k < Lk; ++k) dot += G[k] * Y[k];
      for (std::size_t k = 0; k < Lk; ++k) g[r * Lk + k] += Y[k] * (G[k] - dot);
    }
  });
}

// ------------------------------------------------------------- normalisation

/// Per-token normalisation over the last axis followed by the affine map.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5) {
  const std::size_t C = x.dim(-1), rows = x.numel() / C;
  if (gamma.numel() != C || beta.numel() != C) {
    throw ConfigError("layer_norm: affine size " + std::to_string(gamma.numel()) + " vs channels " + std::to_string(C));
  }
  if (!(eps > 0.0)) throw ConfigError("layer_norm: eps must be positive");
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto rstd = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(x.numel());
  const auto& xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* X = xv.data() + r * C;
    double mu = 0.0;
    for (std::size_t c = 0; c < C; ++c) mu += X[c];
    mu /= static_cast<double>(C);
    double var = 0.0;
    for (std::size_t c = 0; c < C; ++c) var += (X[c] - mu) * (X[c] - mu);
    var /= static_cast<double>(C);
    const double rs = 1.0 / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t c = 0; c < C; ++c) {
      const double h = (X[c] - mu) * rs;
      (*xhat)[r * C + c] = h;
      out[r * C + c] = h * gamma[c] + beta[c];
    }
  }
  return detail::record(
      "layer_norm", x.shape(), std::move(out), {x, gamma, beta},
      [xn = x.node(), gn = gamma.node(), bn = beta.node(), xhat, rstd, rows, C](const detail::Node& o) {
        const auto& g = o.grad;
        if (gn->requires_grad) {
          auto& gg = gn->grad_ref();
          for (std::size_t i = 0; i < g.size(); ++i) gg[i % C] += g[i] * (*xhat)[i];
        }
        if (bn->requires_grad) {
          auto& gb = bn->grad_ref();
          for (std::size_t i = 0; i < g.size(); ++i) gb[i % C] += g[i];
        }
        if (xn->requires_grad) {
          auto& gx = xn->grad_ref();
          for (std::size_t r = 0; r < rows; ++r) {
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t c = 0; c < C; ++c) {
              const double dy = g[r * C + c] * gn->value[c];
              m1 += dy;
              m2 += dy * (*xhat)[r * C + c];
            }
            m1 /= static_cast<double>(C);
            m2 /= static_cast<double>(C);
            for (std::size_t c = 0; c < C; ++c) {
              const double dy = g[r * C + c] * gn->value[c];
              gx[r * C + c] += (*rstd)[r] * (dy - m1 - (*xhat)[r * C + c] * m2);
            }
          }
        }
      });
}

/// Running statistics of a batch-norm layer.
struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  explicit BatchNormState(std::size_t channels = 0) : running_mean(channels, 0.0), running_var(channels, 1.0) {}
};

struct BatchNormOptions {
  bool training = true;
  bool update_stats = true;
  double momentum = 0.1;
  double eps = 1e-5;
};

namespace detail {
inline void warn_single_instance_batch() {
  static std::once_flag once;
  std::call_once(once, [] {
    std::cerr << "warning: batch_norm in training mode with batch size 1 falls back to per-instance statistics\n";
  });
}
}  // namespace detail

/// Per-channel normalisation (channels on the last axis, statistics over all
/// other axes). Training mode uses batch statistics and, when `state` is given
/// and update_stats is set, folds them into the running averages with the
/// unbiased variance. Inference mode uses the running statistics.
inline Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState* state,
                         const BatchNormOptions& opt) {
  const std::size_t C = x.dim(-1), M = x.numel() / C;
  if (gamma.numel() != C || beta.numel() != C) throw ConfigError("batch_norm: affine size mismatch");
  if (!(opt.eps > 0.0)) throw ConfigError("batch_norm: eps must be positive");
  if (state && state->running_mean.size() != C) throw ConfigError("batch_norm: running-stat size mismatch");
  if (!opt.training && !state) throw ConfigError("batch_norm: inference mode needs running statistics");
  if (opt.training && x.rank() > 1 && x.dim(0) == 1) detail::warn_single_instance_batch();

  std::vector<double> mu(C, 0.0), var(C, 0.0);
  const auto& xv = x.values();
  if (opt.training) {
    for (std::size_t m = 0; m < M; ++m)
      for (std::size_t c = 0; c < C; ++c) mu[c] += xv[m * C + c];
    for (auto& v : mu) v /= static_cast<double>(M);
    for (std::size_t m = 0; m < M; ++m)
      for (std::size_t c = 0; c < C; ++c) var[c] += (xv[m * C + c] - mu[c]) * (xv[m * C + c] - mu[c]);
    for (auto& v : var) v /= static_cast<double>(M);
    if (state && opt.update_stats) {
      const double unbias = M > 1 ? static_cast<double>(M) / static_cast<double>(M - 1) : 1.0;
      for (std::size_t c = 0; c < C; ++c) {
        state->running_mean[c] = (1.0 - opt.momentum) * state->running_mean[c] + opt.momentum * mu[c];
        state->running_var[c] = (1.0 - opt.momentum) * state->running_var[c] + opt.momentum * var[c] * unbias;
      }
    }
  } else {
    mu = state->running_mean;
    var = state->running_var;
  }
  auto rstd = std::make_shared<std::vector<double>>(C);
  for (std::size_t c = 0; c < C; ++c) (*rstd)[c] = 1.0 / std::sqrt(var[c] + opt.eps);
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  std::vector<double> out(x.numel());
  for (std::size_t m = 0; m < M; ++m)
    for (std::size_t c = 0; c < C; ++c) {
      const double h = (xv[m * C + c] - mu[c]) * (*rstd)[c];
      (*xhat)[m * C + c] = h;
      out[m * C + c] = h * gamma[c] + beta[c];
    }
  const bool batch_stats = opt.training;
  return detail::record(
      "batch_norm", x.shape(), std::move(out), {x, gamma, beta},
      [xn = x.node(), gn = gamma.node(), bn = beta.node(), xhat, rstd, M, C, batch_stats](const detail::Node& o) {
        const auto& g = o.grad;
        std::vector<double> sg(C, 0.0), sgx(C, 0.0);
        for (std::size_t m = 0; m < M; ++m)
          for (std::size_t c = 0; c < C; ++c) {
            sg[c] += g[m * C + c];
            sgx[c] += g[m * C + c] * (*xhat)[m * C + c];
          }
        if (gn->requires_grad) {
          auto& gg = gn->grad_ref();
          for (std::size_t c = 0; c < C; ++c) gg[c] += sgx[c];
        }
        if (bn->requires_grad) {
          auto& gb = bn->grad_ref();
          for (std::size_t c = 0; c < C; ++c) gb[c] += sg[c];
        }
        if (xn->requires_grad) {
          auto& gx = xn->grad_ref();
          const double inv_m = 1.0 / static_cast<double>(M);
          for (std::size_t m = 0; m < M; ++m)
            for (std::size_t c = 0; c < C; ++c) {
              const double k = gn->value[c] * (*rstd)[c];
              const std::size_t i = m * C + c;
              gx[i] += batch_stats ? k * (g[i] - sg[c] * inv_m - (*xhat)[i] * sgx[c] * inv_m) : k * g[i];
            }
        }
      });
}

enum class NormMode { layer, batch };

/// Layer mode normalises each token over its channels; batch mode normalises
/// each channel over every other axis using batch statistics.
inline Tensor normalize(const Tensor& x, NormMode mode, const Tensor& gamma, const Tensor& beta, double eps) {
  if (mode == NormMode::layer) return layer_norm(x, gamma, beta, eps);
  BatchNormOptions opt;
  opt.eps = eps;
  return batch_norm(x, gamma, beta, nullptr, opt);
}

/// x / max(||x||_2, eps) along `axis`; a vector with norm below eps is divided by eps.
inline Tensor l2_normalize(const Tensor& x, int axis, double eps = 1e-12) {
  if (!(eps > 0.0)) throw ConfigError("l2_normalize: eps must be positive");
  const std::size_t ax = x.normalize_axis(axis);
  const auto s = detail::split_axis(x.shape(), ax);
  auto denom = std::make_shared<std::vector<double>>(s.outer * s.inner);
  auto clipped = std::make_shared<std::vector<std::uint8_t>>(s.outer * s.inner);
  std::vector<double> out(x.numel());
  const auto& xv = x.values();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.n * s.inner + i;
      double ss = 0.0;
      for (std::size_t k = 0; k < s.n; ++k) ss += xv[base + k * s.inner] * xv[base + k * s.inner];
      const double norm = std::sqrt(ss);
      const bool clip = norm < eps;
      const double d = clip ? eps : norm;
      (*denom)[o * s.inner + i] = d;
      (*clipped)[o * s.inner + i] = clip;
      for (std::size_t k = 0; k < s.n; ++k) out[base + k * s.inner] = xv[base + k * s.inner] / d;
    }
  return detail::record("l2_normalize", x.shape(), std::move(out), {x},
                        [xn = x.node(), s, denom, clipped](const detail::Node& o) {
                          auto& g = xn->grad_ref();
                          for (std::size_t a = 0; a < s.outer; ++a)
                            for (std::size_t i = 0; i < s.inner; ++i) {
                              const std::size_t base = a * s.n * s.inner + i;
                              const double d = (*denom)[a * s.inner + i];
                              double dot = 0.0;
                              if (!(*clipped)[a * s.inner + i])
                                for (std::size_t k = 0; k < s.n; ++k)
                                  dot += o.grad[base + k * s.inner] * o.value[base + k * s.inner];
                              for (std::size_t k = 0; k < s.n; ++k) {
                                const std::size_t idx = base + k * s.inner;
                                g[idx] += (o.grad[idx] - o.value[idx] * dot) / d;
                              }
                            }
                        });
}

// ------------------------------------------------------------- spatial ops

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;
};

inline std::size_t conv_out_size(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  if (in + 2 * pad < k) {
    throw ConfigError("conv: kernel " + std::to_string(k) + " larger than padded input " + std::to_string(in + 2 * pad));
  }
  return (in + 2 * pad - k) / stride + 1;
}

/// NHWC convolution. weight is (C_out, k_h, k_w, C_in / groups); bias may be undefined.
inline Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, const Conv2dOptions& opt) {
  if (x.rank() != 4 || weight.rank() != 4) {
    throw ConfigError("conv2d expects NHWC input and 4-d kernel, got " + to_string(x.shape()) + " and " +
                      to_string(weight.shape()));
  }
  const std::size_t N = x.dim(0), H = x.dim(1), W = x.dim(2), Cin = x.dim(3);
  const std::size_t Cout = weight.dim(0), KH = weight.dim(1), KW = weight.dim(2), Cg = weight.dim(3);
  const std::size_t G = opt.groups;
  if (G == 0 || opt.stride == 0) throw ConfigError("conv2d: groups and stride must be positive");
  if (Cin % G != 0 || Cout % G != 0 || Cg * G != Cin) {
    throw ConfigError("conv2d: channels " + std::to_string(Cin) + " -> " + std::to_string(Cout) +
                      " incompatible with groups " + std::to_string(G) + " and kernel " + to_string(weight.shape()));
  }
  const bool has_bias = bias.defined();
  if (has_bias && bias.numel() != Cout) throw ConfigError("conv2d: bias size mismatch");
  const std::size_t OH = conv_out_size(H, KH, opt.stride, opt.padding);
  const std::size_t OW = conv_out_size(W, KW, opt.stride, opt.padding);
  const std::size_t Og = Cout / G;
  const long pad = static_cast<long>(opt.padding);
  const std::size_t st = opt.stride;

  std::vector<double> out(N * OH * OW * Cout, 0.0);
  const auto& xv = x.values();
  const auto& wv = weight.values();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t oy = 0; oy < OH; ++oy)
      for (std::size_t ox = 0; ox < OW; ++ox) {
        double* Y = out.data() + ((n * OH + oy) * OW + ox) * Cout;
        if (has_bias)
          for (std::size_t c = 0; c < Cout; ++c) Y[c] = bias[c];
        for (std::size_t ky = 0; ky < KH; ++ky) {
          const long iy = static_cast<long>(oy * st + ky) - pad;
          if (iy < 0 || iy >= static_cast<long>(H)) continue;
          for (std::size_t kx = 0; kx < KW; ++kx) {
            const long ix = static_cast<long>(ox * st + kx) - pad;
            if (ix < 0 || ix >= static_cast<long>(W)) continue;
            const double* X = xv.data() + ((n * H + static_cast<std::size_t>(iy)) * W + static_cast<std::size_t>(ix)) * Cin;
            for (std::size_t oc = 0; oc < Cout; ++oc) {
              const std::size_t g = oc / Og;
              const double* Wk = wv.data() + ((oc * KH + ky) * KW + kx) * Cg;
              const double* Xg = X + g * Cg;
              double s = 0.0;
              for (std::size_t ic = 0; ic < Cg; ++ic) s += Xg[ic] * Wk[ic];
              Y[oc] += s;
            }
          }
        }
      }
  std::initializer_list<Tensor> inputs = {x, weight, has_bias ? bias : weight};
  return detail::record(
      "conv2d", {N, OH, OW, Cout}, std::move(out), inputs,
      [xn = x.node(), wn = weight.node(), bn = has_bias ? bias.node() : nullptr, N, H, W, Cin, Cout, KH, KW, Cg, Og,
       OH, OW, pad, st](const detail::Node& o) {
        const auto& g = o.grad;
        const bool gx_on = xn->requires_grad, gw_on = wn->requires_grad;
        std::vector<double>* gx = gx_on ? &xn->grad_ref() : nullptr;
        std::vector<double>* gw = gw_on ? &wn->grad_ref() : nullptr;
        if (bn && bn->requires_grad) {
          auto& gb = bn->grad_ref();
          for (std::size_t i = 0; i < g.size(); ++i) gb[i % Cout] += g[i];
        }
        if (!gx_on && !gw_on) return;
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t oy = 0; oy < OH; ++oy)
            for (std::size_t ox = 0; ox < OW; ++ox) {
              const double* G = g.data() + ((n * OH + oy) * OW + ox) * Cout;
              for (std::size_t ky = 0; ky < KH; ++ky) {
                const long iy = static_cast<long>(oy * st + ky) - pad;
                if (iy < 0 || iy >= static_cast<long>(H)) continue;
                for (std::size_t kx = 0; kx < KW; ++kx) {
                  const long ix = static_cast<long>(ox * st + kx) - pad;
                  if (ix < 0 || ix >= static_cast<long>(W)) continue;
                  const std::size_t xoff =
                      ((n * H + static_cast<std::size_t>(iy)) * W + static_cast<std::size_t>(ix)) * Cin;
                  for (std::size_t oc = 0; oc < Cout; ++oc) {
                    const double go = G[oc];
                    if (go == 0.0) continue;
                    const std::size_t woff = ((oc * KH + ky) * KW + kx) * Cg;
                    const std::size_t goff = xoff + (oc / Og) * Cg;
                    if (gx_on) {
                      double* GX = gx->data() + goff;
                      const double* Wk = wn->value.data() + woff;
                      for (std::size_t ic = 0; ic < Cg; ++ic) GX[ic] += go * Wk[ic];
                    }
                    if (gw_on) {
                      double* GW = gw->data() + woff;
                      const double* X = xn->value.data() + goff;
                      for (std::size_t ic = 0; ic < Cg; ++ic) GW[ic] += go * X[ic];
                    }
                  }
                }
              }
            }
      });
}

/// Bilinear resize of an NHWC map with half-pixel centres: output pixel j samples
/// source coordinate (j + 0.5) * in / out - 0.5, clamped to [0, in - 1].
inline Tensor bilinear_resize(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  if (x.rank() != 4) throw ConfigError("bilinear_resize expects NHWC input, got " + to_string(x.shape()));
  if (out_h == 0 || out_w == 0) throw ConfigError("bilinear_resize: output size must be positive");
  const std::size_t N = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  struct Tap {
    std::size_t i0, i1;
    double w1;
  };
  auto taps = [](std::size_t in, std::size_t out) {
    std::vector<Tap> t(out);
    for (std::size_t j = 0; j < out; ++j) {
      double src = (static_cast<double>(j) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(in - 1));
      const auto i0 = static_cast<std::size_t>(std::floor(src));
      const std::size_t i1 = std::min(i0 + 1, in - 1);
      t[j] = {i0, i1, src - static_cast<double>(i0)};
    }
    return t;
  };
  auto ty = std::make_shared<std::vector<Tap>>(taps(H, out_h));
  auto tx = std::make_shared<std::vector<Tap>>(taps(W, out_w));
  std::vector<double> out(N * out_h * out_w * C);
  const auto& xv = x.values();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t oy = 0; oy < out_h; ++oy)
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const auto& a = (*ty)[oy];
        const auto& b = (*tx)[ox];
        const double w00 = (1 - a.w1) * (1 - b.w1), w01 = (1 - a.w1) * b.w1, w10 = a.w1 * (1 - b.w1), w11 = a.w1 * b.w1;
        for (std::size_t c = 0; c < C; ++c) {
          auto at = [&](std::size_t y, std::size_t xx) { return xv[((n * H + y) * W + xx) * C + c]; };
          out[((n * out_h + oy) * out_w + ox) * C + c] =
              w00 * at(a.i0, b.i0) + w01 * at(a.i0, b.i1) + w10 * at(a.i1, b.i0) + w11 * at(a.i1, b.i1);
        }
      }
  return detail::record("bilinear_resize", {N, out_h, out_w, C}, std::move(out), {x},
                        [xn = x.node(), ty, tx, N, H, W, C, out_h, out_w](const detail::Node& o) {
                          auto& g = xn->grad_ref();
                          for (std::size_t n = 0; n < N; ++n)
                            for (std::size_t oy = 0; oy < out_h; ++oy)
                              for (std::size_t ox = 0; ox < out_w; ++ox) {
                                const auto& a = (*ty)[oy];
                                const auto& b = (*tx)[ox];
                                for (std::size_t c = 0; c < C; ++c) {
                                  const double go = o.grad[((n * out_h + oy) * out_w + ox) * C + c];
                                  auto put = [&](std::size_t y, std::size_t xx, double w) {
                                    g[((n * H + y) * W + xx) * C + c] += go * w;
                                  };
                                  put(a.i0, b.i0, (1 - a.w1) * (1 - b.w1));
                                  put(a.i0, b.i1, (1 - a.w1) * b.w1);
                                  put(a.i1, b.i0, a.w1 * (1 - b.w1));
                                  put(a.i1, b.i1, a.w1 * b.w1);
                                }
                              }
                        });
}

/// Global spatial max of an NHWC map -> (N, C).
inline Tensor global_max_pool(const Tensor& x) {
  if (x.rank() != 4) throw ConfigError("global_max_pool expects NHWC input");
  const std::size_t N = x.dim(0), C = x.dim(3);
  return max(reshape(x, {N, x.dim(1) * x.dim(2), C}), 1);
}

// ----------------------------------------------------------------- lookups

/// Rows of `table` (V, D) selected by `ids` -> (ids.size() / L, L, D).
inline Tensor embedding(const Tensor& table, const std::vector<std::size_t>& ids, std::size_t seq_len) {
  if (table.rank() != 2) throw ConfigError("embedding table must be 2-d");
  const std::size_t V = table.dim(0), D = table.dim(1);
  if (seq_len == 0 || ids.size() % seq_len != 0) throw ConfigError("embedding: ids not a multiple of sequence length");
  std::vector<double> out(ids.size() * D);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= V) throw ConfigError("embedding: id " + std::to_string(ids[i]) + " outside vocabulary of " + std::to_string(V));
    std::copy_n(table.values().begin() + static_cast<std::ptrdiff_t>(ids[i] * D), D,
                out.begin() + static_cast<std::ptrdiff_t>(i * D));
  }
  return detail::record("embedding", {ids.size() / seq_len, seq_len, D}, std::move(out), {table},
                        [tn = table.node(), ids, D](const detail::Node& o) {
                          auto& g = tn->grad_ref();
                          for (std::size_t i = 0; i < ids.size(); ++i)
                            for (std::size_t d = 0; d < D; ++d) g[ids[i] * D + d] += o.grad[i * D + d];
                        });
}

// ---------------------------------------------------------------- losses

/// Elementwise binary cross-entropy of sigmoid(logits) against fixed targets,
/// evaluated as max(z,0) - z*y + log(1 + exp(-|z|)).
inline Tensor bce_with_logits(const Tensor& logits, const std::vector<double>& targets) {
  if (targets.size() != logits.numel()) throw ConfigError("bce_with_logits: target size mismatch");
  std::vector<double> out(logits.numel());
  const auto& z = logits.values();
  for (std::size_t i = 0; i < z.size(); ++i)
    out[i] = std::max(z[i], 0.0) - z[i] * targets[i] + std::log1p(std::exp(-std::abs(z[i])));
  return detail::record("bce_with_logits", logits.shape(), std::move(out), {logits},
                        [zn = logits.node(), targets](const detail::Node& o) {
                          auto& g = zn->grad_ref();
                          for (std::size_t i = 0; i < g.size(); ++i) {
                            const double v = zn->value[i];
                            const double s = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
                            g[i] += o.grad[i] * (s - targets[i]);
                          }
                        });
}

}  // namespace satrack
