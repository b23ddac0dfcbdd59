#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <random>
#include <span>
#include <vector>

#include "rpt/core/tape.hpp"

// Differentiable operations recorded on a Tape. Matrices are rank-2 row-major
// tensors; rank-1 tensors are accepted wherever a single row makes sense.

namespace rpt {

namespace detail {

// C(m x n) += A(m x k) * B(k x n)
template <typename T>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    T* ci = c + i * n;
    const T* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = ai[p];
      if (av == T{0}) continue;
      const T* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C(m x n) += A(m x k) * B(n x k)^T
template <typename T>
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* ai = a + i * k;
    T* ci = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const T* bj = b + j * k;
      T s{0};
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      ci[j] += s;
    }
  }
}

// C(k x n) += A(m x k)^T * B(m x n)
template <typename T>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* ai = a + i * k;
    const T* bi = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = ai[p];
      if (av == T{0}) continue;
      T* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
    }
  }
}

template <typename T>
void require_same_tape(const Var<T>& a, const Var<T>& b) {
  if (a.tape != b.tape) throw ValidationError("operands recorded on different tapes");
}

template <typename T>
void require_matrix(const Tensor<T>& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + " expects a matrix, got " + shape_string(t.shape()));
  }
}

}  // namespace detail

inline constexpr std::size_t kNoRow = static_cast<std::size_t>(-1);

template <std::floating_point T>
Var<T> matmul(Var<T> a, Var<T> b) {
  detail::require_same_tape(a, b);
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  detail::require_matrix(av, "matmul");
  detail::require_matrix(bv, "matmul");
  const std::size_t m = av.shape()[0], k = av.shape()[1], n = bv.shape()[1];
  if (bv.shape()[0] != k) {
    throw DimensionError("matmul inner dimensions differ: " + shape_string(av.shape()) + " * " +
                         shape_string(bv.shape()));
  }
  Tensor<T> out({m, n});
  detail::gemm_nn(m, k, n, av.data(), bv.data(), out.data());
  return a.tape->record(std::move(out), {a, b}, [a, b, m, k, n](Tape<T>& tape, const Tensor<T>& g) {
    if (T* da = tape.grad_buffer(a)) detail::gemm_nt(m, n, k, g.data(), b.value().data(), da);
    if (T* db = tape.grad_buffer(b)) detail::gemm_tn(m, k, n, a.value().data(), g.data(), db);
  });
}

template <std::floating_point T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::require_same_tape(a, b);
  if (a.shape() != b.shape()) {
    throw DimensionError("add shape mismatch: " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
  Tensor<T> out = a.value();
  const Tensor<T>& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape<T>& tape, const Tensor<T>& g) {
    for (Var<T> x : {a, b}) {
      if (T* d = tape.grad_buffer(x)) {
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
      }
    }
  });
}

/// Elementwise product.
template <std::floating_point T>
Var<T> mul(Var<T> a, Var<T> b) {
  detail::require_same_tape(a, b);
  if (a.shape() != b.shape()) {
    throw DimensionError("mul shape mismatch: " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
  Tensor<T> out = a.value();
  const Tensor<T>& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape<T>& tape, const Tensor<T>& g) {
    if (T* da = tape.grad_buffer(a)) {
      const Tensor<T>& bv = b.value();
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * bv[i];
    }
    if (T* db = tape.grad_buffer(b)) {
      const Tensor<T>& av = a.value();
      for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i] * av[i];
    }
  });
}

template <std::floating_point T>
Var<T> scale(Var<T> a, T s) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v *= s;
  return a.tape->record(std::move(out), {a}, [a, s](Tape<T>& tape, const Tensor<T>& g) {
    if (T* da = tape.grad_buffer(a)) {
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += s * g[i];
    }
  });
}

/// x (n x m) + bias (m) broadcast over rows.
template <std::floating_point T>
Var<T> add_bias(Var<T> x, Var<T> bias) {
  detail::require_same_tape(x, bias);
  const Tensor<T>& xv = x.value();
  const Tensor<T>& bv = bias.value();
  const std::size_t rows = xv.rows(), cols = xv.cols();
  if (bv.size() != cols) {
    throw DimensionError("add_bias: bias " + shape_string(bv.shape()) + " vs input " +
                         shape_string(xv.shape()));
  }
  Tensor<T> out = xv;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += bv[c];
  return x.tape->record(std::move(out), {x, bias},
                        [x, bias, rows, cols](Tape<T>& tape, const Tensor<T>& g) {
                          if (T* dx = tape.grad_buffer(x)) {
                            for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
                          }
                          if (T* db = tape.grad_buffer(bias)) {
                            for (std::size_t r = 0; r < rows; ++r)
                              for (std::size_t c = 0; c < cols; ++c) db[c] += g[r * cols + c];
                          }
                        });
}

/// x W + b
template <std::floating_point T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
  return add_bias(matmul(x, w), b);
}

template <std::floating_point T>
Var<T> relu(Var<T> x) {
  Tensor<T> out = x.value();
  for (auto& v : out.values()) v = std::max(v, T{0});
  return x.tape->record(std::move(out), {x}, [x](Tape<T>& tape, const Tensor<T>& g) {
    if (T* dx = tape.grad_buffer(x)) {
      const Tensor<T>& xv = x.value();
      for (std::size_t i = 0; i < g.size(); ++i)
        if (xv[i] > T{0}) dx[i] += g[i];
    }
  });
}

namespace detail {

struct AxisLayout {
  std::size_t outer, len, inner;
};

template <typename T>
AxisLayout axis_layout(const Tensor<T>& t, std::size_t axis) {
  if (axis >= t.rank()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " +
                         shape_string(t.shape()));
  }
  AxisLayout l{1, t.shape()[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) l.outer *= t.shape()[i];
  for (std::size_t i = axis + 1; i < t.rank(); ++i) l.inner *= t.shape()[i];
  return l;
}

}  // namespace detail

/// Max-stabilized softmax along `axis`.
template <std::floating_point T>
Var<T> softmax(Var<T> x, std::size_t axis) {
  const Tensor<T>& xv = x.value();
  if (!xv.all_finite()) throw NumericalError("softmax input is not finite");
  const auto l = detail::axis_layout(xv, axis);
  Tensor<T> out(xv.shape());
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t in = 0; in < l.inner; ++in) {
      const std::size_t base = o * l.len * l.inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t i = 0; i < l.len; ++i) mx = std::max(mx, xv[base + i * l.inner]);
      T sum{0};
      for (std::size_t i = 0; i < l.len; ++i) {
        const T e = std::exp(xv[base + i * l.inner] - mx);
        out[base + i * l.inner] = e;
        sum += e;
      }
      for (std::size_t i = 0; i < l.len; ++i) out[base + i * l.inner] /= sum;
    }
  }
  auto y = std::make_shared<Tensor<T>>(out);
  return x.tape->record(std::move(out), {x}, [x, l, y](Tape<T>& tape, const Tensor<T>& g) {
    T* dx = tape.grad_buffer(x);
    if (!dx) return;
    for (std::size_t o = 0; o < l.outer; ++o) {
      for (std::size_t in = 0; in < l.inner; ++in) {
        const std::size_t base = o * l.len * l.inner + in;
        T dot{0};
        for (std::size_t i = 0; i < l.len; ++i) dot += (*y)[base + i * l.inner] * g[base + i * l.inner];
        for (std::size_t i = 0; i < l.len; ++i) {
          const std::size_t at = base + i * l.inner;
          dx[at] += (*y)[at] * (g[at] - dot);
        }
      }
    }
  });
}

/// Row-wise layer normalization over the last axis followed by gain/bias.
template <std::floating_point T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps) {
  detail::require_same_tape(x, gain);
  detail::require_same_tape(x, bias);
  if (!(eps > T{0})) throw ValidationError("layer_norm eps must be positive");
  const Tensor<T>& xv = x.value();
  const std::size_t rows = xv.size() / xv.cols(), cols = xv.cols();
  if (gain.value().size() != cols || bias.value().size() != cols) {
    throw DimensionError("layer_norm affine parameters do not match width " + std::to_string(cols));
  }
  auto xhat = std::make_shared<std::vector<T>>(xv.size());
  auto inv_std = std::make_shared<std::vector<T>>(rows);
  Tensor<T> out(xv.shape());
  const Tensor<T>& gv = gain.value();
  const Tensor<T>& bv = bias.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xv.data() + r * cols;
    T mean{0};
    for (std::size_t c = 0; c < cols; ++c) mean += xr[c];
    mean /= static_cast<T>(cols);
    T var{0};
    for (std::size_t c = 0; c < cols; ++c) var += (xr[c] - mean) * (xr[c] - mean);
    var /= static_cast<T>(cols);
    const T is = T{1} / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < cols; ++c) {
      const T h = (xr[c] - mean) * is;
      (*xhat)[r * cols + c] = h;
      out[r * cols + c] = h * gv[c] + bv[c];
    }
  }
  return x.tape->record(
      std::move(out), {x, gain, bias},
      [x, gain, bias, rows, cols, xhat, inv_std](Tape<T>& tape, const Tensor<T>& g) {
        const Tensor<T>& gv = gain.value();
        if (T* dg = tape.grad_buffer(gain)) {
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) dg[c] += g[r * cols + c] * (*xhat)[r * cols + c];
        }
        if (T* db = tape.grad_buffer(bias)) {
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) db[c] += g[r * cols + c];
        }
        if (T* dx = tape.grad_buffer(x)) {
          const T n = static_cast<T>(cols);
          for (std::size_t r = 0; r < rows; ++r) {
            T mean_d{0}, mean_dh{0};
            for (std::size_t c = 0; c < cols; ++c) {
              const T d = g[r * cols + c] * gv[c];
              mean_d += d;
              mean_dh += d * (*xhat)[r * cols + c];
            }
            mean_d /= n;
            mean_dh /= n;
            for (std::size_t c = 0; c < cols; ++c) {
              const T d = g[r * cols + c] * gv[c];
              dx[r * cols + c] += (*inv_std)[r] * (d - mean_d - (*xhat)[r * cols + c] * mean_dh);
            }
          }
        }
      });
}

inline constexpr double kProbabilityFloor = 1e-12;

/// Per-row -ln(p[target]) with p clamped at 1e-12. Returns a length-n vector.
template <std::floating_point T>
Var<T> cross_entropy(Var<T> probs, std::span<const std::size_t> targets) {
  const Tensor<T>& pv = probs.value();
  const std::size_t rows = pv.size() / pv.cols(), classes = pv.cols();
  if (targets.size() != rows) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(rows) + " rows");
  }
  Tensor<T> out({rows});
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] >= classes) {
      throw ValidationError("cross_entropy target " + std::to_string(targets[r]) +
                            " out of range for " + std::to_string(classes) + " classes");
    }
    const T p = std::max(pv[r * classes + targets[r]], static_cast<T>(kProbabilityFloor));
    out[r] = -std::log(p);
  }
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  return probs.tape->record(std::move(out), {probs},
                            [probs, tgt = std::move(tgt), classes](Tape<T>& tape, const Tensor<T>& g) {
                              T* dp = tape.grad_buffer(probs);
                              if (!dp) return;
                              const Tensor<T>& pv = probs.value();
                              for (std::size_t r = 0; r < tgt.size(); ++r) {
                                const T p = pv[r * classes + tgt[r]];
                                if (p >= static_cast<T>(kProbabilityFloor)) dp[r * classes + tgt[r]] -= g[r] / p;
                              }
                            });
}

template <std::floating_point T>
Var<T> sum(Var<T> x) {
  T s{0};
  for (T v : x.value().values()) s += v;
  return x.tape->record(Tensor<T>::scalar(s), {x}, [x](Tape<T>& tape, const Tensor<T>& g) {
    if (T* dx = tape.grad_buffer(x)) {
      for (std::size_t i = 0; i < x.value().size(); ++i) dx[i] += g[0];
    }
  });
}

template <std::floating_point T>
Var<T> mean(Var<T> x) {
  return scale(sum(x), T{1} / static_cast<T>(x.value().size()));
}

/// Mean along `axis`; the axis is removed from the shape (rank-1 input gives {1}).
template <std::floating_point T>
Var<T> mean(Var<T> x, std::size_t axis) {
  const Tensor<T>& xv = x.value();
  const auto l = detail::axis_layout(xv, axis);
  Shape shape;
  for (std::size_t i = 0; i < xv.rank(); ++i)
    if (i != axis) shape.push_back(xv.shape()[i]);
  if (shape.empty()) shape = {1};
  Tensor<T> out(shape);
  const T inv = T{1} / static_cast<T>(l.len);
  for (std::size_t o = 0; o < l.outer; ++o)
    for (std::size_t i = 0; i < l.len; ++i)
      for (std::size_t in = 0; in < l.inner; ++in)
        out[o * l.inner + in] += xv[(o * l.len + i) * l.inner + in] * inv;
  return x.tape->record(std::move(out), {x}, [x, l, inv](Tape<T>& tape, const Tensor<T>& g) {
    if (T* dx = tape.grad_buffer(x)) {
      for (std::size_t o = 0; o < l.outer; ++o)
        for (std::size_t i = 0; i < l.len; ++i)
          for (std::size_t in = 0; in < l.inner; ++in)
            dx[(o * l.len + i) * l.inner + in] += g[o * l.inner + in] * inv;
    }
  });
}

/// Sum over the last axis of a matrix: (n x m) -> (n).
template <std::floating_point T>
Var<T> row_sum(Var<T> x) {
  const Tensor<T>& xv = x.value();
  const std::size_t cols = xv.cols(), rows = xv.size() / cols;
  Tensor<T> out({rows});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r] += xv[r * cols + c];
  return x.tape->record(std::move(out), {x}, [x, rows, cols](Tape<T>& tape, const Tensor<T>& g) {
    if (T* dx = tape.grad_buffer(x)) {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) dx[r * cols + c] += g[r];
    }
  });
}

template <std::floating_point T>
Var<T> reshape(Var<T> x, Shape shape) {
  Tensor<T> out = x.value().reshaped(std::move(shape));
  return x.tape->record(std::move(out), {x}, [x](Tape<T>& tape, const Tensor<T>& g) {
    if (T* dx = tape.grad_buffer(x)) {
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
    }
  });
}

/// Concatenates matrices along axis 0 (rows) or 1 (columns).
template <std::floating_point T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ValidationError("concat of zero tensors");
  if (axis > 1) throw DimensionError("concat supports axis 0 or 1");
  for (const auto& p : parts) {
    detail::require_same_tape(parts[0], p);
    detail::require_matrix(p.value(), "concat");
  }
  std::size_t rows = parts[0].value().shape()[0], cols = parts[0].value().shape()[1];
  for (std::size_t i = 1; i < parts.size(); ++i) {
    const Shape& s = parts[i].value().shape();
    if (axis == 0) {
      if (s[1] != cols) throw DimensionError("concat rows: column counts differ");
      rows += s[0];
    } else {
      if (s[0] != rows) throw DimensionError("concat columns: row counts differ");
      cols += s[1];
    }
  }
  Tensor<T> out({rows, cols});
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const Tensor<T>& pv = p.value();
    const std::size_t pr = pv.shape()[0], pc = pv.shape()[1];
    for (std::size_t r = 0; r < pr; ++r)
      for (std::size_t c = 0; c < pc; ++c) {
        if (axis == 0) out(offset + r, c) = pv(r, c);
        else out(r, offset + c) = pv(r, c);
      }
    offset += axis == 0 ? pr : pc;
  }
  return parts[0].tape->record(std::move(out), std::span<const Var<T>>(parts),
                     [parts, axis, cols](Tape<T>& t, const Tensor<T>& g) {
                       std::size_t offset = 0;
                       for (const auto& p : parts) {
                         const Tensor<T>& pv = p.value();
                         const std::size_t pr = pv.shape()[0], pc = pv.shape()[1];
                         if (T* dp = t.grad_buffer(p)) {
                           for (std::size_t r = 0; r < pr; ++r)
                             for (std::size_t c = 0; c < pc; ++c)
                               dp[r * pc + c] += axis == 0 ? g[(offset + r) * cols + c]
                                                           : g[r * cols + offset + c];
                         }
                         offset += axis == 0 ? pr : pc;
                       }
                     });
}

/// Row gather: out[i] = table[indices[i]], or zeros when indices[i] == kNoRow.
/// Gradients scatter-add back into the table.
template <std::floating_point T>
Var<T> gather_rows(Var<T> table, std::span<const std::size_t> indices) {
  const Tensor<T>& tv = table.value();
  const std::size_t cols = tv.cols(), n_rows = tv.size() / cols;
  if (indices.empty()) throw ValidationError("gather_rows with no indices");
  Tensor<T> out({indices.size(), cols});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t src = indices[i];
    if (src == kNoRow) continue;
    if (src >= n_rows) {
      throw ValidationError("gather_rows index " + std::to_string(src) + " out of range for " +
                            std::to_string(n_rows) + " rows");
    }
    std::copy_n(tv.data() + src * cols, cols, out.data() + i * cols);
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return table.tape->record(std::move(out), {table},
                            [table, idx = std::move(idx), cols](Tape<T>& tape, const Tensor<T>& g) {
                              T* dt = tape.grad_buffer(table);
                              if (!dt) return;
                              for (std::size_t i = 0; i < idx.size(); ++i) {
                                if (idx[i] == kNoRow) continue;
                                for (std::size_t c = 0; c < cols; ++c) dt[idx[i] * cols + c] += g[i * cols + c];
                              }
                            });
}

/// One term of a sparse row combination: out[out_row] += coef * x[in_row].
template <std::floating_point T>
struct SparseEntry {
  std::size_t out_row;
  std::size_t in_row;
  T coef;
};

/// out (n_out x m) with out[e.out_row] += e.coef * x[e.in_row] for each entry.
/// Used for neighbour aggregation, pooling and readout.
template <std::floating_point T>
Var<T> sparse_combine(Var<T> x, std::size_t n_out, std::vector<SparseEntry<T>> entries) {
  const Tensor<T>& xv = x.value();
  const std::size_t cols = xv.cols(), n_in = xv.size() / cols;
  if (n_out == 0) throw ValidationError("sparse_combine with zero output rows");
  Tensor<T> out({n_out, cols});
  for (const auto& e : entries) {
    if (e.out_row >= n_out || e.in_row >= n_in) throw ValidationError("sparse_combine index out of range");
    const T* src = xv.data() + e.in_row * cols;
    T* dst = out.data() + e.out_row * cols;
    for (std::size_t c = 0; c < cols; ++c) dst[c] += e.coef * src[c];
  }
  return x.tape->record(std::move(out), {x},
                        [x, entries = std::move(entries), cols](Tape<T>& tape, const Tensor<T>& g) {
                          T* dx = tape.grad_buffer(x);
                          if (!dx) return;
                          for (const auto& e : entries) {
                            const T* src = g.data() + e.out_row * cols;
                            T* dst = dx + e.in_row * cols;
                            for (std::size_t c = 0; c < cols; ++c) dst[c] += e.coef * src[c];
                          }
                        });
}

/// Inverted dropout. `keep_prob` is the probability of keeping a unit; in eval
/// mode (or keep_prob == 1) the input is returned unchanged.
template <std::floating_point T>
Var<T> dropout(Var<T> x, double keep_prob, std::mt19937_64& rng, bool training) {
  if (!(keep_prob > 0.0 && keep_prob <= 1.0)) throw ValidationError("dropout keep probability must be in (0, 1]");
  if (!training || keep_prob == 1.0) return x;
  std::bernoulli_distribution keep(keep_prob);
  const T s = static_cast<T>(1.0 / keep_prob);
  std::vector<T> mask(x.value().size());
  for (auto& m : mask) m = keep(rng) ? s : T{0};
  Tensor<T> out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return x.tape->record(std::move(out), {x}, [x, mask = std::move(mask)](Tape<T>& tape, const Tensor<T>& g) {
    if (T* dx = tape.grad_buffer(x)) {
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * mask[i];
    }
  });
}

/// Packed layout for batched multi-head attention: `batch` sequences of
/// `seq_len` rows each, model width split into `heads` equal slices.
struct AttentionLayout {
  std::size_t batch = 1;
  std::size_t seq_len = 1;
  std::size_t heads = 1;
};

/// Scaled dot-product attention per sequence and head,
/// softmax(Q K^T / sqrt(d_head)) V, with keys where key_mask == 0 excluded.
/// If `probs_out` is non-null it receives the attention weights laid out as
/// [batch][head][query][key].
template <std::floating_point T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, const AttentionLayout& layout,
                 std::span<const std::uint8_t> key_mask, Tensor<T>* probs_out = nullptr) {
  detail::require_same_tape(q, k);
  detail::require_same_tape(q, v);
  const Tensor<T>& qv = q.value();
  const std::size_t rows = layout.batch * layout.seq_len;
  detail::require_matrix(qv, "attention");
  if (qv.shape() != k.shape() || qv.shape() != v.shape() || qv.shape()[0] != rows) {
    throw DimensionError("attention: Q/K/V must all be " + std::to_string(rows) + " x d, got " +
                         shape_string(qv.shape()));
  }
  if (key_mask.size() != rows) throw DimensionError("attention: key mask length mismatch");
  const std::size_t d = qv.shape()[1];
  if (layout.heads == 0 || d % layout.heads != 0) {
    throw DimensionError("attention: width " + std::to_string(d) + " not divisible by " +
                         std::to_string(layout.heads) + " heads");
  }
  const std::size_t dh = d / layout.heads, s = layout.seq_len;
  const T inv_scale = T{1} / std::sqrt(static_cast<T>(dh));
  auto probs = std::make_shared<std::vector<T>>(layout.batch * layout.heads * s * s, T{0});
  const Tensor<T>& kv = k.value();
  const Tensor<T>& vv = v.value();
  Tensor<T> out(qv.shape());
  std::vector<T> scores(s);
  for (std::size_t b = 0; b < layout.batch; ++b) {
    const std::uint8_t* mask = key_mask.data() + b * s;
    if (std::none_of(mask, mask + s, [](std::uint8_t m) { return m != 0; })) {
      throw ValidationError("attention: sequence " + std::to_string(b) + " has no valid position");
    }
    for (std::size_t h = 0; h < layout.heads; ++h) {
      T* p = probs->data() + (b * layout.heads + h) * s * s;
      for (std::size_t i = 0; i < s; ++i) {
        const T* qi = qv.data() + (b * s + i) * d + h * dh;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < s; ++j) {
          if (!mask[j]) continue;
          const T* kj = kv.data() + (b * s + j) * d + h * dh;
          T dot{0};
          for (std::size_t c = 0; c < dh; ++c) dot += qi[c] * kj[c];
          scores[j] = dot * inv_scale;
          mx = std::max(mx, scores[j]);
        }
        T sum{0};
        for (std::size_t j = 0; j < s; ++j) {
          const T e = mask[j] ? std::exp(scores[j] - mx) : T{0};
          p[i * s + j] = e;
          sum += e;
        }
        T* oi = out.data() + (b * s + i) * d + h * dh;
        for (std::size_t j = 0; j < s; ++j) {
          p[i * s + j] /= sum;
          if (p[i * s + j] == T{0}) continue;
          const T* vj = vv.data() + (b * s + j) * d + h * dh;
          for (std::size_t c = 0; c < dh; ++c) oi[c] += p[i * s + j] * vj[c];
        }
      }
    }
  }
  if (probs_out) *probs_out = Tensor<T>({layout.batch, layout.heads, s, s}, *probs);
  return q.tape->record(
      std::move(out), {q, k, v},
      [q, k, v, layout, probs, d, dh, s, inv_scale](Tape<T>& tape, const Tensor<T>& g) {
        T* dq = tape.grad_buffer(q);
        T* dk = tape.grad_buffer(k);
        T* dv = tape.grad_buffer(v);
        const Tensor<T>& qv = q.value();
        const Tensor<T>& kv = k.value();
        const Tensor<T>& vv = v.value();
        std::vector<T> dp(s), ds(s);
        for (std::size_t b = 0; b < layout.batch; ++b) {
          for (std::size_t h = 0; h < layout.heads; ++h) {
            const T* p = probs->data() + (b * layout.heads + h) * s * s;
            for (std::size_t i = 0; i < s; ++i) {
              const T* gi = g.data() + (b * s + i) * d + h * dh;
              T dot{0};
              for (std::size_t j = 0; j < s; ++j) {
                const T pij = p[i * s + j];
                if (pij == T{0}) {
                  dp[j] = T{0};
                  continue;
                }
                const T* vj = vv.data() + (b * s + j) * d + h * dh;
                T acc{0};
                for (std::size_t c = 0; c < dh; ++c) acc += gi[c] * vj[c];
                dp[j] = acc;
                dot += pij * acc;
                if (dv) {
                  T* dvj = dv + (b * s + j) * d + h * dh;
                  for (std::size_t c = 0; c < dh; ++c) dvj[c] += pij * gi[c];
                }
              }
              for (std::size_t j = 0; j < s; ++j) ds[j] = p[i * s + j] * (dp[j] - dot) * inv_scale;
              const T* qi = qv.data() + (b * s + i) * d + h * dh;
              T* dqi = dq ? dq + (b * s + i) * d + h * dh : nullptr;
              for (std::size_t j = 0; j < s; ++j) {
                if (ds[j] == T{0}) continue;
                const T* kj = kv.data() + (b * s + j) * d + h * dh;
                if (dqi)
                  for (std::size_t c = 0; c < dh; ++c) dqi[c] += ds[j] * kj[c];
                if (dk) {
                  T* dkj = dk + (b * s + j) * d + h * dh;
                  for (std::size_t c = 0; c < dh; ++c) dkj[c] += ds[j] * qi[c];
                }
              }
            }
          }
        }
      });
}

}  // namespace rpt
