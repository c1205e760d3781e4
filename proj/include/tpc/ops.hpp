#pragma once

// Differentiable operations over Tensor. Each op validates extents, counts its
// arithmetic into flop_counter(), and registers a backward closure when
// recorded.

#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "tpc/tensor.hpp"

namespace tpc {

enum class Axis { rows = 0, cols = 1 };

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner extents differ " + detail::shapes(a.rows(), a.cols(), b.rows(), b.cols()));
  }
  flop_counter().matmul += static_cast<std::uint64_t>(a.rows() * a.cols() * b.cols());
  Matrix<Scalar> out = a.value() * b.value();
  return detail::finish<Scalar>("matmul", std::move(out), {&a, &b}, [&] {
    return [an = a.node(), bn = b.node()](const Matrix<Scalar>& g) {
      if (an->requires_grad) detail::accumulate<Scalar>(an, g * bn->value.transpose());
      if (bn->requires_grad) detail::accumulate<Scalar>(bn, an->value.transpose() * g);
    };
  });
}

/// x * W + 1 * b, with x [n x in], W [in x out], b [1 x out].
template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>& b) {
  if (x.cols() != w.rows() || b.rows() != 1 || b.cols() != w.cols()) {
    throw DimensionError("linear: " + detail::shapes(x.rows(), x.cols(), w.rows(), w.cols()) + " bias " +
                         b.shape_string());
  }
  flop_counter().matmul += static_cast<std::uint64_t>(x.rows() * x.cols() * w.cols());
  Matrix<Scalar> out = x.value() * w.value();
  out.rowwise() += b.value().row(0);
  return detail::finish<Scalar>("linear", std::move(out), {&x, &w, &b}, [&] {
    return [xn = x.node(), wn = w.node(), bn = b.node()](const Matrix<Scalar>& g) {
      if (xn->requires_grad) detail::accumulate<Scalar>(xn, g * wn->value.transpose());
      if (wn->requires_grad) detail::accumulate<Scalar>(wn, xn->value.transpose() * g);
      if (bn->requires_grad) detail::accumulate<Scalar>(bn, g.colwise().sum());
    };
  });
}

template <typename Scalar>
Tensor<Scalar> transpose(const Tensor<Scalar>& x) {
  Matrix<Scalar> out = x.value().transpose();
  return detail::finish<Scalar>("transpose", std::move(out), {&x}, [&] {
    return [xn = x.node()](const Matrix<Scalar>& g) { detail::accumulate<Scalar>(xn, g.transpose()); };
  });
}

namespace detail {
template <typename Scalar>
void require_same_shape(const char* op, const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shapes(a.rows(), a.cols(), b.rows(), b.cols()));
  }
}
}  // namespace detail

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_same_shape("add", a, b);
  flop_counter().elementwise += static_cast<std::uint64_t>(a.size());
  Matrix<Scalar> out = a.value() + b.value();
  return detail::finish<Scalar>("add", std::move(out), {&a, &b}, [&] {
    return [an = a.node(), bn = b.node()](const Matrix<Scalar>& g) {
      detail::accumulate<Scalar>(an, g);
      detail::accumulate<Scalar>(bn, g);
    };
  });
}

template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_same_shape("sub", a, b);
  flop_counter().elementwise += static_cast<std::uint64_t>(a.size());
  Matrix<Scalar> out = a.value() - b.value();
  return detail::finish<Scalar>("sub", std::move(out), {&a, &b}, [&] {
    return [an = a.node(), bn = b.node()](const Matrix<Scalar>& g) {
      detail::accumulate<Scalar>(an, g);
      if (bn->requires_grad) detail::accumulate<Scalar>(bn, (-g).eval());
    };
  });
}

/// Elementwise product.
template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_same_shape("mul", a, b);
  flop_counter().elementwise += static_cast<std::uint64_t>(a.size());
  Matrix<Scalar> out = a.value().cwiseProduct(b.value());
  return detail::finish<Scalar>("mul", std::move(out), {&a, &b}, [&] {
    return [an = a.node(), bn = b.node()](const Matrix<Scalar>& g) {
      if (an->requires_grad) detail::accumulate<Scalar>(an, g.cwiseProduct(bn->value));
      if (bn->requires_grad) detail::accumulate<Scalar>(bn, g.cwiseProduct(an->value));
    };
  });
}

/// s * x + c for constants s, c.
template <typename Scalar>
Tensor<Scalar> affine(const Tensor<Scalar>& x, Scalar s, Scalar c = Scalar(0)) {
  flop_counter().elementwise += static_cast<std::uint64_t>(x.size());
  Matrix<Scalar> out = (x.value().array() * s + c).matrix();
  return detail::finish<Scalar>("affine", std::move(out), {&x}, [&] {
    return [xn = x.node(), s](const Matrix<Scalar>& g) { detail::accumulate<Scalar>(xn, (g * s).eval()); };
  });
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& x, Scalar s) {
  return affine(x, s);
}

/// gamma * x + beta where gamma and beta are 1x1 tensors (possibly trainable).
template <typename Scalar>
Tensor<Scalar> scalar_affine(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma, const Tensor<Scalar>& beta) {
  if (gamma.size() != 1 || beta.size() != 1) throw DimensionError("scalar_affine: gamma and beta must be 1x1");
  flop_counter().elementwise += static_cast<std::uint64_t>(2 * x.size());
  const Scalar gv = gamma.item();
  const Scalar bv = beta.item();
  Matrix<Scalar> out = (x.value().array() * gv + bv).matrix();
  return detail::finish<Scalar>("scalar_affine", std::move(out), {&x, &gamma, &beta}, [&] {
    return [xn = x.node(), gn = gamma.node(), bn = beta.node()](const Matrix<Scalar>& g) {
      const Scalar gv = gn->value(0, 0);
      if (xn->requires_grad) detail::accumulate<Scalar>(xn, (g * gv).eval());
      if (gn->requires_grad) {
        detail::accumulate<Scalar>(gn, Matrix<Scalar>::Constant(1, 1, g.cwiseProduct(xn->value).sum()));
      }
      if (bn->requires_grad) detail::accumulate<Scalar>(bn, Matrix<Scalar>::Constant(1, 1, g.sum()));
    };
  });
}

/// Scales row i of x by col(i, 0); col is [rows x 1].
template <typename Scalar>
Tensor<Scalar> mul_rows(const Tensor<Scalar>& x, const Tensor<Scalar>& col) {
  if (col.cols() != 1 || col.rows() != x.rows()) {
    throw DimensionError("mul_rows: " + detail::shapes(x.rows(), x.cols(), col.rows(), col.cols()));
  }
  flop_counter().elementwise += static_cast<std::uint64_t>(x.size());
  Matrix<Scalar> out = col.value().col(0).asDiagonal() * x.value();
  return detail::finish<Scalar>("mul_rows", std::move(out), {&x, &col}, [&] {
    return [xn = x.node(), cn = col.node()](const Matrix<Scalar>& g) {
      if (xn->requires_grad) detail::accumulate<Scalar>(xn, (cn->value.col(0).asDiagonal() * g).eval());
      if (cn->requires_grad) {
        detail::accumulate<Scalar>(cn, Matrix<Scalar>(g.cwiseProduct(xn->value).rowwise().sum()));
      }
    };
  });
}

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& x) {
  flop_counter().elementwise += static_cast<std::uint64_t>(4 * x.size());
  Matrix<Scalar> out = x.value().unaryExpr([](Scalar v) {
    // split by sign so exp never overflows
    if (v >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-v));
    const Scalar e = std::exp(v);
    return e / (Scalar(1) + e);
  });
  Matrix<Scalar> saved = out;
  return detail::finish<Scalar>("sigmoid", std::move(out), {&x}, [&] {
    return [xn = x.node(), y = std::move(saved)](const Matrix<Scalar>& g) {
      detail::accumulate<Scalar>(xn, Matrix<Scalar>(g.array() * y.array() * (Scalar(1) - y.array())));
    };
  });
}

/// Exact (erf-based) GELU.
template <typename Scalar>
Tensor<Scalar> gelu(const Tensor<Scalar>& x) {
  flop_counter().elementwise += static_cast<std::uint64_t>(x.size());
  const Scalar inv_sqrt2 = Scalar(1) / std::sqrt(Scalar(2));
  Matrix<Scalar> out =
      x.value().unaryExpr([&](Scalar v) { return Scalar(0.5) * v * (Scalar(1) + std::erf(v * inv_sqrt2)); });
  return detail::finish<Scalar>("gelu", std::move(out), {&x}, [&] {
    return [xn = x.node(), inv_sqrt2](const Matrix<Scalar>& g) {
      const Scalar inv_sqrt_2pi = Scalar(1) / std::sqrt(Scalar(2) * std::numbers::pi_v<Scalar>);
      Matrix<Scalar> d = xn->value.unaryExpr([&](Scalar v) {
        return Scalar(0.5) * (Scalar(1) + std::erf(v * inv_sqrt2)) + v * inv_sqrt_2pi * std::exp(Scalar(-0.5) * v * v);
      });
      detail::accumulate<Scalar>(xn, Matrix<Scalar>(g.cwiseProduct(d)));
    };
  });
}

/// Max-subtracted softmax along `axis` (Axis::cols normalizes each row).
template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& x, Axis axis = Axis::cols) {
  if (x.size() == 0) throw DimensionError("softmax of empty tensor");
  flop_counter().elementwise += static_cast<std::uint64_t>(3 * x.size());
  auto rows_softmax = [](const Matrix<Scalar>& m) {
    Matrix<Scalar> y = (m.colwise() - m.rowwise().maxCoeff()).array().exp().matrix();
    y.array().colwise() /= y.rowwise().sum().array();
    return y;
  };
  Matrix<Scalar> out = axis == Axis::cols ? rows_softmax(x.value())
                                          : Matrix<Scalar>(rows_softmax(x.value().transpose()).transpose());
  Matrix<Scalar> saved = out;
  return detail::finish<Scalar>("softmax", std::move(out), {&x}, [&] {
    return [xn = x.node(), y = std::move(saved), axis](const Matrix<Scalar>& g) {
      Matrix<Scalar> gy = g.cwiseProduct(y);
      Matrix<Scalar> d;
      if (axis == Axis::cols) {
        d = gy - y.cwiseProduct(gy.rowwise().sum().replicate(1, y.cols()));
      } else {
        d = gy - y.cwiseProduct(gy.colwise().sum().replicate(y.rows(), 1));
      }
      detail::accumulate<Scalar>(xn, d);
    };
  });
}

/// Row-wise layer normalization with affine gamma, beta of shape [1 x cols].
template <typename Scalar>
Tensor<Scalar> layernorm(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma, const Tensor<Scalar>& beta,
                         Scalar eps = Scalar(1e-6)) {
  if (gamma.rows() != 1 || gamma.cols() != x.cols() || beta.rows() != 1 || beta.cols() != x.cols()) {
    throw DimensionError("layernorm: affine params " + gamma.shape_string() + " for input " + x.shape_string());
  }
  flop_counter().elementwise += static_cast<std::uint64_t>(4 * x.size());
  const Index n = x.cols();
  const Matrix<Scalar>& xv = x.value();
  Vector<Scalar> mean = xv.rowwise().mean();
  Matrix<Scalar> centered = xv.colwise() - mean;
  Vector<Scalar> rstd =
      ((centered.array().square().rowwise().sum() / Scalar(n)) + eps).rsqrt().matrix();
  Matrix<Scalar> xhat = rstd.asDiagonal() * centered;
  Matrix<Scalar> out = xhat.array().rowwise() * gamma.value().row(0).array();
  out.rowwise() += beta.value().row(0);
  return detail::finish<Scalar>("layernorm", std::move(out), {&x, &gamma, &beta}, [&] {
    return [xn = x.node(), gn = gamma.node(), bn = beta.node(), xhat = std::move(xhat), rstd = std::move(rstd),
            n](const Matrix<Scalar>& g) {
      if (gn->requires_grad) detail::accumulate<Scalar>(gn, Matrix<Scalar>(g.cwiseProduct(xhat).colwise().sum()));
      if (bn->requires_grad) detail::accumulate<Scalar>(bn, Matrix<Scalar>(g.colwise().sum()));
      if (xn->requires_grad) {
        Matrix<Scalar> dxhat = g.array().rowwise() * gn->value.row(0).array();
        Vector<Scalar> sum_d = dxhat.rowwise().sum();
        Vector<Scalar> sum_dx = dxhat.cwiseProduct(xhat).rowwise().sum();
        Matrix<Scalar> dx = (dxhat * Scalar(n)).colwise() - sum_d;
        dx -= sum_dx.asDiagonal() * xhat;
        dx = (rstd / Scalar(n)).asDiagonal() * dx;
        detail::accumulate<Scalar>(xn, dx);
      }
    };
  });
}

/// Natural log with values floored at `floor`.
template <typename Scalar>
Tensor<Scalar> log(const Tensor<Scalar>& x, Scalar floor = Scalar(0)) {
  flop_counter().elementwise += static_cast<std::uint64_t>(x.size());
  Matrix<Scalar> out = x.value().unaryExpr([floor](Scalar v) { return std::log(std::max(v, floor)); });
  return detail::finish<Scalar>("log", std::move(out), {&x}, [&] {
    return [xn = x.node(), floor](const Matrix<Scalar>& g) {
      Matrix<Scalar> d = xn->value.unaryExpr([floor](Scalar v) { return v > floor ? Scalar(1) / v : Scalar(0); });
      detail::accumulate<Scalar>(xn, Matrix<Scalar>(g.cwiseProduct(d)));
    };
  });
}

/// Sum of all entries, as a 1x1 tensor.
template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& x) {
  flop_counter().elementwise += static_cast<std::uint64_t>(x.size());
  Matrix<Scalar> out = Matrix<Scalar>::Constant(1, 1, x.value().sum());
  return detail::finish<Scalar>("sum", std::move(out), {&x}, [&] {
    return [xn = x.node()](const Matrix<Scalar>& g) {
      detail::accumulate<Scalar>(xn, Matrix<Scalar>::Constant(xn->value.rows(), xn->value.cols(), g(0, 0)));
    };
  });
}

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& x) {
  if (x.size() == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(x), Scalar(1) / static_cast<Scalar>(x.size()));
}

/// Rows of x at `index`, in order. Repeated indices are allowed.
template <typename Scalar>
Tensor<Scalar> gather_rows(const Tensor<Scalar>& x, std::span<const Index> index) {
  Matrix<Scalar> out(static_cast<Index>(index.size()), x.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= x.rows()) throw DimensionError("gather_rows: index out of range");
    out.row(static_cast<Index>(i)) = x.value().row(index[i]);
  }
  std::vector<Index> idx(index.begin(), index.end());
  return detail::finish<Scalar>("gather_rows", std::move(out), {&x}, [&] {
    return [xn = x.node(), idx = std::move(idx)](const Matrix<Scalar>& g) {
      Matrix<Scalar> d = Matrix<Scalar>::Zero(xn->value.rows(), xn->value.cols());
      for (std::size_t i = 0; i < idx.size(); ++i) d.row(idx[i]) += g.row(static_cast<Index>(i));
      detail::accumulate<Scalar>(xn, d);
    };
  });
}

/// Copy of `base` with rows `index[i]` replaced by src row i. Indices distinct.
template <typename Scalar>
Tensor<Scalar> scatter_rows(const Tensor<Scalar>& base, const Tensor<Scalar>& src, std::span<const Index> index) {
  if (src.rows() != static_cast<Index>(index.size()) || src.cols() != base.cols()) {
    throw DimensionError("scatter_rows: " + detail::shapes(base.rows(), base.cols(), src.rows(), src.cols()));
  }
  Matrix<Scalar> out = base.value();
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= base.rows()) throw DimensionError("scatter_rows: index out of range");
    out.row(index[i]) = src.value().row(static_cast<Index>(i));
  }
  std::vector<Index> idx(index.begin(), index.end());
  return detail::finish<Scalar>("scatter_rows", std::move(out), {&base, &src}, [&] {
    return [bn = base.node(), sn = src.node(), idx = std::move(idx)](const Matrix<Scalar>& g) {
      if (bn->requires_grad) {
        Matrix<Scalar> d = g;
        for (Index i : idx) d.row(i).setZero();
        detail::accumulate<Scalar>(bn, d);
      }
      if (sn->requires_grad) {
        Matrix<Scalar> d(static_cast<Index>(idx.size()), g.cols());
        for (std::size_t i = 0; i < idx.size(); ++i) d.row(static_cast<Index>(i)) = g.row(idx[i]);
        detail::accumulate<Scalar>(sn, d);
      }
    };
  });
}

/// Vertical stack; all parts share a column count.
template <typename Scalar>
Tensor<Scalar> concat_rows(const std::vector<Tensor<Scalar>>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows of nothing");
  Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != parts.front().cols()) throw DimensionError("concat_rows: column counts differ");
    rows += p.rows();
  }
  Matrix<Scalar> out(rows, parts.front().cols());
  Index r = 0;
  for (const auto& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  if (debug_checks() && !out.allFinite()) throw NumericError("non-finite values entering concat_rows");
  Tensor<Scalar> result(std::move(out));
  auto* tape = GradTape<Scalar>::active();
  bool needs = false;
  for (const auto& p : parts) needs = needs || p.requires_grad();
  if (tape == nullptr || !needs) return result;
  result.set_requires_grad(true);
  std::vector<std::shared_ptr<TensorNode<Scalar>>> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  tape->record(result.node(), nodes, [nodes](const Matrix<Scalar>& g) {
    Index r = 0;
    for (const auto& n : nodes) {
      if (n->requires_grad) detail::accumulate<Scalar>(n, Matrix<Scalar>(g.middleRows(r, n->value.rows())));
      r += n->value.rows();
    }
  });
  return result;
}

/// Columns [start, start + count).
template <typename Scalar>
Tensor<Scalar> slice_cols(const Tensor<Scalar>& x, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > x.cols()) throw DimensionError("slice_cols: range out of bounds");
  Matrix<Scalar> out = x.value().middleCols(start, count);
  return detail::finish<Scalar>("slice_cols", std::move(out), {&x}, [&] {
    return [xn = x.node(), start, count](const Matrix<Scalar>& g) {
      Matrix<Scalar> d = Matrix<Scalar>::Zero(xn->value.rows(), xn->value.cols());
      d.middleCols(start, count) = g;
      detail::accumulate<Scalar>(xn, d);
    };
  });
}

/// Sum-normalizes a non-negative tensor so its entries add to 1.
template <typename Scalar>
Tensor<Scalar> normalize_sum(const Tensor<Scalar>& x) {
  const Scalar total = x.value().sum();
  if (!(total > Scalar(0))) throw ContractError("normalize_sum: total mass must be positive");
  flop_counter().elementwise += static_cast<std::uint64_t>(2 * x.size());
  Matrix<Scalar> out = x.value() / total;
  Matrix<Scalar> saved = out;
  return detail::finish<Scalar>("normalize_sum", std::move(out), {&x}, [&] {
    return [xn = x.node(), q = std::move(saved), total](const Matrix<Scalar>& g) {
      const Scalar dot = g.cwiseProduct(q).sum();
      detail::accumulate<Scalar>(xn, Matrix<Scalar>((g.array() - dot) / total));
    };
  });
}

/// Mean softmax cross-entropy of logit rows against integer labels.
template <typename Scalar>
Tensor<Scalar> cross_entropy(const Tensor<Scalar>& logits, std::span<const int> labels) {
  if (static_cast<Index>(labels.size()) != logits.rows()) throw DimensionError("cross_entropy: one label per row");
  const Index n = logits.rows();
  const Index c = logits.cols();
  for (int label : labels) {
    if (label < 0 || label >= c) throw ContractError("cross_entropy: label " + std::to_string(label) + " out of range");
  }
  flop_counter().elementwise += static_cast<std::uint64_t>(3 * logits.size());
  const Matrix<Scalar>& z = logits.value();
  Vector<Scalar> mx = z.rowwise().maxCoeff();
  Matrix<Scalar> probs = (z.colwise() - mx).array().exp().matrix();
  Vector<Scalar> denom = probs.rowwise().sum();
  probs.array().colwise() /= denom.array();
  Scalar loss = 0;
  for (Index i = 0; i < n; ++i) loss += mx(i) + std::log(denom(i)) - z(i, labels[static_cast<std::size_t>(i)]);
  loss /= static_cast<Scalar>(n);
  std::vector<int> lab(labels.begin(), labels.end());
  return detail::finish<Scalar>("cross_entropy", Matrix<Scalar>::Constant(1, 1, loss), {&logits}, [&] {
    return [ln = logits.node(), probs = std::move(probs), lab = std::move(lab)](const Matrix<Scalar>& g) {
      Matrix<Scalar> d = probs;
      for (std::size_t i = 0; i < lab.size(); ++i) d(static_cast<Index>(i), lab[i]) -= Scalar(1);
      d *= g(0, 0) / static_cast<Scalar>(lab.size());
      detail::accumulate<Scalar>(ln, d);
    };
  });
}

}  // namespace tpc
