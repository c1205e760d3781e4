#pragma once

// Dense and top-kappa sparse attention. The sparse variant keeps, for every
// query, only the kappa keys closest in Euclidean distance and attends over
// those (values gathered at the same indices).

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "tpc/tensor.hpp"

namespace tpc {

enum class AttnScale { sqrt_d, d_literal };

template <typename Scalar>
Scalar attention_scale(Index head_dim, AttnScale mode) {
  return mode == AttnScale::sqrt_d ? std::sqrt(static_cast<Scalar>(head_dim)) : static_cast<Scalar>(head_dim);
}

/// Per-query neighbor lists in ascending key order. Value indices coincide
/// with key indices.
struct SparseAttnPlan {
  std::vector<std::vector<Index>> keys;
  Index kappa_effective = 0;
  Index key_count = 0;
};

namespace detail {
template <typename Scalar>
void softmax_rows_inplace(Matrix<Scalar>& m) {
  m = (m.colwise() - m.rowwise().maxCoeff()).array().exp().matrix();
  m.array().colwise() /= m.rowwise().sum().array();
}
}  // namespace detail

/// softmax(Q K^T / s) V. `weights`, when given, receives the attention matrix.
template <typename Scalar>
Matrix<Scalar> dense_attention(const Matrix<Scalar>& q, const Matrix<Scalar>& k, const Matrix<Scalar>& v,
                               AttnScale mode, Matrix<Scalar>* weights = nullptr) {
  if (q.cols() != k.cols() || k.rows() != v.rows() || k.rows() == 0) {
    throw DimensionError("dense_attention: incompatible Q/K/V shapes");
  }
  const Scalar s = attention_scale<Scalar>(q.cols(), mode);
  Matrix<Scalar> a = (q * k.transpose()) / s;
  detail::softmax_rows_inplace(a);
  auto& fc = flop_counter();
  fc.attention += static_cast<std::uint64_t>(q.rows() * k.rows() * (q.cols() + v.cols()) + 3 * q.rows() * k.rows());
  Matrix<Scalar> out = a * v;
  if (weights != nullptr) *weights = std::move(a);
  return out;
}

/// Indices of the min(kappa, n) keys nearest to `query`, nearest first; ties
/// resolve to the lower index.
template <typename Scalar>
std::vector<Index> select_topk(const Eigen::Ref<const Vector<Scalar>>& query, const Matrix<Scalar>& keys, Index kappa) {
  if (kappa < 1) throw ContractError("select_topk: kappa must be >= 1");
  if (query.size() != keys.cols()) throw DimensionError("select_topk: query/key width mismatch");
  const Index n = keys.rows();
  const Index take = std::min(kappa, n);
  flop_counter().selection += static_cast<std::uint64_t>(n * keys.cols());
  std::vector<std::pair<Scalar, Index>> dist(static_cast<std::size_t>(n));
  for (Index j = 0; j < n; ++j) {
    dist[static_cast<std::size_t>(j)] = {(keys.row(j).transpose() - query).squaredNorm(), j};
  }
  std::partial_sort(dist.begin(), dist.begin() + take, dist.end());
  std::vector<Index> out(static_cast<std::size_t>(take));
  for (Index i = 0; i < take; ++i) out[static_cast<std::size_t>(i)] = dist[static_cast<std::size_t>(i)].second;
  return out;
}

/// Neighbor lists for every query row. `scores`, when given, must hold
/// Q K^T; distances are then ranked as |k|^2 - 2 q.k, which orders keys the
/// same way as the full squared distance.
template <typename Scalar>
SparseAttnPlan build_plan(const Matrix<Scalar>& q, const Matrix<Scalar>& k, Index kappa,
                          const Matrix<Scalar>* scores = nullptr) {
  if (kappa < 1) throw ContractError("build_plan: kappa must be >= 1");
  if (q.cols() != k.cols()) throw DimensionError("build_plan: query/key width mismatch");
  SparseAttnPlan plan;
  plan.key_count = k.rows();
  plan.kappa_effective = std::min(kappa, k.rows());
  plan.keys.reserve(static_cast<std::size_t>(q.rows()));
  if (scores == nullptr) {
    for (Index i = 0; i < q.rows(); ++i) {
      plan.keys.push_back(select_topk<Scalar>(q.row(i).transpose(), k, kappa));
      std::sort(plan.keys.back().begin(), plan.keys.back().end());
    }
    return plan;
  }
  if (scores->rows() != q.rows() || scores->cols() != k.rows()) throw DimensionError("build_plan: score shape mismatch");
  const Index m = k.rows();
  const Index take = plan.kappa_effective;
  flop_counter().selection += static_cast<std::uint64_t>(q.rows() * m + m * k.cols());
  const Vector<Scalar> key_norms = k.rowwise().squaredNorm();
  std::vector<std::pair<Scalar, Index>> dist(static_cast<std::size_t>(m));
  std::vector<char> chosen(static_cast<std::size_t>(m));
  for (Index i = 0; i < q.rows(); ++i) {
    for (Index j = 0; j < m; ++j) dist[static_cast<std::size_t>(j)] = {key_norms(j) - Scalar(2) * (*scores)(i, j), j};
    std::nth_element(dist.begin(), dist.begin() + (take - 1), dist.end());
    std::fill(chosen.begin(), chosen.end(), 0);
    for (Index t = 0; t < take; ++t) chosen[static_cast<std::size_t>(dist[static_cast<std::size_t>(t)].second)] = 1;
    std::vector<Index> sel;
    sel.reserve(static_cast<std::size_t>(take));
    for (Index j = 0; j < m; ++j) {
      if (chosen[static_cast<std::size_t>(j)]) sel.push_back(j);
    }
    plan.keys.push_back(std::move(sel));
  }
  return plan;
}

/// Row i: softmax(<q_i, k_j> / s over selected j) applied to the selected value
/// rows. `weights` (n x kappa_eff) receives the sparse attention rows.
template <typename Scalar>
Matrix<Scalar> sparse_attention(const Matrix<Scalar>& q, const Matrix<Scalar>& k, const Matrix<Scalar>& v,
                                const SparseAttnPlan& plan, AttnScale mode, Matrix<Scalar>* weights = nullptr) {
  if (static_cast<Index>(plan.keys.size()) != q.rows() || plan.key_count != k.rows() || k.rows() != v.rows() ||
      q.cols() != k.cols()) {
    throw ContractError("sparse_attention: plan was not built for these Q/K/V");
  }
  const Index n = q.rows();
  const Index kap = plan.kappa_effective;
  const Scalar s = attention_scale<Scalar>(q.cols(), mode);
  Matrix<Scalar> a(n, kap);
  for (Index i = 0; i < n; ++i) {
    const auto& sel = plan.keys[static_cast<std::size_t>(i)];
    if (static_cast<Index>(sel.size()) != kap) throw ContractError("sparse_attention: ragged plan");
    for (Index j = 0; j < kap; ++j) a(i, j) = q.row(i).dot(k.row(sel[static_cast<std::size_t>(j)])) / s;
  }
  detail::softmax_rows_inplace(a);
  Matrix<Scalar> out = Matrix<Scalar>::Zero(n, v.cols());
  for (Index i = 0; i < n; ++i) {
    const auto& sel = plan.keys[static_cast<std::size_t>(i)];
    for (Index j = 0; j < kap; ++j) out.row(i) += a(i, j) * v.row(sel[static_cast<std::size_t>(j)]);
  }
  flop_counter().attention += static_cast<std::uint64_t>(n * kap * (q.cols() + v.cols()) + 3 * n * kap);
  if (weights != nullptr) *weights = std::move(a);
  return out;
}

struct AttentionSpec {
  Index heads = 1;
  Index kappa = 0;  // <= 0 or >= key count: dense
  bool sparse_enabled = true;
  AttnScale scale = AttnScale::sqrt_d;
};

/// Multi-head attention over column blocks of Q, K, V ([n x heads*d]). Top-k
/// selection runs per head on that head's keys and is not differentiated.
/// The sparse case runs as a dense softmax with unselected keys at -inf, so
/// both cases share the backward pass.
template <typename Scalar>
Tensor<Scalar> multi_head_attention(const Tensor<Scalar>& q, const Tensor<Scalar>& k, const Tensor<Scalar>& v,
                                    const AttentionSpec& spec) {
  if (q.cols() != k.cols() || k.cols() != v.cols() || k.rows() != v.rows() || spec.heads < 1 ||
      q.cols() % spec.heads != 0) {
    throw DimensionError("multi_head_attention: Q " + q.shape_string() + " K " + k.shape_string() + " V " +
                         v.shape_string());
  }
  const Index n = q.rows();
  const Index m = k.rows();
  const Index dh = q.cols() / spec.heads;
  const bool sparse = spec.sparse_enabled && spec.kappa > 0 && spec.kappa < m;

  std::vector<Matrix<Scalar>> weights(static_cast<std::size_t>(spec.heads));
  Matrix<Scalar> out(n, q.cols());
  for (Index h = 0; h < spec.heads; ++h) {
    Matrix<Scalar> qh = q.value().middleCols(h * dh, dh);
    Matrix<Scalar> kh = k.value().middleCols(h * dh, dh);
    Matrix<Scalar> vh = v.value().middleCols(h * dh, dh);
    auto& p = weights[static_cast<std::size_t>(h)];
    if (sparse) {
      const Matrix<Scalar> scores = qh * kh.transpose();
      const SparseAttnPlan plan = build_plan<Scalar>(qh, kh, spec.kappa, &scores);
      const Scalar s = attention_scale<Scalar>(dh, spec.scale);
      p = Matrix<Scalar>::Constant(n, m, -std::numeric_limits<Scalar>::infinity());
      for (Index i = 0; i < n; ++i) {
        for (Index j : plan.keys[static_cast<std::size_t>(i)]) p(i, j) = scores(i, j) / s;
      }
      detail::softmax_rows_inplace(p);
      out.middleCols(h * dh, dh) = p * vh;
      flop_counter().attention += static_cast<std::uint64_t>(n * m * (dh + dh) + 3 * n * m);
    } else {
      out.middleCols(h * dh, dh) = dense_attention<Scalar>(qh, kh, vh, spec.scale, &p);
    }
  }
  const Scalar s = attention_scale<Scalar>(dh, spec.scale);
  return detail::finish<Scalar>("attention", std::move(out), {&q, &k, &v}, [&] {
    return [qn = q.node(), kn = k.node(), vn = v.node(), weights = std::move(weights), dh, s,
            heads = spec.heads](const Matrix<Scalar>& g) {
      const Index n = qn->value.rows();
      const Index m = kn->value.rows();
      Matrix<Scalar> dq = Matrix<Scalar>::Zero(n, qn->value.cols());
      Matrix<Scalar> dk = Matrix<Scalar>::Zero(m, kn->value.cols());
      Matrix<Scalar> dv = Matrix<Scalar>::Zero(m, vn->value.cols());
      for (Index h = 0; h < heads; ++h) {
        const Matrix<Scalar>& p = weights[static_cast<std::size_t>(h)];
        Matrix<Scalar> qh = qn->value.middleCols(h * dh, dh);
        Matrix<Scalar> kh = kn->value.middleCols(h * dh, dh);
        Matrix<Scalar> vh = vn->value.middleCols(h * dh, dh);
        Matrix<Scalar> gh = g.middleCols(h * dh, dh);
        dv.middleCols(h * dh, dh) += p.transpose() * gh;
        Matrix<Scalar> dp = gh * vh.transpose();
        Matrix<Scalar> ds = p.cwiseProduct(dp);
        ds -= p.cwiseProduct(ds.rowwise().sum().replicate(1, m));
        ds /= s;
        dq.middleCols(h * dh, dh) += ds * kh;
        dk.middleCols(h * dh, dh) += ds.transpose() * qh;
      }
      detail::accumulate<Scalar>(qn, dq);
      detail::accumulate<Scalar>(kn, dk);
      detail::accumulate<Scalar>(vn, dv);
    };
  });
}

}  // namespace tpc
