// SPDX-FileCopyrightText: 2026 mms contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Reverse-mode autodiff over a flat tape.
//
// Ops are free functions taking an optional Tape*. With a tape they record
// a backward closure; with nullptr they are plain evaluation. An input
// participates in the backward pass iff it was produced by watch() or by a
// recorded op of the *same* tape; anything else (fresh constants, tensors
// from an older tape) contributes no gradient. Watching the same parameter
// once and reusing the returned tensor in several subexpressions is the
// supported way to share weights: gradients accumulate into the single
// leaf node.
//
// backward() runs one reverse sweep, visiting each node at most once, and
// returns gradients for leaves only. Intermediate buffers are freed as the
// sweep passes them.

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mms/errors.hpp"
#include "mms/tensor.hpp"

namespace mms {

namespace detail {

inline std::atomic<std::uint64_t> g_tape_counter{0};

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using MMap = Eigen::Map<RowMat>;

// C[m,n] (+)= A[m,k] * B[k,n]
inline void gemm_nn(int m, int k, int n, const double* A, const double* B,
                    double* C, bool acc) {
  CMap a(A, m, k), b(B, k, n);
  MMap c(C, m, n);
  if (acc)
    c.noalias() += a * b;
  else
    c.noalias() = a * b;
}

// C[m,n] (+)= A[m,k] * B[n,k]^T
inline void gemm_nt(int m, int n, int k, const double* A, const double* B,
                    double* C, bool acc) {
  CMap a(A, m, k), b(B, n, k);
  MMap c(C, m, n);
  if (acc)
    c.noalias() += a * b.transpose();
  else
    c.noalias() = a * b.transpose();
}

// C[m,n] (+)= A[k,m]^T * B[k,n]
inline void gemm_tn(int m, int k, int n, const double* A, const double* B,
                    double* C, bool acc) {
  CMap a(A, k, m), b(B, k, n);
  MMap c(C, m, n);
  if (acc)
    c.noalias() += a.transpose() * b;
  else
    c.noalias() = a.transpose() * b;
}

}  // namespace detail

class Tape;

namespace detail {
inline bool tracked(const Tensor& t, const Tape* tape);
}

// Gradients keyed by leaf node. Lookup goes through the watched tensor.
class Gradients {
 public:
  bool contains(const Tensor& leaf) const {
    return leaf.node >= 0 && grads_.count(leaf.node) > 0;
  }

  const std::vector<double>& at(const Tensor& leaf) const {
    if (leaf.node < 0) throw IndexError("Gradients::at: tensor is not a leaf");
    auto it = grads_.find(leaf.node);
    if (it == grads_.end())
      throw IndexError("Gradients::at: no gradient recorded for this leaf");
    return it->second;
  }

  // Leaves the loss never touched have an all-zero gradient.
  std::vector<double> at_or_zeros(const Tensor& leaf) const {
    if (leaf.node >= 0) {
      auto it = grads_.find(leaf.node);
      if (it != grads_.end()) return it->second;
    }
    return std::vector<double>(leaf.size(), 0.0);
  }

  std::size_t size() const { return grads_.size(); }

 private:
  friend class Tape;
  std::unordered_map<int, std::vector<double>> grads_;
};

class Tape {
 public:
  using ParentGradFn = std::function<double*(int)>;
  using BackFn = std::function<void(const double*, const ParentGradFn&)>;

  Tape() : id_(++detail::g_tape_counter) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::uint64_t id() const { return id_; }
  std::size_t size() const { return nodes_.size(); }

  // Register a gradient leaf. Shares the input's storage; only the tape
  // bookkeeping fields differ on the returned tensor.
  Tensor watch(Tensor t) {
    nodes_.push_back(Node{{}, t.size(), nullptr, true});
    t.node = int(nodes_.size()) - 1;
    t.tape_id = id_;
    t.requires_grad = true;
    return t;
  }

  // Register an op output. parents holds leaf/op node ids, -1 for inputs
  // that are constants (their slot gets a null grad pointer in back()).
  int record(std::size_t out_size, std::vector<int> parents, BackFn back) {
    for (int p : parents)
      if (p >= int(nodes_.size()))
        throw ContractViolation("Tape::record: parent id from the future");
    nodes_.push_back(Node{std::move(parents), out_size, std::move(back), false});
    return int(nodes_.size()) - 1;
  }

  // Reverse sweep from a scalar loss. Each node is visited exactly once,
  // in reverse recording order; nodes outside the loss's cone simply have
  // no gradient buffer and propagate nothing.
  Gradients backward(const Tensor& loss) {
    if (loss.size() != 1)
      throw InvalidLoss("backward: loss must be a scalar tensor");
    if (loss.node < 0 || loss.tape_id != id_ ||
        loss.node >= int(nodes_.size()))
      throw InvalidLoss("backward: loss is not tracked by this tape");

    std::vector<std::vector<double>> grads(nodes_.size());
    grads[std::size_t(loss.node)].assign(1, 1.0);

    for (int i = int(nodes_.size()) - 1; i >= 0; --i) {
      auto& g = grads[std::size_t(i)];
      if (g.empty()) continue;
      const Node& node = nodes_[std::size_t(i)];
      if (node.back) {
        ParentGradFn parent_grad = [&](int slot) -> double* {
          const int p = node.parents[std::size_t(slot)];
          if (p < 0) return nullptr;
          auto& pg = grads[std::size_t(p)];
          if (pg.empty()) pg.assign(nodes_[std::size_t(p)].size, 0.0);
          return pg.data();
        };
        node.back(g.data(), parent_grad);
      }
      if (!node.leaf) {
        g.clear();
        g.shrink_to_fit();
      }
    }

    Gradients out;
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (nodes_[i].leaf && !grads[i].empty())
        out.grads_.emplace(int(i), std::move(grads[i]));
    return out;
  }

 private:
  struct Node {
    std::vector<int> parents;
    std::size_t size;
    BackFn back;
    bool leaf;
  };

  std::uint64_t id_;
  std::vector<Node> nodes_;
};

namespace detail {

inline bool tracked(const Tensor& t, const Tape* tape) {
  return tape != nullptr && t.node >= 0 && t.tape_id == tape->id();
}

inline int parent_of(const Tensor& t, const Tape* tape) {
  return tracked(t, tape) ? t.node : -1;
}

inline void mark(Tensor& out, Tape* tape, int node) {
  out.node = node;
  out.tape_id = tape->id();
  out.requires_grad = true;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Ops
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape = nullptr) {
  if (a.rank() != 2 || b.rank() != 2)
    throw ShapeError("matmul: operands must be rank-2, got " + a.shape_str() +
                     " x " + b.shape_str());
  if (a.dim(1) != b.dim(0))
    throw ShapeError("matmul: inner dims disagree, " + a.shape_str() + " x " +
                     b.shape_str());
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n}, std::vector<double>(std::size_t(m) * std::size_t(n)));
  detail::gemm_nn(m, k, n, a.data(), b.data(), out.mutable_data(), false);

  if (detail::tracked(a, tape) || detail::tracked(b, tape)) {
    auto as = a.storage();
    auto bs = b.storage();
    const int id = tape->record(
        out.size(), {detail::parent_of(a, tape), detail::parent_of(b, tape)},
        [m, k, n, as, bs](const double* g, const Tape::ParentGradFn& pg) {
          if (double* ga = pg(0)) detail::gemm_nt(m, k, n, g, bs->data(), ga, true);
          if (double* gb = pg(1)) detail::gemm_tn(k, m, n, as->data(), g, gb, true);
        });
    detail::mark(out, tape, id);
  }
  return out;
}

namespace detail {

enum class EwKind { add, sub, mul };

inline Tensor elementwise(const Tensor& a, const Tensor& b, EwKind kind,
                          Tape* tape) {
  if (!a.same_shape(b))
    throw ShapeError("elementwise: shape mismatch, " + a.shape_str() + " vs " +
                     b.shape_str());
  const std::size_t n = a.size();
  std::vector<double> d(n);
  const double* pa = a.data();
  const double* pb = b.data();
  switch (kind) {
    case EwKind::add:
      for (std::size_t i = 0; i < n; ++i) d[i] = pa[i] + pb[i];
      break;
    case EwKind::sub:
      for (std::size_t i = 0; i < n; ++i) d[i] = pa[i] - pb[i];
      break;
    case EwKind::mul:
      for (std::size_t i = 0; i < n; ++i) d[i] = pa[i] * pb[i];
      break;
  }
  Tensor out(a.shape(), std::move(d));

  if (tracked(a, tape) || tracked(b, tape)) {
    auto as = a.storage();
    auto bs = b.storage();
    const int id = tape->record(
        n, {parent_of(a, tape), parent_of(b, tape)},
        [n, kind, as, bs](const double* g, const Tape::ParentGradFn& pg) {
          double* ga = pg(0);
          double* gb = pg(1);
          switch (kind) {
            case EwKind::add:
              if (ga) for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
              if (gb) for (std::size_t i = 0; i < n; ++i) gb[i] += g[i];
              break;
            case EwKind::sub:
              if (ga) for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
              if (gb) for (std::size_t i = 0; i < n; ++i) gb[i] -= g[i];
              break;
            case EwKind::mul: {
              const double* pa = as->data();
              const double* pb = bs->data();
              if (ga) for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * pb[i];
              if (gb) for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * pa[i];
              break;
            }
          }
        });
    mark(out, tape, id);
  }
  return out;
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b, Tape* tape = nullptr) {
  return detail::elementwise(a, b, detail::EwKind::add, tape);
}
inline Tensor sub(const Tensor& a, const Tensor& b, Tape* tape = nullptr) {
  return detail::elementwise(a, b, detail::EwKind::sub, tape);
}
inline Tensor mul(const Tensor& a, const Tensor& b, Tape* tape = nullptr) {
  return detail::elementwise(a, b, detail::EwKind::mul, tape);
}

inline Tensor scale(const Tensor& a, double c, Tape* tape = nullptr) {
  const std::size_t n = a.size();
  std::vector<double> d(n);
  const double* pa = a.data();
  for (std::size_t i = 0; i < n; ++i) d[i] = c * pa[i];
  Tensor out(a.shape(), std::move(d));
  if (detail::tracked(a, tape)) {
    const int id = tape->record(
        n, {a.node}, [n, c](const double* g, const Tape::ParentGradFn& pg) {
          if (double* ga = pg(0))
            for (std::size_t i = 0; i < n; ++i) ga[i] += c * g[i];
        });
    detail::mark(out, tape, id);
  }
  return out;
}

// out[r, :] = x[r, :] + bias. bias may be rank-1 [d] or rank-2 [1, d].
inline Tensor add_row_bias(const Tensor& x, const Tensor& bias,
                           Tape* tape = nullptr) {
  if (x.rank() != 2) throw ShapeError("add_row_bias: x must be rank-2");
  const int n = x.dim(0), d = x.dim(1);
  if (int(bias.size()) != d || bias.rows() != 1)
    throw ShapeError("add_row_bias: bias " + bias.shape_str() +
                     " does not match row width " + std::to_string(d));
  std::vector<double> out(std::size_t(n) * std::size_t(d));
  const double* px = x.data();
  const double* pb = bias.data();
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < d; ++c)
      out[std::size_t(r) * d + c] = px[std::size_t(r) * d + c] + pb[c];
  Tensor res(x.shape(), std::move(out));

  if (detail::tracked(x, tape) || detail::tracked(bias, tape)) {
    const int id = tape->record(
        res.size(), {detail::parent_of(x, tape), detail::parent_of(bias, tape)},
        [n, d](const double* g, const Tape::ParentGradFn& pg) {
          if (double* gx = pg(0)) {
            const std::size_t total = std::size_t(n) * std::size_t(d);
            for (std::size_t i = 0; i < total; ++i) gx[i] += g[i];
          }
          if (double* gb = pg(1)) {
            for (int r = 0; r < n; ++r)
              for (int c = 0; c < d; ++c) gb[c] += g[std::size_t(r) * d + c];
          }
        });
    detail::mark(res, tape, id);
  }
  return res;
}

// Row-wise layer norm with learned affine. Population variance (denominator
// d), eps inside the sqrt.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma,
                         const Tensor& beta, double eps = 1e-5,
                         Tape* tape = nullptr) {
  if (x.rank() != 2) throw ShapeError("layer_norm: x must be rank-2");
  const int n = x.dim(0), d = x.dim(1);
  if (int(gamma.size()) != d || int(beta.size()) != d)
    throw ShapeError("layer_norm: affine params must have width " +
                     std::to_string(d));
  if (!(eps > 0)) throw RangeError("layer_norm: eps must be positive");

  auto xhat = std::make_shared<std::vector<double>>(std::size_t(n) * d);
  auto rstd = std::make_shared<std::vector<double>>(std::size_t(n));
  std::vector<double> out(std::size_t(n) * d);
  const double* px = x.data();
  const double* pg = gamma.data();
  const double* pb = beta.data();
  for (int r = 0; r < n; ++r) {
    const double* row = px + std::size_t(r) * d;
    double mean = 0;
    for (int c = 0; c < d; ++c) mean += row[c];
    mean /= d;
    double var = 0;
    for (int c = 0; c < d; ++c) {
      const double t = row[c] - mean;
      var += t * t;
    }
    var /= d;
    const double rs = 1.0 / std::sqrt(var + eps);
    (*rstd)[std::size_t(r)] = rs;
    for (int c = 0; c < d; ++c) {
      const double h = (row[c] - mean) * rs;
      (*xhat)[std::size_t(r) * d + c] = h;
      out[std::size_t(r) * d + c] = pg[c] * h + pb[c];
    }
  }
  Tensor res(x.shape(), std::move(out));

  if (detail::tracked(x, tape) || detail::tracked(gamma, tape) ||
      detail::tracked(beta, tape)) {
    auto gs = gamma.storage();
    const int id = tape->record(
        res.size(),
        {detail::parent_of(x, tape), detail::parent_of(gamma, tape),
         detail::parent_of(beta, tape)},
        [n, d, xhat, rstd, gs](const double* g, const Tape::ParentGradFn& pg) {
          double* gx = pg(0);
          double* gg = pg(1);
          double* gb = pg(2);
          const double* gam = gs->data();
          for (int r = 0; r < n; ++r) {
            const double* grow = g + std::size_t(r) * d;
            const double* hrow = xhat->data() + std::size_t(r) * d;
            if (gg || gb) {
              for (int c = 0; c < d; ++c) {
                if (gg) gg[c] += grow[c] * hrow[c];
                if (gb) gb[c] += grow[c];
              }
            }
            if (gx) {
              // dL/dx = rstd * (dh - mean(dh) - xhat * mean(dh * xhat))
              double s1 = 0, s2 = 0;
              for (int c = 0; c < d; ++c) {
                const double dh = grow[c] * gam[c];
                s1 += dh;
                s2 += dh * hrow[c];
              }
              s1 /= d;
              s2 /= d;
              const double rs = (*rstd)[std::size_t(r)];
              double* gxrow = gx + std::size_t(r) * d;
              for (int c = 0; c < d; ++c) {
                const double dh = grow[c] * gam[c];
                gxrow[c] += rs * (dh - s1 - hrow[c] * s2);
              }
            }
          }
        });
    detail::mark(res, tape, id);
  }
  return res;
}

// Tanh-approximated GELU. The leading coefficient is the documented
// constant 0.7978845608 (~= sqrt(2/pi)).
inline constexpr double kGeluCoeff = 0.7978845608;
inline constexpr double kGeluCubic = 0.044715;

inline Tensor gelu(const Tensor& x, Tape* tape = nullptr) {
  const std::size_t n = x.size();
  auto th = std::make_shared<std::vector<double>>(n);
  std::vector<double> out(n);
  const double* px = x.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double v = px[i];
    const double t = std::tanh(kGeluCoeff * (v + kGeluCubic * v * v * v));
    (*th)[i] = t;
    out[i] = 0.5 * v * (1.0 + t);
  }
  Tensor res(x.shape(), std::move(out));
  if (detail::tracked(x, tape)) {
    auto xs = x.storage();
    const int id = tape->record(
        n, {x.node},
        [n, th, xs](const double* g, const Tape::ParentGradFn& pg) {
          double* gx = pg(0);
          if (!gx) return;
          const double* px = xs->data();
          for (std::size_t i = 0; i < n; ++i) {
            const double v = px[i];
            const double t = (*th)[i];
            const double du = kGeluCoeff * (1.0 + 3.0 * kGeluCubic * v * v);
            gx[i] += g[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du);
          }
        });
    detail::mark(res, tape, id);
  }
  return res;
}

// Row-wise softmax with max subtraction.
inline Tensor softmax_rows(const Tensor& x, Tape* tape = nullptr) {
  if (x.rank() != 2) throw ShapeError("softmax_rows: x must be rank-2");
  const int n = x.dim(0), d = x.dim(1);
  auto y = std::make_shared<std::vector<double>>(std::size_t(n) * d);
  const double* px = x.data();
  for (int r = 0; r < n; ++r) {
    const double* row = px + std::size_t(r) * d;
    double m = row[0];
    for (int c = 1; c < d; ++c) m = std::max(m, row[c]);
    double z = 0;
    for (int c = 0; c < d; ++c) {
      const double e = std::exp(row[c] - m);
      (*y)[std::size_t(r) * d + c] = e;
      z += e;
    }
    const double inv = 1.0 / z;
    for (int c = 0; c < d; ++c) (*y)[std::size_t(r) * d + c] *= inv;
  }
  Tensor res(x.shape(), std::vector<double>(*y));
  if (detail::tracked(x, tape)) {
    const int id = tape->record(
        res.size(), {x.node},
        [n, d, y](const double* g, const Tape::ParentGradFn& pg) {
          double* gx = pg(0);
          if (!gx) return;
          for (int r = 0; r < n; ++r) {
            const double* yr = y->data() + std::size_t(r) * d;
            const double* gr = g + std::size_t(r) * d;
            double dot = 0;
            for (int c = 0; c < d; ++c) dot += gr[c] * yr[c];
            double* gxr = gx + std::size_t(r) * d;
            for (int c = 0; c < d; ++c) gxr[c] += yr[c] * (gr[c] - dot);
          }
        });
    detail::mark(res, tape, id);
  }
  return res;
}

// out[r, :] = x[idx[r], :]. Duplicate indices are fine.
inline Tensor gather_rows(const Tensor& x, const std::vector<int>& idx,
                          Tape* tape = nullptr) {
  if (x.rank() != 2) throw ShapeError("gather_rows: x must be rank-2");
  if (idx.empty()) throw ShapeError("gather_rows: empty index list");
  const int n = x.dim(0), d = x.dim(1);
  for (int i : idx)
    if (i < 0 || i >= n)
      throw IndexError("gather_rows: index " + std::to_string(i) +
                       " outside [0, " + std::to_string(n) + ")");
  const int k = int(idx.size());
  std::vector<double> out(std::size_t(k) * d);
  const double* px = x.data();
  for (int r = 0; r < k; ++r)
    std::copy_n(px + std::size_t(idx[std::size_t(r)]) * d, std::size_t(d),
                out.begin() + std::size_t(r) * d);
  Tensor res({k, d}, std::move(out));
  if (detail::tracked(x, tape)) {
    const int id = tape->record(
        res.size(), {x.node},
        [idx, d](const double* g, const Tape::ParentGradFn& pg) {
          double* gx = pg(0);
          if (!gx) return;
          for (std::size_t r = 0; r < idx.size(); ++r) {
            const double* gr = g + r * std::size_t(d);
            double* dst = gx + std::size_t(idx[r]) * d;
            for (int c = 0; c < d; ++c) dst[c] += gr[c];
          }
        });
    detail::mark(res, tape, id);
  }
  return res;
}

// Scatter-add: out has out_rows rows, out[idx[r], :] += x[r, :], the rest
// stay zero. With unique indices this is the inverse layout of gather_rows.
inline Tensor scatter_rows(const Tensor& x, const std::vector<int>& idx,
                           int out_rows, Tape* tape = nullptr) {
  if (x.rank() != 2) throw ShapeError("scatter_rows: x must be rank-2");
  if (int(idx.size()) != x.dim(0))
    throw ShapeError("scatter_rows: index count must equal x rows");
  const int d = x.dim(1);
  if (out_rows < 1) throw ShapeError("scatter_rows: out_rows must be >= 1");
  for (int i : idx)
    if (i < 0 || i >= out_rows)
      throw IndexError("scatter_rows: index " + std::to_string(i) +
                       " outside [0, " + std::to_string(out_rows) + ")");
  std::vector<double> out(std::size_t(out_rows) * d, 0.0);
  const double* px = x.data();
  for (std::size_t r = 0; r < idx.size(); ++r) {
    double* dst = out.data() + std::size_t(idx[r]) * d;
    const double* src = px + r * std::size_t(d);
    for (int c = 0; c < d; ++c) dst[c] += src[c];
  }
  Tensor res({out_rows, d}, std::move(out));
  if (detail::tracked(x, tape)) {
    const int id = tape->record(
        res.size(), {x.node},
        [idx, d](const double* g, const Tape::ParentGradFn& pg) {
          double* gx = pg(0);
          if (!gx) return;
          for (std::size_t r = 0; r < idx.size(); ++r) {
            const double* src = g + std::size_t(idx[r]) * d;
            double* dst = gx + r * std::size_t(d);
            for (int c = 0; c < d; ++c) dst[c] += src[c];
          }
        });
    detail::mark(res, tape, id);
  }
  return res;
}

inline Tensor transpose(const Tensor& x, Tape* tape = nullptr) {
  if (x.rank() != 2) throw ShapeError("transpose: x must be rank-2");
  const int n = x.dim(0), d = x.dim(1);
  std::vector<double> out(std::size_t(n) * d);
  const double* px = x.data();
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < d; ++c)
      out[std::size_t(c) * n + r] = px[std::size_t(r) * d + c];
  Tensor res({d, n}, std::move(out));
  if (detail::tracked(x, tape)) {
    const int id = tape->record(
        res.size(), {x.node},
        [n, d](const double* g, const Tape::ParentGradFn& pg) {
          double* gx = pg(0);
          if (!gx) return;
          for (int c = 0; c < d; ++c)
            for (int r = 0; r < n; ++r)
              gx[std::size_t(r) * d + c] += g[std::size_t(c) * n + r];
        });
    detail::mark(res, tape, id);
  }
  return res;
}

// Columns [c0, c1) of a rank-2 tensor, or elements [c0, c1) of a rank-1.
inline Tensor slice_cols(const Tensor& x, int c0, int c1,
                         Tape* tape = nullptr) {
  if (x.rank() != 1 && x.rank() != 2)
    throw ShapeError("slice_cols: rank must be 1 or 2");
  const int n = x.rank() == 2 ? x.dim(0) : 1;
  const int d = x.rank() == 2 ? x.dim(1) : x.dim(0);
  if (c0 < 0 || c1 > d || c0 >= c1)
    throw IndexError("slice_cols: bad range [" + std::to_string(c0) + ", " +
                     std::to_string(c1) + ") for width " + std::to_string(d));
  const int w = c1 - c0;
  std::vector<double> out(std::size_t(n) * w);
  const double* px = x.data();
  for (int r = 0; r < n; ++r)
    std::copy_n(px + std::size_t(r) * d + c0, std::size_t(w),
                out.begin() + std::size_t(r) * w);
  Tensor res(x.rank() == 2 ? std::vector<int>{n, w} : std::vector<int>{w},
             std::move(out));
  if (detail::tracked(x, tape)) {
    const int id = tape->record(
        res.size(), {x.node},
        [n, d, c0, w](const double* g, const Tape::ParentGradFn& pg) {
          double* gx = pg(0);
          if (!gx) return;
          for (int r = 0; r < n; ++r)
            for (int c = 0; c < w; ++c)
              gx[std::size_t(r) * d + c0 + c] += g[std::size_t(r) * w + c];
        });
    detail::mark(res, tape, id);
  }
  return res;
}

inline Tensor concat_rows(const Tensor& a, const Tensor& b,
                          Tape* tape = nullptr) {
  if (a.rank() != 2 || b.rank() != 2)
    throw ShapeError("concat_rows: operands must be rank-2");
  if (a.dim(1) != b.dim(1))
    throw ShapeError("concat_rows: column widths disagree, " + a.shape_str() +
                     " vs " + b.shape_str());
  const int na = a.dim(0), nb = b.dim(0), d = a.dim(1);
  std::vector<double> out;
  out.reserve(std::size_t(na + nb) * d);
  out.insert(out.end(), a.data(), a.data() + a.size());
  out.insert(out.end(), b.data(), b.data() + b.size());
  Tensor res({na + nb, d}, std::move(out));
  if (detail::tracked(a, tape) || detail::tracked(b, tape)) {
    const int id = tape->record(
        res.size(), {detail::parent_of(a, tape), detail::parent_of(b, tape)},
        [na, nb, d](const double* g, const Tape::ParentGradFn& pg) {
          if (double* ga = pg(0)) {
            const std::size_t n = std::size_t(na) * d;
            for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
          }
          if (double* gb = pg(1)) {
            const std::size_t off = std::size_t(na) * d;
            const std::size_t n = std::size_t(nb) * d;
            for (std::size_t i = 0; i < n; ++i) gb[i] += g[off + i];
          }
        });
    detail::mark(res, tape, id);
  }
  return res;
}

// Same data, new dims. Storage is shared; gradient passes through.
inline Tensor reshape(const Tensor& x, std::vector<int> new_shape,
                      Tape* tape = nullptr) {
  Tensor out(std::move(new_shape), x.storage());
  if (out.size() != x.size())
    throw ShapeError("reshape: element count changed, " + x.shape_str() +
                     " -> " + out.shape_str());
  if (detail::tracked(x, tape)) {
    const std::size_t n = x.size();
    const int id = tape->record(
        n, {x.node}, [n](const double* g, const Tape::ParentGradFn& pg) {
          if (double* gx = pg(0))
            for (std::size_t i = 0; i < n; ++i) gx[i] += g[i];
        });
    detail::mark(out, tape, id);
  }
  return out;
}

inline Tensor sum_all(const Tensor& x, Tape* tape = nullptr) {
  double s = 0;
  const double* px = x.data();
  for (std::size_t i = 0; i < x.size(); ++i) s += px[i];
  Tensor res = Tensor::scalar(s);
  if (detail::tracked(x, tape)) {
    const std::size_t n = x.size();
    const int id = tape->record(
        1, {x.node}, [n](const double* g, const Tape::ParentGradFn& pg) {
          if (double* gx = pg(0))
            for (std::size_t i = 0; i < n; ++i) gx[i] += g[0];
        });
    detail::mark(res, tape, id);
  }
  return res;
}

// Mean softmax cross-entropy over rows; targets are class indices.
inline Tensor softmax_xent_rows(const Tensor& logits,
                                const std::vector<int>& targets,
                                Tape* tape = nullptr) {
  if (logits.rank() != 2) throw ShapeError("softmax_xent_rows: rank-2 only");
  const int n = logits.dim(0), c = logits.dim(1);
  if (int(targets.size()) != n)
    throw ShapeError("softmax_xent_rows: one target per row required");
  for (int t : targets)
    if (t < 0 || t >= c) throw IndexError("softmax_xent_rows: target class");
  auto probs = std::make_shared<std::vector<double>>(std::size_t(n) * c);
  const double* px = logits.data();
  double loss = 0;
  for (int r = 0; r < n; ++r) {
    const double* row = px + std::size_t(r) * c;
    double m = row[0];
    for (int j = 1; j < c; ++j) m = std::max(m, row[j]);
    double z = 0;
    for (int j = 0; j < c; ++j) z += std::exp(row[j] - m);
    const double lse = m + std::log(z);
    loss += lse - row[targets[std::size_t(r)]];
    for (int j = 0; j < c; ++j)
      (*probs)[std::size_t(r) * c + j] = std::exp(row[j] - lse);
  }
  Tensor res = Tensor::scalar(loss / n);
  if (detail::tracked(logits, tape)) {
    const int id = tape->record(
        1, {logits.node},
        [n, c, probs, targets](const double* g, const Tape::ParentGradFn& pg) {
          double* gx = pg(0);
          if (!gx) return;
          const double k = g[0] / n;
          for (int r = 0; r < n; ++r)
            for (int j = 0; j < c; ++j)
              gx[std::size_t(r) * c + j] +=
                  k * ((*probs)[std::size_t(r) * c + j] -
                       (j == targets[std::size_t(r)] ? 1.0 : 0.0));
        });
    detail::mark(res, tape, id);
  }
  return res;
}

inline Gradients backward(Tape& tape, const Tensor& loss) {
  return tape.backward(loss);
}

// ---------------------------------------------------------------------------
// Finite-difference oracle
// ---------------------------------------------------------------------------

// Max over coordinates of |g_ad - g_fd| / max(1, |g_fd|), central
// differences. f must be scalar-valued and must route all op calls through
// the tape it is handed (nullptr during the difference evaluations).
using DiffFn = std::function<Tensor(const Tensor&, Tape*)>;

namespace detail {

inline std::vector<double> ad_gradient(const DiffFn& f, const Tensor& x) {
  Tape tape;
  Tensor xw = tape.watch(x);
  Tensor y = f(xw, &tape);
  if (y.size() != 1)
    throw InvalidLoss("finite_diff_check: f must return a scalar");
  Gradients g = tape.backward(y);
  return g.at_or_zeros(xw);
}

inline double fd_at(const DiffFn& f, const Tensor& x, std::size_t i,
                    double eps) {
  std::vector<double> xs = x.vec();
  const double orig = xs[i];
  xs[i] = orig + eps;
  const double fp = f(Tensor(x.shape(), xs), nullptr).at(0);
  xs[i] = orig - eps;
  const double fm = f(Tensor(x.shape(), xs), nullptr).at(0);
  return (fp - fm) / (2.0 * eps);
}

}  // namespace detail

inline double finite_diff_check(const DiffFn& f, const Tensor& x,
                                double eps = 1e-5) {
  if (!(eps >= 1e-7 && eps <= 1e-3))
    throw InvalidEps("finite_diff_check: eps must lie in [1e-7, 1e-3]");
  const std::vector<double> ga = detail::ad_gradient(f, x);
  double worst = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double gfd = detail::fd_at(f, x, i, eps);
    const double rel = std::abs(ga[i] - gfd) / std::max(1.0, std::abs(gfd));
    worst = std::max(worst, rel);
  }
  return worst;
}

// Same check restricted to chosen coordinates; for tensors too large to
// difference exhaustively.
inline double finite_diff_check_sampled(const DiffFn& f, const Tensor& x,
                                        const std::vector<std::size_t>& coords,
                                        double eps = 1e-5) {
  if (!(eps >= 1e-7 && eps <= 1e-3))
    throw InvalidEps("finite_diff_check: eps must lie in [1e-7, 1e-3]");
  if (coords.empty()) throw RangeError("finite_diff_check_sampled: no coords");
  for (std::size_t i : coords)
    if (i >= x.size()) throw IndexError("finite_diff_check_sampled: coord");
  const std::vector<double> ga = detail::ad_gradient(f, x);
  double worst = 0;
  for (std::size_t i : coords) {
    const double gfd = detail::fd_at(f, x, i, eps);
    const double rel = std::abs(ga[i] - gfd) / std::max(1.0, std::abs(gfd));
    worst = std::max(worst, rel);
  }
  return worst;
}

}  // namespace mms
