#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "g2p/errors.hpp"

namespace g2p {

// Dense row-major tensor of rank 1 or 2 holding 32- or 64-bit floats, with
// an optional gradient accumulator. Production code instantiates S = float;
// the finite-difference verification path instantiates S = double. Tensors
// are shared handles; all math lives on Tape, which records one backward
// closure per primitive op.
template <typename S>
class Tensor {
 public:
  struct Node {
    std::vector<int> shape;
    std::vector<S> value;
    std::vector<S> grad;  // empty until first accumulation
    bool needs_grad = false;
  };

  Tensor() = default;

  static Tensor leaf(std::vector<int> shape, std::vector<S> data,
                     bool requires_grad = false) {
    std::int64_t n = 1;
    for (int d : shape) {
      if (d < 0) fail(ErrorKind::dimension, "tensor extent must be nonnegative");
      n *= d;
    }
    if (n != static_cast<std::int64_t>(data.size()))
      fail(ErrorKind::dimension, "tensor data length does not match shape");
    Tensor t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = std::move(shape);
    t.node_->value = std::move(data);
    t.node_->needs_grad = requires_grad;
    return t;
  }

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    return leaf(std::move(shape), std::vector<S>(static_cast<std::size_t>(n), S{0}),
                requires_grad);
  }

  static Tensor scalar(S v) { return leaf({1}, {v}); }

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int extent(int axis) const { return node_->shape[static_cast<std::size_t>(axis)]; }
  std::size_t numel() const { return node_->value.size(); }
  std::vector<S>& data() { return node_->value; }
  const std::vector<S>& data() const { return node_->value; }
  bool requires_grad() const { return node_->needs_grad; }

  // Gradient accumulator; allocated zero-filled on first touch.
  std::vector<S>& grad() {
    if (node_->grad.empty()) node_->grad.assign(node_->value.size(), S{0});
    return node_->grad;
  }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() {
    if (!node_->grad.empty()) node_->grad.assign(node_->value.size(), S{0});
  }

  S item() const {
    if (numel() != 1) fail(ErrorKind::contract, "item() requires a one-element tensor");
    return node_->value[0];
  }

  std::shared_ptr<Node> node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

namespace detail {

inline std::string shape_str(const std::vector<int>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

template <typename S>
using MatMap =
    Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename S>
using CMatMap = Eigen::Map<
    const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename S>
using VecMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>>;
template <typename S>
using CVecMap = Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>>;

}  // namespace detail

// Records the forward computation as an ordered list of backward closures.
// backward() replays them once, in reverse, accumulating gradients
// additively into every tensor reachable from the loss. A tape and its
// tensors belong to one worker; frozen parameters may be shared read-only.
template <typename S>
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }
  std::size_t size() const { return ops_.size(); }

  // Opt-in debug mode: scan every op output for NaN/Inf (off by default).
  void set_check_finite(bool on) { check_finite_ = on; }

  void backward(const Tensor<S>& loss) {
    if (loss.numel() != 1)
      fail(ErrorKind::contract, "backward requires a scalar loss");
    auto n = loss.node();
    if (n->grad.empty()) n->grad.assign(1, S{0});
    n->grad[0] += S{1};
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
  }

  // ---- elementwise ----

  Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    require_same_shape(a, b, "add");
    Tensor<S> out = alloc_like(a);
    for (std::size_t i = 0; i < a.numel(); ++i)
      out.data()[i] = a.data()[i] + b.data()[i];
    finish("add", out, {a, b}, [an = a.node(), bn = b.node(), on = out.node()] {
      if (on->grad.empty()) return;  // output not on the loss path
      if (an->needs_grad) accumulate(an, on->grad, S{1});
      if (bn->needs_grad) accumulate(bn, on->grad, S{1});
    });
    return out;
  }

  Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
    require_same_shape(a, b, "sub");
    Tensor<S> out = alloc_like(a);
    for (std::size_t i = 0; i < a.numel(); ++i)
      out.data()[i] = a.data()[i] - b.data()[i];
    finish("sub", out, {a, b}, [an = a.node(), bn = b.node(), on = out.node()] {
      if (on->grad.empty()) return;
      if (an->needs_grad) accumulate(an, on->grad, S{1});
      if (bn->needs_grad) accumulate(bn, on->grad, S{-1});
    });
    return out;
  }

  Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    require_same_shape(a, b, "mul");
    Tensor<S> out = alloc_like(a);
    for (std::size_t i = 0; i < a.numel(); ++i)
      out.data()[i] = a.data()[i] * b.data()[i];
    finish("mul", out, {a, b}, [an = a.node(), bn = b.node(), on = out.node()] {
      if (on->grad.empty()) return;
      if (an->needs_grad) {
        ensure_grad(an);
        for (std::size_t i = 0; i < on->grad.size(); ++i)
          an->grad[i] += on->grad[i] * bn->value[i];
      }
      if (bn->needs_grad) {
        ensure_grad(bn);
        for (std::size_t i = 0; i < on->grad.size(); ++i)
          bn->grad[i] += on->grad[i] * an->value[i];
      }
    });
    return out;
  }

  Tensor<S> scale(const Tensor<S>& a, S k) {
    Tensor<S> out = alloc_like(a);
    for (std::size_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] * k;
    finish("scale", out, {a}, [an = a.node(), on = out.node(), k] {
      if (on->grad.empty()) return;
      if (an->needs_grad) accumulate(an, on->grad, k);
    });
    return out;
  }

  Tensor<S> tanh(const Tensor<S>& a) {
    Tensor<S> out = alloc_like(a);
    for (std::size_t i = 0; i < a.numel(); ++i)
      out.data()[i] = std::tanh(a.data()[i]);
    finish("tanh", out, {a}, [an = a.node(), on = out.node()] {
      if (on->grad.empty()) return;
      if (!an->needs_grad) return;
      ensure_grad(an);
      for (std::size_t i = 0; i < on->grad.size(); ++i)
        an->grad[i] += on->grad[i] * (S{1} - on->value[i] * on->value[i]);
    });
    return out;
  }

  Tensor<S> sigmoid(const Tensor<S>& a) {
    Tensor<S> out = alloc_like(a);
    for (std::size_t i = 0; i < a.numel(); ++i) {
      S x = a.data()[i];
      // Evaluate on the negative side only; exp never overflows this way.
      out.data()[i] = x >= S{0} ? S{1} / (S{1} + std::exp(-x))
                                : std::exp(x) / (S{1} + std::exp(x));
    }
    finish("sigmoid", out, {a}, [an = a.node(), on = out.node()] {
      if (on->grad.empty()) return;
      if (!an->needs_grad) return;
      ensure_grad(an);
      for (std::size_t i = 0; i < on->grad.size(); ++i)
        an->grad[i] += on->grad[i] * on->value[i] * (S{1} - on->value[i]);
    });
    return out;
  }

  Tensor<S> exp(const Tensor<S>& a) {
    Tensor<S> out = alloc_like(a);
    for (std::size_t i = 0; i < a.numel(); ++i)
      out.data()[i] = std::exp(a.data()[i]);
    finish("exp", out, {a}, [an = a.node(), on = out.node()] {
      if (on->grad.empty()) return;
      if (!an->needs_grad) return;
      ensure_grad(an);
      for (std::size_t i = 0; i < on->grad.size(); ++i)
        an->grad[i] += on->grad[i] * on->value[i];
    });
    return out;
  }

  Tensor<S> log(const Tensor<S>& a) {
    Tensor<S> out = alloc_like(a);
    for (std::size_t i = 0; i < a.numel(); ++i)
      out.data()[i] = std::log(a.data()[i]);
    finish("log", out, {a}, [an = a.node(), on = out.node()] {
      if (on->grad.empty()) return;
      if (!an->needs_grad) return;
      ensure_grad(an);
      for (std::size_t i = 0; i < on->grad.size(); ++i)
        an->grad[i] += on->grad[i] / an->value[i];
    });
    return out;
  }

  // ---- products ----

  // C[m x n] = A[m x k] . B[k x n]; dA = dC.B^T, dB = A^T.dC
  Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
    require_rank(a, 2, "matmul lhs");
    require_rank(b, 2, "matmul rhs");
    if (a.extent(1) != b.extent(0))
      fail(ErrorKind::dimension, "matmul: inner extents differ, " +
                                     detail::shape_str(a.shape()) + " vs " +
                                     detail::shape_str(b.shape()));
    int m = a.extent(0), k = a.extent(1), n = b.extent(1);
    Tensor<S> out = alloc({m, n});
    {
      detail::CMatMap<S> A(a.data().data(), m, k), B(b.data().data(), k, n);
      detail::MatMap<S> C(out.data().data(), m, n);
      C.noalias() = A * B;
    }
    finish("matmul", out, {a, b}, [an = a.node(), bn = b.node(), on = out.node(), m, k, n] {
      if (on->grad.empty()) return;
      detail::CMatMap<S> A(an->value.data(), m, k), B(bn->value.data(), k, n),
          dC(on->grad.data(), m, n);
      if (an->needs_grad) {
        ensure_grad(an);
        detail::MatMap<S>(an->grad.data(), m, k).noalias() += dC * B.transpose();
      }
      if (bn->needs_grad) {
        ensure_grad(bn);
        detail::MatMap<S>(bn->grad.data(), k, n).noalias() += A.transpose() * dC;
      }
    });
    return out;
  }

  // C[m x n] = A[m x k] . B^T, with B[n x k]; dA = dC.B, dB = dC^T.A
  Tensor<S> matmul_nt(const Tensor<S>& a, const Tensor<S>& b) {
    require_rank(a, 2, "matmul_nt lhs");
    require_rank(b, 2, "matmul_nt rhs");
    if (a.extent(1) != b.extent(1))
      fail(ErrorKind::dimension, "matmul_nt: inner extents differ, " +
                                     detail::shape_str(a.shape()) + " vs " +
                                     detail::shape_str(b.shape()));
    int m = a.extent(0), k = a.extent(1), n = b.extent(0);
    Tensor<S> out = alloc({m, n});
    {
      detail::CMatMap<S> A(a.data().data(), m, k), B(b.data().data(), n, k);
      detail::MatMap<S> C(out.data().data(), m, n);
      C.noalias() = A * B.transpose();
    }
    finish("matmul_nt", out, {a, b}, [an = a.node(), bn = b.node(), on = out.node(), m, k, n] {
      if (on->grad.empty()) return;
      detail::CMatMap<S> A(an->value.data(), m, k), B(bn->value.data(), n, k),
          dC(on->grad.data(), m, n);
      if (an->needs_grad) {
        ensure_grad(an);
        detail::MatMap<S>(an->grad.data(), m, k).noalias() += dC * B;
      }
      if (bn->needs_grad) {
        ensure_grad(bn);
        detail::MatMap<S>(bn->grad.data(), n, k).noalias() += dC.transpose() * A;
      }
    });
    return out;
  }

  // y[m] = A[m x n] . x[n]
  Tensor<S> matvec(const Tensor<S>& a, const Tensor<S>& x) {
    require_rank(a, 2, "matvec lhs");
    require_rank(x, 1, "matvec rhs");
    if (a.extent(1) != x.extent(0))
      fail(ErrorKind::dimension, "matvec: " + detail::shape_str(a.shape()) +
                                     " does not accept " +
                                     detail::shape_str(x.shape()));
    int m = a.extent(0), n = a.extent(1);
    Tensor<S> out = alloc({m});
    {
      detail::CMatMap<S> A(a.data().data(), m, n);
      detail::CVecMap<S> X(x.data().data(), n);
      detail::VecMap<S> Y(out.data().data(), m);
      Y.noalias() = A * X;
    }
    finish("matvec", out, {a, x}, [an = a.node(), xn = x.node(), on = out.node(), m, n] {
      if (on->grad.empty()) return;
      detail::CMatMap<S> A(an->value.data(), m, n);
      detail::CVecMap<S> X(xn->value.data(), n), dY(on->grad.data(), m);
      if (an->needs_grad) {
        ensure_grad(an);
        detail::MatMap<S>(an->grad.data(), m, n).noalias() += dY * X.transpose();
      }
      if (xn->needs_grad) {
        ensure_grad(xn);
        detail::VecMap<S>(xn->grad.data(), n).noalias() += A.transpose() * dY;
      }
    });
    return out;
  }

  // y[n] = x^T[m] . A[m x n]
  Tensor<S> vecmat(const Tensor<S>& x, const Tensor<S>& a) {
    require_rank(x, 1, "vecmat lhs");
    require_rank(a, 2, "vecmat rhs");
    if (x.extent(0) != a.extent(0))
      fail(ErrorKind::dimension, "vecmat: " + detail::shape_str(x.shape()) +
                                     " does not accept " +
                                     detail::shape_str(a.shape()));
    int m = a.extent(0), n = a.extent(1);
    Tensor<S> out = alloc({n});
    {
      detail::CMatMap<S> A(a.data().data(), m, n);
      detail::CVecMap<S> X(x.data().data(), m);
      detail::VecMap<S> Y(out.data().data(), n);
      Y.noalias() = A.transpose() * X;
    }
    finish("vecmat", out, {x, a}, [xn = x.node(), an = a.node(), on = out.node(), m, n] {
      if (on->grad.empty()) return;
      detail::CMatMap<S> A(an->value.data(), m, n);
      detail::CVecMap<S> X(xn->value.data(), m), dY(on->grad.data(), n);
      if (xn->needs_grad) {
        ensure_grad(xn);
        detail::VecMap<S>(xn->grad.data(), m).noalias() += A * dY;
      }
      if (an->needs_grad) {
        ensure_grad(an);
        detail::MatMap<S>(an->grad.data(), m, n).noalias() += X * dY.transpose();
      }
    });
    return out;
  }

  // ---- shape ops ----

  Tensor<S> concat(const std::vector<Tensor<S>>& parts) {
    if (parts.empty()) fail(ErrorKind::contract, "concat of zero tensors");
    int total = 0;
    for (const auto& p : parts) {
      require_rank(p, 1, "concat");
      total += p.extent(0);
    }
    Tensor<S> out = alloc({total});
    std::size_t off = 0;
    for (const auto& p : parts) {
      std::copy(p.data().begin(), p.data().end(), out.data().begin() + off);
      off += p.numel();
    }
    bool any = false;
    for (const auto& p : parts) any = any || p.requires_grad();
    if (recording_ && any) {
      out.node()->needs_grad = true;
      std::vector<std::shared_ptr<typename Tensor<S>::Node>> ins;
      ins.reserve(parts.size());
      for (const auto& p : parts) ins.push_back(p.node());
      record([ins, on = out.node()] {
        if (on->grad.empty()) return;
      if (on->grad.empty()) return;
        std::size_t off = 0;
        for (const auto& in : ins) {
          if (in->needs_grad) {
            ensure_grad(in);
            for (std::size_t i = 0; i < in->value.size(); ++i)
              in->grad[i] += on->grad[off + i];
          }
          off += in->value.size();
        }
      });
    }
    maybe_check(out, "concat");
    return out;
  }

  Tensor<S> concat(const Tensor<S>& a, const Tensor<S>& b) {
    return concat(std::vector<Tensor<S>>{a, b});
  }

  Tensor<S> slice(const Tensor<S>& a, int offset, int len) {
    require_rank(a, 1, "slice");
    if (offset < 0 || len < 0 || offset + len > a.extent(0))
      fail(ErrorKind::dimension,
           "slice [" + std::to_string(offset) + ", " +
               std::to_string(offset + len) + ") out of range for " +
               detail::shape_str(a.shape()));
    Tensor<S> out = alloc({len});
    std::copy(a.data().begin() + offset, a.data().begin() + offset + len,
              out.data().begin());
    finish("slice", out, {a}, [an = a.node(), on = out.node(), offset] {
      if (on->grad.empty()) return;
      if (!an->needs_grad) return;
      ensure_grad(an);
      for (std::size_t i = 0; i < on->grad.size(); ++i)
        an->grad[static_cast<std::size_t>(offset) + i] += on->grad[i];
    });
    return out;
  }

  // Rows [r0, r0+len) of a rank-2 tensor.
  Tensor<S> rows(const Tensor<S>& a, int r0, int len) {
    require_rank(a, 2, "rows");
    if (r0 < 0 || len < 0 || r0 + len > a.extent(0))
      fail(ErrorKind::dimension, "rows [" + std::to_string(r0) + ", " +
                                     std::to_string(r0 + len) +
                                     ") out of range for " +
                                     detail::shape_str(a.shape()));
    int n = a.extent(1);
    Tensor<S> out = alloc({len, n});
    std::copy(a.data().begin() + static_cast<std::size_t>(r0) * n,
              a.data().begin() + static_cast<std::size_t>(r0 + len) * n,
              out.data().begin());
    finish("rows", out, {a}, [an = a.node(), on = out.node(), r0, n] {
      if (on->grad.empty()) return;
      if (!an->needs_grad) return;
      ensure_grad(an);
      std::size_t base = static_cast<std::size_t>(r0) * n;
      for (std::size_t i = 0; i < on->grad.size(); ++i)
        an->grad[base + i] += on->grad[i];
    });
    return out;
  }

  // Row r of a rank-2 tensor, as a rank-1 tensor.
  Tensor<S> row(const Tensor<S>& a, int r) {
    require_rank(a, 2, "row");
    if (r < 0 || r >= a.extent(0))
      fail(ErrorKind::dimension,
           "row " + std::to_string(r) + " out of range for " +
               detail::shape_str(a.shape()));
    int n = a.extent(1);
    Tensor<S> out = alloc({n});
    std::copy(a.data().begin() + static_cast<std::size_t>(r) * n,
              a.data().begin() + static_cast<std::size_t>(r + 1) * n,
              out.data().begin());
    finish("row", out, {a}, [an = a.node(), on = out.node(), r, n] {
      if (on->grad.empty()) return;
      if (!an->needs_grad) return;
      ensure_grad(an);
      std::size_t base = static_cast<std::size_t>(r) * n;
      for (int i = 0; i < n; ++i) an->grad[base + i] += on->grad[i];
    });
    return out;
  }

  // Y[k x n] with Y[r] = A[ids[r]]. Gradient scatters additively, so a row
  // selected twice receives the sum of both positions' upstream grads.
  Tensor<S> gather_rows(const Tensor<S>& a, const std::vector<int>& ids) {
    require_rank(a, 2, "gather_rows");
    int n = a.extent(1);
    for (int id : ids)
      if (id < 0 || id >= a.extent(0))
        fail(ErrorKind::vocabulary,
             "row id " + std::to_string(id) + " out of range [0, " +
                 std::to_string(a.extent(0)) + ")");
    Tensor<S> out = alloc({static_cast<int>(ids.size()), n});
    for (std::size_t r = 0; r < ids.size(); ++r)
      std::copy(a.data().begin() + static_cast<std::size_t>(ids[r]) * n,
                a.data().begin() + static_cast<std::size_t>(ids[r] + 1) * n,
                out.data().begin() + r * n);
    finish("gather_rows", out, {a}, [an = a.node(), on = out.node(), ids, n] {
      if (on->grad.empty()) return;
      if (!an->needs_grad) return;
      ensure_grad(an);
      for (std::size_t r = 0; r < ids.size(); ++r) {
        std::size_t src = r * static_cast<std::size_t>(n);
        std::size_t dst = static_cast<std::size_t>(ids[r]) * n;
        for (int i = 0; i < n; ++i) an->grad[dst + i] += on->grad[src + i];
      }
    });
    return out;
  }

  // Stack k rank-1 tensors of equal length into a [k x n] tensor.
  Tensor<S> stack_rows(const std::vector<Tensor<S>>& parts) {
    if (parts.empty()) fail(ErrorKind::contract, "stack_rows of zero tensors");
    int n = parts.front().extent(0);
    for (const auto& p : parts) {
      require_rank(p, 1, "stack_rows");
      if (p.extent(0) != n)
        fail(ErrorKind::dimension, "stack_rows: ragged row lengths");
    }
    Tensor<S> out = alloc({static_cast<int>(parts.size()), n});
    for (std::size_t r = 0; r < parts.size(); ++r)
      std::copy(parts[r].data().begin(), parts[r].data().end(),
                out.data().begin() + r * static_cast<std::size_t>(n));
    bool any = false;
    for (const auto& p : parts) any = any || p.requires_grad();
    if (recording_ && any) {
      out.node()->needs_grad = true;
      std::vector<std::shared_ptr<typename Tensor<S>::Node>> ins;
      for (const auto& p : parts) ins.push_back(p.node());
      record([ins, on = out.node(), n] {
        if (on->grad.empty()) return;
      if (on->grad.empty()) return;
        for (std::size_t r = 0; r < ins.size(); ++r) {
          if (!ins[r]->needs_grad) continue;
          ensure_grad(ins[r]);
          std::size_t base = r * static_cast<std::size_t>(n);
          for (int i = 0; i < n; ++i) ins[r]->grad[i] += on->grad[base + i];
        }
      });
    }
    maybe_check(out, "stack_rows");
    return out;
  }

  // Y[m x n] = A[m x n] + 1.v^T (v added to every row).
  Tensor<S> add_rowwise(const Tensor<S>& a, const Tensor<S>& v) {
    require_rank(a, 2, "add_rowwise lhs");
    require_rank(v, 1, "add_rowwise rhs");
    if (a.extent(1) != v.extent(0))
      fail(ErrorKind::dimension, "add_rowwise: " + detail::shape_str(a.shape()) +
                                     " vs " + detail::shape_str(v.shape()));
    int m = a.extent(0), n = a.extent(1);
    Tensor<S> out = alloc({m, n});
    for (int r = 0; r < m; ++r)
      for (int i = 0; i < n; ++i)
        out.data()[static_cast<std::size_t>(r) * n + i] =
            a.data()[static_cast<std::size_t>(r) * n + i] + v.data()[i];
    finish("add_rowwise", out, {a, v}, [an = a.node(), vn = v.node(), on = out.node(), m, n] {
      if (on->grad.empty()) return;
      if (an->needs_grad) accumulate(an, on->grad, S{1});
      if (vn->needs_grad) {
        ensure_grad(vn);
        for (int r = 0; r < m; ++r)
          for (int i = 0; i < n; ++i)
            vn->grad[i] += on->grad[static_cast<std::size_t>(r) * n + i];
      }
    });
    return out;
  }

  // ---- reductions and normalizers ----

  Tensor<S> sum(const Tensor<S>& a) {
    Tensor<S> out = alloc({1});
    S acc{0};
    for (S v : a.data()) acc += v;
    out.data()[0] = acc;
    finish("sum", out, {a}, [an = a.node(), on = out.node()] {
      if (on->grad.empty()) return;
      if (!an->needs_grad) return;
      ensure_grad(an);
      for (std::size_t i = 0; i < an->grad.size(); ++i)
        an->grad[i] += on->grad[0];
    });
    return out;
  }

  Tensor<S> pick(const Tensor<S>& a, int index) {
    require_rank(a, 1, "pick");
    if (index < 0 || index >= a.extent(0))
      fail(ErrorKind::contract, "pick index " + std::to_string(index) +
                                    " out of range for " +
                                    detail::shape_str(a.shape()));
    Tensor<S> out = alloc({1});
    out.data()[0] = a.data()[static_cast<std::size_t>(index)];
    finish("pick", out, {a}, [an = a.node(), on = out.node(), index] {
      if (on->grad.empty()) return;
      if (!an->needs_grad) return;
      ensure_grad(an);
      an->grad[static_cast<std::size_t>(index)] += on->grad[0];
    });
    return out;
  }

  // Max-subtracted for stability: softmax(v + k.1) == softmax(v) exactly up
  // to floating rounding.
  Tensor<S> softmax(const Tensor<S>& a) {
    require_rank(a, 1, "softmax");
    if (a.extent(0) < 1) fail(ErrorKind::dimension, "softmax of empty tensor");
    Tensor<S> out = alloc_like(a);
    S mx = a.data()[0];
    for (S v : a.data()) mx = std::max(mx, v);
    S total{0};
    for (std::size_t i = 0; i < a.numel(); ++i) {
      out.data()[i] = std::exp(a.data()[i] - mx);
      total += out.data()[i];
    }
    for (std::size_t i = 0; i < a.numel(); ++i) out.data()[i] /= total;
    finish("softmax", out, {a}, [an = a.node(), on = out.node()] {
      if (on->grad.empty()) return;
      if (!an->needs_grad) return;
      ensure_grad(an);
      S dot{0};
      for (std::size_t i = 0; i < on->grad.size(); ++i)
        dot += on->grad[i] * on->value[i];
      for (std::size_t i = 0; i < on->grad.size(); ++i)
        an->grad[i] += on->value[i] * (on->grad[i] - dot);
    });
    return out;
  }

  Tensor<S> log_softmax(const Tensor<S>& a) {
    require_rank(a, 1, "log_softmax");
    if (a.extent(0) < 1) fail(ErrorKind::dimension, "log_softmax of empty tensor");
    Tensor<S> out = alloc_like(a);
    S mx = a.data()[0];
    for (S v : a.data()) mx = std::max(mx, v);
    S total{0};
    for (S v : a.data()) total += std::exp(v - mx);
    S lse = mx + std::log(total);
    for (std::size_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] - lse;
    finish("log_softmax", out, {a}, [an = a.node(), on = out.node()] {
      if (on->grad.empty()) return;
      if (!an->needs_grad) return;
      ensure_grad(an);
      S dsum{0};
      for (S g : on->grad) dsum += g;
      for (std::size_t i = 0; i < on->grad.size(); ++i)
        an->grad[i] += on->grad[i] - std::exp(on->value[i]) * dsum;
    });
    return out;
  }

  // dot(a, b) = sum(a . b), as a composite of primitives.
  Tensor<S> dot(const Tensor<S>& a, const Tensor<S>& b) {
    return sum(mul(a, b));
  }

  Tensor<S> mean(const Tensor<S>& a) {
    return scale(sum(a), S{1} / static_cast<S>(a.numel()));
  }

 private:
  static void ensure_grad(const std::shared_ptr<typename Tensor<S>::Node>& n) {
    if (n->grad.empty()) n->grad.assign(n->value.size(), S{0});
  }

  static void accumulate(const std::shared_ptr<typename Tensor<S>::Node>& n,
                         const std::vector<S>& g, S k) {
    ensure_grad(n);
    for (std::size_t i = 0; i < g.size(); ++i) n->grad[i] += k * g[i];
  }

  static void require_rank(const Tensor<S>& t, int r, const char* what) {
    if (t.rank() != r)
      fail(ErrorKind::dimension, std::string(what) + ": expected rank " +
                                     std::to_string(r) + ", got " +
                                     detail::shape_str(t.shape()));
  }

  static void require_same_shape(const Tensor<S>& a, const Tensor<S>& b,
                                 const char* what) {
    if (a.shape() != b.shape())
      fail(ErrorKind::dimension, std::string(what) + ": shape mismatch " +
                                     detail::shape_str(a.shape()) + " vs " +
                                     detail::shape_str(b.shape()));
  }

  Tensor<S> alloc(std::vector<int> shape) {
    return Tensor<S>::zeros(std::move(shape));
  }
  Tensor<S> alloc_like(const Tensor<S>& a) { return alloc(a.shape()); }

  void record(std::function<void()> fn) { ops_.push_back(std::move(fn)); }

  void maybe_check(const Tensor<S>& t, const char* op) {
    if (!check_finite_) return;
    for (S v : t.data())
      if (!std::isfinite(v))
        fail(ErrorKind::numeric, std::string("non-finite value produced by ") + op);
  }

  void finish(const char* op, Tensor<S>& out,
              std::initializer_list<Tensor<S>> inputs,
              std::function<void()> backward_fn) {
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (recording_ && any) {
      out.node()->needs_grad = true;
      record(std::move(backward_fn));
    }
    maybe_check(out, op);
  }

  bool recording_;
  bool check_finite_ = false;
  std::vector<std::function<void()>> ops_;
};

}  // namespace g2p
