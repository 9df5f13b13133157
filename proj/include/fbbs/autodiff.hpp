#pragma once

// Minimal tape-based reverse-mode differentiation over dense row-major
// matrices. Every op appends a node whose inputs precede it, so tape order is
// a topological order and backward() is a single reverse sweep.

#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "fbbs/errors.hpp"

namespace fbbs::ad {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
class Tape;

template <typename Scalar>
struct Var {
  Tape<Scalar>* tape = nullptr;
  std::size_t id = 0;

  [[nodiscard]] const Matrix<Scalar>& value() const { return tape->value(*this); }
  [[nodiscard]] Eigen::Index rows() const { return value().rows(); }
  [[nodiscard]] Eigen::Index cols() const { return value().cols(); }
};

template <typename Scalar>
class Tape {
 public:
  using Mat = Matrix<Scalar>;
  using Backward = std::function<void(Tape&, std::size_t)>;

  /// A non-recording tape evaluates values only.
  explicit Tape(bool recording = true) : recording_(recording) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  [[nodiscard]] bool recording() const { return recording_; }

  Var<Scalar> variable(Mat value) { return push_leaf(std::move(value), nullptr, recording_); }
  Var<Scalar> constant(Mat value) { return push_leaf(std::move(value), nullptr, false); }
  /// Leaf viewing external storage that must outlive the tape.
  Var<Scalar> variable_ref(const Mat& value) { return push_leaf(Mat(), &value, recording_); }
  Var<Scalar> constant_ref(const Mat& value) { return push_leaf(Mat(), &value, false); }

  [[nodiscard]] const Mat& value(Var<Scalar> v) const { return value(v.id); }
  [[nodiscard]] const Mat& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.value;
  }

  [[nodiscard]] bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  [[nodiscard]] bool requires_grad(Var<Scalar> v) const { return requires_grad(v.id); }

  /// Gradient accumulated by backward(); zeros if the node received none.
  [[nodiscard]] Mat grad(Var<Scalar> v) const {
    const Node& n = nodes_[v.id];
    if (n.grad.size() == 0) return Mat::Zero(value(v.id).rows(), value(v.id).cols());
    return n.grad;
  }

  Mat& grad_ref(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) n.grad = Mat::Zero(value(id).rows(), value(id).cols());
    return n.grad;
  }
  [[nodiscard]] bool has_grad(std::size_t id) const { return nodes_[id].grad.size() != 0; }

  std::vector<Mat>& saved(std::size_t id) { return nodes_[id].saved; }

  /// Appends an op result. The closure is dropped unless some input needs grad.
  Var<Scalar> push(Mat value, std::initializer_list<Var<Scalar>> inputs, Backward backward, std::vector<Mat> saved = {}) {
    bool needs = false;
    if (recording_)
      for (const auto& in : inputs) needs = needs || nodes_[in.id].requires_grad;
    Node n;
    n.value = std::move(value);
    n.requires_grad = needs;
    if (needs) {
      n.backward = std::move(backward);
      n.saved = std::move(saved);
    }
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  /// Seeds d(loss)/d(loss) = 1 for a 1x1 loss and sweeps the tape backwards.
  void backward(Var<Scalar> loss) {
    if (value(loss).size() != 1) throw DimensionError("backward() needs a scalar loss");
    if (!nodes_[loss.id].requires_grad) return;
    grad_ref(loss.id).setOnes();
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward && n.grad.size() != 0) n.backward(*this, i);
    }
  }

  [[nodiscard]] std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    const Mat* external = nullptr;
    Mat grad;
    Backward backward;
    std::vector<Mat> saved;
    bool requires_grad = false;
  };

  Var<Scalar> push_leaf(Mat value, const Mat* external, bool requires_grad) {
    Node n;
    n.value = std::move(value);
    n.external = external;
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  bool recording_;
  std::vector<Node> nodes_;
};

namespace detail {

template <typename Scalar>
void accumulate(Tape<Scalar>& tape, Var<Scalar> target, const Matrix<Scalar>& g) {
  if (tape.requires_grad(target)) tape.grad_ref(target.id) += g;
}

inline void check(bool ok, const char* what) {
  if (!ok) throw DimensionError(what);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and linear algebra

template <typename Scalar>
Var<Scalar> matmul(Var<Scalar> a, Var<Scalar> b) {
  detail::check(a.cols() == b.rows(), "matmul: inner dimensions differ");
  Tape<Scalar>& tape = *a.tape;
  Matrix<Scalar> out = a.value() * b.value();
  return tape.push(std::move(out), {a, b}, [a, b](Tape<Scalar>& t, std::size_t self) {
    const auto& g = t.grad_ref(self);
    if (t.requires_grad(a)) t.grad_ref(a.id).noalias() += g * t.value(b).transpose();
    if (t.requires_grad(b)) t.grad_ref(b.id).noalias() += t.value(a).transpose() * g;
  });
}

/// x * W + b with b a 1 x out row broadcast over rows.
template <typename Scalar>
Var<Scalar> linear(Var<Scalar> x, Var<Scalar> weight, Var<Scalar> bias) {
  detail::check(x.cols() == weight.rows(), "linear: input width mismatch");
  detail::check(bias.rows() == 1 && bias.cols() == weight.cols(), "linear: bias shape mismatch");
  Tape<Scalar>& tape = *x.tape;
  Matrix<Scalar> out = x.value() * weight.value();
  out.rowwise() += bias.value().row(0);
  return tape.push(std::move(out), {x, weight, bias}, [x, weight, bias](Tape<Scalar>& t, std::size_t self) {
    const auto& g = t.grad_ref(self);
    if (t.requires_grad(x)) t.grad_ref(x.id).noalias() += g * t.value(weight).transpose();
    if (t.requires_grad(weight)) t.grad_ref(weight.id).noalias() += t.value(x).transpose() * g;
    if (t.requires_grad(bias)) t.grad_ref(bias.id) += g.colwise().sum();
  });
}

template <typename Scalar>
Var<Scalar> add(Var<Scalar> a, Var<Scalar> b) {
  detail::check(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  Matrix<Scalar> out = a.value() + b.value();
  return a.tape->push(std::move(out), {a, b}, [a, b](Tape<Scalar>& t, std::size_t self) {
    const Matrix<Scalar> g = t.grad_ref(self);
    detail::accumulate(t, a, g);
    detail::accumulate(t, b, g);
  });
}

/// a + c for a constant matrix c.
template <typename Scalar>
Var<Scalar> add_constant(Var<Scalar> a, const Matrix<Scalar>& c) {
  detail::check(a.rows() == c.rows() && a.cols() == c.cols(), "add_constant: shape mismatch");
  Matrix<Scalar> out = a.value() + c;
  return a.tape->push(std::move(out), {a}, [a](Tape<Scalar>& t, std::size_t self) {
    const Matrix<Scalar> g = t.grad_ref(self);
    detail::accumulate(t, a, g);
  });
}

template <typename Scalar>
Var<Scalar> silu(Var<Scalar> a) {
  const auto& x = a.value();
  Matrix<Scalar> sig = (Scalar(1) + (-x.array()).exp()).inverse().matrix();
  Matrix<Scalar> out = (x.array() * sig.array()).matrix();
  return a.tape->push(std::move(out), {a}, [a](Tape<Scalar>& t, std::size_t self) {
    const auto& x = t.value(a);
    const auto& s = t.saved(self)[0];
    const auto d = s.array() * (Scalar(1) + x.array() * (Scalar(1) - s.array()));
    t.grad_ref(a.id).array() += t.grad_ref(self).array() * d;
  }, {std::move(sig)});
}

/// Tanh-approximated GELU.
template <typename Scalar>
Var<Scalar> gelu(Var<Scalar> a) {
  const Scalar k0 = static_cast<Scalar>(std::sqrt(2.0 / std::numbers::pi));
  const Scalar k1 = static_cast<Scalar>(0.044715);
  const auto& x = a.value();
  Matrix<Scalar> th = (k0 * (x.array() + k1 * x.array().cube())).tanh().matrix();
  Matrix<Scalar> out = (Scalar(0.5) * x.array() * (Scalar(1) + th.array())).matrix();
  return a.tape->push(std::move(out), {a}, [a, k0, k1](Tape<Scalar>& t, std::size_t self) {
    const auto& x = t.value(a).array();
    const auto& th = t.saved(self)[0].array();
    const auto d = Scalar(0.5) * (Scalar(1) + th) +
                   Scalar(0.5) * x * (Scalar(1) - th.square()) * k0 * (Scalar(1) + Scalar(3) * k1 * x.square());
    t.grad_ref(a.id).array() += t.grad_ref(self).array() * d;
  }, {std::move(th)});
}

/// Columns [start, start + count).
template <typename Scalar>
Var<Scalar> slice_cols(Var<Scalar> a, Eigen::Index start, Eigen::Index count) {
  detail::check(start >= 0 && start + count <= a.cols(), "slice_cols: out of range");
  Matrix<Scalar> out = a.value().middleCols(start, count);
  return a.tape->push(std::move(out), {a}, [a, start, count](Tape<Scalar>& t, std::size_t self) {
    t.grad_ref(a.id).middleCols(start, count) += t.grad_ref(self);
  });
}

/// Parameter-free layer normalization over each row.
template <typename Scalar>
Var<Scalar> layer_norm(Var<Scalar> a, Scalar eps = Scalar(1e-6)) {
  const auto& x = a.value();
  const Eigen::Index d = x.cols();
  Matrix<Scalar> out(x.rows(), d);
  Matrix<Scalar> inv_std(x.rows(), 1);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Scalar mean = x.row(i).mean();
    const auto centered = x.row(i).array() - mean;
    const Scalar var = centered.square().sum() / static_cast<Scalar>(d);
    inv_std(i, 0) = Scalar(1) / std::sqrt(var + eps);
    out.row(i) = (centered * inv_std(i, 0)).matrix();
  }
  return a.tape->push(out, {a}, [a](Tape<Scalar>& t, std::size_t self) {
    const auto& y = t.value(self);
    const auto& inv_std = t.saved(self)[0];
    const auto& g = t.grad_ref(self);
    auto& gx = t.grad_ref(a.id);
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      const Scalar mg = g.row(i).mean();
      const Scalar mgy = g.row(i).dot(y.row(i)) / static_cast<Scalar>(y.cols());
      gx.row(i).array() += inv_std(i, 0) * (g.row(i).array() - mg - y.row(i).array() * mgy);
    }
  }, {std::move(inv_std)});
}

/// Row i of x uses row i / group of shift and scale: x * (1 + scale) + shift.
template <typename Scalar>
Var<Scalar> modulate(Var<Scalar> x, Var<Scalar> shift, Var<Scalar> scale, Eigen::Index group) {
  detail::check(x.rows() == shift.rows() * group && shift.rows() == scale.rows(), "modulate: row grouping mismatch");
  detail::check(x.cols() == shift.cols() && x.cols() == scale.cols(), "modulate: width mismatch");
  const auto& xv = x.value();
  Matrix<Scalar> out(xv.rows(), xv.cols());
  for (Eigen::Index i = 0; i < xv.rows(); ++i) {
    const Eigen::Index g = i / group;
    out.row(i) = (xv.row(i).array() * (Scalar(1) + scale.value().row(g).array()) + shift.value().row(g).array()).matrix();
  }
  return x.tape->push(std::move(out), {x, shift, scale}, [x, shift, scale, group](Tape<Scalar>& t, std::size_t self) {
    const auto& g = t.grad_ref(self);
    const auto& xv = t.value(x);
    const auto& sc = t.value(scale);
    const bool gx = t.requires_grad(x), gsh = t.requires_grad(shift), gsc = t.requires_grad(scale);
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
      const Eigen::Index b = i / group;
      if (gx) t.grad_ref(x.id).row(i).array() += g.row(i).array() * (Scalar(1) + sc.row(b).array());
      if (gsh) t.grad_ref(shift.id).row(b) += g.row(i);
      if (gsc) t.grad_ref(scale.id).row(b).array() += g.row(i).array() * xv.row(i).array();
    }
  });
}

/// x + gate * y with gate rows broadcast over `group` consecutive rows.
template <typename Scalar>
Var<Scalar> gated_residual(Var<Scalar> x, Var<Scalar> gate, Var<Scalar> y, Eigen::Index group) {
  detail::check(x.rows() == y.rows() && x.cols() == y.cols(), "gated_residual: shape mismatch");
  detail::check(x.rows() == gate.rows() * group && x.cols() == gate.cols(), "gated_residual: gate shape mismatch");
  Matrix<Scalar> out = x.value();
  for (Eigen::Index i = 0; i < out.rows(); ++i)
    out.row(i).array() += gate.value().row(i / group).array() * y.value().row(i).array();
  return x.tape->push(std::move(out), {x, gate, y}, [x, gate, y, group](Tape<Scalar>& t, std::size_t self) {
    const Matrix<Scalar> g = t.grad_ref(self);
    detail::accumulate(t, x, g);
    const bool gg = t.requires_grad(gate), gy = t.requires_grad(y);
    const auto& gv = t.value(gate);
    const auto& yv = t.value(y);
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
      const Eigen::Index b = i / group;
      if (gg) t.grad_ref(gate.id).row(b).array() += g.row(i).array() * yv.row(i).array();
      if (gy) t.grad_ref(y.id).row(i).array() += g.row(i).array() * gv.row(b).array();
    }
  });
}

/// Cardinality-normalized masked mean over consecutive groups of rows.
/// `mask` has one entry per row of `e`; masked rows never touch the output.
template <typename Scalar>
Var<Scalar> masked_mean_pool(Var<Scalar> e, const Matrix<Scalar>& mask, Eigen::Index group) {
  detail::check(mask.size() == e.rows() && e.rows() % group == 0, "masked_mean_pool: mask shape mismatch");
  const Eigen::Index n_groups = e.rows() / group;
  Matrix<Scalar> weights(e.rows(), 1);
  Matrix<Scalar> out = Matrix<Scalar>::Zero(n_groups, e.cols());
  for (Eigen::Index b = 0; b < n_groups; ++b) {
    Scalar count = 0;
    for (Eigen::Index i = 0; i < group; ++i) count += mask(b * group + i) != Scalar(0) ? Scalar(1) : Scalar(0);
    if (count == Scalar(0)) throw EmptyMask("masked pooling over an empty mask");
    for (Eigen::Index i = 0; i < group; ++i) {
      const Eigen::Index r = b * group + i;
      weights(r, 0) = mask(r) != Scalar(0) ? Scalar(1) / count : Scalar(0);
      if (weights(r, 0) != Scalar(0)) out.row(b) += e.value().row(r) * weights(r, 0);
    }
  }
  return e.tape->push(std::move(out), {e}, [e, group](Tape<Scalar>& t, std::size_t self) {
    const auto& g = t.grad_ref(self);
    const auto& w = t.saved(self)[0];
    auto& ge = t.grad_ref(e.id);
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      if (w(r, 0) != Scalar(0)) ge.row(r) += w(r, 0) * g.row(r / group);
  }, {std::move(weights)});
}

/// mean((pred - target)^2) as a 1x1 node; the sum is accumulated in double.
template <typename Scalar>
Var<Scalar> mse(Var<Scalar> pred, const Matrix<Scalar>& target) {
  detail::check(pred.rows() == target.rows() && pred.cols() == target.cols(), "mse: shape mismatch");
  Matrix<Scalar> diff = pred.value() - target;
  double acc = 0.0;
  for (Eigen::Index i = 0; i < diff.size(); ++i) acc += static_cast<double>(diff.data()[i]) * diff.data()[i];
  Matrix<Scalar> out(1, 1);
  out(0, 0) = static_cast<Scalar>(acc / static_cast<double>(diff.size()));
  return pred.tape->push(std::move(out), {pred}, [pred](Tape<Scalar>& t, std::size_t self) {
    const auto& diff = t.saved(self)[0];
    const Scalar g = t.grad_ref(self)(0, 0);
    t.grad_ref(pred.id) += (Scalar(2) * g / static_cast<Scalar>(diff.size())) * diff;
  }, {std::move(diff)});
}

// ---------------------------------------------------------------------------
// Attention

/// Rotation angles for RoPE: angle(pos, i) = pos * base^(-2i/head_dim).
template <typename Scalar>
Matrix<Scalar> rope_angles(Eigen::Index seq_len, Eigen::Index head_dim, double base = 10000.0) {
  Matrix<Scalar> angles(seq_len, head_dim / 2);
  for (Eigen::Index p = 0; p < seq_len; ++p)
    for (Eigen::Index i = 0; i < head_dim / 2; ++i)
      angles(p, i) = static_cast<Scalar>(static_cast<double>(p) * std::pow(base, -2.0 * static_cast<double>(i) / head_dim));
  return angles;
}

namespace detail {

// Rotates consecutive pairs (2i, 2i+1) of each row by +/- angle(row, i).
template <typename Scalar, typename Block>
void rotate_pairs(Block&& x, const Matrix<Scalar>& cos_t, const Matrix<Scalar>& sin_t, Scalar sign) {
  for (Eigen::Index p = 0; p < x.rows(); ++p) {
    for (Eigen::Index i = 0; i < cos_t.cols(); ++i) {
      const Scalar a = x(p, 2 * i), b = x(p, 2 * i + 1);
      const Scalar c = cos_t(p, i), s = sign * sin_t(p, i);
      x(p, 2 * i) = a * c - b * s;
      x(p, 2 * i + 1) = a * s + b * c;
    }
  }
}

}  // namespace detail

/// Multi-head self-attention with rotary position embedding.
///
/// `qkv` holds [Q | K | V] (each `width` wide) for `batch` sequences of
/// `seq_len` consecutive rows. RoPE rotates queries and keys by token index.
template <typename Scalar>
Var<Scalar> rope_attention(Var<Scalar> qkv, Eigen::Index seq_len, Eigen::Index n_heads) {
  detail::check(qkv.cols() % 3 == 0 && qkv.rows() % seq_len == 0, "rope_attention: bad qkv shape");
  const Eigen::Index width = qkv.cols() / 3;
  detail::check(width % n_heads == 0 && (width / n_heads) % 2 == 0, "rope_attention: head width must be even");
  const Eigen::Index head_dim = width / n_heads;
  const Eigen::Index batch = qkv.rows() / seq_len;
  const Scalar inv_sqrt = Scalar(1) / std::sqrt(static_cast<Scalar>(head_dim));

  const Matrix<Scalar> angles = rope_angles<Scalar>(seq_len, head_dim);
  Matrix<Scalar> cos_t = angles.array().cos().matrix();
  Matrix<Scalar> sin_t = angles.array().sin().matrix();

  const auto& in = qkv.value();
  // rotated = [Q' | K'] after RoPE; probs stacks softmax matrices per (batch, head).
  Matrix<Scalar> rotated(in.rows(), 2 * width);
  rotated.leftCols(width) = in.leftCols(width);
  rotated.rightCols(width) = in.middleCols(width, width);
  Matrix<Scalar> probs(batch * n_heads * seq_len, seq_len);
  Matrix<Scalar> out(in.rows(), width);

  for (Eigen::Index b = 0; b < batch; ++b) {
    for (Eigen::Index h = 0; h < n_heads; ++h) {
      auto q = rotated.block(b * seq_len, h * head_dim, seq_len, head_dim);
      auto k = rotated.block(b * seq_len, width + h * head_dim, seq_len, head_dim);
      detail::rotate_pairs<Scalar>(q, cos_t, sin_t, Scalar(1));
      detail::rotate_pairs<Scalar>(k, cos_t, sin_t, Scalar(1));
      auto p = probs.block((b * n_heads + h) * seq_len, 0, seq_len, seq_len);
      p.noalias() = (q * k.transpose()) * inv_sqrt;
      for (Eigen::Index i = 0; i < seq_len; ++i) {
        const Scalar mx = p.row(i).maxCoeff();
        p.row(i) = (p.row(i).array() - mx).exp().matrix();
        p.row(i) /= p.row(i).sum();
      }
      out.block(b * seq_len, h * head_dim, seq_len, head_dim).noalias() =
          p * in.block(b * seq_len, 2 * width + h * head_dim, seq_len, head_dim);
    }
  }

  return qkv.tape->push(std::move(out), {qkv}, [qkv, seq_len, n_heads, width, head_dim, batch, inv_sqrt](Tape<Scalar>& t, std::size_t self) {
    auto& saved = t.saved(self);
    const auto& rotated = saved[0];
    const auto& probs = saved[1];
    const auto& cos_t = saved[2];
    const auto& sin_t = saved[3];
    const auto& in = t.value(qkv);
    const auto& g = t.grad_ref(self);
    auto& gin = t.grad_ref(qkv.id);
    Matrix<Scalar> dp(seq_len, seq_len), ds(seq_len, seq_len), dq(seq_len, head_dim), dk(seq_len, head_dim);
    for (Eigen::Index b = 0; b < batch; ++b) {
      for (Eigen::Index h = 0; h < n_heads; ++h) {
        const auto q = rotated.block(b * seq_len, h * head_dim, seq_len, head_dim);
        const auto k = rotated.block(b * seq_len, width + h * head_dim, seq_len, head_dim);
        const auto v = in.block(b * seq_len, 2 * width + h * head_dim, seq_len, head_dim);
        const auto p = probs.block((b * n_heads + h) * seq_len, 0, seq_len, seq_len);
        const auto go = g.block(b * seq_len, h * head_dim, seq_len, head_dim);
        gin.block(b * seq_len, 2 * width + h * head_dim, seq_len, head_dim).noalias() += p.transpose() * go;
        dp.noalias() = go * v.transpose();
        for (Eigen::Index i = 0; i < seq_len; ++i) {
          const Scalar dot = dp.row(i).dot(p.row(i));
          ds.row(i) = (p.row(i).array() * (dp.row(i).array() - dot)).matrix();
        }
        dq.noalias() = (ds * k) * inv_sqrt;
        dk.noalias() = (ds.transpose() * q) * inv_sqrt;
        // The transpose of a rotation is the rotation by the negated angle.
        detail::rotate_pairs<Scalar>(dq, cos_t, sin_t, Scalar(-1));
        detail::rotate_pairs<Scalar>(dk, cos_t, sin_t, Scalar(-1));
        gin.block(b * seq_len, h * head_dim, seq_len, head_dim) += dq;
        gin.block(b * seq_len, width + h * head_dim, seq_len, head_dim) += dk;
      }
    }
  }, {std::move(rotated), std::move(probs), std::move(cos_t), std::move(sin_t)});
}

}  // namespace fbbs::ad
