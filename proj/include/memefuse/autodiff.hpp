#pragma once

// Reverse-mode differentiation over dense Eigen matrices.
// A Tape records every operation of one forward pass; backward() walks it in
// reverse and accumulates gradients into the parameters that were read.

#include <Eigen/Core>

#include <cassert>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "memefuse/errors.hpp"

namespace memefuse::ad {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using BoolMask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
struct Parameter {
  std::string name;
  Matrix<Scalar> value;
  Matrix<Scalar> grad;
  bool trainable = true;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

template <typename Scalar>
class Tape;

/// Handle to a node on a tape.
template <typename Scalar>
class Var {
 public:
  Var() = default;
  Var(Tape<Scalar>* tape, int id) : tape_(tape), id_(id) {}

  const Matrix<Scalar>& value() const { return tape_->value(id_); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  Tape<Scalar>* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape<Scalar>* tape_ = nullptr;
  int id_ = -1;
};

template <typename Scalar>
class Tape {
 public:
  using Mat = Matrix<Scalar>;
  using Backward = std::function<void(Tape&, const Mat&)>;

  /// A tape built with grad_enabled=false binds parameters as constants and
  /// never writes to them.
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Scalar> constant(Mat value) { return push(std::move(value), false, nullptr, nullptr); }

  /// Leaf bound to `p`; backward() adds into p.grad when p is trainable.
  Var<Scalar> parameter(Parameter<Scalar>& p) {
    const bool track = grad_enabled_ && p.trainable;
    return push(p.value, track, nullptr, track ? &p : nullptr);
  }

  bool grad_enabled() const { return grad_enabled_; }

  Var<Scalar> record(Mat value, std::initializer_list<Var<Scalar>> parents, Backward backward) {
    bool needs = false;
    for (const auto& v : parents) needs = needs || requires_grad(v.id());
    return push(std::move(value), needs, needs ? std::move(backward) : nullptr, nullptr);
  }

  Var<Scalar> record(Mat value, std::span<const Var<Scalar>> parents, Backward backward) {
    bool needs = false;
    for (const auto& v : parents) needs = needs || requires_grad(v.id());
    return push(std::move(value), needs, needs ? std::move(backward) : nullptr, nullptr);
  }

  const Mat& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }

  /// Adds `g` into the gradient of node `id` when that node needs one.
  template <typename Derived>
  void accumulate(int id, const Eigen::MatrixBase<Derived>& g) {
    auto& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    n.grad += g;
  }

  /// Seeds d(loss)/d(loss) = 1 for a 1x1 node and propagates.
  void backward(const Var<Scalar>& loss) {
    if (loss.rows() != 1 || loss.cols() != 1) throw ShapeError("backward() needs a scalar loss");
    accumulate(loss.id(), Mat::Ones(1, 1));
    for (int i = loss.id(); i >= 0; --i) {
      auto& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.needs_grad || n.grad.size() == 0) continue;
      if (n.backward) n.backward(*this, n.grad);
      if (n.param) {
        if (n.param->grad.size() == 0) n.param->zero_grad();
        n.param->grad += n.grad;
      }
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool needs_grad = false;
    Backward backward;
    Parameter<Scalar>* param = nullptr;
  };

  Var<Scalar> push(Mat value, bool needs, Backward backward, Parameter<Scalar>* param) {
    nodes_.push_back(Node{std::move(value), Mat(), needs, std::move(backward), param});
    return Var<Scalar>(this, static_cast<int>(nodes_.size()) - 1);
  }

  bool grad_enabled_ = true;
  std::vector<Node> nodes_;
};

namespace detail {

inline void check(bool ok, const char* op, Eigen::Index ar, Eigen::Index ac, Eigen::Index br, Eigen::Index bc) {
  if (!ok)
    throw ShapeError(std::string(op) + ": incompatible shapes " + std::to_string(ar) + "x" + std::to_string(ac) +
                     " and " + std::to_string(br) + "x" + std::to_string(bc));
}

}  // namespace detail

template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::check(a.cols() == b.rows(), "matmul", a.rows(), a.cols(), b.rows(), b.cols());
  const int ia = a.id(), ib = b.id();
  return a.tape()->record(a.value() * b.value(), {a, b}, [ia, ib](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
    if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
  });
}

/// a * b^T
template <typename Scalar>
Var<Scalar> matmul_nt(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::check(a.cols() == b.cols(), "matmul_nt", a.rows(), a.cols(), b.rows(), b.cols());
  const int ia = a.id(), ib = b.id();
  return a.tape()->record(a.value() * b.value().transpose(), {a, b},
                          [ia, ib](Tape<Scalar>& t, const Matrix<Scalar>& g) {
                            if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib));
                            if (t.requires_grad(ib)) t.accumulate(ib, g.transpose() * t.value(ia));
                          });
}

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::check(a.rows() == b.rows() && a.cols() == b.cols(), "add", a.rows(), a.cols(), b.rows(), b.cols());
  const int ia = a.id(), ib = b.id();
  return a.tape()->record(a.value() + b.value(), {a, b}, [ia, ib](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

/// Adds the 1 x k row `bias` to every row of `a`.
template <typename Scalar>
Var<Scalar> add_row(const Var<Scalar>& a, const Var<Scalar>& bias) {
  detail::check(bias.rows() == 1 && bias.cols() == a.cols(), "add_row", a.rows(), a.cols(), bias.rows(),
                bias.cols());
  const int ia = a.id(), ib = bias.id();
  Matrix<Scalar> out = a.value().rowwise() + bias.value().row(0);
  return a.tape()->record(std::move(out), {a, bias}, [ia, ib](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.accumulate(ia, g);
    if (t.requires_grad(ib)) t.accumulate(ib, g.colwise().sum());
  });
}

/// Element-wise product.
template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::check(a.rows() == b.rows() && a.cols() == b.cols(), "mul", a.rows(), a.cols(), b.rows(), b.cols());
  const int ia = a.id(), ib = b.id();
  return a.tape()->record(a.value().cwiseProduct(b.value()), {a, b},
                          [ia, ib](Tape<Scalar>& t, const Matrix<Scalar>& g) {
                            if (t.requires_grad(ia)) t.accumulate(ia, g.cwiseProduct(t.value(ib)));
                            if (t.requires_grad(ib)) t.accumulate(ib, g.cwiseProduct(t.value(ia)));
                          });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar s) {
  const int ia = a.id();
  return a.tape()->record(a.value() * s, {a}, [ia, s](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.accumulate(ia, g * s);
  });
}

/// tanh approximation of GELU.
template <typename Scalar>
Var<Scalar> gelu(const Var<Scalar>& a) {
  const Scalar c = static_cast<Scalar>(std::sqrt(2.0 / std::numbers::pi));
  const Scalar k = static_cast<Scalar>(0.044715);
  const int ia = a.id();
  Matrix<Scalar> out = a.value().unaryExpr([c, k](Scalar x) {
    return Scalar(0.5) * x * (Scalar(1) + std::tanh(c * (x + k * x * x * x)));
  });
  return a.tape()->record(std::move(out), {a}, [ia, c, k](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    Matrix<Scalar> d = t.value(ia).unaryExpr([c, k](Scalar x) {
      const Scalar th = std::tanh(c * (x + k * x * x * x));
      return Scalar(0.5) * (Scalar(1) + th) +
             Scalar(0.5) * x * (Scalar(1) - th * th) * c * (Scalar(1) + Scalar(3) * k * x * x);
    });
    t.accumulate(ia, g.cwiseProduct(d));
  });
}

/// Row-wise RMS normalization with a learned 1 x d gain.
template <typename Scalar>
Var<Scalar> rms_norm(const Var<Scalar>& x, const Var<Scalar>& gain, Scalar eps = Scalar(1e-6)) {
  detail::check(gain.rows() == 1 && gain.cols() == x.cols(), "rms_norm", x.rows(), x.cols(), gain.rows(),
                gain.cols());
  const auto d = static_cast<Scalar>(x.cols());
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inv_rms =
      ((x.value().array().square().rowwise().sum() / d) + eps).sqrt().inverse().matrix();
  Matrix<Scalar> xhat = inv_rms.asDiagonal() * x.value();
  Matrix<Scalar> out = xhat.array().rowwise() * gain.value().row(0).array();
  const int ix = x.id(), ig = gain.id();
  return x.tape()->record(std::move(out), {x, gain},
                          [ix, ig, xhat, inv_rms, d](Tape<Scalar>& t, const Matrix<Scalar>& g) {
                            if (t.requires_grad(ig)) t.accumulate(ig, g.cwiseProduct(xhat).colwise().sum());
                            if (!t.requires_grad(ix)) return;
                            Matrix<Scalar> gx = g.array().rowwise() * t.value(ig).row(0).array();
                            Eigen::Matrix<Scalar, Eigen::Dynamic, 1> proj =
                                gx.cwiseProduct(xhat).rowwise().sum() / d;
                            Matrix<Scalar> out_g = gx - proj.asDiagonal() * xhat;
                            t.accumulate(ix, inv_rms.asDiagonal() * out_g);
                          });
}

/// Softmax over each row. Where `allowed` is given, disallowed entries get
/// probability 0; a row with nothing allowed becomes all zeros.
template <typename Scalar>
Matrix<Scalar> softmax_rows_value(const Matrix<Scalar>& a, const BoolMask* allowed) {
  Matrix<Scalar> out = Matrix<Scalar>::Zero(a.rows(), a.cols());
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    Scalar mx = -std::numeric_limits<Scalar>::infinity();
    for (Eigen::Index c = 0; c < a.cols(); ++c)
      if (!allowed || (*allowed)(r, c)) mx = std::max(mx, a(r, c));
    if (!std::isfinite(mx)) continue;
    Scalar total = 0;
    for (Eigen::Index c = 0; c < a.cols(); ++c) {
      if (allowed && !(*allowed)(r, c)) continue;
      out(r, c) = std::exp(a(r, c) - mx);
      total += out(r, c);
    }
    out.row(r) /= total;
  }
  return out;
}

template <typename Scalar>
Var<Scalar> softmax_rows(const Var<Scalar>& a, const BoolMask* allowed = nullptr) {
  if (allowed && (allowed->rows() != a.rows() || allowed->cols() != a.cols()))
    throw ShapeError("softmax mask shape does not match its input");
  Matrix<Scalar> y = softmax_rows_value(a.value(), allowed);
  const int ia = a.id();
  return a.tape()->record(y, {a}, [ia, y](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> dot = g.cwiseProduct(y).rowwise().sum();
    Matrix<Scalar> ga = y.cwiseProduct(g - dot.replicate(1, g.cols()));
    t.accumulate(ia, ga);
  });
}

/// Rows of `table` selected by `ids`.
template <typename Scalar>
Var<Scalar> gather_rows(const Var<Scalar>& table, std::span<const int> ids) {
  Matrix<Scalar> out(static_cast<Eigen::Index>(ids.size()), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table.rows())
      throw EncodingError("row index " + std::to_string(ids[i]) + " outside table of " +
                          std::to_string(table.rows()) + " rows");
    out.row(static_cast<Eigen::Index>(i)) = table.value().row(ids[i]);
  }
  const int it = table.id();
  std::vector<int> idx(ids.begin(), ids.end());
  return table.tape()->record(std::move(out), {table}, [it, idx](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    Matrix<Scalar> gt = Matrix<Scalar>::Zero(t.value(it).rows(), t.value(it).cols());
    for (std::size_t i = 0; i < idx.size(); ++i) gt.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
    t.accumulate(it, gt);
  });
}

/// The first `count` rows.
template <typename Scalar>
Var<Scalar> top_rows(const Var<Scalar>& a, Eigen::Index count) {
  if (count > a.rows()) throw ShapeError("top_rows: asked for more rows than available");
  const int ia = a.id();
  const Eigen::Index rows = a.rows(), cols = a.cols();
  return a.tape()->record(a.value().topRows(count), {a}, [ia, rows, cols, count](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    Matrix<Scalar> full = Matrix<Scalar>::Zero(rows, cols);
    full.topRows(count) = g;
    t.accumulate(ia, full);
  });
}

template <typename Scalar>
Var<Scalar> slice_cols(const Var<Scalar>& a, Eigen::Index start, Eigen::Index count) {
  if (start + count > a.cols()) throw ShapeError("slice_cols out of range");
  const int ia = a.id();
  const Eigen::Index rows = a.rows(), cols = a.cols();
  return a.tape()->record(a.value().middleCols(start, count), {a},
                          [ia, rows, cols, start, count](Tape<Scalar>& t, const Matrix<Scalar>& g) {
                            Matrix<Scalar> full = Matrix<Scalar>::Zero(rows, cols);
                            full.middleCols(start, count) = g;
                            t.accumulate(ia, full);
                          });
}

template <typename Scalar>
Var<Scalar> hcat(std::span<const Var<Scalar>> parts) {
  if (parts.empty()) throw ShapeError("hcat of nothing");
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    detail::check(p.rows() == parts[0].rows(), "hcat", parts[0].rows(), parts[0].cols(), p.rows(), p.cols());
    cols += p.cols();
  }
  Matrix<Scalar> out(parts[0].rows(), cols);
  std::vector<std::pair<int, Eigen::Index>> spans;
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    spans.emplace_back(p.id(), at);
    at += p.cols();
  }
  return parts[0].tape()->record(std::move(out), parts, [spans](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    for (const auto& [id, off] : spans) t.accumulate(id, g.middleCols(off, t.value(id).cols()));
  });
}

/// Mean token cross-entropy of `logits` (T x V) against `targets`; positions
/// whose target equals `ignore` are excluded. Returns a 1x1 node.
template <typename Scalar>
Var<Scalar> cross_entropy(const Var<Scalar>& logits, std::span<const int> targets, int ignore) {
  if (static_cast<Eigen::Index>(targets.size()) != logits.rows())
    throw ShapeError("cross_entropy: one target per logit row required");
  const Matrix<Scalar> probs = softmax_rows_value<Scalar>(logits.value(), nullptr);
  Scalar total = 0;
  int count = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] == ignore) continue;
    if (targets[i] < 0 || targets[i] >= logits.cols()) throw EncodingError("target id outside the vocabulary");
    const auto r = static_cast<Eigen::Index>(i);
    const Scalar mx = logits.value().row(r).maxCoeff();
    const Scalar lse = mx + std::log((logits.value().row(r).array() - mx).exp().sum());
    total += lse - logits.value()(r, targets[i]);
    ++count;
  }
  if (count == 0) throw ArgumentError("cross_entropy: every target position is padding");
  Matrix<Scalar> out(1, 1);
  out(0, 0) = total / static_cast<Scalar>(count);
  const int il = logits.id();
  std::vector<int> tg(targets.begin(), targets.end());
  return logits.tape()->record(std::move(out), {logits},
                               [il, tg, probs, count, ignore](Tape<Scalar>& t, const Matrix<Scalar>& g) {
                                 Matrix<Scalar> gl = Matrix<Scalar>::Zero(probs.rows(), probs.cols());
                                 for (std::size_t i = 0; i < tg.size(); ++i) {
                                   if (tg[i] == ignore) continue;
                                   const auto r = static_cast<Eigen::Index>(i);
                                   gl.row(r) = probs.row(r);
                                   gl(r, tg[i]) -= Scalar(1);
                                 }
                                 t.accumulate(il, gl * (g(0, 0) / static_cast<Scalar>(count)));
                               });
}

}  // namespace memefuse::ad
