#pragma once

// Reverse-mode automatic differentiation over dense matrices.
//
// A Tape records every operation as a node holding its value, and (when any
// input needs a gradient) a closure that pushes the node's gradient back to its
// inputs. Nodes are appended in evaluation order, so one reverse sweep visits
// every consumer before its producers. Matrix-valued nodes keep the tape short:
// a 21×21 covariance product is one node, not nine thousand.

#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/LU>
#include <unsupported/Eigen/AutoDiff>

#include "snn_inekf/errors.hpp"
#include "snn_inekf/geom3d.hpp"

namespace snn_inekf::ad {

using Matrix = Eigen::MatrixXd;

class Tape;

/// Handle to a tape node. Cheap to copy; valid while its tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
  int id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr && id_ >= 0; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix& grad_out)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }

  Var constant(Matrix value) { return push(std::move(value), false, {}); }

  /// Leaf whose gradient is collected by backward().
  Var parameter(Matrix value) { return push(std::move(value), grad_enabled_, {}); }

  /// Records an operation. The closure is kept only if some input needs grad.
  Var record(Matrix value, std::initializer_list<Var> inputs, Backward fn) {
    bool needs = false;
    if (grad_enabled_) {
      for (const Var& v : inputs) needs = needs || nodes_[v.id()].needs_grad;
    }
    return push(std::move(value), needs, needs ? std::move(fn) : Backward{});
  }
  Var record(Matrix value, const std::vector<Var>& inputs, Backward fn) {
    bool needs = false;
    if (grad_enabled_) {
      for (const Var& v : inputs) needs = needs || nodes_[v.id()].needs_grad;
    }
    return push(std::move(value), needs, needs ? std::move(fn) : Backward{});
  }

  const Matrix& value(int id) const { return nodes_[id].value; }
  bool needs_grad(int id) const { return nodes_[id].needs_grad; }
  bool needs_grad(const Var& v) const { return nodes_[v.id()].needs_grad; }

  /// Adds g into the gradient slot of node id (no-op for constants).
  template <typename Derived>
  void accumulate(int id, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[id];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }
  template <typename Derived>
  void accumulate(const Var& v, const Eigen::MatrixBase<Derived>& g) {
    accumulate(v.id(), g);
  }

  /// Seeds d(root)/d(root) = 1 for a 1×1 root and sweeps the tape backwards.
  void backward(const Var& root) {
    if (root.rows() != 1 || root.cols() != 1) throw InvalidInput("backward: root must be 1x1");
    for (Node& n : nodes_) n.grad.resize(0, 0);
    if (!nodes_[root.id()].needs_grad) return;
    nodes_[root.id()].grad = Matrix::Ones(1, 1);
    for (int id = root.id(); id >= 0; --id) {
      Node& n = nodes_[id];
      if (!n.backward || n.grad.size() == 0) continue;
      n.backward(*this, n.grad);
    }
  }

  /// Gradient collected for v (zeros when v did not influence the root).
  Matrix gradient(const Var& v) const {
    const Node& n = nodes_[v.id()];
    if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward backward;
    bool needs_grad = false;
  };

  Var push(Matrix value, bool needs, Backward fn) {
    nodes_.push_back(Node{std::move(value), Matrix(), std::move(fn), needs});
    return Var(this, static_cast<int>(nodes_.size() - 1));
  }

  std::vector<Node> nodes_;
  bool grad_enabled_;
};

inline const Matrix& Var::value() const { return tape_->value(id_); }

// ---------------------------------------------------------------------------
// Elementary operations

inline void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw InvalidInput(std::string(op) + ": shape mismatch");
  }
}

inline Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  Tape& t = *a.tape();
  const int ia = a.id(), ib = b.id();
  return t.record(a.value() + b.value(), {a, b}, [ia, ib](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, g);
    tp.accumulate(ib, g);
  });
}

inline Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  Tape& t = *a.tape();
  const int ia = a.id(), ib = b.id();
  return t.record(a.value() - b.value(), {a, b}, [ia, ib](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, g);
    tp.accumulate(ib, -g);
  });
}

inline Var scale(const Var& a, double s) {
  Tape& t = *a.tape();
  const int ia = a.id();
  return t.record(a.value() * s, {a}, [ia, s](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, g * s);
  });
}

inline Var neg(const Var& a) { return scale(a, -1.0); }

/// a + c for a constant matrix c.
inline Var add_const(const Var& a, const Matrix& c) {
  Tape& t = *a.tape();
  const int ia = a.id();
  return t.record(a.value() + c, {a}, [ia](Tape& tp, const Matrix& g) { tp.accumulate(ia, g); });
}

inline Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw InvalidInput("matmul: inner dimensions differ");
  Tape& t = *a.tape();
  const int ia = a.id(), ib = b.id();
  return t.record(a.value() * b.value(), {a, b}, [ia, ib](Tape& tp, const Matrix& g) {
    if (tp.needs_grad(ia)) tp.accumulate(ia, g * tp.value(ib).transpose());
    if (tp.needs_grad(ib)) tp.accumulate(ib, tp.value(ia).transpose() * g);
  });
}

/// Constant matrix times a.
inline Var matmul_const_left(const Matrix& c, const Var& a) {
  Tape& t = *a.tape();
  const int ia = a.id();
  return t.record(c * a.value(), {a}, [ia, c](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, c.transpose() * g);
  });
}

inline Var transpose(const Var& a) {
  Tape& t = *a.tape();
  const int ia = a.id();
  return t.record(a.value().transpose(), {a}, [ia](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, g.transpose());
  });
}

inline Var cmul(const Var& a, const Var& b) {
  check_same_shape(a, b, "cmul");
  Tape& t = *a.tape();
  const int ia = a.id(), ib = b.id();
  return t.record(a.value().cwiseProduct(b.value()), {a, b}, [ia, ib](Tape& tp, const Matrix& g) {
    if (tp.needs_grad(ia)) tp.accumulate(ia, g.cwiseProduct(tp.value(ib)));
    if (tp.needs_grad(ib)) tp.accumulate(ib, g.cwiseProduct(tp.value(ia)));
  });
}

/// Elementwise product with a constant mask/matrix.
inline Var cmul_const(const Var& a, const Matrix& c) {
  Tape& t = *a.tape();
  const int ia = a.id();
  return t.record(a.value().cwiseProduct(c), {a}, [ia, c](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, g.cwiseProduct(c));
  });
}

inline Var block(const Var& a, Eigen::Index r, Eigen::Index c, Eigen::Index nr, Eigen::Index nc) {
  if (r < 0 || c < 0 || r + nr > a.rows() || c + nc > a.cols()) {
    throw InvalidInput("block: out of range");
  }
  Tape& t = *a.tape();
  const int ia = a.id();
  const Eigen::Index ar = a.rows(), ac = a.cols();
  return t.record(a.value().block(r, c, nr, nc), {a},
                  [ia, r, c, nr, nc, ar, ac](Tape& tp, const Matrix& g) {
                    Matrix full = Matrix::Zero(ar, ac);
                    full.block(r, c, nr, nc) = g;
                    tp.accumulate(ia, full);
                  });
}

inline Var rows(const Var& a, Eigen::Index r, Eigen::Index n) { return block(a, r, 0, n, a.cols()); }

/// Places each input block at (row, col) inside a rows×cols matrix that starts
/// as `base`. Overlapping placements add.
struct Placement {
  Var var;
  Eigen::Index row;
  Eigen::Index col;
};

inline Var assemble(Tape& t, const Matrix& base, const std::vector<Placement>& parts) {
  Matrix value = base;
  std::vector<Var> inputs;
  inputs.reserve(parts.size());
  for (const auto& p : parts) {
    value.block(p.row, p.col, p.var.rows(), p.var.cols()) += p.var.value();
    inputs.push_back(p.var);
  }
  struct Slot {
    int id;
    Eigen::Index row, col, nr, nc;
  };
  std::vector<Slot> slots;
  slots.reserve(parts.size());
  for (const auto& p : parts) slots.push_back({p.var.id(), p.row, p.col, p.var.rows(), p.var.cols()});
  return t.record(std::move(value), inputs, [slots](Tape& tp, const Matrix& g) {
    for (const auto& s : slots) {
      if (tp.needs_grad(s.id)) tp.accumulate(s.id, g.block(s.row, s.col, s.nr, s.nc));
    }
  });
}

/// Vertical concatenation.
inline Var vstack(Tape& t, const std::vector<Var>& parts) {
  Eigen::Index total = 0;
  const Eigen::Index cols = parts.empty() ? 0 : parts.front().cols();
  for (const auto& p : parts) {
    if (p.cols() != cols) throw InvalidInput("vstack: column mismatch");
    total += p.rows();
  }
  std::vector<Placement> placements;
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    placements.push_back({p, r, 0});
    r += p.rows();
  }
  return assemble(t, Matrix::Zero(total, cols), placements);
}

/// a (m×n) plus a row vector (1×n) broadcast over rows.
inline Var add_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw InvalidInput("add_row: shape mismatch");
  Tape& t = *a.tape();
  const int ia = a.id(), ir = row.id();
  Matrix v = a.value().rowwise() + row.value().row(0);
  return t.record(std::move(v), {a, row}, [ia, ir](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, g);
    if (tp.needs_grad(ir)) tp.accumulate(ir, g.colwise().sum());
  });
}

/// a (m×n) times a row vector (1×n) broadcast over rows.
inline Var mul_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw InvalidInput("mul_row: shape mismatch");
  Tape& t = *a.tape();
  const int ia = a.id(), ir = row.id();
  Matrix v = a.value().array().rowwise() * row.value().row(0).array();
  return t.record(std::move(v), {a, row}, [ia, ir](Tape& tp, const Matrix& g) {
    const Matrix& av = tp.value(ia);
    const Matrix& rv = tp.value(ir);
    if (tp.needs_grad(ia)) {
      tp.accumulate(ia, Matrix(g.array().rowwise() * rv.row(0).array()));
    }
    if (tp.needs_grad(ir)) tp.accumulate(ir, g.cwiseProduct(av).colwise().sum());
  });
}

inline Var sum(const Var& a) {
  Tape& t = *a.tape();
  const int ia = a.id();
  const Eigen::Index r = a.rows(), c = a.cols();
  return t.record(Matrix::Constant(1, 1, a.value().sum()), {a},
                  [ia, r, c](Tape& tp, const Matrix& g) {
                    tp.accumulate(ia, Matrix::Constant(r, c, g(0, 0)));
                  });
}

/// 10^(s·a) elementwise.
inline Var exp10(const Var& a, double s) {
  Tape& t = *a.tape();
  const int ia = a.id();
  Matrix v = a.value().unaryExpr([s](double x) { return std::pow(10.0, s * x); });
  const int self = static_cast<int>(t.size());
  return t.record(std::move(v), {a}, [ia, s, self](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, Matrix(g.cwiseProduct(tp.value(self)) * (s * std::log(10.0))));
  });
}

/// tanh on the columns where mask(0, c) != 0, identity elsewhere.
inline Var tanh_masked(const Var& a, const std::vector<bool>& column_mask) {
  if (static_cast<Eigen::Index>(column_mask.size()) != a.cols()) {
    throw InvalidInput("tanh_masked: mask width mismatch");
  }
  Tape& t = *a.tape();
  const int ia = a.id();
  Matrix v = a.value();
  for (Eigen::Index c = 0; c < v.cols(); ++c) {
    if (column_mask[c]) v.col(c) = v.col(c).array().tanh();
  }
  const int self = static_cast<int>(t.size());
  return t.record(std::move(v), {a}, [ia, column_mask, self](Tape& tp, const Matrix& g) {
    Matrix d = g;
    const Matrix& y = tp.value(self);
    for (Eigen::Index c = 0; c < d.cols(); ++c) {
      if (column_mask[c]) d.col(c) = d.col(c).array() * (1.0 - y.col(c).array().square());
    }
    tp.accumulate(ia, d);
  });
}

/// Σ huber(a_ij, delta): ½r² for |r| ≤ δ, δ|r| − ½δ² beyond.
inline Var huber_sum(const Var& a, double delta) {
  Tape& t = *a.tape();
  const int ia = a.id();
  double total = 0.0;
  const Matrix& x = a.value();
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double r = x(i);
    total += std::abs(r) <= delta ? 0.5 * r * r : delta * std::abs(r) - 0.5 * delta * delta;
  }
  return t.record(Matrix::Constant(1, 1, total), {a}, [ia, delta](Tape& tp, const Matrix& g) {
    const Matrix& xv = tp.value(ia);
    Matrix d = xv.unaryExpr([delta](double r) {
      return std::abs(r) <= delta ? r : (r > 0.0 ? delta : -delta);
    });
    tp.accumulate(ia, Matrix(d * g(0, 0)));
  });
}

/// Inverse of a small square matrix: d(A⁻¹) = −A⁻¹ dA A⁻¹.
inline Var inverse(const Var& a) {
  if (a.rows() != a.cols()) throw InvalidInput("inverse: matrix not square");
  Tape& t = *a.tape();
  const int ia = a.id();
  Matrix inv = a.value().inverse();
  const int self = static_cast<int>(t.size());
  return t.record(std::move(inv), {a}, [ia, self](Tape& tp, const Matrix& g) {
    const Matrix& ai = tp.value(self);
    tp.accumulate(ia, Matrix(-ai.transpose() * g * ai.transpose()));
  });
}

/// ½(a + aᵀ)
inline Var symmetrize(const Var& a) {
  Tape& t = *a.tape();
  const int ia = a.id();
  Matrix v = 0.5 * (a.value() + a.value().transpose());
  return t.record(std::move(v), {a}, [ia](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, Matrix(0.5 * (g + g.transpose())));
  });
}

/// Column vector → diagonal matrix.
inline Var diag(const Var& v) {
  if (v.cols() != 1) throw InvalidInput("diag: expected a column vector");
  Tape& t = *v.tape();
  const int iv = v.id();
  Matrix m = v.value().col(0).asDiagonal();
  return t.record(std::move(m), {v}, [iv](Tape& tp, const Matrix& g) {
    tp.accumulate(iv, Matrix(g.diagonal()));
  });
}

/// Row-major flatten of an m×n matrix into 1×(m·n).
inline Var flatten_row_major(const Var& a) {
  Tape& t = *a.tape();
  const int ia = a.id();
  const Eigen::Index r = a.rows(), c = a.cols();
  Matrix out(1, r * c);
  for (Eigen::Index i = 0; i < r; ++i) out.block(0, i * c, 1, c) = a.value().row(i);
  return t.record(std::move(out), {a}, [ia, r, c](Tape& tp, const Matrix& g) {
    Matrix d(r, c);
    for (Eigen::Index i = 0; i < r; ++i) d.row(i) = g.block(0, i * c, 1, c);
    tp.accumulate(ia, d);
  });
}

// ---------------------------------------------------------------------------
// SO(3) operations. Values come from the double kernels in geom3d; Jacobians
// come from the same kernels instantiated with forward-mode dual numbers.

inline Var skew(const Var& v) {
  if (v.rows() != 3 || v.cols() != 1) throw InvalidInput("skew: expected 3x1");
  Tape& t = *v.tape();
  const int iv = v.id();
  Matrix m = snn_inekf::skew<double>(Vec3(v.value().col(0)));
  return t.record(std::move(m), {v}, [iv](Tape& tp, const Matrix& g) {
    // d/dv of skew(v) contracted with g equals 2·vee(antisym(g)) with signs.
    Matrix d(3, 1);
    d(0, 0) = g(2, 1) - g(1, 2);
    d(1, 0) = g(0, 2) - g(2, 0);
    d(2, 0) = g(1, 0) - g(0, 1);
    tp.accumulate(iv, d);
  });
}

namespace detail {

using Dual3 = Eigen::AutoDiffScalar<Eigen::Vector3d>;
using Dual9 = Eigen::AutoDiffScalar<Eigen::Matrix<double, 9, 1>>;

/// 9×3 Jacobian of vec(f(θ)) (column-major) for f: R³ → R^{3×3}.
template <typename F>
Eigen::Matrix<double, 9, 3> jacobian_vec3_to_mat3(const Vec3& theta, F&& f) {
  Vec3T<Dual3> x;
  for (int i = 0; i < 3; ++i) x(i) = Dual3(theta(i), 3, i);
  const Mat3T<Dual3> m = f(x);
  Eigen::Matrix<double, 9, 3> j;
  for (int c = 0; c < 3; ++c) {
    for (int r = 0; r < 3; ++r) j.row(c * 3 + r) = m(r, c).derivatives().transpose();
  }
  return j;
}

inline Matrix contract_mat3(const Eigen::Matrix<double, 9, 3>& j, const Matrix& g) {
  Eigen::Matrix<double, 9, 1> gv;
  for (int c = 0; c < 3; ++c) {
    for (int r = 0; r < 3; ++r) gv(c * 3 + r) = g(r, c);
  }
  return j.transpose() * gv;
}

}  // namespace detail

inline Var so3_exp(const Var& v) {
  if (v.rows() != 3 || v.cols() != 1) throw InvalidInput("so3_exp: expected 3x1");
  Tape& t = *v.tape();
  const int iv = v.id();
  Matrix m = so3_exp_matrix<double>(Vec3(v.value().col(0)));
  return t.record(std::move(m), {v}, [iv](Tape& tp, const Matrix& g) {
    const Vec3 theta = tp.value(iv).col(0);
    const auto j = detail::jacobian_vec3_to_mat3(
        theta, [](const Vec3T<detail::Dual3>& x) { return so3_exp_matrix(x); });
    tp.accumulate(iv, detail::contract_mat3(j, g));
  });
}

inline Var so3_left_jacobian(const Var& v) {
  if (v.rows() != 3 || v.cols() != 1) throw InvalidInput("so3_left_jacobian: expected 3x1");
  Tape& t = *v.tape();
  const int iv = v.id();
  Matrix m = snn_inekf::so3_left_jacobian<double>(Vec3(v.value().col(0)));
  return t.record(std::move(m), {v}, [iv](Tape& tp, const Matrix& g) {
    const Vec3 theta = tp.value(iv).col(0);
    const auto j = detail::jacobian_vec3_to_mat3(theta, [](const Vec3T<detail::Dual3>& x) {
      return snn_inekf::so3_left_jacobian(x);
    });
    tp.accumulate(iv, detail::contract_mat3(j, g));
  });
}

/// Logarithm of a 3×3 matrix (generic branch, angles away from π).
inline Var so3_log(const Var& m) {
  if (m.rows() != 3 || m.cols() != 3) throw InvalidInput("so3_log: expected 3x3");
  Tape& t = *m.tape();
  const int im = m.id();
  Matrix out = so3_log_generic<double>(Mat3(m.value()));
  return t.record(std::move(out), {m}, [im](Tape& tp, const Matrix& g) {
    const Matrix& mv = tp.value(im);
    Mat3T<detail::Dual9> x;
    for (int c = 0; c < 3; ++c) {
      for (int r = 0; r < 3; ++r) x(r, c) = detail::Dual9(mv(r, c), 9, c * 3 + r);
    }
    const Vec3T<detail::Dual9> y = so3_log_generic(x);
    Matrix d = Matrix::Zero(3, 3);
    for (int i = 0; i < 3; ++i) {
      const auto& der = y(i).derivatives();
      for (int c = 0; c < 3; ++c) {
        for (int r = 0; r < 3; ++r) d(r, c) += g(i, 0) * der(c * 3 + r);
      }
    }
    tp.accumulate(im, d);
  });
}

// Operator sugar for filter code.
inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return matmul(a, b); }
inline Var operator*(const Var& a, double s) { return scale(a, s); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }
inline Var operator-(const Var& a) { return neg(a); }

}  // namespace snn_inekf::ad
