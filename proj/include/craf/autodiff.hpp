// Reverse-mode automatic differentiation over dense matrices.
//
// A Tape owns the computation graph; nodes are appended in construction order,
// which is already a topological order, so backward() is a single reverse sweep
// restricted to the ancestors of the loss. Everything is double precision and
// sequential, so two backward passes over the same graph are bit-identical.
#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "craf/matrix.hpp"

namespace craf::ad {

// negative slope of the leaky rectifier, fixed project-wide
inline constexpr double kLeakySlope = 0.2;

enum class Op {
  leaf,
  matmul,
  add,
  sub,
  mul,
  scale,
  add_row,
  concat_cols,
  transpose,
  row_softmax,
  masked_row_softmax,
  leaky_relu,
  elu,
  sigmoid,
  tanh_,
  glu_cols,
  masked_mse,
  sum_all,
};

struct Var {
  int idx = -1;
  bool valid() const { return idx >= 0; }
};

class Tape {
public:
  Var leaf(Matrix value) {
    if (!value.all_finite()) throw std::invalid_argument("tape: non-finite leaf value");
    return push(Op::leaf, std::move(value), {-1, -1});
  }

  Var matmul(Var a, Var b) {
    const Matrix& A = value(a);
    const Matrix& B = value(b);
    if (A.cols() != B.rows())
      throw std::invalid_argument("matmul: inner dims mismatch " + A.shape_str() + " vs " +
                                  B.shape_str());
    return push(Op::matmul, craf::matmul(A, B), {a.idx, b.idx});
  }

  Var add(Var a, Var b) { return elementwise_pair(Op::add, a, b); }
  Var sub(Var a, Var b) { return elementwise_pair(Op::sub, a, b); }
  Var mul(Var a, Var b) { return elementwise_pair(Op::mul, a, b); }

  Var scale(Var a, double s) {
    Matrix out = value(a);
    for (double& v : out.raw()) v *= s;
    Var r = push(Op::scale, std::move(out), {a.idx, -1});
    nodes_[r.idx].scalar = s;
    return r;
  }

  // broadcast a 1xC row over every row of a RxC matrix
  Var add_row(Var a, Var row) {
    const Matrix& A = value(a);
    const Matrix& R = value(row);
    if (R.rows() != 1 || R.cols() != A.cols())
      throw std::invalid_argument("add_row: want 1x" + std::to_string(A.cols()) + ", got " +
                                  R.shape_str());
    Matrix out = A;
    for (std::size_t i = 0; i < A.rows(); ++i)
      for (std::size_t j = 0; j < A.cols(); ++j) out(i, j) += R(0, j);
    return push(Op::add_row, std::move(out), {a.idx, row.idx});
  }

  Var concat_cols(Var a, Var b) {
    const Matrix& A = value(a);
    const Matrix& B = value(b);
    if (A.rows() != B.rows())
      throw std::invalid_argument("concat_cols: row mismatch " + A.shape_str() + " vs " +
                                  B.shape_str());
    Matrix out(A.rows(), A.cols() + B.cols());
    for (std::size_t i = 0; i < A.rows(); ++i) {
      for (std::size_t j = 0; j < A.cols(); ++j) out(i, j) = A(i, j);
      for (std::size_t j = 0; j < B.cols(); ++j) out(i, A.cols() + j) = B(i, j);
    }
    Var r = push(Op::concat_cols, std::move(out), {a.idx, b.idx});
    nodes_[r.idx].split = A.cols();
    return r;
  }

  Var transpose(Var a) { return push(Op::transpose, transposed(value(a)), {a.idx, -1}); }

  Var row_softmax(Var a) {
    Matrix out = softmax_rows(value(a), nullptr);
    return push(Op::row_softmax, std::move(out), {a.idx, -1});
  }

  // softmax over entries with mask > 0 per row; excluded entries become 0
  Var masked_row_softmax(Var a, Matrix mask) {
    const Matrix& A = value(a);
    if (!A.same_shape(mask))
      throw std::invalid_argument("masked_row_softmax: mask " + mask.shape_str() + " vs " +
                                  A.shape_str());
    Matrix out = softmax_rows(A, &mask);
    Var r = push(Op::masked_row_softmax, std::move(out), {a.idx, -1});
    nodes_[r.idx].aux = std::move(mask);
    return r;
  }

  Var leaky_relu(Var a) {
    Matrix out = value(a);
    for (double& v : out.raw())
      if (v < 0.0) v *= kLeakySlope;
    return push(Op::leaky_relu, std::move(out), {a.idx, -1});
  }

  Var elu(Var a) {
    Matrix out = value(a);
    for (double& v : out.raw())
      if (v < 0.0) v = std::expm1(v);
    return push(Op::elu, std::move(out), {a.idx, -1});
  }

  Var sigmoid(Var a) {
    Matrix out = value(a);
    for (double& v : out.raw()) v = sigmoid_scalar(v);
    return push(Op::sigmoid, std::move(out), {a.idx, -1});
  }

  Var tanh(Var a) {
    Matrix out = value(a);
    for (double& v : out.raw()) v = std::tanh(v);
    return push(Op::tanh_, std::move(out), {a.idx, -1});
  }

  // [X | G] with 2C columns -> X .* sigmoid(G), C columns
  Var glu_cols(Var a) {
    const Matrix& A = value(a);
    if (A.cols() % 2 != 0)
      throw std::invalid_argument("glu_cols: odd column count " + A.shape_str());
    const std::size_t c = A.cols() / 2;
    Matrix out(A.rows(), c);
    for (std::size_t i = 0; i < A.rows(); ++i)
      for (std::size_t j = 0; j < c; ++j) out(i, j) = A(i, j) * sigmoid_scalar(A(i, c + j));
    return push(Op::glu_cols, std::move(out), {a.idx, -1});
  }

  // mean of (pred - target)^2 over entries where mask > 0; 1x1 result
  Var masked_mse(Var pred, const Matrix& target, Matrix mask) {
    const Matrix& P = value(pred);
    if (!P.same_shape(target) || !P.same_shape(mask))
      throw std::invalid_argument("masked_mse: shapes " + P.shape_str() + ", " +
                                  target.shape_str() + ", " + mask.shape_str());
    double count = 0.0, sum = 0.0;
    for (std::size_t i = 0; i < P.size(); ++i) {
      if (mask.raw()[i] > 0.0) {
        const double d = P.raw()[i] - target.raw()[i];
        sum += d * d;
        count += 1.0;
      }
    }
    if (count == 0.0) throw std::invalid_argument("masked_mse: empty mask");
    Matrix out(1, 1);
    out(0, 0) = sum / count;
    Var r = push(Op::masked_mse, std::move(out), {pred.idx, -1});
    nodes_[r.idx].aux = std::move(mask);
    nodes_[r.idx].aux2 = target;
    nodes_[r.idx].scalar = count;
    return r;
  }

  Var sum_all(Var a) {
    double s = 0.0;
    for (double v : value(a).raw()) s += v;
    Matrix out(1, 1);
    out(0, 0) = s;
    return push(Op::sum_all, std::move(out), {a.idx, -1});
  }

  const Matrix& value(Var v) const { return nodes_.at(v.idx).value; }
  const Matrix& grad(Var v) const { return nodes_.at(v.idx).grad; }
  std::size_t size() const { return nodes_.size(); }

  // Reverse sweep from a scalar loss. Gradients of nodes not reachable from
  // the loss stay exactly zero.
  void backward(Var loss) {
    Node& ln = nodes_.at(loss.idx);
    if (ln.value.rows() != 1 || ln.value.cols() != 1)
      throw std::invalid_argument("backward: loss must be 1x1, got " + ln.value.shape_str());

    std::vector<char> reach(nodes_.size(), 0);
    mark_ancestors(loss.idx, reach);
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      Node& n = nodes_[i];
      n.grad = Matrix(n.value.rows(), n.value.cols());
    }
    ln.grad(0, 0) = 1.0;

    for (int i = loss.idx; i >= 0; --i) {
      if (!reach[static_cast<std::size_t>(i)]) continue;
      propagate(nodes_[static_cast<std::size_t>(i)]);
    }
  }

private:
  struct Node {
    Op op = Op::leaf;
    std::array<int, 2> parents{-1, -1};
    Matrix value;
    Matrix grad;
    Matrix aux;    // mask payload
    Matrix aux2;   // target payload
    double scalar = 0.0;
    std::size_t split = 0;
  };

  Var push(Op op, Matrix value, std::array<int, 2> parents) {
    Node n;
    n.op = op;
    n.parents = parents;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size() - 1)};
  }

  Var elementwise_pair(Op op, Var a, Var b) {
    const Matrix& A = value(a);
    const Matrix& B = value(b);
    if (!A.same_shape(B))
      throw std::invalid_argument("elementwise op: shape mismatch " + A.shape_str() + " vs " +
                                  B.shape_str());
    Matrix out(A.rows(), A.cols());
    for (std::size_t i = 0; i < A.size(); ++i) {
      switch (op) {
        case Op::add: out.raw()[i] = A.raw()[i] + B.raw()[i]; break;
        case Op::sub: out.raw()[i] = A.raw()[i] - B.raw()[i]; break;
        case Op::mul: out.raw()[i] = A.raw()[i] * B.raw()[i]; break;
        default: throw std::logic_error("elementwise_pair: bad op");
      }
    }
    return push(op, std::move(out), {a.idx, b.idx});
  }

  static double sigmoid_scalar(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  }

  static Matrix softmax_rows(const Matrix& a, const Matrix* mask) {
    Matrix out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
      double hi = -1e300;
      bool any = false;
      for (std::size_t j = 0; j < a.cols(); ++j) {
        if (mask && (*mask)(i, j) <= 0.0) continue;
        hi = std::max(hi, a(i, j));
        any = true;
      }
      if (!any) continue;  // fully masked row stays zero
      double denom = 0.0;
      for (std::size_t j = 0; j < a.cols(); ++j) {
        if (mask && (*mask)(i, j) <= 0.0) continue;
        out(i, j) = std::exp(a(i, j) - hi);
        denom += out(i, j);
      }
      for (std::size_t j = 0; j < a.cols(); ++j) out(i, j) /= denom;
    }
    return out;
  }

  void mark_ancestors(int root, std::vector<char>& reach) const {
    std::vector<int> stack{root};
    while (!stack.empty()) {
      const int i = stack.back();
      stack.pop_back();
      if (reach[static_cast<std::size_t>(i)]) continue;
      reach[static_cast<std::size_t>(i)] = 1;
      for (int p : nodes_[static_cast<std::size_t>(i)].parents)
        if (p >= 0) stack.push_back(p);
    }
  }

  static void acc(Matrix& dst, const Matrix& src, double w) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst.raw()[i] += w * src.raw()[i];
  }

  void propagate(Node& n) {
    const Matrix& g = n.grad;
    switch (n.op) {
      case Op::leaf:
        break;
      case Op::matmul: {
        Node& a = nodes_[n.parents[0]];
        Node& b = nodes_[n.parents[1]];
        matmul_acc(g, transposed(b.value), a.grad);
        matmul_acc(transposed(a.value), g, b.grad);
        break;
      }
      case Op::add: {
        acc(nodes_[n.parents[0]].grad, g, 1.0);
        acc(nodes_[n.parents[1]].grad, g, 1.0);
        break;
      }
      case Op::sub: {
        acc(nodes_[n.parents[0]].grad, g, 1.0);
        acc(nodes_[n.parents[1]].grad, g, -1.0);
        break;
      }
      case Op::mul: {
        Node& a = nodes_[n.parents[0]];
        Node& b = nodes_[n.parents[1]];
        for (std::size_t i = 0; i < g.size(); ++i) {
          a.grad.raw()[i] += g.raw()[i] * b.value.raw()[i];
          b.grad.raw()[i] += g.raw()[i] * a.value.raw()[i];
        }
        break;
      }
      case Op::scale:
        acc(nodes_[n.parents[0]].grad, g, n.scalar);
        break;
      case Op::add_row: {
        Node& a = nodes_[n.parents[0]];
        Node& r = nodes_[n.parents[1]];
        acc(a.grad, g, 1.0);
        for (std::size_t i = 0; i < g.rows(); ++i)
          for (std::size_t j = 0; j < g.cols(); ++j) r.grad(0, j) += g(i, j);
        break;
      }
      case Op::concat_cols: {
        Node& a = nodes_[n.parents[0]];
        Node& b = nodes_[n.parents[1]];
        for (std::size_t i = 0; i < g.rows(); ++i) {
          for (std::size_t j = 0; j < n.split; ++j) a.grad(i, j) += g(i, j);
          for (std::size_t j = n.split; j < g.cols(); ++j) b.grad(i, j - n.split) += g(i, j);
        }
        break;
      }
      case Op::transpose: {
        Node& a = nodes_[n.parents[0]];
        for (std::size_t i = 0; i < g.rows(); ++i)
          for (std::size_t j = 0; j < g.cols(); ++j) a.grad(j, i) += g(i, j);
        break;
      }
      case Op::row_softmax:
      case Op::masked_row_softmax: {
        Node& a = nodes_[n.parents[0]];
        const Matrix& y = n.value;
        for (std::size_t i = 0; i < y.rows(); ++i) {
          double dot = 0.0;
          for (std::size_t j = 0; j < y.cols(); ++j) dot += g(i, j) * y(i, j);
          for (std::size_t j = 0; j < y.cols(); ++j)
            a.grad(i, j) += y(i, j) * (g(i, j) - dot);
        }
        break;
      }
      case Op::leaky_relu: {
        Node& a = nodes_[n.parents[0]];
        for (std::size_t i = 0; i < g.size(); ++i)
          a.grad.raw()[i] += g.raw()[i] * (a.value.raw()[i] >= 0.0 ? 1.0 : kLeakySlope);
        break;
      }
      case Op::elu: {
        Node& a = nodes_[n.parents[0]];
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double x = a.value.raw()[i];
          a.grad.raw()[i] += g.raw()[i] * (x >= 0.0 ? 1.0 : n.value.raw()[i] + 1.0);
        }
        break;
      }
      case Op::sigmoid: {
        Node& a = nodes_[n.parents[0]];
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double s = n.value.raw()[i];
          a.grad.raw()[i] += g.raw()[i] * s * (1.0 - s);
        }
        break;
      }
      case Op::tanh_: {
        Node& a = nodes_[n.parents[0]];
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double t = n.value.raw()[i];
          a.grad.raw()[i] += g.raw()[i] * (1.0 - t * t);
        }
        break;
      }
      case Op::glu_cols: {
        Node& a = nodes_[n.parents[0]];
        const std::size_t c = n.value.cols();
        for (std::size_t i = 0; i < g.rows(); ++i) {
          for (std::size_t j = 0; j < c; ++j) {
            const double x = a.value(i, j);
            const double s = sigmoid_scalar(a.value(i, c + j));
            a.grad(i, j) += g(i, j) * s;
            a.grad(i, c + j) += g(i, j) * x * s * (1.0 - s);
          }
        }
        break;
      }
      case Op::masked_mse: {
        Node& a = nodes_[n.parents[0]];
        const double w = 2.0 * g(0, 0) / n.scalar;
        for (std::size_t i = 0; i < a.value.size(); ++i)
          if (n.aux.raw()[i] > 0.0)
            a.grad.raw()[i] += w * (a.value.raw()[i] - n.aux2.raw()[i]);
        break;
      }
      case Op::sum_all: {
        Node& a = nodes_[n.parents[0]];
        const double w = g(0, 0);
        for (double& v : a.grad.raw()) v += w;
        break;
      }
    }
  }

  std::vector<Node> nodes_;
};

// Compares tape gradients against central finite differences
// (f(x+eps) - f(x-eps)) / (2 eps), entry by entry, over every parameter.
// Returns the max relative error with denominator max(|analytic|,|numeric|,1e-8).
using TapeFn = std::function<Var(Tape&, std::span<const Var>)>;

inline double grad_check(const TapeFn& f, std::vector<Matrix> params, double eps) {
  if (eps <= 0.0) throw std::invalid_argument("grad_check: eps must be > 0");

  const auto eval = [&](const std::vector<Matrix>& p, std::vector<Matrix>* grads) {
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(p.size());
    for (const Matrix& m : p) vars.push_back(tape.leaf(m));
    Var loss = f(tape, vars);
    const double v = tape.value(loss)(0, 0);
    if (!std::isfinite(v)) throw std::invalid_argument("grad_check: non-finite function value");
    if (grads) {
      tape.backward(loss);
      grads->clear();
      for (Var pv : vars) grads->push_back(tape.grad(pv));
    }
    return v;
  };

  std::vector<Matrix> analytic;
  eval(params, &analytic);

  double max_rel = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    for (std::size_t i = 0; i < params[pi].size(); ++i) {
      const double orig = params[pi].raw()[i];
      params[pi].raw()[i] = orig + eps;
      const double fp = eval(params, nullptr);
      params[pi].raw()[i] = orig - eps;
      const double fm = eval(params, nullptr);
      params[pi].raw()[i] = orig;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = analytic[pi].raw()[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      max_rel = std::max(max_rel, std::abs(a - numeric) / denom);
    }
  }
  return max_rel;
}

}  // namespace craf::ad
