#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace mmpg::ad {

/// A named parameter: a dense 64-bit matrix with a matching gradient buffer.
/// Gradients accumulate across backward passes until zero_grad().
struct Tensor {
    std::string name;
    Eigen::MatrixXd value;
    Eigen::MatrixXd grad;
    bool requires_grad = true;

    Tensor() = default;
    Tensor(std::string n, int rows, int cols, bool req_grad = true)
        : name(std::move(n)),
          value(Eigen::MatrixXd::Zero(rows, cols)),
          grad(Eigen::MatrixXd::Zero(rows, cols)),
          requires_grad(req_grad) {}

    void zero_grad() { grad.setZero(); }
    int rows() const { return static_cast<int>(value.rows()); }
    int cols() const { return static_cast<int>(value.cols()); }
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
struct Var {
    Tape* tape = nullptr;
    int id = -1;

    const Eigen::MatrixXd& value() const;
    int rows() const { return static_cast<int>(value().rows()); }
    int cols() const { return static_cast<int>(value().cols()); }
    bool valid() const { return tape != nullptr && id >= 0; }
};

/// Eagerly-evaluated computation record. Ops compute forward values at call
/// time and push a closure for the reverse sweep; creation order is a
/// topological order, so backward() is a single reverse pass that visits each
/// node exactly once.
class Tape {
public:
    /// Register a parameter leaf. backward() adds dLoss/dleaf into t.grad.
    Var leaf(Tensor& t);

    /// Register a constant (no gradient tracked).
    Var constant(Eigen::MatrixXd v);

    /// Reverse sweep from a scalar (1x1) node. Throws NotScalar otherwise.
    /// Node gradients are reset at entry, so each call contributes exactly one
    /// dLoss/dparam into every registered Tensor's grad buffer.
    void backward(Var loss);

    int size() const { return static_cast<int>(nodes_.size()); }

    // Internal node access, used by the op implementations.
    struct Node {
        Eigen::MatrixXd value;
        Eigen::MatrixXd grad;  // allocated lazily during backward
        bool needs_grad = false;
        std::function<void(Tape&, const Node&)> backprop;
        Tensor* param = nullptr;
    };
    Node& node(int id) { return nodes_[id]; }
    const Node& node(int id) const { return nodes_[id]; }
    Var emplace(Eigen::MatrixXd value, bool needs_grad,
                std::function<void(Tape&, const Node&)> backprop);
    Eigen::MatrixXd& grad_buffer(int id);

private:
    std::vector<Node> nodes_;
};

// ---- op set -----------------------------------------------------------------
// Binary elementwise ops accept equal shapes, or broadcast the right operand
// when it is 1x1 or a 1xN row against an MxN left operand.

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);  // elementwise product
Var div(Var a, Var b);
Var cmul(Var a, double c);  // multiply by a fixed constant
Var relu(Var a);
Var sigmoid(Var a);
Var log(Var a);
Var softmax_rows(Var a);
Var mean_all(Var a);   // 1x1
Var sum_all(Var a);    // 1x1
Var mean_rows(Var a);  // column means, 1xN
Var hstack(Var a, Var b);
Var slice_cols(Var a, int start, int len);

/// out.row(e) = a.row(index[e]). Adjoint of scatter_add_rows.
Var gather_rows(Var a, std::vector<int> index);

/// out = zeros(n_rows, cols); out.row(index[e]) += a.row(e).
Var scatter_add_rows(Var a, std::vector<int> index, int n_rows);

/// out.row(r) = coeffs[r] * a.row(r) with fixed (non-learnable) coefficients.
Var scale_rows(Var a, Eigen::VectorXd coeffs);

/// Largest k entries of a 1xM row, ordered by descending value with ties
/// broken by lower index. Indices are not differentiable; gradients flow to
/// the selected entries only.
struct TopK {
    Var values;  // 1xk
    std::vector<int> indices;
};
TopK top_k(Var row, int k);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

}  // namespace mmpg::ad
