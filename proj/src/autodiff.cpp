#include "mmpg/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mmpg/errors.hpp"

namespace mmpg::ad {

namespace {

void require(bool cond, const std::string& what) {
    if (!cond) throw ShapeMismatch(what);
}

std::string dims(const Eigen::MatrixXd& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

enum class Broadcast { None, Scalar, Row };

Broadcast broadcast_kind(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, const char* op) {
    if (a.rows() == b.rows() && a.cols() == b.cols()) return Broadcast::None;
    if (b.rows() == 1 && b.cols() == 1) return Broadcast::Scalar;
    if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::Row;
    throw ShapeMismatch(std::string(op) + ": " + dims(a) + " vs " + dims(b));
}

Eigen::MatrixXd expand(const Eigen::MatrixXd& b, Broadcast k, Eigen::Index rows, Eigen::Index cols) {
    switch (k) {
        case Broadcast::None: return b;
        case Broadcast::Scalar: return Eigen::MatrixXd::Constant(rows, cols, b(0, 0));
        case Broadcast::Row: return b.replicate(rows, 1);
    }
    return b;
}

// Reduce a full-shape gradient back onto the (possibly broadcast) right operand.
Eigen::MatrixXd reduce(const Eigen::MatrixXd& g, Broadcast k) {
    switch (k) {
        case Broadcast::None: return g;
        case Broadcast::Scalar: return Eigen::MatrixXd::Constant(1, 1, g.sum());
        case Broadcast::Row: return g.colwise().sum();
    }
    return g;
}

}  // namespace

const Eigen::MatrixXd& Var::value() const { return tape->node(id).value; }

Var Tape::emplace(Eigen::MatrixXd value, bool needs_grad,
                  std::function<void(Tape&, const Node&)> backprop) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    n.backprop = std::move(backprop);
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Eigen::MatrixXd& Tape::grad_buffer(int id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) n.grad = Eigen::MatrixXd::Zero(n.value.rows(), n.value.cols());
    return n.grad;
}

Var Tape::leaf(Tensor& t) {
    Var v = emplace(t.value, t.requires_grad, nullptr);
    nodes_[v.id].param = &t;
    return v;
}

Var Tape::constant(Eigen::MatrixXd v) { return emplace(std::move(v), false, nullptr); }

void Tape::backward(Var loss) {
    if (!loss.valid() || loss.tape != this) throw NotScalar("backward: var not on this tape");
    const Node& ln = nodes_[loss.id];
    if (ln.value.rows() != 1 || ln.value.cols() != 1) {
        throw NotScalar("backward: loss has shape " + dims(ln.value));
    }
    for (Node& n : nodes_) n.grad.resize(0, 0);
    grad_buffer(loss.id)(0, 0) = 1.0;

    for (int id = loss.id; id >= 0; --id) {
        Node& n = nodes_[id];
        if (!n.needs_grad || n.grad.size() == 0) continue;
        if (n.backprop) n.backprop(*this, n);
        if (n.param != nullptr && n.param->requires_grad) n.param->grad += n.grad;
    }
}

namespace {

// Shorthand for building a unary elementwise op.
template <typename Fwd, typename Bwd>
Var unary_op(Var a, Fwd&& fwd, Bwd&& bwd) {
    Tape& t = *a.tape;
    const Tape::Node& an = t.node(a.id);
    Eigen::MatrixXd out = fwd(an.value);
    if (!an.needs_grad) return t.emplace(std::move(out), false, nullptr);
    const int aid = a.id;
    return t.emplace(std::move(out), true, [aid, bwd](Tape& tp, const Tape::Node& self) {
        tp.grad_buffer(aid) += bwd(tp.node(aid).value, self.value, self.grad);
    });
}

}  // namespace

Var matmul(Var a, Var b) {
    Tape& t = *a.tape;
    const Eigen::MatrixXd& av = t.node(a.id).value;
    const Eigen::MatrixXd& bv = t.node(b.id).value;
    require(av.cols() == bv.rows(), "matmul: " + dims(av) + " * " + dims(bv));
    Eigen::MatrixXd out = av * bv;
    const bool ng = t.node(a.id).needs_grad || t.node(b.id).needs_grad;
    if (!ng) return t.emplace(std::move(out), false, nullptr);
    const int aid = a.id, bid = b.id;
    return t.emplace(std::move(out), true, [aid, bid](Tape& tp, const Tape::Node& self) {
        if (tp.node(aid).needs_grad) tp.grad_buffer(aid) += self.grad * tp.node(bid).value.transpose();
        if (tp.node(bid).needs_grad) tp.grad_buffer(bid) += tp.node(aid).value.transpose() * self.grad;
    });
}

namespace {

template <typename Fwd, typename BwdA, typename BwdB>
Var binary_elementwise(Var a, Var b, const char* name, Fwd&& fwd, BwdA&& bwd_a, BwdB&& bwd_b) {
    Tape& t = *a.tape;
    const Eigen::MatrixXd& av = t.node(a.id).value;
    const Eigen::MatrixXd& bv = t.node(b.id).value;
    const Broadcast k = broadcast_kind(av, bv, name);
    Eigen::MatrixXd bx = expand(bv, k, av.rows(), av.cols());
    Eigen::MatrixXd out = fwd(av, bx);
    const bool ng = t.node(a.id).needs_grad || t.node(b.id).needs_grad;
    if (!ng) return t.emplace(std::move(out), false, nullptr);
    const int aid = a.id, bid = b.id;
    return t.emplace(std::move(out), true,
                     [aid, bid, k, bwd_a, bwd_b](Tape& tp, const Tape::Node& self) {
                         const Eigen::MatrixXd& av2 = tp.node(aid).value;
                         Eigen::MatrixXd bx2 = expand(tp.node(bid).value, k, av2.rows(), av2.cols());
                         if (tp.node(aid).needs_grad) tp.grad_buffer(aid) += bwd_a(self.grad, av2, bx2);
                         if (tp.node(bid).needs_grad)
                             tp.grad_buffer(bid) += reduce(bwd_b(self.grad, av2, bx2), k);
                     });
}

}  // namespace

Var add(Var a, Var b) {
    return binary_elementwise(
        a, b, "add", [](const auto& x, const auto& y) -> Eigen::MatrixXd { return x + y; },
        [](const Eigen::MatrixXd& g, const auto&, const auto&) -> Eigen::MatrixXd { return g; },
        [](const Eigen::MatrixXd& g, const auto&, const auto&) -> Eigen::MatrixXd { return g; });
}

Var sub(Var a, Var b) {
    return binary_elementwise(
        a, b, "sub", [](const auto& x, const auto& y) -> Eigen::MatrixXd { return x - y; },
        [](const Eigen::MatrixXd& g, const auto&, const auto&) -> Eigen::MatrixXd { return g; },
        [](const Eigen::MatrixXd& g, const auto&, const auto&) -> Eigen::MatrixXd { return -g; });
}

Var mul(Var a, Var b) {
    return binary_elementwise(
        a, b, "mul",
        [](const auto& x, const auto& y) -> Eigen::MatrixXd { return x.cwiseProduct(y); },
        [](const Eigen::MatrixXd& g, const auto&, const Eigen::MatrixXd& y) -> Eigen::MatrixXd {
            return g.cwiseProduct(y);
        },
        [](const Eigen::MatrixXd& g, const Eigen::MatrixXd& x, const auto&) -> Eigen::MatrixXd {
            return g.cwiseProduct(x);
        });
}

Var div(Var a, Var b) {
    return binary_elementwise(
        a, b, "div",
        [](const auto& x, const auto& y) -> Eigen::MatrixXd { return x.cwiseQuotient(y); },
        [](const Eigen::MatrixXd& g, const auto&, const Eigen::MatrixXd& y) -> Eigen::MatrixXd {
            return g.cwiseQuotient(y);
        },
        [](const Eigen::MatrixXd& g, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) -> Eigen::MatrixXd {
            return -(g.cwiseProduct(x)).cwiseQuotient(y.cwiseProduct(y));
        });
}

Var cmul(Var a, double c) {
    return unary_op(
        a, [c](const Eigen::MatrixXd& x) -> Eigen::MatrixXd { return c * x; },
        [c](const auto&, const auto&, const Eigen::MatrixXd& g) -> Eigen::MatrixXd { return c * g; });
}

Var relu(Var a) {
    return unary_op(
        a, [](const Eigen::MatrixXd& x) -> Eigen::MatrixXd { return x.cwiseMax(0.0); },
        [](const Eigen::MatrixXd& x, const auto&, const Eigen::MatrixXd& g) -> Eigen::MatrixXd {
            return g.cwiseProduct((x.array() > 0.0).cast<double>().matrix());
        });
}

Var sigmoid(Var a) {
    return unary_op(
        a,
        [](const Eigen::MatrixXd& x) -> Eigen::MatrixXd {
            return ((-x.array()).exp() + 1.0).inverse().matrix();
        },
        [](const auto&, const Eigen::MatrixXd& y, const Eigen::MatrixXd& g) -> Eigen::MatrixXd {
            return g.cwiseProduct((y.array() * (1.0 - y.array())).matrix());
        });
}

Var log(Var a) {
    return unary_op(
        a, [](const Eigen::MatrixXd& x) -> Eigen::MatrixXd { return x.array().log().matrix(); },
        [](const Eigen::MatrixXd& x, const auto&, const Eigen::MatrixXd& g) -> Eigen::MatrixXd {
            return g.cwiseQuotient(x);
        });
}

Var softmax_rows(Var a) {
    return unary_op(
        a,
        [](const Eigen::MatrixXd& x) -> Eigen::MatrixXd {
            Eigen::MatrixXd y(x.rows(), x.cols());
            for (Eigen::Index r = 0; r < x.rows(); ++r) {
                const double m = x.row(r).maxCoeff();
                Eigen::ArrayXd e = (x.row(r).array() - m).exp();
                y.row(r) = (e / e.sum()).matrix();
            }
            return y;
        },
        [](const auto&, const Eigen::MatrixXd& y, const Eigen::MatrixXd& g) -> Eigen::MatrixXd {
            Eigen::MatrixXd dx(y.rows(), y.cols());
            for (Eigen::Index r = 0; r < y.rows(); ++r) {
                const double dot = g.row(r).dot(y.row(r));
                dx.row(r) = y.row(r).cwiseProduct(g.row(r).array().matrix() -
                                                  Eigen::RowVectorXd::Constant(y.cols(), dot));
            }
            return dx;
        });
}

Var mean_all(Var a) {
    const double n = static_cast<double>(a.value().size());
    return unary_op(
        a,
        [](const Eigen::MatrixXd& x) -> Eigen::MatrixXd {
            return Eigen::MatrixXd::Constant(1, 1, x.mean());
        },
        [n](const Eigen::MatrixXd& x, const auto&, const Eigen::MatrixXd& g) -> Eigen::MatrixXd {
            return Eigen::MatrixXd::Constant(x.rows(), x.cols(), g(0, 0) / n);
        });
}

Var sum_all(Var a) {
    return unary_op(
        a,
        [](const Eigen::MatrixXd& x) -> Eigen::MatrixXd {
            return Eigen::MatrixXd::Constant(1, 1, x.sum());
        },
        [](const Eigen::MatrixXd& x, const auto&, const Eigen::MatrixXd& g) -> Eigen::MatrixXd {
            return Eigen::MatrixXd::Constant(x.rows(), x.cols(), g(0, 0));
        });
}

Var mean_rows(Var a) {
    const double n = static_cast<double>(a.value().rows());
    return unary_op(
        a,
        [](const Eigen::MatrixXd& x) -> Eigen::MatrixXd {
            return x.colwise().mean();
        },
        [n](const Eigen::MatrixXd& x, const auto&, const Eigen::MatrixXd& g) -> Eigen::MatrixXd {
            return g.replicate(x.rows(), 1) / n;
        });
}

Var hstack(Var a, Var b) {
    Tape& t = *a.tape;
    const Eigen::MatrixXd& av = t.node(a.id).value;
    const Eigen::MatrixXd& bv = t.node(b.id).value;
    require(av.rows() == bv.rows(), "hstack: " + dims(av) + " | " + dims(bv));
    Eigen::MatrixXd out(av.rows(), av.cols() + bv.cols());
    out << av, bv;
    const bool ng = t.node(a.id).needs_grad || t.node(b.id).needs_grad;
    if (!ng) return t.emplace(std::move(out), false, nullptr);
    const int aid = a.id, bid = b.id;
    const Eigen::Index ac = av.cols(), bc = bv.cols();
    return t.emplace(std::move(out), true, [aid, bid, ac, bc](Tape& tp, const Tape::Node& self) {
        if (tp.node(aid).needs_grad) tp.grad_buffer(aid) += self.grad.leftCols(ac);
        if (tp.node(bid).needs_grad) tp.grad_buffer(bid) += self.grad.rightCols(bc);
    });
}

Var slice_cols(Var a, int start, int len) {
    Tape& t = *a.tape;
    const Eigen::MatrixXd& av = t.node(a.id).value;
    require(start >= 0 && len >= 0 && start + len <= av.cols(),
            "slice_cols: [" + std::to_string(start) + "," + std::to_string(start + len) + ") of " + dims(av));
    Eigen::MatrixXd out = av.middleCols(start, len);
    if (!t.node(a.id).needs_grad) return t.emplace(std::move(out), false, nullptr);
    const int aid = a.id;
    return t.emplace(std::move(out), true, [aid, start, len](Tape& tp, const Tape::Node& self) {
        tp.grad_buffer(aid).middleCols(start, len) += self.grad;
    });
}

Var gather_rows(Var a, std::vector<int> index) {
    Tape& t = *a.tape;
    const Eigen::MatrixXd& av = t.node(a.id).value;
    for (int i : index) require(i >= 0 && i < av.rows(), "gather_rows: index out of range");
    Eigen::MatrixXd out(static_cast<Eigen::Index>(index.size()), av.cols());
    for (size_t e = 0; e < index.size(); ++e) out.row(static_cast<Eigen::Index>(e)) = av.row(index[e]);
    if (!t.node(a.id).needs_grad) return t.emplace(std::move(out), false, nullptr);
    const int aid = a.id;
    return t.emplace(std::move(out), true,
                     [aid, index = std::move(index)](Tape& tp, const Tape::Node& self) {
                         Eigen::MatrixXd& ga = tp.grad_buffer(aid);
                         for (size_t e = 0; e < index.size(); ++e)
                             ga.row(index[e]) += self.grad.row(static_cast<Eigen::Index>(e));
                     });
}

Var scatter_add_rows(Var a, std::vector<int> index, int n_rows) {
    Tape& t = *a.tape;
    const Eigen::MatrixXd& av = t.node(a.id).value;
    require(static_cast<Eigen::Index>(index.size()) == av.rows(),
            "scatter_add_rows: index size " + std::to_string(index.size()) + " vs " + dims(av));
    for (int i : index) require(i >= 0 && i < n_rows, "scatter_add_rows: index out of range");
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n_rows, av.cols());
    for (size_t e = 0; e < index.size(); ++e) out.row(index[e]) += av.row(static_cast<Eigen::Index>(e));
    if (!t.node(a.id).needs_grad) return t.emplace(std::move(out), false, nullptr);
    const int aid = a.id;
    return t.emplace(std::move(out), true,
                     [aid, index = std::move(index)](Tape& tp, const Tape::Node& self) {
                         Eigen::MatrixXd& ga = tp.grad_buffer(aid);
                         for (size_t e = 0; e < index.size(); ++e)
                             ga.row(static_cast<Eigen::Index>(e)) += self.grad.row(index[e]);
                     });
}

Var scale_rows(Var a, Eigen::VectorXd coeffs) {
    Tape& t = *a.tape;
    const Eigen::MatrixXd& av = t.node(a.id).value;
    require(coeffs.size() == av.rows(), "scale_rows: " + std::to_string(coeffs.size()) + " coeffs vs " + dims(av));
    Eigen::MatrixXd out = coeffs.asDiagonal() * av;
    if (!t.node(a.id).needs_grad) return t.emplace(std::move(out), false, nullptr);
    const int aid = a.id;
    return t.emplace(std::move(out), true,
                     [aid, coeffs = std::move(coeffs)](Tape& tp, const Tape::Node& self) {
                         tp.grad_buffer(aid) += coeffs.asDiagonal() * self.grad;
                     });
}

TopK top_k(Var row, int k) {
    Tape& t = *row.tape;
    const Eigen::MatrixXd& v = t.node(row.id).value;
    require(v.rows() == 1, "top_k: expected a 1xM row, got " + dims(v));
    require(k >= 1 && k <= v.cols(), "top_k: k=" + std::to_string(k) + " for M=" + std::to_string(v.cols()));

    std::vector<int> order(static_cast<size_t>(v.cols()));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&v](int x, int y) {
        if (v(0, x) != v(0, y)) return v(0, x) > v(0, y);
        return x < y;  // ties break toward the lower index
    });
    std::vector<int> selected(order.begin(), order.begin() + k);

    Eigen::MatrixXd out(1, k);
    for (int i = 0; i < k; ++i) out(0, i) = v(0, selected[i]);

    TopK result;
    result.indices = selected;
    if (!t.node(row.id).needs_grad) {
        result.values = t.emplace(std::move(out), false, nullptr);
        return result;
    }
    const int rid = row.id;
    result.values = t.emplace(std::move(out), true,
                              [rid, selected](Tape& tp, const Tape::Node& self) {
                                  Eigen::MatrixXd& g = tp.grad_buffer(rid);
                                  for (size_t i = 0; i < selected.size(); ++i)
                                      g(0, selected[i]) += self.grad(0, static_cast<Eigen::Index>(i));
                              });
    return result;
}

}  // namespace mmpg::ad
