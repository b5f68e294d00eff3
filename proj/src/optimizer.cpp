#include "mmpg/optimizer.hpp"

#include "mmpg/errors.hpp"

namespace mmpg::ad {

void SgdMomentum::step(const std::vector<Tensor*>& params) {
    if (velocity_.empty()) {
        velocity_.reserve(params.size());
        for (const Tensor* p : params)
            velocity_.emplace_back(Eigen::MatrixXd::Zero(p->value.rows(), p->value.cols()));
    }
    if (velocity_.size() != params.size()) {
        throw ShapeMismatch("SgdMomentum: parameter list changed size");
    }
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols() ||
            velocity_[i].rows() != p.value.rows() || velocity_[i].cols() != p.value.cols()) {
            throw ShapeMismatch("SgdMomentum: shape mismatch for " + p.name);
        }
        velocity_[i] = momentum * velocity_[i] + (p.grad + weight_decay * p.value);
        p.value -= lr * velocity_[i];
    }
}

}  // namespace mmpg::ad
