#pragma once

#include <Eigen/Dense>
#include <vector>

#include "mmpg/autodiff.hpp"

namespace mmpg::ad {

/// SGD with classical momentum and decoupled-from-nothing L2 weight decay:
///   v <- momentum * v + (grad + weight_decay * param)
///   param <- param - lr * v
struct SgdMomentum {
    double lr = 1e-2;
    double momentum = 0.9;
    double weight_decay = 5e-4;

    void step(const std::vector<Tensor*>& params);

private:
    std::vector<Eigen::MatrixXd> velocity_;
};

/// Step-decay schedule: lr is multiplied by `factor` once 60% and again 85%
/// of the way through training.
struct MultiStepLr {
    double base_lr = 1e-2;
    int total_epochs = 50;
    double factor = 0.1;

    double at_epoch(int epoch) const {
        const int m1 = static_cast<int>(0.60 * total_epochs);
        const int m2 = static_cast<int>(0.85 * total_epochs);
        double lr = base_lr;
        if (epoch >= m1) lr *= factor;
        if (epoch >= m2) lr *= factor;
        return lr;
    }
};

}  // namespace mmpg::ad
