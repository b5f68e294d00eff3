#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mmpg/autodiff.hpp"

namespace mmpg::ad {

struct GradCheckResult {
    double max_rel_err = 0.0;
    int coords_checked = 0;
    std::string worst_tensor;
    int worst_row = -1, worst_col = -1;
    double worst_analytic = 0.0, worst_numeric = 0.0;

    bool passed(double tol) const { return max_rel_err <= tol; }
};

/// Central finite-difference check of dLoss/dparam for every listed tensor.
///
/// `loss_value` must recompute the scalar objective from the tensors' current
/// values (a fresh tape each call). `accumulate_grads` must run one
/// forward+backward, adding gradients into each tensor's grad buffer.
///
/// Relative error uses a unit floor: |ad - fd| / max(1, |ad|, |fd|).
/// At most `max_coords_per_tensor` coordinates per tensor are tested
/// (0 = all), chosen deterministically from `seed`; `min_total_coords`
/// raises the per-tensor budget until the total sample is large enough.
GradCheckResult finite_difference_check(
    const std::function<double()>& loss_value,
    const std::function<void()>& accumulate_grads,
    const std::vector<Tensor*>& params,
    double eps = 1e-5,
    int max_coords_per_tensor = 0,
    uint64_t seed = 0,
    int min_total_coords = 0);

}  // namespace mmpg::ad
