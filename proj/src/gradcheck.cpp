#include "mmpg/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace mmpg::ad {

GradCheckResult finite_difference_check(const std::function<double()>& loss_value,
                                        const std::function<void()>& accumulate_grads,
                                        const std::vector<Tensor*>& params, double eps,
                                        int max_coords_per_tensor, uint64_t seed,
                                        int min_total_coords) {
    for (Tensor* p : params) p->zero_grad();
    accumulate_grads();

    int per_tensor = max_coords_per_tensor;
    if (per_tensor > 0 && min_total_coords > 0) {
        int n_grad_tensors = 0;
        for (const Tensor* p : params) n_grad_tensors += p->requires_grad ? 1 : 0;
        if (n_grad_tensors > 0) {
            per_tensor = std::max(per_tensor,
                                  (min_total_coords + n_grad_tensors - 1) / n_grad_tensors);
        }
    }

    std::mt19937_64 rng(seed);
    GradCheckResult result;
    for (Tensor* p : params) {
        if (!p->requires_grad) continue;
        const int n = static_cast<int>(p->value.size());
        std::vector<int> coords(static_cast<size_t>(n));
        std::iota(coords.begin(), coords.end(), 0);
        if (per_tensor > 0 && n > per_tensor) {
            // Deterministic partial Fisher-Yates; keep the first per_tensor picks.
            for (int i = 0; i < per_tensor; ++i) {
                const int j = i + static_cast<int>(rng() % static_cast<uint64_t>(n - i));
                std::swap(coords[static_cast<size_t>(i)], coords[static_cast<size_t>(j)]);
            }
            coords.resize(static_cast<size_t>(per_tensor));
        }

        double* data = p->value.data();
        const double* grad = p->grad.data();
        for (int c : coords) {
            const double saved = data[c];
            data[c] = saved + eps;
            const double up = loss_value();
            data[c] = saved - eps;
            const double down = loss_value();
            data[c] = saved;

            const double fd = (up - down) / (2.0 * eps);
            const double ad = grad[c];
            const double rel = std::abs(ad - fd) / std::max({1.0, std::abs(ad), std::abs(fd)});
            ++result.coords_checked;
            if (rel > result.max_rel_err) {
                result.max_rel_err = rel;
                result.worst_tensor = p->name;
                result.worst_row = static_cast<int>(c % p->value.rows());
                result.worst_col = static_cast<int>(c / p->value.rows());
                result.worst_analytic = ad;
                result.worst_numeric = fd;
            }
        }
    }
    return result;
}

}  // namespace mmpg::ad
