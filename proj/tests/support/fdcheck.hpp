#pragma once

// Central-difference gradient checker. The loss is re-evaluated through a
// caller-supplied double-precision reference (refnet), so the finite
// difference itself carries no 32-bit forward noise; the analytic gradient
// under test comes from the float tape.

#include <cmath>
#include <functional>
#include <vector>

#include "cryda/tensor.hpp"

namespace fdcheck {

// |a - b| relative to the larger magnitude, floored so that near-zero
// gradients are compared absolutely at 1e-6 resolution.
inline double rel_err(double ad, double fd) {
    const double denom = std::max({0.01, std::abs(ad), std::abs(fd)});
    return std::abs(ad - fd) / denom;
}

struct Result {
    double max_rel_err = 0.0;
    bool finite = true;
};

// `params` are the tensors to perturb; their .grad must already hold the
// analytic gradients. `loss_ref` recomputes the loss in double from the
// tensors' current float contents.
inline Result check(const std::vector<cryda::ad::Tensor*>& params,
                    const std::function<double()>& loss_ref, float eps = 1e-3f,
                    double grad_factor = 1.0) {
    Result res;
    for (cryda::ad::Tensor* t : params) {
        for (std::size_t i = 0; i < t->data.size(); ++i) {
            const float saved = t->data[i];
            t->data[i] = saved + eps;
            const double hi = double(t->data[i]);
            const double lp = loss_ref();
            t->data[i] = saved - eps;
            const double lo = double(t->data[i]);
            const double lm = loss_ref();
            t->data[i] = saved;
            const double fd = grad_factor * (lp - lm) / (hi - lo);
            const double ad = t->grad.empty() ? 0.0 : double(t->grad[i]);
            if (!std::isfinite(ad) || !std::isfinite(fd)) res.finite = false;
            res.max_rel_err = std::max(res.max_rel_err, rel_err(ad, fd));
        }
    }
    return res;
}

}  // namespace fdcheck
