#pragma once

#include <stdexcept>
#include <vector>

namespace gradweave {

// Central-difference gradient of a scalar function of a flat parameter
// vector. Verification oracle only; O(2n) evaluations of f.
template <typename F>
std::vector<double> finite_diff_gradient(F&& f, const std::vector<double>& params, double step) {
    if (!(step > 0)) throw std::invalid_argument("finite_diff_gradient: step must be positive");
    std::vector<double> probe = params;
    std::vector<double> grad(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
        probe[i] = params[i] + step;
        const double hi = f(probe);
        probe[i] = params[i] - step;
        const double lo = f(probe);
        probe[i] = params[i];
        grad[i] = (hi - lo) / (2.0 * step);
    }
    return grad;
}

}  // namespace gradweave
