#ifndef CSILOC_GRAD_CHECK_HPP
#define CSILOC_GRAD_CHECK_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "csiloc/tensor.hpp"

// Finite-difference oracle for reverse-mode gradients. The loss closure must
// rebuild its graph from the current parameter values on every call; analytic
// gradients from one backward pass are compared against central differences
// computed with recording disabled. Meaningful tolerances require R = double.

namespace csiloc {

struct GradCheckReport {
    double max_abs_err = 0;   // worst |analytic - numeric|
    double max_rel_err = 0;   // worst |a-n| / max(1, |a|, |n|)
    std::size_t coords = 0;   // coordinates probed
};

template <typename R>
GradCheckReport grad_check(const std::function<Tensor<R>()> &loss_fn,
                           std::vector<Tensor<R>> params, double h = 1e-5) {
    for (auto &p : params) p.zero_grad();
    Tensor<R> loss = loss_fn();
    backward(loss);

    std::vector<std::vector<R>> analytic;
    analytic.reserve(params.size());
    for (auto &p : params) analytic.push_back(p.grad());

    GradCheckReport rep;
    NoGradGuard guard;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto &vals = params[pi].values();
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const R saved = vals[i];
            vals[i] = saved + static_cast<R>(h);
            const double up = double(loss_fn().scalar());
            vals[i] = saved - static_cast<R>(h);
            const double dn = double(loss_fn().scalar());
            vals[i] = saved;
            const double numeric = (up - dn) / (2.0 * h);
            const double a = double(analytic[pi][i]);
            const double abs_err = std::abs(a - numeric);
            const double rel_err = abs_err / std::max({1.0, std::abs(a), std::abs(numeric)});
            rep.max_abs_err = std::max(rep.max_abs_err, abs_err);
            rep.max_rel_err = std::max(rep.max_rel_err, rel_err);
            ++rep.coords;
        }
    }
    return rep;
}

} // namespace csiloc

#endif
