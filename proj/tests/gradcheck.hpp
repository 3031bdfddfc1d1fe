#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "crayon/autograd.hpp"

namespace testutil {

using crayon::Tensor;
using crayon::ag::Var;

inline Tensor random_tensor(crayon::Dims dims, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    Tensor t(std::move(dims));
    for (auto& v : t.values()) v = d(rng);
    return t;
}

struct GradCheck {
    double max_rel = 0.0;
    std::size_t checked = 0;
    std::size_t within = 0;
};

// Central differences on every entry of every parameter. rel = |a-n| / max(|a|,|n|,floor).
inline GradCheck check_gradients(const std::function<Var()>& f, const std::vector<Var>& params, double eps = 1e-5,
                                 double tol = 1e-3, double floor = 1e-6) {
    const Var out = f();
    const auto grads = crayon::ag::grad(out, params);
    GradCheck r;
    for (std::size_t p = 0; p < params.size(); ++p) {
        Var param = params[p];
        Tensor& value = param.mutable_value();
        for (std::size_t i = 0; i < value.size(); ++i) {
            const double saved = value[i];
            value[i] = saved + eps;
            const double fp = f().value()[0];
            value[i] = saved - eps;
            const double fm = f().value()[0];
            value[i] = saved;
            const double numeric = (fp - fm) / (2 * eps);
            const double analytic = grads[p].value()[i];
            const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
            r.max_rel = std::max(r.max_rel, rel);
            ++r.checked;
            if (rel <= tol) ++r.within;
        }
    }
    return r;
}

}  // namespace testutil
