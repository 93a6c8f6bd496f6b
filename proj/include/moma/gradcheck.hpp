// Central finite-difference verification of tape gradients.
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "moma/tensor.hpp"

namespace moma {

// Loss builders must be deterministic and re-evaluable: every call must
// recompute the same scalar from the current parameter values.
using LossFn = std::function<Tensor()>;

struct GradCheckResult {
    std::string name;
    double max_rel_err = 0.0;
    size_t checked = 0;
    bool pass(double tol) const { return max_rel_err < tol; }
};

// Analytic tape gradient vs central differences at +-eps, elementwise
// rel err = |a - n| / max(1, |n|).
inline GradCheckResult gradcheck(const std::string& name, const LossFn& loss,
                                 const std::vector<Tensor>& params, double eps = 1e-5) {
    GradCheckResult res;
    res.name = name;

    std::vector<std::vector<double>> analytic;
    {
        for (const Tensor& p : params) {
            Tensor t = p;
            t.grad_mut();
            t.zero_grad();
        }
        TapeScope scope;
        Tensor l = loss();
        scope.tape.backward(l);
        for (const Tensor& p : params)
            analytic.emplace_back(p.grad().begin(), p.grad().end());
    }

    NoGradScope ng;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Tensor p = params[pi];
        for (size_t i = 0; i < p.size(); ++i) {
            const double saved = p.at(i);
            p.mut()[i] = saved + eps;
            const double lp = loss().item();
            p.mut()[i] = saved - eps;
            const double lm = loss().item();
            p.mut()[i] = saved;
            const double numeric = (lp - lm) / (2.0 * eps);
            const double a = analytic[pi][i];
            const double err = std::abs(a - numeric) / std::max(1.0, std::abs(numeric));
            res.max_rel_err = std::max(res.max_rel_err, err);
            ++res.checked;
        }
    }
    return res;
}

}  // namespace moma
