#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "mise/autodiff.hpp"

namespace mise {

/// Builds a scalar loss on a graph bound to some ParamSet.
using LossBuilder = std::function<Var(Graph&)>;

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    std::size_t coordinates = 0;
};

inline double evaluate_loss(const LossBuilder& loss_fn, const ParamSet& params) {
    Graph g(&params);
    return loss_fn(g).item();
}

/// Compares backward() against central differences at every coordinate:
///   max |analytic - numeric| / max(1, |numeric|).
inline GradCheckReport grad_check_report(const LossBuilder& loss_fn, const ParamSet& params, double eps = 1e-5) {
    if (!(eps > 0.0)) throw UsageError("grad_check: eps must be positive");
    ParamSet analytic;
    {
        Graph g(&params);
        analytic = g.backward(loss_fn(g));
    }

    GradCheckReport report;
    ParamSet work = params;
    for (auto& [name, tensor] : work) {
        const Tensor& grad = analytic.at(name);
        for (std::size_t i = 0; i < tensor.size(); ++i) {
            const double saved = tensor[i];
            tensor[i] = saved + eps;
            const double up = evaluate_loss(loss_fn, work);
            tensor[i] = saved - eps;
            const double down = evaluate_loss(loss_fn, work);
            tensor[i] = saved;
            if (!std::isfinite(up) || !std::isfinite(down))
                throw NumericError("grad_check: loss non-finite when perturbing " + name + "[" + std::to_string(i) + "]");
            const double numeric = (up - down) / (2.0 * eps);
            const double err = std::abs(grad[i] - numeric) / std::max(1.0, std::abs(numeric));
            ++report.coordinates;
            if (report.coordinates == 1 || err > report.max_rel_error) {
                report.max_rel_error = err;
                report.worst_param = name;
                report.worst_index = i;
                report.analytic = grad[i];
                report.numeric = numeric;
            }
        }
    }
    return report;
}

inline double grad_check(const LossBuilder& loss_fn, const ParamSet& params, double eps = 1e-5) {
    return grad_check_report(loss_fn, params, eps).max_rel_error;
}

} // namespace mise
