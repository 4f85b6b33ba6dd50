// Copyright (c) 2026 dsd authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>

#include "dsd/tensor.hpp"

namespace dsd {

struct GradCheckReport {
    double max_rel_err = 0.0;
    bool pass = false;
    std::string worst_param;      // entry holding the worst coordinate
    std::size_t worst_index = 0;  // flat index within that entry
};

// Central-difference verification of reverse-mode gradients over every
// non-frozen coordinate. Relative error uses max(|analytic|, |numeric|, 1e-8)
// as denominator so near-zero gradients do not blow up the ratio.
inline GradCheckReport finite_diff_check(const LossFn& f, const ParamSet& p, double eps,
                                         double tol) {
    if (eps <= 0.0) throw ConfigError("finite_diff_check: eps must be positive");
    auto analytic = grad(f, p);

    GradCheckReport report;
    for (const auto& [name, g] : analytic) {
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double fp = f(p.with_perturbed(name, i, eps)).value();
            const double fm = f(p.with_perturbed(name, i, -eps)).value();
            const double numeric = (fp - fm) / (2.0 * eps);
            const double a = g.data()[i];
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
            const double rel = std::abs(a - numeric) / denom;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst_param = name;
                report.worst_index = i;
            }
        }
    }
    report.pass = report.max_rel_err <= tol;
    return report;
}

}  // namespace dsd
