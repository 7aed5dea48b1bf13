#pragma once

#include <functional>
#include <unordered_set>

#include "obn/layers.hpp"

namespace obn {

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0;
    bool pass = true;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double worst = 0;
    bool all_pass = true;
};

/// Central-difference check of analytic gradients. `loss` re-evaluates the
/// scalar objective from current parameter values; each Param's grad buffer
/// must already hold the analytic gradient. Aliased parameters are checked
/// once. Relative error is |analytic − numeric| / max(1, |numeric|).
inline GradCheckReport gradcheck_params(const std::vector<ParamPtr<double>>& params,
                                        const std::function<double()>& loss, double h = 1e-5,
                                        double tol = 1e-6) {
    GradCheckReport rep;
    std::unordered_set<Param<double>*> seen;
    for (const auto& p : params) {
        if (!p || !seen.insert(p.get()).second) continue;
        GradCheckEntry e;
        e.name = p->name;
        for (size_t i = 0; i < p->value.size(); ++i) {
            const double keep = p->value[i];
            p->value[i] = keep + h;
            const double lp = loss();
            p->value[i] = keep - h;
            const double lm = loss();
            p->value[i] = keep;
            const double numeric = (lp - lm) / (2 * h);
            const double rel = std::abs(p->grad[i] - numeric) / std::max(1.0, std::abs(numeric));
            e.max_rel_err = std::max(e.max_rel_err, rel);
        }
        e.pass = e.max_rel_err < tol;
        rep.worst = std::max(rep.worst, e.max_rel_err);
        rep.all_pass = rep.all_pass && e.pass;
        rep.entries.push_back(std::move(e));
    }
    return rep;
}

} // namespace obn
