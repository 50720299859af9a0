#pragma once

#include <cmath>
#include <functional>
#include <vector>

namespace testsupport {

/// Central finite differences of a scalar function of a flat vector.
inline std::vector<double> central_diff(
    const std::function<double(const std::vector<double>&)>& f, std::vector<double> x,
    double h = 1e-5) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double xi = x[i];
        x[i] = xi + h;
        const double fp = f(x);
        x[i] = xi - h;
        const double fm = f(x);
        x[i] = xi;
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

/// Max relative error over coordinates whose magnitude exceeds `floor` on
/// either side; small-magnitude coordinates are skipped.
inline double max_rel_error(const std::vector<double>& analytic,
                            const std::vector<double>& numeric, double floor = 1e-8) {
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double scale = std::max(std::fabs(analytic[i]), std::fabs(numeric[i]));
        if (scale <= floor) continue;
        worst = std::max(worst, std::fabs(analytic[i] - numeric[i]) / scale);
    }
    return worst;
}

}  // namespace testsupport
