#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

namespace rsc {

// Least-squares line fit for log-log convergence diagnostics. Slope
// certifications require at least 4 scales; fits with fewer points carry no
// confidence half-width.
struct SlopeFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 1.0;
    int scales = 0;
    double half_width = 0.0;  // ~95% confidence half-width of the slope

    bool certifiable() const { return scales >= 4; }
};

inline SlopeFit fit_line(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw std::invalid_argument("fit_line: size mismatch");
    size_t n = x.size();
    if (n < 2) throw std::invalid_argument("fit_line: need at least 2 points");
    double mx = 0, my = 0;
    for (size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxx = 0, sxy = 0, syy = 0;
    for (size_t i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx <= 0.0) throw std::invalid_argument("fit_line: coincident abscissae");
    SlopeFit f;
    f.scales = static_cast<int>(n);
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    double ss_res = 0;
    for (size_t i = 0; i < n; ++i) {
        double e = y[i] - (f.intercept + f.slope * x[i]);
        ss_res += e * e;
    }
    f.r2 = syy > 0 ? 1.0 - ss_res / syy : 1.0;
    if (n > 2) {
        double se = std::sqrt(ss_res / (static_cast<double>(n) - 2.0) / sxx);
        f.half_width = 2.0 * se;
    }
    return f;
}

// regression of log(error) against log(scale); zero errors are skipped
inline SlopeFit regression_slope(std::span<const double> scales, std::span<const double> errors) {
    std::vector<double> lx, ly;
    for (size_t i = 0; i < scales.size(); ++i) {
        if (errors[i] > 0.0) {
            lx.push_back(std::log(scales[i]));
            ly.push_back(std::log(errors[i]));
        }
    }
    return fit_line(lx, ly);
}

}  // namespace rsc
