#pragma once

// Shared test helpers: finite-difference oracles and random box generation.
// Everything here is independent of the analytic-derivative code it checks.

#include <cmath>
#include <functional>
#include <vector>

#include "cbox/box.hpp"
#include "cbox/rng.hpp"

namespace testsupport {

// Central finite difference of a scalar function of one coordinate.
inline double central_diff(const std::function<double(double)>& f, double x, double h = 1e-5) {
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

// Relative error with an absolute floor masking central-difference noise
// (~1e-11 at h=1e-5 on O(1) values).
inline double rel_err(double got, double want, double atol = 1e-9) {
    const double diff = std::fabs(got - want);
    if (diff <= atol) {
        return 0.0;
    }
    return diff / std::max({std::fabs(got), std::fabs(want), atol});
}

inline cbox::Box random_box(cbox::Rng& rng, int d, double min_lo = -1.0, double min_hi = 1.0,
                            double delta_lo = 0.05, double delta_hi = 1.5) {
    std::vector<double> mn(static_cast<std::size_t>(d));
    std::vector<double> dl(static_cast<std::size_t>(d));
    for (int i = 0; i < d; ++i) {
        mn[static_cast<std::size_t>(i)] = rng.uniform(min_lo, min_hi);
        dl[static_cast<std::size_t>(i)] = rng.uniform(delta_lo, delta_hi);
    }
    return cbox::Box(std::move(mn), std::move(dl));
}

// FD gradient of f with respect to every (min, delta) coordinate of `box`,
// mutating a copy coordinate by coordinate.
inline cbox::BoxGrad fd_box_grad(const std::function<double(const cbox::Box&)>& f,
                                 const cbox::Box& box, double h = 1e-5) {
    cbox::BoxGrad g(box.dim());
    cbox::Box work = box;
    for (int i = 0; i < box.dim(); ++i) {
        const double m0 = work.min[static_cast<std::size_t>(i)];
        work.min[static_cast<std::size_t>(i)] = m0 + h;
        const double fp = f(work);
        work.min[static_cast<std::size_t>(i)] = m0 - h;
        const double fm = f(work);
        work.min[static_cast<std::size_t>(i)] = m0;
        g.min[static_cast<std::size_t>(i)] = (fp - fm) / (2.0 * h);

        const double d0 = work.delta[static_cast<std::size_t>(i)];
        work.delta[static_cast<std::size_t>(i)] = d0 + h;
        const double gp = f(work);
        work.delta[static_cast<std::size_t>(i)] = d0 - h;
        const double gm = f(work);
        work.delta[static_cast<std::size_t>(i)] = d0;
        g.delta[static_cast<std::size_t>(i)] = (gp - gm) / (2.0 * h);
    }
    return g;
}

// True when any per-dimension boundary of a and b ties (FD is one-sided there).
inline bool has_boundary_tie(const cbox::Box& a, const cbox::Box& b, double tol = 1e-4) {
    for (int i = 0; i < a.dim(); ++i) {
        if (std::fabs(a.max(i) - b.max(i)) < tol) return true;
        if (std::fabs(a.min[static_cast<std::size_t>(i)] - b.min[static_cast<std::size_t>(i)]) < tol) return true;
    }
    return false;
}

}  // namespace testsupport
