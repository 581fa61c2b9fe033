#include "cbox/box.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace cbox {

namespace {

void check_same_dim(int a, int b, const char* what) {
    if (a != b) {
        throw std::domain_error(std::string(what) + ": dimension mismatch (" +
                                std::to_string(a) + " vs " + std::to_string(b) + ")");
    }
}

void check_finite(double x, const char* what) {
    if (!std::isfinite(x)) {
        throw std::domain_error(std::string(what) + ": non-finite input");
    }
}

}  // namespace

Box::Box(std::vector<double> mn, std::vector<double> dl)
    : min(std::move(mn)), delta(std::move(dl)) {
    if (min.size() != delta.size()) {
        throw std::domain_error("Box: min/delta length mismatch");
    }
}

void Box::validate() const {
    if (min.size() != delta.size()) {
        throw std::domain_error("Box: min/delta length mismatch");
    }
    for (int i = 0; i < dim(); ++i) {
        if (!std::isfinite(min[i]) || !std::isfinite(delta[i])) {
            throw std::domain_error("Box: non-finite coordinate");
        }
        if (delta[i] < 0.0) {
            throw std::domain_error("Box: negative delta at dimension " + std::to_string(i));
        }
    }
}

void GlobalExtrema::validate() const {
    if (gmin.size() != gmax.size()) {
        throw std::domain_error("GlobalExtrema: gmin/gmax length mismatch");
    }
    for (int i = 0; i < dim(); ++i) {
        if (!std::isfinite(gmin[i]) || !std::isfinite(gmax[i])) {
            throw std::domain_error("GlobalExtrema: non-finite coordinate");
        }
        if (gmax[i] < gmin[i]) {
            throw std::domain_error("GlobalExtrema: gmax < gmin at dimension " + std::to_string(i));
        }
    }
}

void KnowledgeSpaceConfig::validate() const {
    if (dim < 1) {
        throw std::invalid_argument("KnowledgeSpaceConfig: dim must be >= 1");
    }
    if (!(prob_clamp_eps > 0.0 && prob_clamp_eps < 0.5)) {
        throw std::invalid_argument("KnowledgeSpaceConfig: prob_clamp_eps must lie in (0, 0.5)");
    }
}

void BoxGrad::reset() {
    std::fill(min.begin(), min.end(), 0.0);
    std::fill(delta.begin(), delta.end(), 0.0);
}

// ---------------------------------------------------------------------------
// Scalar kernels
// ---------------------------------------------------------------------------

double softplus(double x) {
    if (x > 0.0) {
        return x + std::log1p(std::exp(-x));
    }
    return std::log1p(std::exp(x));
}

double logistic(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double log_softplus(double x) {
    // softplus(x) -> e^x as x -> -inf; switch before log(softplus) underflows.
    if (x < -30.0) {
        return x;
    }
    return std::log(softplus(x));
}

double d_log_softplus(double x) {
    if (x < -30.0) {
        return 1.0;  // logistic(x)/softplus(x) -> 1 from below
    }
    return logistic(x) / softplus(x);
}

double soft_length(double width, double norm_width) {
    check_finite(width, "soft_length");
    check_finite(norm_width, "soft_length");
    if (norm_width < 0.0) {
        throw std::domain_error("soft_length: norm_width must be >= 0");
    }
    return std::exp(log_softplus(width) - log_softplus(norm_width));
}

double clamp_prob(double p, double eps) {
    return std::min(std::max(p, eps), 1.0 - eps);
}

// ---------------------------------------------------------------------------
// Box measures
// ---------------------------------------------------------------------------

double log_measure(const Box& box, const GlobalExtrema& extrema) {
    check_same_dim(box.dim(), extrema.dim(), "log_measure");
    double width_sum = 0.0;
    double span_sum = 0.0;
    for (int i = 0; i < box.dim(); ++i) {
        width_sum += log_softplus(box.max(i) - box.min[i]);
        span_sum += log_softplus(extrema.span(i));
    }
    return width_sum - span_sum;
}

double log_joint(const Box& a, const Box& b, const GlobalExtrema& extrema) {
    check_same_dim(a.dim(), b.dim(), "log_joint");
    check_same_dim(a.dim(), extrema.dim(), "log_joint");
    double width_sum = 0.0;
    double span_sum = 0.0;
    for (int i = 0; i < a.dim(); ++i) {
        const double upper = std::min(a.max(i), b.max(i));
        const double lower = std::max(a.min[i], b.min[i]);
        width_sum += log_softplus(upper - lower);
        span_sum += log_softplus(extrema.span(i));
    }
    return width_sum - span_sum;
}

double log_entailment(const Box& a, const Box& b, const GlobalExtrema& extrema) {
    return log_joint(a, b, extrema) - log_measure(b, extrema);
}

double entailment(const Box& a, const Box& b, const GlobalExtrema& extrema, double eps) {
    return clamp_prob(std::exp(log_entailment(a, b, extrema)), eps);
}

// ---------------------------------------------------------------------------
// Analytic derivatives
// ---------------------------------------------------------------------------

BoxGrad d_log_measure(const Box& box, const GlobalExtrema& extrema) {
    check_same_dim(box.dim(), extrema.dim(), "d_log_measure");
    BoxGrad g(box.dim());
    add_d_log_measure(box, 1.0, g);
    return g;
}

void add_d_log_measure(const Box& box, double w, BoxGrad& grad) {
    for (int i = 0; i < box.dim(); ++i) {
        // width = (min + delta) - min moves only with delta
        grad.delta[i] += w * d_log_softplus(box.max(i) - box.min[i]);
    }
}

void d_log_joint(const Box& a, const Box& b, const GlobalExtrema& extrema,
                 BoxGrad& grad_a, BoxGrad& grad_b) {
    check_same_dim(a.dim(), b.dim(), "d_log_joint");
    check_same_dim(a.dim(), extrema.dim(), "d_log_joint");
    grad_a = BoxGrad(a.dim());
    grad_b = BoxGrad(b.dim());
    add_d_log_joint(a, b, 1.0, grad_a, grad_b);
}

void add_d_log_joint(const Box& a, const Box& b, double w,
                     BoxGrad& grad_a, BoxGrad& grad_b) {
    check_same_dim(a.dim(), b.dim(), "add_d_log_joint");
    for (int i = 0; i < a.dim(); ++i) {
        const double amax = a.max(i);
        const double bmax = b.max(i);
        const double upper = std::min(amax, bmax);
        const double lower = std::max(a.min[i], b.min[i]);
        const double s = w * d_log_softplus(upper - lower);
        // Upper boundary: at a tie box a's branch is active.
        if (amax <= bmax) {
            grad_a.min[i] += s;
            grad_a.delta[i] += s;
        } else {
            grad_b.min[i] += s;
            grad_b.delta[i] += s;
        }
        // Lower boundary, same tie rule.
        if (a.min[i] >= b.min[i]) {
            grad_a.min[i] -= s;
        } else {
            grad_b.min[i] -= s;
        }
    }
}

void add_d_log_entailment(const Box& a, const Box& b, double w,
                          BoxGrad& grad_a, BoxGrad& grad_b) {
    add_d_log_joint(a, b, w, grad_a, grad_b);
    add_d_log_measure(b, -w, grad_b);
}

GlobalExtrema compute_extrema(std::span<const Box> boxes) {
    if (boxes.empty()) {
        throw std::domain_error("compute_extrema: empty box collection");
    }
    const int d = boxes.front().dim();
    GlobalExtrema ex;
    ex.gmin.assign(d, std::numeric_limits<double>::infinity());
    ex.gmax.assign(d, -std::numeric_limits<double>::infinity());
    for (const Box& box : boxes) {
        check_same_dim(box.dim(), d, "compute_extrema");
        for (int i = 0; i < d; ++i) {
            ex.gmin[i] = std::min(ex.gmin[i], box.min[i]);
            ex.gmax[i] = std::max(ex.gmax[i], box.max(i));
        }
    }
    return ex;
}

}  // namespace cbox
