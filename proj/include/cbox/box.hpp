#pragma once

#include <span>
#include <vector>

namespace cbox {

// Axis-aligned box in the knowledge space, stored as (min, delta) with
// delta[i] >= 0 so the upper boundary min + delta never undercuts min.
struct Box {
    std::vector<double> min;
    std::vector<double> delta;

    Box() = default;
    Box(std::vector<double> mn, std::vector<double> dl);

    int dim() const { return static_cast<int>(min.size()); }

    // Upper boundary on dimension i. Always evaluated as min + delta so
    // every code path sees the same rounded value.
    double max(int i) const { return min[i] + delta[i]; }

    static Box zeros(int d) { return Box(std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)); }

    // Throws std::domain_error on non-finite coordinates or negative delta.
    void validate() const;
};

// Per-dimension global bounds over a set of boxes. Treated as constants by
// all derivative code: no gradient flows through the extrema.
struct GlobalExtrema {
    std::vector<double> gmin;
    std::vector<double> gmax;

    int dim() const { return static_cast<int>(gmin.size()); }
    double span(int i) const { return gmax[i] - gmin[i]; }
    void validate() const;
};

struct KnowledgeSpaceConfig {
    int dim = 50;
    double prob_clamp_eps = 1e-6;

    void validate() const;  // dim >= 1, 0 < eps < 0.5
};

// Gradient of a scalar with respect to one box's (min, delta) fields.
struct BoxGrad {
    std::vector<double> min;
    std::vector<double> delta;

    BoxGrad() = default;
    explicit BoxGrad(int d) : min(d, 0.0), delta(d, 0.0) {}
    void reset();
};

// ---------------------------------------------------------------------------
// Scalar kernels
// ---------------------------------------------------------------------------

double softplus(double x);
double logistic(double x);
double log_softplus(double x);
// d/dx log(softplus(x)) = logistic(x) / softplus(x)
double d_log_softplus(double x);

// Smoothed per-dimension length: softplus(width) / softplus(norm_width).
// Strictly positive for any finite width, equal to 1 at width == norm_width.
double soft_length(double width, double norm_width);

double clamp_prob(double p, double eps);

// ---------------------------------------------------------------------------
// Box measures
// ---------------------------------------------------------------------------

// log P(box) = sum_i [log softplus(width_i) - log softplus(span_i)].
// Widths are evaluated as (min + delta) - min so that the joint of a box
// with itself reproduces the measure bit-for-bit.
double log_measure(const Box& box, const GlobalExtrema& extrema);

// log P(a ∩ b); per-dimension width min(a.max, b.max) - max(a.min, b.min).
// Symmetric in (a, b) down to the bit.
double log_joint(const Box& a, const Box& b, const GlobalExtrema& extrema);

// log Q(a|b) = log_joint(a, b) - log_measure(b), unclamped.
double log_entailment(const Box& a, const Box& b, const GlobalExtrema& extrema);

// Q(a|b) clamped into [eps, 1 - eps].
double entailment(const Box& a, const Box& b, const GlobalExtrema& extrema, double eps);

// ---------------------------------------------------------------------------
// Analytic derivatives (extrema held constant)
// ---------------------------------------------------------------------------

// d log_measure / d(min, delta). The min components are exactly zero: the
// width (min + delta) - min does not move with min.
BoxGrad d_log_measure(const Box& box, const GlobalExtrema& extrema);

// d log_joint / d(fields of a, fields of b). At boundary ties the branch of
// box a is taken (deterministic subgradient).
void d_log_joint(const Box& a, const Box& b, const GlobalExtrema& extrema,
                 BoxGrad& grad_a, BoxGrad& grad_b);

// Accumulating variants used by the training loops: add w * d(...)/d(fields).
void add_d_log_measure(const Box& box, double w, BoxGrad& grad);
void add_d_log_joint(const Box& a, const Box& b, double w,
                     BoxGrad& grad_a, BoxGrad& grad_b);

// Adds w * d log Q(a|b) / d(fields); the extrema normalizer cancels out of
// the conditional, so none is taken.
void add_d_log_entailment(const Box& a, const Box& b, double w,
                          BoxGrad& grad_a, BoxGrad& grad_b);

// Coordinate-wise extrema over a non-empty collection of same-dimension boxes.
GlobalExtrema compute_extrema(std::span<const Box> boxes);

}  // namespace cbox
