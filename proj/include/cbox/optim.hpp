#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace cbox {

// AdamW with decoupled weight decay. Betas follow the usual defaults; the
// caller supplies the per-step learning rate so schedules stay outside.
class AdamW {
  public:
    AdamW(std::size_t n, double weight_decay = 0.0, double beta1 = 0.9, double beta2 = 0.999,
          double eps = 1e-8)
        : weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps),
          m_(n, 0.0), v_(n, 0.0) {}

    void step(std::span<double> params, std::span<const double> grads, double lr) {
        if (params.size() != m_.size() || grads.size() != m_.size()) {
            throw std::invalid_argument("AdamW::step: size mismatch");
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            const double g = grads[i];
            m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
            v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g * g;
            const double mhat = m_[i] / bc1;
            const double vhat = v_[i] / bc2;
            params[i] -= lr * (mhat / (std::sqrt(vhat) + eps_) + weight_decay_ * params[i]);
        }
    }

    std::int64_t steps_taken() const { return t_; }

  private:
    double weight_decay_;
    double beta1_;
    double beta2_;
    double eps_;
    std::int64_t t_ = 0;
    std::vector<double> m_;
    std::vector<double> v_;
};

}  // namespace cbox
