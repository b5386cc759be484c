// SPDX-License-Identifier: Apache-2.0
#include "inpad/optimizer.hpp"

#include <cmath>

namespace inpad {

StableAdamW::StableAdamW(std::vector<Param*> params, Options opts)
    : params_(std::move(params)), opts_(opts) {
    for (Param* p : params_) {
        m_.push_back(Tensor::zeros(p->value.rows(), p->value.cols()));
        v_.push_back(Tensor::zeros(p->value.rows(), p->value.cols()));
    }
}

void StableAdamW::step() {
    ++step_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(step_));
    for (size_t pi = 0; pi < params_.size(); ++pi) {
        Param& p = *params_[pi];
        Tensor& m = m_[pi];
        Tensor& v = v_[pi];
        double rms_acc = 0.0;
        for (int64_t i = 0; i < p.value.size(); ++i) {
            const double g = p.grad[i];
            m[i] = opts_.beta1 * m[i] + (1.0 - opts_.beta1) * g;
            v[i] = opts_.beta2 * v[i] + (1.0 - opts_.beta2) * g * g;
            const double v_hat = v[i] / bc2;
            if (g != 0.0) rms_acc += (g * g) / std::max(v_hat, g * g);
        }
        const double rms = p.value.size() > 0 ? std::sqrt(rms_acc / static_cast<double>(p.value.size())) : 0.0;
        const double lr_t = opts_.lr / std::max(1.0, rms);
        for (int64_t i = 0; i < p.value.size(); ++i) {
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            p.value[i] -= lr_t * (m_hat / (std::sqrt(v_hat) + opts_.eps) + opts_.weight_decay * p.value[i]);
        }
        p.zero_grad();
    }
}

void StableAdamW::zero_grad() {
    for (Param* p : params_) p->zero_grad();
}

} // namespace inpad
