// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "inpad/autograd.hpp"

namespace inpad {

/// Adam with decoupled weight decay plus per-tensor update clipping: the
/// step size is divided by max(1, rms(g^2 / max(v_hat, g^2))), which tames
/// occasional large-gradient steps without a global clip threshold.
class StableAdamW {
public:
    struct Options {
        double lr = 5e-4;
        double weight_decay = 1e-4;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
    };

    StableAdamW(std::vector<Param*> params, Options opts);

    /// Applies one update from the accumulated gradients, then clears them.
    void step();
    void zero_grad();
    int64_t step_count() const { return step_; }
    const std::vector<Param*>& params() const { return params_; }

    /// Moment state access for checkpointing, aligned with params().
    std::vector<Tensor>& first_moments() { return m_; }
    std::vector<Tensor>& second_moments() { return v_; }
    void set_step_count(int64_t s) { step_ = s; }

private:
    std::vector<Param*> params_;
    Options opts_;
    std::vector<Tensor> m_, v_;
    int64_t step_ = 0;
};

} // namespace inpad
