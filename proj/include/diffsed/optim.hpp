#pragma once

#include "diffsed/tensor.hpp"

namespace diffsed {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;   // decoupled
};

// Adam with decoupled weight decay. Moment state is kept per parameter and
// survives across steps; reset() drops it (used when training restarts from
// a restored checkpoint).
class Adam {
public:
    explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

    // Applies one update to every parameter in the store. All parameters
    // must carry a populated gradient; a missing gradient is a usage error.
    void step(ParamStore& params);

    void reset();
    void set_lr(double lr) { cfg_.lr = lr; }
    double lr() const { return cfg_.lr; }
    const AdamConfig& config() const { return cfg_; }

private:
    struct Moments {
        std::vector<double> m, v;
        int64_t t = 0;
    };
    AdamConfig cfg_;
    std::unordered_map<const TensorNode*, Moments> state_;
};

}  // namespace diffsed
