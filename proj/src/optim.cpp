#include "diffsed/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace diffsed {

void Adam::step(ParamStore& params) {
    for (auto& p : params.items()) {
        if (!p.tensor.has_grad())
            throw std::runtime_error("adam: parameter '" + p.name + "' has no gradient");
    }
    for (auto& p : params.items()) {
        auto* node = p.tensor.node();
        auto& st = state_[node];
        const size_t n = node->data.size();
        if (st.m.empty()) {
            st.m.assign(n, 0.0);
            st.v.assign(n, 0.0);
        }
        st.t += 1;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(st.t));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(st.t));
        for (size_t i = 0; i < n; ++i) {
            const double g = node->grad[i];
            st.m[i] = cfg_.beta1 * st.m[i] + (1.0 - cfg_.beta1) * g;
            st.v[i] = cfg_.beta2 * st.v[i] + (1.0 - cfg_.beta2) * g * g;
            const double mhat = st.m[i] / bc1;
            const double vhat = st.v[i] / bc2;
            node->data[i] -=
                cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * node->data[i]);
        }
    }
}

void Adam::reset() { state_.clear(); }

}  // namespace diffsed
