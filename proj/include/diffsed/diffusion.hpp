#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "diffsed/tensor.hpp"

namespace diffsed {

// Cosine noise schedule. alpha_cumprod[t] is the retained-signal fraction
// after t noising steps, so index 0 is the clean state with value exactly 1
// (the empty product); beta[i] drives the step from state i to state i+1.
struct NoiseSchedule {
    size_t T = 0;
    std::vector<double> beta;            // [T], clipped to [1e-8, 0.999]
    std::vector<double> alpha;           // [T], 1 - beta
    std::vector<double> alpha_cumprod;   // [T], strictly decreasing, [0] == 1

    double alpha_bar(size_t t) const { return alpha_cumprod.at(t); }
};

// alpha_bar(t) = f(t)/f(0), f(t) = cos^2(((t/T + s)/(1+s)) * pi/2).
NoiseSchedule cosine_schedule(size_t T, double s = 0.008);

// CSV dump (t, beta, alpha_cumprod) for inspection.
std::string schedule_to_csv(const NoiseSchedule& sched);

struct ScaleParams {
    double scale = 0.4;   // in (0, 1]
};

// y = (2q - 1) * scale, mapping [0,1] signals into [-scale, scale].
Tensor scale_signal(const Tensor& q, const ScaleParams& p);
// Inverse map; out-of-range inputs are clamped to [-scale, scale] first.
Tensor unscale_signal(const Tensor& y, const ScaleParams& p);

// N event-query rows of width D, with provenance flags for the corruption
// pipeline.
struct QuerySet {
    Tensor queries;                   // [N x D]
    std::optional<size_t> timestep;
    bool scaled = false;

    size_t n() const { return queries.shape()[0]; }
    size_t dim() const { return queries.shape()[1]; }
};

// Closed-form forward corruption: sqrt(abar_t) z0 + sqrt(1 - abar_t) eps.
Tensor q_sample(const Tensor& z0, size_t t, const Tensor& eps, const NoiseSchedule& sched);

// Scale then corrupt; result is marked scaled and stamped with t.
QuerySet corrupt_queries(const QuerySet& z0, size_t t, const Tensor& eps,
                         const NoiseSchedule& sched, const ScaleParams& p);

// Boundary-box branch: pad ground-truth (onset, offset) rows up to N by
// cycling (full-span rows when empty), optionally permute the padded order,
// scale, corrupt in 2-D box space, then project 2 -> D through `proj`.
QuerySet corrupt_boxes(const std::vector<std::pair<double, double>>& gt, size_t n_queries,
                       size_t t, const Tensor& eps, const NoiseSchedule& sched,
                       const ScaleParams& p, const Tensor& proj,
                       const std::vector<size_t>* permutation = nullptr);

// Builds the padded (and optionally permuted) box rows before any noise;
// exposed so the trainer can recover which gt row each query carries.
std::vector<std::pair<double, double>> pad_boxes(const std::vector<std::pair<double, double>>& gt,
                                                 size_t n_queries,
                                                 const std::vector<size_t>* permutation = nullptr);

// Deterministic DDIM update (eta = 0): eps_hat is inferred from (z_t, z0_hat)
// at level t, then the state is re-noised to level t_prev < t. t_prev = 0 is
// the clean state and returns z0_hat exactly.
Tensor ddim_step(const Tensor& z_t, const Tensor& z0_hat, size_t t, size_t t_prev,
                 const NoiseSchedule& sched);

// Uniform-stride reverse plan from T-1 down to 0; steps=1 gives {(T-1, 0)}.
std::vector<std::pair<size_t, size_t>> make_step_plan(size_t T, size_t steps);

}  // namespace diffsed
