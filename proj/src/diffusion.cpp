#include "diffsed/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace diffsed {

namespace {
double cosine_f(double t, double T, double s) {
    const double x = ((t / T + s) / (1.0 + s)) * M_PI / 2.0;
    const double c = std::cos(x);
    return c * c;
}
}  // namespace

NoiseSchedule cosine_schedule(size_t T, double s) {
    if (T < 1) throw std::invalid_argument("cosine_schedule: T must be >= 1");
    if (s <= 0) throw std::invalid_argument("cosine_schedule: s must be > 0");
    NoiseSchedule sched;
    sched.T = T;
    sched.beta.resize(T);
    sched.alpha.resize(T);
    sched.alpha_cumprod.resize(T);
    const double Td = static_cast<double>(T);
    const double f0 = cosine_f(0.0, Td, s);
    double prev = 1.0;   // f(0)/f(0)
    double bar = 1.0;
    for (size_t i = 0; i < T; ++i) {
        const double cur = cosine_f(static_cast<double>(i + 1), Td, s) / f0;
        const double beta = std::clamp(1.0 - cur / prev, 1e-8, 0.999);
        sched.beta[i] = beta;
        sched.alpha[i] = 1.0 - beta;
        sched.alpha_cumprod[i] = bar;   // product of alpha[0..i-1]; 1 at i=0
        bar *= sched.alpha[i];
        prev = cur;
    }
    return sched;
}

std::string schedule_to_csv(const NoiseSchedule& sched) {
    std::ostringstream os;
    os.precision(17);
    os << "t,beta,alpha_cumprod\n";
    for (size_t t = 0; t < sched.T; ++t)
        os << t << "," << sched.beta[t] << "," << sched.alpha_cumprod[t] << "\n";
    return os.str();
}

Tensor scale_signal(const Tensor& q, const ScaleParams& p) {
    if (p.scale <= 0.0 || p.scale > 1.0)
        throw std::invalid_argument("scale_signal: scale must be in (0, 1]");
    return mul_scalar(add_scalar(mul_scalar(q, 2.0), -1.0), p.scale);
}

Tensor unscale_signal(const Tensor& y, const ScaleParams& p) {
    if (p.scale <= 0.0 || p.scale > 1.0)
        throw std::invalid_argument("unscale_signal: scale must be in (0, 1]");
    Tensor clamped = y.detach();
    for (auto& v : clamped.data()) v = std::clamp(v, -p.scale, p.scale);
    return mul_scalar(add_scalar(mul_scalar(clamped, 1.0 / p.scale), 1.0), 0.5);
}

Tensor q_sample(const Tensor& z0, size_t t, const Tensor& eps, const NoiseSchedule& sched) {
    if (t >= sched.T) throw std::out_of_range("q_sample: t out of range");
    if (z0.shape() != eps.shape())
        throw std::invalid_argument("q_sample: z0/eps shape mismatch");
    const double abar = sched.alpha_cumprod[t];
    return add(mul_scalar(z0, std::sqrt(abar)), mul_scalar(eps, std::sqrt(1.0 - abar)));
}

QuerySet corrupt_queries(const QuerySet& z0, size_t t, const Tensor& eps,
                         const NoiseSchedule& sched, const ScaleParams& p) {
    if (z0.scaled) throw std::invalid_argument("corrupt_queries: input already scaled");
    QuerySet out;
    out.queries = q_sample(scale_signal(z0.queries, p), t, eps, sched);
    out.timestep = t;
    out.scaled = true;
    return out;
}

std::vector<std::pair<double, double>> pad_boxes(const std::vector<std::pair<double, double>>& gt,
                                                 size_t n_queries,
                                                 const std::vector<size_t>* permutation) {
    if (gt.size() > n_queries)
        throw std::invalid_argument("pad_boxes: more ground-truth boxes than queries");
    std::vector<std::pair<double, double>> rows(n_queries);
    if (gt.empty()) {
        // zero-event clips pad with full-span boxes
        for (auto& r : rows) r = {0.0, 1.0};
    } else {
        for (size_t i = 0; i < n_queries; ++i) rows[i] = gt[i % gt.size()];
    }
    if (permutation) {
        if (permutation->size() != n_queries)
            throw std::invalid_argument("pad_boxes: permutation size mismatch");
        std::vector<std::pair<double, double>> permuted(n_queries);
        for (size_t i = 0; i < n_queries; ++i) permuted[i] = rows[(*permutation)[i]];
        rows = std::move(permuted);
    }
    return rows;
}

QuerySet corrupt_boxes(const std::vector<std::pair<double, double>>& gt, size_t n_queries,
                       size_t t, const Tensor& eps, const NoiseSchedule& sched,
                       const ScaleParams& p, const Tensor& proj,
                       const std::vector<size_t>* permutation) {
    for (const auto& [on, off] : gt)
        if (!(on >= 0.0 && on < off && off <= 1.0))
            throw std::invalid_argument("corrupt_boxes: boxes must satisfy 0 <= on < off <= 1");
    if (proj.rank() != 2 || proj.shape()[0] != 2)
        throw std::invalid_argument("corrupt_boxes: proj must be [2 x D]");

    const auto rows = pad_boxes(gt, n_queries, permutation);
    Tensor pb({n_queries, 2});
    for (size_t i = 0; i < n_queries; ++i) {
        pb.data()[2 * i] = rows[i].first;
        pb.data()[2 * i + 1] = rows[i].second;
    }
    Tensor crpt = q_sample(scale_signal(pb, p), t, eps, sched);
    QuerySet out;
    out.queries = matmul(crpt, proj);
    out.timestep = t;
    out.scaled = true;
    return out;
}

Tensor ddim_step(const Tensor& z_t, const Tensor& z0_hat, size_t t, size_t t_prev,
                 const NoiseSchedule& sched) {
    if (t_prev >= t) throw std::invalid_argument("ddim_step: t_prev must be < t");
    if (t >= sched.T) throw std::out_of_range("ddim_step: t out of range");
    if (z_t.shape() != z0_hat.shape())
        throw std::invalid_argument("ddim_step: shape mismatch");

    const double abar_t = sched.alpha_cumprod[t];
    const double abar_prev = sched.alpha_cumprod[t_prev];
    const double denom_sq = 1.0 - abar_t;

    Tensor out(z_t.shape());
    const auto& zt = z_t.data();
    const auto& z0 = z0_hat.data();
    auto& od = out.data();

    if (denom_sq <= 0.0) {
        // abar_t == 1: the state carries no noise, so eps_hat is only
        // defined when z_t and z0_hat agree.
        for (size_t i = 0; i < zt.size(); ++i)
            if (zt[i] != z0[i])
                throw std::runtime_error("ddim_step: degenerate denominator (abar_t = 1 but "
                                         "z_t != z0_hat)");
        std::copy(z0.begin(), z0.end(), od.begin());
        return out;
    }

    const double inv_denom = 1.0 / std::sqrt(denom_sq);
    const double sa_t = std::sqrt(abar_t);
    const double sa_prev = std::sqrt(abar_prev);
    const double sn_prev = std::sqrt(1.0 - abar_prev);
    for (size_t i = 0; i < zt.size(); ++i) {
        const double eps_hat = (zt[i] - sa_t * z0[i]) * inv_denom;
        od[i] = sa_prev * z0[i] + sn_prev * eps_hat;
    }
    return out;
}

std::vector<std::pair<size_t, size_t>> make_step_plan(size_t T, size_t steps) {
    if (steps < 1 || steps > T)
        throw std::invalid_argument("make_step_plan: steps must be in [1, T]");
    std::vector<size_t> times;
    for (size_t k = 0; k <= steps; ++k) {
        const double frac = 1.0 - static_cast<double>(k) / static_cast<double>(steps);
        const size_t t = static_cast<size_t>(std::llround(static_cast<double>(T - 1) * frac));
        if (times.empty() || times.back() != t) times.push_back(t);
    }
    std::vector<std::pair<size_t, size_t>> plan;
    for (size_t i = 0; i + 1 < times.size(); ++i) plan.emplace_back(times[i], times[i + 1]);
    if (plan.empty()) plan.emplace_back(T - 1, 0);   // T == 1 degenerate case
    return plan;
}

}  // namespace diffsed
