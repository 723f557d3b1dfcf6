#include "diffsed/matching.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace diffsed {

double temporal_iou(std::pair<double, double> a, std::pair<double, double> b) {
    const double len_a = a.second - a.first;
    const double len_b = b.second - b.first;
    if (len_a <= 0.0 || len_b <= 0.0)
        return (a.first == b.first && a.second == b.second) ? 1.0 : 0.0;
    const double inter = std::max(0.0, std::min(a.second, b.second) - std::max(a.first, b.first));
    const double uni = len_a + len_b - inter;
    return inter / uni;
}

double pair_cost(const EventProposal& pred, const EventAnnotation& gt, const MatchWeights& w) {
    const double cls = -pred.class_probs.at(static_cast<size_t>(gt.label));
    const double l1 = std::fabs(pred.onset - gt.onset) + std::fabs(pred.offset - gt.offset);
    const double iou = temporal_iou({pred.onset, pred.offset}, {gt.onset, gt.offset});
    return w.lambda_cls * cls + w.lambda_l1 * l1 + w.lambda_iou * (1.0 - iou);
}

CostMatrix build_cost_matrix(const std::vector<EventProposal>& preds,
                             const std::vector<EventAnnotation>& gts, const MatchWeights& w) {
    CostMatrix cm;
    cm.n_preds = preds.size();
    cm.n_gts = gts.size();
    cm.costs.resize(preds.size() * gts.size());
    for (size_t p = 0; p < preds.size(); ++p)
        for (size_t g = 0; g < gts.size(); ++g)
            cm.costs[p * gts.size() + g] = pair_cost(preds[p], gts[g], w);
    return cm;
}

// Shortest-augmenting-path Kuhn-Munkres on a rectangular matrix. Rows are
// ground truths (all matched), columns are predictions.
Assignment hungarian(const CostMatrix& cm) {
    const size_t m = cm.n_gts, n = cm.n_preds;
    if (m > n) throw std::invalid_argument("hungarian: more ground truths than predictions");
    Assignment out;
    if (m == 0) return out;
    for (double c : cm.costs)
        if (!std::isfinite(c)) throw std::invalid_argument("hungarian: non-finite cost entry");

    constexpr double kInf = std::numeric_limits<double>::infinity();
    // 1-indexed potentials/links, column 0 is the virtual source
    std::vector<double> u(m + 1, 0.0), v(n + 1, 0.0);
    std::vector<size_t> match(n + 1, 0);   // match[j] = row assigned to column j
    // cost of assigning gt row i to prediction column j
    auto cost = [&](size_t i, size_t j) { return cm.at(j - 1, i - 1); };

    for (size_t i = 1; i <= m; ++i) {
        match[0] = i;
        size_t j0 = 0;
        std::vector<double> dist(n + 1, kInf);
        std::vector<size_t> pre(n + 1, 0);
        std::vector<bool> done(n + 1, false);
        do {
            done[j0] = true;
            const size_t i0 = match[j0];
            double delta = kInf;
            size_t j1 = 0;
            for (size_t j = 1; j <= n; ++j) {
                if (done[j]) continue;
                const double cur = cost(i0, j) - u[i0] - v[j];
                if (cur < dist[j]) {
                    dist[j] = cur;
                    pre[j] = j0;
                }
                if (dist[j] < delta) {
                    delta = dist[j];
                    j1 = j;
                }
            }
            for (size_t j = 0; j <= n; ++j) {
                if (done[j]) {
                    u[match[j]] += delta;
                    v[j] -= delta;
                } else {
                    dist[j] -= delta;
                }
            }
            j0 = j1;
        } while (match[j0] != 0);
        while (j0 != 0) {
            const size_t j1 = pre[j0];
            match[j0] = match[j1];
            j0 = j1;
        }
    }

    out.pairs.reserve(m);
    for (size_t j = 1; j <= n; ++j) {
        if (match[j] != 0) out.pairs.emplace_back(j - 1, match[j] - 1);   // (pred, gt)
    }
    // report pairs in gt order
    std::sort(out.pairs.begin(), out.pairs.end(),
              [](const auto& a, const auto& b) { return a.second < b.second; });
    for (const auto& [p, g] : out.pairs) out.total_cost += cm.at(p, g);
    return out;
}

Tensor set_prediction_loss(const HeadOutputs& preds, const std::vector<EventAnnotation>& gts,
                           const Assignment& assignment, const MatchWeights& w) {
    const size_t n = preds.class_probs.shape()[0];
    const size_t kp1 = preds.class_probs.shape()[1];
    const size_t no_event = kp1 - 1;
    const size_t m = gts.size();
    if (assignment.pairs.size() != m)
        throw std::invalid_argument("set_prediction_loss: assignment does not cover ground truth");

    // Matched rows carry their gt class and average over the M pairs, like
    // the boundary terms; unmatched rows pull toward no-event with weight
    // w_empty / N (so the zero-gt loss is exactly w_empty * mean CE).
    std::vector<size_t> target(n, no_event);
    std::vector<bool> is_matched(n, false);
    for (const auto& [p, g] : assignment.pairs) {
        target[p] = static_cast<size_t>(gts[g].label);
        is_matched[p] = true;
    }
    Tensor mask({n, kp1});
    for (size_t i = 0; i < n; ++i) {
        const double wt = is_matched[i] ? 1.0 / static_cast<double>(m)
                                        : w.no_event_weight / static_cast<double>(n);
        mask.data()[i * kp1 + target[i]] = wt;
    }

    Tensor log_probs = log(add_scalar(preds.class_probs, 1e-12));
    Tensor loss = neg(sum(mul(mask, log_probs)));

    if (m > 0) {
        std::vector<int64_t> pred_ids(m);
        Tensor g_on({m, 1}), g_off({m, 1});
        for (size_t idx = 0; idx < m; ++idx) {
            const auto& [p, g] = assignment.pairs[idx];
            pred_ids[idx] = static_cast<int64_t>(p);
            g_on.data()[idx] = gts[g].onset;
            g_off.data()[idx] = gts[g].offset;
        }
        Tensor matched = gather_rows(preds.bounds, pred_ids);
        Tensor p_on = slice(matched, 0, m, 0, 1);
        Tensor p_off = slice(matched, 0, m, 1, 2);

        Tensor l1 = add(abs(sub(p_on, g_on)), abs(sub(p_off, g_off)));
        loss = add(loss, mul_scalar(sum(l1), w.lambda_l1 / static_cast<double>(m)));

        Tensor inter = relu(sub(emin(p_off, g_off), emax(p_on, g_on)));
        Tensor uni = sub(add(sub(p_off, p_on), sub(g_off, g_on)), inter);
        Tensor one_minus_iou = add_scalar(neg(div(inter, uni)), 1.0);
        loss = add(loss, mul_scalar(sum(one_minus_iou), w.lambda_iou / static_cast<double>(m)));
    }
    return loss;
}

}  // namespace diffsed
