#pragma once

#include <utility>
#include <vector>

#include "diffsed/audio.hpp"
#include "diffsed/model.hpp"
#include "diffsed/proposals.hpp"
#include "diffsed/tensor.hpp"

namespace diffsed {

// |a intersect b| / |a union b| on intervals; 0 when disjoint. A zero-length
// interval has IoU 0 against everything except an identical zero-length
// interval (1).
double temporal_iou(std::pair<double, double> a, std::pair<double, double> b);

struct MatchWeights {
    double lambda_cls = 2.0;
    double lambda_l1 = 5.0;
    double lambda_iou = 2.0;
    double no_event_weight = 1.0;   // down-weight for unmatched predictions
};

// lambda_cls * (-prob[gt.label]) + lambda_l1 * (|d_onset| + |d_offset|)
//   + lambda_iou * (1 - IoU); gt normalized to [0, 1].
double pair_cost(const EventProposal& pred, const EventAnnotation& gt, const MatchWeights& w);

struct CostMatrix {
    size_t n_preds = 0;
    size_t n_gts = 0;
    std::vector<double> costs;   // [n_preds x n_gts]

    double at(size_t p, size_t g) const { return costs[p * n_gts + g]; }
};

CostMatrix build_cost_matrix(const std::vector<EventProposal>& preds,
                             const std::vector<EventAnnotation>& gts, const MatchWeights& w);

struct Assignment {
    std::vector<std::pair<size_t, size_t>> pairs;   // (pred_index, gt_index)
    double total_cost = 0.0;
};

// Minimum-cost injective matching of all gts onto distinct predictions
// (rectangular Kuhn-Munkres, N_preds >= N_gts). Non-finite costs are an
// input error.
Assignment hungarian(const CostMatrix& costs);

// Differentiable set-prediction loss over the head outputs. Matched rows
// contribute class cross-entropy plus lambda_l1 * L1 and lambda_iou *
// (1 - IoU) on boundaries, each averaged over the M pairs; unmatched rows
// contribute cross-entropy toward the no-event class, down-weighted by
// no_event_weight and averaged over all N rows.
Tensor set_prediction_loss(const HeadOutputs& preds, const std::vector<EventAnnotation>& gts,
                           const Assignment& assignment, const MatchWeights& w);

}  // namespace diffsed
