#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "diffsed/audio.hpp"
#include "diffsed/tensor.hpp"

namespace diffsed {

// A prediction in clip time (seconds), as carried by the predictions JSONL.
struct ScoredEvent {
    double onset = 0.0;
    double offset = 0.0;
    int label = 0;
    double score = 0.0;
};

// One clip's ground truth and predictions, aligned by clip_id.
struct EvalClip {
    std::string clip_id;
    double duration = 0.0;
    std::vector<EventAnnotation> annotations;
    std::vector<ScoredEvent> predictions;
};

struct PRF {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    size_t tp = 0, fp = 0, fn = 0;
};

// P/R with the usual empty-denominator conventions: an undefined precision
// is 0 when misses exist, and an entirely empty comparison scores 1.
PRF prf_from_counts(size_t tp, size_t fp, size_t fn);

struct MetricParams {
    double collar = 0.2;           // seconds
    double offset_ratio = 0.2;     // offset tolerance = max(collar, ratio * gt duration)
    double segment_length = 1.0;   // seconds
    double threshold = 0.5;        // score threshold
};

struct EvalReport {
    PRF event;
    PRF segment;
    PRF tagging;
    std::map<int, PRF> event_per_class;
    std::map<int, PRF> segment_per_class;
    std::map<int, PRF> tagging_per_class;
    MetricParams params;

    nlohmann::json to_json() const;
};

// Event-based scores: a prediction matches a same-class gt when its onset is
// within the collar and its offset within max(collar, ratio * gt duration);
// matching is greedy one-to-one in onset order, micro-averaged over the
// corpus.
PRF event_based_scores(const std::vector<EvalClip>& corpus, const MetricParams& p,
                       std::map<int, PRF>* per_class = nullptr);

// Segment-based scores on a fixed grid: per (segment, class) presence from
// gts and thresholded predictions, micro-averaged over all cells.
PRF segment_based_scores(const std::vector<EvalClip>& corpus, const MetricParams& p,
                         std::map<int, PRF>* per_class = nullptr);

// Clip-level multi-label tagging, micro-averaged over (clip, class).
PRF tagging_scores(const std::vector<EvalClip>& corpus, const MetricParams& p,
                   std::map<int, PRF>* per_class = nullptr);

EvalReport evaluate_corpus(const std::vector<EvalClip>& corpus, const MetricParams& p);

struct ClsReport {
    double top1 = 0.0;
    double top5 = 0.0;
    double mca = 0.0;
    double map = 0.0;
    double mauc = 0.0;
};

// Clip-classification protocol: top-k accuracy, mean per-class accuracy,
// mean one-vs-rest average precision, mean ROC-AUC via the rank statistic.
// Classes absent from the labels are skipped in the class means.
ClsReport classification_scores(const Tensor& clip_logits, const std::vector<int>& labels);

}  // namespace diffsed
