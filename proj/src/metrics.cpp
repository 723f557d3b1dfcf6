#include "diffsed/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace diffsed {

PRF prf_from_counts(size_t tp, size_t fp, size_t fn) {
    PRF r;
    r.tp = tp;
    r.fp = fp;
    r.fn = fn;
    const double tpd = static_cast<double>(tp);
    if (tp + fp > 0)
        r.precision = tpd / static_cast<double>(tp + fp);
    else
        r.precision = (fn == 0) ? 1.0 : 0.0;
    if (tp + fn > 0)
        r.recall = tpd / static_cast<double>(tp + fn);
    else
        r.recall = (fp == 0) ? 1.0 : 0.0;
    if (r.precision + r.recall > 0)
        r.f1 = 2.0 * r.precision * r.recall / (r.precision + r.recall);
    else
        r.f1 = (tp + fp + fn == 0) ? 1.0 : 0.0;
    return r;
}

namespace {

struct Counts {
    size_t tp = 0, fp = 0, fn = 0;
};

bool event_order(const ScoredEvent& a, const ScoredEvent& b) {
    if (a.onset != b.onset) return a.onset < b.onset;
    if (a.offset != b.offset) return a.offset < b.offset;
    return a.label < b.label;
}

bool gt_order(const EventAnnotation& a, const EventAnnotation& b) {
    if (a.onset != b.onset) return a.onset < b.onset;
    if (a.offset != b.offset) return a.offset < b.offset;
    return a.label < b.label;
}

PRF finalize(const std::map<int, Counts>& by_class, std::map<int, PRF>* per_class) {
    size_t tp = 0, fp = 0, fn = 0;
    for (const auto& [cls, c] : by_class) {
        tp += c.tp;
        fp += c.fp;
        fn += c.fn;
        if (per_class) (*per_class)[cls] = prf_from_counts(c.tp, c.fp, c.fn);
    }
    return prf_from_counts(tp, fp, fn);
}

size_t segment_count(double duration, double seg_len) {
    return static_cast<size_t>(std::ceil((duration - 1e-9) / seg_len));
}

}  // namespace

PRF event_based_scores(const std::vector<EvalClip>& corpus, const MetricParams& p,
                       std::map<int, PRF>* per_class) {
    std::map<int, Counts> by_class;
    for (const auto& clip : corpus) {
        std::vector<ScoredEvent> preds;
        for (const auto& e : clip.predictions)
            if (e.score >= p.threshold) preds.push_back(e);
        std::stable_sort(preds.begin(), preds.end(), event_order);
        std::vector<EventAnnotation> gts = clip.annotations;
        std::stable_sort(gts.begin(), gts.end(), gt_order);

        std::vector<bool> used(gts.size(), false);
        for (const auto& pred : preds) {
            bool matched = false;
            for (size_t g = 0; g < gts.size() && !matched; ++g) {
                if (used[g] || gts[g].label != pred.label) continue;
                const double off_tol =
                    std::max(p.collar, p.offset_ratio * (gts[g].offset - gts[g].onset));
                if (std::fabs(pred.onset - gts[g].onset) <= p.collar &&
                    std::fabs(pred.offset - gts[g].offset) <= off_tol) {
                    used[g] = true;
                    by_class[pred.label].tp += 1;
                    matched = true;
                }
            }
            if (!matched) by_class[pred.label].fp += 1;
        }
        for (size_t g = 0; g < gts.size(); ++g)
            if (!used[g]) by_class[gts[g].label].fn += 1;
    }
    return finalize(by_class, per_class);
}

PRF segment_based_scores(const std::vector<EvalClip>& corpus, const MetricParams& p,
                         std::map<int, PRF>* per_class) {
    std::map<int, Counts> by_class;
    for (const auto& clip : corpus) {
        const size_t n_seg = segment_count(clip.duration, p.segment_length);
        std::set<int> classes;
        for (const auto& g : clip.annotations) classes.insert(g.label);
        for (const auto& e : clip.predictions)
            if (e.score >= p.threshold) classes.insert(e.label);
        for (int cls : classes) {
            for (size_t s = 0; s < n_seg; ++s) {
                const double s0 = static_cast<double>(s) * p.segment_length;
                const double s1 = s0 + p.segment_length;
                bool gt_active = false, pred_active = false;
                for (const auto& g : clip.annotations)
                    if (g.label == cls && g.onset < s1 && g.offset > s0) gt_active = true;
                for (const auto& e : clip.predictions)
                    if (e.label == cls && e.score >= p.threshold && e.onset < s1 &&
                        e.offset > s0)
                        pred_active = true;
                if (gt_active && pred_active)
                    by_class[cls].tp += 1;
                else if (pred_active)
                    by_class[cls].fp += 1;
                else if (gt_active)
                    by_class[cls].fn += 1;
            }
        }
    }
    return finalize(by_class, per_class);
}

PRF tagging_scores(const std::vector<EvalClip>& corpus, const MetricParams& p,
                   std::map<int, PRF>* per_class) {
    std::map<int, Counts> by_class;
    for (const auto& clip : corpus) {
        std::set<int> gt_classes, pred_classes;
        for (const auto& g : clip.annotations) gt_classes.insert(g.label);
        for (const auto& e : clip.predictions)
            if (e.score >= p.threshold) pred_classes.insert(e.label);
        std::set<int> all = gt_classes;
        all.insert(pred_classes.begin(), pred_classes.end());
        for (int cls : all) {
            const bool g = gt_classes.count(cls) > 0;
            const bool q = pred_classes.count(cls) > 0;
            if (g && q)
                by_class[cls].tp += 1;
            else if (q)
                by_class[cls].fp += 1;
            else
                by_class[cls].fn += 1;
        }
    }
    return finalize(by_class, per_class);
}

EvalReport evaluate_corpus(const std::vector<EvalClip>& corpus, const MetricParams& p) {
    EvalReport r;
    r.params = p;
    r.event = event_based_scores(corpus, p, &r.event_per_class);
    r.segment = segment_based_scores(corpus, p, &r.segment_per_class);
    r.tagging = tagging_scores(corpus, p, &r.tagging_per_class);
    return r;
}

namespace {
nlohmann::json prf_json(const PRF& x) {
    return {{"f1", x.f1},          {"precision", x.precision}, {"recall", x.recall},
            {"tp", x.tp},          {"fp", x.fp},               {"fn", x.fn}};
}
nlohmann::json per_class_json(const std::map<int, PRF>& m) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [cls, x] : m) j[std::to_string(cls)] = prf_json(x);
    return j;
}
}  // namespace

nlohmann::json EvalReport::to_json() const {
    nlohmann::json j;
    j["event_based"] = prf_json(event);
    j["event_based"]["per_class"] = per_class_json(event_per_class);
    j["segment_based"] = prf_json(segment);
    j["segment_based"]["per_class"] = per_class_json(segment_per_class);
    j["tagging"] = prf_json(tagging);
    j["tagging"]["per_class"] = per_class_json(tagging_per_class);
    j["params"] = {{"collar", params.collar},
                   {"offset_ratio", params.offset_ratio},
                   {"segment_length", params.segment_length},
                   {"threshold", params.threshold}};
    return j;
}

ClsReport classification_scores(const Tensor& clip_logits, const std::vector<int>& labels) {
    if (clip_logits.rank() != 2) throw std::invalid_argument("classification: rank-2 logits required");
    const size_t n = clip_logits.shape()[0];
    const size_t k = clip_logits.shape()[1];
    if (labels.size() != n || n == 0)
        throw std::invalid_argument("classification: labels/logits size mismatch");

    ClsReport r;
    const size_t topk = std::min<size_t>(5, k);
    size_t top1 = 0, top5 = 0;
    for (size_t i = 0; i < n; ++i) {
        // rank of the true label: count of classes with strictly higher
        // score, ties broken by lower index first
        const int y = labels[i];
        const double sy = clip_logits.at(i, static_cast<size_t>(y));
        size_t rank = 0;
        for (size_t c = 0; c < k; ++c) {
            if (static_cast<int>(c) == y) continue;
            const double sc = clip_logits.at(i, c);
            if (sc > sy || (sc == sy && static_cast<int>(c) < y)) ++rank;
        }
        if (rank == 0) ++top1;
        if (rank < topk) ++top5;
    }
    r.top1 = static_cast<double>(top1) / n;
    r.top5 = static_cast<double>(top5) / n;

    double mca = 0.0, map = 0.0, mauc = 0.0;
    size_t mca_n = 0, map_n = 0, mauc_n = 0;
    for (size_t c = 0; c < k; ++c) {
        size_t pos = 0, correct = 0;
        for (size_t i = 0; i < n; ++i) {
            if (labels[i] != static_cast<int>(c)) continue;
            ++pos;
            const double sy = clip_logits.at(i, c);
            bool top = true;
            for (size_t c2 = 0; c2 < k; ++c2) {
                if (c2 == c) continue;
                const double s2 = clip_logits.at(i, c2);
                if (s2 > sy || (s2 == sy && c2 < c)) top = false;
            }
            if (top) ++correct;
        }
        if (pos == 0) continue;   // absent class: skipped in the means
        mca += static_cast<double>(correct) / pos;
        ++mca_n;

        // one-vs-rest ranking by this class's score, ties by index
        std::vector<size_t> order(n);
        for (size_t i = 0; i < n; ++i) order[i] = i;
        std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
            return clip_logits.at(a, c) > clip_logits.at(b, c);
        });
        size_t hits = 0;
        double ap = 0.0;
        for (size_t pos_i = 0; pos_i < n; ++pos_i) {
            if (labels[order[pos_i]] == static_cast<int>(c)) {
                ++hits;
                ap += static_cast<double>(hits) / static_cast<double>(pos_i + 1);
            }
        }
        map += ap / pos;
        ++map_n;

        if (pos < n) {
            // Mann-Whitney rank statistic with midranks for ties
            std::vector<std::pair<double, int>> sc(n);
            for (size_t i = 0; i < n; ++i)
                sc[i] = {clip_logits.at(i, c), labels[i] == static_cast<int>(c) ? 1 : 0};
            std::sort(sc.begin(), sc.end(),
                      [](const auto& a, const auto& b) { return a.first < b.first; });
            double rank_sum = 0.0;
            size_t i = 0;
            while (i < n) {
                size_t j = i;
                while (j < n && sc[j].first == sc[i].first) ++j;
                const double midrank = 0.5 * static_cast<double>(i + 1 + j);   // ranks are 1-based
                for (size_t q = i; q < j; ++q)
                    if (sc[q].second) rank_sum += midrank;
                i = j;
            }
            const double npos = static_cast<double>(pos);
            const double nneg = static_cast<double>(n - pos);
            mauc += (rank_sum - npos * (npos + 1.0) / 2.0) / (npos * nneg);
            ++mauc_n;
        }
    }
    r.mca = mca_n ? mca / mca_n : 0.0;
    r.map = map_n ? map / map_n : 0.0;
    r.mauc = mauc_n ? mauc / mauc_n : 0.0;
    return r;
}

}  // namespace diffsed
