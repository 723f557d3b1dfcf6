#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "diffsed/matching.hpp"
#include "diffsed/rng.hpp"
#include "oracles.hpp"

using namespace diffsed;

namespace {
EventProposal make_pred(double on, double off, std::vector<double> probs) {
    EventProposal p;
    p.onset = on;
    p.offset = off;
    p.class_probs = std::move(probs);
    p.score = 0.0;
    for (size_t k = 0; k + 1 < p.class_probs.size(); ++k)
        p.score = std::max(p.score, p.class_probs[k]);
    return p;
}

CostMatrix matrix_from(const std::vector<std::vector<double>>& rows_pg) {
    CostMatrix cm;
    cm.n_preds = rows_pg.size();
    cm.n_gts = rows_pg.empty() ? 0 : rows_pg[0].size();
    for (const auto& r : rows_pg) cm.costs.insert(cm.costs.end(), r.begin(), r.end());
    return cm;
}
}  // namespace

TEST_CASE("temporal_iou basics") {
    CHECK(temporal_iou({0.2, 0.4}, {0.2, 0.4}) == 1.0);
    CHECK(temporal_iou({0.0, 0.1}, {0.5, 0.9}) == 0.0);
    CHECK(temporal_iou({0.0, 0.5}, {0.25, 0.75}) == doctest::Approx(1.0 / 3.0));
    // degenerate zero-length intervals
    CHECK(temporal_iou({0.3, 0.3}, {0.3, 0.3}) == 1.0);
    CHECK(temporal_iou({0.3, 0.3}, {0.2, 0.4}) == 0.0);
}

TEST_CASE("pair_cost matches the hand-computed sum of its terms") {
    const MatchWeights w;
    EventProposal perfect = make_pred(0.2, 0.6, {1.0, 0.0, 0.0, 0.0});
    EventAnnotation gt{0.2, 0.6, 0};
    CHECK(pair_cost(perfect, gt, w) == doctest::Approx(-w.lambda_cls));

    EventProposal disjoint = make_pred(0.0, 0.1, {0.5, 0.25, 0.25, 0.0});
    EventAnnotation far{0.5, 0.9, 1};
    const double want = w.lambda_cls * (-0.25) + w.lambda_l1 * (0.5 + 0.8) + w.lambda_iou * 1.0;
    CHECK(pair_cost(disjoint, far, w) == doctest::Approx(want));

    Rng rng(3);
    for (int i = 0; i < 20; ++i) {
        const double on_p = rng.uniform(0, 0.5), off_p = on_p + rng.uniform(0.01, 0.5);
        const double on_g = rng.uniform(0, 0.5), off_g = on_g + rng.uniform(0.01, 0.5);
        const double p0 = rng.uniform(0, 1);
        EventProposal p = make_pred(on_p, off_p, {p0, 1 - p0});
        EventAnnotation g{on_g, off_g, 0};
        const double direct = w.lambda_cls * -p0 +
                              w.lambda_l1 * (std::fabs(on_p - on_g) + std::fabs(off_p - off_g)) +
                              w.lambda_iou * (1 - temporal_iou({on_p, off_p}, {on_g, off_g}));
        CHECK(pair_cost(p, g, w) == doctest::Approx(direct));
    }
}

TEST_CASE("hungarian on the 2x2 example") {
    auto cm = matrix_from({{1, 2}, {2, 1}});
    const auto a = hungarian(cm);
    REQUIRE(a.pairs.size() == 2);
    CHECK(a.total_cost == doctest::Approx(2.0));
    CHECK(a.pairs[0] == std::pair<size_t, size_t>{0, 0});
    CHECK(a.pairs[1] == std::pair<size_t, size_t>{1, 1});
}

TEST_CASE("hungarian picks the zero diagonal") {
    auto cm = matrix_from({{0, 5, 5}, {5, 0, 5}, {5, 5, 0}});
    const auto a = hungarian(cm);
    CHECK(a.total_cost == doctest::Approx(0.0));
    for (const auto& [p, g] : a.pairs) CHECK(p == g);
}

TEST_CASE("hungarian rejects bad input") {
    auto tall = matrix_from({{1.0}});
    tall.n_preds = 1;
    tall.n_gts = 2;
    tall.costs = {1.0, 2.0};
    CHECK_THROWS_AS(hungarian(tall), std::invalid_argument);

    auto nan = matrix_from({{std::nan("")}});
    CHECK_THROWS_AS(hungarian(nan), std::invalid_argument);
}

TEST_CASE("hungarian equals brute force on 1000 random rectangular matrices") {
    Rng rng(99);
    for (int trial = 0; trial < 1000; ++trial) {
        const size_t m = 1 + size_t(rng.uniform_int(0, 4));           // gts, up to 4
        const size_t n = m + size_t(rng.uniform_int(0, 3));           // preds >= gts
        std::vector<std::vector<double>> costs(n, std::vector<double>(m));
        for (auto& row : costs)
            for (auto& c : row) c = rng.uniform(-5.0, 5.0);
        CostMatrix cm;
        cm.n_preds = n;
        cm.n_gts = m;
        for (const auto& row : costs) cm.costs.insert(cm.costs.end(), row.begin(), row.end());
        const auto got = hungarian(cm);
        const double want = oracles::brute_force_assignment(costs, n, m);
        CHECK(got.total_cost == doctest::Approx(want).epsilon(1e-9));
        // injectivity on both sides
        std::vector<char> pu(n, 0), gu(m, 0);
        for (const auto& [p, g] : got.pairs) {
            CHECK(!pu[p]);
            CHECK(!gu[g]);
            pu[p] = gu[g] = 1;
        }
        CHECK(got.pairs.size() == m);
    }
}

TEST_CASE("constant shift leaves the argmin assignment unchanged") {
    Rng rng(41);
    for (int trial = 0; trial < 50; ++trial) {
        const size_t m = 3, n = 5;
        CostMatrix cm, shifted;
        cm.n_preds = shifted.n_preds = n;
        cm.n_gts = shifted.n_gts = m;
        for (size_t i = 0; i < n * m; ++i) {
            const double c = rng.uniform(-1, 1);
            cm.costs.push_back(c);
            shifted.costs.push_back(c + 7.5);
        }
        CHECK(hungarian(cm).pairs == hungarian(shifted).pairs);
    }
}

TEST_CASE("set_prediction_loss: perfect predictions give a near-zero loss") {
    // two gts matched by two perfect rows; third row confidently no-event
    const size_t n = 3, kp1 = 3;
    HeadOutputs ho;
    ho.bounds = Tensor({n, 2}, {0.1, 0.3, 0.5, 0.9, 0.0, 1.0});
    // logits so extreme that softmax is effectively one-hot
    ho.class_logits = Tensor({n, kp1}, {60, 0, 0, 0, 60, 0, 0, 0, 60});
    ho.class_probs = softmax(ho.class_logits, 1);
    std::vector<EventAnnotation> gts{{0.1, 0.3, 0}, {0.5, 0.9, 1}};
    Assignment asg;
    asg.pairs = {{0, 0}, {1, 1}};
    const MatchWeights w;
    Tensor loss = set_prediction_loss(ho, gts, asg, w);
    CHECK(loss.value() == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("set_prediction_loss: zero ground truths reduce to weighted no-event CE") {
    const size_t n = 4, kp1 = 3;
    Tensor logits({n, kp1}, std::vector<double>(n * kp1, 0.0));
    HeadOutputs ho;
    ho.bounds = Tensor({n, 2}, std::vector<double>(n * 2, 0.5));
    ho.class_logits = logits;
    ho.class_probs = softmax(logits, 1);
    Assignment asg;
    const MatchWeights w;
    Tensor loss = set_prediction_loss(ho, {}, asg, w);
    // uniform probs: CE = log(3) per row, averaged and down-weighted
    CHECK(loss.value() == doctest::Approx(w.no_event_weight * std::log(3.0)).epsilon(1e-9));
}

TEST_CASE("set_prediction_loss gradient matches finite differences (N=3, M=1)") {
    const size_t n = 3, kp1 = 3;
    Rng rng(7);
    std::vector<EventAnnotation> gts{{0.25, 0.75, 1}};
    const MatchWeights w;

    const auto flat_logits = rng.normal_vec(n * kp1);
    const auto flat_raw = rng.normal_vec(n * 2);

    auto forward = [&](const std::vector<double>& logits_flat,
                       const std::vector<double>& raw_flat) {
        Tensor logits({n, kp1}, logits_flat);
        Tensor raw({n, 2}, raw_flat);
        HeadOutputs ho;
        Tensor s = sigmoid(raw);
        Tensor a = slice(s, 0, n, 0, 1), b = slice(s, 0, n, 1, 2);
        ho.bounds = concat({emin(a, b), emax(a, b)}, 1);
        ho.class_logits = logits;
        ho.class_probs = softmax(logits, 1);
        Assignment asg;
        asg.pairs = {{1, 0}};
        return set_prediction_loss(ho, gts, asg, w);
    };

    Tensor logits({n, kp1}, flat_logits);
    logits.set_requires_grad(true);
    Tensor raw({n, 2}, flat_raw);
    raw.set_requires_grad(true);
    {
        HeadOutputs ho;
        Tensor s = sigmoid(raw);
        Tensor a = slice(s, 0, n, 0, 1), b = slice(s, 0, n, 1, 2);
        ho.bounds = concat({emin(a, b), emax(a, b)}, 1);
        ho.class_logits = logits;
        ho.class_probs = softmax(logits, 1);
        Assignment asg;
        asg.pairs = {{1, 0}};
        set_prediction_loss(ho, gts, asg, w).backward();
    }

    auto f_logits = [&](const std::vector<double>& x) { return forward(x, flat_raw).value(); };
    auto f_raw = [&](const std::vector<double>& x) { return forward(flat_logits, x).value(); };
    CHECK(oracles::max_rel_err(logits.grad(), oracles::finite_diff(f_logits, flat_logits)) <
          1e-3);
    CHECK(oracles::max_rel_err(raw.grad(), oracles::finite_diff(f_raw, flat_raw)) < 1e-3);
}

TEST_CASE("loss is invariant to prediction permutation with recomputed assignment") {
    const size_t n = 4, kp1 = 4;
    Rng rng(13);
    std::vector<EventAnnotation> gts{{0.1, 0.4, 0}, {0.6, 0.9, 2}};
    const MatchWeights w;

    auto build = [&](const std::vector<double>& logits_flat, const std::vector<double>& b_flat) {
        HeadOutputs ho;
        ho.class_logits = Tensor({n, kp1}, logits_flat);
        ho.class_probs = softmax(ho.class_logits, 1);
        ho.bounds = Tensor({n, 2}, b_flat);
        return ho;
    };
    const auto logits_flat = rng.normal_vec(n * kp1);
    std::vector<double> b_flat(n * 2);
    for (size_t i = 0; i < n; ++i) {
        const double on = rng.uniform(0, 0.5);
        b_flat[2 * i] = on;
        b_flat[2 * i + 1] = on + rng.uniform(0.05, 0.4);
    }

    HeadOutputs ho = build(logits_flat, b_flat);
    auto asg = hungarian(build_cost_matrix(ho.to_proposals(), gts, w));
    const double base = set_prediction_loss(ho, gts, asg, w).value();

    // rotate prediction rows
    std::vector<double> logits_rot(n * kp1), b_rot(n * 2);
    for (size_t i = 0; i < n; ++i) {
        const size_t j = (i + 1) % n;
        for (size_t k = 0; k < kp1; ++k) logits_rot[j * kp1 + k] = logits_flat[i * kp1 + k];
        b_rot[j * 2] = b_flat[i * 2];
        b_rot[j * 2 + 1] = b_flat[i * 2 + 1];
    }
    HeadOutputs ho2 = build(logits_rot, b_rot);
    auto asg2 = hungarian(build_cost_matrix(ho2.to_proposals(), gts, w));
    const double rotated = set_prediction_loss(ho2, gts, asg2, w).value();
    CHECK(std::fabs(base - rotated) < 1e-12);
}
