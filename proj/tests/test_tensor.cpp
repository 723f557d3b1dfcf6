#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "diffsed/rng.hpp"
#include "diffsed/tensor.hpp"
#include "oracles.hpp"

using namespace diffsed;

namespace {

// Builds a scalar-valued forward pass from flat inputs and checks its
// analytic gradient against central finite differences.
void check_gradient(const std::function<Tensor(const Tensor&)>& forward,
                    const std::vector<size_t>& shape, uint64_t seed, double tol,
                    double lo = -2.0, double hi = 2.0) {
    Rng rng(seed);
    Tensor x = Tensor::rand_uniform(shape, rng, lo, hi);
    x.set_requires_grad(true);
    Tensor y = forward(x);
    REQUIRE(y.numel() == 1);
    y.backward();
    const auto analytic = x.grad();

    auto f = [&](const std::vector<double>& flat) {
        Tensor xx(shape, flat);
        return forward(xx).value();
    };
    const auto numeric = oracles::finite_diff(f, x.data());
    CHECK(oracles::max_rel_err(analytic, numeric) < tol);
}

}  // namespace

TEST_CASE("matmul identity and orthogonal cases") {
    Tensor eye({2, 2}, {1, 0, 0, 1});
    Tensor a({2, 2}, {1, 2, 3, 4});
    Tensor c = matmul(eye, a);
    CHECK(c.data() == std::vector<double>{1, 2, 3, 4});

    Tensor row({1, 2}, {1, 0});
    Tensor col({2, 1}, {0, 1});
    CHECK(matmul(row, col).value() == 0.0);
}

TEST_CASE("matmul shape mismatch throws") {
    Tensor a({2, 3});
    Tensor b({2, 3});
    CHECK_THROWS_AS(matmul(a, b), std::invalid_argument);
}

TEST_CASE("matmul gradient matches finite differences") {
    Rng rng(7);
    Tensor a = Tensor::rand_uniform({3, 4}, rng, -2, 2);
    Tensor b = Tensor::rand_uniform({4, 2}, rng, -2, 2);
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    Tensor loss = sum(matmul(a, b));
    loss.backward();

    auto fa = [&](const std::vector<double>& flat) {
        return sum(matmul(Tensor({3, 4}, flat), b.detach())).value();
    };
    auto fb = [&](const std::vector<double>& flat) {
        return sum(matmul(a.detach(), Tensor({4, 2}, flat))).value();
    };
    CHECK(oracles::max_rel_err(a.grad(), oracles::finite_diff(fa, a.data())) < 1e-4);
    CHECK(oracles::max_rel_err(b.grad(), oracles::finite_diff(fb, b.data())) < 1e-4);
}

TEST_CASE("softmax basics") {
    Tensor x({1, 3}, {0, 0, 0});
    Tensor y = softmax(x, 1);
    for (double v : y.data()) CHECK(v == doctest::Approx(1.0 / 3.0));

    Tensor big({1, 3}, {1000, 0, 0});
    Tensor yb = softmax(big, 1);
    CHECK(yb.data()[0] == doctest::Approx(1.0));
    CHECK(std::isfinite(yb.data()[1]));
    double s = 0;
    for (double v : yb.data()) s += v;
    CHECK(s == doctest::Approx(1.0));
}

TEST_CASE("softmax gradient matches finite differences") {
    for (uint64_t seed : {1, 2, 3}) {
        check_gradient([](const Tensor& x) { return sum(mul(softmax(x, 1), x)); }, {2, 5}, seed,
                       1e-4);
        check_gradient([](const Tensor& x) { return sum(mul(softmax(x, 0), x)); }, {2, 5},
                       seed + 100, 1e-4);
    }
}

TEST_CASE("layer_norm constant row is zeroed by eps") {
    Tensor x({1, 4}, {5, 5, 5, 5});
    Tensor g = Tensor::full({4}, 1.0);
    Tensor b = Tensor::zeros({4});
    Tensor y = layer_norm(x, g, b, 1e-5);
    for (double v : y.data()) CHECK(v == doctest::Approx(0.0));
}

TEST_CASE("layer_norm on already-normalized input") {
    Tensor x({1, 2}, {1, -1});
    Tensor g = Tensor::full({2}, 1.0);
    Tensor b = Tensor::zeros({2});
    Tensor y = layer_norm(x, g, b, 1e-12);
    CHECK(y.data()[0] == doctest::Approx(1.0));
    CHECK(y.data()[1] == doctest::Approx(-1.0));
}

TEST_CASE("layer_norm gradient matches finite differences") {
    Rng rng(11);
    Tensor g = Tensor::rand_uniform({8}, rng, 0.5, 1.5);
    Tensor b = Tensor::rand_uniform({8}, rng, -0.5, 0.5);
    check_gradient(
        [&](const Tensor& x) { return sum(mul(layer_norm(x, g, b, 1e-5), x)); }, {4, 8}, 13,
        1e-4);

    // and through gain/bias
    Tensor x = Tensor::rand_uniform({4, 8}, rng, -2, 2);
    Tensor gg = g.detach();
    gg.set_requires_grad(true);
    Tensor loss = sum(layer_norm(x, gg, b, 1e-5));
    loss.backward();
    auto f = [&](const std::vector<double>& flat) {
        return sum(layer_norm(x, Tensor({8}, flat), b, 1e-5)).value();
    };
    CHECK(oracles::max_rel_err(gg.grad(), oracles::finite_diff(f, gg.data())) < 1e-4);
}

TEST_CASE("elementwise and reduction gradients") {
    for (uint64_t seed : {21, 22}) {
        check_gradient([](const Tensor& x) { return sum(exp(x)); }, {3, 3}, seed, 1e-4);
        check_gradient([](const Tensor& x) { return sum(log(x)); }, {3, 3}, seed, 1e-4, 0.5, 2.0);
        check_gradient([](const Tensor& x) { return sum(sqrt(x)); }, {3, 3}, seed, 1e-4, 0.5, 2.0);
        check_gradient([](const Tensor& x) { return sum(tanh(x)); }, {3, 3}, seed, 1e-4);
        check_gradient([](const Tensor& x) { return sum(sigmoid(x)); }, {3, 3}, seed, 1e-4);
        check_gradient([](const Tensor& x) { return mean(mul(x, x)); }, {3, 3}, seed, 1e-4);
        check_gradient([](const Tensor& x) { return sum(div(Tensor::full({3, 3}, 1.0), x)); },
                       {3, 3}, seed, 1e-4, 0.5, 2.0);
        check_gradient([](const Tensor& x) { return max(mul(x, x)); }, {3, 3}, seed, 1e-4);
        check_gradient(
            [](const Tensor& x) {
                return sum(slice(concat({x, transpose(x)}, 1), 0, 3, 1, 5));
            },
            {3, 3}, seed, 1e-4);
        check_gradient(
            [](const Tensor& x) {
                return sum(mul(reshape(x, {9, 1}), reshape(x, {9, 1})));
            },
            {3, 3}, seed, 1e-4);
    }
}

TEST_CASE("trailing-axis broadcast add/mul") {
    Tensor x({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor row({3}, {10, 20, 30});
    Tensor y = add(x, row);
    CHECK(y.data() == std::vector<double>{11, 22, 33, 14, 25, 36});

    Tensor xx = x.detach();
    xx.set_requires_grad(true);
    Tensor rr = row.detach();
    rr.set_requires_grad(true);
    Tensor loss = sum(mul(add(xx, rr), xx));
    loss.backward();
    auto fr = [&](const std::vector<double>& flat) {
        return sum(mul(add(x, Tensor({3}, flat)), x)).value();
    };
    CHECK(oracles::max_rel_err(rr.grad(), oracles::finite_diff(fr, rr.data())) < 1e-4);
}

TEST_CASE("gather_rows forward and backward") {
    Tensor table({3, 2}, {1, 2, 3, 4, 5, 6});
    table.set_requires_grad(true);
    Tensor out = gather_rows(table, {2, 0, 2});
    CHECK(out.data() == std::vector<double>{5, 6, 1, 2, 5, 6});
    Tensor loss = sum(out);
    loss.backward();
    CHECK(table.grad() == std::vector<double>{1, 1, 0, 0, 2, 2});
}

TEST_CASE("dropout scales and masks only in training") {
    Rng rng(3);
    Tensor x = Tensor::full({10, 10}, 1.0);
    Tensor y = dropout(x, 0.4, rng, false);
    CHECK(y.data() == x.data());

    Tensor z = dropout(x, 0.4, rng, true);
    size_t zeros = 0;
    for (double v : z.data()) {
        if (v == 0.0)
            ++zeros;
        else
            CHECK(v == doctest::Approx(1.0 / 0.6));
    }
    CHECK(zeros > 10);
    CHECK(zeros < 90);
}

TEST_CASE("backward accumulation is linear over independent graphs") {
    Rng rng(5);
    Tensor w = Tensor::rand_uniform({2, 2}, rng, -1, 1);
    w.set_requires_grad(true);
    Tensor a = Tensor::rand_uniform({2, 2}, rng, -1, 1);
    Tensor b = Tensor::rand_uniform({2, 2}, rng, -1, 1);

    // two separate backwards accumulate
    sum(matmul(a, w)).backward();
    sum(matmul(b, w)).backward();
    const auto accumulated = w.grad();

    Tensor w2 = w.detach();
    w2.set_requires_grad(true);
    sum(add(matmul(a, w2), matmul(b, w2))).backward();
    CHECK(oracles::max_rel_err(accumulated, w2.grad()) < 1e-12);
}

TEST_CASE("forward is bit-reproducible") {
    Rng rng(9);
    Tensor a = Tensor::rand_uniform({8, 8}, rng, -1, 1);
    Tensor b = Tensor::rand_uniform({8, 8}, rng, -1, 1);
    Tensor y1 = softmax(matmul(a, b), 1);
    Tensor y2 = softmax(matmul(a, b), 1);
    CHECK(y1.data() == y2.data());
}

TEST_CASE("grad sink redirects leaf gradients") {
    Tensor w({2, 2}, {1, 2, 3, 4});
    w.set_requires_grad(true);
    GradSink sink;
    sum(mul(w, w)).backward(&sink);
    CHECK(!w.has_grad());
    const auto* g = sink.find(w.node());
    REQUIRE(g != nullptr);
    CHECK(*g == std::vector<double>{2, 4, 6, 8});
}

TEST_CASE("NoGradGuard suppresses the tape") {
    Tensor w({1, 1}, {2.0});
    w.set_requires_grad(true);
    NoGradGuard ng;
    Tensor y = mul(w, w);
    CHECK_FALSE(y.requires_grad());
}

TEST_CASE("emin emax abs compositions") {
    Tensor a({1, 3}, {1, -2, 5});
    Tensor b({1, 3}, {0, 3, 5});
    CHECK(emin(a, b).data() == std::vector<double>{0, -2, 5});
    CHECK(emax(a, b).data() == std::vector<double>{1, 3, 5});
    CHECK(abs(Tensor({1, 3}, {-1, 0, 2})).data() == std::vector<double>{1, 0, 2});
}
