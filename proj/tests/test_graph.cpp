#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "stvad/graph.hpp"
#include "stvad/kernels.hpp"

#include "oracles.hpp"
#include "test_util.hpp"

using namespace stvad;
using testutil::max_grad_rel_err;
using testutil::random_tensor;

namespace {

// Deterministic projection so the loss depends on every output entry.
Tensor<double> projection(const std::vector<int>& shape, Rng& rng) {
    return random_tensor(shape, rng);
}

// loss = sum(op_output * proj); returns max relative FD error over x entries.
template <typename BuildOp>
double check_input_grad(Tensor<double>& x, BuildOp&& build, Rng& rng) {
    Graph<double> probe(false);
    const Tensor<double>& out0 = probe.value(build(probe, probe.leaf(x)));
    Tensor<double> proj = projection(out0.shape(), rng);

    auto eval = [&]() {
        Graph<double> g(false);
        const int y = build(g, g.leaf(x));
        const int loss = g.sum_all(g.mul(y, g.constant(proj)));
        return g.value(loss)[0];
    };
    Graph<double> g(true);
    const int xid = g.leaf(x);
    const int y = build(g, xid);
    const int loss = g.sum_all(g.mul(y, g.constant(proj)));
    g.backward(loss);
    return max_grad_rel_err(x, g.grad(xid), eval);
}

}  // namespace

TEST_CASE("conv2d matches the scalar-loop oracle") {
    Rng rng(7);
    for (int stride : {1, 2}) {
        Tensor<double> x = random_tensor({2, 6, 6, 3}, rng);
        Tensor<double> w = random_tensor({9 * 3, 4}, rng);
        Tensor<double> b = random_tensor({4}, rng);
        Tensor<double> got = kernels::conv2d(x, w, b, stride, 1);
        Tensor<double> want = oracle::conv2d(x, w, b, 3, stride, 1);
        REQUIRE(same_shape(got, want));
        for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
    }
}

TEST_CASE("conv_transpose2d is the exact adjoint of conv2d") {
    Rng rng(11);
    // conv maps 3 -> 5 channels; its adjoint maps 5 -> 3 with the same weights
    Tensor<double> w = random_tensor({9 * 3, 5}, rng);
    Tensor<double> zero_b3({3});
    Tensor<double> zero_b5({5});
    // <conv(x), y> == <x, tconv(y)> with shared weights and zero biases
    Tensor<double> x = random_tensor({2, 8, 8, 3}, rng);
    Tensor<double> y = random_tensor({2, 4, 4, 5}, rng);
    Tensor<double> cx = kernels::conv2d(x, w, zero_b5, 2, 1);  // {2,4,4,5}
    Tensor<double> ty = kernels::conv_transpose2d(y, w, zero_b3, 2, 1);  // {2,8,8,3}
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < cx.size(); ++i) lhs += cx[i] * y[i];
    for (std::size_t i = 0; i < ty.size(); ++i) rhs += ty[i] * x[i];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
}

TEST_CASE("gradients of structured ops match central differences") {
    Rng rng(3);

    SUBCASE("conv2d stride 1") {
        Tensor<double> x = random_tensor({2, 4, 4, 3}, rng);
        Tensor<double> w = random_tensor({27, 4}, rng, 0.5);
        Tensor<double> b = random_tensor({4}, rng, 0.5);
        auto build = [&](Graph<double>& g, int xid) {
            return g.conv2d(xid, g.leaf(w), g.leaf(b), 1, 1);
        };
        CHECK(check_input_grad(x, build, rng) < 1e-6);

        // and w.r.t. weights/bias
        Tensor<double> proj = random_tensor({2, 4, 4, 4}, rng);
        auto eval = [&]() {
            Graph<double> g(false);
            const int y = g.conv2d(g.leaf(x), g.leaf(w), g.leaf(b), 1, 1);
            return g.value(g.sum_all(g.mul(y, g.constant(proj))))[0];
        };
        Graph<double> g(true);
        const int wid = g.leaf(w), bid = g.leaf(b);
        const int y = g.conv2d(g.leaf(x), wid, bid, 1, 1);
        g.backward(g.sum_all(g.mul(y, g.constant(proj))));
        CHECK(max_grad_rel_err(w, g.grad(wid), eval) < 1e-6);
        CHECK(max_grad_rel_err(b, g.grad(bid), eval) < 1e-6);
    }

    SUBCASE("conv2d stride 2") {
        Tensor<double> x = random_tensor({1, 6, 6, 2}, rng);
        Tensor<double> w = random_tensor({18, 3}, rng, 0.5);
        Tensor<double> b = random_tensor({3}, rng, 0.5);
        auto build = [&](Graph<double>& g, int xid) {
            return g.conv2d(xid, g.leaf(w), g.leaf(b), 2, 1);
        };
        CHECK(check_input_grad(x, build, rng) < 1e-6);
    }

    SUBCASE("conv_transpose2d") {
        Tensor<double> x = random_tensor({1, 3, 3, 4}, rng);
        Tensor<double> w = random_tensor({9 * 3, 4}, rng, 0.5);
        Tensor<double> b = random_tensor({3}, rng, 0.5);
        auto build = [&](Graph<double>& g, int xid) {
            return g.conv_transpose2d(xid, g.leaf(w), g.leaf(b), 2, 1);
        };
        CHECK(check_input_grad(x, build, rng) < 1e-6);

        Tensor<double> proj = random_tensor({1, 6, 6, 3}, rng);
        auto eval = [&]() {
            Graph<double> g(false);
            const int y = g.conv_transpose2d(g.leaf(x), g.leaf(w), g.leaf(b), 2, 1);
            return g.value(g.sum_all(g.mul(y, g.constant(proj))))[0];
        };
        Graph<double> g(true);
        const int wid = g.leaf(w), bid = g.leaf(b);
        const int y = g.conv_transpose2d(g.leaf(x), wid, bid, 2, 1);
        g.backward(g.sum_all(g.mul(y, g.constant(proj))));
        CHECK(max_grad_rel_err(w, g.grad(wid), eval) < 1e-6);
        CHECK(max_grad_rel_err(b, g.grad(bid), eval) < 1e-6);
    }

    SUBCASE("temporal shift") {
        Tensor<double> x = random_tensor({3, 2, 2, 8}, rng);
        auto build = [&](Graph<double>& g, int xid) {
            return g.temporal_shift(xid, 0.125, kernels::ShiftMode::bidirectional);
        };
        CHECK(check_input_grad(x, build, rng) < 1e-6);
    }

    SUBCASE("batchnorm training mode") {
        Tensor<double> x = random_tensor({1, 3, 3, 4}, rng);
        Tensor<double> gamma = random_tensor({4}, rng);
        Tensor<double> beta = random_tensor({4}, rng);
        Tensor<double> rm({4}), rv = Tensor<double>::full({4}, 1.0);
        auto build = [&](Graph<double>& g, int xid) {
            Tensor<double> rm2 = rm.clone(), rv2 = rv.clone();
            return g.batchnorm(xid, g.leaf(gamma), g.leaf(beta), rm2, rv2, true, true, 0.1, 1e-5);
        };
        CHECK(check_input_grad(x, build, rng) < 1e-5);

        Tensor<double> proj = random_tensor({1, 3, 3, 4}, rng);
        auto eval = [&]() {
            Graph<double> g(false);
            Tensor<double> rm2 = rm.clone(), rv2 = rv.clone();
            const int y = g.batchnorm(g.leaf(x), g.leaf(gamma), g.leaf(beta), rm2, rv2, true, true,
                                      0.1, 1e-5);
            return g.value(g.sum_all(g.mul(y, g.constant(proj))))[0];
        };
        Graph<double> g(true);
        Tensor<double> rm2 = rm.clone(), rv2 = rv.clone();
        const int gid = g.leaf(gamma), bid = g.leaf(beta);
        const int y = g.batchnorm(g.leaf(x), gid, bid, rm2, rv2, true, true, 0.1, 1e-5);
        g.backward(g.sum_all(g.mul(y, g.constant(proj))));
        CHECK(max_grad_rel_err(gamma, g.grad(gid), eval) < 1e-6);
        CHECK(max_grad_rel_err(beta, g.grad(bid), eval) < 1e-6);
    }

    SUBCASE("softmax rows") {
        Tensor<double> x = random_tensor({4, 5}, rng);
        auto build = [&](Graph<double>& g, int xid) { return g.softmax_rows(xid); };
        CHECK(check_input_grad(x, build, rng) < 1e-6);
    }

    SUBCASE("l2 normalize rows") {
        Tensor<double> x = random_tensor({4, 5}, rng);
        auto build = [&](Graph<double>& g, int xid) { return g.l2_normalize_rows(xid); };
        CHECK(check_input_grad(x, build, rng) < 1e-6);
    }

    SUBCASE("matmul + bias") {
        Tensor<double> x = random_tensor({3, 4}, rng);
        Tensor<double> w = random_tensor({4, 6}, rng);
        Tensor<double> b = random_tensor({6}, rng);
        auto build = [&](Graph<double>& g, int xid) { return g.matmul(xid, g.leaf(w), g.leaf(b)); };
        CHECK(check_input_grad(x, build, rng) < 1e-6);
    }

    SUBCASE("pool, scale, merge, slice, concat, activations") {
        Tensor<double> x = random_tensor({2, 3, 3, 4}, rng);
        Tensor<double> s = random_tensor({4}, rng);
        auto build = [&](Graph<double>& g, int xid) {
            const int act = g.leaky_relu(g.tanh_(xid), 0.2);
            const int scaled = g.channel_scale(act, g.leaf(s));
            const int cat = g.concat_channels({scaled, xid});  // {2,3,3,8}
            const int merged = g.merge_time(cat);              // {1,3,3,16}
            const int last = g.sigmoid(g.slice_time_last(xid));  // {1,3,3,4}
            const int both = g.concat_channels({merged, last});  // {1,3,3,20}
            const int pooled = g.global_avg_pool(both);          // {20}
            return g.reshape(pooled, {1, 20});
        };
        CHECK(check_input_grad(x, build, rng) < 1e-6);
    }

    SUBCASE("rowsum, mean, relu, arithmetic") {
        Tensor<double> x = random_tensor({5, 3}, rng);
        auto build = [&](Graph<double>& g, int xid) {
            const int r = g.relu(g.add_scalar(g.rowsum(g.mul(xid, xid)), -1.0));
            return g.reshape(g.scale(r, 0.7), {5, 1});
        };
        CHECK(check_input_grad(x, build, rng) < 1e-6);
    }
}

TEST_CASE("temporal shift kernel matches the index oracle") {
    Rng rng(21);
    Tensor<double> x = random_tensor({3, 2, 2, 8}, rng);
    Tensor<double> got = kernels::temporal_shift(x, 0.125, kernels::ShiftMode::bidirectional);
    Tensor<double> want = oracle::temporal_shift(x, 0.125);
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == want[i]);
}
