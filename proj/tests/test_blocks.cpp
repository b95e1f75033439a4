#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "stvad/blocks.hpp"

#include "oracles.hpp"
#include "test_util.hpp"

using namespace stvad;
using testutil::max_grad_rel_err;
using testutil::random_tensor;

namespace {

void zero_conv(blocks::Conv2dLayer<double>& c) {
    c.w.fill(0.0);
    c.b.fill(0.0);
}

// Hand-rolled reverse shift: first nf channels pulled from the future, next
// nf from the past. Used only to probe the composition invariant.
Tensor<double> reverse_shift(const Tensor<double>& x, double fraction) {
    const int tdim = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
    const int nf = static_cast<int>(std::floor(fraction * c));
    Tensor<double> y({tdim, h, w, c});
    auto at = [&](int t, std::size_t s, int ch) -> double {
        if (t < 0 || t >= tdim) return 0.0;
        return x[(static_cast<std::size_t>(t) * h * w + s) * c + ch];
    };
    for (int t = 0; t < tdim; ++t)
        for (std::size_t s = 0; s < static_cast<std::size_t>(h) * w; ++s)
            for (int ch = 0; ch < c; ++ch) {
                double v;
                if (ch < nf)
                    v = at(t + 1, s, ch);
                else if (ch < 2 * nf)
                    v = at(t - 1, s, ch);
                else
                    v = at(t, s, ch);
                y[(static_cast<std::size_t>(t) * h * w + s) * c + ch] = v;
            }
    return y;
}

}  // namespace

TEST_CASE("temporal_shift: identity at fraction zero") {
    Rng rng(1);
    Tensor<double> q = random_tensor({3, 2, 2, 8}, rng);
    Tensor<double> out = blocks::temporal_shift(q, 0.0);
    for (std::size_t i = 0; i < q.size(); ++i) CHECK(out[i] == q[i]);
}

TEST_CASE("temporal_shift: single frame zeroes both shifted groups") {
    Rng rng(2);
    Tensor<double> q = random_tensor({1, 2, 2, 8}, rng);
    Tensor<double> out = blocks::temporal_shift(q, 0.25);  // nf = 2 per direction
    const int c = 8;
    for (std::size_t s = 0; s < 4; ++s) {
        for (int ch = 0; ch < 4; ++ch) CHECK(out[s * c + ch] == 0.0);
        for (int ch = 4; ch < c; ++ch) CHECK(out[s * c + ch] == q[s * c + ch]);
    }
}

TEST_CASE("temporal_shift: position pattern matches the index oracle") {
    Tensor<double> q({3, 2, 2, 8});
    for (int t = 0; t < 3; ++t)
        for (int h = 0; h < 2; ++h)
            for (int w = 0; w < 2; ++w)
                for (int c = 0; c < 8; ++c)
                    q[((static_cast<std::size_t>(t) * 2 + h) * 2 + w) * 8 + c] =
                        1000.0 * t + 100.0 * h + 10.0 * w + c;
    Tensor<double> got = blocks::temporal_shift(q, 1.0 / 8.0);
    Tensor<double> want = oracle::temporal_shift(q, 1.0 / 8.0);
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == want[i]);
}

TEST_CASE("temporal_shift: rejects bad fraction and non-finite input") {
    Rng rng(3);
    Tensor<double> q = random_tensor({2, 2, 2, 4}, rng);
    CHECK_THROWS_AS(blocks::temporal_shift(q, -0.1), std::invalid_argument);
    CHECK_THROWS_AS(blocks::temporal_shift(q, 0.6), std::invalid_argument);
    q[3] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(blocks::temporal_shift(q, 0.125), std::invalid_argument);
}

TEST_CASE("temporal_shift: unshifted channels keep their exact values") {
    Rng rng(4);
    Tensor<double> q = random_tensor({4, 3, 3, 8}, rng);
    Tensor<double> out = blocks::temporal_shift(q, 1.0 / 8.0);  // nf = 1, 2 channels move
    for (int t = 0; t < 4; ++t)
        for (std::size_t s = 0; s < 9; ++s)
            for (int c = 2; c < 8; ++c) {
                const std::size_t i = (static_cast<std::size_t>(t) * 9 + s) * 8 + c;
                CHECK(out[i] == q[i]);
            }
}

TEST_CASE("temporal_shift: reverse composition is the identity on interior frames") {
    Rng rng(5);
    const double f = 0.25;
    Tensor<double> q = random_tensor({5, 2, 2, 8}, rng);
    Tensor<double> round = reverse_shift(blocks::temporal_shift(q, f), f);
    const int nf = 2;
    for (int t = 1; t <= 3; ++t)
        for (std::size_t s = 0; s < 4; ++s)
            for (int c = 0; c < 2 * nf; ++c) {
                const std::size_t i = (static_cast<std::size_t>(t) * 4 + s) * 8 + c;
                CHECK(round[i] == q[i]);
            }
}

TEST_CASE("rtsm: zero weights reduce to leaky rectification of the input") {
    Rng rng(6);
    blocks::RtsmParams<double> p = blocks::make_rtsm<double>(4, rng, 0.25, 0.2);
    zero_conv(p.conv1);
    zero_conv(p.conv2);

    Tensor<double> q({2, 2, 2, 4});
    for (std::size_t i = 0; i < q.size(); ++i) q[i] = static_cast<double>(i % 5);  // >= 0
    Tensor<double> out = blocks::rtsm_forward(q, p);
    for (std::size_t i = 0; i < q.size(); ++i) CHECK(out[i] == q[i]);

    q[7] = -1.0;
    out = blocks::rtsm_forward(q, p);
    CHECK(out[7] == doctest::Approx(-0.2).epsilon(1e-12));
}

TEST_CASE("rtsm: gradient w.r.t. input matches central differences") {
    Rng rng(7);
    blocks::RtsmParams<double> p = blocks::make_rtsm<double>(8, rng, 0.125, 0.2);
    Tensor<double> q = random_tensor({2, 4, 4, 8}, rng);
    Tensor<double> proj = random_tensor({2, 4, 4, 8}, rng);

    auto eval = [&]() {
        Graph<double> g(false);
        p.bind(g);
        const int y = blocks::rtsm(g, g.leaf(q), p);
        return g.value(g.sum_all(g.mul(y, g.constant(proj))))[0];
    };
    Graph<double> g(true);
    p.bind(g);
    const int qid = g.leaf(q);
    g.backward(g.sum_all(g.mul(blocks::rtsm(g, qid, p), g.constant(proj))));
    CHECK(max_grad_rel_err(q, g.grad(qid), eval) < 1e-6);
}

TEST_CASE("conv_block: zero weights with affine-free BN give zeros") {
    Rng rng(8);
    blocks::ConvBlockParams<double> p = blocks::make_conv_block<double>(4, rng, 0.2, true);
    p.bn.affine = false;
    zero_conv(p.conv1);
    zero_conv(p.conv2);
    Rng rng2(9);
    Tensor<double> q = random_tensor({1, 4, 4, 4}, rng2);
    Tensor<double> out = blocks::conv_block_forward(q, p, true);
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == 0.0);
}

TEST_CASE("conv_block: preserves shape") {
    Rng rng(10);
    blocks::ConvBlockParams<double> p = blocks::make_conv_block<double>(16, rng, 0.2, true);
    Tensor<double> q = random_tensor({1, 8, 8, 16}, rng);
    Tensor<double> out = blocks::conv_block_forward(q, p, true);
    CHECK(out.shape() == std::vector<int>{1, 8, 8, 16});
    CHECK(out.all_finite());
}

TEST_CASE("conv_block: gradient w.r.t. input matches central differences") {
    Rng rng(11);
    blocks::ConvBlockParams<double> p = blocks::make_conv_block<double>(8, rng, 0.2, true);
    Tensor<double> q = random_tensor({1, 4, 4, 8}, rng);
    Tensor<double> proj = random_tensor({1, 4, 4, 8}, rng);
    // training-mode BN reads only batch statistics, so the running-stat
    // refresh cannot perturb the finite differences
    auto eval = [&]() {
        Graph<double> g(false);
        p.bind(g);
        const int y = blocks::conv_block(g, g.leaf(q), p, true);
        return g.value(g.sum_all(g.mul(y, g.constant(proj))))[0];
    };
    Graph<double> g(true);
    p.bind(g);
    const int qid = g.leaf(q);
    g.backward(g.sum_all(g.mul(blocks::conv_block(g, qid, p, true), g.constant(proj))));
    CHECK(max_grad_rel_err(q, g.grad(qid), eval) < 1e-6);
}

TEST_CASE("cab: zero weights give 0.5 everywhere") {
    Rng rng(12);
    blocks::CabParams<double> p = blocks::make_cab<double>(8, 4, rng, 0.2);
    p.w3.fill(0.0);
    p.b3.fill(0.0);
    p.w4.fill(0.0);
    p.b4.fill(0.0);
    Tensor<double> u = random_tensor({1, 4, 4, 8}, rng);
    Tensor<double> s = blocks::cab_weights(u, p);
    REQUIRE(s.size() == 8);
    for (std::size_t i = 0; i < s.size(); ++i) CHECK(s[i] == 0.5);
}

TEST_CASE("global average pool is exact on per-channel constants") {
    Tensor<double> u({1, 4, 4, 3});
    const double vals[3] = {0.25, -0.5, 3.0};
    for (std::size_t i = 0; i < u.size(); ++i) u[i] = vals[i % 3];
    Tensor<double> z = kernels::global_avg_pool(u);
    for (int c = 0; c < 3; ++c) CHECK(z[static_cast<std::size_t>(c)] == vals[c]);
}

TEST_CASE("cab: matches the straight-line oracle") {
    Rng rng(13);
    blocks::CabParams<double> p = blocks::make_cab<double>(16, 4, rng, 0.2);
    Tensor<double> u = random_tensor({1, 4, 4, 16}, rng);
    Tensor<double> got = blocks::cab_weights(u, p);
    std::vector<double> b3(p.b3.data(), p.b3.data() + p.b3.size());
    std::vector<double> b4(p.b4.data(), p.b4.data() + p.b4.size());
    std::vector<double> want = oracle::cab_weights(u, p.w3, b3, p.w4, b4, 0.2);
    for (int c = 0; c < 16; ++c) {
        CHECK(got[static_cast<std::size_t>(c)] ==
              doctest::Approx(want[static_cast<std::size_t>(c)]).epsilon(1e-9));
        CHECK(got[static_cast<std::size_t>(c)] > 0.0);
        CHECK(got[static_cast<std::size_t>(c)] < 1.0);
    }
}

TEST_CASE("cab: rejects a ratio that does not divide the channels") {
    Rng rng(14);
    CHECK_THROWS_AS(blocks::make_cab<double>(10, 4, rng, 0.2), std::invalid_argument);
}

TEST_CASE("rcam: residual identity under a zeroed conv block") {
    Rng rng(15);
    blocks::RcamParams<double> p = blocks::make_rcam<double>(8, 4, rng, 0.2);
    zero_conv(p.conv_block.conv1);
    zero_conv(p.conv_block.conv2);
    Tensor<double> q = random_tensor({1, 4, 4, 8}, rng);
    Tensor<double> out = blocks::rcam_forward(q, p, true);
    for (std::size_t i = 0; i < q.size(); ++i) CHECK(out[i] == q[i]);
}

TEST_CASE("rcam: zero CAB weights halve the conv block contribution") {
    Rng rng(16);
    blocks::RcamParams<double> p = blocks::make_rcam<double>(8, 4, rng, 0.2);
    p.cab.w3.fill(0.0);
    p.cab.b3.fill(0.0);
    p.cab.w4.fill(0.0);
    p.cab.b4.fill(0.0);
    Tensor<double> q = random_tensor({1, 4, 4, 8}, rng);
    // eval-mode BN so the two forward passes see identical statistics
    Tensor<double> u = blocks::conv_block_forward(q, p.conv_block, false);
    Tensor<double> out = blocks::rcam_forward(q, p, false);
    for (std::size_t i = 0; i < q.size(); ++i)
        CHECK(out[i] == doctest::Approx(q[i] + 0.5 * u[i]).epsilon(1e-12));
}

TEST_CASE("rcam: gradient w.r.t. input matches central differences") {
    Rng rng(17);
    blocks::RcamParams<double> p = blocks::make_rcam<double>(8, 4, rng, 0.2);
    Tensor<double> q = random_tensor({1, 4, 4, 8}, rng);
    Tensor<double> proj = random_tensor({1, 4, 4, 8}, rng);
    auto eval = [&]() {
        Graph<double> g(false);
        p.bind(g);
        const int y = blocks::rcam(g, g.leaf(q), p, true);
        return g.value(g.sum_all(g.mul(y, g.constant(proj))))[0];
    };
    Graph<double> g(true);
    p.bind(g);
    const int qid = g.leaf(q);
    g.backward(g.sum_all(g.mul(blocks::rcam(g, qid, p, true), g.constant(proj))));
    CHECK(max_grad_rel_err(q, g.grad(qid), eval) < 1e-6);
}

TEST_CASE("all learned blocks preserve shape") {
    Rng rng(18);
    Tensor<double> q = random_tensor({3, 4, 4, 8}, rng);
    blocks::RtsmParams<double> rt = blocks::make_rtsm<double>(8, rng, 0.125, 0.2);
    CHECK(blocks::rtsm_forward(q, rt).shape() == q.shape());
    Tensor<double> q1 = random_tensor({1, 4, 4, 8}, rng);
    blocks::ConvBlockParams<double> cb = blocks::make_conv_block<double>(8, rng, 0.2);
    CHECK(blocks::conv_block_forward(q1, cb, true).shape() == q1.shape());
    blocks::RcamParams<double> rc = blocks::make_rcam<double>(8, 4, rng, 0.2);
    CHECK(blocks::rcam_forward(q1, rc, true).shape() == q1.shape());
}
