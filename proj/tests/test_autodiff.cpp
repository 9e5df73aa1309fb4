#include <doctest.h>

#include <cmath>
#include <vector>

#include "grad_check.hpp"
#include "vdrive/graph.hpp"
#include "vdrive/rng.hpp"

using namespace vdrive;
using namespace vdrive::ad;
using gradcheck::Graph64;

namespace {

TensorT<double> random_tensor(Rng& rng, std::vector<std::size_t> dims, double lo = -2.0, double hi = 2.0) {
    TensorT<double> t(std::move(dims));
    for (auto& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

// scalarize an arbitrary output so every op can be FD-checked through a
// fixed random projection
gradcheck::NodeId project_to_scalar(Graph64& g, gradcheck::NodeId x, Rng& rng) {
    const auto& v = g.value(x);
    TensorT<double> w(v.dims);
    for (auto& e : w.data) e = rng.uniform(-1.0, 1.0);
    return g.sum(g.mul(x, g.constant(w)));
}

}  // namespace

TEST_SUITE_BEGIN("autodiff");

TEST_CASE("relu forward matches the rectifier definition") {
    Graph g;
    auto x = g.constant(Tensor({3}, {-1.0f, 0.0f, 2.0f}));
    auto y = g.relu(x);
    CHECK(g.value(y).data == std::vector<float>{0.0f, 0.0f, 2.0f});
}

TEST_CASE("matmul matches a hand product") {
    Graph g;
    // 2x3 identity-padded matrix times a 3-vector
    auto a = g.constant(Tensor({2, 3}, {1, 0, 0, 0, 1, 0}));
    auto v = g.constant(Tensor({3}, {4.0f, -2.5f, 7.0f}));
    auto y = g.matmul(a, v);
    REQUIRE(g.value(y).dims == std::vector<std::size_t>{2});
    CHECK(g.value(y).data[0] == doctest::Approx(4.0));
    CHECK(g.value(y).data[1] == doctest::Approx(-2.5));

    Graph g2;
    auto m = g2.constant(Tensor({2, 2}, {1, 2, 3, 4}));
    auto n = g2.constant(Tensor({2, 2}, {5, 6, 7, 8}));
    auto p = g2.matmul(m, n);
    CHECK(g2.value(p).data == std::vector<float>{19, 22, 43, 50});
}

TEST_CASE("bce of (target=1, prediction=0.5) is -ln(0.5) per element") {
    Graph g;
    auto p = g.constant(Tensor({2}, {0.5f, 0.5f}));
    auto t = g.constant(Tensor({2}, {1.0f, 1.0f}));
    auto y = g.bce(p, t);
    CHECK(g.value(y).data[0] == doctest::Approx(0.6931).epsilon(1e-3));
    CHECK(g.value(y).data[1] == doctest::Approx(std::log(2.0)).epsilon(1e-6));
}

TEST_CASE("backward rejects non-scalar roots") {
    Graph g;
    auto x = g.param(Tensor({2}, {1.0f, 2.0f}));
    auto y = g.relu(x);
    CHECK_THROWS_AS(g.backward(y), ValidationError);
}

TEST_CASE("d/dx of x^2 at x=3 is 6") {
    Graph g;
    auto x = g.param(Tensor::scalar(3.0f));
    auto y = g.mul(x, x);
    g.backward(y);
    CHECK(g.grad(x).data[0] == doctest::Approx(6.0));
}

TEST_CASE("gradient of a constant function is all zeros") {
    Graph g;
    auto x = g.param(Tensor({3}, {1.0f, 2.0f, 3.0f}));
    auto c = g.constant(Tensor::scalar(5.0f));
    g.backward(c);
    for (float v : g.grad(x).data) CHECK(v == 0.0f);
}

TEST_CASE("3-layer network gradient matches central differences (h=1e-3, 64-bit)") {
    Rng rng(77);
    auto w1 = random_tensor(rng, {4, 5});
    auto b1 = random_tensor(rng, {5});
    auto w2 = random_tensor(rng, {5, 4});
    auto b2 = random_tensor(rng, {4});
    auto w3 = random_tensor(rng, {4, 2});
    auto x = random_tensor(rng, {3, 4});
    auto target = random_tensor(rng, {3, 2});
    auto build = [&](Graph64& g, const std::vector<gradcheck::NodeId>& in) {
        auto h1 = g.relu(g.add(g.matmul(in[5], in[0]), in[1]));
        auto h2 = g.tanh_(g.add(g.matmul(h1, in[2]), in[3]));
        auto out = g.matmul(h2, in[4]);
        return g.mse(out, g.constant(target));
    };
    auto res = gradcheck::check_gradients(build, {w1, b1, w2, b2, w3, x}, 1e-3, 1e-4);
    CHECK(res.max_rel_err <= 1e-4);
}

TEST_CASE("stop_gradient forwards values unchanged") {
    Graph g;
    auto x = g.param(Tensor({3}, {1.5f, -2.0f, 0.25f}));
    auto y = g.stop_gradient(x);
    CHECK(g.value(y).data == g.value(x).data);
}

TEST_CASE("gradient of sum(stop_gradient(x)) is zero") {
    Graph g;
    auto x = g.param(Tensor({3}, {1.0f, 2.0f, 3.0f}));
    auto y = g.sum(g.stop_gradient(x));
    g.backward(y);
    for (float v : g.grad(x).data) CHECK(v == 0.0f);
}

TEST_CASE("gradient of sum(x * stop_gradient(x)) is x, not 2x") {
    Graph g;
    auto x = g.param(Tensor({1}, {2.0f}));
    auto y = g.sum(g.mul(x, g.stop_gradient(x)));
    g.backward(y);
    CHECK(g.grad(x).data[0] == doctest::Approx(2.0));
}

TEST_CASE("stop_gradient composes with itself") {
    Graph g;
    auto x = g.param(Tensor({2}, {1.0f, -1.0f}));
    auto once = g.stop_gradient(x);
    auto twice = g.stop_gradient(g.stop_gradient(x));
    CHECK(g.value(once).data == g.value(twice).data);
    auto y = g.sum(g.mul(x, twice));
    g.backward(y);
    CHECK(g.grad(x).data == std::vector<float>{1.0f, -1.0f});
}

TEST_CASE("backward is deterministic across runs on the same graph") {
    Rng rng(5);
    Graph g;
    Tensor w({6, 6});
    for (auto& v : w.data) v = static_cast<float>(rng.uniform(-1, 1));
    Tensor x({6, 6});
    for (auto& v : x.data) v = static_cast<float>(rng.uniform(-1, 1));
    auto wp = g.param(w);
    auto loss = g.mean(g.relu(g.matmul(g.constant(x), wp)));
    g.backward(loss);
    auto first = g.grad(wp).data;
    g.backward(loss);
    CHECK(g.grad(wp).data == first);
}

TEST_CASE("dimension mismatches name the offending operand") {
    Graph g;
    auto a = g.constant(Tensor({2, 3}, std::vector<float>(6, 1.0f)));
    auto b = g.constant(Tensor({4, 2}, std::vector<float>(8, 1.0f)));
    try {
        g.matmul(a, b);
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        std::string msg = e.what();
        CHECK(msg.find("matmul") != std::string::npos);
        CHECK(msg.find("operand 2") != std::string::npos);
        CHECK(msg.find("[4,2]") != std::string::npos);
    }
    CHECK_THROWS_AS(g.add(a, b), ValidationError);
    CHECK_THROWS_AS(g.bce(a, b), ValidationError);
}

TEST_CASE("softmax rows sum to one and match max-subtracted reference") {
    Graph g;
    auto x = g.constant(Tensor({2, 3}, {1000.0f, 1001.0f, 1002.0f, -3.0f, 0.0f, 3.0f}));
    auto y = g.softmax(x);
    const auto& v = g.value(y);
    for (std::size_t r = 0; r < 2; ++r) {
        double sum = 0;
        for (std::size_t c = 0; c < 3; ++c) sum += v.at(r, c);
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
    // large inputs do not overflow
    CHECK(std::isfinite(v.at(0, 0)));
    CHECK(v.at(0, 2) > v.at(0, 1));
}

TEST_CASE("every op kind passes the 64-bit finite-difference audit") {
    // 50 random small instances per kind, entries in [-2,2], extents <= 8
    Rng rng(2024);
    const double tol = 1e-4;
    const double h = 1e-5;

    auto dims2 = [&]() {
        return std::vector<std::size_t>{1 + rng.uniform_index(8), 1 + rng.uniform_index(8)};
    };

    for (int trial = 0; trial < 50; ++trial) {
        std::size_t m = 1 + rng.uniform_index(8), k = 1 + rng.uniform_index(8), n = 1 + rng.uniform_index(8);

        // matmul
        {
            auto a = random_tensor(rng, {m, k});
            auto b = random_tensor(rng, {k, n});
            auto res = gradcheck::check_gradients(
                [&](Graph64& g, const std::vector<gradcheck::NodeId>& in) {
                    Rng prj(trial);
                    return project_to_scalar(g, g.matmul(in[0], in[1]), prj);
                },
                {a, b}, h, tol);
            CHECK(res.max_rel_err <= tol);
        }
        // transpose
        {
            auto a = random_tensor(rng, dims2());
            auto res = gradcheck::check_gradients(
                [&](Graph64& g, const std::vector<gradcheck::NodeId>& in) {
                    Rng prj(trial);
                    return project_to_scalar(g, g.transpose(in[0]), prj);
                },
                {a}, h, tol);
            CHECK(res.max_rel_err <= tol);
        }
        // add (same dims + trailing bias), sub, mul, scale
        {
            auto a = random_tensor(rng, {m, n});
            auto b = random_tensor(rng, {m, n});
            auto bias = random_tensor(rng, {n});
            auto res = gradcheck::check_gradients(
                [&](Graph64& g, const std::vector<gradcheck::NodeId>& in) {
                    Rng prj(trial);
                    auto s = g.add(g.mul(g.sub(in[0], in[1]), in[0]), in[2]);
                    return project_to_scalar(g, g.scale(s, 1.7), prj);
                },
                {a, b, bias}, h, tol);
            CHECK(res.max_rel_err <= tol);
        }
        // relu / exp / tanh / sigmoid chain (relu shifted off the kink)
        {
            auto a = random_tensor(rng, {m, n});
            for (auto& v : a.data) {
                if (std::abs(v) < 0.05) v = 0.1;
            }
            auto res = gradcheck::check_gradients(
                [&](Graph64& g, const std::vector<gradcheck::NodeId>& in) {
                    Rng prj(trial);
                    auto y = g.sigmoid(g.tanh_(g.exp_(g.scale(g.relu(in[0]), 0.3))));
                    return project_to_scalar(g, y, prj);
                },
                {a}, h, tol);
            CHECK(res.max_rel_err <= tol);
        }
        // log on positive inputs
        {
            auto a = random_tensor(rng, {m}, 0.2, 2.0);
            auto res = gradcheck::check_gradients(
                [&](Graph64& g, const std::vector<gradcheck::NodeId>& in) {
                    Rng prj(trial);
                    return project_to_scalar(g, g.log_(in[0]), prj);
                },
                {a}, h, tol);
            CHECK(res.max_rel_err <= tol);
        }
        // softmax + layer_norm
        {
            auto a = random_tensor(rng, {m, 2 + rng.uniform_index(7)});
            auto res = gradcheck::check_gradients(
                [&](Graph64& g, const std::vector<gradcheck::NodeId>& in) {
                    Rng prj(trial);
                    return project_to_scalar(g, g.softmax(g.layer_norm(in[0])), prj);
                },
                {a}, h, tol);
            CHECK(res.max_rel_err <= tol);
        }
        // concat + slice
        {
            auto a = random_tensor(rng, {m, k});
            auto b = random_tensor(rng, {m, n});
            auto res = gradcheck::check_gradients(
                [&](Graph64& g, const std::vector<gradcheck::NodeId>& in) {
                    Rng prj(trial);
                    auto c = g.concat({in[0], in[1]}, 1);
                    auto s = g.slice(c, 1, 0, g.value(c).dims[1]);
                    return project_to_scalar(g, s, prj);
                },
                {a, b}, h, tol);
            CHECK(res.max_rel_err <= tol);
        }
        // sum / mean / mse
        {
            auto a = random_tensor(rng, {m, n});
            auto b = random_tensor(rng, {m, n});
            auto res = gradcheck::check_gradients(
                [&](Graph64& g, const std::vector<gradcheck::NodeId>& in) {
                    auto t1 = g.sum(in[0]);
                    auto t2 = g.mean(in[1]);
                    auto t3 = g.mse(in[0], in[1]);
                    return g.add(g.add(t1, t2), t3);
                },
                {a, b}, h, tol);
            CHECK(res.max_rel_err <= tol);
        }
        // bce (predictions kept away from the clamp boundary)
        {
            auto p = random_tensor(rng, {m}, 0.05, 0.95);
            auto t = random_tensor(rng, {m}, 0.0, 1.0);
            auto res = gradcheck::check_gradients(
                [&](Graph64& g, const std::vector<gradcheck::NodeId>& in) {
                    Rng prj(trial);
                    return project_to_scalar(g, g.bce(in[0], in[1]), prj);
                },
                {p, t}, h, tol);
            CHECK(res.max_rel_err <= tol);
        }
        // embedding + cross_entropy
        {
            std::size_t V = 3 + rng.uniform_index(6), D = 2 + rng.uniform_index(6);
            auto table = random_tensor(rng, {V, D});
            std::vector<int> idx(4), targets;
            for (auto& i : idx) i = static_cast<int>(rng.uniform_index(V));
            auto logits_w = random_tensor(rng, {D, V});
            for (int r = 0; r < 4; ++r) targets.push_back(static_cast<int>(rng.uniform_index(V)));
            auto res = gradcheck::check_gradients(
                [&](Graph64& g, const std::vector<gradcheck::NodeId>& in) {
                    auto e = g.embedding(in[0], idx);
                    auto logits = g.matmul(e, in[1]);
                    return g.cross_entropy(logits, targets);
                },
                {table, logits_w}, h, tol);
            CHECK(res.max_rel_err <= tol);
        }
    }
}

TEST_CASE("generic kind dispatcher applies every kind") {
    Graph g;
    auto a = g.constant(Tensor({2, 2}, {1, 2, 3, 4}));
    auto b = g.constant(Tensor({2, 2}, {0.5f, 0.5f, 0.5f, 0.5f}));
    OpAttrs attrs;
    CHECK(g.value(apply_op(g, OpKind::add, {a, b})).data[0] == doctest::Approx(1.5));
    CHECK(g.value(apply_op(g, OpKind::matmul, {a, b})).data[0] == doctest::Approx(1.5));
    attrs.factor = 2.0;
    CHECK(g.value(apply_op(g, OpKind::scale, {a}, attrs)).data[3] == doctest::Approx(8.0));
    attrs.axis = 0;
    attrs.start = 1;
    attrs.len = 1;
    CHECK(g.value(apply_op(g, OpKind::slice, {a}, attrs)).data[0] == doctest::Approx(3.0));
    CHECK_THROWS_AS(apply_op(g, OpKind::matmul, {a}), ValidationError);
}

TEST_CASE("forward values stay finite on finite inputs") {
    Rng rng(99);
    for (int trial = 0; trial < 20; ++trial) {
        Graph g;
        Tensor x({4, 4});
        for (auto& v : x.data) v = static_cast<float>(rng.uniform(-50, 50));
        auto id = g.constant(x);
        auto y = g.softmax(g.layer_norm(g.relu(id)));
        for (float v : g.value(y).data) CHECK(std::isfinite(v));
    }
}

TEST_SUITE_END();
