#include <cmath>
#include <random>

#include "crayon/ops.hpp"
#include "doctest.h"
#include "gradcheck.hpp"

using namespace crayon;
using namespace crayon::ag;
using testutil::check_gradients;
using testutil::random_tensor;

namespace {

// sum(f(x) * probe) turns any op into a scalar with a generic upstream gradient.
Var probe_sum(const Var& y, const Tensor& probe) { return sum_all(mul_const(y, probe)); }

// Checks first derivatives of `op`, and second derivatives through grad(create_graph).
void check_op(const std::function<Var(const std::vector<Var>&)>& op, std::vector<Tensor> inputs, std::uint64_t seed,
              double eps = 1e-5) {
    std::mt19937_64 rng(seed);
    std::vector<Var> params;
    for (auto& t : inputs) params.push_back(Var::parameter(t));
    const Tensor probe = random_tensor(op(params).dims(), rng);
    auto first = [&] { return probe_sum(op(params), probe); };
    const auto r1 = check_gradients(first, params, eps, 1e-4);
    CHECK(r1.within == r1.checked);

    std::vector<Tensor> dirs;
    for (const auto& p : params) dirs.push_back(random_tensor(p.dims(), rng));
    auto second = [&] {
        const auto g = grad(first(), params, true);
        Var total = sum_all(mul_const(g[0], dirs[0]));
        for (std::size_t i = 1; i < g.size(); ++i) total = add(total, sum_all(mul_const(g[i], dirs[i])));
        return total;
    };
    const auto r2 = check_gradients(second, params, eps, 1e-4);
    CHECK(r2.within == r2.checked);
}

}  // namespace

TEST_CASE("grad of simple expressions") {
    Var x = Var::parameter(Tensor({3}, {1.0, 2.0, 3.0}));
    Var y = sum_all(mul(x, x));
    auto g = grad(y, {x});
    CHECK(g[0].value() == Tensor({3}, {2.0, 4.0, 6.0}));

    auto g2 = grad(y, {x}, true);
    auto h = grad(sum_all(g2[0]), {x});
    CHECK(h[0].value() == Tensor({3}, {2.0, 2.0, 2.0}));
}

TEST_CASE("unused inputs receive zeros") {
    Var x = Var::parameter(Tensor({2}, 1.0));
    Var z = Var::parameter(Tensor({2, 2}, 1.0));
    auto g = grad(sum_all(x), {x, z});
    CHECK(g[1].value() == Tensor({2, 2}, 0.0));
}

TEST_CASE("no graph is recorded under NoGradGuard") {
    Var x = Var::parameter(Tensor({2}, 1.0));
    NoGradGuard ng;
    Var y = mul(x, x);
    CHECK_FALSE(y.requires_grad());
}

TEST_CASE("elementwise ops") {
    std::mt19937_64 rng(1);
    Dims d{2, 3};
    check_op([](auto& v) { return add(v[0], v[1]); }, {random_tensor(d, rng), random_tensor(d, rng)}, 2);
    check_op([](auto& v) { return sub(v[0], v[1]); }, {random_tensor(d, rng), random_tensor(d, rng)}, 3);
    check_op([](auto& v) { return mul(v[0], v[1]); }, {random_tensor(d, rng), random_tensor(d, rng)}, 4);
    check_op([](auto& v) { return scale(neg(v[0]), 2.5); }, {random_tensor(d, rng)}, 5);
    check_op([](auto& v) { return exp(v[0]); }, {random_tensor(d, rng)}, 6);
    check_op([](auto& v) { return mul(relu(v[0]), v[0]); }, {random_tensor(d, rng)}, 7);
    check_op([](auto& v) { return reshape(v[0], {3, 2}); }, {random_tensor(d, rng)}, 8);
}

TEST_CASE("reductions and broadcasts") {
    std::mt19937_64 rng(11);
    check_op([](auto& v) { return mul(fill_like(sum_all(v[0]), {2, 3}), v[0]); }, {random_tensor({2, 3}, rng)}, 12);
    check_op([](auto& v) { return mul(sample_broadcast(sample_sum(v[0]), {2, 2, 3}), v[0]); },
             {random_tensor({2, 2, 3}, rng)}, 13);
    check_op([](auto& v) { return mul(channel_broadcast(channel_sum(v[0]), {2, 3, 2, 2}), v[0]); },
             {random_tensor({2, 3, 2, 2}, rng)}, 14);
    check_op([](auto& v) { return mul(spatial_broadcast(spatial_sum(v[0]), 2, 2), v[0]); },
             {random_tensor({2, 3, 2, 2}, rng)}, 15);
    check_op([](auto& v) { return mul(row_broadcast(row_sum(v[0]), 4), v[0]); }, {random_tensor({4, 3}, rng)}, 16);
    check_op([](auto& v) { return mul(rowsum_broadcast(v[0]), v[0]); }, {random_tensor({4, 3}, rng)}, 17);
}

TEST_CASE("convolution and its adjoints") {
    std::mt19937_64 rng(21);
    for (ConvGeometry g : {ConvGeometry{1, 1}, ConvGeometry{2, 1}, ConvGeometry{1, 0}}) {
        check_op([g](auto& v) { return mul(conv2d(v[0], v[1], g), conv2d(v[0], v[1], g)); },
                 {random_tensor({2, 2, 5, 5}, rng), random_tensor({3, 2, 3, 3}, rng)}, 22);
    }
    check_op([](auto& v) { return add_channel_bias(mul(v[0], v[0]), v[1]); },
             {random_tensor({2, 3, 2, 2}, rng), random_tensor({3}, rng)}, 23);
    check_op([](auto& v) { return mul_channel_const(mul(v[0], v[0]), {1.0, 0.0, 1.0}); },
             {random_tensor({2, 3, 2, 2}, rng)}, 24);
}

TEST_CASE("dense ops") {
    std::mt19937_64 rng(31);
    check_op([](auto& v) { return mul(matmul(v[0], v[1]), matmul(v[0], v[1])); },
             {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)}, 32);
    check_op([](auto& v) { return mul(matmul(v[0], v[1], true, true), matmul(v[0], v[1], true, true)); },
             {random_tensor({4, 3}, rng), random_tensor({2, 4}, rng)}, 33);
    check_op([](auto& v) { return add_row_bias(mul(v[0], v[0]), v[1]); },
             {random_tensor({3, 2}, rng), random_tensor({2}, rng)}, 34);
    check_op([](auto& v) { return log_softmax(mul(v[0], v[0])); }, {random_tensor({3, 4}, rng)}, 35);
    check_op([](auto& v) { return mul(gather_cols(v[0], {1, 0, 2}), gather_cols(v[0], {1, 0, 2})); },
             {random_tensor({3, 4}, rng)}, 36);
    check_op([](auto& v) { return mul(scatter_cols(v[0], {1, 0, 2}, 4), scatter_cols(v[0], {1, 0, 2}, 4)); },
             {random_tensor({3}, rng)}, 37);
}

TEST_CASE("grad-cam building blocks") {
    std::mt19937_64 rng(41);
    check_op([](auto& v) { return mul(weighted_channel_sum(v[0], v[1]), weighted_channel_sum(v[0], v[1])); },
             {random_tensor({2, 3, 2, 2}, rng), random_tensor({2, 3}, rng)}, 42);
    check_op([](auto& v) { return mul(channel_outer(v[0], v[1]), channel_outer(v[0], v[1])); },
             {random_tensor({2, 3}, rng), random_tensor({2, 2, 2}, rng)}, 43);
    check_op([](auto& v) { return mul(spatial_dot(v[0], v[1]), spatial_dot(v[0], v[1])); },
             {random_tensor({2, 3, 2, 2}, rng), random_tensor({2, 2, 2}, rng)}, 44);
    check_op([](auto& v) { return mul(scale_samples(v[0], v[1]), v[0]); },
             {random_tensor({2, 2, 2}, rng), random_tensor({2}, rng)}, 45);
    check_op([](auto& v) { return mul(sample_dot(v[0], v[1]), sample_dot(v[0], v[1])); },
             {random_tensor({2, 2, 2}, rng), random_tensor({2, 2, 2}, rng)}, 46);
    check_op([](auto& v) { return mul(sample_max(v[0]), sample_max(v[0])); }, {random_tensor({3, 2, 2}, rng)}, 47);
    check_op([](auto& v) { return mul(div_samples(v[0], v[1]), v[0]); },
             {random_tensor({2, 2, 2}, rng), random_tensor({2}, rng, 0.5, 2.0)}, 49);
    check_op([](auto& v) { return safe_reciprocal(v[0]); }, {random_tensor({2, 2}, rng, 0.5, 2.0)}, 48);
}

TEST_CASE("safe_reciprocal maps zero to zero with zero gradient") {
    Var x = Var::parameter(Tensor({2}, {0.0, 2.0}));
    Var r = safe_reciprocal(x);
    CHECK(r.value() == Tensor({2}, {0.0, 0.5}));
    auto g = grad(sum_all(r), {x});
    CHECK(g[0].value()[0] == 0.0);
    CHECK(g[0].value()[1] == doctest::Approx(-0.25));
}
