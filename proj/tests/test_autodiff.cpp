#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "recbench/autodiff.hpp"
#include "recbench/rng.hpp"

using namespace recbench;
using namespace recbench::ad;

namespace {

std::vector<double> random_values(std::size_t n, std::uint64_t seed, double lo = -1.0,
                                  double hi = 1.0) {
    Rng rng(seed);
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(lo, hi);
    return v;
}

constexpr double kGradTol = 1e-6;

}  // namespace

TEST_CASE("values: elementwise arithmetic with trailing broadcast") {
    Tape tape;
    const Tensor a = tape.leaf({2, 3}, {1, 2, 3, 4, 5, 6});
    const Tensor b = tape.leaf({3}, {10, 20, 30});
    REQUIRE(add(a, b).values() == std::vector<double>{11, 22, 33, 14, 25, 36});
    REQUIRE(sub(a, b).values() == std::vector<double>{-9, -18, -27, -6, -15, -24});
    REQUIRE(mul(a, b).values() == std::vector<double>{10, 40, 90, 40, 100, 180});
    const Tensor s = tape.scalar(2.0);
    REQUIRE(mul(a, s).values() == std::vector<double>{2, 4, 6, 8, 10, 12});
    REQUIRE(scale(a, -1.0).values() == std::vector<double>{-1, -2, -3, -4, -5, -6});
}

TEST_CASE("values: matmul against a hand-computed product") {
    Tape tape;
    const Tensor a = tape.leaf({2, 2}, {1, 2, 3, 4});
    const Tensor b = tape.leaf({2, 2}, {5, 6, 7, 8});
    REQUIRE(matmul(a, b).values() == std::vector<double>{19, 22, 43, 50});
    REQUIRE(transpose(a).values() == std::vector<double>{1, 3, 2, 4});
}

TEST_CASE("values: activations at known points") {
    Tape tape;
    const Tensor x = tape.leaf({1, 4}, {-2.0, 0.0, 0.5, 3.0});
    REQUIRE(relu(x).values() == std::vector<double>{0.0, 0.0, 0.5, 3.0});
    const auto s = sigmoid(x).values();
    REQUIRE(s[1] == 0.5);
    REQUIRE(s[3] == Catch::Approx(1.0 / (1.0 + std::exp(-3.0))));
    const auto t = ad::tanh(x).values();
    REQUIRE(t[1] == 0.0);
    REQUIRE(t[0] == Catch::Approx(std::tanh(-2.0)));
}

TEST_CASE("values: softmax rows sum to one; masked entries vanish") {
    Tape tape;
    const Tensor x = tape.leaf({2, 3}, {1, 2, 3, 0, 0, 0});
    const auto y = softmax_rows(x).values();
    REQUIRE(y[0] + y[1] + y[2] == Catch::Approx(1.0));
    REQUIRE(y[3] == Catch::Approx(1.0 / 3.0));
    // additive mask: -1e9 on the masked slot
    const Tensor mask = tape.leaf({2, 3}, {0, 0, -1e9, 0, 0, -1e9});
    const auto m = softmax_rows(add(x, mask)).values();
    REQUIRE(m[2] == Catch::Approx(0.0).margin(1e-300));
    REQUIRE(m[0] + m[1] == Catch::Approx(1.0));
}

TEST_CASE("values: loss functions at closed-form points") {
    Tape tape;
    // two equal logits, one-hot target: loss is ln 2
    const Tensor z = tape.leaf({1, 2}, {0.0, 0.0});
    const Tensor y = tape.leaf({1, 2}, {1.0, 0.0});
    REQUIRE(softmax_cross_entropy(z, y).item() == Catch::Approx(std::log(2.0)));
    // logit 0 vs any target: bce is ln 2
    const Tensor z2 = tape.leaf({2, 1}, {0.0, 0.0});
    const Tensor y2 = tape.leaf({2, 1}, {0.0, 1.0});
    REQUIRE(bce_with_logits(z2, y2).item() == Catch::Approx(std::log(2.0)));
    // extreme logits stay finite
    const Tensor z3 = tape.leaf({1, 2}, {1000.0, -1000.0});
    REQUIRE(std::isfinite(softmax_cross_entropy(z3, y).item()));
    const Tensor z4 = tape.leaf({2, 1}, {800.0, -800.0});
    REQUIRE(std::isfinite(bce_with_logits(z4, y2).item()));
}

TEST_CASE("backward: fan-out accumulates gradients from every consumer") {
    Tape tape;
    const Tensor x = tape.leaf({1}, {3.0}, true);
    // y = x*x + x  =>  dy/dx = 2x + 1 = 7
    const Tensor yv = add(mul(x, x), x);
    tape.backward(yv);
    REQUIRE(x.grad()[0] == Catch::Approx(7.0));
}

TEST_CASE("backward: gradients are exact for a linear chain") {
    Tape tape;
    const Tensor x = tape.leaf({2, 2}, {1, 2, 3, 4}, true);
    const Tensor loss = mean_all(scale(x, 3.0));
    tape.backward(loss);
    for (double g : x.grad()) REQUIRE(g == Catch::Approx(0.75));
}

// ---------------------------------------------------------------------------
// Finite-difference oracles, one per differentiable op
// ---------------------------------------------------------------------------

TEST_CASE("grad: elementwise ops match finite differences") {
    const Shape shape{2, 3};
    const auto x0 = random_values(6, 11);
    auto check = [&](auto f) { return grad_check(f, shape, x0); };

    REQUIRE(check([](Tape& t, Tensor x) {
                const Tensor c = t.leaf({2, 3}, random_values(6, 12));
                return mean_all(mul(add(x, c), sub(x, c)));
            }) < kGradTol);
    REQUIRE(check([](Tape& t, Tensor x) {
                const Tensor b = t.leaf({3}, {0.3, -0.2, 0.9});
                return mean_all(mul(add(x, b), x));
            }) < kGradTol);
    REQUIRE(check([](Tape&, Tensor x) { return mean_all(sigmoid(x)); }) < kGradTol);
    REQUIRE(check([](Tape&, Tensor x) { return mean_all(ad::tanh(x)); }) < kGradTol);
    REQUIRE(check([](Tape&, Tensor x) { return mean_all(scale(x, -2.5)); }) < kGradTol);
    // relu: shift inputs away from the kink
    auto away = x0;
    for (auto& v : away) v += v >= 0 ? 0.5 : -0.5;
    REQUIRE(grad_check([](Tape&, Tensor x) { return mean_all(relu(x)); }, shape, away) <
            kGradTol);
}

TEST_CASE("grad: broadcast operand receives the reduced gradient") {
    // differentiate w.r.t. the small operand
    REQUIRE(grad_check(
                [](Tape& t, Tensor b) {
                    const Tensor a = t.leaf({4, 3}, random_values(12, 13));
                    return mean_all(mul(a, add(a, b)));
                },
                {3}, random_values(3, 14)) < kGradTol);
}

TEST_CASE("grad: matmul on both operands") {
    REQUIRE(grad_check(
                [](Tape& t, Tensor x) {
                    const Tensor w = t.leaf({3, 2}, random_values(6, 15));
                    return mean_all(matmul(x, w));
                },
                {2, 3}, random_values(6, 16)) < kGradTol);
    REQUIRE(grad_check(
                [](Tape& t, Tensor w) {
                    const Tensor x = t.leaf({2, 3}, random_values(6, 17));
                    return mean_all(mul(matmul(x, w), matmul(x, w)));
                },
                {3, 2}, random_values(6, 18)) < kGradTol);
}

TEST_CASE("grad: transpose and reshape are index permutations") {
    REQUIRE(grad_check(
                [](Tape& t, Tensor x) {
                    const Tensor w = t.leaf({2, 4}, random_values(8, 19));
                    return mean_all(mul(transpose(x), w));
                },
                {4, 2}, random_values(8, 20)) < kGradTol);
    REQUIRE(grad_check(
                [](Tape& t, Tensor x) {
                    const Tensor c = t.leaf({6, 1}, random_values(6, 21));
                    return mean_all(mul(reshape(x, {6, 1}), c));
                },
                {2, 3}, random_values(6, 22)) < kGradTol);
}

TEST_CASE("grad: gather_rows scatter-adds through repeated indices") {
    REQUIRE(grad_check(
                [](Tape& t, Tensor x) {
                    const Tensor g = gather_rows(x, {0, 2, 2, 1, 0});
                    const Tensor c = t.leaf({5, 3}, random_values(15, 23));
                    return mean_all(mul(g, c));
                },
                {4, 3}, random_values(12, 24)) < kGradTol);
}

TEST_CASE("grad: slicing and concatenation") {
    REQUIRE(grad_check(
                [](Tape& t, Tensor x) {
                    const Tensor c = t.leaf({2, 2}, random_values(4, 25));
                    return mean_all(mul(slice_rows(x, 1, 3), c));
                },
                {3, 2}, random_values(6, 26)) < kGradTol);
    REQUIRE(grad_check(
                [](Tape& t, Tensor x) {
                    const Tensor c = t.leaf({3, 1}, random_values(3, 58));
                    return mean_all(mul(slice_cols(x, 1, 2), c));
                },
                {3, 2}, random_values(6, 59)) < kGradTol);
    REQUIRE(grad_check(
                [](Tape& t, Tensor x) {
                    const Tensor c = t.leaf({2, 2}, random_values(4, 27));
                    const Tensor top = concat_rows({x, c});
                    const Tensor wide = concat_cols(top, top);
                    const Tensor w = t.leaf({4, 4}, random_values(16, 28));
                    return mean_all(mul(wide, w));
                },
                {2, 2}, random_values(4, 29)) < kGradTol);
}

TEST_CASE("grad: reductions") {
    REQUIRE(grad_check(
                [](Tape& t, Tensor x) {
                    const Tensor c = t.leaf({3, 1}, random_values(3, 30));
                    return mean_all(mul(row_sum(x), c));
                },
                {3, 4}, random_values(12, 31)) < kGradTol);
    REQUIRE(grad_check([](Tape&, Tensor x) { return mean_all(mul(x, x)); }, {5},
                       random_values(5, 32)) < kGradTol);
}

TEST_CASE("grad: softmax rows") {
    REQUIRE(grad_check(
                [](Tape& t, Tensor x) {
                    const Tensor w = t.leaf({2, 4}, random_values(8, 33));
                    return mean_all(mul(softmax_rows(x), w));
                },
                {2, 4}, random_values(8, 34)) < kGradTol);
}

TEST_CASE("grad: layer norm w.r.t. input, gain, and bias") {
    REQUIRE(grad_check(
                [](Tape& t, Tensor x) {
                    const Tensor gain = t.leaf({4}, {1.1, 0.9, 1.0, -0.5});
                    const Tensor bias = t.leaf({4}, {0.1, -0.1, 0.0, 0.2});
                    const Tensor w = t.leaf({2, 4}, random_values(8, 35));
                    return mean_all(mul(layer_norm_rows(x, gain, bias), w));
                },
                {2, 4}, random_values(8, 36)) < 1e-5);
    REQUIRE(grad_check(
                [](Tape& t, Tensor gain) {
                    const Tensor x = t.leaf({3, 4}, random_values(12, 37));
                    const Tensor bias = t.leaf({4}, {0.0, 0.1, -0.2, 0.05});
                    const Tensor w = t.leaf({3, 4}, random_values(12, 38));
                    return mean_all(mul(layer_norm_rows(x, gain, bias), w));
                },
                {4}, random_values(4, 39)) < 1e-5);
    REQUIRE(grad_check(
                [](Tape& t, Tensor bias) {
                    const Tensor x = t.leaf({3, 4}, random_values(12, 40));
                    const Tensor gain = t.leaf({4}, {1.0, 1.2, 0.8, 1.1});
                    const Tensor w = t.leaf({3, 4}, random_values(12, 41));
                    return mean_all(mul(layer_norm_rows(x, gain, bias), w));
                },
                {4}, random_values(4, 42)) < 1e-5);
}

TEST_CASE("grad: l2 row normalization") {
    auto x0 = random_values(8, 43);
    for (auto& v : x0) v += v >= 0 ? 0.5 : -0.5;  // keep rows away from zero norm
    REQUIRE(grad_check(
                [](Tape& t, Tensor x) {
                    const Tensor w = t.leaf({2, 4}, random_values(8, 44));
                    return mean_all(mul(l2_normalize_rows(x), w));
                },
                {2, 4}, x0) < 1e-5);
}

TEST_CASE("grad: fused convolution and max pooling") {
    // w.r.t. the input image
    REQUIRE(grad_check(
                [](Tape& t, Tensor x) {
                    const Tensor k = t.leaf({3, 3, 2, 3}, random_values(54, 45));
                    return mean_all(conv2d_maxpool(x, k, 1, 2, 2));
                },
                {1, 6, 6, 2}, random_values(72, 46)) < 1e-5);
    // w.r.t. the kernels
    REQUIRE(grad_check(
                [](Tape& t, Tensor k) {
                    const Tensor x = t.leaf({1, 6, 6, 2}, random_values(72, 47));
                    return mean_all(conv2d_maxpool(x, k, 1, 2, 2));
                },
                {3, 3, 2, 3}, random_values(54, 48)) < 1e-5);
    // unbatched input, stride 2
    REQUIRE(grad_check(
                [](Tape& t, Tensor x) {
                    const Tensor k = t.leaf({2, 2, 1, 2}, random_values(8, 49));
                    return mean_all(conv2d_maxpool(x, k, 2, 1, 1));
                },
                {7, 7, 1}, random_values(49, 50)) < 1e-5);
}

TEST_CASE("grad: losses") {
    REQUIRE(grad_check(
                [](Tape& t, Tensor z) {
                    const Tensor y = t.leaf({3, 4}, {1, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1});
                    return softmax_cross_entropy(z, y);
                },
                {3, 4}, random_values(12, 51)) < kGradTol);
    REQUIRE(grad_check(
                [](Tape& t, Tensor z) {
                    const Tensor y = t.leaf({4, 1}, {1, 0, 1, 0});
                    return bce_with_logits(z, y);
                },
                {4, 1}, random_values(4, 52)) < kGradTol);
}

TEST_CASE("grad: dropout with a fixed seed is differentiable through the mask") {
    REQUIRE(grad_check(
                [](Tape& t, Tensor x) {
                    const Tensor w = t.leaf({2, 4}, random_values(8, 53));
                    return mean_all(mul(dropout(x, 0.5, true, 1234), w));
                },
                {2, 4}, random_values(8, 54)) < kGradTol);
}

TEST_CASE("dropout: identity when not training, scaled mask when training") {
    Tape tape;
    const Tensor x = tape.leaf({10, 10}, random_values(100, 55));
    const Tensor eval_out = dropout(x, 0.5, false, 7);
    REQUIRE(eval_out.values() == x.values());
    const Tensor zero_rate = dropout(x, 0.0, true, 7);
    REQUIRE(zero_rate.values() == x.values());

    const Tensor a = dropout(x, 0.4, true, 7);
    const Tensor b = dropout(x, 0.4, true, 7);
    const Tensor c = dropout(x, 0.4, true, 8);
    REQUIRE(a.values() == b.values());  // same seed, same mask
    REQUIRE(a.values() != c.values());  // different seed, different mask
    int zeros = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a.values()[i] == 0.0) ++zeros;
        else REQUIRE(a.values()[i] == Catch::Approx(x.values()[i] / 0.6));
    }
    REQUIRE(zeros > 20);
    REQUIRE(zeros < 60);
    REQUIRE_THROWS_AS(dropout(x, 1.0, true, 7), InvalidConfigError);
}

TEST_CASE("conv2d_maxpool: pool ties resolve to the first window cell in scan order") {
    Tape tape;
    // constant input and a single 1x1 identity kernel make every conv cell
    // equal; backward must then route all gradient through the first cell
    const Tensor x = tape.leaf({1, 2, 2, 1}, {1, 1, 1, 1}, true);
    const Tensor k = tape.leaf({1, 1, 1, 1}, {1.0});
    const Tensor y = conv2d_maxpool(x, k, 1, 2, 2);
    REQUIRE(y.values() == std::vector<double>{1.0});
    tape.backward(mean_all(y));
    REQUIRE(x.grad() == std::vector<double>{1.0, 0.0, 0.0, 0.0});
}

TEST_CASE("shape errors are reported, not silently broadcast") {
    Tape tape;
    const Tensor a = tape.leaf({2, 3}, random_values(6, 56));
    const Tensor b = tape.leaf({2}, {1.0, 2.0});
    REQUIRE_THROWS_AS(add(a, b), ShapeMismatchError);
    REQUIRE_THROWS_AS(matmul(a, a), ShapeMismatchError);
    REQUIRE_THROWS_AS(reshape(a, {4, 2}), ShapeMismatchError);
    REQUIRE_THROWS_AS(gather_rows(a, {5}), ShapeMismatchError);
    REQUIRE_THROWS_AS(slice_rows(a, 1, 1), ShapeMismatchError);
    REQUIRE_THROWS_AS(tape.backward(a), ShapeMismatchError);  // non-scalar root
}

TEST_CASE("non-finite values are rejected at creation and after ops") {
    Tape tape;
    REQUIRE_THROWS_AS(tape.leaf({1}, {std::nan("")}), NonFiniteError);
    REQUIRE_THROWS_AS(tape.leaf({1}, {std::numeric_limits<double>::infinity()}), NonFiniteError);
    // overflow produced by an op is caught too
    const Tensor big = tape.leaf({1}, {1e308});
    REQUIRE_THROWS_AS(mul(big, big), NonFiniteError);
}

TEST_CASE("targets of classification losses must be constants") {
    Tape tape;
    const Tensor z = tape.leaf({1, 2}, {0.1, 0.2});
    const Tensor y = tape.leaf({1, 2}, {1.0, 0.0}, true);
    REQUIRE_THROWS_AS(softmax_cross_entropy(z, y), ShapeMismatchError);
    const Tensor z2 = tape.leaf({1, 1}, {0.1});
    const Tensor y2 = tape.leaf({1, 1}, {1.0}, true);
    REQUIRE_THROWS_AS(bce_with_logits(z2, y2), ShapeMismatchError);
    // rows that do not sum to one are also rejected
    const Tensor bad = tape.leaf({1, 2}, {0.7, 0.7});
    REQUIRE_THROWS_AS(softmax_cross_entropy(z, bad), ShapeMismatchError);
}
