#include "toib/tensor.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "toib/rng.hpp"

using namespace toib;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad, double lo = -2.0, double hi = 2.0) {
    Tensor t = Tensor::zeros(std::move(shape), requires_grad);
    for (double& x : t.values()) x = rng.uniform(lo, hi);
    return t;
}

}  // namespace

TEST(Matmul, IdentityCase) {
    Tape tape;
    Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
    Tensor b = Tensor::from({2, 2}, {3, 4, 5, 6});
    Tensor c = tape.matmul(eye, b);
    EXPECT_EQ(c.values(), b.values());
}

TEST(Matmul, HandSum) {
    Tape tape;
    Tensor a = Tensor::from({1, 2}, {1, 2});
    Tensor b = Tensor::from({2, 1}, {3, 4});
    EXPECT_DOUBLE_EQ(tape.matmul(a, b).value(), 11.0);
}

TEST(Matmul, ShapeMismatch) {
    Tape tape;
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({2, 3});
    EXPECT_THROW(tape.matmul(a, b), DimensionError);
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
    Rng rng(7);
    Tensor a = random_tensor({3, 4}, rng, true);
    Tensor b = random_tensor({4, 2}, rng, true);
    Tape tape;
    Tensor loss = tape.sum(tape.matmul(a, b));
    tape.backward(loss);
    auto fwd = [&] {
        Tape t(false);
        return t.sum(t.matmul(a, b)).value();
    };
    const auto rep = oracle::fd_compare(fwd, {a, b});
    EXPECT_LT(rep.max_rel, 1e-6);
}

TEST(Elementwise, ReluValues) {
    Tape tape;
    Tensor x = Tensor::from({3}, {-1, 0, 2});
    Tensor y = tape.relu(x);
    EXPECT_EQ(y.values(), (std::vector<double>{0, 0, 2}));
}

TEST(Elementwise, ExpLogInverse) {
    Rng rng(3);
    Tape tape;
    Tensor x = random_tensor({8}, rng, false, 0.1, 3.0);
    Tensor y = tape.exp_(tape.log_(x));
    for (size_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(y.at(i), x.at(i), 1e-12);
}

TEST(Elementwise, LogDomainError) {
    Tape tape;
    Tensor x = Tensor::from({2}, {1.0, -0.5});
    EXPECT_THROW(tape.log_(x), DomainError);
}

TEST(Elementwise, TanhDerivativeAtZero) {
    Tensor x = Tensor::from({1}, {0.0}, true);
    Tape tape;
    tape.backward(tape.sum(tape.tanh_(x)));
    EXPECT_DOUBLE_EQ(x.grad()[0], 1.0);
    auto fwd = [&] {
        Tape t(false);
        return t.sum(t.tanh_(x)).value();
    };
    const auto rep = oracle::fd_compare(fwd, {x});
    EXPECT_LT(rep.max_rel, 1e-6);
}

TEST(Elementwise, BroadcastRules) {
    Tape tape;
    Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
    Tensor s = Tensor::scalar(10.0);
    Tensor sum = tape.add(a, s);
    EXPECT_EQ(sum.values(), (std::vector<double>{11, 12, 13, 14}));
    Tensor bad = Tensor::zeros({3});
    EXPECT_THROW(tape.add(a, bad), DimensionError);
}

TEST(Elementwise, ScalarBroadcastGradientSums) {
    Tensor a = Tensor::from({3}, {1, 2, 3});
    Tensor s = Tensor::scalar(2.0, true);
    Tape tape;
    tape.backward(tape.sum(tape.mul(a, s)));
    EXPECT_DOUBLE_EQ(s.grad()[0], 6.0);
}

TEST(Reduce, SumAndMean) {
    Tape tape;
    Tensor x = Tensor::from({3}, {1, 2, 3});
    EXPECT_DOUBLE_EQ(tape.sum(x).value(), 6.0);
    EXPECT_DOUBLE_EQ(tape.mean(x).value(), 2.0);
}

TEST(Reduce, EmptyAxisFails) {
    Tape tape;
    Tensor x = Tensor::zeros({0, 3});
    EXPECT_THROW(tape.mean(x, 0), DimensionError);
    EXPECT_THROW(tape.mean(x), DimensionError);
    Tensor y = Tensor::zeros({2, 2});
    EXPECT_THROW(tape.sum(y, 2), DimensionError);
}

TEST(Reduce, MeanGradientIsUniform) {
    Tensor x = Tensor::from({4}, {1, 2, 3, 4}, true);
    Tape tape;
    tape.backward(tape.mean(x));
    for (const double g : x.grad()) EXPECT_DOUBLE_EQ(g, 0.25);
}

TEST(Reduce, AxisReductions) {
    Tape tape;
    Tensor x = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor rows = tape.sum(x, 1);
    EXPECT_EQ(rows.values(), (std::vector<double>{6, 15}));
    Tensor cols = tape.mean(x, 0);
    EXPECT_EQ(cols.values(), (std::vector<double>{2.5, 3.5, 4.5}));
}

TEST(Reparam, EpsZeroGivesMu) {
    Tape tape;
    Tensor mu = Tensor::from({2}, {0.3, -1.2});
    Tensor lv = Tensor::from({2}, {0.4, 0.9});
    Tensor eps = Tensor::zeros({2});
    EXPECT_EQ(tape.reparam_sample(mu, lv, eps).values(), mu.values());
}

TEST(Reparam, UnitSigma) {
    Tape tape;
    Tensor mu = Tensor::zeros({1});
    Tensor lv = Tensor::zeros({1});
    Tensor eps = Tensor::from({1}, {1.0});
    EXPECT_DOUBLE_EQ(tape.reparam_sample(mu, lv, eps).value(), 1.0);
}

TEST(Reparam, LogvarGradientMatchesFiniteDifferences) {
    Rng rng(11);
    Tensor mu = random_tensor({2, 3}, rng, true);
    Tensor lv = random_tensor({2, 3}, rng, true, -1.0, 1.0);
    Tensor eps = random_tensor({2, 3}, rng, false);
    Tape tape;
    tape.backward(tape.sum(tape.reparam_sample(mu, lv, eps)));
    // Analytic: dz/dlogvar = 0.5 * exp(0.5*logvar) * eps.
    for (size_t i = 0; i < lv.numel(); ++i)
        EXPECT_NEAR(lv.grad()[i], 0.5 * std::exp(0.5 * lv.at(i)) * eps.at(i), 1e-12);
    auto fwd = [&] {
        Tape t(false);
        return t.sum(t.reparam_sample(mu, lv, eps)).value();
    };
    const auto rep = oracle::fd_compare(fwd, {mu, lv});
    EXPECT_LT(rep.max_rel, 1e-6);
}

TEST(Backward, SumGivesOnes) {
    Tensor x = Tensor::from({3}, {5, 6, 7}, true);
    Tape tape;
    tape.backward(tape.sum(x));
    EXPECT_EQ(x.grad(), (std::vector<double>{1, 1, 1}));
}

TEST(Backward, QuadraticAnalytic) {
    Tensor x = Tensor::from({2}, {1, 2}, true);
    Tape tape;
    tape.backward(tape.sum(tape.mul(x, x)));
    EXPECT_EQ(x.grad(), (std::vector<double>{2, 4}));
}

TEST(Backward, NonScalarLossRejected) {
    Tensor x = Tensor::from({2}, {1, 2}, true);
    Tape tape;
    Tensor y = tape.mul(x, x);
    EXPECT_THROW(tape.backward(y), ContractError);
}

TEST(Backward, RepeatedCallsAccumulate) {
    Tensor x = Tensor::from({2}, {1, 2}, true);
    Tape tape;
    Tensor loss = tape.sum(tape.mul(x, x));
    tape.backward(loss);
    tape.backward(loss);
    EXPECT_EQ(x.grad(), (std::vector<double>{4, 8}));
}

TEST(Backward, SharedSubexpressionSums) {
    Tensor x = Tensor::from({2}, {1.5, -0.5}, true);
    Tape tape;
    Tensor y = tape.add(x, x);
    tape.backward(tape.sum(y));
    EXPECT_EQ(x.grad(), (std::vector<double>{2, 2}));
}

TEST(Backward, DetachBlocksGradient) {
    Tensor x = Tensor::from({2}, {1, 2}, true);
    Tape tape;
    Tensor d = tape.mul(x, x).detach();
    EXPECT_FALSE(d.grad_flows());
    Tensor loss = tape.sum(tape.mul(d, d));
    tape.backward(loss);
    EXPECT_EQ(x.grad(), (std::vector<double>{0, 0}));
}

// Every registered op against central finite differences on random inputs.
// ReLU is evaluated away from its kink; clamp away from its bounds.
TEST(GradCheck, AllOpsFiniteDifferences) {
    Rng rng(2024);
    struct Case {
        const char* name;
        std::function<double(Tape&, Tensor&, Tensor&)> build;
        double lo, hi;
        double tol;
    };
    auto run = [&](const Case& c) {
        Tensor a = random_tensor({3, 4}, rng, true, c.lo, c.hi);
        Tensor b = random_tensor({3, 4}, rng, true, c.lo, c.hi);
        Tape tape;
        double unused = c.build(tape, a, b);
        (void)unused;
        auto fwd = [&] {
            Tape t(false);
            Tensor saved_a = a, saved_b = b;
            return c.build(t, saved_a, saved_b);
        };
        const auto rep = oracle::fd_compare(fwd, {a, b});
        EXPECT_LT(rep.max_rel, c.tol) << c.name;
    };

    const auto bw = [](Tape& t, const Tensor& loss) {
        t.backward(loss);
        return loss.value();
    };

    std::vector<Case> cases = {
        {"add", [&](Tape& t, Tensor& a, Tensor& b) { return bw(t, t.mean(t.mul(t.add(a, b), a))); }, -2, 2, 1e-6},
        {"sub", [&](Tape& t, Tensor& a, Tensor& b) { return bw(t, t.mean(t.mul(t.sub(a, b), b))); }, -2, 2, 1e-6},
        {"mul", [&](Tape& t, Tensor& a, Tensor& b) { return bw(t, t.mean(t.mul(a, b))); }, -2, 2, 1e-6},
        {"scale", [&](Tape& t, Tensor& a, Tensor& b) { return bw(t, t.mean(t.mul(t.scale(a, 1.7), b))); }, -2, 2, 1e-6},
        {"add_const", [&](Tape& t, Tensor& a, Tensor& b) { return bw(t, t.mean(t.mul(t.add_const(a, 0.3), b))); }, -2, 2, 1e-6},
        {"exp", [&](Tape& t, Tensor& a, Tensor& b) { return bw(t, t.mean(t.mul(t.exp_(a), b))); }, -2, 2, 1e-6},
        {"log", [&](Tape& t, Tensor& a, Tensor& b) { return bw(t, t.mean(t.mul(t.log_(a), b))); }, 0.2, 2, 1e-6},
        {"relu", [&](Tape& t, Tensor& a, Tensor& b) { return bw(t, t.mean(t.mul(t.relu(a), b))); }, 0.1, 2, 1e-6},
        {"tanh", [&](Tape& t, Tensor& a, Tensor& b) { return bw(t, t.mean(t.mul(t.tanh_(a), b))); }, -2, 2, 1e-6},
        {"clamp", [&](Tape& t, Tensor& a, Tensor& b) { return bw(t, t.mean(t.mul(t.clamp(a, -3, 3), b))); }, -2, 2, 1e-6},
        {"pow", [&](Tape& t, Tensor& a, Tensor& b) { return bw(t, t.mean(t.mul(t.pow_const(a, -0.5), b))); }, 0.3, 2, 1e-6},
        {"sum_axis", [&](Tape& t, Tensor& a, Tensor& b) { return bw(t, t.mean(t.mul(t.sum(a, 1), t.mean(b, 1)))); }, -2, 2, 1e-6},
        {"gather", [&](Tape& t, Tensor& a, Tensor& b) { return bw(t, t.mean(t.mul(t.gather_rows(a, {0, 2, 2}), t.gather_rows(b, {1, 0, 2})))); }, -2, 2, 1e-6},
        {"concat", [&](Tape& t, Tensor& a, Tensor& b) { return bw(t, t.mean(t.mul(t.concat_cols(a, b), t.concat_cols(b, a)))); }, -2, 2, 1e-6},
    };
    for (const auto& c : cases) run(c);
}

TEST(Forward, BitwiseDeterminism) {
    Rng rng(5);
    Tensor a = random_tensor({4, 4}, rng, false);
    Tensor b = random_tensor({4, 4}, rng, false);
    Tape t1, t2;
    Tensor r1 = t1.tanh_(t1.matmul(a, b));
    Tensor r2 = t2.tanh_(t2.matmul(a, b));
    EXPECT_EQ(r1.values(), r2.values());
}
