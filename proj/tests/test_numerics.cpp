#include <gtest/gtest.h>

#include <cmath>

#include "m2s/numerics/grad_check.hpp"
#include "m2s/numerics/optim.hpp"
#include "test_util.hpp"

using namespace m2s;
using m2s::testing::random_matrix;

namespace {

Matrix nested_avg(const Matrix& m, int k, int s) {
    const int orows = static_cast<int>((m.rows() - k) / s + 1), ocols = static_cast<int>((m.cols() - k) / s + 1);
    Matrix out(orows, ocols);
    for (int i = 0; i < orows; ++i)
        for (int j = 0; j < ocols; ++j) {
            double acc = 0;
            for (int a = 0; a < k; ++a)
                for (int b = 0; b < k; ++b) acc += m(i * s + a, j * s + b);
            out(i, j) = acc / (k * k);
        }
    return out;
}

Matrix nested_max(const Matrix& m, int k, int s) {
    const int orows = static_cast<int>((m.rows() - k) / s + 1), ocols = static_cast<int>((m.cols() - k) / s + 1);
    Matrix out(orows, ocols);
    for (int i = 0; i < orows; ++i)
        for (int j = 0; j < ocols; ++j) {
            double best = -INFINITY;
            for (int a = 0; a < k; ++a)
                for (int b = 0; b < k; ++b) best = std::max(best, m(i * s + a, j * s + b));
            out(i, j) = best;
        }
    return out;
}

Matrix one_to_nine() {
    Matrix m(3, 3);
    m << 1, 2, 3, 4, 5, 6, 7, 8, 9;
    return m;
}

// Wraps a single-op objective so grad_check can drive it: the op's output
// is contracted with a fixed random matrix to get a scalar.
template <class Op>
double op_grad_error(ParameterStore& store, Op op, std::uint64_t seed) {
    Rng rng(seed);
    Matrix probe;
    auto f = [&](Tape& t, const std::vector<Var>& p) {
        Var y = op(t, p);
        if (probe.size() == 0) probe = random_matrix(y.rows(), y.cols(), rng);
        return ad::sum(ad::mul(y, t.constant(probe)));
    };
    return grad_check(f, store).max_rel_error;
}

}  // namespace

TEST(Pooling, ShapeFormula) {
    EXPECT_EQ(pooled_shape(1024, 1024, 16, 8).rows, 127);
    EXPECT_EQ(pooled_shape(127, 127, 16, 8).rows, 14);
    EXPECT_EQ(pooled_shape(7, 5, 2, 3).rows, 2);
    EXPECT_EQ(pooled_shape(7, 5, 2, 3).cols, 2);
    EXPECT_THROW(pooled_shape(4, 8, 5, 1), ShapeError);
    EXPECT_THROW(pooled_shape(4, 4, 2, 0), ShapeError);
}

TEST(Pooling, HandExamples) {
    Matrix avg_expected(2, 2), max_expected(2, 2);
    avg_expected << 3, 4, 6, 7;
    max_expected << 5, 6, 8, 9;
    EXPECT_EQ(avg_pool2d(one_to_nine(), 2, 1), avg_expected);
    EXPECT_EQ(max_pool2d(one_to_nine(), 2, 1), max_expected);
}

TEST(Pooling, ConstantInputStaysConstant) {
    const Matrix c = Matrix::Constant(10, 13, 2.5);
    EXPECT_TRUE((avg_pool2d(c, 3, 2).array() == 2.5).all());
    EXPECT_TRUE((max_pool2d(c, 4, 3).array() == 2.5).all());
}

TEST(Pooling, MatchesNestedLoopOracle) {
    Rng rng(11);
    std::uniform_int_distribution<int> dim(1, 64);
    for (int trial = 0; trial < 200; ++trial) {
        const int r = dim(rng), c = dim(rng);
        const int k = std::uniform_int_distribution<int>(1, std::min(r, c))(rng);
        const int s = std::uniform_int_distribution<int>(1, 9)(rng);
        const Matrix m = random_matrix(r, c, rng);
        ASSERT_EQ(avg_pool2d(m, k, s), nested_avg(m, k, s)) << r << "x" << c << " k=" << k << " s=" << s;
        ASSERT_EQ(max_pool2d(m, k, s), nested_max(m, k, s));
    }
}

TEST(Rng, DerivedSeedsAreStableAndDistinct) {
    EXPECT_EQ(derive_seed(7, 3), derive_seed(7, 3));
    EXPECT_NE(derive_seed(7, 3), derive_seed(7, 4));
    EXPECT_NE(derive_seed(7, 3), derive_seed(8, 3));
}

TEST(Tape, BackwardRequiresScalar) {
    Tape t;
    Var x = t.parameter(Matrix::Ones(2, 2));
    EXPECT_THROW(t.backward(x), ShapeError);
}

TEST(Tape, ConstantsReceiveNoGradient) {
    Tape t;
    Var x = t.parameter(Matrix::Constant(1, 1, 3.0));
    Var c = t.constant(Matrix::Constant(1, 1, 2.0));
    Var y = ad::mul(ad::mul(x, x), c);
    t.backward(y);
    EXPECT_DOUBLE_EQ(x.grad()(0, 0), 12.0);
    EXPECT_EQ(c.grad().size(), 0);
}

TEST(Tape, ShapeErrors) {
    Tape t;
    Var a = t.parameter(Matrix::Ones(2, 3));
    Var b = t.parameter(Matrix::Ones(2, 3));
    EXPECT_THROW(ad::matmul(a, b), ShapeError);
    EXPECT_THROW(ad::add(a, t.constant(Matrix::Ones(3, 2))), ShapeError);
    EXPECT_THROW(ad::slice_rows(a, 1, 2), ShapeError);
}

TEST(GradCheck, QuadraticIsExact) {
    ParameterStore s;
    s.add("x", Matrix::Constant(1, 1, 3.0));
    auto f = [](Tape&, const std::vector<Var>& p) { return ad::sum(ad::mul(p[0], p[0])); };
    const auto r = grad_check(f, s, {1e-5});
    EXPECT_NEAR(r.analytic, 6.0, 1e-12);
    EXPECT_LT(r.max_rel_error, 1e-8);
}

TEST(GradCheck, RejectsBadEpsAndNonFinite) {
    ParameterStore s;
    s.add("x", Matrix::Constant(1, 1, 1.0));
    auto f = [](Tape&, const std::vector<Var>& p) { return ad::sum(p[0]); };
    EXPECT_THROW(grad_check(f, s, {0.0}), InvalidArgument);
    EXPECT_THROW(grad_check(f, s, {1e-2}), InvalidArgument);
    auto bad = [](Tape& t, const std::vector<Var>& p) {
        return ad::mul(ad::sum(p[0]), t.constant(Matrix::Constant(1, 1, NAN)));
    };
    EXPECT_THROW(grad_check(bad, s), NumericalError);
}

TEST(GradCheck, LinearSoftmaxCrossEntropy) {
    Rng rng(5);
    ParameterStore s;
    const auto lin = add_linear(s, "fc", 4, 3, rng);
    const Matrix x = random_matrix(5, 4, rng);
    const std::vector<int> y{0, 2, 1, 1, 0};
    auto f = [&](Tape& t, const std::vector<Var>& p) {
        return ad::softmax_cross_entropy(apply_linear(t.constant(x), p, lin), y);
    };
    EXPECT_LT(grad_check(f, s).max_rel_error, 1e-6);
}

TEST(GradCheck, RiddersResolvesSmallGradientOfLargeLoss) {
    // d/dw1 = 1e-6 on a loss near 25: a single central difference at 1e-5
    // carries ~1e-10 of rounding noise, 1e-4 relative.
    ParameterStore s;
    s.add("w", (Matrix(1, 2) << 1.0, 0.3).finished());
    auto f = [](Tape& t, const std::vector<Var>& p) {
        Var a = ad::slice_cols(p[0], 0, 1), b = ad::slice_cols(p[0], 1, 1);
        return ad::add(ad::scale(ad::sum(ad::mul(ad::mul(a, a), ad::mul(a, a))), 25.0),
                       ad::scale(ad::sum(ad::mul(b, t.constant(Matrix::Ones(1, 1)))), 1e-6));
    };
    GradCheckOptions opt;
    opt.eps = 1e-3;
    opt.method = FiniteDifference::Ridders;
    const auto r = grad_check(f, s, opt);
    EXPECT_LT(r.max_rel_error, 1e-5) << r.worst_param << "[" << r.worst_index << "]";
}

TEST(GradCheck, EvalModeDropoutIsDeterministic) {
    Rng rng(9);
    ParameterStore s;
    s.add("w", random_matrix(3, 4, rng));
    Rng drop(1);
    auto f = [&](Tape&, const std::vector<Var>& p) { return ad::sum(ad::mul(ad::dropout(p[0], 0.5, drop, false), p[0])); };
    EXPECT_LT(grad_check(f, s).max_rel_error, 1e-6);
}

class OpGrad : public ::testing::TestWithParam<int> {};

TEST_P(OpGrad, SmoothOpsMatchFiniteDifferences) {
    const std::uint64_t seed = static_cast<std::uint64_t>(GetParam());
    Rng rng(seed);
    ParameterStore s;
    const auto a = s.add("a", random_matrix(4, 5, rng));
    const auto b = s.add("b", random_matrix(5, 3, rng));
    const auto c = s.add("c", random_matrix(4, 5, rng));
    const auto row = s.add("row", random_matrix(1, 5, rng));
    const auto gain = s.add("gain", random_matrix(1, 5, rng));
    auto check = [&](const char* name, auto op) {
        EXPECT_LT(op_grad_error(s, op, seed + 100), 1e-6) << name;
    };
    check("matmul", [&](Tape&, const std::vector<Var>& p) { return ad::matmul(p[a], p[b]); });
    check("matmul_nt", [&](Tape&, const std::vector<Var>& p) { return ad::matmul_nt(p[a], p[c]); });
    check("add_row", [&](Tape&, const std::vector<Var>& p) { return ad::add_row(p[a], p[row]); });
    check("mul", [&](Tape&, const std::vector<Var>& p) { return ad::mul(p[a], p[c]); });
    check("gelu", [&](Tape&, const std::vector<Var>& p) { return ad::gelu(p[a]); });
    check("softmax", [&](Tape&, const std::vector<Var>& p) { return ad::softmax_rows(p[a]); });
    check("layer_norm", [&](Tape&, const std::vector<Var>& p) { return ad::layer_norm_rows(p[a], p[gain], p[row]); });
    check("l2_normalize", [&](Tape&, const std::vector<Var>& p) { return ad::l2_normalize_rows(p[c]); });
    check("avg_pool", [&](Tape&, const std::vector<Var>& p) { return ad::avg_pool2d(ad::matmul_nt(p[a], p[c]), 2, 1); });
    check("slice_concat", [&](Tape&, const std::vector<Var>& p) {
        return ad::concat_cols({ad::slice_rows(p[a], 1, 2), ad::slice_rows(p[c], 0, 2)});
    });
    check("concat_rows", [&](Tape&, const std::vector<Var>& p) {
        return ad::concat_rows({p[row], ad::slice_cols(p[a], 0, 5), p[gain]});
    });
    check("row_sum", [&](Tape&, const std::vector<Var>& p) { return ad::row_sum(ad::mul(p[a], p[c])); });
    check("flatten", [&](Tape&, const std::vector<Var>& p) { return ad::flatten(p[b]); });
    check("mean", [&](Tape&, const std::vector<Var>& p) { return ad::mean(ad::mul(p[a], p[a])); });

    auto loss_check = [&](const char* name, auto loss) {
        auto f = [&](Tape& t, const std::vector<Var>& p) { return loss(t, p); };
        EXPECT_LT(grad_check(f, s).max_rel_error, 1e-6) << name;
    };
    const std::vector<int> y{1, 0, 4, 2};
    const Matrix bits = (random_matrix(4, 5, rng).array() > 0).cast<double>();
    const Matrix target = random_matrix(4, 3, rng);
    loss_check("softmax_ce", [&](Tape&, const std::vector<Var>& p) { return ad::softmax_cross_entropy(p[a], y); });
    loss_check("bce", [&](Tape&, const std::vector<Var>& p) { return ad::bce_with_logits(p[c], bits); });
    loss_check("mse", [&](Tape&, const std::vector<Var>& p) { return ad::mse(ad::matmul(p[a], p[b]), target); });
}

TEST_P(OpGrad, KinkedOpsAwayFromTies) {
    const std::uint64_t seed = static_cast<std::uint64_t>(GetParam());
    Rng rng(seed);
    ParameterStore s;
    // Entries kept at least 0.1 away from zero and from each other in
    // magnitude so relu kinks and max ties sit outside the FD stencil.
    Matrix m(6, 6);
    std::vector<double> vals;
    for (int i = 0; i < 36; ++i) vals.push_back((i + 1) * 0.1 * (i % 2 == 0 ? 1.0 : -1.0));
    std::shuffle(vals.begin(), vals.end(), rng);
    for (int i = 0; i < 36; ++i) m.data()[i] = vals[static_cast<std::size_t>(i)];
    const auto a = s.add("a", m);
    auto relu = [&](Tape&, const std::vector<Var>& p) { return ad::relu(p[a]); };
    auto maxp = [&](Tape&, const std::vector<Var>& p) { return ad::max_pool2d(p[a], 3, 2); };
    EXPECT_LT(op_grad_error(s, relu, seed), 1e-4);
    EXPECT_LT(op_grad_error(s, maxp, seed), 1e-4);
}

INSTANTIATE_TEST_SUITE_P(Seeds, OpGrad, ::testing::Range(0, 5));

TEST(Ops, SoftmaxRowsSumToOne) {
    Rng rng(2);
    Tape t;
    Var y = ad::softmax_rows(t.constant(random_matrix(7, 11, rng, 10.0)));
    for (Eigen::Index i = 0; i < y.rows(); ++i) EXPECT_NEAR(y.value().row(i).sum(), 1.0, 1e-12);
}

TEST(Ops, SoftmaxCrossEntropyMatchesDirectFormula) {
    Rng rng(3);
    const Matrix logits = random_matrix(6, 4, rng, 3.0);
    const std::vector<int> y{0, 3, 2, 1, 1, 0};
    double direct = 0;
    for (int i = 0; i < 6; ++i) {
        double z = 0;
        for (int j = 0; j < 4; ++j) z += std::exp(logits(i, j));
        direct += -std::log(std::exp(logits(i, y[static_cast<std::size_t>(i)])) / z);
    }
    Tape t;
    EXPECT_NEAR(ad::softmax_cross_entropy(t.constant(logits), y).scalar(), direct / 6, 1e-12);
}

TEST(Ops, BatchLossIsMeanOfPerExampleLosses) {
    Rng rng(4);
    const Matrix logits = random_matrix(5, 3, rng);
    const std::vector<int> y{2, 0, 1, 1, 2};
    Tape t;
    const double batch = ad::softmax_cross_entropy(t.constant(logits), y).scalar();
    double sum = 0;
    for (int i = 0; i < 5; ++i) {
        const int yi = y[static_cast<std::size_t>(i)];
        sum += ad::softmax_cross_entropy(t.constant(logits.row(i)), std::span<const int>(&yi, 1)).scalar();
    }
    EXPECT_NEAR(batch, sum / 5, 1e-12);
}

TEST(Ops, DropoutConventions) {
    Rng rng(8);
    const Matrix x = Matrix::Ones(200, 50);
    Tape t;
    Var in = t.constant(x);
    Rng r1(1), r2(1);
    EXPECT_EQ(ad::dropout(in, 0.5, r1, false).value(), x);
    EXPECT_EQ(ad::dropout(in, 0.0, r1, true).value(), x);
    const Matrix m1 = ad::dropout(in, 0.5, r1, true).value();
    const Matrix m2 = ad::dropout(in, 0.5, r2, true).value();
    r1.seed(1);
    r2.seed(1);
    EXPECT_EQ(ad::dropout(in, 0.5, r1, true).value(), ad::dropout(in, 0.5, r2, true).value());
    // Inverted scaling: kept entries are 2, dropped are 0, mean stays near 1.
    EXPECT_TRUE(((m1.array() == 0.0) || (m1.array() == 2.0)).all());
    EXPECT_NEAR(m1.mean(), 1.0, 0.05);
    (void)m2;
}

TEST(Ops, L2NormalizeRejectsZeroRow) {
    Tape t;
    EXPECT_THROW(ad::l2_normalize_rows(t.constant(Matrix::Zero(1, 3))), NumericalError);
}

TEST(Optim, SgdHandExample) {
    ParameterStore s;
    s.add("theta", Matrix::Constant(1, 1, 1.0));
    OptimizerState st;
    st.lr = 0.1;
    const std::vector<Matrix> g{Matrix::Constant(1, 1, 2.0)};
    sgd_step(s, g, st);
    EXPECT_NEAR(s[0](0, 0), 0.8, 1e-15);
}

TEST(Optim, SgdMomentumAccumulates) {
    ParameterStore s;
    s.add("theta", Matrix::Zero(1, 1));
    OptimizerState st;
    st.lr = 1.0;
    st.momentum = 0.5;
    const std::vector<Matrix> g{Matrix::Ones(1, 1)};
    sgd_step(s, g, st);
    sgd_step(s, g, st);
    EXPECT_DOUBLE_EQ(s[0](0, 0), -(1.0 + 1.5));
}

TEST(Optim, AdamFirstStepMagnitudeIsLr) {
    ParameterStore s;
    s.add("theta", Matrix::Constant(1, 1, 0.5));
    OptimizerState st;
    st.kind = OptimizerKind::Adam;
    st.lr = 1e-3;
    const std::vector<Matrix> g{Matrix::Ones(1, 1)};
    adam_step(s, g, st);
    EXPECT_NEAR(0.5 - s[0](0, 0), 1e-3, 1e-10);
}

TEST(Optim, AdamDecoupledWeightDecay) {
    ParameterStore s;
    s.add("theta", Matrix::Constant(1, 1, 2.0));
    OptimizerState st;
    st.kind = OptimizerKind::Adam;
    st.lr = 0.1;
    st.weight_decay = 0.5;
    const std::vector<Matrix> g{Matrix::Zero(1, 1)};
    adam_step(s, g, st);
    // Zero gradient: only the decay acts, theta <- theta - lr*wd*theta.
    EXPECT_DOUBLE_EQ(s[0](0, 0), 2.0 - 0.1 * 0.5 * 2.0);
}

TEST(Optim, WarmupRampsLinearly) {
    OptimizerState st;
    st.lr = 1.0;
    st.warmup_epochs = 5;
    st.steps_per_epoch = 2;
    EXPECT_DOUBLE_EQ(st.scheduled_lr(), 0.1);
    st.step = 4;
    EXPECT_DOUBLE_EQ(st.scheduled_lr(), 0.5);
    st.step = 9;
    EXPECT_DOUBLE_EQ(st.scheduled_lr(), 1.0);
    st.step = 100;
    EXPECT_DOUBLE_EQ(st.scheduled_lr(), 1.0);
}

TEST(Optim, GradientShapeMismatchThrows) {
    ParameterStore s;
    s.add("theta", Matrix::Zero(2, 2));
    OptimizerState st;
    const std::vector<Matrix> g{Matrix::Zero(2, 1)};
    EXPECT_THROW(sgd_step(s, g, st), ShapeError);
}

TEST(Params, InitIsSeededAndBounded) {
    Rng r1(3), r2(3);
    ParameterStore a, b;
    add_linear(a, "l", 16, 4, r1);
    add_linear(b, "l", 16, 4, r2);
    EXPECT_TRUE(a == b);
    EXPECT_LE(a[0].cwiseAbs().maxCoeff(), 0.25);
    EXPECT_THROW(a.add("l.weight", Matrix::Zero(1, 1)), InvalidArgument);
}
