#include <gtest/gtest.h>

#include "m2s/numerics/grad_check.hpp"
#include "m2s/scene_encoder.hpp"
#include "test_util.hpp"

using namespace m2s;
using m2s::testing::random_matrix;

namespace {

EncoderConfig small_config(std::uint64_t seed = 0) {
    EncoderConfig c;
    c.d_model = 8;
    c.n_heads = 2;
    c.n_layers = 2;
    c.n_base_positions = 9;
    c.out_dim = 5;
    c.mlp_ratio = 2.0;
    c.seed = seed;
    return c;
}

}  // namespace

TEST(InterpolatePositions, SameLengthIsIdentity) {
    Rng rng(1);
    const Matrix table = random_matrix(10, 4, rng);
    EXPECT_EQ(interpolate_positions(table, 9), table);
    EXPECT_EQ(interpolation_matrix(9, 9), Matrix::Identity(9, 9));
}

TEST(InterpolatePositions, EndpointsAndMidpoints) {
    Matrix table(4, 1);
    table << 7, 0, 10, 20;  // class row, then base positions 0, 10, 20
    const Matrix five = interpolate_positions(table, 5);
    ASSERT_EQ(five.rows(), 6);
    EXPECT_EQ(five(0, 0), 7.0);
    EXPECT_DOUBLE_EQ(five(1, 0), 0.0);
    EXPECT_DOUBLE_EQ(five(2, 0), 5.0);
    EXPECT_DOUBLE_EQ(five(3, 0), 10.0);
    EXPECT_DOUBLE_EQ(five(4, 0), 15.0);
    EXPECT_DOUBLE_EQ(five(5, 0), 20.0);
    const Matrix one = interpolate_positions(table, 1);
    EXPECT_EQ(one.rows(), 2);
    EXPECT_EQ(one(1, 0), 0.0);
}

TEST(InterpolatePositions, RowsAreConvexWeights) {
    for (int n_base : {1, 2, 9}) {
        for (int len = 1; len <= 30; ++len) {
            const Matrix w = interpolation_matrix(n_base, len);
            for (int r = 0; r < len; ++r) {
                EXPECT_NEAR(w.row(r).sum(), 1.0, 1e-15);
                EXPECT_GE(w.row(r).minCoeff(), 0.0);
            }
        }
    }
    EXPECT_THROW(interpolation_matrix(9, 0), InvalidArgument);
}

TEST(SceneEncoder, OutputIsUnitNorm) {
    const auto enc = SceneEncoder::create(6, small_config());
    Rng rng(2);
    for (int len : {1, 4, 9, 17}) {
        const RowVector z = encode_scene(random_matrix(len, 6, rng), enc);
        EXPECT_EQ(z.size(), 5);
        EXPECT_NEAR(z.norm(), 1.0, 1e-12) << len;
    }
}

TEST(SceneEncoder, AcceptsVariableLengthsWithoutRetraining) {
    const auto enc = SceneEncoder::create(6, small_config());
    Rng rng(3);
    const Matrix nine = random_matrix(9, 6, rng);
    const RowVector a = encode_scene(nine, enc);
    const RowVector b = encode_scene(Matrix(nine.topRows(4)), enc);
    EXPECT_TRUE(a.allFinite());
    EXPECT_TRUE(b.allFinite());
    EXPECT_GT((a - b).norm(), 0.0);
}

TEST(SceneEncoder, TokenOrderMatters) {
    const auto enc = SceneEncoder::create(6, small_config());
    Rng rng(4);
    Matrix x = random_matrix(9, 6, rng);
    const RowVector a = encode_scene(x, enc);
    x.row(3).swap(x.row(5));
    EXPECT_GT((a - encode_scene(x, enc)).norm(), 1e-9);
}

TEST(SceneEncoder, EvalIsDeterministicAndSeedDependent) {
    Rng rng(5);
    const Matrix x = random_matrix(7, 6, rng);
    const auto e0 = SceneEncoder::create(6, small_config(0));
    EXPECT_EQ(encode_scene(x, e0), encode_scene(x, SceneEncoder::create(6, small_config(0))));
    EXPECT_NE(encode_scene(x, e0), encode_scene(x, SceneEncoder::create(6, small_config(1))));
}

TEST(SceneEncoder, RejectsBadInputs) {
    const auto enc = SceneEncoder::create(6, small_config());
    EXPECT_THROW(encode_scene(Matrix(Matrix::Zero(3, 5)), enc), ShapeError);
    EXPECT_THROW(encode_scene(Matrix(0, 6), enc), InvalidArgument);
    EncoderConfig bad = small_config();
    bad.n_heads = 3;
    EXPECT_THROW(SceneEncoder::create(6, bad), InvalidArgument);
}

TEST(SceneEncoder, TrainingDropoutNeedsRng) {
    EncoderConfig c = small_config();
    c.dropout = 0.1;
    const auto enc = SceneEncoder::create(6, c);
    Tape t;
    const auto p = enc.params.bind(t, true);
    EXPECT_THROW(encode_scene(t.constant(Matrix::Ones(3, 6)), p, enc, true, nullptr), InvalidArgument);
}

class EncoderGrad : public ::testing::TestWithParam<int> {};

TEST_P(EncoderGrad, MatchesFiniteDifferences) {
    const auto seed = static_cast<std::uint64_t>(GetParam());
    auto enc = SceneEncoder::create(4, small_config(seed));
    Rng rng(seed + 100);
    const Matrix s1 = random_matrix(5, 4, rng), s2 = random_matrix(11, 4, rng);
    const Matrix probe = random_matrix(5, 1, rng);
    auto f = [&](Tape& t, const std::vector<Var>& p) {
        Var z1 = encode_scene(t.constant(s1), p, enc, false, nullptr);
        Var z2 = encode_scene(t.constant(s2), p, enc, false, nullptr);
        return ad::add(ad::sum(ad::matmul_nt(z1, z2)), ad::sum(ad::matmul(z1, t.constant(probe))));
    };
    const auto r = grad_check(f, enc.params);
    EXPECT_LT(r.max_rel_error, 1e-4) << r.worst_param << "[" << r.worst_index << "] analytic " << r.analytic
                                     << " numeric " << r.numeric;
}

INSTANTIATE_TEST_SUITE_P(Seeds, EncoderGrad, ::testing::Range(0, 5));

TEST(SceneEncoderCheckpoint, RoundTripsExactly) {
    const auto dir = m2s::testing::scratch_dir("encoder_ckpt");
    const auto enc = SceneEncoder::create(6, small_config(3));
    write_checkpoint(dir / "e.m2sc", enc.meta(), enc.params);
    const auto back = SceneEncoder::from_checkpoint(read_checkpoint(dir / "e.m2sc"));
    EXPECT_TRUE(back.params == enc.params);
    EXPECT_EQ(back.config.d_model, 8);
    EXPECT_EQ(back.blocks.size(), 2u);
    Rng rng(6);
    const Matrix x = random_matrix(9, 6, rng);
    EXPECT_EQ(encode_scene(x, back), encode_scene(x, enc));
}
