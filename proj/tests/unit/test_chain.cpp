#include "../support/models.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace pdfilter;
using namespace pdfilter::testing;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "expected an Error";
    return ErrorCode::InvalidArgument;
}

}  // namespace

TEST(ValidateGenerator, AcceptsCyclicModel) {
    Matrix m(4, 4);
    m << -1, 1, 0, 0, 0, -1, 1, 0, 0, 0, -1, 1, 1, 0, 0, -1;
    EXPECT_NO_THROW(validate_generator(m));
}

TEST(ValidateGenerator, AcceptsZeroMatrix) { EXPECT_NO_THROW(validate_generator(Matrix::Zero(2, 2))); }

TEST(ValidateGenerator, RejectsBadRowSum) {
    Matrix m(2, 2);
    m << -1, 2, 0, 0;
    EXPECT_EQ(code_of([&] { validate_generator(m); }), ErrorCode::RowSumNonzero);
    try {
        validate_generator(m);
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("row 1"), std::string::npos);
    }
}

TEST(ValidateGenerator, RejectsNegativeOffDiagonal) {
    Matrix m(2, 2);
    m << 1, -1, 0, 0;
    EXPECT_EQ(code_of([&] { validate_generator(m); }), ErrorCode::NegativeOffDiagonal);
}

TEST(ValidateGenerator, RejectsNonSquare) {
    EXPECT_EQ(code_of([&] { validate_generator(Matrix::Zero(2, 3)); }), ErrorCode::NotSquare);
}

TEST(ObservationModel, RejectsNonSurjective) {
    EXPECT_EQ(code_of([] { ObservationModel({"a", "b"}, {0, 0}); }), ErrorCode::InvalidObservation);
}

TEST(ObservationModel, LevelSetsPartitionStates) {
    RandomSource rng(7, 0);
    for (int rep = 0; rep < 20; ++rep) {
        auto h = random_observation(6, 3, rng);
        std::vector<int> seen(6, 0);
        for (LabelIndex a = 0; a < h.num_labels(); ++a)
            for (auto i : h.level_set(a)) {
                ++seen[i];
                EXPECT_EQ(h(i), a);
            }
        for (int s : seen) EXPECT_EQ(s, 1);
    }
}

TEST(TransitionSemigroup, IdentityAtZero) {
    const auto model = cyclic4_model();
    EXPECT_TRUE(transition_semigroup(model.generator(), 0.0).isApprox(Matrix::Identity(4, 4)));
}

TEST(TransitionSemigroup, SymmetricTwoStateClosedForm) {
    Matrix m(2, 2);
    m << -1, 1, 1, -1;
    const RateMatrix gen(m);
    for (double t : {0.01, 0.3, 1.0, 2.5, 10.0}) {
        const Matrix p = transition_semigroup(gen, t);
        const double stay = (1.0 + std::exp(-2.0 * t)) / 2.0;
        const double move = (1.0 - std::exp(-2.0 * t)) / 2.0;
        EXPECT_NEAR(p(0, 0), stay, 1e-13);
        EXPECT_NEAR(p(1, 1), stay, 1e-13);
        EXPECT_NEAR(p(0, 1), move, 1e-13);
        EXPECT_NEAR(p(1, 0), move, 1e-13);
    }
}

TEST(TransitionSemigroup, RowsAreStochastic) {
    const auto model = cyclic4_model();
    const Matrix p = transition_semigroup(model.generator(), 1.0);
    EXPECT_GE(p.minCoeff(), 0.0);
    for (Eigen::Index i = 0; i < 4; ++i) EXPECT_NEAR(p.row(i).sum(), 1.0, 1e-9);
}

TEST(TransitionSemigroup, SemigroupLawOnRandomGenerators) {
    RandomSource rng(11, 0);
    for (int rep = 0; rep < 50; ++rep) {
        const auto n = 2 + static_cast<std::size_t>(rng.uniform() * 5);
        const auto gen = random_generator(n, rng);
        const double s = 3.0 * rng.uniform(), t = 3.0 * rng.uniform();
        const Matrix lhs = transition_semigroup(gen, s + t);
        const Matrix rhs = transition_semigroup(gen, s) * transition_semigroup(gen, t);
        EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-8);
        EXPECT_GE(lhs.minCoeff(), 0.0);
    }
}

TEST(SampleChain, AbsorbingChainNeverJumps) {
    const RateMatrix gen(Matrix::Zero(3, 3));
    RandomSource rng(1, 0);
    const auto path = sample_chain(gen, Distribution::uniform_on(3, {0, 1, 2}), 100.0, rng);
    EXPECT_TRUE(path.jumps.empty());
    EXPECT_TRUE(path.valid());
}

TEST(SampleChain, SameSeedSamePath) {
    const auto model = cyclic4_model();
    const auto mu = Distribution::uniform_on(4, {0, 1, 2, 3});
    RandomSource a(99, 5), b(99, 5), c(99, 6);
    const auto pa = sample_chain(model.generator(), mu, 20.0, a);
    const auto pb = sample_chain(model.generator(), mu, 20.0, b);
    const auto pc = sample_chain(model.generator(), mu, 20.0, c);
    ASSERT_EQ(pa.jumps.size(), pb.jumps.size());
    for (std::size_t k = 0; k < pa.jumps.size(); ++k) {
        EXPECT_EQ(pa.jumps[k].time, pb.jumps[k].time);
        EXPECT_EQ(pa.jumps[k].value, pb.jumps[k].value);
    }
    EXPECT_FALSE(pa.jumps.size() == pc.jumps.size() && !pa.jumps.empty() && pa.jumps[0].time == pc.jumps[0].time);
}

TEST(SampleChain, FirstHoldingTimeIsExponentialOne) {
    const auto model = cyclic4_model();
    const auto mu = Distribution::dirac(4, 0);
    const int reps = 100000;
    double sum = 0.0, sumsq = 0.0;
    for (int r = 0; r < reps; ++r) {
        RandomSource rng(2024, static_cast<std::uint64_t>(r));
        const auto path = sample_chain(model.generator(), mu, 10.0, rng);
        const double h = path.jumps.empty() ? 10.0 : path.jumps.front().time;
        sum += h;
        sumsq += h * h;
    }
    const double mean = sum / reps;
    const double se = std::sqrt((sumsq / reps - mean * mean) / reps);
    // censoring at 10 changes the mean by e^{-10} only
    EXPECT_LT(std::abs(mean - 1.0), 3.0 * se);
}

TEST(SampleChain, MarginalMatchesSemigroup) {
    RandomSource mrng(5, 0);
    const auto gen = random_generator(4, mrng, 3.0);
    const auto mu = random_distribution(4, mrng);
    const double t = 0.7;
    const int reps = 100000;
    std::vector<int> counts(4, 0);
    for (int r = 0; r < reps; ++r) {
        RandomSource rng(77, static_cast<std::uint64_t>(r));
        ++counts[sample_chain(gen, mu, 2.0, rng).value_at(t)];
    }
    const RowVector law = mu.weights() * transition_semigroup(gen, t);
    for (int i = 0; i < 4; ++i) {
        const double p = law(i);
        const double se = std::sqrt(p * (1 - p) / reps);
        EXPECT_LT(std::abs(counts[i] / double(reps) - p), 4.0 * se) << "state " << i;
    }
}

TEST(Observe, InjectiveKeepsEveryJump) {
    const auto gen = RateMatrix(cyclic4_model().lambda());
    const ObservationModel h({"a", "b", "c", "d"}, {0, 1, 2, 3});
    RandomSource rng(3, 0);
    const auto path = sample_chain(gen, Distribution::dirac(4, 0), 10.0, rng);
    const auto obs = observe(path, h);
    ASSERT_EQ(obs.jumps.size(), path.jumps.size());
    for (std::size_t k = 0; k < path.jumps.size(); ++k) EXPECT_EQ(obs.jumps[k].time, path.jumps[k].time);
}

TEST(Observe, ConstantObservationHasNoJumps) {
    const auto gen = RateMatrix(cyclic4_model().lambda());
    const ObservationModel h({"x"}, {0, 0, 0, 0});
    RandomSource rng(3, 0);
    const auto obs = observe(sample_chain(gen, Distribution::dirac(4, 0), 10.0, rng), h);
    EXPECT_TRUE(obs.jumps.empty());
}

TEST(Observe, CyclicExamplePath) {
    const auto model = cyclic4_model();
    PiecewisePath path{0, {{0.5, 1}, {1.25, 2}}, 3.0};
    const auto obs = observe(path, model.observation());
    EXPECT_EQ(obs.initial_value, kCyclicOne);
    ASSERT_EQ(obs.jumps.size(), 2u);
    EXPECT_EQ(obs.jumps[0].time, 0.5);
    EXPECT_EQ(obs.jumps[0].value, kCyclicZero);
    EXPECT_EQ(obs.jumps[1].time, 1.25);
    EXPECT_EQ(obs.jumps[1].value, kCyclicOne);
}

TEST(Observe, JumpTimesAreSubsetAndPathValid) {
    RandomSource rng(8, 0);
    for (int rep = 0; rep < 30; ++rep) {
        const auto model = random_model(5, 2, rng);
        const auto path = sample_chain(model.generator(), random_distribution(5, rng), 5.0, rng);
        const auto obs = observe(path, model.observation());
        EXPECT_TRUE(obs.valid());
        for (const auto& j : obs.jumps) {
            auto it = std::find_if(path.jumps.begin(), path.jumps.end(), [&](auto& pj) { return pj.time == j.time; });
            EXPECT_NE(it, path.jumps.end());
        }
    }
}

TEST(SubGenerator, CyclicOddStates) {
    const auto model = cyclic4_model();
    const Matrix sub = sub_generator(model.generator(), {0, 2});
    Matrix expected(2, 2);
    expected << -1, 0, 0, -1;
    EXPECT_EQ(sub, expected);
}

TEST(SubGenerator, FullSetAndScalar) {
    const auto model = cyclic4_model();
    EXPECT_EQ(sub_generator(model.generator(), {0, 1, 2, 3}), model.lambda());
    Matrix m(2, 2);
    m << -1, 1, 1, -1;
    EXPECT_EQ(sub_generator(RateMatrix(m), {0}), Matrix::Constant(1, 1, -1.0));
    EXPECT_EQ(code_of([&] { sub_generator(RateMatrix(m), {}); }), ErrorCode::EmptySubset);
}

TEST(ExitSurvivalOracle, CyclicModelIsExponential) {
    const auto model = cyclic4_model();
    EXPECT_EQ(exit_survival_oracle(model.generator(), {0, 2}, 0, 0.0), 1.0);
    for (double t : {0.1, 1.0, 3.0}) EXPECT_NEAR(exit_survival_oracle(model.generator(), {0, 2}, 0, t), std::exp(-t), 1e-13);
    for (double t : {0.0, 1.0, 7.0}) EXPECT_NEAR(exit_survival_oracle(model.generator(), {0, 1, 2, 3}, 2, t), 1.0, 1e-12);
    EXPECT_EQ(code_of([&] { exit_survival_oracle(model.generator(), {0, 2}, 1, 1.0); }), ErrorCode::StateNotInSubset);
}

TEST(ExitSurvivalOracle, MonotoneAndInRange) {
    RandomSource rng(13, 0);
    for (int rep = 0; rep < 20; ++rep) {
        const auto gen = random_generator(5, rng);
        const IndexSet subset{0, 2, 3};
        double prev = 1.0;
        for (double t = 0.0; t <= 5.0; t += 0.25) {
            const double s = exit_survival_oracle(gen, subset, 2, t);
            EXPECT_GE(s, 0.0);
            EXPECT_LE(s, prev + 1e-15);
            prev = s;
        }
    }
}
