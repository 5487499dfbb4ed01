#include "../support/models.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace pdfilter;
using namespace pdfilter::testing;

TEST(JumpRate, CyclicModel) {
    const auto model = cyclic4_model();
    EXPECT_DOUBLE_EQ(jump_rate(model, vertex(model, 0)), 1.0);
    EXPECT_DOUBLE_EQ(jump_rate(model, face_uniform(model, kCyclicOne)), 1.0);
    const Model still(RateMatrix(Matrix::Zero(3, 3)), ObservationModel({"a", "b"}, {0, 1, 1}));
    EXPECT_EQ(jump_rate(still, face_uniform(still, 1)), 0.0);
}

TEST(JumpRate, NonnegativeOnRandomFaces) {
    RandomSource rng(1, 0);
    for (int rep = 0; rep < 200; ++rep) {
        const auto model = random_model(5, 3, rng);
        const auto nu = random_face_point(model, rep % 3, rng);
        EXPECT_GE(-(nu.weights * model.lambda()).dot(model.face_indicator(nu.label).transpose()), -1e-12);
    }
}

TEST(JumpMeasure, CyclicVertexHasSingleAtom) {
    const auto model = cyclic4_model();
    const auto law = jump_measure(model, vertex(model, 0));
    ASSERT_EQ(law.atoms.size(), 1u);
    EXPECT_FALSE(law.fallback);
    EXPECT_DOUBLE_EQ(law.atoms[0].mass, 1.0);
    EXPECT_EQ(law.atoms[0].target.weights, vertex(model, 1).weights);
}

TEST(JumpMeasure, MassesAndFluxIdentity) {
    RandomSource rng(2, 0);
    for (int rep = 0; rep < 100; ++rep) {
        const auto model = random_model(6, 3, rng);
        const auto nu = random_face_point(model, rep % 3, rng);
        const double rate = jump_rate(model, nu);
        ASSERT_GT(rate, kDegenerateTol);
        const auto law = jump_measure(model, nu);
        double total = 0.0;
        for (const auto& atom : law.atoms) {
            EXPECT_NE(atom.target.label, nu.label);
            EXPECT_GE(atom.mass, 0.0);
            EXPECT_TRUE(is_face_point(model, atom.target));
            const double flux = (nu.weights * model.lambda()).dot(model.face_indicator(atom.target.label).transpose());
            EXPECT_NEAR(rate * atom.mass, flux, 1e-12);
            total += atom.mass;
        }
        EXPECT_NEAR(total, 1.0, 1e-10);
    }
}

TEST(JumpMeasure, BinaryObservationHasUnitAtom) {
    RandomSource rng(3, 0);
    for (int rep = 0; rep < 20; ++rep) {
        const auto model = random_model(5, 2, rng);
        const auto law = jump_measure(model, random_face_point(model, 0, rng));
        ASSERT_EQ(law.atoms.size(), 1u);
        EXPECT_NEAR(law.atoms[0].mass, 1.0, 1e-12);
    }
}

TEST(JumpMeasure, FallbackWhenRateVanishes) {
    const Model still(RateMatrix(Matrix::Zero(3, 3)), ObservationModel({"a", "b", "c"}, {0, 1, 2}));
    const auto law = jump_measure(still, vertex(still, 0));
    EXPECT_TRUE(law.fallback);
    ASSERT_EQ(law.atoms.size(), 2u);
    EXPECT_DOUBLE_EQ(law.atoms[0].mass, 0.5);
}

TEST(JumpMeasure, RequiresTwoLabels) {
    const Model model(RateMatrix(Matrix::Zero(2, 2)), ObservationModel({"x"}, {0, 0}));
    EXPECT_THROW(jump_measure(model, face_uniform(model, 0)), Error);
}

TEST(JumpMeasure, WeakFellerContinuityNearZeroRate) {
    // ν ↦ λ(ν) Σ_b q(ν,b) g(H_b[νΛ]) stays continuous when λ(ν) → 0.
    Matrix m(3, 3);
    m << -2, 2, 0,
          0, -1, 1,
          0, 0, 0;
    const Model model{RateMatrix(m), ObservationModel({"a", "b"}, {0, 0, 1})};
    auto g = [](const FacePoint& p) { return std::sin(3.0 * p.weights(0)) + p.weights(2) * p.weights(2); };
    auto kernel = [&](const FacePoint& nu) {
        double acc = 0.0;
        const double rate = jump_rate(model, nu);
        if (rate < kDegenerateTol) return 0.0;
        for (const auto& atom : jump_measure(model, nu).atoms) acc += atom.mass * g(atom.target);
        return rate * acc;
    };
    // λ vanishes at δ_1 (state 1 only leaves to state 2 on the same face)
    double prev = 1.0;
    for (double eps : {1e-1, 1e-2, 1e-3, 1e-4, 1e-5}) {
        RowVector w(3);
        w << 1.0 - eps, eps, 0.0;
        const double k = kernel({0, w});
        EXPECT_LE(std::abs(k), 2.0 * eps);
        EXPECT_LE(std::abs(k), prev);
        prev = std::abs(k);
    }
}

TEST(SojournSurvival, ClosedFormCases) {
    const auto model = cyclic4_model();
    const auto nu = vertex(model, 0);
    EXPECT_EQ(sojourn_survival(model, nu, 0.0), 1.0);
    for (double t : {0.2, 1.0, 3.5}) {
        EXPECT_NEAR(sojourn_survival(model, nu, t), std::exp(-t), 1e-14);
        EXPECT_NEAR(sojourn_survival(model, nu, t), exit_survival_oracle(model.generator(), {0, 2}, 0, t), 1e-14);
    }
}

TEST(SojournSurvival, QuadratureCrossCheck) {
    RandomSource rng(4, 0);
    for (int rep = 0; rep < 100; ++rep) {
        const auto model = random_model(5, 2, rng);
        const auto nu = random_face_point(model, rep % 2, rng);
        const double t = 3.0 * rng.uniform();
        EXPECT_NEAR(sojourn_survival(model, nu, t), sojourn_survival_quadrature(model, nu, t, 400), 1e-7);
    }
}

TEST(SojournSurvival, Monotone) {
    RandomSource rng(5, 0);
    const auto model = random_model(5, 2, rng);
    const auto nu = random_face_point(model, 0, rng);
    double prev = 1.0;
    for (double t = 0.0; t < 4.0; t += 0.1) {
        const double s = sojourn_survival(model, nu, t);
        EXPECT_GT(s, 0.0);
        EXPECT_LE(s, prev);
        prev = s;
    }
}

TEST(SampleSojourn, CyclicVertexIsExponentialOne) {
    const auto model = cyclic4_model();
    const auto nu = vertex(model, 0);
    const int reps = 100000;
    double sum = 0.0, sumsq = 0.0;
    for (int r = 0; r < reps; ++r) {
        RandomSource rng(17, static_cast<std::uint64_t>(r));
        const auto s = sample_sojourn(model, nu, 40.0, rng);
        ASSERT_TRUE(s.has_value());
        sum += *s;
        sumsq += *s * *s;
    }
    const double mean = sum / reps;
    const double se = std::sqrt((sumsq / reps - mean * mean) / reps);
    EXPECT_LT(std::abs(mean - 1.0), 3.0 * se);
}

TEST(SampleSojourn, ZeroGeneratorIsCensored) {
    const Model still(RateMatrix(Matrix::Zero(2, 2)), ObservationModel({"a", "b"}, {0, 1}));
    RandomSource rng(1, 0);
    for (int r = 0; r < 100; ++r) EXPECT_FALSE(sample_sojourn(still, vertex(still, 0), 5.0, rng).has_value());
}

TEST(SampleSojourn, QuantileIsMonotoneInLevel) {
    RandomSource rng(6, 0);
    const auto model = random_model(4, 2, rng);
    const auto nu = random_face_point(model, 0, rng);
    double prev = std::numeric_limits<double>::infinity();
    for (double u = 0.05; u < 0.95; u += 0.05) {
        const auto t = sojourn_quantile(model, nu, 100.0, u);
        ASSERT_TRUE(t.has_value());
        EXPECT_LT(*t, prev);
        EXPECT_NEAR(sojourn_survival(model, nu, *t), u, 1e-8);
        prev = *t;
    }
}

TEST(SimulatePdp, ZeroGeneratorIsConstant) {
    const Model still(RateMatrix(Matrix::Zero(3, 3)), ObservationModel({"a", "b"}, {0, 0, 1}));
    RandomSource rng(1, 0);
    const auto start = face_uniform(still, 0);
    const auto traj = simulate_pdp(still, start, 10.0, rng);
    EXPECT_TRUE(traj.jumps.empty());
    EXPECT_EQ(traj.at(still, 9.0).weights, start.weights);
}

TEST(SimulatePdp, TrajectoryInvariants) {
    const auto model = three_label_model();
    RandomSource rng(7, 0);
    for (int r = 0; r < 200; ++r) {
        const auto start = random_face_point(model, r % 3, rng);
        const auto traj = simulate_pdp(model, start, 5.0, rng);
        for (const auto& j : traj.jumps) {
            EXPECT_NE(j.pre.label, j.post.label);
            EXPECT_TRUE(is_face_point(model, j.post));
            EXPECT_LT(j.time, 5.0);
        }
        for (std::size_t k = 1; k < traj.segments.size(); ++k)
            EXPECT_GT(traj.segments[k].start, traj.segments[k - 1].start);
    }
}

TEST(SimulatePdp, FirstJumpSurvivalMatchesClosedForm) {
    const auto model = three_label_model();
    RandomSource mrng(8, 0);
    const auto start = random_face_point(model, 1, mrng);
    const int reps = 100000;
    const double horizon = 3.0;
    std::vector<double> times;
    times.reserve(reps);
    for (int r = 0; r < reps; ++r) {
        RandomSource rng(31, static_cast<std::uint64_t>(r));
        const auto traj = simulate_pdp(model, start, horizon, rng);
        times.push_back(traj.jumps.empty() ? horizon : traj.jumps.front().time);
    }
    std::sort(times.begin(), times.end());
    double worst = 0.0;
    for (double t = 0.0; t < horizon; t += 0.05) {
        const auto above = times.end() - std::upper_bound(times.begin(), times.end(), t);
        worst = std::max(worst, std::abs(double(above) / reps - sojourn_survival(model, start, t)));
    }
    EXPECT_LT(worst, 0.01);
}

TEST(JumpTimeDensity, CyclicVertex) {
    const auto model = cyclic4_model();
    for (double t : {0.0, 0.5, 2.0}) EXPECT_NEAR(jump_time_density(model, vertex(model, 0), t, kCyclicZero), std::exp(-t), 1e-14);
    EXPECT_THROW(jump_time_density(model, vertex(model, 0), 1.0, kCyclicOne), Error);
}

TEST(JumpTimeDensity, IntegratesToExitProbability) {
    const auto model = three_label_model();
    RandomSource rng(9, 0);
    const auto nu = random_face_point(model, 0, rng);
    const double horizon = 10.0;
    const int n = 4000;
    const double h = horizon / n;
    double total = 0.0;
    for (LabelIndex b = 1; b < 3; ++b) {
        for (int k = 0; k <= n; ++k) {
            const double w = (k == 0 || k == n) ? 1.0 : (k % 2 ? 4.0 : 2.0);
            total += w * jump_time_density(model, nu, h * k, b) * h / 3.0;
        }
    }
    EXPECT_NEAR(total + sojourn_survival(model, nu, horizon), 1.0, 1e-6);
}

TEST(JumpTimeDensity, ZeroFluxTarget) {
    // From face {1,2} the chain can only leave to label b.
    Matrix m(4, 4);
    m << -1, 0.5, 0.5, 0,
          0.3, -0.6, 0.3, 0,
          0, 0, -1, 1,
          1, 0, 0, -1;
    const Model model(RateMatrix(m), ObservationModel({"a", "b", "c"}, {0, 0, 1, 2}));
    RandomSource rng(10, 0);
    const auto nu = random_face_point(model, 0, rng);
    for (double t : {0.0, 0.7, 3.0}) EXPECT_EQ(jump_time_density(model, nu, t, 2), 0.0);
}

TEST(ExitSurvivalNonlinear, CyclicModel) {
    const auto model = cyclic4_model();
    EXPECT_EQ(exit_survival_nonlinear(model.generator(), {0, 2}, 0, 0.0), 1.0);
    EXPECT_NEAR(exit_survival_nonlinear(model.generator(), {0, 2}, 0, 1.0), std::exp(-1.0), 1e-6);
    EXPECT_THROW(exit_survival_nonlinear(model.generator(), {0, 2}, 3, 1.0), Error);
}

TEST(ExitSurvivalNonlinear, MatchesOracleOnRandomModels) {
    RandomSource rng(11, 0);
    std::vector<double> grid;
    for (int k = 0; k <= 500; ++k) grid.push_back(0.01 * k);
    for (int rep = 0; rep < 10; ++rep) {
        const auto gen = random_generator(5, rng);
        const IndexSet subset{0, 1, 3};
        const auto curve = exit_survival_curve(gen, subset, 1, grid);
        for (std::size_t k = 0; k < grid.size(); k += 10)
            EXPECT_NEAR(curve[k], exit_survival_oracle(gen, subset, 1, grid[k]), 1e-6);
    }
}

TEST(LawCheck, SmallRunPassesEveryStatistic) {
    const auto model = three_label_model();
    RandomSource rng(21, 0);
    const auto mu = random_distribution(5, rng);
    LawCheckOptions opts;
    opts.n_sims = 4000;
    opts.survival_tol = 0.05;
    opts.seed = 5;
    const auto rows = pdp_law_check(model, mu, opts);
    EXPECT_GT(rows.size(), 10u);
    for (const auto& r : rows) EXPECT_TRUE(r.pass) << r.statistic << " " << r.empirical << " vs " << r.analytic;
}

TEST(LawCheck, FirstJumpSurvivalMixesFaces) {
    const auto model = cyclic4_model();
    const auto mu = Distribution(RowVector::Constant(4, 0.25));
    EXPECT_NEAR(first_jump_survival(model, mu, 1.3), std::exp(-1.3), 1e-14);
}

TEST(FilterDistance, IdenticalStartsStayTogether) {
    const auto model = cyclic4_model();
    const auto mu = Distribution::dirac(4, 0);
    RandomSource rng(3, 0);
    const auto obs = observe(sample_chain(model.generator(), mu, 20.0, rng), model.observation());
    for (double d : filter_distance_curve(model, obs, mu, mu, {0.0, 1.0, 5.0, 19.9})) EXPECT_EQ(d, 0.0);
    const auto rho = Distribution::uniform_on(4, {0, 2});
    for (double d : filter_distance_curve(model, obs, mu, rho, {0.0, 1.0, 5.0, 19.9})) EXPECT_NEAR(d, 1.0, 1e-12);
}
