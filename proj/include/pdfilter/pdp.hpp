#pragma once

#include "pdfilter/filter.hpp"

#include <cmath>
#include <optional>
#include <vector>

namespace pdfilter {

/// λ(ν) = -νΛ1_{h^{-1}(a)}, the rate at which the observation leaves its label.
inline double jump_rate(const Model& model, const FacePoint& nu) {
    const double r = -(nu.weights * model.lambda()).dot(model.face_indicator(nu.label).transpose());
    return r < 0.0 ? 0.0 : r;  // nonnegative analytically; clears rounding
}

/// Transition measure Q(ν, ·): atoms H_b[νΛ] with masses q(ν, b), b ≠ a.
struct JumpLaw {
    struct Atom {
        FacePoint target;
        double mass;
    };
    FacePoint source;
    std::vector<Atom> atoms;
    bool fallback = false;  // λ(ν) below tolerance; masses are the uniform q_a
};

inline void require_nontrivial(const Model& model) {
    if (model.num_labels() < 2)
        throw Error(ErrorCode::TrivialObservation, "the PDP description needs at least two observation labels");
}

inline JumpLaw jump_measure(const Model& model, const FacePoint& nu, double deg_tol = kDegenerateTol) {
    require_nontrivial(model);
    JumpLaw law{nu, {}, false};
    const RowVector pushed = nu.weights * model.lambda();
    const double rate = jump_rate(model, nu);
    law.fallback = rate < deg_tol;
    const double uniform_mass = 1.0 / static_cast<double>(model.num_labels() - 1);
    for (LabelIndex b = 0; b < model.num_labels(); ++b) {
        if (b == nu.label) continue;
        auto target = restrict_normalize(model, pushed, b).point;
        const double mass = law.fallback ? uniform_mass
                                         : pushed.dot(model.face_indicator(b).transpose()) / rate;
        law.atoms.push_back({std::move(target), mass});
    }
    return law;
}

/// exp(-∫_0^t λ(φ(s,ν)) ds), evaluated in closed form as ν_A e^{tΛ_A} 1.
inline double sojourn_survival(const Model& model, const FacePoint& nu, double t) {
    if (!(t >= 0.0)) throw Error(ErrorCode::InvalidArgument, "t must be nonnegative");
    if (t == 0.0) return 1.0;
    return std::clamp(face_propagate(model, nu, t).sum(), 0.0, 1.0);
}

/// Same quantity by composite Simpson quadrature of the rate along the flow.
inline double sojourn_survival_quadrature(const Model& model, const FacePoint& nu, double t, int intervals = 200) {
    if (t == 0.0) return 1.0;
    const int n = 2 * ((intervals + 1) / 2);
    const double h = t / n;
    const Matrix step = expm_metzler(model.face_generator(nu.label), h);
    const auto& face = model.face(nu.label);
    const Vector out_rates = -model.face_generator(nu.label).rowwise().sum();
    RowVector y = gather(nu.weights, face);
    double integral = 0.0;
    for (int k = 0; k <= n; ++k) {
        const double rate = y.dot(out_rates.transpose()) / y.sum();
        const double w = (k == 0 || k == n) ? 1.0 : (k % 2 == 1 ? 4.0 : 2.0);
        integral += w * rate;
        y = y * step;
        y /= y.sum();
    }
    return std::exp(-integral * h / 3.0);
}

inline constexpr int kBisectionIterations = 80;
inline constexpr double kSojournTimeTol = 1e-10;

/// Inverse of the survival law at level u, or nullopt when the survival at
/// the horizon still exceeds u (censored, including λ ≡ 0).
inline std::optional<double> sojourn_quantile(const Model& model, const FacePoint& nu, double horizon, double u) {
    if (sojourn_survival(model, nu, horizon) > u) return std::nullopt;
    double lo = 0.0, hi = horizon;
    for (int it = 0; it < kBisectionIterations && hi - lo > kSojournTimeTol; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (sojourn_survival(model, nu, mid) > u)
            lo = mid;
        else
            hi = mid;  // plateaus at level u resolve to their left endpoint
    }
    return hi;
}

inline std::optional<double> sample_sojourn(const Model& model, const FacePoint& nu, double horizon,
                                            RandomSource& rng) {
    if (!(horizon > 0.0)) throw Error(ErrorCode::InvalidArgument, "horizon must be positive");
    return sojourn_quantile(model, nu, horizon, rng.uniform());
}

using PdpTrajectory = Trajectory;

/// Next jump of the piecewise-deterministic process from `state`, which
/// started at time t, or nullopt if none occurs before the horizon.
inline std::optional<Trajectory::JumpRecord> pdp_next_jump(const Model& model, const FacePoint& state, double t,
                                                           double horizon, RandomSource& rng) {
    const auto sojourn = sample_sojourn(model, state, horizon - t, rng);
    if (!sojourn) return std::nullopt;
    const double jump_time = t + *sojourn;
    if (!(jump_time < horizon)) return std::nullopt;
    FacePoint pre = flow(model, *sojourn, state);
    auto law = jump_measure(model, pre);
    std::vector<double> masses;
    for (const auto& atom : law.atoms) masses.push_back(atom.mass);
    const auto k = rng.categorical(masses, 1.0);
    return Trajectory::JumpRecord{jump_time, std::move(pre), std::move(law.atoms[k].target)};
}

/// Simulates the filter directly as a piecewise-deterministic process from
/// its local characteristics.
inline PdpTrajectory simulate_pdp(const Model& model, const FacePoint& start, double horizon, RandomSource& rng) {
    require_nontrivial(model);
    if (!(horizon > 0.0)) throw Error(ErrorCode::InvalidArgument, "horizon must be positive");
    PdpTrajectory traj;
    traj.horizon = horizon;
    traj.segments.push_back({0.0, start});
    double t = 0.0;
    while (auto jump = pdp_next_jump(model, traj.segments.back().state, t, horizon, rng)) {
        t = jump->time;
        traj.segments.push_back({t, jump->post});
        traj.jumps.push_back(std::move(*jump));
    }
    return traj;
}

/// Joint density of (first sojourn, next label): S(t,ν) · φ(t,ν)Λ1_{h^{-1}(b)}.
inline double jump_time_density(const Model& model, const FacePoint& nu, double t, LabelIndex b) {
    if (b == nu.label) throw Error(ErrorCode::LabelEqualsSource, "target label equals the current label");
    if (b >= model.num_labels()) throw Error(ErrorCode::InvalidArgument, "unknown label");
    if (!(t >= 0.0)) throw Error(ErrorCode::InvalidArgument, "t must be nonnegative");
    // The unnormalized flow u = ν_A e^{tΛ_A} carries both factors: S = u·1 and
    // S·φΛ1_b = uΛ_{A,b}1.
    const RowVector u = scatter(face_propagate(model, nu, t), model.face(nu.label), model.num_states());
    return std::max(0.0, (u * model.lambda()).dot(model.face_indicator(b).transpose()));
}

/// Exit-time survival P_i(τ_A > t) from the normalized nonlinear flow on A:
/// exp(∫_0^t Σ_{k,h∈A} y(s,k)λ_kh ds) with y solving the projected ODE from
/// δ_i. RK4 on the augmented state (y, integral); returns the curve at the
/// requested (nondecreasing) times.
inline std::vector<double> exit_survival_curve(const RateMatrix& generator, const IndexSet& subset, StateIndex i,
                                               const std::vector<double>& times, double max_step = 1e-3) {
    const Matrix sub = sub_generator(generator, subset);
    const auto p = position_in(subset, i);
    const Vector row_sums = sub.rowwise().sum();
    const double rate_scale = std::max(1.0, (-sub.diagonal()).maxCoeff());
    const double step_cap = std::min(max_step, 0.05 / rate_scale);

    RowVector y = RowVector::Zero(sub.rows());
    y(static_cast<Eigen::Index>(p)) = 1.0;
    double integral = 0.0;
    auto deriv = [&](const RowVector& state, RowVector& dy) {
        const RowVector yl = state * sub;
        const double total = state.dot(row_sums.transpose());
        dy = yl - total * state;
        return total;
    };
    std::vector<double> out;
    out.reserve(times.size());
    double t = 0.0;
    RowVector k1, k2, k3, k4;
    for (double target : times) {
        if (!(target >= t)) throw Error(ErrorCode::InvalidArgument, "times must be nondecreasing and nonnegative");
        const double span = target - t;
        if (span > 0.0) {
            const auto steps = static_cast<long>(std::ceil(span / step_cap - 1e-9));
            const double h = span / static_cast<double>(steps);
            for (long s = 0; s < steps; ++s) {
                const double r1 = deriv(y, k1);
                const double r2 = deriv(y + 0.5 * h * k1, k2);
                const double r3 = deriv(y + 0.5 * h * k2, k3);
                const double r4 = deriv(y + h * k3, k4);
                y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
                integral += (h / 6.0) * (r1 + 2.0 * r2 + 2.0 * r3 + r4);
            }
            t = target;
        }
        out.push_back(std::clamp(std::exp(integral), 0.0, 1.0));
    }
    return out;
}

inline double exit_survival_nonlinear(const RateMatrix& generator, const IndexSet& subset, StateIndex i, double t) {
    if (!(t >= 0.0)) throw Error(ErrorCode::InvalidArgument, "t must be nonnegative");
    return exit_survival_curve(generator, subset, i, {t}).front();
}

}  // namespace pdfilter
