#pragma once

#include "pdfilter/chain.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace pdfilter {

inline constexpr double kDegenerateTol = 1e-12;

/// Point of the effective simplex: a label a and a probability vector
/// supported on h^{-1}(a).
struct FacePoint {
    LabelIndex label = 0;
    RowVector weights;

    double pair(const Vector& f) const { return weights.dot(f.transpose()); }
};

/// Checks the face-point invariants (exact zeros off the face).
inline bool is_face_point(const Model& model, const FacePoint& p, double tol = kDistributionTol) {
    if (p.label >= model.num_labels() || static_cast<std::size_t>(p.weights.size()) != model.num_states())
        return false;
    for (StateIndex i = 0; i < model.num_states(); ++i) {
        const double w = p.weights(static_cast<Eigen::Index>(i));
        if (model.label_of(i) != p.label && w != 0.0) return false;
        if (w < 0.0) return false;
    }
    return std::abs(p.weights.sum() - 1.0) <= tol;
}

inline FacePoint vertex(const Model& model, StateIndex i) {
    return {model.label_of(i), Distribution::dirac(model.num_states(), i).weights()};
}

inline FacePoint face_uniform(const Model& model, LabelIndex a) {
    return {a, Distribution::uniform_on(model.num_states(), model.face(a)).weights()};
}

struct Conditioned {
    FacePoint point;
    bool fallback = false;  // face mass was at or below the tolerance
};

/// The conditioning operator H_a: restrict μ to h^{-1}(a) and renormalize.
/// Entries off the face may be negative (μΛ-type inputs); entries on the
/// face must be nonnegative. A vanishing face mass yields the uniform
/// fallback measure on the face.
inline Conditioned restrict_normalize(const Model& model, const RowVector& mu, LabelIndex a,
                                      double fallback_tol = 0.0) {
    if (static_cast<std::size_t>(mu.size()) != model.num_states())
        throw Error(ErrorCode::InvalidArgument, "measure size mismatch");
    const auto& face = model.face(a);
    double mass = 0.0;
    for (auto i : face) {
        const double w = mu(static_cast<Eigen::Index>(i));
        if (w < 0.0) throw Error(ErrorCode::NegativeFaceEntry, "negative entry on the target face");
        mass += w;
    }
    if (mass <= fallback_tol) return {face_uniform(model, a), true};
    RowVector out = RowVector::Zero(mu.size());
    for (auto i : face) out(static_cast<Eigen::Index>(i)) = mu(static_cast<Eigen::Index>(i)) / mass;
    return {{a, std::move(out)}, false};
}

/// F_a(y) = 1_{h^{-1}(a)} * (yΛ) - (yΛ 1_{h^{-1}(a)}) y.
inline RowVector vector_field(const Model& model, const RowVector& y, LabelIndex a) {
    const RowVector yl = y * model.lambda();
    const Vector& ind = model.face_indicator(a);
    const double outflow = yl.dot(ind.transpose());
    return yl.cwiseProduct(ind.transpose()) - outflow * y;
}

inline RowVector vector_field(const Model& model, const FacePoint& y) { return vector_field(model, y.weights, y.label); }

/// Unnormalized face evolution x_A e^{tΛ_A}, in face coordinates.
inline RowVector face_propagate(const Model& model, const FacePoint& x, double t) {
    const auto& face = model.face(x.label);
    return gather(x.weights, face) * expm_metzler(model.face_generator(x.label), t);
}

/// The simplex flow φ_a(t, x), evaluated in closed form as the normalization
/// of x_A e^{tΛ_A}.
inline FacePoint flow(const Model& model, double t, const FacePoint& x) {
    if (!(t >= 0.0)) throw Error(ErrorCode::InvalidArgument, "flow time must be nonnegative");
    if (t == 0.0) return x;
    const RowVector u = face_propagate(model, x, t);
    const double mass = u.sum();
    if (!(mass > 0.0)) throw Error(ErrorCode::FaceMassVanished, "unnormalized filter mass vanished");
    return {x.label, scatter(u / mass, model.face(x.label), model.num_states())};
}

/// Fixed-step RK4 integration of dy/dt = F_a(y), without renormalization.
inline RowVector flow_ode_unnormalized(const Model& model, double t, const FacePoint& x, double step) {
    if (!(step > 0.0)) throw Error(ErrorCode::InvalidArgument, "step must be positive");
    if (!(t >= 0.0)) throw Error(ErrorCode::InvalidArgument, "flow time must be nonnegative");
    RowVector y = x.weights;
    if (t == 0.0) return y;
    const auto steps = static_cast<long>(std::ceil(t / step - 1e-9));
    const double h = t / static_cast<double>(steps);
    for (long k = 0; k < steps; ++k) {
        const RowVector k1 = vector_field(model, y, x.label);
        const RowVector k2 = vector_field(model, y + 0.5 * h * k1, x.label);
        const RowVector k3 = vector_field(model, y + 0.5 * h * k2, x.label);
        const RowVector k4 = vector_field(model, y + h * k3, x.label);
        y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    return y;
}

/// RK4 counterpart of `flow`, renormalized onto the face.
inline FacePoint flow_ode(const Model& model, double t, const FacePoint& x, double step) {
    if (t == 0.0) return x;
    RowVector y = flow_ode_unnormalized(model, t, x, step);
    for (StateIndex i = 0; i < model.num_states(); ++i)
        if (model.label_of(i) != x.label) y(static_cast<Eigen::Index>(i)) = 0.0;
    y = y.cwiseMax(0.0);
    return {x.label, y / y.sum()};
}

/// Piecewise-deterministic trajectory on the effective simplex. Between
/// jumps the point follows the flow from the segment start, so only segment
/// starts and jump records are stored.
struct Trajectory {
    struct Segment {
        double start;
        FacePoint state;
    };
    struct JumpRecord {
        double time;
        FacePoint pre;
        FacePoint post;
    };

    std::vector<Segment> segments;
    std::vector<JumpRecord> jumps;
    double horizon = 0.0;

    std::size_t segment_index(double t) const {
        auto it = std::upper_bound(segments.begin(), segments.end(), t,
                                   [](double x, const Segment& s) { return x < s.start; });
        return it == segments.begin() ? 0 : static_cast<std::size_t>(std::prev(it) - segments.begin());
    }

    double segment_end(std::size_t k) const { return k + 1 < segments.size() ? segments[k + 1].start : horizon; }

    /// Right-continuous value at t.
    FacePoint at(const Model& model, double t) const {
        const auto& seg = segments[segment_index(t)];
        return flow(model, t - seg.start, seg.state);
    }

    LabelIndex label_at(double t) const { return segments[segment_index(t)].state.label; }

    std::optional<double> first_jump_time() const {
        if (jumps.empty()) return std::nullopt;
        return jumps.front().time;
    }
};

using FilterTrajectory = Trajectory;

/// The exact filter driven by a noise-free observation path. It starts at
/// H_{Y_0}[μ] and follows the flow between observation jumps; at a jump
/// time T it moves to H_{Y_T}[Π_{T-}Λ].
///
/// Throws DegenerateJump when Π_{T-}Λ puts mass at most `deg_tol` on the new
/// face, which means the observation path is inconsistent with the model.
inline FilterTrajectory run_filter(const Model& model, const PiecewisePath& obs, const Distribution& mu,
                                   double deg_tol = kDegenerateTol) {
    if (mu.size() != model.num_states()) throw Error(ErrorCode::InvalidDistribution, "initial law size mismatch");
    if (obs.initial_value >= model.num_labels()) throw Error(ErrorCode::InvalidArgument, "unknown observation label");
    FilterTrajectory traj;
    traj.horizon = obs.horizon;
    traj.segments.push_back({0.0, restrict_normalize(model, mu.weights(), obs.initial_value).point});
    for (const auto& j : obs.jumps) {
        if (j.value >= model.num_labels()) throw Error(ErrorCode::InvalidArgument, "unknown observation label");
        const auto& seg = traj.segments.back();
        FacePoint pre = flow(model, j.time - seg.start, seg.state);
        const RowVector pushed = pre.weights * model.lambda();
        const double denom = pushed.dot(model.face_indicator(j.value).transpose());
        if (!(denom > deg_tol))
            throw Error(ErrorCode::DegenerateJump, "jump denominator vanished at t=" + std::to_string(j.time));
        FacePoint post = restrict_normalize(model, pushed, j.value).point;
        traj.jumps.push_back({j.time, pre, post});
        traj.segments.push_back({j.time, std::move(post)});
    }
    return traj;
}

/// Discrete-time filter on the mesh kδ: Π̄_0 = H_{Y_0}[μ],
/// Π̄_k = H_{Y_{kδ}}[Π̄_{k-1} e^{δΛ}].
inline std::vector<FacePoint> discrete_filter(const Model& model, const Distribution& mu, double delta,
                                              const std::vector<LabelIndex>& obs_samples) {
    if (obs_samples.empty()) throw Error(ErrorCode::InvalidArgument, "need at least one observation sample");
    if (!(delta > 0.0)) throw Error(ErrorCode::InvalidArgument, "delta must be positive");
    const Matrix p = transition_semigroup(model.generator(), delta);
    std::vector<FacePoint> out;
    out.reserve(obs_samples.size());
    out.push_back(restrict_normalize(model, mu.weights(), obs_samples.front()).point);
    for (std::size_t k = 1; k < obs_samples.size(); ++k)
        out.push_back(restrict_normalize(model, out.back().weights * p, obs_samples[k]).point);
    return out;
}

/// Law of X_{t+s} given the observations up to t: Π_t e^{sΛ}.
inline Distribution predict(const Model& model, const FacePoint& pi, double s) {
    if (!(s >= 0.0)) throw Error(ErrorCode::InvalidArgument, "prediction lag must be nonnegative");
    RowVector w = pi.weights * transition_semigroup(model.generator(), s);
    w = w.cwiseMax(0.0);
    return Distribution(w / w.sum());
}

}  // namespace pdfilter
