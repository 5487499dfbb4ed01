#pragma once

#include "pdfilter/grid.hpp"
#include "pdfilter/pdp.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace pdfilter {

/// Minimize E[e^{-ατ} X_τ g + ∫_0^τ e^{-αs} X_s l ds] over observation
/// stopping times τ.
struct StoppingProblem {
    Vector stopping_cost;  // g
    Vector running_cost;   // l
    double discount = 1.0; // α

    void validate(const Model& model) const {
        if (!(discount > 0.0)) throw Error(ErrorCode::InvalidArgument, "discount must be strictly positive");
        if (static_cast<std::size_t>(stopping_cost.size()) != model.num_states() ||
            static_cast<std::size_t>(running_cost.size()) != model.num_states())
            throw Error(ErrorCode::InvalidArgument, "cost vectors must have one entry per state");
    }

    double obstacle(const FacePoint& p) const { return p.pair(stopping_cost); }  // ψ(ν) = νg
    double running(const FacePoint& p) const { return p.pair(running_cost); }    // L(ν) = νl
};

/// Uniform mesh {0, Δ, ..., T_max} for the deterministic minimization.
struct TimeMesh {
    double step = 0.0;
    std::size_t intervals = 0;

    double horizon() const { return step * static_cast<double>(intervals); }
    double node(std::size_t k) const { return step * static_cast<double>(k); }
    std::size_t nearest_node(double t) const {
        const auto k = static_cast<long>(std::llround(t / step));
        return static_cast<std::size_t>(std::clamp<long>(k, 0, static_cast<long>(intervals)));
    }
};

struct SolverOptions {
    std::size_t resolution = 16;
    double tol = 1e-6;
    double tail_tol = 1e-6;       // e^{-α T_max} target
    double curvature_tol = 1e-3;  // per-step flow curvature bound
    double max_step = 0.05;
    std::size_t max_iterations = 10000;
    std::uint64_t witness_seed = 20240601;
    std::size_t witness_pairs = 20;
};

/// T_max = ln(1/tail_tol)/α; Δ keeps the second-order flow change per step,
/// Δ²‖Λ‖²/2, below the curvature tolerance.
inline TimeMesh make_time_mesh(const Model& model, const StoppingProblem& prob, const SolverOptions& opts = {}) {
    const double t_max = std::log(1.0 / opts.tail_tol) / prob.discount;
    const double rate = model.generator().max_exit_rate();
    double step = opts.max_step;
    if (rate > 0.0) step = std::min(step, std::sqrt(2.0 * opts.curvature_tol) / rate);
    const auto intervals = static_cast<std::size_t>(std::ceil(t_max / step));
    return {t_max / static_cast<double>(intervals), intervals};
}

/// Single-jump dynamic-programming operator on a FaceGrid:
///
///   (Tv)(ν) = min over mesh nodes t of
///       ∫_0^t e^{-αs} S(s,ν) [L + λ Σ_b q_b v(H_b[·Λ])](φ(s,ν)) ds + e^{-αt} S(t,ν) ψ(φ(t,ν)),
///
/// plus a final branch at T_max where ψ is replaced by v (never stop before
/// the horizon). Everything except v is precomputed along the flow from each
/// grid point, so one application is a sparse linear pass followed by a
/// running minimum. Integrals use Simpson's rule on each mesh interval.
/// Ties go to the smallest t.
class BellmanOperator {
public:
    BellmanOperator(Model model, StoppingProblem prob, std::shared_ptr<const FaceGrid> grid, TimeMesh mesh)
        : model_(std::move(model)), prob_(std::move(prob)), grid_(std::move(grid)), mesh_(mesh) {
        prob_.validate(model_);
        if (mesh_.intervals == 0 || !(mesh_.step > 0.0)) throw Error(ErrorCode::InvalidArgument, "empty time mesh");
        const std::size_t samples = 2 * mesh_.intervals + 1;
        const double half = 0.5 * mesh_.step;
        std::vector<Matrix> half_steps;
        for (LabelIndex a = 0; a < model_.num_labels(); ++a)
            half_steps.push_back(expm_metzler(model_.face_generator(a), half));

        points_.resize(grid_->size());
        for (std::size_t p = 0; p < grid_->size(); ++p) {
            const FacePoint& start = grid_->point(p);
            const auto& face = model_.face(start.label);
            auto& table = points_[p];
            table.samples.reserve(samples);
            RowVector u = gather(start.weights, face);
            for (std::size_t j = 0; j < samples; ++j) {
                const double s = half * static_cast<double>(j);
                const double survival = u.sum();
                FacePoint at{start.label, scatter(u / survival, face, model_.num_states())};
                Sample sample;
                sample.weight = std::exp(-prob_.discount * s) * survival;
                sample.running = prob_.running(at);
                sample.obstacle = prob_.obstacle(at);
                sample.stencil_begin = entries_.size();
                const double rate = jump_rate(model_, at);
                if (model_.num_labels() >= 2 && rate > kDegenerateTol) {
                    for (const auto& atom : jump_measure(model_, at).atoms) {
                        if (atom.mass <= 0.0) continue;
                        for (const auto& e : grid_->locate(atom.target))
                            entries_.push_back({e.index, rate * atom.mass * e.weight});
                    }
                }
                sample.stencil_end = entries_.size();
                table.samples.push_back(sample);
                if (j + 1 == samples) {
                    table.terminal_begin = entries_.size();
                    for (const auto& e : grid_->locate(at)) entries_.push_back(e);
                    table.terminal_end = entries_.size();
                } else {
                    u = u * half_steps[start.label];
                }
            }
        }
    }

    const Model& model() const noexcept { return model_; }
    const StoppingProblem& problem() const noexcept { return prob_; }
    const TimeMesh& mesh() const noexcept { return mesh_; }
    const std::shared_ptr<const FaceGrid>& grid() const noexcept { return grid_; }

    std::vector<double> obstacle_values() const {
        std::vector<double> out(grid_->size());
        for (std::size_t p = 0; p < out.size(); ++p) out[p] = points_[p].samples.front().obstacle;
        return out;
    }

    std::vector<double> apply(std::span<const double> v) const {
        std::vector<double> out(points_.size());
        for (std::size_t p = 0; p < points_.size(); ++p) out[p] = apply_at(p, v);
        return out;
    }

    ValueFunction apply(const ValueFunction& v) const { return {grid_, apply(std::span<const double>(v.values))}; }

    /// One-jump continuation functional K_t u at grid point p, t = node k:
    /// ∫_0^t e^{-αs}S(L + λQu)(φ(s)) ds + e^{-αt} S(t) u(φ(t)).
    double continuation(std::size_t p, std::size_t node, std::span<const double> u) const {
        const auto& table = points_[p];
        double cum = 0.0;
        double prev = integrand(table.samples[0], u);
        for (std::size_t k = 0; k < node; ++k) {
            const double mid = integrand(table.samples[2 * k + 1], u);
            const double next = integrand(table.samples[2 * k + 2], u);
            cum += mesh_.step / 6.0 * (prev + 4.0 * mid + next);
            prev = next;
        }
        const FacePoint end = flow(model_, mesh_.node(node), grid_->point(p));
        return cum + table.samples[2 * node].weight * grid_->interpolate(std::vector<double>(u.begin(), u.end()), end);
    }

private:
    struct Sample {
        double weight = 0.0;  // e^{-αs} S(s, ν)
        double running = 0.0;
        double obstacle = 0.0;
        std::size_t stencil_begin = 0, stencil_end = 0;  // λ q-weighted jump targets
    };
    struct PointTable {
        std::vector<Sample> samples;
        std::size_t terminal_begin = 0, terminal_end = 0;
    };

    double integrand(const Sample& s, std::span<const double> v) const {
        double acc = s.running;
        for (std::size_t e = s.stencil_begin; e < s.stencil_end; ++e) acc += entries_[e].weight * v[entries_[e].index];
        return s.weight * acc;
    }

    double apply_at(std::size_t p, std::span<const double> v) const {
        const auto& table = points_[p];
        const auto& samples = table.samples;
        double best = samples.front().obstacle;
        double cum = 0.0;
        double prev = integrand(samples[0], v);
        for (std::size_t k = 0; k < mesh_.intervals; ++k) {
            const double mid = integrand(samples[2 * k + 1], v);
            const double next = integrand(samples[2 * k + 2], v);
            cum += mesh_.step / 6.0 * (prev + 4.0 * mid + next);
            prev = next;
            const double stop_here = cum + samples[2 * k + 2].weight * samples[2 * k + 2].obstacle;
            if (stop_here < best) best = stop_here;
        }
        double tail = 0.0;
        for (std::size_t e = table.terminal_begin; e < table.terminal_end; ++e)
            tail += entries_[e].weight * v[entries_[e].index];
        const double never = cum + samples.back().weight * tail;
        return never < best ? never : best;
    }

    Model model_;
    StoppingProblem prob_;
    std::shared_ptr<const FaceGrid> grid_;
    TimeMesh mesh_;
    std::vector<PointTable> points_;
    std::vector<StencilEntry> entries_;
};

/// One application of the Bellman operator (rebuilds the flow tables; use
/// BellmanOperator directly when iterating).
inline ValueFunction bellman_operator(const Model& model, const ValueFunction& v, const StoppingProblem& prob,
                                      const TimeMesh& mesh) {
    return BellmanOperator(model, prob, v.grid, mesh).apply(v);
}

inline double sup_distance(std::span<const double> a, std::span<const double> b) {
    double d = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) d = std::max(d, std::abs(a[k] - b[k]));
    return d;
}

/// Largest observed ratio ‖Tv1 - Tv2‖∞ / ‖v1 - v2‖∞ over random pairs.
inline double contraction_witness(const BellmanOperator& op, std::size_t pairs, std::uint64_t seed) {
    const auto psi = op.obstacle_values();
    const auto [lo_it, hi_it] = std::minmax_element(psi.begin(), psi.end());
    const double lo = *lo_it - 1.0, hi = *hi_it + 1.0;
    double beta = 0.0;
    for (std::size_t r = 0; r < pairs; ++r) {
        RandomSource rng(seed, r);
        std::vector<double> v1(psi.size()), v2(psi.size());
        for (std::size_t k = 0; k < psi.size(); ++k) {
            v1[k] = lo + (hi - lo) * rng.uniform();
            v2[k] = lo + (hi - lo) * rng.uniform();
        }
        const double den = sup_distance(v1, v2);
        if (den == 0.0) continue;
        beta = std::max(beta, sup_distance(op.apply(v1), op.apply(v2)) / den);
    }
    return beta;
}

struct SolveResult {
    ValueFunction value;
    std::size_t iterations = 0;
    double residual = 0.0;      // ‖Tv - v‖∞ of the returned v
    double beta_witness = 0.0;
    TimeMesh mesh;
};

/// Value iteration v_{k+1} = T v_k from v_0 = ψ until the sup-norm update is
/// below `opts.tol`. Throws NoConvergence after `opts.max_iterations`.
inline SolveResult solve_value(const BellmanOperator& op, const SolverOptions& opts = {}) {
    std::vector<double> v = op.obstacle_values();
    for (std::size_t it = 1; it <= opts.max_iterations; ++it) {
        std::vector<double> next = op.apply(v);
        const double change = sup_distance(next, v);
        v = std::move(next);
        if (change < opts.tol) {
            SolveResult res;
            res.iterations = it;
            res.residual = sup_distance(op.apply(v), v);
            res.beta_witness = contraction_witness(op, opts.witness_pairs, opts.witness_seed);
            res.mesh = op.mesh();
            res.value = {op.grid(), std::move(v)};
            return res;
        }
    }
    throw Error(ErrorCode::NoConvergence, "value iteration did not converge in " +
                                              std::to_string(opts.max_iterations) + " iterations");
}

inline SolveResult solve_value(const Model& model, const StoppingProblem& prob, const SolverOptions& opts = {}) {
    auto grid = std::make_shared<const FaceGrid>(model, opts.resolution);
    BellmanOperator op(model, prob, grid, make_time_mesh(model, prob, opts));
    return solve_value(op, opts);
}

/// V(μ) = Σ_a μ(h^{-1}(a)) v(H_a[μ]).
inline double value_general(const Model& model, const Distribution& mu, const ValueFunction& v) {
    double total = 0.0;
    for (LabelIndex a = 0; a < model.num_labels(); ++a) {
        const double mass = mu.weights().dot(model.face_indicator(a).transpose());
        if (mass <= 0.0) continue;
        total += mass * v(restrict_normalize(model, mu.weights(), a).point);
    }
    return total;
}

/// Stopping region as the sublevel set {margin ≤ 0} of a continuous function.
struct Policy {
    std::function<double(const FacePoint&)> margin;

    bool stops(const FacePoint& p) const { return margin(p) <= 0.0; }
};

/// ε-relaxed contact set {ν : νg ≤ v(ν) + ε}.
inline Policy stopping_rule(const ValueFunction& v, const StoppingProblem& prob, double eps) {
    return {[v, g = prob.stopping_cost, eps](const FacePoint& p) { return p.pair(g) - v(p) - eps; }};
}

/// Stop as soon as νg ≤ level.
inline Policy threshold_policy(const StoppingProblem& prob, double level) {
    return {[g = prob.stopping_cost, level](const FacePoint& p) { return p.pair(g) - level; }};
}

inline Policy stop_immediately() {
    return {[](const FacePoint&) { return -1.0; }};
}

inline Policy never_stop() {
    return {[](const FacePoint&) { return 1.0; }};
}

/// Trajectory values on a scan mesh: every segment start, then steps of
/// `scan_step` along the flow, then the left limit at the segment end.
struct ScanPoint {
    double time;
    std::size_t segment;
    bool segment_start;
    FacePoint state;
};

inline std::vector<ScanPoint> scan_trajectory(const Model& model, const Trajectory& traj, double scan_step = 0.05) {
    if (!(scan_step > 0.0)) throw Error(ErrorCode::InvalidArgument, "scan step must be positive");
    std::vector<std::optional<Matrix>> steps(model.num_labels());
    std::vector<ScanPoint> out;
    for (std::size_t k = 0; k < traj.segments.size(); ++k) {
        const auto& seg = traj.segments[k];
        const double span = traj.segment_end(k) - seg.start;
        out.push_back({seg.start, k, true, seg.state});
        if (!(span > 0.0)) continue;
        const auto a = seg.state.label;
        const auto& face = model.face(a);
        if (!steps[a]) steps[a] = expm_metzler(model.face_generator(a), scan_step);
        RowVector u = gather(seg.state.weights, face);
        double s = scan_step;
        for (; s < span; s += scan_step) {
            u = u * *steps[a];
            u /= u.sum();
            out.push_back({seg.start + s, k, false, {a, scatter(u, face, model.num_states())}});
        }
        out.push_back({seg.start + span, k, false, flow(model, span, seg.state)});
    }
    return out;
}

/// First time the trajectory enters the policy's stopping set: the first
/// scan point with margin ≤ 0, refined by bisection on the flow back to the
/// previous scan point (to `time_tol`). Returns nullopt if the set is not
/// reached before the horizon.
inline std::optional<double> first_entry_time(const Model& model, const Trajectory& traj,
                                              const std::vector<ScanPoint>& scan, const Policy& policy,
                                              double time_tol = 1e-8) {
    for (std::size_t i = 0; i < scan.size(); ++i) {
        const auto& pt = scan[i];
        if (policy.margin(pt.state) > 0.0) continue;
        if (pt.segment_start) return pt.time;
        const auto& seg = traj.segments[pt.segment];
        double a = scan[i - 1].time - seg.start, b = pt.time - seg.start;
        while (b - a > time_tol) {
            const double mid = 0.5 * (a + b);
            if (policy.margin(flow(model, mid, seg.state)) <= 0.0)
                b = mid;
            else
                a = mid;
        }
        return seg.start + b;
    }
    return std::nullopt;
}

inline std::optional<double> first_entry_time(const Model& model, const Trajectory& traj, const Policy& policy,
                                              double scan_step = 0.05, double time_tol = 1e-8) {
    return first_entry_time(model, traj, scan_trajectory(model, traj, scan_step), policy, time_tol);
}

/// ∫_{from}^{to} e^{-αs} Π_s l ds inside segment k.
inline double segment_running_cost(const Model& model, const Trajectory& traj, std::size_t k, double from, double to,
                                   const StoppingProblem& prob) {
    if (!(to > from)) return 0.0;
    const auto& seg = traj.segments[k];
    const auto& face = model.face(seg.state.label);
    const RowVector start = gather(seg.state.weights, face);
    const Matrix& sub = model.face_generator(seg.state.label);
    Vector l_face(static_cast<Eigen::Index>(face.size()));
    for (std::size_t p = 0; p < face.size(); ++p)
        l_face(static_cast<Eigen::Index>(p)) = prob.running_cost(static_cast<Eigen::Index>(face[p]));
    if ((l_face.array() == 0.0).all()) return 0.0;
    auto integrand = [&](double s) {
        const RowVector u = start * expm_metzler(sub, s - seg.start);
        return std::exp(-prob.discount * s) * u.dot(l_face.transpose()) / u.sum();
    };
    return boost::math::quadrature::gauss_kronrod<double, 15>::integrate(integrand, from, to, 10, 1e-11);
}

/// J along a filter (or PDP) trajectory:
/// e^{-ατ} Π_τ g + ∫_0^τ e^{-αs} Π_s l ds, with the g-term dropped and the
/// integral cut at the trajectory horizon when τ = ∞.
inline double cost_along_filter(const Model& model, const Trajectory& traj, double tau, const StoppingProblem& prob) {
    const bool stopped = std::isfinite(tau);
    const double until = stopped ? tau : traj.horizon;
    if (stopped && tau > traj.horizon + 1e-12)
        throw Error(ErrorCode::InvalidArgument, "stopping time beyond the trajectory horizon");
    double total = 0.0;
    for (std::size_t k = 0; k < traj.segments.size(); ++k) {
        const double a = traj.segments[k].start;
        if (a >= until) break;
        total += segment_running_cost(model, traj, k, a, std::min(until, traj.segment_end(k)), prob);
    }
    if (stopped) total += std::exp(-prob.discount * tau) * prob.obstacle(traj.at(model, tau));
    return total;
}

struct McEstimate {
    double mean = 0.0;
    double std_error = 0.0;
    double truncation_bound = 0.0;  // e^{-α·horizon}(max|g| + max|l|/α)
    std::size_t samples = 0;
};

inline double truncation_bound(const StoppingProblem& prob, double horizon) {
    return std::exp(-prob.discount * horizon) *
           (prob.stopping_cost.cwiseAbs().maxCoeff() + prob.running_cost.cwiseAbs().maxCoeff() / prob.discount);
}

/// Monte Carlo estimates of J(μ, τ_policy) for several policies over common
/// simulated chains: replication r uses stream r of `seed`.
inline std::vector<McEstimate> evaluate_policies_mc(const Model& model, const Distribution& mu,
                                                    std::span<const Policy> policies, const StoppingProblem& prob,
                                                    std::size_t n_sims, double horizon, std::uint64_t seed) {
    prob.validate(model);
    if (n_sims == 0) throw Error(ErrorCode::InvalidArgument, "need at least one simulation");
    const std::size_t np = policies.size();
    std::vector<double> sum(np, 0.0), sumsq(np, 0.0);
    std::vector<double> prefix;
    for (std::size_t r = 0; r < n_sims; ++r) {
        RandomSource rng(seed, r);
        const auto path = sample_chain(model.generator(), mu, horizon, rng);
        const auto traj = run_filter(model, observe(path, model.observation()), mu);
        prefix.assign(traj.segments.size() + 1, 0.0);
        for (std::size_t k = 0; k < traj.segments.size(); ++k)
            prefix[k + 1] = prefix[k] + segment_running_cost(model, traj, k, traj.segments[k].start,
                                                             traj.segment_end(k), prob);
        const auto scan = scan_trajectory(model, traj);
        for (std::size_t q = 0; q < np; ++q) {
            const auto tau = first_entry_time(model, traj, scan, policies[q]);
            double cost;
            if (!tau) {
                cost = prefix.back();
            } else {
                const auto k = traj.segment_index(*tau);
                cost = prefix[k] + segment_running_cost(model, traj, k, traj.segments[k].start, *tau, prob) +
                       std::exp(-prob.discount * *tau) * prob.obstacle(traj.at(model, *tau));
            }
            sum[q] += cost;
            sumsq[q] += cost * cost;
        }
    }
    std::vector<McEstimate> out(np);
    const double n = static_cast<double>(n_sims);
    for (std::size_t q = 0; q < np; ++q) {
        out[q].mean = sum[q] / n;
        const double var = n > 1 ? std::max(0.0, (sumsq[q] - n * out[q].mean * out[q].mean) / (n - 1.0)) : 0.0;
        out[q].std_error = std::sqrt(var / n);
        out[q].truncation_bound = truncation_bound(prob, horizon);
        out[q].samples = n_sims;
    }
    return out;
}

inline McEstimate evaluate_policy_mc(const Model& model, const Distribution& mu, const Policy& policy,
                                     const StoppingProblem& prob, std::size_t n_sims, double horizon,
                                     const RandomSource& rng) {
    return evaluate_policies_mc(model, mu, std::span<const Policy>(&policy, 1), prob, n_sims, horizon,
                                rng.seed())
        .front();
}

struct VariationalReport {
    std::vector<double> worst_violation;  // per grid point
    double obstacle_violation = 0.0;      // max (u - ψ)
    double continuation_violation = 0.0;  // max (u - K_t u) over t_checks
    std::vector<double> checked_times;    // mesh nodes actually used
    bool pass = false;
    std::string note = "checks u <= psi and u <= K_t u with the one-jump operator; maximality is not checked";
};

/// Checks the variational inequalities u ≤ ψ and
/// u ≤ e^{-αt}R_t u + ∫_0^t e^{-αs}R_s L ds at every grid point, with the
/// right side evaluated by the one-jump continuation functional of `op`.
inline VariationalReport verify_variational(const BellmanOperator& op, const ValueFunction& u,
                                            std::span<const double> t_checks, double tol) {
    VariationalReport rep;
    const auto psi = op.obstacle_values();
    std::vector<std::size_t> nodes;
    for (double t : t_checks) {
        const auto k = op.mesh().nearest_node(t);
        nodes.push_back(k);
        rep.checked_times.push_back(op.mesh().node(k));
    }
    rep.worst_violation.assign(psi.size(), -std::numeric_limits<double>::infinity());
    rep.obstacle_violation = -std::numeric_limits<double>::infinity();
    rep.continuation_violation = -std::numeric_limits<double>::infinity();
    for (std::size_t p = 0; p < psi.size(); ++p) {
        const double ob = u.values[p] - psi[p];
        rep.obstacle_violation = std::max(rep.obstacle_violation, ob);
        double worst = ob;
        for (auto k : nodes) {
            const double c = u.values[p] - op.continuation(p, k, u.values);
            rep.continuation_violation = std::max(rep.continuation_violation, c);
            worst = std::max(worst, c);
        }
        rep.worst_violation[p] = worst;
    }
    rep.pass = rep.obstacle_violation < tol && rep.continuation_violation < tol;
    return rep;
}

}  // namespace pdfilter
