#pragma once

#include "pdfilter/pdp.hpp"

#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace pdfilter {

/// One line of a law-check report.
struct LawStatistic {
    std::string statistic;
    double empirical = 0.0;
    double analytic = 0.0;  // or the reference sample for two-sample rows
    double std_error = 0.0;
    bool pass = false;
};

struct LawCheckOptions {
    std::size_t n_sims = 100000;
    double horizon = 5.0;
    std::size_t survival_points = 100;
    std::size_t bins = 5;
    double survival_tol = 0.01;
    double z = 4.0;
    std::size_t min_bin_count = 30;
    std::uint64_t seed = 1;
};

/// First sojourn of a filter path: censored at the horizon when no jump occurs.
struct FirstJump {
    double time = std::numeric_limits<double>::infinity();
    FacePoint pre;
    LabelIndex target = 0;
};

/// Σ_a μ(h^{-1}(a)) S(t, H_a[μ]).
inline double first_jump_survival(const Model& model, const Distribution& mu, double t) {
    double total = 0.0;
    for (LabelIndex a = 0; a < model.num_labels(); ++a) {
        const double mass = mu.weights().dot(model.face_indicator(a).transpose());
        if (mass > 0.0) total += mass * sojourn_survival(model, restrict_normalize(model, mu.weights(), a).point, t);
    }
    return total;
}

/// First filter jumps from chains sampled under μ; replication r uses stream r.
inline std::vector<FirstJump> chain_first_jumps(const Model& model, const Distribution& mu, std::size_t n,
                                                double horizon, std::uint64_t seed) {
    std::vector<FirstJump> out(n);
    for (std::size_t r = 0; r < n; ++r) {
        RandomSource rng(seed, r);
        const auto path = sample_chain(model.generator(), mu, horizon, rng);
        const auto traj = run_filter(model, observe(path, model.observation()), mu);
        if (!traj.jumps.empty()) out[r] = {traj.jumps.front().time, traj.jumps.front().pre, traj.jumps.front().post.label};
    }
    return out;
}

/// First jumps of the directly simulated process started at H_a[μ] with a
/// drawn from the label law of μ.
inline std::vector<FirstJump> pdp_first_jumps(const Model& model, const Distribution& mu, std::size_t n, double horizon,
                                              std::uint64_t seed) {
    require_nontrivial(model);
    std::vector<double> label_mass(model.num_labels());
    std::vector<FacePoint> starts(model.num_labels());
    for (LabelIndex a = 0; a < model.num_labels(); ++a) {
        label_mass[a] = mu.weights().dot(model.face_indicator(a).transpose());
        if (label_mass[a] > 0.0) starts[a] = restrict_normalize(model, mu.weights(), a).point;
    }
    double total = 0.0;
    for (double m : label_mass) total += m;
    std::vector<FirstJump> out(n);
    for (std::size_t r = 0; r < n; ++r) {
        RandomSource rng(seed, r);
        const auto a = rng.categorical(label_mass, total);
        if (auto jump = pdp_next_jump(model, starts[a], 0.0, horizon, rng))
            out[r] = {jump->time, jump->pre, jump->post.label};
    }
    return out;
}

namespace detail {

inline std::size_t position_bin(const Model& model, const FacePoint& p, std::size_t bins) {
    const auto& face = model.face(p.label);
    if (face.size() < 2) return 0;
    const double x = p.weights(static_cast<Eigen::Index>(face.front()));
    return std::min(bins - 1, static_cast<std::size_t>(std::max(0.0, x) * static_cast<double>(bins)));
}

inline std::string label_pair(const Model& model, LabelIndex a, LabelIndex b) {
    const auto& labels = model.observation().labels();
    return labels[a] + "->" + labels[b];
}

struct Moments {
    double n = 0, s1 = 0, s2 = 0;
    void add(double x) {
        n += 1;
        s1 += x;
        s2 += x * x;
    }
    double mean() const { return s1 / n; }
    double std_error() const {
        if (n < 2) return 0.0;
        const double var = std::max(0.0, (s2 - n * mean() * mean()) / (n - 1));
        return std::sqrt(var / n);
    }
};

inline void survival_rows(const Model& model, const Distribution& mu, const std::vector<FirstJump>& jumps,
                          const LawCheckOptions& opts, const std::string& source, std::vector<LawStatistic>& out) {
    double worst = -1.0;
    LawStatistic row{source + ": T1 survival sup deviation", 0, 0, 0, false};
    const double n = static_cast<double>(jumps.size());
    for (std::size_t k = 0; k <= opts.survival_points; ++k) {
        const double t = opts.horizon * static_cast<double>(k) / static_cast<double>(opts.survival_points);
        double alive = 0;
        for (const auto& j : jumps) alive += j.time > t;
        const double emp = alive / n;
        const double ana = first_jump_survival(model, mu, t);
        if (std::abs(emp - ana) > worst) {
            worst = std::abs(emp - ana);
            row.statistic = source + ": T1 survival sup deviation (worst t=" + std::to_string(t) + ")";
            row.empirical = emp;
            row.analytic = ana;
            row.std_error = std::sqrt(std::max(ana * (1 - ana), 1e-300) / n);
        }
    }
    row.pass = worst < opts.survival_tol;
    out.push_back(row);
}

/// Target frequencies per (source label, pre-jump position bin, target label)
/// against q(ν, b), tested through the paired difference 1{target=b} - q(ν, b).
inline void target_rows(const Model& model, const std::vector<FirstJump>& jumps, const LawCheckOptions& opts,
                        const std::string& source, std::vector<LawStatistic>& out) {
    const std::size_t L = model.num_labels();
    std::vector<Moments> hit(L * opts.bins * L), q(L * opts.bins * L), diff(L * opts.bins * L);
    for (const auto& j : jumps) {
        if (!std::isfinite(j.time)) continue;
        const auto a = j.pre.label;
        const auto bin = position_bin(model, j.pre, opts.bins);
        const auto law = jump_measure(model, j.pre);
        std::size_t atom = 0;
        for (LabelIndex b = 0; b < L; ++b) {
            if (b == a) continue;
            const double qb = law.atoms[atom++].mass;
            const std::size_t idx = (a * opts.bins + bin) * L + b;
            const double h = j.target == b ? 1.0 : 0.0;
            hit[idx].add(h);
            q[idx].add(qb);
            diff[idx].add(h - qb);
        }
    }
    for (LabelIndex a = 0; a < L; ++a)
        for (std::size_t bin = 0; bin < opts.bins; ++bin)
            for (LabelIndex b = 0; b < L; ++b) {
                const std::size_t idx = (a * opts.bins + bin) * L + b;
                if (b == a || hit[idx].n < static_cast<double>(opts.min_bin_count)) continue;
                LawStatistic row;
                row.statistic = source + ": target " + label_pair(model, a, b) + " bin " + std::to_string(bin + 1) +
                                "/" + std::to_string(opts.bins);
                row.empirical = hit[idx].mean();
                row.analytic = q[idx].mean();
                row.std_error = diff[idx].std_error();
                row.pass = std::abs(diff[idx].mean()) <= opts.z * row.std_error + 1e-12;
                out.push_back(row);
            }
}

inline LawStatistic two_sample(std::string name, const Moments& x, const Moments& y, double z) {
    LawStatistic row;
    row.statistic = std::move(name);
    row.empirical = x.mean();
    row.analytic = y.mean();
    row.std_error = std::hypot(x.std_error(), y.std_error());
    row.pass = std::abs(row.empirical - row.analytic) <= z * row.std_error + 1e-12;
    return row;
}

}  // namespace detail

/// Compares first-jump statistics of the chain-driven filter and of the
/// directly simulated process with the analytic laws and with each other.
inline std::vector<LawStatistic> pdp_law_check(const Model& model, const Distribution& mu,
                                               const LawCheckOptions& opts) {
    require_nontrivial(model);
    if (opts.n_sims < 2) throw Error(ErrorCode::InvalidArgument, "need at least two simulations");
    const auto chain = chain_first_jumps(model, mu, opts.n_sims, opts.horizon, opts.seed);
    const auto direct = pdp_first_jumps(model, mu, opts.n_sims, opts.horizon, opts.seed + 0x5bd1e995ULL);

    std::vector<LawStatistic> out;
    detail::survival_rows(model, mu, chain, opts, "chain", out);
    detail::survival_rows(model, mu, direct, opts, "pdp", out);
    detail::target_rows(model, chain, opts, "chain", out);
    detail::target_rows(model, direct, opts, "pdp", out);

    for (double frac : {0.1, 0.25, 0.5, 0.75}) {
        const double t = frac * opts.horizon;
        detail::Moments x, y;
        for (const auto& j : chain) x.add(j.time > t ? 1.0 : 0.0);
        for (const auto& j : direct) y.add(j.time > t ? 1.0 : 0.0);
        out.push_back(detail::two_sample("chain vs pdp: P(T1 > " + std::to_string(t) + ")", x, y, opts.z));
    }
    const std::size_t L = model.num_labels();
    for (LabelIndex a = 0; a < L; ++a)
        for (LabelIndex b = 0; b < L; ++b) {
            if (a == b) continue;
            detail::Moments x, y;
            for (const auto& j : chain)
                if (std::isfinite(j.time) && j.pre.label == a) x.add(j.target == b ? 1.0 : 0.0);
            for (const auto& j : direct)
                if (std::isfinite(j.time) && j.pre.label == a) y.add(j.target == b ? 1.0 : 0.0);
            if (x.n < static_cast<double>(opts.min_bin_count) || y.n < static_cast<double>(opts.min_bin_count)) continue;
            out.push_back(detail::two_sample("chain vs pdp: target " + detail::label_pair(model, a, b), x, y, opts.z));
        }
    return out;
}

/// |Π^μ_t - Π^ρ_t|_1 for two filters driven by the same observation path.
inline std::vector<double> filter_distance_curve(const Model& model, const PiecewisePath& obs, const Distribution& mu,
                                                 const Distribution& rho, const std::vector<double>& times) {
    const auto a = run_filter(model, obs, mu);
    const auto b = run_filter(model, obs, rho);
    std::vector<double> out;
    out.reserve(times.size());
    for (double t : times) out.push_back((a.at(model, t).weights - b.at(model, t).weights).lpNorm<1>());
    return out;
}

}  // namespace pdfilter
