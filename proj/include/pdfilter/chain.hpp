#pragma once

#include "pdfilter/core.hpp"
#include "pdfilter/random.hpp"

#include <algorithm>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace pdfilter {

inline constexpr double kRowSumTol = 1e-12;
inline constexpr double kDistributionTol = 1e-10;

/// Generator (Q-matrix) of a finite continuous-time Markov chain.
class RateMatrix {
public:
    /// Throws NotSquare, NegativeOffDiagonal or RowSumNonzero.
    explicit RateMatrix(Matrix m) : m_(std::move(m)) {
        if (m_.rows() != m_.cols() || m_.rows() == 0)
            throw Error(ErrorCode::NotSquare, "generator must be a nonempty square matrix");
        const auto n = m_.rows();
        for (Eigen::Index i = 0; i < n; ++i) {
            for (Eigen::Index j = 0; j < n; ++j) {
                if (i != j && m_(i, j) < 0.0)
                    throw Error(ErrorCode::NegativeOffDiagonal,
                                "entry (" + std::to_string(i + 1) + "," + std::to_string(j + 1) + ") is negative");
                if (!std::isfinite(m_(i, j)))
                    throw Error(ErrorCode::InvalidArgument, "generator entries must be finite");
            }
            if (std::abs(m_.row(i).sum()) > kRowSumTol)
                throw Error(ErrorCode::RowSumNonzero, "row " + std::to_string(i + 1) + " does not sum to 0");
        }
    }

    std::size_t size() const noexcept { return static_cast<std::size_t>(m_.rows()); }
    const Matrix& matrix() const noexcept { return m_; }
    double operator()(StateIndex i, StateIndex j) const {
        return m_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }
    double exit_rate(StateIndex i) const { return -(*this)(i, i); }
    double max_exit_rate() const { return (-m_.diagonal()).maxCoeff(); }

private:
    Matrix m_;
};

inline RateMatrix validate_generator(const Matrix& m) { return RateMatrix(m); }

/// Surjective labelling h of the states, with its level sets.
class ObservationModel {
public:
    ObservationModel(std::vector<std::string> labels, std::vector<LabelIndex> assignment)
        : labels_(std::move(labels)), assignment_(std::move(assignment)), level_sets_(labels_.size()) {
        if (labels_.empty()) throw Error(ErrorCode::InvalidObservation, "label set is empty");
        for (StateIndex i = 0; i < assignment_.size(); ++i) {
            if (assignment_[i] >= labels_.size())
                throw Error(ErrorCode::InvalidObservation, "state " + std::to_string(i + 1) + " has no valid label");
            level_sets_[assignment_[i]].push_back(i);
        }
        for (LabelIndex a = 0; a < labels_.size(); ++a)
            if (level_sets_[a].empty())
                throw Error(ErrorCode::InvalidObservation, "label '" + labels_[a] + "' is not attained (h not surjective)");
    }

    std::size_t num_labels() const noexcept { return labels_.size(); }
    std::size_t num_states() const noexcept { return assignment_.size(); }
    LabelIndex operator()(StateIndex i) const { return assignment_.at(i); }
    const IndexSet& level_set(LabelIndex a) const { return level_sets_.at(a); }
    const std::vector<std::string>& labels() const noexcept { return labels_; }
    const std::vector<LabelIndex>& assignment() const noexcept { return assignment_; }
    bool injective() const noexcept { return labels_.size() == assignment_.size(); }

    std::optional<LabelIndex> find_label(const std::string& name) const {
        auto it = std::find(labels_.begin(), labels_.end(), name);
        if (it == labels_.end()) return std::nullopt;
        return static_cast<LabelIndex>(it - labels_.begin());
    }

private:
    std::vector<std::string> labels_;
    std::vector<LabelIndex> assignment_;
    std::vector<IndexSet> level_sets_;
};

/// A generator together with its observation function; caches the face
/// sub-generators Λ restricted to each level set.
class Model {
public:
    Model(RateMatrix generator, ObservationModel observation, std::vector<std::string> state_names = {})
        : generator_(std::move(generator)), observation_(std::move(observation)), names_(std::move(state_names)) {
        if (observation_.num_states() != generator_.size())
            throw Error(ErrorCode::InvalidObservation, "observation map does not cover every state");
        if (names_.empty())
            for (std::size_t i = 0; i < generator_.size(); ++i) names_.push_back(std::to_string(i + 1));
        if (names_.size() != generator_.size())
            throw Error(ErrorCode::InvalidArgument, "state name count does not match generator size");
        for (LabelIndex a = 0; a < observation_.num_labels(); ++a) {
            const auto& face = observation_.level_set(a);
            face_generators_.push_back(submatrix(generator_.matrix(), face, face));
            indicators_.push_back(indicator_row(generator_.size(), face).transpose());
        }
    }

    std::size_t num_states() const noexcept { return generator_.size(); }
    std::size_t num_labels() const noexcept { return observation_.num_labels(); }
    const RateMatrix& generator() const noexcept { return generator_; }
    const Matrix& lambda() const noexcept { return generator_.matrix(); }
    const ObservationModel& observation() const noexcept { return observation_; }
    const std::vector<std::string>& state_names() const noexcept { return names_; }
    const IndexSet& face(LabelIndex a) const { return observation_.level_set(a); }
    const Matrix& face_generator(LabelIndex a) const { return face_generators_.at(a); }
    /// Column vector 1_{h^{-1}(a)}.
    const Vector& face_indicator(LabelIndex a) const { return indicators_.at(a); }
    LabelIndex label_of(StateIndex i) const { return observation_(i); }

    std::optional<StateIndex> find_state(const std::string& name) const {
        auto it = std::find(names_.begin(), names_.end(), name);
        if (it == names_.end()) return std::nullopt;
        return static_cast<StateIndex>(it - names_.begin());
    }

private:
    RateMatrix generator_;
    ObservationModel observation_;
    std::vector<std::string> names_;
    std::vector<Matrix> face_generators_;
    std::vector<Vector> indicators_;
};

/// Probability vector over the states (row-vector convention).
class Distribution {
public:
    explicit Distribution(RowVector weights) : w_(std::move(weights)) {
        if (w_.size() == 0) throw Error(ErrorCode::InvalidDistribution, "empty distribution");
        if ((w_.array() < 0.0).any()) throw Error(ErrorCode::InvalidDistribution, "negative weight");
        if (std::abs(w_.sum() - 1.0) > kDistributionTol)
            throw Error(ErrorCode::InvalidDistribution, "weights do not sum to 1");
    }

    static Distribution dirac(std::size_t n, StateIndex i) {
        RowVector w = RowVector::Zero(static_cast<Eigen::Index>(n));
        w(static_cast<Eigen::Index>(i)) = 1.0;
        return Distribution(w);
    }
    static Distribution uniform_on(std::size_t n, const IndexSet& set) {
        RowVector w = indicator_row(n, set);
        return Distribution(w / static_cast<double>(set.size()));
    }

    const RowVector& weights() const noexcept { return w_; }
    std::size_t size() const noexcept { return static_cast<std::size_t>(w_.size()); }
    double operator()(StateIndex i) const { return w_(static_cast<Eigen::Index>(i)); }
    /// Pairing μf.
    double pair(const Vector& f) const { return w_.dot(f.transpose()); }

private:
    RowVector w_;
};

/// Cadlag integer-valued path on [0, horizon].
struct PiecewisePath {
    struct Jump {
        double time;
        std::size_t value;
    };

    std::size_t initial_value = 0;
    std::vector<Jump> jumps;
    double horizon = 0.0;

    std::size_t value_at(double t) const {
        auto it = std::upper_bound(jumps.begin(), jumps.end(), t,
                                   [](double x, const Jump& j) { return x < j.time; });
        return it == jumps.begin() ? initial_value : std::prev(it)->value;
    }

    std::optional<double> first_jump_time() const {
        if (jumps.empty()) return std::nullopt;
        return jumps.front().time;
    }

    /// Strictly increasing jump times in [0, horizon) and distinct consecutive values.
    bool valid() const {
        if (!(horizon > 0.0)) return false;
        std::size_t prev = initial_value;
        double last = -1.0;
        for (const auto& j : jumps) {
            if (!(j.time > last) || j.time < 0.0 || !(j.time < horizon) || j.value == prev) return false;
            last = j.time;
            prev = j.value;
        }
        return true;
    }
};

inline Matrix transition_semigroup(const RateMatrix& generator, double t) {
    if (!(t >= 0.0)) throw Error(ErrorCode::InvalidArgument, "transition_semigroup requires t >= 0");
    return expm_metzler(generator.matrix(), t);
}

/// Exact jump-chain/holding-time simulation. A state with zero exit rate
/// holds forever, so the path is censored at the horizon.
inline PiecewisePath sample_chain(const RateMatrix& generator, const Distribution& initial, double horizon,
                                  RandomSource& rng) {
    if (!(horizon > 0.0)) throw Error(ErrorCode::InvalidArgument, "horizon must be positive");
    if (initial.size() != generator.size())
        throw Error(ErrorCode::InvalidDistribution, "initial distribution size mismatch");
    PiecewisePath path;
    path.horizon = horizon;
    std::size_t state = rng.categorical(initial.weights(), 1.0);
    path.initial_value = state;
    const std::size_t n = generator.size();
    std::vector<double> rates(n);
    double t = 0.0;
    while (true) {
        const double out = generator.exit_rate(state);
        if (out <= 0.0) break;
        t += rng.exponential(out);
        if (!(t < horizon)) break;
        for (std::size_t j = 0; j < n; ++j) rates[j] = (j == state) ? 0.0 : generator(state, j);
        state = rng.categorical(rates, out);
        path.jumps.push_back({t, state});
    }
    return path;
}

/// Image path h(X_t); only times where the label actually changes are kept.
inline PiecewisePath observe(const PiecewisePath& path, const ObservationModel& h) {
    PiecewisePath out;
    out.horizon = path.horizon;
    out.initial_value = h(path.initial_value);
    std::size_t current = out.initial_value;
    for (const auto& j : path.jumps) {
        const auto label = h(j.value);
        if (label != current) {
            out.jumps.push_back({j.time, label});
            current = label;
        }
    }
    return out;
}

inline Matrix sub_generator(const RateMatrix& generator, const IndexSet& subset) {
    if (subset.empty()) throw Error(ErrorCode::EmptySubset, "subset must be nonempty");
    for (auto i : subset)
        if (i >= generator.size()) throw Error(ErrorCode::InvalidArgument, "subset index out of range");
    return submatrix(generator.matrix(), subset, subset);
}

inline std::size_t position_in(const IndexSet& subset, StateIndex i) {
    auto it = std::find(subset.begin(), subset.end(), i);
    if (it == subset.end())
        throw Error(ErrorCode::StateNotInSubset, "state " + std::to_string(i + 1) + " is not in the subset");
    return static_cast<std::size_t>(it - subset.begin());
}

/// P_i(τ_A > t) = δ_i e^{tΛ_A} 1, the classical sub-generator formula.
inline double exit_survival_oracle(const RateMatrix& generator, const IndexSet& subset, StateIndex i, double t) {
    const auto p = position_in(subset, i);
    if (!(t >= 0.0)) throw Error(ErrorCode::InvalidArgument, "t must be nonnegative");
    const Matrix e = expm_metzler(sub_generator(generator, subset), t);
    return std::clamp(e.row(static_cast<Eigen::Index>(p)).sum(), 0.0, 1.0);
}

}  // namespace pdfilter
