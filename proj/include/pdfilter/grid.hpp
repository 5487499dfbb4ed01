#pragma once

#include "pdfilter/filter.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <unordered_map>
#include <utility>
#include <vector>

namespace pdfilter {

/// Sparse interpolation weights over grid points.
struct StencilEntry {
    std::size_t index;
    double weight;
};
using Stencil = std::vector<StencilEntry>;

/// Barycentric grid on every face Δ_a: all weight vectors on h^{-1}(a) with
/// common denominator m. Interpolation is simplicial on the Kuhn
/// (Freudenthal) triangulation of each face.
///
/// A face of dimension d = |h^{-1}(a)| - 1 is parameterized by the
/// cumulative coordinates c_k = m * Σ_{j≥k} w_j (k = 1..d), which satisfy
/// m ≥ c_1 ≥ ... ≥ c_d ≥ 0. Grid points are the integer c vectors.
class FaceGrid {
public:
    FaceGrid(const Model& model, std::size_t resolution) : n_(model.num_states()), m_(resolution) {
        if (resolution == 0) throw Error(ErrorCode::InvalidArgument, "grid resolution must be at least 1");
        faces_.resize(model.num_labels());
        for (LabelIndex a = 0; a < model.num_labels(); ++a) {
            auto& face = faces_[a];
            face.states = model.face(a);
            face.begin = points_.size();
            const std::size_t d = face.states.size() - 1;
            std::vector<long> c(d, 0);
            enumerate(a, c, 0, static_cast<long>(m_));
            face.end = points_.size();
        }
    }

    std::size_t size() const noexcept { return points_.size(); }
    std::size_t resolution() const noexcept { return m_; }
    std::size_t num_states() const noexcept { return n_; }
    std::size_t num_labels() const noexcept { return faces_.size(); }
    const FacePoint& point(std::size_t k) const { return points_.at(k); }
    const std::vector<FacePoint>& points() const noexcept { return points_; }
    std::size_t face_begin(LabelIndex a) const { return faces_.at(a).begin; }
    std::size_t face_end(LabelIndex a) const { return faces_.at(a).end; }

    /// Interpolation stencil of a face point: nonnegative weights summing to
    /// one over the corners of the containing Kuhn simplex.
    Stencil locate(const FacePoint& p) const {
        const auto& face = faces_.at(p.label);
        const std::size_t d = face.states.size() - 1;
        if (d == 0) return {{face.begin, 1.0}};
        const double m = static_cast<double>(m_);
        std::vector<double> c(d);
        double tail = 0.0;
        for (std::size_t k = d; k >= 1; --k) {
            tail += std::max(0.0, p.weights(static_cast<Eigen::Index>(face.states[k])));
            c[k - 1] = m * tail;
        }
        double total = tail + std::max(0.0, p.weights(static_cast<Eigen::Index>(face.states[0])));
        if (!(total > 0.0)) throw Error(ErrorCode::InvalidArgument, "face point has no mass");
        for (std::size_t k = 0; k < d; ++k) {
            c[k] = std::clamp(c[k] / total, 0.0, m);
            const double nearest = std::round(c[k]);
            if (std::abs(c[k] - nearest) < 1e-9) c[k] = nearest;  // grid points locate exactly
            if (k > 0) c[k] = std::min(c[k], c[k - 1]);
        }
        std::vector<long> base(d);
        std::vector<double> frac(d);
        for (std::size_t k = 0; k < d; ++k) {
            base[k] = static_cast<long>(std::floor(c[k]));
            if (base[k] >= static_cast<long>(m_)) base[k] = static_cast<long>(m_);
            frac[k] = c[k] - static_cast<double>(base[k]);
        }
        std::vector<std::size_t> order(d);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return frac[x] > frac[y]; });

        Stencil out;
        out.reserve(d + 1);
        std::vector<long> corner = base;
        auto push = [&](double w) {
            if (w <= 0.0) return;
            auto it = face.index.find(key(corner));
            if (it == face.index.end()) throw std::logic_error("FaceGrid::locate: corner outside the face");
            out.push_back({it->second, w});
        };
        push(1.0 - frac[order[0]]);
        for (std::size_t j = 0; j < d; ++j) {
            corner[order[j]] += 1;
            push(j + 1 < d ? frac[order[j]] - frac[order[j + 1]] : frac[order[j]]);
        }
        return out;
    }

    double interpolate(const std::vector<double>& values, const FacePoint& p) const {
        double acc = 0.0;
        for (const auto& e : locate(p)) acc += e.weight * values[e.index];
        return acc;
    }

private:
    struct Face {
        IndexSet states;
        std::size_t begin = 0, end = 0;
        std::unordered_map<std::uint64_t, std::size_t> index;
    };

    std::uint64_t key(const std::vector<long>& c) const {
        std::uint64_t k = 0;
        for (auto it = c.rbegin(); it != c.rend(); ++it) k = k * (m_ + 1) + static_cast<std::uint64_t>(*it);
        return k;
    }

    void enumerate(LabelIndex a, std::vector<long>& c, std::size_t pos, long upper) {
        auto& face = faces_[a];
        const std::size_t d = c.size();
        if (pos == d) {
            const double m = static_cast<double>(m_);
            RowVector w = RowVector::Zero(static_cast<Eigen::Index>(n_));
            long prev = static_cast<long>(m_);
            for (std::size_t k = 0; k <= d; ++k) {
                const long next = k < d ? c[k] : 0;
                w(static_cast<Eigen::Index>(face.states[k])) = static_cast<double>(prev - next) / m;
                prev = next;
            }
            face.index.emplace(key(c), points_.size());
            points_.push_back({a, std::move(w)});
            return;
        }
        for (long v = 0; v <= upper; ++v) {
            c[pos] = v;
            enumerate(a, c, pos + 1, v);
        }
    }

    std::size_t n_;
    std::size_t m_;
    std::vector<Face> faces_;
    std::vector<FacePoint> points_;
};

/// Scalar function on the effective simplex, stored on a FaceGrid.
struct ValueFunction {
    std::shared_ptr<const FaceGrid> grid;
    std::vector<double> values;

    double operator()(const FacePoint& p) const { return grid->interpolate(values, p); }
};

}  // namespace pdfilter
