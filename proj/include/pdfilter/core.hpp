#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace pdfilter {

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;  // measures
using Vector = Eigen::VectorXd;        // functions on states

using StateIndex = std::size_t;
using LabelIndex = std::size_t;
using IndexSet = std::vector<StateIndex>;

enum class ErrorCode {
    InvalidArgument,
    NotSquare,
    NegativeOffDiagonal,
    RowSumNonzero,
    InvalidObservation,
    InvalidDistribution,
    EmptySubset,
    StateNotInSubset,
    NegativeFaceEntry,
    FaceMassVanished,
    DegenerateJump,
    LabelEqualsSource,
    TrivialObservation,
    NoConvergence,
    MalformedFile,
};

inline const char* to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::NotSquare: return "NotSquare";
    case ErrorCode::NegativeOffDiagonal: return "NegativeOffDiagonal";
    case ErrorCode::RowSumNonzero: return "RowSumNonzero";
    case ErrorCode::InvalidObservation: return "InvalidObservation";
    case ErrorCode::InvalidDistribution: return "InvalidDistribution";
    case ErrorCode::EmptySubset: return "EmptySubset";
    case ErrorCode::StateNotInSubset: return "StateNotInSubset";
    case ErrorCode::NegativeFaceEntry: return "NegativeFaceEntry";
    case ErrorCode::FaceMassVanished: return "FaceMassVanished";
    case ErrorCode::DegenerateJump: return "DegenerateJump";
    case ErrorCode::LabelEqualsSource: return "LabelEqualsSource";
    case ErrorCode::TrivialObservation: return "TrivialObservation";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::MalformedFile: return "MalformedFile";
    }
    return "Unknown";
}

/// Every failure raised by the library carries a machine-readable code.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

inline RowVector indicator_row(std::size_t n, const IndexSet& set) {
    RowVector r = RowVector::Zero(static_cast<Eigen::Index>(n));
    for (auto i : set) r(static_cast<Eigen::Index>(i)) = 1.0;
    return r;
}

inline Matrix submatrix(const Matrix& m, const IndexSet& rows, const IndexSet& cols) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t p = 0; p < rows.size(); ++p)
        for (std::size_t q = 0; q < cols.size(); ++q)
            out(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(q)) =
                m(static_cast<Eigen::Index>(rows[p]), static_cast<Eigen::Index>(cols[q]));
    return out;
}

inline RowVector gather(const RowVector& v, const IndexSet& idx) {
    RowVector out(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t p = 0; p < idx.size(); ++p)
        out(static_cast<Eigen::Index>(p)) = v(static_cast<Eigen::Index>(idx[p]));
    return out;
}

inline RowVector scatter(const RowVector& compact, const IndexSet& idx, std::size_t n) {
    RowVector out = RowVector::Zero(static_cast<Eigen::Index>(n));
    for (std::size_t p = 0; p < idx.size(); ++p)
        out(static_cast<Eigen::Index>(idx[p])) = compact(static_cast<Eigen::Index>(p));
    return out;
}

/// Computes e^{tM} for a Metzler matrix M (nonnegative off-diagonal entries),
/// which covers generators and their principal sub-matrices.
///
/// Method: scaling and squaring of the shifted matrix B = tM + cI with
/// c = t * max_i(-m_ii), so that B is entrywise nonnegative. The Taylor
/// series of B / 2^s then has nonnegative terms only; it is truncated once
/// the next term is below 1e-16 of the partial sum (well under the 1e-12
/// target), multiplied by e^{-c / 2^s} and squared s times. Every
/// intermediate is nonnegative, so the result is exactly nonnegative and
/// stochastic matrices come out with rows summing to 1 up to rounding.
inline Matrix expm_metzler(const Matrix& m, double t) {
    if (m.rows() != m.cols()) throw Error(ErrorCode::NotSquare, "expm_metzler requires a square matrix");
    if (!(t >= 0.0)) throw Error(ErrorCode::InvalidArgument, "expm_metzler requires t >= 0");
    const auto n = m.rows();
    if (n == 0) return Matrix(0, 0);
    double shift = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) shift = std::max(shift, -m(i, i));
    shift *= t;
    Matrix b = t * m;
    b.diagonal().array() += shift;
    b = b.cwiseMax(0.0);  // clears rounding residue on the diagonal

    const double norm = b.cwiseAbs().rowwise().sum().maxCoeff();
    int squarings = 0;
    if (norm > 0.5) squarings = static_cast<int>(std::ceil(std::log2(norm / 0.5)));
    const double scale = std::ldexp(1.0, -squarings);
    b *= scale;

    Matrix result = Matrix::Identity(n, n);
    Matrix term = Matrix::Identity(n, n);
    for (int k = 1; k < 60; ++k) {
        term = (term * b) / static_cast<double>(k);
        result += term;
        if (term.maxCoeff() <= 1e-16 * result.maxCoeff()) break;
    }
    result *= std::exp(-shift * scale);
    for (int s = 0; s < squarings; ++s) result = result * result;
    return result;
}

inline double sup_norm(const RowVector& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

}  // namespace pdfilter
