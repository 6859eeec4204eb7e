#pragma once

// Dense matrix types and the matrix-equation solvers everything else is
// built on. Dimensions are small (n <= 8), so clarity wins over blocking.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <initializer_list>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"

namespace gyrolab {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

/// Largest dimension accepted by the vectorized (Kronecker) solver.
inline constexpr Eigen::Index max_general_dimension = 8;

/// Relative eigenvalue floor: an SPD operand needs lambda_min > pd_tolerance * lambda_max.
inline constexpr double pd_tolerance = 1e-10;

namespace detail {

inline Mat from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const auto n = static_cast<Eigen::Index>(rows.size());
    Mat m(n, n);
    Eigen::Index i = 0;
    for (const auto& row : rows) {
        if (static_cast<Eigen::Index>(row.size()) != n)
            throw Error(ErrorCode::DimensionMismatch, "matrix literal is not square");
        Eigen::Index j = 0;
        for (double v : row) m(i, j++) = v;
        ++i;
    }
    return m;
}

inline void require_square_finite(const Mat& m, const char* what) {
    if (m.rows() != m.cols())
        throw Error(ErrorCode::DimensionMismatch, std::string(what) + " must be square");
    if (!m.allFinite())
        throw Error(ErrorCode::InvalidArgument, std::string(what) + " has non-finite entries");
}

inline double symmetry_scale(const Mat& m) {
    return std::max(1.0, m.cwiseAbs().maxCoeff());
}

} // namespace detail

/// General n x n real matrix.
class SquareMatrix {
public:
    SquareMatrix() = default;
    explicit SquareMatrix(Mat m) : m_(std::move(m)) {
        detail::require_square_finite(m_, "SquareMatrix");
    }
    SquareMatrix(std::initializer_list<std::initializer_list<double>> rows)
        : SquareMatrix(detail::from_rows(rows)) {}

    static SquareMatrix identity(Eigen::Index n) { return SquareMatrix(Mat::Identity(n, n)); }
    static SquareMatrix zero(Eigen::Index n) { return SquareMatrix(Mat::Zero(n, n)); }

    Eigen::Index n() const noexcept { return m_.rows(); }
    const Mat& mat() const noexcept { return m_; }
    double operator()(Eigen::Index i, Eigen::Index j) const { return m_(i, j); }

    friend bool operator==(const SquareMatrix& a, const SquareMatrix& b) {
        return a.m_.rows() == b.m_.rows() && a.m_ == b.m_;
    }

private:
    Mat m_;
};

/// Symmetric matrix. Construction checks symmetry to round-off and then
/// stores the exactly symmetrized value.
class SymMatrix {
public:
    SymMatrix() = default;
    explicit SymMatrix(const Mat& m) {
        detail::require_square_finite(m, "SymMatrix");
        if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12 * detail::symmetry_scale(m))
            throw Error(ErrorCode::InvalidArgument, "SymMatrix input is not symmetric");
        m_ = 0.5 * (m + m.transpose());
    }
    SymMatrix(std::initializer_list<std::initializer_list<double>> rows)
        : SymMatrix(detail::from_rows(rows)) {}

    /// Symmetric part of an arbitrary square matrix, no symmetry check.
    static SymMatrix symmetric_part(const Mat& m) {
        detail::require_square_finite(m, "SymMatrix");
        SymMatrix s;
        s.m_ = 0.5 * (m + m.transpose());
        return s;
    }
    static SymMatrix diagonal(const std::vector<double>& d) {
        Vec v = Eigen::Map<const Vec>(d.data(), static_cast<Eigen::Index>(d.size()));
        return SymMatrix(Mat(v.asDiagonal()));
    }
    static SymMatrix identity(Eigen::Index n) { return SymMatrix(Mat::Identity(n, n)); }

    Eigen::Index n() const noexcept { return m_.rows(); }
    const Mat& mat() const noexcept { return m_; }
    double operator()(Eigen::Index i, Eigen::Index j) const { return m_(i, j); }
    SquareMatrix square() const { return SquareMatrix(m_); }

    bool is_diagonal() const {
        return (m_ - Mat(m_.diagonal().asDiagonal())).cwiseAbs().maxCoeff() == 0.0;
    }

    friend bool operator==(const SymMatrix& a, const SymMatrix& b) {
        return a.m_.rows() == b.m_.rows() && a.m_ == b.m_;
    }

private:
    Mat m_;
};

/// Skew-symmetric matrix with an exactly zero diagonal.
class SkewMatrix {
public:
    SkewMatrix() = default;
    explicit SkewMatrix(const Mat& m) {
        detail::require_square_finite(m, "SkewMatrix");
        if ((m + m.transpose()).cwiseAbs().maxCoeff() > 1e-12 * detail::symmetry_scale(m))
            throw Error(ErrorCode::InvalidArgument, "SkewMatrix input is not skew-symmetric");
        m_ = 0.5 * (m - m.transpose());
    }
    SkewMatrix(std::initializer_list<std::initializer_list<double>> rows)
        : SkewMatrix(detail::from_rows(rows)) {}

    static SkewMatrix skew_part(const Mat& m) {
        detail::require_square_finite(m, "SkewMatrix");
        SkewMatrix s;
        s.m_ = 0.5 * (m - m.transpose());
        return s;
    }
    static SkewMatrix zero(Eigen::Index n) { return skew_part(Mat::Zero(n, n)); }

    Eigen::Index n() const noexcept { return m_.rows(); }
    const Mat& mat() const noexcept { return m_; }
    double operator()(Eigen::Index i, Eigen::Index j) const { return m_(i, j); }
    SquareMatrix square() const { return SquareMatrix(m_); }

    friend SkewMatrix operator*(double a, const SkewMatrix& s) { return skew_part(a * s.m_); }
    friend SkewMatrix operator+(const SkewMatrix& a, const SkewMatrix& b) {
        return skew_part(a.m_ + b.m_);
    }

    friend bool operator==(const SkewMatrix& a, const SkewMatrix& b) {
        return a.m_.rows() == b.m_.rows() && a.m_ == b.m_;
    }

private:
    Mat m_;
};

template <class T>
concept MatrixLike = requires(const T& t) {
    { t.mat() } -> std::convertible_to<const Mat&>;
};

inline const Mat& as_mat(const Mat& m) { return m; }
template <MatrixLike T>
const Mat& as_mat(const T& t) { return t.mat(); }

template <class A>
double frobenius(const A& a) { return as_mat(a).norm(); }

inline void require_same_dim(Eigen::Index a, Eigen::Index b, const char* what) {
    if (a != b)
        throw Error(ErrorCode::DimensionMismatch,
                    std::string(what) + ": " + std::to_string(a) + " vs " + std::to_string(b));
}

/// Eigen-decomposition of a symmetric operand with the positive-definiteness guard applied.
inline Eigen::SelfAdjointEigenSolver<Mat> spd_eigen(const SymMatrix& a, const char* what = "matrix") {
    if (a.n() == 0) throw Error(ErrorCode::DimensionMismatch, std::string(what) + " is empty");
    Eigen::SelfAdjointEigenSolver<Mat> es(a.mat());
    if (es.info() != Eigen::Success)
        throw Error(ErrorCode::NotPositiveDefinite, std::string(what) + ": eigensolver failed");
    const Vec& lam = es.eigenvalues();
    const double lmax = lam.cwiseAbs().maxCoeff();
    if (!(lam(0) > pd_tolerance * lmax))
        throw Error(ErrorCode::NotPositiveDefinite,
                    std::string(what) + " has smallest eigenvalue " + format_number(lam(0)));
    return es;
}

inline bool is_positive_definite(const SymMatrix& a) {
    try {
        spd_eigen(a);
        return true;
    } catch (const Error&) {
        return false;
    }
}

inline SymMatrix inverse(const SymMatrix& a) {
    const auto es = spd_eigen(a, "inverse operand");
    const Mat& v = es.eigenvectors();
    return SymMatrix::symmetric_part(v * es.eigenvalues().cwiseInverse().asDiagonal() * v.transpose());
}

namespace detail {

// Y = V [ (V' Q V)_ij / (l_i + l_j) ] V'  for A = V diag(l) V'.
inline Mat lyapunov_eig(const SymMatrix& a, const Mat& q) {
    require_same_dim(a.n(), q.rows(), "solve_lyapunov_sym");
    const auto es = spd_eigen(a, "Lyapunov operand A");
    const Mat& v = es.eigenvectors();
    const Vec& lam = es.eigenvalues();
    Mat qt = v.transpose() * q * v;
    for (Eigen::Index i = 0; i < qt.rows(); ++i)
        for (Eigen::Index j = 0; j < qt.cols(); ++j) qt(i, j) /= lam(i) + lam(j);
    return v * qt * v.transpose();
}

} // namespace detail

/// Solves A Y + Y A = Q for symmetric positive-definite A. Equivalent to
/// Y = integral over [0, inf) of exp(-tA) Q exp(-tA) dt.
inline SymMatrix solve_lyapunov_sym(const SymMatrix& a, const SymMatrix& q) {
    return SymMatrix::symmetric_part(detail::lyapunov_eig(a, q.mat()));
}

/// Skew right-hand side: the solution is skew as well.
inline SkewMatrix solve_lyapunov_sym(const SymMatrix& a, const SkewMatrix& q) {
    return SkewMatrix::skew_part(detail::lyapunov_eig(a, q.mat()));
}

/// Solves A Y + Y A' = Q for A with spectrum in the open right half-plane
/// (so -A is a stable drift), by vectorization: (I kron A + A kron I) vec Y = vec Q.
inline SymMatrix solve_lyapunov_general(const SquareMatrix& a, const SymMatrix& q) {
    const Eigen::Index n = a.n();
    require_same_dim(n, q.n(), "solve_lyapunov_general");
    if (n == 0) throw Error(ErrorCode::DimensionMismatch, "solve_lyapunov_general: empty operand");
    if (n > max_general_dimension)
        throw Error(ErrorCode::DimensionMismatch,
                    "solve_lyapunov_general supports n <= " + std::to_string(max_general_dimension));

    Eigen::EigenSolver<Mat> es(a.mat(), false);
    const auto lam = es.eigenvalues();
    const double scale = lam.cwiseAbs().maxCoeff();
    for (Eigen::Index i = 0; i < n; ++i)
        if (!(lam(i).real() > pd_tolerance * scale))
            throw Error(ErrorCode::NotStable, "eigenvalue with real part " +
                                                  format_number(lam(i).real()) + " is not positive");

    const Mat id = Mat::Identity(n, n);
    Mat big = Mat::Zero(n * n, n * n);
    // Column-major vec: vec(AY) = (I kron A) vec Y, vec(Y A') = (A kron I) vec Y.
    for (Eigen::Index bi = 0; bi < n; ++bi)
        for (Eigen::Index bj = 0; bj < n; ++bj) {
            big.block(bi * n, bj * n, n, n) += id(bi, bj) * a.mat();
            big.block(bi * n, bj * n, n, n) += a(bi, bj) * id;
        }
    const Vec rhs = Eigen::Map<const Vec>(q.mat().data(), n * n);
    const Vec y = big.fullPivLu().solve(rhs);
    return SymMatrix::symmetric_part(Eigen::Map<const Mat>(y.data(), n, n));
}

/// AB - BA.
template <class A, class B>
SquareMatrix commutator(const A& a, const B& b) {
    const Mat& ma = as_mat(a);
    const Mat& mb = as_mat(b);
    require_same_dim(ma.rows(), mb.rows(), "commutator");
    return SquareMatrix(ma * mb - mb * ma);
}

/// exp(tA) by scaling and squaring with a degree-20 Taylor core.
inline SquareMatrix matrix_exponential(const SquareMatrix& a, double t) {
    const Eigen::Index n = a.n();
    Mat x = t * a.mat();
    const double norm1 = x.cwiseAbs().colwise().sum().maxCoeff();
    int squarings = 0;
    if (norm1 > 0.5) squarings = static_cast<int>(std::ceil(std::log2(norm1 / 0.5)));
    x /= std::ldexp(1.0, squarings);

    Mat result = Mat::Identity(n, n);
    Mat term = Mat::Identity(n, n);
    for (int k = 1; k <= 20; ++k) {
        term = term * x / static_cast<double>(k);
        result += term;
    }
    for (int s = 0; s < squarings; ++s) result = result * result;
    return SquareMatrix(result);
}

} // namespace gyrolab
