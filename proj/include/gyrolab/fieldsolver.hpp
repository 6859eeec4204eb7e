#pragma once

// Nonlinear (grid-based) counterpart of the linear theory on a 2-D tensor
// grid: given a steady density rho, recover the confining potential from
//   div(rho grad U_c) = -div(rho k_B T grad log rho),
// build the source force f_S = -grad U_c - k_B T grad log rho, halve it for
// the optimal load, and evaluate the extracted power.

#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "gyrator.hpp"

namespace gyrolab {

/// Node-centred tensor grid including the boundary nodes. Node (i, j) sits at
/// (x_min + i h_x, y_min + j h_y) and is stored at index j * nx + i.
struct Grid2D {
    double x_min = -1.0, x_max = 1.0, y_min = -1.0, y_max = 1.0;
    int nx = 16, ny = 16;

    static constexpr int min_points = 16;

    void validate() const {
        if (nx < min_points || ny < min_points)
            throw Error(ErrorCode::RangeError, "grid needs at least 16 points per axis");
        if (!(x_max > x_min) || !(y_max > y_min)) throw Error(ErrorCode::RangeError, "grid bounds are empty");
    }
    double hx() const { return (x_max - x_min) / (nx - 1); }
    double hy() const { return (y_max - y_min) / (ny - 1); }
    double x(int i) const { return x_min + i * hx(); }
    double y(int j) const { return y_min + j * hy(); }
    std::size_t size() const { return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny); }
    std::size_t index(int i, int j) const { return static_cast<std::size_t>(j) * nx + static_cast<std::size_t>(i); }
    bool on_boundary(int i, int j) const { return i == 0 || j == 0 || i == nx - 1 || j == ny - 1; }

    /// Trapezoidal quadrature weight of node (i, j).
    double weight(int i, int j) const {
        const double wx = (i == 0 || i == nx - 1) ? 0.5 : 1.0;
        const double wy = (j == 0 || j == ny - 1) ? 0.5 : 1.0;
        return wx * wy * hx() * hy();
    }

    /// Box of +-margin marginal standard deviations of sigma around the origin.
    static Grid2D centered(const SymMatrix& sigma, double margin, int nx, int ny) {
        require_same_dim(sigma.n(), 2, "Grid2D::centered");
        const double sx = std::sqrt(sigma(0, 0)), sy = std::sqrt(sigma(1, 1));
        return {-margin * sx, margin * sx, -margin * sy, margin * sy, nx, ny};
    }

    friend bool operator==(const Grid2D&, const Grid2D&) = default;
};

struct GridDensity {
    Grid2D grid;
    std::vector<double> values;
    double renormalization = 1.0; ///< factor applied to reach unit mass
};

struct GridScalarField {
    Grid2D grid;
    std::vector<double> values;
    bool rho_gauge = false; ///< rho-weighted mean is zero
};

struct GridVectorField {
    Grid2D grid;
    std::vector<double> x;
    std::vector<double> y;

    static GridVectorField zeros(const Grid2D& g) { return {g, std::vector<double>(g.size()), std::vector<double>(g.size())}; }
};

inline double trapezoid(const Grid2D& g, const std::vector<double>& f) {
    double s = 0.0;
    for (int j = 0; j < g.ny; ++j)
        for (int i = 0; i < g.nx; ++i) s += g.weight(i, j) * f[g.index(i, j)];
    return s;
}

/// Checks positivity and unit trapezoidal mass (1e-8).
inline GridDensity make_density(const Grid2D& grid, std::vector<double> values) {
    grid.validate();
    if (values.size() != grid.size()) throw Error(ErrorCode::DimensionMismatch, "density size does not match grid");
    for (double v : values)
        if (!(v > 0.0) || !std::isfinite(v)) throw Error(ErrorCode::InvalidArgument, "density must be positive and finite");
    const double mass = trapezoid(grid, values);
    if (std::abs(mass - 1.0) > 1e-8) throw Error(ErrorCode::InvalidArgument, "density is not normalized");
    return {grid, std::move(values), 1.0};
}

namespace detail {

inline void require_same_grid(const Grid2D& a, const Grid2D& b) {
    if (!(a == b)) throw Error(ErrorCode::DimensionMismatch, "fields live on different grids");
}

// Central differences inside, second-order one-sided at the boundary.
inline void gradient(const Grid2D& g, const std::vector<double>& f, std::vector<double>& gx, std::vector<double>& gy) {
    gx.assign(g.size(), 0.0);
    gy.assign(g.size(), 0.0);
    const double hx = g.hx(), hy = g.hy();
    for (int j = 0; j < g.ny; ++j)
        for (int i = 0; i < g.nx; ++i) {
            const auto at = [&](int ii, int jj) { return f[g.index(ii, jj)]; };
            double dx, dy;
            if (i == 0) dx = (-3.0 * at(0, j) + 4.0 * at(1, j) - at(2, j)) / (2.0 * hx);
            else if (i == g.nx - 1) dx = (3.0 * at(i, j) - 4.0 * at(i - 1, j) + at(i - 2, j)) / (2.0 * hx);
            else dx = (at(i + 1, j) - at(i - 1, j)) / (2.0 * hx);
            if (j == 0) dy = (-3.0 * at(i, 0) + 4.0 * at(i, 1) - at(i, 2)) / (2.0 * hy);
            else if (j == g.ny - 1) dy = (3.0 * at(i, j) - 4.0 * at(i, j - 1) + at(i, j - 2)) / (2.0 * hy);
            else dy = (at(i, j + 1) - at(i, j - 1)) / (2.0 * hy);
            gx[g.index(i, j)] = dx;
            gy[g.index(i, j)] = dy;
        }
}

inline std::vector<double> log_of(const std::vector<double>& v) {
    std::vector<double> out(v.size());
    for (std::size_t k = 0; k < v.size(); ++k) out[k] = std::log(v[k]);
    return out;
}

// exp of the mean log-density across the face; for a Gaussian this is rho at the
// face midpoint times a constant per axis, which keeps U_c errors uniform.
inline double geometric_mean(double a, double b) { return std::sqrt(a * b); }

} // namespace detail

/// Evaluates N(0, sigma) on the grid and renormalizes it to unit mass. Requires a
/// margin of at least 5 marginal standard deviations per axis and at most 1e-10
/// of the mass on boundary nodes.
inline GridDensity gaussian_density(const Grid2D& grid, const SymMatrix& sigma) {
    grid.validate();
    require_same_dim(sigma.n(), 2, "gaussian_density");
    const SymMatrix s = inverse(sigma);
    const double sx = std::sqrt(sigma(0, 0)), sy = std::sqrt(sigma(1, 1));
    if (-grid.x_min < 5.0 * sx || grid.x_max < 5.0 * sx || -grid.y_min < 5.0 * sy || grid.y_max < 5.0 * sy)
        throw Error(ErrorCode::DomainTooSmall, "grid must extend 5 standard deviations from the origin on each axis");

    const double norm = 1.0 / (2.0 * M_PI * std::sqrt(sigma.mat().determinant()));
    std::vector<double> rho(grid.size());
    for (int j = 0; j < grid.ny; ++j)
        for (int i = 0; i < grid.nx; ++i) {
            const double x = grid.x(i), y = grid.y(j);
            const double q = s(0, 0) * x * x + 2.0 * s(0, 1) * x * y + s(1, 1) * y * y;
            rho[grid.index(i, j)] = norm * std::exp(-0.5 * q);
        }
    double boundary = 0.0;
    for (int j = 0; j < grid.ny; ++j)
        for (int i = 0; i < grid.nx; ++i)
            if (grid.on_boundary(i, j)) boundary += grid.weight(i, j) * rho[grid.index(i, j)];
    if (boundary > 1e-10)
        throw Error(ErrorCode::DomainTooSmall, "boundary nodes carry mass " + format_number(boundary));
    for (double v : rho)
        if (!(v > 0.0)) throw Error(ErrorCode::DomainTooSmall, "density underflows inside the grid");

    const double factor = 1.0 / trapezoid(grid, rho);
    for (double& v : rho) v *= factor;
    return {grid, std::move(rho), factor};
}

inline double rho_mean(const GridDensity& rho, const std::vector<double>& f) {
    double s = 0.0;
    for (int j = 0; j < rho.grid.ny; ++j)
        for (int i = 0; i < rho.grid.nx; ++i) {
            const auto k = rho.grid.index(i, j);
            s += rho.grid.weight(i, j) * rho.values[k] * f[k];
        }
    return s;
}

/// Shifts f so that its rho-weighted mean vanishes.
inline GridScalarField apply_rho_gauge(const GridDensity& rho, GridScalarField f) {
    detail::require_same_grid(rho.grid, f.grid);
    const double m = rho_mean(rho, f.values);
    for (double& v : f.values) v -= m;
    f.rho_gauge = true;
    return f;
}

/// Sqrt of the rho-weighted mean square of f.
inline double rho_norm(const GridDensity& rho, const std::vector<double>& f) {
    double s = 0.0;
    for (int j = 0; j < rho.grid.ny; ++j)
        for (int i = 0; i < rho.grid.nx; ++i) {
            const auto k = rho.grid.index(i, j);
            s += rho.grid.weight(i, j) * rho.values[k] * f[k] * f[k];
        }
    return std::sqrt(s);
}

/// 1/2 x' K x sampled on the grid, gauge-fixed against rho.
inline GridScalarField quadratic_potential(const GridDensity& rho, const SymMatrix& k) {
    require_same_dim(k.n(), 2, "quadratic_potential");
    const Grid2D& g = rho.grid;
    GridScalarField u{g, std::vector<double>(g.size()), false};
    for (int j = 0; j < g.ny; ++j)
        for (int i = 0; i < g.nx; ++i) {
            const double x = g.x(i), y = g.y(j);
            u.values[g.index(i, j)] = 0.5 * (k(0, 0) * x * x + 2.0 * k(0, 1) * x * y + k(1, 1) * y * y);
        }
    return apply_rho_gauge(rho, std::move(u));
}

struct ConfiningPotential {
    GridScalarField potential;
    double relative_residual = 0.0; ///< ||L U - b|| / ||b|| of the assembled system
};

/// Finite-volume solve of div(rho grad U) = -div(rho k_B T grad log rho) with zero
/// normal flux on the box and geometric-mean face weights. The operator is pinned at
/// the density peak, solved by sparse LDL', then shifted to the rho-weighted gauge.
inline ConfiningPotential solve_confining_potential(const GridDensity& rho, const SymMatrix& temperature,
                                                    const ModelParams& params) {
    const Grid2D& g = rho.grid;
    g.validate();
    params.validate();
    require_same_dim(temperature.n(), 2, "solve_confining_potential");
    if (rho.values.size() != g.size()) throw Error(ErrorCode::DimensionMismatch, "density size does not match grid");

    const auto n = static_cast<Eigen::Index>(g.size());
    const std::vector<double> logr = detail::log_of(rho.values);
    const double ax = g.hy() / g.hx(), ay = g.hx() / g.hy();
    const double kx = params.k_B * temperature(0, 0), ky = params.k_B * temperature(1, 1);

    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(static_cast<std::size_t>(5 * n));
    Vec rhs = Vec::Zero(n);
    auto add_face = [&](std::size_t p, std::size_t q, double geom, double kt) {
        const double a = geom * detail::geometric_mean(rho.values[p], rho.values[q]);
        const auto ip = static_cast<Eigen::Index>(p), iq = static_cast<Eigen::Index>(q);
        trips.emplace_back(ip, ip, a);
        trips.emplace_back(iq, iq, a);
        trips.emplace_back(ip, iq, -a);
        trips.emplace_back(iq, ip, -a);
        // Flux of rho k_B T grad log rho through the face, moved to the right-hand side.
        const double flux = a * kt * (logr[q] - logr[p]);
        rhs(ip) += flux;
        rhs(iq) -= flux;
    };
    for (int j = 0; j < g.ny; ++j)
        for (int i = 0; i < g.nx; ++i) {
            if (i + 1 < g.nx) add_face(g.index(i, j), g.index(i + 1, j), ax, kx);
            if (j + 1 < g.ny) add_face(g.index(i, j), g.index(i, j + 1), ay, ky);
        }
    Eigen::SparseMatrix<double> lap(n, n);
    lap.setFromTriplets(trips.begin(), trips.end());

    // Pin the node of largest density; the remaining operator is SPD.
    Eigen::Index pin = 0;
    for (Eigen::Index k = 1; k < n; ++k)
        if (rho.values[static_cast<std::size_t>(k)] > rho.values[static_cast<std::size_t>(pin)]) pin = k;
    std::vector<Eigen::Triplet<double>> reduced;
    reduced.reserve(trips.size());
    for (int outer = 0; outer < lap.outerSize(); ++outer)
        for (Eigen::SparseMatrix<double>::InnerIterator it(lap, outer); it; ++it) {
            if (it.row() == pin || it.col() == pin) continue;
            reduced.emplace_back(it.row() - (it.row() > pin), it.col() - (it.col() > pin), it.value());
        }
    Eigen::SparseMatrix<double> a(n - 1, n - 1);
    a.setFromTriplets(reduced.begin(), reduced.end());
    Vec b(n - 1);
    for (Eigen::Index k = 0, r = 0; k < n; ++k)
        if (k != pin) b(r++) = rhs(k);

    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(a);
    if (ldlt.info() != Eigen::Success || (ldlt.vectorD().array() <= 0.0).any())
        throw Error(ErrorCode::SolverSingular, "gauge-fixed potential operator is not positive-definite");
    const Vec sol = ldlt.solve(b);
    if (ldlt.info() != Eigen::Success || !sol.allFinite())
        throw Error(ErrorCode::SolverSingular, "potential solve failed");

    Vec u(n);
    for (Eigen::Index k = 0, r = 0; k < n; ++k) u(k) = (k == pin) ? 0.0 : sol(r++);
    const double rnorm = rhs.norm();
    const double res = (lap * u - rhs).norm() / (rnorm > 0.0 ? rnorm : 1.0);

    GridScalarField field{g, std::vector<double>(u.data(), u.data() + n), false};
    return {apply_rho_gauge(rho, std::move(field)), res};
}

/// f_S = -grad U_c - k_B T grad log rho, nodewise.
inline GridVectorField source_force_field(const GridDensity& rho, const GridScalarField& potential,
                                          const SymMatrix& temperature, const ModelParams& params) {
    detail::require_same_grid(rho.grid, potential.grid);
    require_same_dim(temperature.n(), 2, "source_force_field");
    const Grid2D& g = rho.grid;
    std::vector<double> ux, uy, lx, ly;
    detail::gradient(g, potential.values, ux, uy);
    detail::gradient(g, detail::log_of(rho.values), lx, ly);
    GridVectorField f = GridVectorField::zeros(g);
    const double kx = params.k_B * temperature(0, 0), ky = params.k_B * temperature(1, 1);
    for (std::size_t k = 0; k < g.size(); ++k) {
        f.x[k] = -ux[k] - kx * lx[k];
        f.y[k] = -uy[k] - ky * ly[k];
    }
    return f;
}

inline GridVectorField scaled(const GridVectorField& f, double a) {
    GridVectorField out = f;
    for (auto& v : out.x) v *= a;
    for (auto& v : out.y) v *= a;
    return out;
}

/// f_L* = f_S / 2.
inline GridVectorField optimal_load_field(const GridVectorField& source) { return scaled(source, 0.5); }

/// Integral of f_L . (f_S - f_L) rho / gamma.
inline double power_quadrature(const GridVectorField& load, const GridVectorField& source, const GridDensity& rho,
                               const ModelParams& params) {
    detail::require_same_grid(load.grid, source.grid);
    detail::require_same_grid(load.grid, rho.grid);
    const Grid2D& g = rho.grid;
    double s = 0.0;
    for (int j = 0; j < g.ny; ++j)
        for (int i = 0; i < g.nx; ++i) {
            const auto k = g.index(i, j);
            const double integrand = load.x[k] * (source.x[k] - load.x[k]) + load.y[k] * (source.y[k] - load.y[k]);
            s += g.weight(i, j) * rho.values[k] * integrand;
        }
    return s / params.gamma;
}

/// Heat-rate form of the power for mean velocity v:
///   -gamma integral |v|^2 rho - k_B integral v' T grad log rho rho.
inline double power_heat_decomposition(const GridVectorField& velocity, const GridDensity& rho,
                                       const SymMatrix& temperature, const ModelParams& params) {
    detail::require_same_grid(velocity.grid, rho.grid);
    const Grid2D& g = rho.grid;
    std::vector<double> lx, ly;
    detail::gradient(g, detail::log_of(rho.values), lx, ly);
    const double tx = temperature(0, 0), ty = temperature(1, 1);
    double dissipative = 0.0, quasi_static = 0.0;
    for (int j = 0; j < g.ny; ++j)
        for (int i = 0; i < g.nx; ++i) {
            const auto k = g.index(i, j);
            const double w = g.weight(i, j) * rho.values[k];
            dissipative += w * (velocity.x[k] * velocity.x[k] + velocity.y[k] * velocity.y[k]);
            quasi_static += w * (velocity.x[k] * tx * lx[k] + velocity.y[k] * ty * ly[k]);
        }
    return -params.gamma * dissipative - params.k_B * quasi_static;
}

/// Discrete L2 norm of div(f rho).
inline double divergence_residual(const GridVectorField& f, const GridDensity& rho) {
    detail::require_same_grid(f.grid, rho.grid);
    const Grid2D& g = rho.grid;
    std::vector<double> fx(g.size()), fy(g.size());
    for (std::size_t k = 0; k < g.size(); ++k) {
        fx[k] = f.x[k] * rho.values[k];
        fy[k] = f.y[k] * rho.values[k];
    }
    std::vector<double> dxx, dxy, dyx, dyy;
    detail::gradient(g, fx, dxx, dxy);
    detail::gradient(g, fy, dyx, dyy);
    std::vector<double> sq(g.size());
    for (std::size_t k = 0; k < g.size(); ++k) sq[k] = (dxx[k] + dyy[k]) * (dxx[k] + dyy[k]);
    return std::sqrt(trapezoid(g, sq));
}

/// rho-weighted least-squares matrix M with f(x) ~ M x.
inline SquareMatrix fit_linear_force(const GridVectorField& f, const GridDensity& rho) {
    detail::require_same_grid(f.grid, rho.grid);
    const Grid2D& g = rho.grid;
    Mat fx = Mat::Zero(2, 2), xx = Mat::Zero(2, 2);
    for (int j = 0; j < g.ny; ++j)
        for (int i = 0; i < g.nx; ++i) {
            const auto k = g.index(i, j);
            const double w = g.weight(i, j) * rho.values[k];
            const Eigen::Vector2d x(g.x(i), g.y(j)), v(f.x[k], f.y[k]);
            fx += w * v * x.transpose();
            xx += w * x * x.transpose();
        }
    return SquareMatrix(fx * xx.inverse());
}

inline void write_csv(std::ostream& os, const GridScalarField& f, const std::string& name = "value") {
    os << "x,y," << name << '\n' << std::setprecision(17);
    for (int j = 0; j < f.grid.ny; ++j)
        for (int i = 0; i < f.grid.nx; ++i)
            os << f.grid.x(i) << ',' << f.grid.y(j) << ',' << f.values[f.grid.index(i, j)] << '\n';
}

inline void write_csv(std::ostream& os, const GridDensity& rho) {
    write_csv(os, GridScalarField{rho.grid, rho.values, false}, "rho");
}

inline void write_csv(std::ostream& os, const GridVectorField& f, const std::string& name = "f") {
    os << "x,y," << name << "_x," << name << "_y\n" << std::setprecision(17);
    for (int j = 0; j < f.grid.ny; ++j)
        for (int i = 0; i < f.grid.nx; ++i) {
            const auto k = f.grid.index(i, j);
            os << f.grid.x(i) << ',' << f.grid.y(j) << ',' << f.x[k] << ',' << f.y[k] << '\n';
        }
}

} // namespace gyrolab
