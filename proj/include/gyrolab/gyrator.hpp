#pragma once

// Linear steady-state analysis of the anisotropically driven overdamped
// system dX = (1/gamma)(Omega Sigma^-1 - K) X dt + sqrt(2 k_B T / gamma) dB,
// and the skew load that maximizes the extracted power.

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "matcore.hpp"

namespace gyrolab {

struct ModelParams {
    double k_B = 1.0;   ///< energy per temperature
    double gamma = 1.0; ///< friction, force * time / length

    void validate() const {
        if (!(k_B > 0.0)) throw Error(ErrorCode::RangeError, "k_B must be positive");
        if (!(gamma > 0.0)) throw Error(ErrorCode::RangeError, "gamma must be positive");
    }
    friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// Temperatures T (diagonal, positive), stiffness K_c (SPD) and an optional
/// skew load Omega acting through the force Omega Sigma_ss^-1 x.
class LinearGyratorModel {
public:
    LinearGyratorModel(ModelParams params, SymMatrix temperature, SymMatrix stiffness,
                       std::optional<SkewMatrix> load = std::nullopt)
        : params_(params), t_(std::move(temperature)), k_(std::move(stiffness)), load_(std::move(load)) {
        params_.validate();
        require_same_dim(t_.n(), k_.n(), "temperature vs stiffness");
        if (!t_.is_diagonal())
            throw Error(ErrorCode::InvalidArgument, "temperature matrix must be diagonal");
        for (Eigen::Index i = 0; i < t_.n(); ++i)
            if (!(t_(i, i) > 0.0))
                throw Error(ErrorCode::RangeError, "T[" + std::to_string(i) + "] must be positive");
        spd_eigen(k_, "stiffness K_c");
        if (load_) require_same_dim(load_->n(), k_.n(), "load vs stiffness");
    }

    Eigen::Index n() const noexcept { return k_.n(); }
    const ModelParams& params() const noexcept { return params_; }
    const SymMatrix& temperature() const noexcept { return t_; }
    const SymMatrix& stiffness() const noexcept { return k_; }
    bool has_load() const noexcept { return load_.has_value(); }
    SkewMatrix load() const { return load_ ? *load_ : SkewMatrix::zero(n()); }

    LinearGyratorModel with_load(SkewMatrix omega) const {
        return LinearGyratorModel(params_, t_, k_, std::move(omega));
    }
    LinearGyratorModel without_load() const { return LinearGyratorModel(params_, t_, k_); }

private:
    ModelParams params_;
    SymMatrix t_;
    SymMatrix k_;
    std::optional<SkewMatrix> load_;
};

struct DetailedBalance {
    bool balanced = false;
    double commutator_norm = 0.0; ///< ||K_c T - T K_c||_F
};

struct SteadyStateReport {
    SymMatrix sigma_ss;          ///< stationary covariance, length^2
    SkewMatrix omega_star;       ///< power-maximizing skew load
    double p_star = 0.0;         ///< maximal power, energy / time
    SquareMatrix velocity_coeff; ///< mean velocity v(x) = A_v x at zero load, 1 / time
    bool detailed_balance = false;
    double commutator_norm = 0.0;
    bool omega_unique = false;   ///< restricted skew system has full rank
    double matching_residual = 0.0; ///< ||K_c - 2 Omega* S - k_B T S||_F, S = Sigma^-1
};

struct SweepPoint {
    double alpha = 0.0; ///< load as a fraction of the source force
    double power = 0.0;
};

/// Solves K_c Sigma + Sigma K_c = 2 k_B T. The load does not enter.
inline SymMatrix steady_state_covariance(const LinearGyratorModel& model) {
    const SymMatrix rhs((2.0 * model.params().k_B) * model.temperature().mat());
    return solve_lyapunov_sym(model.stiffness(), rhs);
}

/// A_v = -(1/2 gamma) (K_c Sigma - Sigma K_c) Sigma^-1.
inline SquareMatrix velocity_coefficient(const SymMatrix& stiffness, const SymMatrix& sigma,
                                         const ModelParams& params) {
    require_same_dim(stiffness.n(), sigma.n(), "velocity_coefficient");
    // K Sigma + Sigma K must equal 2 k_B T for some positive diagonal T.
    const Mat lhs = stiffness.mat() * sigma.mat() + sigma.mat() * stiffness.mat();
    const Mat offdiag = lhs - Mat(lhs.diagonal().asDiagonal());
    if (offdiag.norm() > 1e-8 * lhs.norm() || (lhs.diagonal().array() <= 0.0).any())
        throw Error(ErrorCode::InconsistentSteadyState,
                    "K_c and Sigma do not satisfy the algebraic Lyapunov equation for a diagonal T");
    const Mat comm = commutator(stiffness, sigma).mat();
    return SquareMatrix(-(0.5 / params.gamma) * comm * inverse(sigma).mat());
}

inline DetailedBalance detailed_balance_check(const LinearGyratorModel& model) {
    const double norm = commutator(model.stiffness(), model.temperature()).mat().norm();
    const double scale = model.stiffness().mat().norm() * model.temperature().mat().norm();
    return {norm <= 1e-10 * scale, norm};
}

/// Solves S Omega + Omega S = (k_B/2)(S T - T S) with S = Sigma^-1.
inline SkewMatrix optimal_skew(const SymMatrix& sigma, const SymMatrix& temperature,
                               const ModelParams& params) {
    require_same_dim(sigma.n(), temperature.n(), "optimal_skew");
    const SymMatrix s = inverse(sigma);
    const SkewMatrix rhs = SkewMatrix::skew_part(
        0.5 * params.k_B * (s.mat() * temperature.mat() - temperature.mat() * s.mat()));
    return solve_lyapunov_sym(s, rhs);
}

/// Matrix of X -> S X + X S restricted to skew X, in the basis E_ij - E_ji (i < j).
inline Mat restricted_skew_operator(const SymMatrix& s) {
    const Eigen::Index n = s.n();
    const Eigen::Index m = n * (n - 1) / 2;
    Mat op(m, m);
    Eigen::Index col = 0;
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j, ++col) {
            Mat e = Mat::Zero(n, n);
            e(i, j) = 1.0;
            e(j, i) = -1.0;
            const Mat img = s.mat() * e + e * s.mat();
            Eigen::Index row = 0;
            for (Eigen::Index a = 0; a < n; ++a)
                for (Eigen::Index b = a + 1; b < n; ++b) op(row++, col) = img(a, b);
        }
    return op;
}

inline bool skew_solution_unique(const SymMatrix& sigma) {
    const Mat op = restricted_skew_operator(inverse(sigma));
    if (op.size() == 0) return true;
    Eigen::FullPivLU<Mat> lu(op);
    lu.setThreshold(1e-12);
    return lu.rank() == op.rows();
}

/// P = -(1/gamma) Tr[Omega S Omega' + k_B Omega S T].
inline double power_of_load(const SkewMatrix& omega, const SymMatrix& sigma,
                            const SymMatrix& temperature, const ModelParams& params) {
    require_same_dim(omega.n(), sigma.n(), "power_of_load");
    const Mat s = inverse(sigma).mat();
    const Mat& w = omega.mat();
    const double dissipative = (w * s * w.transpose()).trace();
    const double driven = params.k_B * (w * s * temperature.mat()).trace();
    const double sum = dissipative + driven;
    // Total cancellation (f_L = f_S) leaves only round-off; report it as zero.
    if (std::abs(sum) <= 64.0 * std::numeric_limits<double>::epsilon() *
                             (std::abs(dissipative) + std::abs(driven)))
        return 0.0;
    return -sum / params.gamma;
}

/// Source force coefficient: f_S(x) = (-K_c + k_B T Sigma^-1) x.
inline SquareMatrix source_force_coeff(const LinearGyratorModel& model, const SymMatrix& sigma) {
    return SquareMatrix(-model.stiffness().mat() +
                        model.params().k_B * model.temperature().mat() * inverse(sigma).mat());
}

/// Load force coefficient: f_L(x) = -Omega Sigma^-1 x.
inline SquareMatrix load_force_coeff(const SkewMatrix& omega, const SymMatrix& sigma) {
    return SquareMatrix(-omega.mat() * inverse(sigma).mat());
}

/// Stationary heat uptake from each bath, Qdot_i = <(d_i U - f_i) o dX_i>/dt, for the
/// model's own load. Sums to power_of_load at steady state.
inline std::vector<double> stationary_heat_rates(const LinearGyratorModel& model) {
    const SymMatrix sigma = steady_state_covariance(model);
    const Mat f = model.load().mat() * inverse(sigma).mat();
    const Mat g = model.stiffness().mat() - f;
    const Mat drift = (f - model.stiffness().mat()) / model.params().gamma;
    const Mat gsd = g * sigma.mat() * drift.transpose();
    std::vector<double> q(static_cast<std::size_t>(model.n()));
    for (Eigen::Index i = 0; i < model.n(); ++i)
        q[static_cast<std::size_t>(i)] =
            gsd(i, i) + g(i, i) * model.params().k_B * model.temperature()(i, i) / model.params().gamma;
    return q;
}

inline SteadyStateReport max_power(const LinearGyratorModel& model) {
    SteadyStateReport r;
    r.sigma_ss = steady_state_covariance(model);
    const auto db = detailed_balance_check(model);
    r.detailed_balance = db.balanced;
    r.commutator_norm = db.commutator_norm;
    r.velocity_coeff = velocity_coefficient(model.stiffness(), r.sigma_ss, model.params());
    r.omega_unique = skew_solution_unique(r.sigma_ss);

    const ModelParams& p = model.params();
    const SymMatrix s = inverse(r.sigma_ss);
    if (db.balanced) {
        // T and K_c commute: Omega* vanishes identically, anything else is round-off.
        r.omega_star = SkewMatrix::zero(model.n());
        r.p_star = 0.0;
    } else {
        r.omega_star = optimal_skew(r.sigma_ss, model.temperature(), p);
        r.p_star = 0.5 * p.k_B / p.gamma *
                   (model.temperature().mat() * s.mat() * r.omega_star.mat()).trace();
    }
    const Mat m = 2.0 * r.omega_star.mat() * s.mat() + p.k_B * model.temperature().mat() * s.mat();
    r.matching_residual = (model.stiffness().mat() - m).norm();
    return r;
}

/// Power of the load 2 alpha Omega*, i.e. f_L = alpha f_S. Equals 4 P* alpha (1 - alpha).
inline std::vector<SweepPoint> load_sweep(const LinearGyratorModel& model, const std::vector<double>& alphas) {
    const SymMatrix sigma = steady_state_covariance(model);
    const auto db = detailed_balance_check(model);
    const SkewMatrix omega_star =
        db.balanced ? SkewMatrix::zero(model.n()) : optimal_skew(sigma, model.temperature(), model.params());
    std::vector<SweepPoint> out;
    out.reserve(alphas.size());
    for (double a : alphas) {
        out.push_back({a, power_of_load((2.0 * a) * omega_star, sigma, model.temperature(), model.params())});
    }
    return out;
}

} // namespace gyrolab
