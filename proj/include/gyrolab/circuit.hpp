#pragma once

// Two-capacitor RC network with Johnson-Nyquist noise at two temperatures,
// optionally closed through a non-reciprocal two-port capacitance C_nr.
// Charges q = C V follow dq = -(1/R) Chat^-1 q dt + sqrt(2 k_B T / R) dB with
// Chat = C + C_nr, i.e. the Langevin core with gamma -> R.

#include <string>

#include "gyrator.hpp"

namespace gyrolab {

struct CircuitSpec {
    double C1 = 1.0;
    double C2 = 1.0;
    double Cc = 0.0; ///< coupling capacitance, may be zero
    double R = 1.0;
    double T1 = 1.0;
    double T2 = 1.0;
    double k_B = 1.0;
    SquareMatrix C_nr = SquareMatrix::zero(2);

    void validate() const {
        if (!(C1 > 0.0) || !(C2 > 0.0)) throw Error(ErrorCode::RangeError, "C1 and C2 must be positive");
        if (!(Cc >= 0.0)) throw Error(ErrorCode::RangeError, "Cc must be non-negative");
        if (!(R > 0.0)) throw Error(ErrorCode::RangeError, "R must be positive");
        if (!(T1 > 0.0) || !(T2 > 0.0)) throw Error(ErrorCode::RangeError, "T1 and T2 must be positive");
        if (!(k_B > 0.0)) throw Error(ErrorCode::RangeError, "k_B must be positive");
        require_same_dim(C_nr.n(), 2, "C_nr");
    }
    ModelParams params() const { return {k_B, R}; }
    SymMatrix temperature() const { return SymMatrix::diagonal({T1, T2}); }
};

/// Decomposition of the charge-space force and the voltage fields built from it.
struct VoltageFields {
    SymMatrix conservative;       ///< Chat^-T C Chat^-1
    SquareMatrix nonconservative; ///< Chat^-T C_nr' Chat^-1
    SquareMatrix source_coeff;    ///< V_S = (-Chat^-T C Chat^-1 + k_B T Sigma^-1) q
    SquareMatrix load_coeff;      ///< V_L = -Chat^-T C_nr' Chat^-1 q
};

/// The circuit read as a Langevin system.
struct MappedCircuit {
    ModelParams params;       ///< gamma = R
    SymMatrix temperature;
    SquareMatrix drift;       ///< Chat^-1; dq = -(1/R) drift q dt + noise
    SymMatrix load_free_stiffness; ///< C^-1, the stiffness without C_nr

    /// K_c = C^-1 with no load. Exact mapping when C_nr = 0.
    LinearGyratorModel load_free_model() const {
        return LinearGyratorModel(params, temperature, load_free_stiffness);
    }
};

/// [[C1 + Cc, -Cc], [-Cc, C2 + Cc]].
inline SymMatrix capacitance_matrix(double c1, double c2, double cc) {
    if (!(c1 > 0.0) || !(c2 > 0.0) || !(cc >= 0.0))
        throw Error(ErrorCode::RangeError, "capacitances must be positive (Cc non-negative)");
    SymMatrix c{{c1 + cc, -cc}, {-cc, c2 + cc}};
    spd_eigen(c, "capacitance matrix");
    return c;
}

inline SymMatrix capacitance_matrix(const CircuitSpec& spec) { return capacitance_matrix(spec.C1, spec.C2, spec.Cc); }

namespace detail {

inline Mat chat_inverse(const CircuitSpec& spec) {
    const Mat chat = capacitance_matrix(spec).mat() + spec.C_nr.mat();
    Eigen::FullPivLU<Mat> lu(chat);
    if (!lu.isInvertible()) throw Error(ErrorCode::NotStable, "C + C_nr is singular");
    return lu.inverse();
}

} // namespace detail

inline MappedCircuit circuit_to_langevin(const CircuitSpec& spec) {
    spec.validate();
    const Mat drift = detail::chat_inverse(spec);
    Eigen::EigenSolver<Mat> es(drift, false);
    for (Eigen::Index i = 0; i < 2; ++i)
        if (!(es.eigenvalues()(i).real() > 0.0))
            throw Error(ErrorCode::NotStable, "(C + C_nr)^-1 has an eigenvalue with non-positive real part");
    return {spec.params(), spec.temperature(), SquareMatrix(drift), inverse(capacitance_matrix(spec))};
}

/// Stationary charge covariance: Chat^-1 Sigma + Sigma Chat^-T = 2 k_B T.
inline SymMatrix circuit_steady_state(const CircuitSpec& spec) {
    const auto mapped = circuit_to_langevin(spec);
    return solve_lyapunov_general(mapped.drift, SymMatrix(2.0 * spec.k_B * mapped.temperature.mat()));
}

/// Covariance of the circuit without C_nr, the reference for load design.
inline SymMatrix load_free_covariance(const CircuitSpec& spec) {
    return steady_state_covariance(circuit_to_langevin(spec).load_free_model());
}

/// -Chat^-1 = -Chat^-T C Chat^-1 - Chat^-T C_nr' Chat^-1, plus the voltage fields.
inline VoltageFields force_decomposition(const CircuitSpec& spec) {
    spec.validate();
    const Mat ci = detail::chat_inverse(spec);
    const Mat c = capacitance_matrix(spec).mat();
    const SymMatrix sigma = load_free_covariance(spec);
    VoltageFields v;
    v.conservative = SymMatrix::symmetric_part(ci.transpose() * c * ci);
    v.nonconservative = SquareMatrix(ci.transpose() * spec.C_nr.mat().transpose() * ci);
    v.source_coeff = SquareMatrix(-v.conservative.mat() + spec.k_B * spec.temperature().mat() * inverse(sigma).mat());
    v.load_coeff = SquareMatrix(-v.nonconservative.mat());
    return v;
}

/// Skew load Omega implied by C_nr through Chat^-T C_nr' Chat^-1 = Omega Sigma_ss^-1.
/// Throws NotSkewRealizable when the product with Sigma_ss is not skew.
inline SkewMatrix implied_load(const CircuitSpec& spec) {
    const auto v = force_decomposition(spec);
    const Mat w = v.nonconservative.mat() * load_free_covariance(spec).mat();
    const double asym = (w + w.transpose()).norm();
    if (asym > 1e-8 * std::max(1.0, w.norm()))
        throw Error(ErrorCode::NotSkewRealizable,
                    "C_nr does not realize a skew load (symmetric part norm " + format_number(asym) + ")");
    return SkewMatrix::skew_part(w);
}

/// Steady power delivered to C_nr, -(1/R) Tr[Omega S Omega' + k_B Omega S T] with Omega = implied_load.
inline double circuit_power(const CircuitSpec& spec) {
    const SkewMatrix omega = implied_load(spec);
    return power_of_load(omega, load_free_covariance(spec), spec.temperature(), spec.params());
}

struct DesignOptions {
    double damping = 0.5;
    int max_iterations = 500;
    double tolerance = 1e-9;
};

struct CnrDesign {
    CircuitSpec spec;
    int iterations = 0;
    double residual = 0.0; ///< ||Chat^-T C_nr' Chat^-1 - Omega Sigma^-1||_F
};

/// Finds C_nr with Chat^-T C_nr' Chat^-1 = Omega_target Sigma_ss^-1 by the damped iteration
/// Chat <- (1 - d) Chat + d (C + [Chat' Omega Sigma^-1 Chat]'), starting from Chat = C.
inline CnrDesign design_cnr(const SymMatrix& capacitance, double resistance, const SymMatrix& temperature,
                            const SkewMatrix& omega_target, const ModelParams& params,
                            const DesignOptions& opt = {}) {
    require_same_dim(capacitance.n(), 2, "capacitance");
    require_same_dim(temperature.n(), 2, "temperature");
    require_same_dim(omega_target.n(), 2, "omega_target");
    CircuitSpec spec;
    spec.Cc = -capacitance(0, 1);
    spec.C1 = capacitance(0, 0) - spec.Cc;
    spec.C2 = capacitance(1, 1) - spec.Cc;
    spec.R = resistance;
    spec.T1 = temperature(0, 0);
    spec.T2 = temperature(1, 1);
    spec.k_B = params.k_B;
    spec.validate();
    if (!temperature.is_diagonal()) throw Error(ErrorCode::InvalidArgument, "temperature must be diagonal");

    const Mat& c = capacitance.mat();
    const SymMatrix sigma = load_free_covariance(spec);
    const Mat target = omega_target.mat() * inverse(sigma).mat();

    Mat chat = c;
    double residual = 0.0;
    for (int it = 0; it <= opt.max_iterations; ++it) {
        Eigen::FullPivLU<Mat> lu(chat);
        if (!lu.isInvertible())
            throw Error(ErrorCode::NoConvergence, "iterate C + C_nr became singular at iteration " + std::to_string(it));
        const Mat ci = lu.inverse();
        const Mat cnr = chat - c;
        residual = (ci.transpose() * cnr.transpose() * ci - target).norm();
        if (residual <= opt.tolerance) {
            spec.C_nr = SquareMatrix(cnr);
            return {spec, it, residual};
        }
        const Mat update = c + (chat.transpose() * target * chat).transpose();
        chat = (1.0 - opt.damping) * chat + opt.damping * update;
    }
    throw Error(ErrorCode::NoConvergence, "design_cnr: residual " + format_number(residual) + " after " +
                                              std::to_string(opt.max_iterations) + " iterations");
}

/// C_nr whose drift reproduces the loaded Langevin system exactly: Chat^-1 = C^-1 - Omega Sigma^-1.
/// Keeps Sigma_ss stationary, but its implied_load is generally not Omega.
inline SquareMatrix drift_matched_cnr(const SymMatrix& capacitance, const SkewMatrix& omega, const SymMatrix& sigma) {
    const Mat drift = inverse(capacitance).mat() - omega.mat() * inverse(sigma).mat();
    return SquareMatrix(drift.inverse() - capacitance.mat());
}

} // namespace gyrolab
