#pragma once

// Euler-Maruyama ensembles of the linear Langevin dynamics with streaming
// work and heat estimators. Trajectories never get stored: each one reduces
// to per-batch sums, and batches are combined in trajectory-index order so
// results do not depend on how many workers ran them.

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <optional>
#include <random>
#include <span>
#include <thread>
#include <vector>

#include "gyrator.hpp"

namespace gyrolab {

struct SimulationConfig {
    double dt = 1e-3;
    std::uint64_t n_steps = 0;  ///< steps per trajectory, burn-in included
    std::uint64_t burn_in = 0;
    std::uint64_t n_trajectories = 1;
    std::uint64_t seed = 0;
    std::optional<SymMatrix> initial_covariance; ///< nullopt: start from Sigma_ss
    std::uint64_t n_batches = 100;

    void validate() const {
        if (!(dt > 0.0) || !std::isfinite(dt)) throw Error(ErrorCode::RangeError, "dt must be positive");
        if (burn_in >= n_steps) throw Error(ErrorCode::RangeError, "burn_in must be smaller than n_steps");
        if (n_trajectories < 1) throw Error(ErrorCode::RangeError, "n_trajectories must be at least 1");
        if (n_batches < 2) throw Error(ErrorCode::RangeError, "n_batches must be at least 2");
        if (n_steps - burn_in < n_batches)
            throw Error(ErrorCode::RangeError, "need at least one post-burn-in step per batch");
        if (initial_covariance && !is_positive_definite(*initial_covariance))
            throw Error(ErrorCode::NotPositiveDefinite, "initial_covariance must be positive-definite");
    }
};

/// Mean with a batch-means standard error.
struct Estimate {
    double value = 0.0;
    double se = 0.0;
};

struct TrajectoryStats {
    SymMatrix empirical_covariance;
    Mat covariance_se;
    Estimate power_stratonovich; ///< <f_L o dX>/dt, midpoint rule
    Estimate power_ito;          ///< left-point rule plus the Ito correction
    Estimate ito_minus_stratonovich;
    std::vector<Estimate> heat_rates; ///< heat uptake per bath
    Estimate heat_total;
    Estimate first_law_residual; ///< heat_total - power_stratonovich
    std::uint64_t samples = 0;   ///< post-burn-in steps over all trajectories
    double wall_time = 0.0;      ///< seconds
};

/// splitmix64 finalizer.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Seed of trajectory `index`: splitmix64(master ^ splitmix64(index)).
constexpr std::uint64_t trajectory_seed(std::uint64_t master, std::uint64_t index) noexcept {
    return splitmix64(master ^ splitmix64(index));
}

/// Coefficients shared by the estimators; all forces are linear in x.
struct WorkCoefficients {
    Mat load;       ///< f_L(x) = load x = -Omega Sigma^-1 x
    Mat heat;       ///< grad U - f = (K_c - Omega Sigma^-1) x
    Mat drift;      ///< (1/gamma)(Omega Sigma^-1 - K_c)
    Vec noise_var;  ///< 2 k_B T_i / gamma, per unit time
    double ito_rate = 0.0; ///< -k_B Tr[Omega Sigma^-1 T] / gamma

    static WorkCoefficients from(const LinearGyratorModel& model, const SymMatrix& sigma) {
        const Mat f = model.load().mat() * inverse(sigma).mat();
        const ModelParams& p = model.params();
        WorkCoefficients c;
        c.load = -f;
        c.heat = model.stiffness().mat() - f;
        c.drift = (f - model.stiffness().mat()) / p.gamma;
        c.noise_var = (2.0 * p.k_B / p.gamma) * model.temperature().mat().diagonal();
        c.ito_rate = -p.k_B * (f * model.temperature().mat()).trace() / p.gamma;
        return c;
    }
};

/// Rate of <f_L o dX> over a stored path with uniform step dt.
inline double estimate_power_stratonovich(std::span<const Vec> path, const SquareMatrix& load_coeff, double dt) {
    if (path.size() < 2) return 0.0;
    double acc = 0.0;
    for (std::size_t k = 0; k + 1 < path.size(); ++k) {
        const Vec mid = 0.5 * (path[k] + path[k + 1]);
        acc += (load_coeff.mat() * mid).dot(path[k + 1] - path[k]);
    }
    return acc / (dt * static_cast<double>(path.size() - 1));
}

/// -<X' Sigma^-1 Omega' dX>/dt - k_B Tr[Omega Sigma^-1 T]/gamma with left-point evaluation.
inline double estimate_power_ito(std::span<const Vec> path, const LinearGyratorModel& model,
                                 const SymMatrix& sigma, double dt) {
    if (path.size() < 2) return 0.0;
    const auto c = WorkCoefficients::from(model, sigma);
    double acc = 0.0;
    for (std::size_t k = 0; k + 1 < path.size(); ++k) acc += (c.load * path[k]).dot(path[k + 1] - path[k]);
    return acc / (dt * static_cast<double>(path.size() - 1)) + c.ito_rate;
}

/// Heat uptake rate from each bath, (d_i U - f_i) o dX_i with the midpoint rule.
inline std::vector<double> estimate_heat_rates(std::span<const Vec> path, const LinearGyratorModel& model,
                                               const SymMatrix& sigma, double dt) {
    std::vector<double> q(static_cast<std::size_t>(model.n()), 0.0);
    if (path.size() < 2) return q;
    const auto c = WorkCoefficients::from(model, sigma);
    for (std::size_t k = 0; k + 1 < path.size(); ++k) {
        const Vec g = c.heat * (0.5 * (path[k] + path[k + 1]));
        const Vec dx = path[k + 1] - path[k];
        for (Eigen::Index i = 0; i < model.n(); ++i) q[static_cast<std::size_t>(i)] += g(i) * dx(i);
    }
    for (double& v : q) v /= dt * static_cast<double>(path.size() - 1);
    return q;
}

namespace detail {

struct BatchSums {
    std::uint64_t steps = 0;
    double strat = 0.0;
    double ito = 0.0; ///< left-point part only, correction added at the end
    std::vector<double> heat;
    std::vector<double> cov; ///< row-major n x n
};

struct TrajectoryResult {
    std::vector<BatchSums> batches;
    std::exception_ptr error;
};

template <int N>
TrajectoryResult run_trajectory(const WorkCoefficients& coef, const Mat& init_chol, double blowup2,
                                const SimulationConfig& cfg, std::uint64_t index) {
    using V = Eigen::Matrix<double, N, 1>;
    using M = Eigen::Matrix<double, N, N>;
    const Eigen::Index n = coef.load.rows();
    const M load = coef.load;
    const M heat = coef.heat;
    const M step_map = M::Identity(n, n) + cfg.dt * M(coef.drift);
    const V noise_sd = (cfg.dt * coef.noise_var).cwiseSqrt();

    std::mt19937_64 rng(trajectory_seed(cfg.seed, index));
    std::normal_distribution<double> normal(0.0, 1.0);
    V xi(n);
    auto draw = [&] {
        for (Eigen::Index i = 0; i < n; ++i) xi(i) = normal(rng);
    };

    draw();
    V x = init_chol * xi;

    TrajectoryResult out;
    out.batches.resize(cfg.n_batches);
    for (auto& b : out.batches) {
        b.heat.assign(static_cast<std::size_t>(n), 0.0);
        b.cov.assign(static_cast<std::size_t>(n * n), 0.0);
    }
    const std::uint64_t post = cfg.n_steps - cfg.burn_in;

    V x_next(n), dx(n), mid(n), g(n);
    for (std::uint64_t step = 0; step < cfg.n_steps; ++step) {
        draw();
        x_next.noalias() = step_map * x;
        x_next += noise_sd.cwiseProduct(xi);
        if (!(x_next.squaredNorm() <= blowup2))
            throw Error(ErrorCode::UnstableIntegration,
                        "state norm exceeded 1e6 sqrt(Tr Sigma_ss); reduce dt");
        if (step >= cfg.burn_in) {
            const std::uint64_t k = step - cfg.burn_in;
            BatchSums& b = out.batches[k * cfg.n_batches / post];
            dx = x_next - x;
            mid = 0.5 * (x + x_next);
            b.strat += (load * mid).dot(dx);
            b.ito += (load * x).dot(dx);
            g.noalias() = heat * mid;
            for (Eigen::Index i = 0; i < n; ++i) b.heat[static_cast<std::size_t>(i)] += g(i) * dx(i);
            for (Eigen::Index i = 0; i < n; ++i)
                for (Eigen::Index j = 0; j < n; ++j) b.cov[static_cast<std::size_t>(i * n + j)] += x(i) * x(j);
            ++b.steps;
        }
        x = x_next;
    }
    return out;
}

inline Estimate batch_estimate(const std::vector<double>& sums, const std::vector<double>& weights) {
    double total = 0.0, weight = 0.0;
    for (std::size_t b = 0; b < sums.size(); ++b) {
        total += sums[b];
        weight += weights[b];
    }
    const auto nb = static_cast<double>(sums.size());
    double mean_of_means = 0.0;
    for (std::size_t b = 0; b < sums.size(); ++b) mean_of_means += sums[b] / weights[b];
    mean_of_means /= nb;
    double ss = 0.0;
    for (std::size_t b = 0; b < sums.size(); ++b) {
        const double d = sums[b] / weights[b] - mean_of_means;
        ss += d * d;
    }
    return {total / weight, std::sqrt(ss / (nb * (nb - 1.0)))};
}

inline unsigned resolve_threads(unsigned requested, std::uint64_t work) {
    unsigned t = requested ? requested : std::max(1u, std::thread::hardware_concurrency());
    if (work < t) t = static_cast<unsigned>(work);
    return std::max(1u, t);
}

} // namespace detail

/// Integrates dX = (1/gamma)(Omega Sigma^-1 - K_c) X dt + sqrt(2 k_B T/gamma) dB for every
/// trajectory and reduces the post-burn-in steps to estimates with batch-means errors.
/// `threads == 0` uses the hardware concurrency; the result is the same for any value.
inline TrajectoryStats run_ensemble(const LinearGyratorModel& model, const SimulationConfig& config,
                                    unsigned threads = 0) {
    config.validate();
    const auto t0 = std::chrono::steady_clock::now();
    const Eigen::Index n = model.n();
    const SymMatrix sigma = steady_state_covariance(model);
    if (config.initial_covariance) require_same_dim(config.initial_covariance->n(), n, "initial_covariance");
    const auto coef = WorkCoefficients::from(model, sigma);
    const Mat init_chol = Eigen::LLT<Mat>(config.initial_covariance ? config.initial_covariance->mat()
                                                                    : sigma.mat())
                              .matrixL();
    const double blowup2 = 1e12 * sigma.mat().trace();

    auto run_one = [&](std::uint64_t idx) -> detail::TrajectoryResult {
        try {
            switch (n) {
            case 1: return detail::run_trajectory<1>(coef, init_chol, blowup2, config, idx);
            case 2: return detail::run_trajectory<2>(coef, init_chol, blowup2, config, idx);
            case 3: return detail::run_trajectory<3>(coef, init_chol, blowup2, config, idx);
            case 4: return detail::run_trajectory<4>(coef, init_chol, blowup2, config, idx);
            default: return detail::run_trajectory<Eigen::Dynamic>(coef, init_chol, blowup2, config, idx);
            }
        } catch (...) {
            detail::TrajectoryResult r;
            r.error = std::current_exception();
            return r;
        }
    };

    std::vector<detail::TrajectoryResult> results(config.n_trajectories);
    const unsigned workers = detail::resolve_threads(threads, config.n_trajectories);
    if (workers == 1) {
        for (std::uint64_t i = 0; i < config.n_trajectories; ++i) results[i] = run_one(i);
    } else {
        std::atomic<std::uint64_t> next{0};
        std::vector<std::jthread> pool;
        for (unsigned w = 0; w < workers; ++w)
            pool.emplace_back([&] {
                for (std::uint64_t i = next++; i < config.n_trajectories; i = next++) results[i] = run_one(i);
            });
    }
    for (const auto& r : results)
        if (r.error) std::rethrow_exception(r.error);

    // Combine batch b across trajectories, in index order.
    const std::size_t nb = config.n_batches;
    const auto nn = static_cast<std::size_t>(n);
    std::vector<double> steps(nb, 0.0), strat(nb, 0.0), ito(nb, 0.0), heat_sum(nb, 0.0), residual(nb, 0.0),
        diff(nb, 0.0), times(nb, 0.0);
    std::vector<std::vector<double>> heat(nn, std::vector<double>(nb, 0.0));
    std::vector<std::vector<double>> cov(nn * nn, std::vector<double>(nb, 0.0));
    for (const auto& r : results)
        for (std::size_t b = 0; b < nb; ++b) {
            const auto& s = r.batches[b];
            steps[b] += static_cast<double>(s.steps);
            strat[b] += s.strat;
            ito[b] += s.ito;
            for (std::size_t i = 0; i < nn; ++i) heat[i][b] += s.heat[i];
            for (std::size_t k = 0; k < nn * nn; ++k) cov[k][b] += s.cov[k];
        }
    for (std::size_t b = 0; b < nb; ++b) {
        times[b] = steps[b] * config.dt;
        ito[b] += coef.ito_rate * times[b];
        diff[b] = ito[b] - strat[b];
        for (std::size_t i = 0; i < nn; ++i) heat_sum[b] += heat[i][b];
        residual[b] = heat_sum[b] - strat[b];
    }

    TrajectoryStats st;
    st.power_stratonovich = detail::batch_estimate(strat, times);
    st.power_ito = detail::batch_estimate(ito, times);
    st.ito_minus_stratonovich = detail::batch_estimate(diff, times);
    st.heat_total = detail::batch_estimate(heat_sum, times);
    st.first_law_residual = detail::batch_estimate(residual, times);
    for (std::size_t i = 0; i < nn; ++i) st.heat_rates.push_back(detail::batch_estimate(heat[i], times));
    Mat c(n, n), cse(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) {
            const auto e = detail::batch_estimate(cov[static_cast<std::size_t>(i * n + j)], steps);
            c(i, j) = e.value;
            cse(i, j) = e.se;
        }
    st.empirical_covariance = SymMatrix::symmetric_part(c);
    st.covariance_se = 0.5 * (cse + cse.transpose());
    st.samples = config.n_trajectories * (config.n_steps - config.burn_in);
    st.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return st;
}

struct CovarianceSample {
    double t = 0.0;
    SymMatrix sigma;
};

/// Classical RK4 on gamma dSigma/dt = -K_c Sigma - Sigma K_c + 2 k_B T. Stores Sigma_0,
/// every `store_every`-th step and the final time.
inline std::vector<CovarianceSample> transient_covariance(const LinearGyratorModel& model, const SymMatrix& sigma0,
                                                          double t_end, double dt, std::uint64_t store_every = 1) {
    require_same_dim(sigma0.n(), model.n(), "transient_covariance");
    if (!(dt > 0.0)) throw Error(ErrorCode::RangeError, "dt must be positive");
    if (!(t_end >= 0.0)) throw Error(ErrorCode::RangeError, "t_end must be non-negative");
    if (store_every == 0) throw Error(ErrorCode::RangeError, "store_every must be positive");
    if (!is_positive_definite(sigma0))
        throw Error(ErrorCode::NotPositiveDefinite, "initial covariance must be positive-definite");

    // The Lyapunov operator has real spectrum -(l_i + l_j)/gamma; RK4 is stable on [-2.785, 0].
    const double fastest = 2.0 * spd_eigen(model.stiffness()).eigenvalues().maxCoeff() / model.params().gamma;
    if (std::min(dt, t_end) * fastest > 2.785)
        throw Error(ErrorCode::StepTooLarge, "dt exceeds the RK4 stability limit " + format_number(2.785 / fastest));

    const Mat& k = model.stiffness().mat();
    const Mat source = 2.0 * model.params().k_B * model.temperature().mat();
    const double inv_gamma = 1.0 / model.params().gamma;
    auto rhs = [&](const Mat& s) -> Mat { return inv_gamma * (source - k * s - s * k); };

    const auto steps = static_cast<std::uint64_t>(std::ceil(t_end / dt - 1e-12));
    std::vector<CovarianceSample> out;
    out.push_back({0.0, sigma0});
    Mat s = sigma0.mat();
    double t = 0.0;
    for (std::uint64_t i = 1; i <= steps; ++i) {
        const double h = (i == steps) ? t_end - t : dt;
        const Mat k1 = rhs(s);
        const Mat k2 = rhs(s + 0.5 * h * k1);
        const Mat k3 = rhs(s + 0.5 * h * k2);
        const Mat k4 = rhs(s + h * k3);
        s += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        t = (i == steps) ? t_end : t + h;
        SymMatrix cur = SymMatrix::symmetric_part(s);
        if (!cur.mat().allFinite() || Eigen::LLT<Mat>(cur.mat()).info() != Eigen::Success)
            throw Error(ErrorCode::StepTooLarge, "covariance lost positive-definiteness at t = " + format_number(t));
        s = cur.mat();
        if (i % store_every == 0 || i == steps) out.push_back({t, std::move(cur)});
    }
    return out;
}

} // namespace gyrolab
