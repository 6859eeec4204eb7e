#pragma once

// Configuration ingestion and orchestration behind the command-line tool.
// Configs are JSON; results are JSON documents (or CSV tables for series and
// grid fields). The resolved config is echoed so a run can be reproduced.

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "circuit.hpp"
#include "fieldsolver.hpp"
#include "simulate.hpp"

namespace gyrolab {

inline constexpr const char* toolkit_name = "gyrolab";
inline constexpr const char* toolkit_version = "0.1.0";

enum class Command { Ness, OptimalLoad, Sweep, Simulate, Transient, Circuit, Field };
enum class OutputFormat { Json, Csv };

inline constexpr std::string_view to_string(Command c) {
    switch (c) {
    case Command::Ness: return "ness";
    case Command::OptimalLoad: return "optimal-load";
    case Command::Sweep: return "sweep";
    case Command::Simulate: return "simulate";
    case Command::Transient: return "transient";
    case Command::Circuit: return "circuit";
    case Command::Field: return "field";
    }
    return "";
}

inline std::optional<Command> parse_command(std::string_view s) {
    for (Command c : {Command::Ness, Command::OptimalLoad, Command::Sweep, Command::Simulate, Command::Transient,
                      Command::Circuit, Command::Field})
        if (to_string(c) == s) return c;
    return std::nullopt;
}

using Rows = std::vector<std::vector<double>>;

struct SimulationSection {
    double dt = 1e-3;
    std::uint64_t n_steps = 1'000'000;
    std::uint64_t burn_in = 10'000;
    std::uint64_t n_trajectories = 8;
    std::uint64_t seed = 0;
    std::optional<Rows> initial_covariance; ///< absent: "stationary"
    std::uint64_t n_batches = 100;
    friend bool operator==(const SimulationSection&, const SimulationSection&) = default;
};

struct TransientSection {
    std::optional<Rows> sigma0; ///< absent: identity
    std::optional<double> t_end; ///< absent: 20 gamma / lambda_min(K_c)
    double dt = 1e-2;
    std::uint64_t store_every = 1;
    friend bool operator==(const TransientSection&, const TransientSection&) = default;
};

struct CircuitSection {
    double C1 = 1.0, C2 = 1.0, Cc = 0.0, R = 1.0;
    std::vector<double> T{1.0, 1.0};
    std::optional<Rows> C_nr;
    std::optional<double> design_alpha; ///< design C_nr for the load 2 alpha Omega*
    friend bool operator==(const CircuitSection&, const CircuitSection&) = default;
};

struct GridSection {
    int nx = 128;
    int ny = 128;
    double margin = 7.0; ///< box half-width in marginal standard deviations
    std::optional<Rows> sigma; ///< density covariance; absent: Sigma_ss of the model
    double load_alpha = 0.5;
    friend bool operator==(const GridSection&, const GridSection&) = default;
};

struct RunConfig {
    Command command = Command::Ness;
    Rows K_c;
    std::vector<double> T;
    double k_B = 1.0;
    double gamma = 1.0;
    std::optional<Rows> Omega;
    std::optional<double> load_alpha; ///< load 2 alpha Omega*, i.e. f_L = alpha f_S
    std::optional<std::vector<double>> alphas;
    std::uint64_t n_alpha = 101;
    SimulationSection simulation;
    TransientSection transient;
    CircuitSection circuit;
    GridSection grid;
    OutputFormat format = OutputFormat::Json;
    friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

struct ConfigIssue {
    std::string path;
    ErrorCode code;
    std::string message;
};

/// Raised with every offending field at once.
class ConfigError : public Error {
public:
    explicit ConfigError(std::vector<ConfigIssue> issues)
        : Error(classify(issues), summarize(issues)), issues_(std::move(issues)) {}
    const std::vector<ConfigIssue>& issues() const noexcept { return issues_; }

private:
    static ErrorCode classify(const std::vector<ConfigIssue>& issues) {
        for (const auto& i : issues)
            if (i.code == ErrorCode::SchemaError) return ErrorCode::SchemaError;
        return ErrorCode::RangeError;
    }
    static std::string summarize(const std::vector<ConfigIssue>& issues) {
        std::string s;
        for (const auto& i : issues) s += (s.empty() ? "" : "; ") + i.path + ": " + i.message;
        return s;
    }
    std::vector<ConfigIssue> issues_;
};

namespace detail {

using nlohmann::json;

class ConfigReader {
public:
    std::vector<ConfigIssue> issues;

    void schema(const std::string& path, const std::string& msg) { issues.push_back({path, ErrorCode::SchemaError, msg}); }
    void range(const std::string& path, const std::string& msg) { issues.push_back({path, ErrorCode::RangeError, msg}); }

    static std::string join(const std::string& base, const std::string& key) { return base.empty() ? key : base + "." + key; }

    bool expect_object(const json& j, const std::string& path, std::initializer_list<const char*> allowed) {
        if (!j.is_object()) {
            schema(path.empty() ? "$" : path, "expected an object");
            return false;
        }
        for (const auto& [k, v] : j.items()) {
            bool ok = false;
            for (const char* a : allowed) ok = ok || k == a;
            if (!ok) schema(join(path, k), "unknown key");
        }
        return true;
    }

    std::optional<double> number(const json& obj, const std::string& base, const char* key, bool required = false) {
        const auto path = join(base, key);
        if (!obj.contains(key)) {
            if (required) schema(path, "missing required number");
            return std::nullopt;
        }
        const auto& v = obj.at(key);
        if (!v.is_number()) {
            schema(path, "expected a number");
            return std::nullopt;
        }
        return v.get<double>();
    }

    std::optional<std::uint64_t> count(const json& obj, const std::string& base, const char* key) {
        const auto path = join(base, key);
        if (!obj.contains(key)) return std::nullopt;
        const auto& v = obj.at(key);
        if (!v.is_number_integer()) {
            schema(path, "expected an integer");
            return std::nullopt;
        }
        if (v.is_number_unsigned() || v.get<std::int64_t>() >= 0) return v.get<std::uint64_t>();
        range(path, "must be non-negative");
        return std::nullopt;
    }

    std::optional<std::vector<double>> vector(const json& obj, const std::string& base, const char* key,
                                              bool required = false) {
        const auto path = join(base, key);
        if (!obj.contains(key)) {
            if (required) schema(path, "missing required array");
            return std::nullopt;
        }
        const auto& v = obj.at(key);
        if (!v.is_array()) {
            schema(path, "expected an array of numbers");
            return std::nullopt;
        }
        std::vector<double> out;
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (!v[i].is_number()) {
                schema(path + "[" + std::to_string(i) + "]", "expected a number");
                return std::nullopt;
            }
            out.push_back(v[i].get<double>());
        }
        return out;
    }

    std::optional<Rows> matrix(const json& obj, const std::string& base, const char* key, bool required = false) {
        const auto path = join(base, key);
        if (!obj.contains(key)) {
            if (required) schema(path, "missing required matrix");
            return std::nullopt;
        }
        const auto& v = obj.at(key);
        if (!v.is_array() || v.empty()) {
            schema(path, "expected a non-empty square array of rows");
            return std::nullopt;
        }
        Rows rows;
        for (std::size_t i = 0; i < v.size(); ++i) {
            const auto& r = v[i];
            if (!r.is_array() || r.size() != v.size()) {
                schema(path + "[" + std::to_string(i) + "]", "expected a row of length " + std::to_string(v.size()));
                return std::nullopt;
            }
            std::vector<double> row;
            for (std::size_t k = 0; k < r.size(); ++k) {
                if (!r[k].is_number()) {
                    schema(path + "[" + std::to_string(i) + "][" + std::to_string(k) + "]", "expected a number");
                    return std::nullopt;
                }
                row.push_back(r[k].get<double>());
            }
            rows.push_back(std::move(row));
        }
        return rows;
    }

    void positive(std::optional<double> v, const std::string& path) {
        if (v && !(*v > 0.0)) range(path, "must be positive");
    }
};

inline Mat to_mat(const Rows& r) {
    const auto n = static_cast<Eigen::Index>(r.size());
    Mat m(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) m(i, j) = r[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    return m;
}

inline bool symmetric_rows(const Rows& r) {
    const Mat m = to_mat(r);
    return (m - m.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * detail::symmetry_scale(m);
}

inline bool spd_rows(const Rows& r) { return symmetric_rows(r) && is_positive_definite(SymMatrix::symmetric_part(to_mat(r))); }

inline json rows_json(const Rows& r) {
    json a = json::array();
    for (const auto& row : r) a.push_back(row);
    return a;
}

} // namespace detail

/// Parses and validates a JSON config. `command_override` (from the command line)
/// takes precedence over the document's "command" key.
inline RunConfig parse_config(const std::string& text, std::optional<Command> command_override = std::nullopt) {
    using detail::json;
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError({{"$", ErrorCode::SchemaError, std::string("invalid JSON: ") + e.what()}});
    }
    detail::ConfigReader rd;
    RunConfig cfg;
    if (!rd.expect_object(doc, "", {"command", "K_c", "T", "k_B", "gamma", "Omega", "load_alpha", "alphas", "n_alpha",
                                    "simulation", "transient", "circuit", "grid", "format"}))
        throw ConfigError(rd.issues);

    if (doc.contains("command")) {
        const auto& c = doc.at("command");
        const auto parsed = c.is_string() ? parse_command(c.get<std::string>()) : std::nullopt;
        if (!parsed) rd.schema("command", "expected one of ness, optimal-load, sweep, simulate, transient, circuit, field");
        else cfg.command = *parsed;
        if (parsed && command_override && *parsed != *command_override)
            rd.schema("command", "config command differs from the requested command");
    } else if (!command_override) {
        rd.schema("command", "missing command");
    }
    if (command_override) cfg.command = *command_override;

    if (doc.contains("format")) {
        const auto& f = doc.at("format");
        if (f == "json") cfg.format = OutputFormat::Json;
        else if (f == "csv") cfg.format = OutputFormat::Csv;
        else rd.schema("format", "expected \"json\" or \"csv\"");
    }

    const bool needs_model = cfg.command != Command::Circuit;
    if (auto k = rd.matrix(doc, "", "K_c", needs_model)) {
        cfg.K_c = *k;
        if (!detail::spd_rows(cfg.K_c)) rd.range("K_c", "must be symmetric positive-definite");
    }
    if (auto t = rd.vector(doc, "", "T", needs_model)) {
        cfg.T = *t;
        for (std::size_t i = 0; i < cfg.T.size(); ++i)
            if (!(cfg.T[i] > 0.0)) rd.range("T[" + std::to_string(i) + "]", "temperature must be positive");
        if (!cfg.K_c.empty() && cfg.T.size() != cfg.K_c.size()) rd.schema("T", "length must match K_c");
    }
    if (auto v = rd.number(doc, "", "k_B")) cfg.k_B = *v;
    if (auto v = rd.number(doc, "", "gamma")) cfg.gamma = *v;
    rd.positive(cfg.k_B, "k_B");
    rd.positive(cfg.gamma, "gamma");
    if (auto w = rd.matrix(doc, "", "Omega")) {
        cfg.Omega = *w;
        const Mat m = detail::to_mat(*w);
        if ((m + m.transpose()).cwiseAbs().maxCoeff() > 1e-12 * detail::symmetry_scale(m))
            rd.range("Omega", "must be skew-symmetric");
        if (!cfg.K_c.empty() && w->size() != cfg.K_c.size()) rd.schema("Omega", "dimension must match K_c");
    }
    cfg.load_alpha = rd.number(doc, "", "load_alpha");
    if (cfg.Omega && cfg.load_alpha) rd.schema("load_alpha", "give either Omega or load_alpha, not both");
    cfg.alphas = rd.vector(doc, "", "alphas");
    if (auto n = rd.count(doc, "", "n_alpha")) {
        cfg.n_alpha = *n;
        if (cfg.n_alpha < 2) rd.range("n_alpha", "must be at least 2");
    }

    if (doc.contains("simulation")) {
        const auto& s = doc.at("simulation");
        const std::string p = "simulation";
        if (rd.expect_object(s, p, {"dt", "n_steps", "burn_in", "n_trajectories", "seed", "initial_covariance", "n_batches"})) {
            auto& sim = cfg.simulation;
            if (auto v = rd.number(s, p, "dt")) sim.dt = *v;
            rd.positive(sim.dt, "simulation.dt");
            if (auto v = rd.count(s, p, "n_steps")) sim.n_steps = *v;
            if (auto v = rd.count(s, p, "burn_in")) sim.burn_in = *v;
            if (auto v = rd.count(s, p, "n_trajectories")) sim.n_trajectories = *v;
            if (auto v = rd.count(s, p, "seed")) sim.seed = *v;
            if (auto v = rd.count(s, p, "n_batches")) sim.n_batches = *v;
            if (s.contains("initial_covariance") && s.at("initial_covariance") != "stationary") {
                sim.initial_covariance = rd.matrix(s, p, "initial_covariance");
                if (sim.initial_covariance && !detail::spd_rows(*sim.initial_covariance))
                    rd.range("simulation.initial_covariance", "must be symmetric positive-definite");
            }
            if (sim.burn_in >= sim.n_steps) rd.range("simulation.burn_in", "must be smaller than n_steps");
            if (sim.n_trajectories < 1) rd.range("simulation.n_trajectories", "must be at least 1");
            if (sim.n_batches < 2) rd.range("simulation.n_batches", "must be at least 2");
            else if (sim.burn_in < sim.n_steps && sim.n_steps - sim.burn_in < sim.n_batches)
                rd.range("simulation.n_steps", "needs at least n_batches post-burn-in steps");
        }
    }

    if (doc.contains("transient")) {
        const auto& s = doc.at("transient");
        const std::string p = "transient";
        if (rd.expect_object(s, p, {"sigma0", "t_end", "dt", "store_every"})) {
            auto& tr = cfg.transient;
            tr.sigma0 = rd.matrix(s, p, "sigma0");
            if (tr.sigma0 && !detail::spd_rows(*tr.sigma0)) rd.range("transient.sigma0", "must be symmetric positive-definite");
            tr.t_end = rd.number(s, p, "t_end");
            if (tr.t_end && !(*tr.t_end >= 0.0)) rd.range("transient.t_end", "must be non-negative");
            if (auto v = rd.number(s, p, "dt")) tr.dt = *v;
            rd.positive(tr.dt, "transient.dt");
            if (auto v = rd.count(s, p, "store_every")) tr.store_every = *v;
            if (tr.store_every < 1) rd.range("transient.store_every", "must be at least 1");
        }
    }

    if (doc.contains("circuit")) {
        const auto& s = doc.at("circuit");
        const std::string p = "circuit";
        if (rd.expect_object(s, p, {"C1", "C2", "Cc", "R", "T", "C_nr", "design_alpha"})) {
            auto& c = cfg.circuit;
            if (auto v = rd.number(s, p, "C1", true)) c.C1 = *v;
            if (auto v = rd.number(s, p, "C2", true)) c.C2 = *v;
            if (auto v = rd.number(s, p, "Cc")) c.Cc = *v;
            if (auto v = rd.number(s, p, "R", true)) c.R = *v;
            rd.positive(c.C1, "circuit.C1");
            rd.positive(c.C2, "circuit.C2");
            rd.positive(c.R, "circuit.R");
            if (!(c.Cc >= 0.0)) rd.range("circuit.Cc", "must be non-negative");
            if (auto t = rd.vector(s, p, "T", true)) {
                c.T = *t;
                if (c.T.size() != 2) rd.schema("circuit.T", "expected two temperatures");
                for (std::size_t i = 0; i < c.T.size(); ++i)
                    if (!(c.T[i] > 0.0)) rd.range("circuit.T[" + std::to_string(i) + "]", "temperature must be positive");
            }
            c.C_nr = rd.matrix(s, p, "C_nr");
            if (c.C_nr && c.C_nr->size() != 2) rd.schema("circuit.C_nr", "expected a 2x2 matrix");
            c.design_alpha = rd.number(s, p, "design_alpha");
            if (c.C_nr && c.design_alpha) rd.schema("circuit.design_alpha", "give either C_nr or design_alpha, not both");
        }
    } else if (cfg.command == Command::Circuit) {
        rd.schema("circuit", "missing circuit section");
    }

    if (doc.contains("grid")) {
        const auto& s = doc.at("grid");
        const std::string p = "grid";
        if (rd.expect_object(s, p, {"nx", "ny", "margin", "sigma", "load_alpha"})) {
            auto& g = cfg.grid;
            if (auto v = rd.count(s, p, "nx")) g.nx = static_cast<int>(*v);
            if (auto v = rd.count(s, p, "ny")) g.ny = static_cast<int>(*v);
            if (g.nx < Grid2D::min_points) rd.range("grid.nx", "must be at least 16");
            if (g.ny < Grid2D::min_points) rd.range("grid.ny", "must be at least 16");
            if (auto v = rd.number(s, p, "margin")) g.margin = *v;
            if (!(g.margin >= 5.0)) rd.range("grid.margin", "must be at least 5 standard deviations");
            g.sigma = rd.matrix(s, p, "sigma");
            if (g.sigma && (g.sigma->size() != 2 || !detail::spd_rows(*g.sigma)))
                rd.range("grid.sigma", "must be a 2x2 symmetric positive-definite matrix");
            if (auto v = rd.number(s, p, "load_alpha")) g.load_alpha = *v;
        }
    }

    if (cfg.command == Command::Field && cfg.K_c.size() != 2 && !cfg.K_c.empty())
        rd.schema("K_c", "field command requires a 2-D model");
    if (cfg.format == OutputFormat::Csv &&
        !(cfg.command == Command::Sweep || cfg.command == Command::Transient || cfg.command == Command::Field))
        rd.schema("format", "csv output is available for sweep, transient and field");

    if (!rd.issues.empty()) throw ConfigError(rd.issues);
    return cfg;
}

/// Fully resolved config; parse_config(to_json(c).dump()) == c.
inline nlohmann::json to_json(const RunConfig& c) {
    using detail::json;
    using detail::rows_json;
    json j;
    j["command"] = std::string(to_string(c.command));
    j["format"] = c.format == OutputFormat::Csv ? "csv" : "json";
    if (!c.K_c.empty()) j["K_c"] = rows_json(c.K_c);
    if (!c.T.empty()) j["T"] = c.T;
    j["k_B"] = c.k_B;
    j["gamma"] = c.gamma;
    if (c.Omega) j["Omega"] = rows_json(*c.Omega);
    if (c.load_alpha) j["load_alpha"] = *c.load_alpha;
    if (c.alphas) j["alphas"] = *c.alphas;
    j["n_alpha"] = c.n_alpha;
    const auto& s = c.simulation;
    j["simulation"] = {{"dt", s.dt},           {"n_steps", s.n_steps},
                       {"burn_in", s.burn_in}, {"n_trajectories", s.n_trajectories},
                       {"seed", s.seed},       {"n_batches", s.n_batches}};
    j["simulation"]["initial_covariance"] = s.initial_covariance ? rows_json(*s.initial_covariance) : json("stationary");
    const auto& t = c.transient;
    j["transient"] = {{"dt", t.dt}, {"store_every", t.store_every}};
    if (t.sigma0) j["transient"]["sigma0"] = rows_json(*t.sigma0);
    if (t.t_end) j["transient"]["t_end"] = *t.t_end;
    const auto& ci = c.circuit;
    j["circuit"] = {{"C1", ci.C1}, {"C2", ci.C2}, {"Cc", ci.Cc}, {"R", ci.R}, {"T", ci.T}};
    if (ci.C_nr) j["circuit"]["C_nr"] = rows_json(*ci.C_nr);
    if (ci.design_alpha) j["circuit"]["design_alpha"] = *ci.design_alpha;
    const auto& g = c.grid;
    j["grid"] = {{"nx", g.nx}, {"ny", g.ny}, {"margin", g.margin}, {"load_alpha", g.load_alpha}};
    if (g.sigma) j["grid"]["sigma"] = rows_json(*g.sigma);
    return j;
}

struct ResultDocument {
    nlohmann::json json;       ///< always produced
    std::optional<std::string> csv; ///< table for csv-format runs
};

/// Exit status for a failure: 2 config, 3 numerical, 4 non-convergence.
inline int exit_code_for(ErrorCode code) {
    switch (code) {
    case ErrorCode::SchemaError:
    case ErrorCode::RangeError:
    case ErrorCode::IoError:
    case ErrorCode::InvalidArgument: return 2;
    case ErrorCode::NoConvergence: return 4;
    default: return 3;
    }
}

inline nlohmann::json error_document(const Error& e) {
    nlohmann::json j;
    j["error"] = {{"code", std::string(to_string(e.code()))}, {"message", e.what()}, {"exit_code", exit_code_for(e.code())}};
    if (const auto* ce = dynamic_cast<const ConfigError*>(&e)) {
        auto fields = nlohmann::json::array();
        for (const auto& i : ce->issues())
            fields.push_back({{"path", i.path}, {"code", std::string(to_string(i.code))}, {"message", i.message}});
        j["error"]["fields"] = fields;
    }
    return j;
}

namespace detail {

inline json matrix_json(const Mat& m, const char* unit, const char* provenance) {
    json data = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index k = 0; k < m.cols(); ++k) data.push_back(m(i, k));
    return {{"n", m.rows()}, {"data", data}, {"unit", unit}, {"provenance", provenance}};
}

inline json scalar_json(double v, const char* unit, const char* provenance) {
    return {{"value", v}, {"unit", unit}, {"provenance", provenance}};
}

inline json estimate_json(const Estimate& e, const char* unit) {
    return {{"value", e.value}, {"se", e.se}, {"unit", unit}, {"provenance", "monte-carlo"}};
}

inline std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline LinearGyratorModel build_model(const RunConfig& c) {
    LinearGyratorModel base({c.k_B, c.gamma}, SymMatrix::diagonal(c.T), SymMatrix(to_mat(c.K_c)));
    if (c.Omega) return base.with_load(SkewMatrix(to_mat(*c.Omega)));
    if (c.load_alpha) {
        const auto rep = max_power(base);
        return base.with_load((2.0 * *c.load_alpha) * rep.omega_star);
    }
    return base;
}

inline std::vector<double> sweep_alphas(const RunConfig& c) {
    if (c.alphas) return *c.alphas;
    std::vector<double> a(c.n_alpha);
    for (std::uint64_t i = 0; i < c.n_alpha; ++i) a[i] = static_cast<double>(i) / static_cast<double>(c.n_alpha - 1);
    return a;
}

inline json report_json(const SteadyStateReport& r) {
    return {{"sigma_ss", matrix_json(r.sigma_ss.mat(), "length^2", "analytic")},
            {"velocity_coeff", matrix_json(r.velocity_coeff.mat(), "1/time", "analytic")},
            {"omega_star", matrix_json(r.omega_star.mat(), "energy", "analytic")},
            {"p_star", scalar_json(r.p_star, "energy/time", "analytic")},
            {"detailed_balance", r.detailed_balance},
            {"commutator_norm", scalar_json(r.commutator_norm, "stiffness*temperature", "analytic")},
            {"omega_unique", r.omega_unique}};
}

inline ResultDocument run_ness(const RunConfig& c) {
    const auto model = build_model(c);
    const auto r = max_power(model);
    json res = report_json(r);
    json heat = json::array();
    for (double q : stationary_heat_rates(model)) heat.push_back(scalar_json(q, "energy/time", "analytic"));
    res["heat_rates"] = heat;
    const Mat lyap = model.stiffness().mat() * r.sigma_ss.mat() + r.sigma_ss.mat() * model.stiffness().mat() -
                     2.0 * c.k_B * model.temperature().mat();
    json diag = {{"lyapunov_residual", scalar_json(lyap.norm(), "energy", "analytic")}};
    return {{{"results", res}, {"diagnostics", diag}}, std::nullopt};
}

inline ResultDocument run_optimal_load(const RunConfig& c) {
    const auto model = build_model(c).without_load();
    const auto r = max_power(model);
    json res = report_json(r);
    res["source_force_coeff"] = matrix_json(source_force_coeff(model, r.sigma_ss).mat(), "force/length", "analytic");
    res["optimal_load_force_coeff"] = matrix_json(load_force_coeff(r.omega_star, r.sigma_ss).mat(), "force/length", "analytic");
    const Mat s = inverse(r.sigma_ss).mat();
    const Mat m = 2.0 * r.omega_star.mat() * s + c.k_B * model.temperature().mat() * s;
    json diag = {{"matching_residual", scalar_json(r.matching_residual, "force/length", "analytic")},
                 {"first_order_asymmetry", scalar_json((m - m.transpose()).norm(), "force/length", "analytic")},
                 {"power_of_load_at_optimum",
                  scalar_json(power_of_load(r.omega_star, r.sigma_ss, model.temperature(), model.params()), "energy/time",
                              "analytic")}};
    return {{{"results", res}, {"diagnostics", diag}}, std::nullopt};
}

inline ResultDocument run_sweep(const RunConfig& c) {
    const auto model = build_model(c).without_load();
    const auto r = max_power(model);
    const auto pts = load_sweep(model, sweep_alphas(c));
    json arr = json::array();
    std::ostringstream csv;
    csv << "alpha,P,P_quadratic\n";
    double worst = 0.0;
    for (const auto& p : pts) {
        const double q = 4.0 * r.p_star * p.alpha * (1.0 - p.alpha);
        worst = std::max(worst, std::abs(p.power - q));
        arr.push_back({{"alpha", scalar_json(p.alpha, "dimensionless", "analytic")}, {"power", scalar_json(p.power, "energy/time", "analytic")}});
        csv << fmt(p.alpha) << ',' << fmt(p.power) << ',' << fmt(q) << '\n';
    }
    json res = {{"p_star", scalar_json(r.p_star, "energy/time", "analytic")}, {"points", arr}};
    json diag = {{"max_quadratic_deviation", scalar_json(worst, "energy/time", "analytic")}};
    ResultDocument doc{{{"results", res}, {"diagnostics", diag}}, std::nullopt};
    if (c.format == OutputFormat::Csv) doc.csv = csv.str();
    return doc;
}

inline ResultDocument run_simulate(const RunConfig& c, unsigned threads) {
    const auto model = build_model(c);
    SimulationConfig sc;
    sc.dt = c.simulation.dt;
    sc.n_steps = c.simulation.n_steps;
    sc.burn_in = c.simulation.burn_in;
    sc.n_trajectories = c.simulation.n_trajectories;
    sc.seed = c.simulation.seed;
    sc.n_batches = c.simulation.n_batches;
    if (c.simulation.initial_covariance) sc.initial_covariance = SymMatrix(to_mat(*c.simulation.initial_covariance));
    const auto st = run_ensemble(model, sc, threads);
    const SymMatrix sigma = steady_state_covariance(model);

    json heat = json::array();
    for (const auto& h : st.heat_rates) heat.push_back(estimate_json(h, "energy/time"));
    json heat_ref = json::array();
    for (double q : stationary_heat_rates(model)) heat_ref.push_back(scalar_json(q, "energy/time", "analytic"));
    json res = {
        {"empirical_covariance", matrix_json(st.empirical_covariance.mat(), "length^2", "monte-carlo")},
        {"covariance_se", matrix_json(st.covariance_se, "length^2", "monte-carlo")},
        {"power_stratonovich", estimate_json(st.power_stratonovich, "energy/time")},
        {"power_ito", estimate_json(st.power_ito, "energy/time")},
        {"ito_minus_stratonovich", estimate_json(st.ito_minus_stratonovich, "energy/time")},
        {"heat_rates", heat},
        {"heat_total", estimate_json(st.heat_total, "energy/time")},
        {"first_law_residual", estimate_json(st.first_law_residual, "energy/time")},
        {"samples", scalar_json(static_cast<double>(st.samples), "steps", "monte-carlo")},
        {"load", matrix_json(model.load().mat(), "energy", "analytic")},
        {"reference",
         {{"sigma_ss", matrix_json(sigma.mat(), "length^2", "analytic")},
          {"power", scalar_json(power_of_load(model.load(), sigma, model.temperature(), model.params()), "energy/time",
                                "analytic")},
          {"heat_rates", heat_ref}}}};
    // Wall time is left out of the document so identical runs give identical bytes.
    return {{{"results", res}, {"diagnostics", json::object()}}, std::nullopt};
}

inline ResultDocument run_transient(const RunConfig& c) {
    const auto model = build_model(c);
    const SymMatrix sigma0 = c.transient.sigma0 ? SymMatrix(to_mat(*c.transient.sigma0)) : SymMatrix::identity(model.n());
    const double lam_min = spd_eigen(model.stiffness()).eigenvalues()(0);
    const double t_end = c.transient.t_end.value_or(20.0 * c.gamma / lam_min);
    const auto series = transient_covariance(model, sigma0, t_end, c.transient.dt, c.transient.store_every);
    const SymMatrix ss = steady_state_covariance(model);

    json arr = json::array();
    std::ostringstream csv;
    csv << 't';
    const Eigen::Index n = model.n();
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index k = 0; k < n; ++k) csv << ",s" << i << k;
    csv << ",distance\n";
    double min_eig = std::numeric_limits<double>::infinity();
    for (const auto& s : series) {
        const double dist = (s.sigma.mat() - ss.mat()).norm();
        min_eig = std::min(min_eig, Eigen::SelfAdjointEigenSolver<Mat>(s.sigma.mat(), Eigen::EigenvaluesOnly).eigenvalues()(0));
        arr.push_back({{"t", scalar_json(s.t, "time", "analytic")}, {"sigma", matrix_json(s.sigma.mat(), "length^2", "analytic")}});
        csv << fmt(s.t);
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index k = 0; k < n; ++k) csv << ',' << fmt(s.sigma(i, k));
        csv << ',' << fmt(dist) << '\n';
    }
    json res = {{"t_end", scalar_json(t_end, "time", "analytic")},
                {"final_sigma", matrix_json(series.back().sigma.mat(), "length^2", "analytic")},
                {"sigma_ss", matrix_json(ss.mat(), "length^2", "analytic")},
                {"series", arr}};
    json diag = {{"final_distance", scalar_json((series.back().sigma.mat() - ss.mat()).norm(), "length^2", "analytic")},
                 {"min_eigenvalue", scalar_json(min_eig, "length^2", "analytic")}};
    ResultDocument doc{{{"results", res}, {"diagnostics", diag}}, std::nullopt};
    if (c.format == OutputFormat::Csv) doc.csv = csv.str();
    return doc;
}

inline ResultDocument run_circuit(const RunConfig& c) {
    CircuitSpec spec;
    spec.C1 = c.circuit.C1;
    spec.C2 = c.circuit.C2;
    spec.Cc = c.circuit.Cc;
    spec.R = c.circuit.R;
    spec.T1 = c.circuit.T[0];
    spec.T2 = c.circuit.T[1];
    spec.k_B = c.k_B;
    const auto mapped = circuit_to_langevin(spec);
    const auto base = max_power(mapped.load_free_model());

    json res = {{"capacitance", matrix_json(capacitance_matrix(spec).mat(), "charge/voltage", "analytic")},
                {"stiffness", matrix_json(mapped.load_free_stiffness.mat(), "voltage/charge", "analytic")},
                {"sigma_ss", matrix_json(base.sigma_ss.mat(), "charge^2", "analytic")},
                {"omega_star", matrix_json(base.omega_star.mat(), "energy", "analytic")},
                {"p_star", scalar_json(base.p_star, "energy/time", "analytic")}};
    json diag = json::object();

    if (c.circuit.design_alpha) {
        const auto design = design_cnr(capacitance_matrix(spec), spec.R, spec.temperature(),
                                       (2.0 * *c.circuit.design_alpha) * base.omega_star, spec.params());
        spec = design.spec;
        diag["design_iterations"] = scalar_json(design.iterations, "iterations", "analytic");
        diag["design_residual"] = scalar_json(design.residual, "voltage/charge", "analytic");
    } else if (c.circuit.C_nr) {
        spec.C_nr = SquareMatrix(to_mat(*c.circuit.C_nr));
    }
    res["C_nr"] = matrix_json(spec.C_nr.mat(), "charge/voltage", "analytic");
    const auto fields = force_decomposition(spec);
    res["source_coeff"] = matrix_json(fields.source_coeff.mat(), "voltage/charge", "analytic");
    res["load_coeff"] = matrix_json(fields.load_coeff.mat(), "voltage/charge", "analytic");
    res["realized_covariance"] = matrix_json(circuit_steady_state(spec).mat(), "charge^2", "analytic");
    const Mat decomposition_gap =
        -circuit_to_langevin(spec).drift.mat() + fields.conservative.mat() + fields.nonconservative.mat();
    diag["decomposition_residual"] = scalar_json(decomposition_gap.norm(), "voltage/charge", "analytic");
    const auto omega = implied_load(spec);
    res["implied_load"] = matrix_json(omega.mat(), "energy", "analytic");
    res["power"] = scalar_json(circuit_power(spec), "energy/time", "analytic");
    return {{{"results", res}, {"diagnostics", diag}}, std::nullopt};
}

inline ResultDocument run_field(const RunConfig& c) {
    const auto model = build_model(c).without_load();
    const SymMatrix sigma = c.grid.sigma ? SymMatrix(to_mat(*c.grid.sigma)) : steady_state_covariance(model);
    const Grid2D grid = Grid2D::centered(sigma, c.grid.margin, c.grid.nx, c.grid.ny);
    const auto rho = gaussian_density(grid, sigma);
    const auto sol = solve_confining_potential(rho, model.temperature(), model.params());
    const auto fs = source_force_field(rho, sol.potential, model.temperature(), model.params());
    const auto fl = scaled(fs, c.grid.load_alpha);
    const auto fl_opt = optimal_load_field(fs);
    const double p = power_quadrature(fl, fs, rho, model.params());
    const double p_opt = power_quadrature(fl_opt, fs, rho, model.params());
    const double p_heat = power_heat_decomposition(scaled(fl_opt, 1.0 / c.gamma), rho, model.temperature(), model.params());

    json res = {{"density_covariance", matrix_json(sigma.mat(), "length^2", "analytic")},
                {"power", scalar_json(p, "energy/time", "grid")},
                {"power_optimal", scalar_json(p_opt, "energy/time", "grid")},
                {"power_heat_decomposition", scalar_json(p_heat, "energy/time", "grid")},
                {"source_force_fit", matrix_json(fit_linear_force(fs, rho).mat(), "force/length", "grid")}};
    json diag = {{"poisson_residual", scalar_json(sol.relative_residual, "dimensionless", "grid")},
                 {"source_divergence", scalar_json(divergence_residual(fs, rho), "force/length^3", "grid")},
                 {"renormalization", scalar_json(rho.renormalization, "dimensionless", "grid")},
                 {"h_x", scalar_json(grid.hx(), "length", "grid")},
                 {"h_y", scalar_json(grid.hy(), "length", "grid")}};
    if (!c.grid.sigma) {
        // The Gaussian of Sigma_ss has the model's own quadratic potential as exact U_c.
        const auto exact = quadratic_potential(rho, model.stiffness());
        std::vector<double> d(grid.size());
        for (std::size_t k = 0; k < d.size(); ++k) d[k] = sol.potential.values[k] - exact.values[k];
        diag["potential_rel_error"] = scalar_json(rho_norm(rho, d) / rho_norm(rho, exact.values), "dimensionless", "grid");
        res["p_star_linear"] = scalar_json(max_power(model).p_star, "energy/time", "analytic");
    }
    ResultDocument doc{{{"results", res}, {"diagnostics", diag}}, std::nullopt};
    if (c.format == OutputFormat::Csv) {
        std::ostringstream csv;
        csv << "x,y,rho,U_c,fS_x,fS_y,fL_x,fL_y\n";
        for (int j = 0; j < grid.ny; ++j)
            for (int i = 0; i < grid.nx; ++i) {
                const auto k = grid.index(i, j);
                csv << fmt(grid.x(i)) << ',' << fmt(grid.y(j)) << ',' << fmt(rho.values[k]) << ','
                    << fmt(sol.potential.values[k]) << ',' << fmt(fs.x[k]) << ',' << fmt(fs.y[k]) << ',' << fmt(fl.x[k])
                    << ',' << fmt(fl.y[k]) << '\n';
            }
        doc.csv = csv.str();
    }
    return doc;
}

} // namespace detail

/// Executes a validated config. `threads` only affects speed, never results.
inline ResultDocument run(const RunConfig& config, unsigned threads = 0) {
    ResultDocument doc;
    switch (config.command) {
    case Command::Ness: doc = detail::run_ness(config); break;
    case Command::OptimalLoad: doc = detail::run_optimal_load(config); break;
    case Command::Sweep: doc = detail::run_sweep(config); break;
    case Command::Simulate: doc = detail::run_simulate(config, threads); break;
    case Command::Transient: doc = detail::run_transient(config); break;
    case Command::Circuit: doc = detail::run_circuit(config); break;
    case Command::Field: doc = detail::run_field(config); break;
    }
    doc.json["toolkit"] = {{"name", toolkit_name}, {"version", toolkit_version}};
    doc.json["command"] = std::string(to_string(config.command));
    doc.json["config"] = to_json(config);
    doc.json["seed"] = config.simulation.seed;
    return doc;
}

} // namespace gyrolab
