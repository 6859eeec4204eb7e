#include <algorithm>
#include <cstdio>
#include <functional>
#include <sys/wait.h>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "gyrolab/gyrolab.hpp"

using namespace gyrolab;

namespace {

const char* kWorked = R"({"command": "ness", "K_c": [[2, 1], [1, 2]], "T": [1, 2], "k_B": 1, "gamma": 1})";

std::vector<ConfigIssue> issues_of(const std::string& text) {
    try {
        parse_config(text);
    } catch (const ConfigError& e) {
        return e.issues();
    }
    return {};
}

bool has_issue(const std::vector<ConfigIssue>& v, const std::string& path, ErrorCode code) {
    for (const auto& i : v)
        if (i.path == path && i.code == code) return true;
    return false;
}

struct Process {
    int status = -1;
    std::string out;
};

Process run_cli(const std::string& args, const std::string& env = "") {
    Process p;
    const std::string cmd = env + " " + std::string(GYROLAB_CLI_PATH) + " " + args + " 2>/dev/null";
    FILE* f = popen(cmd.c_str(), "r");
    char buf[4096];
    std::size_t n;
    while ((n = fread(buf, 1, sizeof buf, f)) > 0) p.out.append(buf, n);
    const int st = pclose(f);
    p.status = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
    return p;
}

std::string write_temp(const std::string& name, const std::string& text) {
    const std::string path = ::testing::TempDir() + name;
    std::ofstream(path) << text;
    return path;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

TEST(ParseConfig, MinimalNessIsValid) {
    const auto c = parse_config(kWorked);
    EXPECT_EQ(c.command, Command::Ness);
    EXPECT_EQ(c.K_c.size(), 2u);
    EXPECT_EQ(c.T[1], 2.0);
}

TEST(ParseConfig, DefaultsToNaturalUnits) {
    const auto c = parse_config(R"({"command": "ness", "K_c": [[1]], "T": [1]})");
    EXPECT_EQ(c.k_B, 1.0);
    EXPECT_EQ(c.gamma, 1.0);
}

TEST(ParseConfig, NegativeTemperatureNamesIndex) {
    const auto v = issues_of(R"({"command": "ness", "K_c": [[2, 1], [1, 2]], "T": [1, -2]})");
    EXPECT_TRUE(has_issue(v, "T[1]", ErrorCode::RangeError));
    try {
        parse_config(R"({"command": "ness", "K_c": [[2, 1], [1, 2]], "T": [1, -2]})");
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::RangeError);
    }
}

TEST(ParseConfig, UnknownKeyGivesPath) {
    auto v = issues_of(R"({"command": "ness", "K_c": [[1]], "T": [1], "temprature": 3})");
    EXPECT_TRUE(has_issue(v, "temprature", ErrorCode::SchemaError));
    v = issues_of(R"({"command": "simulate", "K_c": [[1]], "T": [1], "simulation": {"dtt": 0.1}})");
    EXPECT_TRUE(has_issue(v, "simulation.dtt", ErrorCode::SchemaError));
}

TEST(ParseConfig, AggregatesEveryIssue) {
    const auto v = issues_of(
        R"({"command": "ness", "K_c": [[1, 2], [2, 1]], "T": [0, -1], "gamma": -1, "extra": 1})");
    EXPECT_TRUE(has_issue(v, "K_c", ErrorCode::RangeError));
    EXPECT_TRUE(has_issue(v, "T[0]", ErrorCode::RangeError));
    EXPECT_TRUE(has_issue(v, "T[1]", ErrorCode::RangeError));
    EXPECT_TRUE(has_issue(v, "gamma", ErrorCode::RangeError));
    EXPECT_TRUE(has_issue(v, "extra", ErrorCode::SchemaError));
}

TEST(ParseConfig, TypeAndShapeErrors) {
    EXPECT_TRUE(has_issue(issues_of(R"({"command": "ness", "K_c": [[1, 0]], "T": [1]})"), "K_c[0]", ErrorCode::SchemaError));
    EXPECT_TRUE(has_issue(issues_of(R"({"command": "ness", "K_c": [[1]], "T": "hot"})"), "T", ErrorCode::SchemaError));
    EXPECT_TRUE(has_issue(issues_of(R"({"command": "fly", "K_c": [[1]], "T": [1]})"), "command", ErrorCode::SchemaError));
    EXPECT_TRUE(has_issue(issues_of(R"({"command": "ness", "K_c": [[1]], "T": [1], "format": "csv"})"), "format",
                          ErrorCode::SchemaError));
    EXPECT_TRUE(has_issue(issues_of("[1, 2"), "$", ErrorCode::SchemaError));
}

TEST(ParseConfig, RoundTripOfEchoedConfig) {
    for (const char* text :
         {kWorked,
          R"({"command": "simulate", "K_c": [[2, 1], [1, 2]], "T": [1, 2], "load_alpha": 0.5,
              "simulation": {"dt": 0.001, "n_steps": 20000, "burn_in": 100, "n_trajectories": 2, "seed": 7,
                             "initial_covariance": [[1, 0], [0, 1]]}})",
          R"({"command": "circuit", "circuit": {"C1": 1, "C2": 2, "Cc": 1, "R": 1, "T": [1, 2], "design_alpha": 0.5}})",
          R"({"command": "field", "K_c": [[2, 1], [1, 2]], "T": [1, 2], "gamma": 0.3,
              "grid": {"nx": 32, "ny": 48, "margin": 7.5, "sigma": [[1, 0.2], [0.2, 1]]}, "format": "csv"})",
          R"({"command": "sweep", "K_c": [[2, 1], [1, 2]], "T": [1, 2], "alphas": [0, 0.1, 0.30000000000000004]})"}) {
        const auto c = parse_config(text);
        const auto echoed = run(c).json.at("config");
        EXPECT_EQ(parse_config(echoed.dump()), c) << text;
    }
}

TEST(Run, WorkedSweepFitsQuadratic) {
    auto c = parse_config(R"({"command": "sweep", "K_c": [[2, 1], [1, 2]], "T": [1, 2], "n_alpha": 101, "format": "csv"})");
    const auto doc = run(c);
    ASSERT_TRUE(doc.csv);
    std::istringstream in(*doc.csv);
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "alpha,P,P_quadratic");
    int rows = 0;
    while (std::getline(in, line)) {
        double a = 0, p = 0;
        ASSERT_EQ(std::sscanf(line.c_str(), "%lf,%lf", &a, &p), 2);
        EXPECT_NEAR(p, 4.0 / 22.0 * a * (1.0 - a), 1e-12);
        ++rows;
    }
    EXPECT_EQ(rows, 101);
}

TEST(Run, DiagonalNessIsBalanced) {
    const auto doc = run(parse_config(R"({"command": "ness", "K_c": [[2, 0], [0, 3]], "T": [1, 2]})"));
    const auto& r = doc.json.at("results");
    EXPECT_TRUE(r.at("detailed_balance").get<bool>());
    EXPECT_EQ(r.at("p_star").at("value").get<double>(), 0.0);
}

TEST(Run, DocumentCarriesUnitsAndProvenance) {
    const auto doc = run(parse_config(kWorked));
    EXPECT_EQ(doc.json.at("toolkit").at("version"), toolkit_version);
    const auto& s = doc.json.at("results").at("sigma_ss");
    EXPECT_EQ(s.at("n"), 2);
    EXPECT_EQ(s.at("data").size(), 4u);
    EXPECT_EQ(s.at("provenance"), "analytic");
    EXPECT_NEAR(s.at("data")[1].get<double>(), -0.5, 1e-12);
    // Every numeric leaf in results and diagnostics sits in an object with unit and provenance.
    std::function<void(const nlohmann::json&, const std::string&)> walk = [&](const nlohmann::json& j,
                                                                          const std::string& path) {
        if (j.is_object()) {
            if (j.contains("unit")) {
                EXPECT_TRUE(j.contains("provenance")) << path;
                return;
            }
            for (const auto& [k, v] : j.items()) walk(v, path + "." + k);
        } else if (j.is_array()) {
            for (std::size_t i = 0; i < j.size(); ++i) walk(j[i], path + "[" + std::to_string(i) + "]");
        } else {
            EXPECT_FALSE(j.is_number()) << path;
        }
    };
    for (const char* text :
         {kWorked, R"({"command": "optimal-load", "K_c": [[2, 1], [1, 2]], "T": [1, 2]})",
          R"({"command": "sweep", "K_c": [[2, 1], [1, 2]], "T": [1, 2], "n_alpha": 5})",
          R"({"command": "transient", "K_c": [[2, 1], [1, 2]], "T": [1, 2], "transient": {"t_end": 1, "store_every": 50}})",
          R"({"command": "simulate", "K_c": [[2, 1], [1, 2]], "T": [1, 2], "simulation": {"n_steps": 20000, "burn_in": 100, "n_trajectories": 1}})",
          R"({"command": "circuit", "circuit": {"C1": 1, "C2": 2, "Cc": 1, "R": 1, "T": [1, 2], "design_alpha": 0.5}})",
          R"({"command": "field", "K_c": [[2, 1], [1, 2]], "T": [1, 2], "grid": {"nx": 32, "ny": 32}})"}) {
        const auto d = run(parse_config(text));
        walk(d.json.at("results"), "results");
        walk(d.json.at("diagnostics"), "diagnostics");
    }
}

TEST(Run, SimulateIsByteIdentical) {
    auto c = parse_config(R"({"command": "simulate", "K_c": [[2, 1], [1, 2]], "T": [1, 2], "load_alpha": 0.5,
                              "simulation": {"n_steps": 30000, "burn_in": 100, "n_trajectories": 5, "seed": 3}})");
    EXPECT_EQ(run(c, 1).json.dump(), run(c, 4).json.dump());
    EXPECT_EQ(run(c, 2).json.dump(), run(c, 2).json.dump());
}

TEST(Run, FieldCsvHasCoordinateColumns) {
    const auto doc = run(parse_config(
        R"({"command": "field", "K_c": [[2, 1], [1, 2]], "T": [1, 2], "grid": {"nx": 20, "ny": 24}, "format": "csv"})"));
    ASSERT_TRUE(doc.csv);
    EXPECT_EQ(doc.csv->substr(0, doc.csv->find('\n')), "x,y,rho,U_c,fS_x,fS_y,fL_x,fL_y");
    EXPECT_EQ(std::count(doc.csv->begin(), doc.csv->end(), '\n'), 20 * 24 + 1);
}

TEST(ExitCodes, Mapping) {
    EXPECT_EQ(exit_code_for(ErrorCode::SchemaError), 2);
    EXPECT_EQ(exit_code_for(ErrorCode::RangeError), 2);
    EXPECT_EQ(exit_code_for(ErrorCode::NotStable), 3);
    EXPECT_EQ(exit_code_for(ErrorCode::DomainTooSmall), 3);
    EXPECT_EQ(exit_code_for(ErrorCode::NoConvergence), 4);
}

TEST(Binary, SuccessAndOutputFile) {
    const std::string out = ::testing::TempDir() + "ness.json";
    const auto p = run_cli(std::string("ness --config ") + GYROLAB_CONFIG_DIR + "/worked_ness.json --out " + out);
    EXPECT_EQ(p.status, 0);
    const auto doc = nlohmann::json::parse(slurp(out));
    EXPECT_NEAR(doc.at("results").at("p_star").at("value").get<double>(), 1.0 / 22.0, 1e-12);
}

TEST(Binary, ConfigErrorExitsWithTwo) {
    const auto path = write_temp("bad.json", R"({"K_c": [[2, 1], [1, 2]], "T": [1, -2], "bogus": 1})");
    const auto p = run_cli("ness --config " + path);
    EXPECT_EQ(p.status, 2);
    const auto doc = nlohmann::json::parse(p.out);
    EXPECT_EQ(doc.at("error").at("code"), "SchemaError");
    EXPECT_EQ(doc.at("error").at("fields").size(), 2u);
    EXPECT_EQ(run_cli("ness --config /nonexistent/x.json").status, 2);
    EXPECT_EQ(run_cli("teleport --config " + path).status, 2);
}

TEST(Binary, NumericalFailureExitsWithThree) {
    const auto path = write_temp("unstable.json", R"({"K_c": [[2, 1], [1, 2]], "T": [1, 2],
        "simulation": {"dt": 2.0, "n_steps": 100000, "burn_in": 10, "n_trajectories": 1}})");
    const auto p = run_cli("simulate --config " + path);
    EXPECT_EQ(p.status, 3);
    EXPECT_EQ(nlohmann::json::parse(p.out).at("error").at("code"), "UnstableIntegration");
}

TEST(Binary, SeedAndThreadOverrides) {
    const auto path = write_temp("sim.json", R"({"K_c": [[2, 1], [1, 2]], "T": [1, 2], "load_alpha": 0.5,
        "simulation": {"n_steps": 20000, "burn_in": 100, "n_trajectories": 3, "seed": 1}})");
    const auto a = run_cli("simulate --config " + path + " --seed 9 --threads 1");
    const auto b = run_cli("simulate --config " + path + " --seed 9 --threads 3");
    const auto c = run_cli("simulate --config " + path + " --seed 9 --threads 1", "GYROLAB_THREADS=2");
    EXPECT_EQ(a.status, 0);
    EXPECT_EQ(a.out, b.out);
    EXPECT_EQ(nlohmann::json::parse(a.out).at("seed"), 9);
    const auto d = run_cli("simulate --config " + path + " --seed 10");
    EXPECT_NE(a.out, d.out);
    EXPECT_EQ(c.status, 0);
    EXPECT_EQ(a.out, c.out);
    EXPECT_EQ(run_cli("simulate --config " + path, "GYROLAB_THREADS=lots").status, 2);
}

TEST(Binary, FormatFlag) {
    const auto p = run_cli(std::string("sweep --format csv --config ") + GYROLAB_CONFIG_DIR + "/worked_sweep.json");
    EXPECT_EQ(p.status, 0);
    EXPECT_EQ(p.out.substr(0, 19), "alpha,P,P_quadratic");
    EXPECT_EQ(run_cli(std::string("ness --format csv --config ") + GYROLAB_CONFIG_DIR + "/worked_ness.json").status, 2);
}
