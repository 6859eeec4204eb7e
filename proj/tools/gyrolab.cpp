// gyrolab <command> --config <path> [--out <path>] [--format json|csv] [--seed N] [--threads N]
//
// GYROLAB_THREADS, when set, overrides --threads. Wall time goes to stderr so
// result files stay byte-identical between runs.

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "gyrolab/gyrolab.hpp"

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw gyrolab::Error(gyrolab::ErrorCode::IoError, "cannot read config " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_output(const std::string& text, const std::string& path) {
    if (path.empty()) {
        std::cout << text;
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw gyrolab::Error(gyrolab::ErrorCode::IoError, "cannot write " + path);
    out << text;
}

unsigned thread_count(unsigned flag) {
    if (const char* env = std::getenv("GYROLAB_THREADS")) {
        char* end = nullptr;
        const unsigned long v = std::strtoul(env, &end, 10);
        if (end != env && *end == '\0') return static_cast<unsigned>(v);
        throw gyrolab::Error(gyrolab::ErrorCode::RangeError, "GYROLAB_THREADS must be a non-negative integer");
    }
    return flag;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Anisotropic-temperature gyrator toolkit", "gyrolab"};
    app.set_version_flag("--version", gyrolab::toolkit_version);
    std::string command, config_path, out_path, format;
    std::optional<std::uint64_t> seed;
    unsigned threads = 0;
    app.add_option("command", command, "ness | optimal-load | sweep | simulate | transient | circuit | field")->required();
    app.add_option("--config", config_path, "JSON config file")->required();
    app.add_option("--out", out_path, "output file (default stdout)");
    app.add_option("--format", format, "json or csv")->check(CLI::IsMember({"json", "csv"}));
    app.add_option("--seed", seed, "overrides simulation.seed");
    app.add_option("--threads", threads, "worker threads, 0 = hardware concurrency");
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    const auto t0 = std::chrono::steady_clock::now();
    try {
        const auto cmd = gyrolab::parse_command(command);
        if (!cmd)
            throw gyrolab::ConfigError({{"command", gyrolab::ErrorCode::SchemaError, "unknown command " + command}});
        auto cfg = gyrolab::parse_config(read_file(config_path), cmd);
        if (seed) cfg.simulation.seed = *seed;
        if (!format.empty()) {
            cfg.format = format == "csv" ? gyrolab::OutputFormat::Csv : gyrolab::OutputFormat::Json;
            // Re-validate: csv is only offered for tabular commands.
            cfg = gyrolab::parse_config(gyrolab::to_json(cfg).dump(), cmd);
        }
        const auto doc = gyrolab::run(cfg, thread_count(threads));
        write_output(doc.csv ? *doc.csv : doc.json.dump(2) + "\n", out_path);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::cerr << "wall_time_s " << secs << "\n";
        return 0;
    } catch (const gyrolab::Error& e) {
        std::cout << gyrolab::error_document(e).dump(2) << "\n";
        return gyrolab::exit_code_for(e.code());
    } catch (const std::exception& e) {
        std::cout << nlohmann::json{{"error", {{"code", "InternalError"}, {"message", e.what()}, {"exit_code", 3}}}}.dump(2)
                  << "\n";
        return 3;
    }
}
