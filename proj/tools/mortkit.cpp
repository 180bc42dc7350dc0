#include "mortkit/fixture.hpp"
#include "mortkit/pipeline.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <thread>

namespace fs = std::filesystem;
using namespace mortkit;

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kPartialFailure = 2;

nlohmann::json read_json(const fs::path& p) {
    const auto path = fs::is_directory(p) ? p / "report.json" : p;
    try {
        return nlohmann::json::parse(csv::read_text(path));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("'" + path.string() + "': " + e.what());
    }
}

int cmd_run(const fs::path& config_path, std::optional<unsigned> jobs, std::optional<std::uint64_t> seed,
            std::optional<fs::path> out) {
    RunConfig config;
    try {
        config = load_run_config(config_path);
    } catch (const std::exception& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return kConfigError;
    }
    RunOptions opts;
    opts.jobs = jobs.value_or(0);
    opts.seed = seed;
    opts.out_dir = out;
    RunReport r;
    try {
        r = run_pipeline(std::move(config), opts);
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return kConfigError;
    } catch (const std::exception& e) {
        // ingestion and ungrouping are shared by every scenario
        std::cerr << "input error: " << e.what() << "\n";
        return kConfigError;
    }
    for (const auto& w : r.report.at("warnings")) std::cerr << "warning: " << w.get<std::string>() << "\n";
    for (const auto& s : r.report.at("scenarios")) {
        std::cout << s.at("label").get<std::string>() << ": " << s.at("status").get<std::string>();
        if (s.contains("error")) std::cout << " [" << s.at("stage").get<std::string>() << "] " << s.at("error").get<std::string>();
        std::cout << "\n";
    }
    return r.failures == 0 ? kOk : kPartialFailure;
}

int cmd_fixture(const fs::path& params_path, const fs::path& out) {
    try {
        const auto params = parse_fixture_params(nlohmann::json::parse(csv::read_text(params_path)));
        const auto res = make_synthetic_fixture(params, out);
        std::cout << res.config_path.string() << "\n";
        return kOk;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
    } catch (const std::exception& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
    }
    return kConfigError;
}

int cmd_diff(const fs::path& a, const fs::path& b) {
    try {
        const auto d = diff_reports(read_json(a), read_json(b));
        std::cout << d.dump(2) << "\n";
        return kOk;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kConfigError;
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-population mortality projection with pandemic-year scenarios"};
    app.require_subcommand(1);

    auto* run = app.add_subcommand("run", "Run every scenario of a configuration");
    std::string config_path;
    std::optional<unsigned> jobs;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    run->add_option("--config", config_path, "Run configuration (JSON)")->required();
    run->add_option("--jobs", jobs, "Scenarios run in parallel (default: one per scenario)")->check(CLI::PositiveNumber);
    run->add_option("--seed", seed, "Override the simulation seed");
    run->add_option("--out", out, "Override the output directory");

    auto* fixture = app.add_subcommand("fixture", "Write a synthetic dataset and its run configuration");
    std::string params_path, fixture_out;
    fixture->add_option("--params", params_path, "Generator parameters (JSON)")->required();
    fixture->add_option("--out", fixture_out, "Output directory")->required();

    auto* diff = app.add_subcommand("diff", "Per-quantity deltas B - A between two reports");
    std::string report_a, report_b;
    diff->add_option("A", report_a, "Report file or run directory")->required();
    diff->add_option("B", report_b, "Report file or run directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kOk : kConfigError;
    }

    if (*run) {
        return cmd_run(config_path, jobs, seed, out ? std::optional<fs::path>(*out) : std::nullopt);
    }
    if (*fixture) return cmd_fixture(params_path, fixture_out);
    return cmd_diff(report_a, report_b);
}
