// Command-line front end: `verify` runs property checks against a scenario,
// `simulate` produces an observer run as CSV, `report` summarizes saved
// verification reports.

#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "linobs/errors.hpp"
#include "linobs/scenario.hpp"
#include "linobs/suite.hpp"
#include "linobs/version.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitVerificationFailed = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

std::vector<std::string> split_checks(const std::string& spec) {
    std::vector<std::string> out;
    if (spec.empty() || spec == "all") return out;
    std::stringstream ss(spec);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

void write_text(const std::string& path, const std::string& text) {
    if (path.empty()) {
        std::cout << text;
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw linobs::ConfigError("cannot open output file '" + path + "'");
    out << text;
}

int cmd_verify(const std::string& config, const std::string& suite_spec,
               const std::string& out_path, double tol_scale) {
    const linobs::Scenario sc = linobs::load_scenario(config);
    const linobs::SuiteResult result =
        linobs::run_suite(sc, split_checks(suite_spec), tol_scale);
    write_text(out_path, linobs::suite_to_json(result).dump(2) + "\n");
    if (!out_path.empty()) {
        std::cerr << "wrote " << out_path << " ("
                  << (result.meets_expectations() ? "ok" : "expectation mismatch") << ")\n";
    }
    return result.meets_expectations() ? kExitOk : kExitVerificationFailed;
}

int cmd_simulate(const std::string& config, const std::string& out_path, long long seed) {
    const linobs::Scenario sc = linobs::load_scenario(config);
    if (!sc.observer) throw linobs::ConfigError("scenario has no observer section");
    linobs::ObserverConfig cfg = *sc.observer;
    if (seed >= 0) cfg.seed = static_cast<std::uint64_t>(seed);
    const linobs::ObserverRun run = linobs::run_observer(cfg);
    std::ostringstream csv;
    linobs::write_observer_csv(run, csv);
    write_text(out_path, csv.str());

    double p_min = run.p_trace.front(), p_max = p_min;
    for (double p : run.p_trace) {
        p_min = std::min(p_min, p);
        p_max = std::max(p_max, p);
    }
    linobs::Json summary = {
        {"scenario", sc.name},
        {"seed", cfg.seed},
        {"final_error_rad", run.final_error()},
        {"rms_error_rad", run.rms_error(cfg.duration / 2.0)},
        {"p_trace", {{"min", p_min}, {"max", p_max}, {"final", run.p_trace.back()}}},
    };
    // the summary rides next to the CSV so the CSV itself stays byte-stable
    if (out_path.empty()) {
        std::cerr << summary.dump(2) << "\n";
    } else {
        write_text(out_path + ".summary.json", summary.dump(2) + "\n");
    }
    return kExitOk;
}

int cmd_report(const std::vector<std::string>& paths) {
    bool all_ok = true;
    for (const std::string& path : paths) {
        std::ifstream in(path);
        if (!in) throw linobs::ConfigError("cannot open report '" + path + "'");
        linobs::Json j;
        try {
            in >> j;
        } catch (const linobs::Json::parse_error& e) {
            throw linobs::ConfigError("report '" + path + "': " + e.what());
        }
        const bool ok = j.value("meets_expectations", false);
        all_ok = all_ok && ok;
        std::cout << j.value("scenario", std::string("?")) << " ["
                  << j.value("scenario_digest", std::string("?")) << "] "
                  << (ok ? "OK" : "MISMATCH") << "\n";
        for (const auto& c : j.value("checks", linobs::Json::array())) {
            std::cout << "  " << c.value("name", std::string("?")) << ": "
                      << c.value("status", std::string("?")) << " (expected "
                      << c.value("expected", std::string("pass")) << "), residual "
                      << c.value("max_residual", 0.0) << " vs " << c.value("tolerance", 0.0)
                      << "\n";
        }
    }
    return all_ok ? kExitOk : kExitVerificationFailed;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"affine-connection flow verification and attitude observer runs"};
    app.set_version_flag("--version", linobs::kVersion);
    app.require_subcommand(1);

    double tol_scale = 1.0;
    app.add_option("--tolerance-scale", tol_scale, "scale every check tolerance")
        ->check(CLI::PositiveNumber);

    auto* verify = app.add_subcommand("verify", "run property checks for a scenario");
    std::string verify_config, verify_suite = "all", verify_out;
    verify->add_option("--config", verify_config, "scenario JSON file")->required();
    verify->add_option("--suite", verify_suite,
                       "comma-separated check names, or 'all' for every applicable check");
    verify->add_option("--out", verify_out, "report JSON path (default: stdout)");

    auto* simulate = app.add_subcommand("simulate", "run the attitude observer and emit CSV");
    std::string sim_config, sim_out;
    long long sim_seed = -1;
    simulate->add_option("--config", sim_config, "scenario JSON file")->required();
    simulate->add_option("--out", sim_out, "CSV path (default: stdout)");
    simulate->add_option("--seed", sim_seed, "override the observer seed");

    auto* report = app.add_subcommand("report", "summarize saved verification reports");
    std::vector<std::string> report_paths;
    report->add_option("paths", report_paths, "report JSON files")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (verify->parsed()) return cmd_verify(verify_config, verify_suite, verify_out, tol_scale);
        if (simulate->parsed()) return cmd_simulate(sim_config, sim_out, sim_seed);
        if (report->parsed()) return cmd_report(report_paths);
    } catch (const linobs::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const linobs::Error& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumerical;
    }
    return kExitConfig;
}
