#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <vector>

#include "flsim/experiment.hpp"

using nlohmann::json;

namespace {

int run_command(const std::string& config_path, const std::string& out_dir,
                std::optional<std::uint64_t> seed, int seed_count,
                const std::vector<double>& malicious_rates, const std::string& aggregator,
                bool export_features, bool verbose) {
    std::ifstream config_file(config_path);
    if (!config_file) {
        std::cerr << "error: cannot read config " << config_path << '\n';
        return 1;
    }
    json input;
    try {
        input = json::parse(config_file);
    } catch (const json::parse_error& e) {
        std::cerr << "error: " << config_path << ": " << e.what() << '\n';
        return 1;
    }

    json canonical;
    try {
        canonical = flsim::normalize_config(input);
    } catch (const std::exception& e) {
        std::cerr << "error: " << config_path << ": " << e.what() << '\n';
        return 1;
    }

    const std::uint64_t base_seed =
        seed.value_or(canonical.at("seed").get<std::uint64_t>());
    std::vector<std::optional<double>> rates;
    if (malicious_rates.empty())
        rates.push_back(std::nullopt);
    else
        for (double r : malicious_rates) rates.push_back(r);

    const bool sweep = seed_count > 1 || rates.size() > 1;
    std::vector<double> gaccs, srecs, asrs;
    try {
        for (const auto& rate : rates) {
            for (int s = 0; s < seed_count; ++s) {
                flsim::RunOptions options;
                options.seed_override = base_seed + static_cast<std::uint64_t>(s);
                options.malicious_rate_override = rate;
                if (!aggregator.empty()) options.aggregator_override = aggregator;
                options.export_features = export_features;

                std::filesystem::path dir = out_dir;
                if (sweep) {
                    std::string leaf = "seed_" + std::to_string(*options.seed_override);
                    if (rate) leaf = "rate_" + std::to_string(*rate) + "_" + leaf;
                    dir /= leaf;
                }
                const json summary = flsim::execute_run(canonical, options, dir);
                if (verbose) std::cout << summary.at("final").dump() << '\n';
                gaccs.push_back(summary.at("final").at("gacc").get<double>());
                if (!summary.at("final").at("srec").is_null())
                    srecs.push_back(summary.at("final").at("srec").get<double>());
                if (!summary.at("final").at("asr").is_null())
                    asrs.push_back(summary.at("final").at("asr").get<double>());
            }
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }

    if (sweep) {
        json sweep_summary = {{"runs", static_cast<int>(gaccs.size())},
                              {"gacc_median", flsim::median(gaccs)},
                              {"gacc_iqr", flsim::interquartile_range(gaccs)}};
        if (!srecs.empty()) {
            sweep_summary["srec_median"] = flsim::median(srecs);
            sweep_summary["srec_iqr"] = flsim::interquartile_range(srecs);
        }
        if (!asrs.empty()) {
            sweep_summary["asr_median"] = flsim::median(asrs);
            sweep_summary["asr_iqr"] = flsim::interquartile_range(asrs);
        }
        std::ofstream out(std::filesystem::path(out_dir) / "sweep_summary.json");
        out << sweep_summary.dump(2) << '\n';
        std::cout << sweep_summary.dump(2) << '\n';
    }
    return 0;
}

int compare_command(const std::vector<std::string>& dirs, const std::string& csv_path) {
    std::vector<std::filesystem::path> paths(dirs.begin(), dirs.end());
    try {
        std::ofstream csv(csv_path);
        std::cout << flsim::compare_runs(paths, csv);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Federated-learning label-flipping defense simulator"};
    app.require_subcommand(1);

    std::string config_path, out_dir, aggregator, csv_path = "compare.csv";
    std::optional<std::uint64_t> seed;
    int seed_count = 1;
    std::vector<double> malicious_rates;
    std::vector<std::string> compare_dirs;
    bool export_features = false, verbose = false;

    CLI::App* run = app.add_subcommand("run", "Execute one experiment or a sweep");
    run->add_option("-c,--config", config_path, "JSON config path")->required();
    run->add_option("-o,--out", out_dir, "Output directory")->required();
    run->add_option("-s,--seed", seed, "Master seed (overrides config)");
    run->add_option("-n,--seeds", seed_count, "Number of consecutive seeds to run")
        ->check(CLI::PositiveNumber);
    run->add_option("--malicious-rates", malicious_rates,
                    "Malicious-rate sweep values, e.g. 0.2 0.3 0.4 0.5");
    run->add_option("-a,--aggregator", aggregator,
                    "Aggregator override (fedavg|krum|tmean|median|foolsgold|defend)");
    run->add_flag("--export-features", export_features,
                  "Write per-round detection feature matrices");
    run->add_flag("-v,--verbose", verbose, "Print per-run final metrics");

    CLI::App* compare = app.add_subcommand("compare", "Tabulate completed runs side by side");
    compare->add_option("dirs", compare_dirs, "Run directories")->expected(-1);
    compare->add_option("--csv", csv_path, "Comparison CSV output path");

    CLI11_PARSE(app, argc, argv);

    if (run->parsed())
        return run_command(config_path, out_dir, seed, seed_count, malicious_rates,
                           aggregator, export_features, verbose);
    return compare_command(compare_dirs, csv_path);
}
