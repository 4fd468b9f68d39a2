#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "flsim/sim.hpp"

namespace flsim {

/// CSV schema version for rounds.csv; bump when columns change.
inline constexpr const char* kRoundsCsvHeader =
    "round,seed,cohort,outliers,goal_source,goal_target,accepted,skipped,"
    "gacc,srec,asr,blacklist_size";

/// Fills defaults and rejects unknown keys; the result is key-sorted and
/// suitable for hashing.
nlohmann::json normalize_config(const nlohmann::json& input);

/// FNV-1a over the canonical dump; stable under key reordering of the input.
std::uint64_t config_hash(const nlohmann::json& canonical);

/// Hash of the task section only, used to match runs in `compare`.
std::uint64_t task_hash(const nlohmann::json& canonical);

/// Builds the simulation config from a canonical config. When the task seed is
/// not pinned in the config it follows the master seed.
SimConfig build_sim_config(const nlohmann::json& canonical);

struct RunOptions {
    std::optional<std::uint64_t> seed_override;
    std::optional<double> malicious_rate_override;
    std::optional<std::string> aggregator_override;
    bool export_features = false;
};

void write_rounds_csv(const std::vector<RoundLog>& rounds, std::uint64_t seed,
                      std::ostream& out);

/// Executes one run and writes rounds.csv, summary.json, confusion_final.csv
/// and (optionally) per-round feature exports into out_dir. A marker file
/// flags partial runs and is removed on success.
nlohmann::json execute_run(const nlohmann::json& canonical, const RunOptions& options,
                           const std::filesystem::path& out_dir);

/// Side-by-side GAcc/SRec/ASR table over completed run directories with
/// best/second-best flags; throws on mismatched tasks.
std::string compare_runs(const std::vector<std::filesystem::path>& run_dirs,
                         std::ostream& csv_out);

double median(std::vector<double> values);
double interquartile_range(std::vector<double> values);

}  // namespace flsim
