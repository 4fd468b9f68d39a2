#include "flsim/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

namespace flsim {

using nlohmann::json;

namespace {

json default_config() {
    return json{
        {"seed", 1},
        {"rounds", 40},
        {"clients",
         {{"count", 30}, {"malicious", 9}, {"cohort", 10}, {"dirichlet_alpha", 1.0}}},
        {"model", {{"hidden", {64}}}},
        {"task",
         {{"classes", 5},
          {"feature_dim", 32},
          {"center_scale", 3.0},
          {"spread", 1.0},
          {"train_per_class", 240},
          {"test_per_class", 100}}},
        {"train",
         {{"learning_rate", 0.03},
          {"momentum", 0.5},
          {"local_epochs", 3},
          {"batch_size", 32}}},
        {"aggregator", {{"type", "fedavg"}, {"krum_byzantine", 3}, {"trim_count", 3}}},
        {"attack", {{"mode", "none"}, {"pairs", json::array()}, {"flip_fraction", 1.0}}},
        {"defend",
         {{"srec_threshold", 0.1},
          {"asr_threshold", 0.1},
          {"rating_min", 0.0},
          {"rating_max", 1.0},
          {"rating_init_fraction", 0.8},
          {"reward", 0.05},
          {"penalty", 0.2}}},
    };
}

void merge_section(json& base, const json& overlay, const std::string& path) {
    for (const auto& [key, value] : overlay.items()) {
        const std::string at = path.empty() ? key : path + "." + key;
        // "task.seed" and "eval_pair" are optional extras, everything else
        // must already exist in the defaults.
        if (!base.contains(key)) {
            if (at == "task.seed" || at == "eval_pair" || at.rfind("eval_pair.", 0) == 0) {
                base[key] = value;
                continue;
            }
            throw ConfigError("unknown config key: " + at);
        }
        if (base[key].is_object() && value.is_object())
            merge_section(base[key], value, at);
        else
            base[key] = value;
    }
}

std::uint64_t fnv1a(const std::string& text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    std::ostringstream out;
    out << std::hex << std::setw(16) << std::setfill('0') << v;
    return out.str();
}

std::string join_ids(const std::vector<int>& ids) {
    std::ostringstream out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i > 0) out << ';';
        out << ids[i];
    }
    return out.str();
}

}  // namespace

json normalize_config(const json& input) {
    if (!input.is_object()) throw ConfigError("config root must be a JSON object");
    json canonical = default_config();
    merge_section(canonical, input, "");

    if (!canonical.contains("eval_pair")) {
        const json& pairs = canonical["attack"]["pairs"];
        if (!pairs.empty())
            canonical["eval_pair"] = {{"source", pairs[0]["source"]},
                                      {"target", pairs[0]["target"]}};
        else
            canonical["eval_pair"] = {{"source", 1}, {"target", 2}};
    }
    return canonical;
}

std::uint64_t config_hash(const json& canonical) { return fnv1a(canonical.dump()); }

std::uint64_t task_hash(const json& canonical) {
    json scope = {{"task", canonical.at("task")},
                  {"clients", canonical.at("clients")},
                  {"model", canonical.at("model")}};
    return fnv1a(scope.dump());
}

SimConfig build_sim_config(const json& canonical) {
    SimConfig cfg;
    cfg.master_seed = canonical.at("seed").get<std::uint64_t>();
    cfg.rounds = canonical.at("rounds").get<int>();

    const json& clients = canonical.at("clients");
    cfg.num_clients = clients.at("count").get<int>();
    cfg.num_malicious = clients.at("malicious").get<int>();
    cfg.cohort_size = clients.at("cohort").get<int>();
    cfg.dirichlet_alpha = clients.at("dirichlet_alpha").get<double>();

    cfg.hidden_sizes = canonical.at("model").at("hidden").get<std::vector<int>>();

    const json& task = canonical.at("task");
    const std::uint64_t task_seed =
        task.contains("seed") ? task.at("seed").get<std::uint64_t>() : cfg.master_seed;
    // "spread" is either one number for every class or an array with one
    // entry per class.
    const json& spread = task.at("spread");
    cfg.task = TaskSpec::random_blobs(
        task.at("classes").get<int>(), task.at("feature_dim").get<int>(),
        task.at("center_scale").get<double>(),
        spread.is_array() ? spread.at(0).get<double>() : spread.get<double>(),
        task.at("train_per_class").get<int>(), task.at("test_per_class").get<int>(),
        task_seed);
    if (spread.is_array()) {
        const std::vector<double> per_class = spread.get<std::vector<double>>();
        if (per_class.size() != static_cast<std::size_t>(cfg.task.num_classes()))
            throw ConfigError("per-class spread array must have one entry per class");
        for (int e = 0; e < cfg.task.num_classes(); ++e)
            cfg.task.spreads[e] = per_class[static_cast<std::size_t>(e)];
    }

    const json& train = canonical.at("train");
    cfg.train.learning_rate = train.at("learning_rate").get<double>();
    cfg.train.momentum = train.at("momentum").get<double>();
    cfg.train.local_epochs = train.at("local_epochs").get<int>();
    cfg.train.batch_size = train.at("batch_size").get<int>();

    const json& agg = canonical.at("aggregator");
    cfg.aggregator.type = aggregator_type_from_string(agg.at("type").get<std::string>());
    cfg.aggregator.krum_byzantine = agg.at("krum_byzantine").get<int>();
    cfg.aggregator.trim_count = agg.at("trim_count").get<int>();

    const json& attack = canonical.at("attack");
    const std::string mode = attack.at("mode").get<std::string>();
    if (mode == "none")
        cfg.attack.mode = AttackMode::none;
    else if (mode == "static")
        cfg.attack.mode = AttackMode::static_pair;
    else if (mode == "adaptive")
        cfg.attack.mode = AttackMode::adaptive;
    else
        throw ConfigError("unknown attack mode: " + mode);
    cfg.attack.flip_fraction = attack.at("flip_fraction").get<double>();
    for (const json& p : attack.at("pairs")) {
        FlipPair pair;
        pair.source = p.at("source").get<int>();
        pair.target = p.at("target").get<int>();
        pair.first_round = p.value("first_round", 1);
        pair.last_round = p.value("last_round", cfg.rounds);
        cfg.attack.pairs.push_back(pair);
    }

    const json& defend = canonical.at("defend");
    cfg.defend.srec_threshold = defend.at("srec_threshold").get<double>();
    cfg.defend.asr_threshold = defend.at("asr_threshold").get<double>();
    cfg.defend.rating_min = defend.at("rating_min").get<double>();
    cfg.defend.rating_max = defend.at("rating_max").get<double>();
    cfg.defend.rating_init_fraction = defend.at("rating_init_fraction").get<double>();
    cfg.defend.reward = defend.at("reward").get<double>();
    cfg.defend.penalty = defend.at("penalty").get<double>();

    cfg.eval_source = canonical.at("eval_pair").at("source").get<int>();
    cfg.eval_target = canonical.at("eval_pair").at("target").get<int>();

    cfg.validate();
    return cfg;
}

void write_rounds_csv(const std::vector<RoundLog>& rounds, std::uint64_t seed,
                      std::ostream& out) {
    out << kRoundsCsvHeader << '\n';
    out << std::setprecision(17);
    for (const RoundLog& r : rounds) {
        out << r.round << ',' << seed << ',' << join_ids(r.cohort) << ','
            << join_ids(r.outliers) << ',';
        if (r.goal)
            out << r.goal->source_class << ',' << r.goal->target_class;
        else
            out << ',';
        out << ',' << (r.accepted ? 1 : 0) << ',' << (r.round_skipped ? 1 : 0) << ','
            << r.test_metrics.gacc << ',';
        if (r.test_metrics.srec) out << *r.test_metrics.srec;
        out << ',';
        if (r.test_metrics.asr) out << *r.test_metrics.asr;
        out << ',' << r.blacklist.size() << '\n';
    }
}

json execute_run(const json& canonical_in, const RunOptions& options,
                 const std::filesystem::path& out_dir) {
    json canonical = canonical_in;
    if (options.seed_override) {
        canonical["seed"] = *options.seed_override;
    }
    if (options.malicious_rate_override) {
        const int count = canonical["clients"]["count"].get<int>();
        canonical["clients"]["malicious"] =
            static_cast<int>(std::lround(*options.malicious_rate_override * count));
    }
    if (options.aggregator_override)
        canonical["aggregator"]["type"] = *options.aggregator_override;

    const SimConfig cfg = build_sim_config(canonical);

    std::filesystem::create_directories(out_dir);
    const std::filesystem::path marker = out_dir / ".incomplete";
    std::ofstream(marker).put('\n');

    const ExperimentResult result = run_experiment(cfg);

    {
        std::ofstream rounds_file(out_dir / "rounds.csv");
        write_rounds_csv(result.rounds, cfg.master_seed, rounds_file);
    }
    {
        std::ofstream confusion_file(out_dir / "confusion_final.csv");
        write_confusion_csv(result.rounds.back().test_metrics, confusion_file);
    }
    {
        // Wall-clock timings live apart from rounds.csv so the latter stays
        // byte-reproducible.
        std::ofstream timing_file(out_dir / "timing.csv");
        timing_file << "round,detection_seconds\n" << std::setprecision(9);
        for (const RoundLog& r : result.rounds)
            timing_file << r.round << ',' << r.detection_seconds << '\n';
    }
    if (options.export_features) {
        for (const RoundLog& r : result.rounds) {
            if (r.features.size() == 0) continue;
            std::ofstream features_file(
                out_dir / ("features_round_" + std::to_string(r.round) + ".csv"));
            features_file << std::setprecision(17);
            for (Eigen::Index i = 0; i < r.features.rows(); ++i) {
                for (Eigen::Index j = 0; j < r.features.cols(); ++j) {
                    if (j > 0) features_file << ',';
                    features_file << r.features(i, j);
                }
                features_file << '\n';
            }
        }
    }

    const MetricSnapshot& final_metrics = result.rounds.back().test_metrics;
    json summary = {
        {"config", canonical},
        {"config_hash", hex64(config_hash(canonical))},
        {"task_hash", hex64(task_hash(canonical))},
        {"seed", cfg.master_seed},
        {"aggregator", to_string(cfg.aggregator.type)},
        {"rounds", cfg.rounds},
        {"final",
         {{"gacc", final_metrics.gacc},
          {"srec", final_metrics.srec ? json(*final_metrics.srec) : json()},
          {"asr", final_metrics.asr ? json(*final_metrics.asr) : json()}}},
        {"malicious_ids", result.malicious_ids},
        {"blacklist", std::vector<int>(result.rounds.back().blacklist.begin(),
                                       result.rounds.back().blacklist.end())},
    };
    {
        std::ofstream summary_file(out_dir / "summary.json");
        summary_file << summary.dump(2) << '\n';
    }
    {
        std::ofstream config_file(out_dir / "config.json");
        config_file << canonical.dump(2) << '\n';
    }
    std::filesystem::remove(marker);
    return summary;
}

std::string compare_runs(const std::vector<std::filesystem::path>& run_dirs,
                         std::ostream& csv_out) {
    if (run_dirs.size() < 2) throw ConfigError("compare needs at least two run directories");

    struct Row {
        std::string name;
        std::string task;
        double gacc = 0.0;
        std::optional<double> srec, asr;
    };
    std::vector<Row> rows;
    for (const auto& dir : run_dirs) {
        std::ifstream in(dir / "summary.json");
        if (!in) throw ConfigError("missing summary.json in " + dir.string());
        json summary = json::parse(in);
        Row row;
        row.name = summary.at("aggregator").get<std::string>();
        row.task = summary.at("task_hash").get<std::string>();
        row.gacc = summary.at("final").at("gacc").get<double>();
        if (!summary.at("final").at("srec").is_null())
            row.srec = summary.at("final").at("srec").get<double>();
        if (!summary.at("final").at("asr").is_null())
            row.asr = summary.at("final").at("asr").get<double>();
        rows.push_back(std::move(row));
    }
    for (const Row& row : rows)
        if (row.task != rows.front().task)
            throw ConfigError("compare: run directories use different tasks");

    // Rank marks: * best, + second best. GAcc/SRec high is good, ASR low.
    auto ranks = [&](auto value_of, bool higher_better) {
        std::vector<int> order(rows.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            const double va = value_of(rows[static_cast<std::size_t>(a)]);
            const double vb = value_of(rows[static_cast<std::size_t>(b)]);
            return higher_better ? va > vb : va < vb;
        });
        std::vector<char> mark(rows.size(), ' ');
        if (!order.empty()) mark[static_cast<std::size_t>(order[0])] = '*';
        if (order.size() > 1) mark[static_cast<std::size_t>(order[1])] = '+';
        return mark;
    };
    auto gacc_of = [](const Row& r) { return r.gacc; };
    auto srec_of = [](const Row& r) { return r.srec.value_or(-1.0); };
    auto asr_of = [](const Row& r) { return r.asr.value_or(2.0); };
    const auto gacc_marks = ranks(gacc_of, true);
    const auto srec_marks = ranks(srec_of, true);
    const auto asr_marks = ranks(asr_of, false);

    std::ostringstream table;
    table << std::left << std::setw(12) << "aggregator" << std::right << std::setw(10)
          << "gacc" << std::setw(10) << "srec" << std::setw(10) << "asr" << '\n';
    csv_out << "aggregator,gacc,srec,asr,gacc_rank,srec_rank,asr_rank\n";
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const Row& r = rows[i];
        table << std::left << std::setw(12) << r.name << std::right << std::fixed
              << std::setprecision(4) << std::setw(9) << r.gacc << gacc_marks[i]
              << std::setw(9) << r.srec.value_or(std::nan("")) << srec_marks[i]
              << std::setw(9) << r.asr.value_or(std::nan("")) << asr_marks[i] << '\n';
        csv_out << r.name << ',' << r.gacc << ',';
        if (r.srec) csv_out << *r.srec;
        csv_out << ',';
        if (r.asr) csv_out << *r.asr;
        csv_out << ',' << gacc_marks[i] << ',' << srec_marks[i] << ',' << asr_marks[i]
                << '\n';
    }
    return table.str();
}

double median(std::vector<double> values) {
    if (values.empty()) throw ConfigError("median of empty set");
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

double interquartile_range(std::vector<double> values) {
    if (values.size() < 2) return 0.0;
    std::sort(values.begin(), values.end());
    auto quantile = [&](double q) {
        const double pos = q * (static_cast<double>(values.size()) - 1.0);
        const std::size_t lo = static_cast<std::size_t>(pos);
        const double frac = pos - static_cast<double>(lo);
        if (lo + 1 >= values.size()) return values.back();
        return values[lo] * (1.0 - frac) + values[lo + 1] * frac;
    };
    return quantile(0.75) - quantile(0.25);
}

}  // namespace flsim
