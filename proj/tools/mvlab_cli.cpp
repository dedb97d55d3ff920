#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "experiments.hpp"
#include "mvlab/errors.hpp"
#include "mvlab/parallel.hpp"

namespace fs = std::filesystem;
using mvlab::cli::json;

namespace {

enum Exit { kOk = 0, kFail = 1, kInvalidConfig = 2, kDiverged = 3 };

struct Options {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    std::optional<int> threads;
    std::vector<std::string> assignments;
};

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << content;
}

json read_config(const std::string& path) {
    if (path.empty()) return nullptr;
    std::ifstream in(path);
    if (!in) throw mvlab::ConfigurationError("cannot open config file " + path, "--config");
    json j = json::parse(in, nullptr, false, true);
    if (j.is_discarded()) throw mvlab::ConfigurationError("config file " + path + " is not valid JSON", "--config");
    return j;
}

int run(const std::string& experiment, const Options& opt) {
    json config;
    try {
        config = mvlab::cli::resolve_config(experiment, read_config(opt.config_path), opt.seed, opt.assignments,
                                            std::getenv("MVLAB_SEED"));
        if (opt.threads) {
            if (*opt.threads < 1) throw mvlab::ConfigurationError("threads must be at least 1", "threads");
            config["threads"] = *opt.threads;
        }
        if (!opt.out_dir.empty()) config["output_dir"] = opt.out_dir;
    } catch (const mvlab::ConfigurationError& e) {
        std::cerr << "invalid config: " << e.what() << " [key: " << e.key() << "]\n";
        return kInvalidConfig;
    }
    mvlab::set_threads(config.at("threads").get<int>());
    const fs::path out_dir = config.at("output_dir").get<std::string>();
    fs::create_directories(out_dir);

    const auto start = std::chrono::steady_clock::now();
    const std::string timestamp = utc_timestamp();
    json manifest = {{"schema", mvlab::cli::kManifestSchema},
                     {"version", mvlab::cli::kVersion},
                     {"experiment", experiment},
                     {"timestamp", timestamp},
                     {"config", config}};
    mvlab::cli::Outcome outcome;
    try {
        outcome = mvlab::cli::run_experiment(experiment, config);
    } catch (const mvlab::ConfigurationError& e) {
        std::cerr << "invalid config: " << e.what() << " [key: " << e.key() << "]\n";
        return kInvalidConfig;
    } catch (const mvlab::SimulationDiverged& e) {
        const json diag = {{"schema", mvlab::cli::kSummarySchema},
                           {"version", mvlab::cli::kVersion},
                           {"experiment", experiment},
                           {"seed", config.at("seed")},
                           {"status", "DIVERGED"},
                           {"diagnostics", {{"error", e.what()}, {"time", e.time()}}},
                           {"timestamp", timestamp}};
        write_file(out_dir / "summary.json", mvlab::cli::sanitize(diag).dump(2) + "\n");
        write_file(out_dir / "manifest.json", mvlab::cli::sanitize(manifest).dump(2) + "\n");
        std::cerr << "simulation diverged: " << e.what() << "\n";
        return kDiverged;
    }
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    json artifacts = json::array();
    for (const auto& a : outcome.artifacts) {
        write_file(out_dir / a.name, a.content);
        artifacts.push_back(a.name);
    }
    manifest["artifacts"] = artifacts;
    manifest["runtime_seconds"] = elapsed;
    write_file(out_dir / "manifest.json", mvlab::cli::sanitize(manifest).dump(2) + "\n");
    const json summary = mvlab::cli::summary_json(experiment, config, outcome, timestamp);
    write_file(out_dir / "summary.json", summary.dump(2) + "\n");

    for (const auto& c : outcome.criteria)
        std::cout << mvlab::attractor::to_string(c.status) << ' ' << experiment << '.' << c.name << '\n';
    std::cout << mvlab::attractor::to_string(outcome.status()) << ' ' << experiment << " (" << elapsed << " s, "
              << out_dir.string() << ")\n";
    return outcome.status() == mvlab::attractor::Status::fail ? kFail : kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Random dynamical systems experiments for McKean-Vlasov equations", "mvlab"};
    app.require_subcommand(1);
    Options opt;
    std::string chosen;
    for (const auto& name : mvlab::cli::experiment_names()) {
        auto* sub = app.add_subcommand(name, "Run the " + name + " experiment");
        sub->add_option("--config", opt.config_path, "JSON configuration file");
        sub->add_option("--seed", opt.seed, "64-bit seed (overrides the file and MVLAB_SEED)");
        sub->add_option("--out", opt.out_dir, "Output directory (overrides output_dir)");
        sub->add_option("--threads", opt.threads, "Worker threads");
        sub->add_option("--set", opt.assignments, "Override a config key, e.g. --set rd.c0=0.2");
        sub->callback([&chosen, name] { chosen = name; });
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kOk : kInvalidConfig;
    }
    try {
        return run(chosen, opt);
    } catch (const mvlab::DomainError& e) {
        std::cerr << "invalid argument: " << e.what() << "\n";
        return kInvalidConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kFail;
    }
}
