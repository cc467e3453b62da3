// gramlab: config-driven training runs and feature-geometry probes.
//
// Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure,
// 5 assertion/property failure.

#include <cstdlib>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"

#include "gramlab/experiment.hpp"

namespace {

int run_cmd(const std::string& config_path, const std::string& out_override,
            std::int64_t seed_override, std::string data_dir) {
    gramlab::ExperimentConfig cfg;
    try {
        std::ifstream f(config_path);
        if (!f) {
            std::cerr << "config error: cannot open " << config_path << "\n";
            return 2;
        }
        nlohmann::json j;
        f >> j;
        cfg = gramlab::parse_config(j);
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const gramlab::ConfigInvalid& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    }
    if (!out_override.empty()) cfg.output_dir = out_override;
    if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);
    if (data_dir.empty())
        if (const char* env = std::getenv("DATA_DIR")) data_dir = env;

    try {
        gramlab::run_experiment(cfg, data_dir);
    } catch (const gramlab::ConfigInvalid& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const gramlab::DatasetMissing& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const gramlab::BadMagic& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const gramlab::TruncatedFile& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const gramlab::CountMismatch& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const gramlab::NumericalFailure& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 4;
    } catch (const gramlab::AcceptanceFailure& e) {
        std::cerr << "assertion failure: " << e.what() << "\n";
        return 5;
    }
    std::cout << "run complete: " << cfg.output_dir << "\n";
    return 0;
}

int replay_cmd(const std::string& metrics_path) {
    gramlab::ReplayReport report = gramlab::replay(metrics_path);
    if (report.clean) {
        std::cout << "replay clean: " << metrics_path << "\n";
        return 0;
    }
    for (const auto& issue : report.issues) std::cerr << "replay issue: " << issue << "\n";
    return 5;
}

int probe_cmd(const std::string& act, const std::string& tgt, double lambda, std::size_t pca_k) {
    try {
        std::cout << gramlab::probe_dump(act, tgt, lambda, pca_k);
    } catch (const gramlab::BadMagic& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const gramlab::TruncatedFile& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const gramlab::CountMismatch& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}

int check_cmd() {
    bool ok = true;
    for (const gramlab::PropResult& r : gramlab::run_all_prop_sweeps()) {
        std::printf("%-28s trials=%-4zu violations=%-3zu worst=%-12.4g %s\n", r.name.c_str(),
                    r.trials, r.violations, r.worst, r.pass() ? "pass" : "FAIL");
        ok = ok && r.pass();
    }
    return ok ? 0 : 5;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dense-network feature-geometry laboratory"};
    app.require_subcommand(1);

    std::string config_path, out_dir, data_dir, metrics_path, act_path, tgt_path;
    std::int64_t seed = -1;
    double lambda = 0.0;
    std::size_t pca_k = 0;

    CLI::App* run = app.add_subcommand("run", "execute an experiment config");
    run->add_option("--config", config_path, "JSON config path")->required();
    run->add_option("--out", out_dir, "output directory override");
    run->add_option("--seed", seed, "seed override");
    run->add_option("--data-dir", data_dir, "dataset directory (falls back to $DATA_DIR)");

    CLI::App* rep = app.add_subcommand("replay", "verify a finished run's metrics");
    rep->add_option("--metrics", metrics_path, "metrics.jsonl path")->required();

    CLI::App* probe = app.add_subcommand("probe", "layer-wise TL table from dumps");
    probe->add_option("--activations", act_path, "activation dump path")->required();
    probe->add_option("--targets", tgt_path, "target dump path")->required();
    probe->add_option("--lambda", lambda, "ridge strength (0 = jittered pseudo-inverse)");
    probe->add_option("--pca", pca_k, "reduce features to k principal components");

    CLI::App* check = app.add_subcommand("check", "run the property sweep suite");

    CLI11_PARSE(app, argc, argv);

    if (run->parsed()) return run_cmd(config_path, out_dir, seed, data_dir);
    if (rep->parsed()) return replay_cmd(metrics_path);
    if (probe->parsed()) return probe_cmd(act_path, tgt_path, lambda, pca_k);
    if (check->parsed()) return check_cmd();
    return 2;
}
