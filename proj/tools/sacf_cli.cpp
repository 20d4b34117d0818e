// Command-line front end: train / eval / ablate / params / plot.
// Exit codes: 0 success, 1 usage error, 2 runtime fault.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "sacf/checkpoint.hpp"
#include "sacf/experiment.hpp"
#include "sacf/ppo.hpp"

namespace fs = std::filesystem;
using namespace sacf;

namespace {

ExperimentConfig load_config(const std::string& path) {
    if (!fs::exists(path)) throw Fault("config file not found: " + path);
    return ExperimentConfig::load_file(path);
}

int cmd_train(const std::string& config_path, std::uint64_t seed, int updates,
              const std::string& out, bool verbose) {
    ExperimentConfig cfg = load_config(config_path);
    if (seed != 0) cfg.seed = seed;
    if (updates > 0) cfg.ppo.updates = updates;
    TrainArtifacts art = run_training(cfg, out, "", !verbose);
    std::printf("final heard   SR %.2f SPL %.2f SNA %.2f\n", art.heard_report.sr,
                art.heard_report.spl, art.heard_report.sna);
    std::printf("final unheard SR %.2f SPL %.2f SNA %.2f\n", art.unheard_report.sr,
                art.unheard_report.spl, art.unheard_report.sna);
    std::printf("artifacts in %s\n", art.out_dir.c_str());
    return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& config_path,
             const std::string& split, int episodes, std::uint64_t seed, const std::string& out,
             const std::string& dump) {
    EvalOptions opts;
    opts.split = split;
    opts.episodes = episodes;
    opts.seed = seed;
    opts.keep_trajectories = !dump.empty();

    std::string cfg_path = config_path;
    if (cfg_path.empty() && checkpoint != "oracle" && checkpoint != "random")
        cfg_path = (fs::path(checkpoint).parent_path() / "config.cfg").string();

    MetricsReport report;
    ExperimentConfig cfg;
    if (!cfg_path.empty()) cfg = load_config(cfg_path);
    cfg.sync_derived();
    sim::SoundPool sounds =
        sim::SoundPool::create(cfg.seed, cfg.net.bands, cfg.heard_sounds, cfg.unheard_sounds);

    if (checkpoint == "oracle") {
        report = evaluate(nullptr, EvalPolicy::kOracle, cfg.simp, sounds, opts);
    } else if (checkpoint == "random") {
        report = evaluate(nullptr, EvalPolicy::kRandom, cfg.simp, sounds, opts);
    } else {
        if (!fs::exists(checkpoint)) throw Fault("checkpoint not found: " + checkpoint);
        PolicyNetwork policy(cfg.net, variant_from_name(cfg.variant), cfg.seed);
        OptimizerState opt(policy.registry().params(), cfg.ppo.lr, cfg.ppo.adam_eps,
                           cfg.ppo.updates);
        load_checkpoint(checkpoint, cfg.digest(), opt);
        report = evaluate(&policy, EvalPolicy::kNetwork, cfg.simp, sounds, opts);
    }

    if (!out.empty()) {
        std::ofstream f(out);
        if (!f) throw Fault("cannot write report to " + out);
        f << serialize_report(report);
    }
    if (!dump.empty()) {
        std::ofstream f(dump);
        if (!f) throw Fault("cannot write trajectory dump to " + dump);
        // re-deriving the grids would couple eval and dump; the report keeps
        // poses, so replay them onto their episodes here
        std::uint64_t s = opts.seed;
        for (int e = 0; e < opts.episodes; ++e) {
            std::uint64_t x = s ^ ((static_cast<std::uint64_t>(e) + 1) * 0x9e3779b97f4a7c15ull);
            const std::uint64_t ep_seed = splitmix64(x);
            sim::EpisodeSpec spec =
                sim::sample_episode(ep_seed, sounds, opts.split == "heard", cfg.simp);
            f << sim::dump_grid(spec.grid, spec.start.cell, spec.source);
            for (const auto& p : report.records[static_cast<std::size_t>(e)].trajectory)
                f << "pose " << p.cell.col << " " << p.cell.row << " " << p.heading << "\n";
            f << "end\n";
        }
    }
    std::printf("%.4f %.4f %.4f\n", report.sr, report.spl, report.sna);
    return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& seeds_csv,
               const std::string& out, int jobs) {
    ExperimentConfig cfg = load_config(config_path);
    std::vector<std::uint64_t> seeds;
    std::stringstream ss(seeds_csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        seeds.push_back(std::stoull(tok));
    }
    if (seeds.empty()) throw CLI::ValidationError("--seeds", "no seeds given");
    const std::string table = run_ablation(cfg, seeds, out, jobs);
    std::fputs(table.c_str(), stdout);
    std::printf("table written to %s/ablation.txt\n", out.c_str());
    return 0;
}

int cmd_params(const std::string& config_path, const std::string& out) {
    ExperimentConfig cfg = load_config(config_path);
    ParamTable t = build_param_table(cfg);
    std::fputs(t.text.c_str(), stdout);
    if (!out.empty()) {
        std::ofstream f(out);
        if (!f) throw Fault("cannot write " + out);
        f << t.text;
    }
    return 0;
}

int cmd_plot(const std::vector<std::string>& logs, const std::string& out,
             const std::string& grid_dump) {
    if (!logs.empty()) plot_training_logs(logs, out);
    if (!grid_dump.empty()) plot_grid_dump(grid_dump, out + "_map.svg");
    if (logs.empty() && grid_dump.empty())
        throw CLI::ValidationError("plot", "need at least one log or --grid dump");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"SACF audio-visual navigation experiments"};
    app.require_subcommand(1);

    std::string config_path, out = "run", checkpoint, split = "heard", seeds_csv = "1,2,3";
    std::string report_out, dump, grid_dump;
    std::vector<std::string> logs;
    std::uint64_t seed = 0;
    int updates = -1, episodes = 100, jobs = 2;
    bool verbose = false;

    auto* train = app.add_subcommand("train", "train a policy from scratch");
    train->add_option("config", config_path, "experiment config file")->required();
    train->add_option("--seed", seed, "master seed (overrides config)");
    train->add_option("--updates", updates, "override update count");
    train->add_option("--out", out, "experiment directory");
    train->add_flag("--verbose", verbose, "progress to stderr");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint (or 'oracle'/'random')");
    eval->add_option("checkpoint", checkpoint, "checkpoint path, 'oracle', or 'random'")->required();
    eval->add_option("--config", config_path, "config (default: config.cfg next to checkpoint)");
    eval->add_option("--split", split, "heard|unheard")->check(CLI::IsMember({"heard", "unheard"}));
    eval->add_option("--episodes", episodes, "episode count")->check(CLI::PositiveNumber);
    eval->add_option("--seed", seed, "evaluation seed");
    eval->add_option("--out", report_out, "write the metrics report here");
    eval->add_option("--dump", dump, "write grid/trajectory dumps here");

    auto* ablate = app.add_subcommand("ablate", "train and evaluate all fusion variants");
    ablate->add_option("config", config_path, "experiment config file")->required();
    ablate->add_option("--seeds", seeds_csv, "comma-separated seeds");
    ablate->add_option("--out", out, "output directory");
    ablate->add_option("--jobs", jobs, "concurrent trainings")->check(CLI::PositiveNumber);

    auto* params = app.add_subcommand("params", "parameter-count comparison table");
    params->add_option("config", config_path, "experiment config file")->required();
    params->add_option("--out", report_out, "write the table here");

    auto* plot = app.add_subcommand("plot", "emit csv + svg charts from training logs");
    plot->add_option("logs", logs, "training log files");
    plot->add_option("--out", out, "output prefix");
    plot->add_option("--grid", grid_dump, "grid/trajectory dump to render");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (train->parsed()) return cmd_train(config_path, seed, updates, out, verbose);
        if (eval->parsed())
            return cmd_eval(checkpoint, config_path, split, episodes, seed ? seed : 1, report_out,
                            dump);
        if (ablate->parsed()) return cmd_ablate(config_path, seeds_csv, out, jobs);
        if (params->parsed()) return cmd_params(config_path, report_out);
        if (plot->parsed()) return cmd_plot(logs, out, grid_dump);
    } catch (const CLI::Error& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 1;
    } catch (const ContractViolation& e) {
        std::fprintf(stderr, "contract violation: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 1;
}
