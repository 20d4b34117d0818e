#pragma once

#include <string>
#include <vector>

#include "sacf/config.hpp"
#include "sacf/metrics.hpp"

namespace sacf {

struct TrainArtifacts {
    std::string out_dir;
    std::string log_path;
    std::string final_checkpoint;
    MetricsReport heard_report;
    MetricsReport unheard_report;
};

// Full training run: config snapshot, per-update log lines
// (`update reward loss_pi loss_v entropy aux clipfrac lr`), periodic eval
// lines (`eval <update> <split> <SR> <SPL> <SNA>`), checkpoints, and final
// reports for both splits, all inside out_dir.
TrainArtifacts run_training(const ExperimentConfig& cfg, const std::string& out_dir,
                            const std::string& resume_from = "", bool quiet = true);

struct TrainLog {
    struct UpdateLine {
        int update = 0;
        float reward = 0, loss_pi = 0, loss_v = 0, entropy = 0, aux = 0, clip_frac = 0, lr = 0;
    };
    struct EvalLine {
        int update = 0;
        std::string split;
        double sr = 0, spl = 0, sna = 0;
    };
    std::vector<UpdateLine> updates;
    std::vector<EvalLine> evals;
};

// Strict parser; malformed lines raise Fault naming the line number.
TrainLog parse_train_log(const std::string& path);

std::vector<double> moving_average(const std::vector<double>& xs, int window);
// First index whose value reaches `fraction` of the final value (-1 if never).
int first_index_reaching(const std::vector<double>& xs, double fraction);

// Trains every fusion variant for each seed, evaluates both splits, and
// emits a table with per-variant mean and half-spread over seeds. `jobs`
// trainings run concurrently, each isolated in its own directory.
std::string run_ablation(const ExperimentConfig& base, const std::vector<std::uint64_t>& seeds,
                         const std::string& out_dir, int jobs = 2);

struct ParamTable {
    long concat = 0;
    long sacf = 0;
    long attention = 0;
    double overhead_percent = 0.0;  // (sacf - concat) / concat
    std::string text;
};

// Parameter-count comparison of the three fusion mechanisms; fails if the
// ordering concat < SACF < attention or the <= 5% overhead bound breaks.
ParamTable build_param_table(const ExperimentConfig& cfg);

// CSV (update, reward, eval_spl) plus an SVG line chart; one CSV per log
// (suffix .2, .3, ... after the first), all series overlaid in the chart.
void plot_training_logs(const std::vector<std::string>& log_paths, const std::string& out_prefix);

// SVG rendering of a grid/trajectory dump (the `grid ...` text format with
// optional `pose <col> <row> <heading>` lines).
void plot_grid_dump(const std::string& dump_path, const std::string& out_svg);

}  // namespace sacf
