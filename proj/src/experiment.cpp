#include "sacf/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "sacf/checkpoint.hpp"
#include "sacf/ppo.hpp"

namespace sacf {

namespace fs = std::filesystem;

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t x = a ^ (b * 0x9e3779b97f4a7c15ull);
    return splitmix64(x);
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), f, v);
    return buf;
}

}  // namespace

TrainArtifacts run_training(const ExperimentConfig& cfg_in, const std::string& out_dir,
                            const std::string& resume_from, bool quiet) {
    ExperimentConfig cfg = cfg_in;
    cfg.sync_derived();
    cfg.validate();

    fs::create_directories(out_dir);
    cfg.save_file(out_dir + "/config.cfg");

    PolicyNetwork policy(cfg.net, variant_from_name(cfg.variant), cfg.seed);
    OptimizerState opt(policy.registry().params(), cfg.ppo.lr, cfg.ppo.adam_eps, cfg.ppo.updates);

    int start_update = 0;
    if (!resume_from.empty()) {
        CheckpointMeta meta = load_checkpoint(resume_from, cfg.digest(), opt);
        start_update = meta.update;
    }

    sim::SoundPool sounds =
        sim::SoundPool::create(cfg.seed, cfg.net.bands, cfg.heard_sounds, cfg.unheard_sounds);
    VecEnv envs(cfg.ppo.num_envs, cfg.simp, sounds, /*heard_split=*/true, cfg.seed);
    PolicyNetwork::State state = policy.zero_state(cfg.ppo.num_envs);

    TrainArtifacts art;
    art.out_dir = out_dir;
    art.log_path = out_dir + "/train.log";
    std::ofstream log(art.log_path, resume_from.empty() ? std::ios::trunc : std::ios::app);
    if (!log) throw Fault("run_training: cannot write " + art.log_path);

    // best-checkpoint selection on the heard-split validation evals; the
    // unheard split is never consulted
    double best_sr = -1.0, best_spl = -1.0;
    std::vector<std::vector<float>> best_params;
    auto snapshot_best = [&]() {
        best_params.clear();
        for (const auto& p : policy.registry().params())
            best_params.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
    };

    float last_mean_reward = 0.f;
    for (int u = start_update; u < cfg.ppo.updates; ++u) {
        RolloutBuffer buf = collect_rollout(policy, envs, cfg.ppo.horizon, state);
        compute_gae(buf, cfg.ppo.gamma, cfg.ppo.gae_lambda);
        UpdateStats stats = ppo_update(policy, opt, buf, cfg.ppo, u);

        if (!buf.completed_returns.empty()) {
            double acc = 0.0;
            for (float r : buf.completed_returns) acc += r;
            last_mean_reward = static_cast<float>(acc / buf.completed_returns.size());
        }
        stats.mean_reward = last_mean_reward;

        char line[256];
        std::snprintf(line, sizeof(line), "%d %.6g %.6g %.6g %.6g %.6g %.6g %.6g\n", u,
                      static_cast<double>(stats.mean_reward), static_cast<double>(stats.loss_pi),
                      static_cast<double>(stats.loss_v), static_cast<double>(stats.entropy),
                      static_cast<double>(stats.aux), static_cast<double>(stats.clip_frac),
                      static_cast<double>(stats.lr));
        log << line;
        log.flush();

        const bool last = u == cfg.ppo.updates - 1;
        if ((u + 1) % cfg.eval_every == 0 || last) {
            EvalOptions eopts;
            eopts.split = "heard";
            eopts.episodes = cfg.eval_episodes;
            eopts.seed = mix(cfg.seed, 0xe7a1u + static_cast<std::uint64_t>(u));
            MetricsReport rep = evaluate(&policy, EvalPolicy::kNetwork, cfg.simp, sounds, eopts);
            char eline[160];
            std::snprintf(eline, sizeof(eline), "eval %d heard %.4f %.4f %.4f\n", u, rep.sr,
                          rep.spl, rep.sna);
            log << eline;
            log.flush();
            if (rep.sr > best_sr || (rep.sr == best_sr && rep.spl >= best_spl)) {
                best_sr = rep.sr;
                best_spl = rep.spl;
                snapshot_best();
            }
            if (!quiet)
                std::fprintf(stderr, "[%s] update %d reward %.2f heard SR %.1f SPL %.1f\n",
                             cfg.variant.c_str(), u, static_cast<double>(stats.mean_reward), rep.sr,
                             rep.spl);
        }
        if ((u + 1) % cfg.checkpoint_every == 0 && !last) {
            save_checkpoint(out_dir + "/ckpt_" + std::to_string(u + 1) + ".bin", cfg.digest(),
                            u + 1, opt);
        }
    }

    art.final_checkpoint = out_dir + "/final.bin";
    save_checkpoint(art.final_checkpoint, cfg.digest(), cfg.ppo.updates, opt);

    // the final reports evaluate the validation-selected snapshot (saved as
    // best.bin); final.bin keeps the end-of-schedule state for resuming
    if (!best_params.empty()) {
        auto& params = policy.registry().params();
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto dst = params[i].tensor.values_mut();
            std::copy(best_params[i].begin(), best_params[i].end(), dst.begin());
        }
        save_checkpoint(out_dir + "/best.bin", cfg.digest(), cfg.ppo.updates, opt);
    }

    for (const std::string split : {std::string("heard"), std::string("unheard")}) {
        EvalOptions eopts;
        eopts.split = split;
        eopts.episodes = cfg.eval_episodes;
        eopts.seed = mix(cfg.seed, 0xf17a1u);
        MetricsReport rep = evaluate(&policy, EvalPolicy::kNetwork, cfg.simp, sounds, eopts);
        std::ofstream rf(out_dir + "/report_" + split + ".txt");
        rf << serialize_report(rep);
        if (split == "heard")
            art.heard_report = rep;
        else
            art.unheard_report = rep;
    }
    return art;
}

TrainLog parse_train_log(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Fault("parse_train_log: cannot open " + path);
    TrainLog out;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream is(line);
        if (line.rfind("eval ", 0) == 0) {
            std::string tag;
            TrainLog::EvalLine e;
            is >> tag >> e.update >> e.split >> e.sr >> e.spl >> e.sna;
            if (is.fail() || (e.split != "heard" && e.split != "unheard"))
                throw Fault("parse_train_log: malformed line " + std::to_string(lineno) + " in " +
                            path);
            out.evals.push_back(std::move(e));
        } else {
            TrainLog::UpdateLine u;
            is >> u.update >> u.reward >> u.loss_pi >> u.loss_v >> u.entropy >> u.aux >>
                u.clip_frac >> u.lr;
            std::string extra;
            if (is.fail() || (is >> extra))
                throw Fault("parse_train_log: malformed line " + std::to_string(lineno) + " in " +
                            path);
            out.updates.push_back(u);
        }
    }
    return out;
}

std::vector<double> moving_average(const std::vector<double>& xs, int window) {
    SACF_REQUIRE(window > 0, "moving_average: window must be positive");
    std::vector<double> out;
    if (static_cast<int>(xs.size()) < window) return out;
    double acc = 0.0;
    for (int i = 0; i < window; ++i) acc += xs[static_cast<std::size_t>(i)];
    out.push_back(acc / window);
    for (std::size_t i = static_cast<std::size_t>(window); i < xs.size(); ++i) {
        acc += xs[i] - xs[i - static_cast<std::size_t>(window)];
        out.push_back(acc / window);
    }
    return out;
}

int first_index_reaching(const std::vector<double>& xs, double fraction) {
    if (xs.empty()) return -1;
    const double target = xs.back() * fraction;
    for (std::size_t i = 0; i < xs.size(); ++i)
        if (xs[i] >= target) return static_cast<int>(i);
    return -1;
}

std::string run_ablation(const ExperimentConfig& base, const std::vector<std::uint64_t>& seeds,
                         const std::string& out_dir, int jobs) {
    SACF_REQUIRE(!seeds.empty(), "run_ablation: need at least one seed");
    const std::vector<std::string> variants = {"concat-baseline", "no-sdld", "no-acvf",
                                               "sacf-full"};
    fs::create_directories(out_dir);

    struct Job {
        std::string variant;
        std::uint64_t seed;
        std::string dir;
        MetricsReport heard, unheard;
    };
    std::vector<Job> jobs_list;
    for (const auto& v : variants)
        for (std::uint64_t s : seeds)
            jobs_list.push_back({v, s, out_dir + "/" + v + "-seed" + std::to_string(s), {}, {}});

    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= jobs_list.size()) return;
            Job& j = jobs_list[i];
            ExperimentConfig cfg = base;
            cfg.variant = j.variant;
            cfg.seed = j.seed;
            TrainArtifacts art = run_training(cfg, j.dir);
            j.heard = art.heard_report;
            j.unheard = art.unheard_report;
        }
    };
    const int n_threads = std::max(1, std::min<int>(jobs, static_cast<int>(jobs_list.size())));
    std::vector<std::thread> pool;
    for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();

    std::ostringstream os;
    os << "# ablation over seeds:";
    for (auto s : seeds) os << " " << s;
    os << "\n# variant split SR SPL (mean +- half-spread)\n";
    for (const auto& v : variants) {
        for (const std::string split : {std::string("heard"), std::string("unheard")}) {
            std::vector<double> srs, spls;
            for (const auto& j : jobs_list)
                if (j.variant == v) {
                    const MetricsReport& r = split == "heard" ? j.heard : j.unheard;
                    srs.push_back(r.sr);
                    spls.push_back(r.spl);
                }
            auto stats = [](const std::vector<double>& xs) {
                double mean = 0, lo = xs[0], hi = xs[0];
                for (double x : xs) {
                    mean += x;
                    lo = std::min(lo, x);
                    hi = std::max(hi, x);
                }
                mean /= static_cast<double>(xs.size());
                return std::pair<double, double>(mean, (hi - lo) / 2.0);
            };
            auto [sr_m, sr_r] = stats(srs);
            auto [spl_m, spl_r] = stats(spls);
            char line[200];
            std::snprintf(line, sizeof(line), "%-16s %-8s SR %6.2f +- %-6.2f SPL %6.2f +- %-6.2f\n",
                          v.c_str(), split.c_str(), sr_m, sr_r, spl_m, spl_r);
            os << line;
        }
    }
    os << "# reference (full-scale, Replica unheard, non-binding): "
          "sacf-full SR 79.1 SPL 43.9 vs concat-baseline SR 50.9 SPL 34.7\n";

    std::ofstream f(out_dir + "/ablation.txt");
    f << os.str();
    return os.str();
}

ParamTable build_param_table(const ExperimentConfig& cfg) {
    cfg.net.validate();
    ParamTable t;
    PolicyNetwork concat(cfg.net, FusionVariant::kConcatBaseline, cfg.seed);
    PolicyNetwork sacf(cfg.net, FusionVariant::kSacfFull, cfg.seed);
    t.concat = concat.parameter_count();
    t.sacf = sacf.parameter_count();
    t.attention = t.concat + spatial_attention_param_count(cfg.net);
    t.overhead_percent = 100.0 * static_cast<double>(t.sacf - t.concat) / static_cast<double>(t.concat);

    SACF_REQUIRE(t.concat < t.sacf && t.sacf < t.attention,
                 "param table: fusion ordering concat < sacf < attention does not hold");
    SACF_REQUIRE(t.overhead_percent <= 5.0, "param table: sacf overhead exceeds 5% of concat");

    std::ostringstream os;
    os << "# trainable parameter comparison of fusion mechanisms\n";
    os << "concat-baseline          " << t.concat << "\n";
    os << "spatial-attention        " << t.attention << " (count-only, never trained)\n";
    os << "sacf-full                " << t.sacf << "\n";
    os << "sacf overhead over concat " << fmt("%.2f", t.overhead_percent) << "%\n";
    os << "film flops per step       " << film_modulate_flops(cfg.net.channels, cfg.net.map_h, cfg.net.map_w)
       << " (linear in H*W)\n";
    os << "attention flops per step  " << spatial_attention_flops(cfg.net, cfg.net.map_h, cfg.net.map_w)
       << " (quadratic in H*W)\n";
    t.text = os.str();
    return t;
}

namespace {

struct Series {
    std::string label;
    std::vector<double> xs, ys;
};

std::string svg_chart(const std::vector<Series>& left, const std::vector<Series>& right,
                      const std::string& left_label, const std::string& right_label) {
    const double W = 860, H = 420, ml = 70, mr = 70, mt = 30, mb = 50;
    double xmin = 1e300, xmax = -1e300, lmin = 1e300, lmax = -1e300, rmin = 0, rmax = 100;
    for (const auto& s : left)
        for (std::size_t i = 0; i < s.xs.size(); ++i) {
            xmin = std::min(xmin, s.xs[i]);
            xmax = std::max(xmax, s.xs[i]);
            lmin = std::min(lmin, s.ys[i]);
            lmax = std::max(lmax, s.ys[i]);
        }
    for (const auto& s : right)
        for (double x : s.xs) {
            xmin = std::min(xmin, x);
            xmax = std::max(xmax, x);
        }
    if (xmin > xmax) {
        xmin = 0;
        xmax = 1;
    }
    if (lmin > lmax) {
        lmin = 0;
        lmax = 1;
    }
    if (lmax == lmin) lmax = lmin + 1;
    if (xmax == xmin) xmax = xmin + 1;

    auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (W - ml - mr); };
    auto pyl = [&](double y) { return H - mb - (y - lmin) / (lmax - lmin) * (H - mt - mb); };
    auto pyr = [&](double y) { return H - mb - (y - rmin) / (rmax - rmin) * (H - mt - mb); };

    const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
    std::ostringstream os;
    os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H << "'>\n";
    os << "<rect width='100%' height='100%' fill='white'/>\n";
    os << "<line x1='" << ml << "' y1='" << H - mb << "' x2='" << W - mr << "' y2='" << H - mb
       << "' stroke='black'/>\n";
    os << "<line x1='" << ml << "' y1='" << mt << "' x2='" << ml << "' y2='" << H - mb
       << "' stroke='black'/>\n";
    os << "<line x1='" << W - mr << "' y1='" << mt << "' x2='" << W - mr << "' y2='" << H - mb
       << "' stroke='black'/>\n";
    os << "<text x='" << (W / 2) << "' y='" << H - 12 << "' text-anchor='middle'>update</text>\n";
    os << "<text x='18' y='" << (H / 2) << "' transform='rotate(-90 18 " << (H / 2)
       << ")' text-anchor='middle'>" << left_label << "</text>\n";
    os << "<text x='" << W - 14 << "' y='" << (H / 2) << "' transform='rotate(90 " << W - 14 << " "
       << (H / 2) << ")' text-anchor='middle'>" << right_label << "</text>\n";
    // x ticks
    for (int i = 0; i <= 4; ++i) {
        const double x = xmin + (xmax - xmin) * i / 4.0;
        os << "<text x='" << px(x) << "' y='" << H - mb + 18 << "' text-anchor='middle' font-size='11'>"
           << static_cast<long>(x) << "</text>\n";
    }
    for (int i = 0; i <= 4; ++i) {
        const double y = lmin + (lmax - lmin) * i / 4.0;
        os << "<text x='" << ml - 6 << "' y='" << pyl(y) + 4
           << "' text-anchor='end' font-size='11'>" << fmt("%.3g", y) << "</text>\n";
        const double ry = rmin + (rmax - rmin) * i / 4.0;
        os << "<text x='" << W - mr + 6 << "' y='" << pyr(ry) + 4
           << "' text-anchor='start' font-size='11'>" << fmt("%.3g", ry) << "</text>\n";
    }

    int ci = 0;
    double ly = mt + 6;
    auto draw = [&](const Series& s, bool is_left, const char* dash) {
        if (s.xs.empty()) return;
        os << "<polyline fill='none' stroke='" << colors[ci % 6] << "' stroke-width='1.5'";
        if (dash[0]) os << " stroke-dasharray='" << dash << "'";
        os << " points='";
        for (std::size_t i = 0; i < s.xs.size(); ++i)
            os << px(s.xs[i]) << "," << (is_left ? pyl(s.ys[i]) : pyr(s.ys[i])) << " ";
        os << "'/>\n";
        os << "<line x1='" << W - mr - 190 << "' y1='" << ly << "' x2='" << W - mr - 160 << "' y2='"
           << ly << "' stroke='" << colors[ci % 6] << "' stroke-width='2'";
        if (dash[0]) os << " stroke-dasharray='" << dash << "'";
        os << "/>\n";
        os << "<text x='" << W - mr - 154 << "' y='" << ly + 4 << "' font-size='11'>" << s.label
           << "</text>\n";
        ly += 16;
        ++ci;
    };
    for (const auto& s : left) draw(s, true, "");
    for (const auto& s : right) draw(s, false, "5,3");
    os << "</svg>\n";
    return os.str();
}

std::string basename_of(const std::string& path) {
    return fs::path(path).filename().string();
}

}  // namespace

void plot_training_logs(const std::vector<std::string>& log_paths, const std::string& out_prefix) {
    SACF_REQUIRE(!log_paths.empty(), "plot: need at least one log");
    std::vector<Series> rewards, spls;
    int file_index = 0;
    for (const auto& path : log_paths) {
        ++file_index;
        TrainLog log = parse_train_log(path);
        Series r, s;
        r.label = "reward " + basename_of(path);
        s.label = "eval SPL " + basename_of(path);

        // step-function carry of the latest heard-split eval SPL
        std::size_t ei = 0;
        double last_spl = std::nan("");
        std::ostringstream csv;
        csv << "update,reward,eval_spl\n";
        for (const auto& u : log.updates) {
            while (ei < log.evals.size() && log.evals[ei].update <= u.update) {
                if (log.evals[ei].split == "heard") last_spl = log.evals[ei].spl;
                ++ei;
            }
            r.xs.push_back(u.update);
            r.ys.push_back(u.reward);
            csv << u.update << "," << fmt("%.6g", u.reward) << ",";
            if (!std::isnan(last_spl)) {
                s.xs.push_back(u.update);
                s.ys.push_back(last_spl);
                csv << fmt("%.6g", last_spl);
            }
            csv << "\n";
        }
        const std::string csv_path =
            file_index == 1 ? out_prefix + ".csv"
                            : out_prefix + "." + std::to_string(file_index) + ".csv";
        std::ofstream cf(csv_path);
        if (!cf) throw Fault("plot: cannot write " + csv_path);
        cf << csv.str();

        rewards.push_back(std::move(r));
        spls.push_back(std::move(s));
    }
    std::vector<Series> left = rewards;
    std::vector<Series> right = spls;
    std::ofstream sf(out_prefix + ".svg");
    if (!sf) throw Fault("plot: cannot write " + out_prefix + ".svg");
    sf << svg_chart(left, right, "reward", "eval SPL (%)");
}

void plot_grid_dump(const std::string& dump_path, const std::string& out_svg) {
    std::ifstream f(dump_path);
    if (!f) throw Fault("plot: cannot open " + dump_path);
    std::string tag;
    int w = 0, h = 0;
    std::uint64_t seed = 0;
    f >> tag >> w >> h >> seed;
    if (tag != "grid" || f.fail() || w <= 0 || h <= 0)
        throw Fault("plot: malformed grid header in " + dump_path);
    std::string line;
    std::getline(f, line);
    std::vector<std::string> rows;
    for (int r = 0; r < h; ++r) {
        if (!std::getline(f, line) || static_cast<int>(line.size()) < w)
            throw Fault("plot: malformed grid row " + std::to_string(r + 2) + " in " + dump_path);
        rows.push_back(line.substr(0, static_cast<std::size_t>(w)));
    }
    std::vector<std::pair<int, int>> path;
    while (std::getline(f, line)) {
        if (line.rfind("pose ", 0) == 0) {
            std::istringstream is(line);
            std::string p;
            int c, r, hd;
            is >> p >> c >> r >> hd;
            if (is.fail()) throw Fault("plot: malformed pose line in " + dump_path);
            path.emplace_back(c, r);
        }
    }

    const double cell = 22, m = 10;
    std::ostringstream os;
    os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w * cell + 2 * m << "' height='"
       << h * cell + 2 * m << "'>\n";
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            const char ch = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
            const char* fill = ch == '#' ? "#333333"
                               : ch == 'S' ? "#1f77b4"
                               : ch == 'G' ? "#d62728"
                                           : "#f2f2f2";
            os << "<rect x='" << m + c * cell << "' y='" << m + r * cell << "' width='" << cell
               << "' height='" << cell << "' fill='" << fill << "' stroke='#cccccc'/>\n";
        }
    if (!path.empty()) {
        os << "<polyline fill='none' stroke='#2ca02c' stroke-width='2.5' points='";
        for (auto [c, r] : path)
            os << m + (c + 0.5) * cell << "," << m + (r + 0.5) * cell << " ";
        os << "'/>\n";
    }
    os << "</svg>\n";
    std::ofstream sf(out_svg);
    if (!sf) throw Fault("plot: cannot write " + out_svg);
    sf << os.str();
}

}  // namespace sacf
