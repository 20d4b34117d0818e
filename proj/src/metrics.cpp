#include "sacf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <limits>
#include <sstream>

namespace sacf {

namespace {
constexpr int kDx[4] = {1, 0, -1, 0};
constexpr int kDy[4] = {0, 1, 0, -1};

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t x = a ^ (b * 0x9e3779b97f4a7c15ull);
    return splitmix64(x);
}
}  // namespace

double compute_sr(const std::vector<EpisodeRecord>& records) {
    SACF_REQUIRE(!records.empty(), "compute_sr: no records");
    double acc = 0.0;
    for (const auto& r : records) acc += r.success ? 1.0 : 0.0;
    return 100.0 * acc / static_cast<double>(records.size());
}

double compute_spl(const std::vector<EpisodeRecord>& records) {
    SACF_REQUIRE(!records.empty(), "compute_spl: no records");
    double acc = 0.0;
    for (const auto& r : records) {
        if (!r.success) continue;
        SACF_REQUIRE(r.path_length >= 0.f && r.shortest_path >= 0.f, "compute_spl: negative length");
        if (r.path_length <= 0.f && r.shortest_path <= 0.f)
            acc += 1.0;  // started at the goal
        else
            acc += static_cast<double>(r.shortest_path) /
                   std::max(static_cast<double>(r.path_length), static_cast<double>(r.shortest_path));
    }
    return 100.0 * acc / static_cast<double>(records.size());
}

double compute_sna(const std::vector<EpisodeRecord>& records) {
    SACF_REQUIRE(!records.empty(), "compute_sna: no records");
    double acc = 0.0;
    for (const auto& r : records) {
        if (!r.success) continue;
        acc += static_cast<double>(r.optimal_action_count) /
               std::max(static_cast<double>(r.action_count),
                        static_cast<double>(r.optimal_action_count));
    }
    return 100.0 * acc / static_cast<double>(records.size());
}

OraclePlanner::OraclePlanner(const sim::OccupancyGrid& grid, sim::Cell source)
    : grid_(&grid), source_(source) {
    SACF_REQUIRE(grid.free_cell(source), "OraclePlanner: source blocked");
    const int n = grid.width() * grid.height() * 4;
    dist_.assign(static_cast<std::size_t>(n), std::numeric_limits<int>::max());
    std::deque<int> q;
    for (int h = 0; h < 4; ++h) {
        dist_[static_cast<std::size_t>(idx(source, h))] = 0;
        q.push_back(idx(source, h));
    }
    // backward BFS over reversed move/turn edges, uniform action cost
    while (!q.empty()) {
        const int cur = q.front();
        q.pop_front();
        const int h = cur % 4;
        const int cell = cur / 4;
        const sim::Cell c{cell % grid.width(), cell / grid.width()};
        const int d = dist_[static_cast<std::size_t>(cur)];
        auto relax = [&](sim::Cell pc, int ph) {
            if (!grid_->free_cell(pc)) return;
            const int pi = idx(pc, ph);
            if (dist_[static_cast<std::size_t>(pi)] > d + 1) {
                dist_[static_cast<std::size_t>(pi)] = d + 1;
                q.push_back(pi);
            }
        };
        relax({c.col - kDx[h], c.row - kDy[h]}, h);  // predecessor moved forward
        relax(c, (h + 3) % 4);                       // predecessor turned left
        relax(c, (h + 1) % 4);                       // predecessor turned right
    }
}

int OraclePlanner::idx(sim::Cell c, int h) const {
    return (c.row * grid_->width() + c.col) * 4 + h;
}

sim::Action OraclePlanner::next_action(const sim::Pose& pose) const {
    if (pose.cell == source_) return sim::Action::kStop;
    const int here = dist_[static_cast<std::size_t>(idx(pose.cell, pose.heading))];
    SACF_REQUIRE(here != std::numeric_limits<int>::max(), "OraclePlanner: pose unreachable");
    // fixed preference order keeps the policy deterministic under ties
    const sim::Cell fwd{pose.cell.col + kDx[pose.heading], pose.cell.row + kDy[pose.heading]};
    if (grid_->free_cell(fwd) &&
        dist_[static_cast<std::size_t>(idx(fwd, pose.heading))] == here - 1)
        return sim::Action::kMoveForward;
    if (dist_[static_cast<std::size_t>(idx(pose.cell, (pose.heading + 1) % 4))] == here - 1)
        return sim::Action::kTurnLeft;
    if (dist_[static_cast<std::size_t>(idx(pose.cell, (pose.heading + 3) % 4))] == here - 1)
        return sim::Action::kTurnRight;
    throw Fault("OraclePlanner: no descending action");
}

int OraclePlanner::optimal_action_count(const sim::Pose& pose) const {
    const int d = dist_[static_cast<std::size_t>(idx(pose.cell, pose.heading))];
    SACF_REQUIRE(d != std::numeric_limits<int>::max(), "OraclePlanner: pose unreachable");
    return d + 1;  // + Stop
}

MetricsReport evaluate(const PolicyNetwork* policy, EvalPolicy kind, const sim::SimParams& params,
                       const sim::SoundPool& sounds, const EvalOptions& opts) {
    SACF_REQUIRE(opts.episodes > 0, "evaluate: episode count must be positive");
    SACF_REQUIRE(opts.split == "heard" || opts.split == "unheard", "evaluate: unknown split");
    SACF_REQUIRE(kind != EvalPolicy::kNetwork || policy != nullptr,
                 "evaluate: network evaluation needs a policy");
    const bool heard = opts.split == "heard";

    MetricsReport report;
    report.split = opts.split;
    report.episodes = opts.episodes;

    Rng random_stream = derive_stream(opts.seed, "eval-random");

    for (int e = 0; e < opts.episodes; ++e) {
        const std::uint64_t ep_seed = mix(opts.seed, static_cast<std::uint64_t>(e) + 1);
        sim::EpisodeSpec spec = sim::sample_episode(ep_seed, sounds, heard, params);
        sim::Env env;
        env.params = params;
        env.reset(spec, sounds.by_id(spec.sound_id), mix(ep_seed, 0xeba1u));

        OraclePlanner oracle(env.spec().grid, env.spec().source);

        EpisodeRecord rec;
        rec.shortest_path = env.geodesic_now();
        rec.optimal_action_count = oracle.optimal_action_count(env.pose());
        rec.trajectory.push_back(env.pose());

        PolicyNetwork::State state;
        ad::Graph g;
        ad::Graph::NoGradScope ng(g);
        if (kind == EvalPolicy::kNetwork) state = policy->zero_state(1);

        sim::Observation obs = env.observe_with_noise();
        while (!env.done()) {
            sim::Action a = sim::Action::kStop;
            switch (kind) {
                case EvalPolicy::kOracle:
                    a = oracle.next_action(env.pose());
                    break;
                case EvalPolicy::kRandom:
                    a = static_cast<sim::Action>(random_stream.uniform_int(0, sim::kNumActions));
                    break;
                case EvalPolicy::kNetwork: {
                    ad::Tensor depth =
                        ad::Tensor::from_values({1, params.rays}, obs.depth);
                    ad::Tensor audio = ad::Tensor::from_values(
                        {1, static_cast<int>(obs.audio.size())}, obs.audio);
                    PolicyNetwork::Forward fwd = policy->step(g, depth, audio, state);
                    state = fwd.state;
                    auto logits = fwd.action_logits.values();
                    int best = 0;
                    for (int i = 1; i < static_cast<int>(logits.size()); ++i)
                        if (logits[static_cast<std::size_t>(i)] > logits[static_cast<std::size_t>(best)])
                            best = i;
                    a = static_cast<sim::Action>(best);
                    break;
                }
            }
            sim::StepResult r = env.step(a);
            obs = r.obs;
            ++rec.action_count;
            if (r.moved) rec.path_length += sim::kCellSize;
            rec.trajectory.push_back(env.pose());
            if (r.done) rec.success = r.success;
        }
        if (!opts.keep_trajectories) rec.trajectory.clear();
        report.records.push_back(std::move(rec));
    }

    report.sr = compute_sr(report.records);
    report.spl = compute_spl(report.records);
    report.sna = compute_sna(report.records);
    return report;
}

std::string serialize_report(const MetricsReport& report) {
    std::ostringstream os;
    os << report.split << " " << report.episodes << "\n";
    char line[160];
    for (const auto& r : report.records) {
        std::snprintf(line, sizeof(line), "%d %.4f %.4f %d %d\n", r.success ? 1 : 0,
                      static_cast<double>(r.path_length), static_cast<double>(r.shortest_path),
                      r.action_count, r.optimal_action_count);
        os << line;
    }
    char footer[96];
    std::snprintf(footer, sizeof(footer), "%.4f %.4f %.4f\n", report.sr, report.spl, report.sna);
    os << footer;
    return os.str();
}

MetricsReport parse_report(const std::string& text) {
    std::istringstream is(text);
    MetricsReport r;
    is >> r.split >> r.episodes;
    SACF_REQUIRE(!is.fail() && r.episodes >= 0, "parse_report: bad header");
    r.records.resize(static_cast<std::size_t>(r.episodes));
    for (auto& rec : r.records) {
        int s = 0;
        is >> s >> rec.path_length >> rec.shortest_path >> rec.action_count >>
            rec.optimal_action_count;
        rec.success = s != 0;
        SACF_REQUIRE(!is.fail(), "parse_report: bad episode line");
    }
    is >> r.sr >> r.spl >> r.sna;
    SACF_REQUIRE(!is.fail(), "parse_report: bad footer");
    return r;
}

}  // namespace sacf
