#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <queue>
#include <set>

#include "sacf/sim.hpp"

using namespace sacf;
using namespace sacf::sim;

namespace {
constexpr float kPi = 3.14159265358979323846f;

// independent brute-force shortest path (Dijkstra with unit weights)
float dijkstra_distance(const OccupancyGrid& g, Cell a, Cell b) {
    const int w = g.width(), h = g.height();
    std::vector<float> dist(static_cast<std::size_t>(w) * h, 1e30f);
    using Node = std::pair<float, int>;
    std::priority_queue<Node, std::vector<Node>, std::greater<>> pq;
    dist[static_cast<std::size_t>(a.row) * w + a.col] = 0.f;
    pq.push({0.f, a.row * w + a.col});
    const int dx[4] = {1, 0, -1, 0}, dy[4] = {0, 1, 0, -1};
    while (!pq.empty()) {
        auto [d, idx] = pq.top();
        pq.pop();
        if (d > dist[static_cast<std::size_t>(idx)]) continue;
        const Cell c{idx % w, idx / w};
        for (int k = 0; k < 4; ++k) {
            Cell n{c.col + dx[k], c.row + dy[k]};
            if (!g.free_cell(n)) continue;
            const int ni = n.row * w + n.col;
            if (d + 1.f < dist[static_cast<std::size_t>(ni)]) {
                dist[static_cast<std::size_t>(ni)] = d + 1.f;
                pq.push({d + 1.f, ni});
            }
        }
    }
    const float hops = dist[static_cast<std::size_t>(b.row) * w + b.col];
    return hops >= 1e30f ? hops : hops * kCellSize;
}

OccupancyGrid open_grid(int w, int h) {
    OccupancyGrid g(w, h);
    for (int r = 1; r < h - 1; ++r)
        for (int c = 1; c < w - 1; ++c) g.set_blocked({c, r}, false);
    return g;
}

SoundSpec one_hot_sound(int bands, int hot) {
    SoundSpec s;
    s.id = 0;
    s.spectrum.assign(static_cast<std::size_t>(bands), 0.f);
    s.spectrum[static_cast<std::size_t>(hot)] = 1.f;
    return s;
}

}  // namespace

TEST_CASE("generate_grid is deterministic per seed") {
    OccupancyGrid a = generate_grid(42);
    OccupancyGrid b = generate_grid(42);
    REQUIRE(a.width() == b.width());
    for (int r = 0; r < a.height(); ++r)
        for (int c = 0; c < a.width(); ++c) CHECK(a.blocked({c, r}) == b.blocked({c, r}));
    OccupancyGrid c = generate_grid(43);
    bool same = true;
    for (int r = 0; r < a.height() && same; ++r)
        for (int col = 0; col < a.width() && same; ++col)
            same = a.blocked({col, r}) == c.blocked({col, r});
    CHECK_FALSE(same);
}

TEST_CASE("generated grids are connected with at least 40% free cells") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        OccupancyGrid g = generate_grid(seed);
        CHECK(g.connected());
        CHECK(g.free_count() >= g.width() * g.height() * 2 / 5);
        for (int c = 0; c < g.width(); ++c) {
            CHECK(g.blocked({c, 0}));
            CHECK(g.blocked({c, g.height() - 1}));
        }
    }
}

TEST_CASE("geodesic distance: identity, corridor, and blocked endpoints") {
    OccupancyGrid g = open_grid(10, 5);
    CHECK(geodesic_distance(g, {2, 2}, {2, 2}) == 0.f);
    CHECK(geodesic_distance(g, {2, 2}, {7, 2}) == doctest::Approx(7.5));
    CHECK_THROWS_AS(geodesic_distance(g, {0, 0}, {2, 2}), ContractViolation);
}

TEST_CASE("geodesic distance matches brute-force Dijkstra around obstacles") {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        OccupancyGrid g = generate_grid(seed, 14, 14);
        std::vector<Cell> free;
        for (int r = 0; r < 14; ++r)
            for (int c = 0; c < 14; ++c)
                if (g.free_cell({c, r})) free.push_back({c, r});
        Rng rng(seed);
        for (int trial = 0; trial < 10; ++trial) {
            Cell a = free[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(free.size())))];
            Cell b = free[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(free.size())))];
            CHECK(geodesic_distance(g, a, b) == doctest::Approx(dijkstra_distance(g, a, b)));
        }
    }
}

TEST_CASE("raycast: wall one cell ahead puts the center rays at 1.5/30") {
    OccupancyGrid g = open_grid(9, 9);
    g.set_blocked({5, 4}, true);
    Pose p{{4, 4}, 0};  // facing +x at the wall cell
    auto rays = raycast_depth(g, p, 32);
    // the two central rays straddle the heading and hit the adjacent wall
    CHECK(rays[15] == doctest::Approx(1.5 / 30.0).epsilon(0.02));
    CHECK(rays[16] == doctest::Approx(1.5 / 30.0).epsilon(0.02));
}

TEST_CASE("raycast: an open 20-cell corridor clamps the center ray to 1.0") {
    OccupancyGrid g = open_grid(26, 5);
    Pose p{{2, 2}, 0};
    auto rays = raycast_depth(g, p, 32);
    CHECK(rays[15] == doctest::Approx(1.0));
    CHECK(rays[16] == doctest::Approx(1.0));
}

TEST_CASE("raycast symmetry: mirrored grid and pose reverse the ray order") {
    Rng rng(17);
    OccupancyGrid g = generate_grid(3, 12, 12);
    // mirror across the vertical axis
    OccupancyGrid m(12, 12);
    for (int r = 0; r < 12; ++r)
        for (int c = 0; c < 12; ++c) m.set_blocked({11 - c, r}, g.blocked({c, r}));
    std::vector<Cell> free;
    for (int r = 0; r < 12; ++r)
        for (int c = 0; c < 12; ++c)
            if (g.free_cell({c, r})) free.push_back({c, r});
    for (int trial = 0; trial < 20; ++trial) {
        Cell cell = free[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(free.size())))];
        Pose p{cell, 1};                       // facing +y
        Pose pm{{11 - cell.col, cell.row}, 1};  // mirrored pose, same heading
        auto a = raycast_depth(g, p, 16);
        auto b = raycast_depth(m, pm, 16);
        for (int i = 0; i < 16; ++i)
            CHECK(a[static_cast<std::size_t>(i)] ==
                  doctest::Approx(b[static_cast<std::size_t>(15 - i)]).epsilon(1e-4));
    }
}

TEST_CASE("render_audio: a source dead ahead gives identical ears pre-noise") {
    OccupancyGrid g = open_grid(12, 12);
    SoundSpec s = one_hot_sound(8, 2);
    auto a = render_audio(g, {{3, 5}, 0}, {8, 5}, s, nullptr);
    for (int b = 0; b < 8; ++b)
        CHECK(a[static_cast<std::size_t>(b)] == a[static_cast<std::size_t>(8 + b)]);
}

TEST_CASE("render_audio: left/right ratio at +90 degrees, 1.5 m, one-hot spectrum") {
    OccupancyGrid g = open_grid(12, 12);
    SoundSpec s = one_hot_sound(8, 3);
    // heading +x, source one cell to the left (+y)
    auto a = render_audio(g, {{5, 5}, 0}, {5, 6}, s, nullptr);
    const float left = a[3], right = a[8 + 3];
    CHECK(left / right == doctest::Approx(1.7 / 0.3).epsilon(1e-4));
    CHECK(left == doctest::Approx(1.7f / 2.5f).epsilon(1e-4));  // 1/(1+1.5) * 1.7
}

TEST_CASE("render_audio: front/back ambiguity gives identical pre-noise observations") {
    OccupancyGrid g = open_grid(20, 20);
    SoundSpec s = one_hot_sound(8, 0);
    // theta and pi - theta: source at bearing atan2(3,4) vs atan2(3,-4)
    auto front = render_audio(g, {{9, 9}, 0}, {13, 12}, s, nullptr);
    auto back = render_audio(g, {{9, 9}, 0}, {5, 12}, s, nullptr);
    for (std::size_t i = 0; i < front.size(); ++i)
        CHECK(front[i] == doctest::Approx(back[i]).epsilon(1e-6));
}

TEST_CASE("render_audio: total intensity strictly decreases with distance") {
    OccupancyGrid g = open_grid(26, 5);
    SoundSpec s = one_hot_sound(8, 4);
    float prev = 1e30f;
    for (int d = 1; d <= 20; ++d) {
        auto a = render_audio(g, {{2, 2}, 0}, {2 + d, 2}, s, nullptr);
        float total = 0.f;
        for (float v : a) total += v;
        CHECK(total < prev);
        prev = total;
    }
}

TEST_CASE("render_audio: occlusion halves intensity per wall crossed") {
    OccupancyGrid g = open_grid(12, 12);
    SoundSpec s = one_hot_sound(8, 1);
    auto open = render_audio(g, {{3, 5}, 0}, {7, 5}, s, nullptr);
    g.set_blocked({5, 5}, true);
    auto occluded = render_audio(g, {{3, 5}, 0}, {7, 5}, s, nullptr);
    CHECK(occluded[1] == doctest::Approx(0.5f * open[1]).epsilon(1e-5));
}

TEST_CASE("step: Stop adjacent to the source succeeds with the +10 bonus") {
    OccupancyGrid grid = open_grid(10, 10);
    EpisodeSpec spec;
    spec.grid = grid;
    spec.start = {{4, 4}, 0};
    spec.source = {5, 4};
    spec.sound_id = 0;
    Env env;
    env.reset(spec, one_hot_sound(8, 0), 1);
    StepResult r = env.step(Action::kStop);
    CHECK(r.done);
    CHECK(r.success);
    CHECK(r.reward == doctest::Approx(10.0 + Env::kStepPenalty).epsilon(1e-5));
    CHECK_THROWS_AS(env.step(Action::kStop), ContractViolation);
}

TEST_CASE("step: moving into a wall is a penalized no-op") {
    OccupancyGrid grid = open_grid(10, 10);
    grid.set_blocked({5, 4}, true);
    EpisodeSpec spec;
    spec.grid = grid;
    spec.start = {{4, 4}, 0};
    spec.source = {4, 6};
    spec.sound_id = 0;
    Env env;
    env.reset(spec, one_hot_sound(8, 0), 1);
    StepResult r = env.step(Action::kMoveForward);
    CHECK(r.collided);
    CHECK_FALSE(r.moved);
    CHECK(env.pose().cell == Cell{4, 4});
    CHECK(r.reward == doctest::Approx(Env::kStepPenalty + Env::kCollisionPenalty).epsilon(1e-5));
}

TEST_CASE("step: four left turns return the pose at four step penalties") {
    OccupancyGrid grid = open_grid(10, 10);
    EpisodeSpec spec;
    spec.grid = grid;
    spec.start = {{4, 4}, 0};
    spec.source = {7, 7};
    spec.sound_id = 0;
    Env env;
    env.reset(spec, one_hot_sound(8, 0), 1);
    float total = 0.f;
    for (int i = 0; i < 4; ++i) total += env.step(Action::kTurnLeft).reward;
    CHECK(env.pose() == Pose{{4, 4}, 0});
    CHECK(total == doctest::Approx(4 * Env::kStepPenalty).epsilon(1e-5));
}

TEST_CASE("reward shaping telescopes to the net geodesic reduction") {
    SimParams params;
    params.grid_width = 12;
    params.grid_height = 12;
    SoundPool sounds = SoundPool::create(5, 8, 4, 2);
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        EpisodeSpec spec = sample_episode(seed, sounds, true, params);
        Env env;
        env.params = params;
        env.reset(spec, sounds.by_id(spec.sound_id), seed);
        const float geo0 = env.geodesic_now();
        // walk a fixed pseudo-random action sequence, tally shaping terms
        Rng rng(seed * 3 + 1);
        float total = 0.f;
        float penalties = 0.f;
        bool success = false;
        while (!env.done()) {
            Action a = static_cast<Action>(rng.uniform_int(0, 3));  // never Stop
            if (env.steps_taken() > 25) a = Action::kStop;
            StepResult r = env.step(a);
            total += r.reward;
            penalties += Env::kStepPenalty;
            if (r.collided) penalties += Env::kCollisionPenalty;
            if (r.success) success = true;
        }
        const float geoT = env.geodesic_now();
        const float shaping = total - penalties - (success ? Env::kSuccessBonus : 0.f);
        CHECK(shaping == doctest::Approx(Env::kRho * (geo0 - geoT)).epsilon(1e-3));
    }
}

TEST_CASE("truth labels match an independent binning of the raw geometry") {
    SimParams params;
    SoundPool sounds = SoundPool::create(9, 8, 4, 2);
    EpisodeSpec spec = sample_episode(4, sounds, true, params);
    Env env;
    env.params = params;
    env.reset(spec, sounds.by_id(spec.sound_id), 4);
    Rng rng(2);
    for (int t = 0; t < 40 && !env.done(); ++t) {
        StepResult r = env.step(static_cast<Action>(rng.uniform_int(0, 3)));
        const float dx = static_cast<float>(env.spec().source.col - env.pose().cell.col);
        const float dy = static_cast<float>(env.spec().source.row - env.pose().cell.row);
        const float d = std::sqrt(dx * dx + dy * dy) * kCellSize;
        const float world = std::atan2(dy, dx);
        float bearing = world - heading_angle(env.pose().heading);
        while (bearing > kPi) bearing -= 2 * kPi;
        while (bearing <= -kPi) bearing += 2 * kPi;
        const int dist_bin = std::min(19, std::max(0, static_cast<int>(d / 1.5f)));
        const int ang_bin = std::min(19, std::max(0, static_cast<int>((bearing + kPi) / (2 * kPi / 20))));
        CHECK(r.truth.distance_bin == dist_bin);
        CHECK(r.truth.angle_bin == ang_bin);
        CHECK(r.truth.reached == (r.truth.geodesic_m <= 1.5f));
    }
}

TEST_CASE("sample_episode: splits are honored and draws are reproducible") {
    SimParams params;
    SoundPool sounds = SoundPool::create(77, 8, 8, 4);
    std::set<int> heard_ids, unheard_ids;
    for (const auto& s : sounds.heard) heard_ids.insert(s.id);
    for (const auto& s : sounds.unheard) unheard_ids.insert(s.id);
    CHECK(heard_ids.size() == 8);
    CHECK(unheard_ids.size() == 4);
    for (int id : unheard_ids) CHECK(heard_ids.count(id) == 0);

    for (std::uint64_t seed = 1; seed <= 50; ++seed) {
        EpisodeSpec e = sample_episode(seed, sounds, false, params);
        CHECK(unheard_ids.count(e.sound_id) == 1);
        EpisodeSpec e2 = sample_episode(seed, sounds, false, params);
        CHECK(e.start == e2.start);
        CHECK(e.source == e2.source);
        CHECK(e.sound_id == e2.sound_id);
    }
}

TEST_CASE("sampled episodes keep the start-source geodesic within the band") {
    SimParams params;
    SoundPool sounds = SoundPool::create(123, 8, 8, 4);
    for (std::uint64_t seed = 1; seed <= 1000; ++seed) {
        EpisodeSpec e = sample_episode(seed, sounds, true, params);
        const float d = geodesic_distance(e.grid, e.start.cell, e.source);
        CHECK(d >= params.difficulty.min_hops * kCellSize);
        CHECK(d <= params.difficulty.max_hops * kCellSize);
    }
}

TEST_CASE("episode observations are deterministic per noise seed") {
    SimParams params;
    SoundPool sounds = SoundPool::create(3, 8, 4, 2);
    EpisodeSpec spec = sample_episode(9, sounds, true, params);
    auto run = [&](std::vector<float>& out) {
        Env env;
        env.params = params;
        env.reset(spec, sounds.by_id(spec.sound_id), 1234);
        out.clear();
        auto o = env.observe_with_noise();
        out.insert(out.end(), o.audio.begin(), o.audio.end());
        for (int t = 0; t < 5; ++t) {
            auto r = env.step(Action::kTurnLeft);
            out.insert(out.end(), r.obs.audio.begin(), r.obs.audio.end());
        }
    };
    std::vector<float> a, b;
    run(a);
    run(b);
    CHECK(a == b);
}

TEST_CASE("grid dump carries the header and start/source markers") {
    OccupancyGrid g = open_grid(6, 5);
    g.seed = 99;
    std::string dump = dump_grid(g, Cell{1, 1}, Cell{4, 3});
    CHECK(dump.rfind("grid 6 5 99\n", 0) == 0);
    CHECK(dump.find('S') != std::string::npos);
    CHECK(dump.find('G') != std::string::npos);
    // border row is fully blocked
    CHECK(dump.substr(12, 6) == "######");
}
