#include "sacf/sim.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <sstream>

namespace sacf::sim {

namespace {
constexpr float kPi = 3.14159265358979323846f;
constexpr float kMaxDepthM = 30.f;

constexpr int kDx[4] = {1, 0, -1, 0};
constexpr int kDy[4] = {0, 1, 0, -1};

float wrap_angle(float a) {
    while (a > kPi) a -= 2.f * kPi;
    while (a <= -kPi) a += 2.f * kPi;
    return a;
}
}  // namespace

float heading_angle(int heading) {
    SACF_REQUIRE(0 <= heading && heading < 4, "heading_angle: bad heading");
    return static_cast<float>(heading) * (kPi / 2.f);
}

OccupancyGrid::OccupancyGrid(int width, int height) : width_(width), height_(height) {
    SACF_REQUIRE(width >= 3 && height >= 3, "OccupancyGrid: too small");
    blocked_.assign(static_cast<std::size_t>(width) * height, 1);
}

bool OccupancyGrid::blocked(Cell c) const {
    SACF_REQUIRE(in_bounds(c), "OccupancyGrid::blocked: out of bounds");
    return blocked_[static_cast<std::size_t>(c.row) * width_ + c.col] != 0;
}

void OccupancyGrid::set_blocked(Cell c, bool b) {
    SACF_REQUIRE(in_bounds(c), "OccupancyGrid::set_blocked: out of bounds");
    blocked_[static_cast<std::size_t>(c.row) * width_ + c.col] = b ? 1 : 0;
}

int OccupancyGrid::free_count() const {
    int n = 0;
    for (auto b : blocked_)
        if (!b) ++n;
    return n;
}

bool OccupancyGrid::connected() const {
    Cell start{-1, -1};
    for (int r = 0; r < height_ && start.col < 0; ++r)
        for (int c = 0; c < width_; ++c)
            if (!blocked({c, r})) {
                start = {c, r};
                break;
            }
    if (start.col < 0) return false;
    std::vector<std::uint8_t> seen(blocked_.size(), 0);
    std::deque<Cell> q{start};
    seen[static_cast<std::size_t>(start.row) * width_ + start.col] = 1;
    int reached = 0;
    while (!q.empty()) {
        Cell c = q.front();
        q.pop_front();
        ++reached;
        for (int d = 0; d < 4; ++d) {
            Cell n{c.col + kDx[d], c.row + kDy[d]};
            if (!in_bounds(n) || blocked(n)) continue;
            auto& s = seen[static_cast<std::size_t>(n.row) * width_ + n.col];
            if (!s) {
                s = 1;
                q.push_back(n);
            }
        }
    }
    return reached == free_count();
}

OccupancyGrid generate_grid(std::uint64_t seed, int width, int height) {
    for (int attempt = 0; attempt < 64; ++attempt) {
        Rng rng = derive_stream(seed, "grid-gen", static_cast<std::uint64_t>(attempt));
        OccupancyGrid g(width, height);
        g.seed = seed;
        // open interior
        for (int r = 1; r < height - 1; ++r)
            for (int c = 1; c < width - 1; ++c) g.set_blocked({c, r}, false);

        // wall lines with generous door gaps carve the space into rooms and
        // corridors; partial walls keep most sightlines open
        const int n_vwalls = rng.uniform_int(1, 3);
        const int n_hwalls = rng.uniform_int(1, 3);
        for (int i = 0; i < n_vwalls; ++i) {
            const int col = rng.uniform_int(3, width - 3);
            const int lo = rng.uniform_int(1, height / 2);
            const int hi = rng.uniform_int(height / 2, height - 1);
            for (int r = lo; r < hi; ++r) g.set_blocked({col, r}, true);
            const int doors = rng.uniform_int(3, 6);
            for (int d = 0; d < doors; ++d)
                g.set_blocked({col, rng.uniform_int(lo, hi)}, false);
        }
        for (int i = 0; i < n_hwalls; ++i) {
            const int row = rng.uniform_int(3, height - 3);
            const int lo = rng.uniform_int(1, width / 2);
            const int hi = rng.uniform_int(width / 2, width - 1);
            for (int c = lo; c < hi; ++c) g.set_blocked({c, row}, true);
            const int doors = rng.uniform_int(3, 6);
            for (int d = 0; d < doors; ++d)
                g.set_blocked({rng.uniform_int(lo, hi), row}, false);
        }
        // scattered pillars
        const int pillars = rng.uniform_int(1, 4);
        for (int i = 0; i < pillars; ++i)
            g.set_blocked({rng.uniform_int(1, width - 1), rng.uniform_int(1, height - 1)}, true);

        if (g.free_count() >= (width * height * 2) / 5 && g.connected()) return g;
    }
    throw Fault("generate_grid: no valid layout after bounded retries");
}

std::vector<int> geodesic_field(const OccupancyGrid& grid, Cell source) {
    SACF_REQUIRE(grid.free_cell(source), "geodesic_field: source cell is blocked");
    std::vector<int> dist(static_cast<std::size_t>(grid.width()) * grid.height(), -1);
    std::deque<Cell> q{source};
    dist[static_cast<std::size_t>(source.row) * grid.width() + source.col] = 0;
    while (!q.empty()) {
        Cell c = q.front();
        q.pop_front();
        const int d = dist[static_cast<std::size_t>(c.row) * grid.width() + c.col];
        for (int k = 0; k < 4; ++k) {
            Cell n{c.col + kDx[k], c.row + kDy[k]};
            if (!grid.in_bounds(n) || grid.blocked(n)) continue;
            auto& dn = dist[static_cast<std::size_t>(n.row) * grid.width() + n.col];
            if (dn < 0) {
                dn = d + 1;
                q.push_back(n);
            }
        }
    }
    return dist;
}

float geodesic_distance(const OccupancyGrid& grid, Cell a, Cell b) {
    SACF_REQUIRE(grid.free_cell(a) && grid.free_cell(b), "geodesic_distance: blocked endpoint");
    auto field = geodesic_field(grid, b);
    const int hops = field[static_cast<std::size_t>(a.row) * grid.width() + a.col];
    if (hops < 0) return std::numeric_limits<float>::infinity();
    return static_cast<float>(hops) * kCellSize;
}

std::vector<float> raycast_depth(const OccupancyGrid& grid, const Pose& pose, int rays) {
    SACF_REQUIRE(grid.free_cell(pose.cell), "raycast_depth: pose on blocked cell");
    SACF_REQUIRE(rays > 0, "raycast_depth: rays must be positive");
    std::vector<float> out(static_cast<std::size_t>(rays));
    const float fov = kPi / 2.f;
    const float base = heading_angle(pose.heading);
    for (int i = 0; i < rays; ++i) {
        // +45 deg (left) down to -45 deg (right)
        const float off = fov * (0.5f - (static_cast<float>(i) + 0.5f) / static_cast<float>(rays));
        const float ang = base + off;
        const float dx = std::cos(ang), dy = std::sin(ang);
        // DDA from the cell center until entering a blocked cell
        float ox = static_cast<float>(pose.cell.col) + 0.5f;
        float oy = static_cast<float>(pose.cell.row) + 0.5f;
        int cx = pose.cell.col, cy = pose.cell.row;
        const int sx = dx > 0 ? 1 : -1, sy = dy > 0 ? 1 : -1;
        float t_max_x = dx != 0.f
                            ? ((static_cast<float>(cx) + (dx > 0 ? 1.f : 0.f)) - ox) / dx
                            : std::numeric_limits<float>::infinity();
        float t_max_y = dy != 0.f
                            ? ((static_cast<float>(cy) + (dy > 0 ? 1.f : 0.f)) - oy) / dy
                            : std::numeric_limits<float>::infinity();
        const float t_dx = dx != 0.f ? std::abs(1.f / dx) : std::numeric_limits<float>::infinity();
        const float t_dy = dy != 0.f ? std::abs(1.f / dy) : std::numeric_limits<float>::infinity();
        float depth_m = kMaxDepthM;
        while (true) {
            float t;
            if (t_max_x < t_max_y) {
                t = t_max_x;
                t_max_x += t_dx;
                cx += sx;
            } else {
                t = t_max_y;
                t_max_y += t_dy;
                cy += sy;
            }
            if (!grid.in_bounds({cx, cy}) || grid.blocked({cx, cy})) {
                depth_m = t * kCellSize + 0.5f * kCellSize;
                break;
            }
            if (t * kCellSize > kMaxDepthM) break;
        }
        out[static_cast<std::size_t>(i)] = std::min(depth_m, kMaxDepthM) / kMaxDepthM;
    }
    return out;
}

SoundPool SoundPool::create(std::uint64_t master_seed, int bands, int n_heard, int n_unheard) {
    SACF_REQUIRE(bands > 0 && n_heard > 0 && n_unheard >= 0, "SoundPool: bad sizes");
    SoundPool pool;
    Rng rng = derive_stream(master_seed, "sounds");
    int next_id = 0;
    auto draw = [&](bool heard) {
        SoundSpec s;
        s.id = next_id++;
        s.heard = heard;
        s.spectrum.resize(static_cast<std::size_t>(bands));
        // cubing the uniform draw concentrates energy in a few dominant
        // bands, so spectra are mutually distinctive
        float norm = 0.f;
        for (auto& v : s.spectrum) {
            const float u = rng.uniform(0.f, 1.f);
            v = 0.02f + u * u * u;
            norm += v * v;
        }
        norm = std::sqrt(norm);
        for (auto& v : s.spectrum) v /= norm;
        return s;
    };
    for (int i = 0; i < n_heard; ++i) pool.heard.push_back(draw(true));
    for (int i = 0; i < n_unheard; ++i) pool.unheard.push_back(draw(false));
    return pool;
}

const SoundSpec& SoundPool::by_id(int id) const {
    for (const auto& s : heard)
        if (s.id == id) return s;
    for (const auto& s : unheard)
        if (s.id == id) return s;
    throw ContractViolation("SoundPool: unknown sound id " + std::to_string(id));
}

float euclidean_distance(Cell a, Cell b) {
    const float dx = static_cast<float>(b.col - a.col);
    const float dy = static_cast<float>(b.row - a.row);
    return std::sqrt(dx * dx + dy * dy) * kCellSize;
}

float relative_bearing(const Pose& pose, Cell target) {
    const float dx = static_cast<float>(target.col - pose.cell.col);
    const float dy = static_cast<float>(target.row - pose.cell.row);
    const float world = std::atan2(dy, dx);
    return wrap_angle(world - heading_angle(pose.heading));
}

int walls_crossed(const OccupancyGrid& grid, Cell a, Cell b) {
    // supercover traversal of the segment between cell centers
    if (a == b) return 0;
    const double x0 = a.col + 0.5, y0 = a.row + 0.5;
    const double x1 = b.col + 0.5, y1 = b.row + 0.5;
    const double dx = x1 - x0, dy = y1 - y0;
    const double len = std::sqrt(dx * dx + dy * dy);
    int count = 0;
    int cx = a.col, cy = a.row;
    const int sx = dx > 0 ? 1 : -1, sy = dy > 0 ? 1 : -1;
    const double inv_dx = dx != 0.0 ? std::abs(len / dx) : std::numeric_limits<double>::infinity();
    const double inv_dy = dy != 0.0 ? std::abs(len / dy) : std::numeric_limits<double>::infinity();
    double t_max_x = dx != 0.0 ? std::abs(((dx > 0 ? cx + 1 : cx) - x0) / dx) * len
                               : std::numeric_limits<double>::infinity();
    double t_max_y = dy != 0.0 ? std::abs(((dy > 0 ? cy + 1 : cy) - y0) / dy) * len
                               : std::numeric_limits<double>::infinity();
    constexpr double kTie = 1e-9;
    while (cx != b.col || cy != b.row) {
        if (std::abs(t_max_x - t_max_y) < kTie) {
            // corner touch: conservative traversal visits both side cells
            if (grid.in_bounds({cx + sx, cy}) && grid.blocked({cx + sx, cy})) ++count;
            if (grid.in_bounds({cx, cy + sy}) && grid.blocked({cx, cy + sy})) ++count;
            cx += sx;
            cy += sy;
            t_max_x += inv_dx;
            t_max_y += inv_dy;
        } else if (t_max_x < t_max_y) {
            cx += sx;
            t_max_x += inv_dx;
        } else {
            cy += sy;
            t_max_y += inv_dy;
        }
        if (cx == b.col && cy == b.row) break;
        if (grid.in_bounds({cx, cy}) && grid.blocked({cx, cy})) ++count;
        if (std::abs(cx - a.col) > grid.width() + 2 || std::abs(cy - a.row) > grid.height() + 2)
            throw Fault("walls_crossed: traversal escaped the grid");
    }
    return count;
}

std::vector<float> render_audio(const OccupancyGrid& grid, const Pose& pose, Cell source,
                                const SoundSpec& sound, Rng* noise_rng, float ild, float occlusion,
                                float noise_sd) {
    SACF_REQUIRE(grid.free_cell(pose.cell) && grid.free_cell(source), "render_audio: bad geometry");
    const int bands = static_cast<int>(sound.spectrum.size());
    const float d = euclidean_distance(pose.cell, source);
    const float theta = relative_bearing(pose, source);
    const int w = walls_crossed(grid, pose.cell, source);
    const float occ = std::pow(occlusion, static_cast<float>(w));
    const float lgain = (1.f + ild * std::sin(theta)) * occ;
    const float rgain = (1.f - ild * std::sin(theta)) * occ;
    std::vector<float> out(static_cast<std::size_t>(2 * bands));
    for (int b = 0; b < bands; ++b) {
        const float base = sound.spectrum[static_cast<std::size_t>(b)] / (1.f + d);
        out[static_cast<std::size_t>(b)] = base * lgain;
        out[static_cast<std::size_t>(bands + b)] = base * rgain;
    }
    if (noise_rng) {
        for (auto& v : out) v = std::max(0.f, v + noise_rng->normal(0.f, noise_sd));
    }
    return out;
}

EpisodeSpec sample_episode(std::uint64_t seed, const SoundPool& sounds, bool heard_split,
                           const SimParams& params) {
    const auto& pool = heard_split ? sounds.heard : sounds.unheard;
    SACF_REQUIRE(!pool.empty(), "sample_episode: empty sound pool for split");
    for (int attempt = 0; attempt < 64; ++attempt) {
        Rng rng = derive_stream(seed, "episode", static_cast<std::uint64_t>(attempt));
        OccupancyGrid grid = generate_grid(rng.next_u64(), params.grid_width, params.grid_height);
        std::vector<Cell> free;
        for (int r = 0; r < grid.height(); ++r)
            for (int c = 0; c < grid.width(); ++c)
                if (grid.free_cell({c, r})) free.push_back({c, r});
        const Cell start = free[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(free.size())))];
        auto field = geodesic_field(grid, start);
        std::vector<Cell> candidates;
        for (const Cell& c : free) {
            const int hops = field[static_cast<std::size_t>(c.row) * grid.width() + c.col];
            if (hops >= params.difficulty.min_hops && hops <= params.difficulty.max_hops)
                candidates.push_back(c);
        }
        if (candidates.empty()) continue;
        EpisodeSpec spec;
        spec.grid = std::move(grid);
        spec.start.cell = start;
        spec.start.heading = rng.uniform_int(0, 4);
        spec.source =
            candidates[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(candidates.size())))];
        spec.sound_id = pool[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(pool.size())))].id;
        spec.max_steps = params.max_steps;
        spec.success_radius_cells = params.success_radius_cells;
        return spec;
    }
    throw Fault("sample_episode: no valid placement after bounded retries");
}

void Env::reset(EpisodeSpec spec, SoundSpec sound, std::uint64_t noise_seed) {
    SACF_REQUIRE(spec.grid.free_cell(spec.start.cell) && spec.grid.free_cell(spec.source),
                 "Env::reset: start/source must be free cells");
    SACF_REQUIRE(!(spec.start.cell == spec.source), "Env::reset: source equals start");
    SACF_REQUIRE(sound.id == spec.sound_id, "Env::reset: sound does not match episode spec");
    field_ = geodesic_field(spec.grid, spec.source);
    const int hops =
        field_[static_cast<std::size_t>(spec.start.cell.row) * spec.grid.width() + spec.start.cell.col];
    SACF_REQUIRE(hops >= 0, "Env::reset: start disconnected from source");
    spec_ = std::move(spec);
    sound_ = std::move(sound);
    pose_ = spec_.start;
    noise_rng_ = derive_stream(noise_seed, "env-noise");
    done_ = false;
    steps_ = 0;
}

float Env::geodesic_now() const {
    const int hops =
        field_[static_cast<std::size_t>(pose_.cell.row) * spec_.grid.width() + pose_.cell.col];
    return static_cast<float>(hops) * kCellSize;
}

Observation Env::observe(Rng* noise_rng) {
    Observation o;
    o.depth = raycast_depth(spec_.grid, pose_, params.rays);
    o.audio = render_audio(spec_.grid, pose_, spec_.source, sound_, noise_rng, params.ild,
                           params.occlusion, params.noise_sd);
    return o;
}

TruthLabels Env::truth() const {
    TruthLabels t;
    t.euclidean_m = euclidean_distance(pose_.cell, spec_.source);
    t.bearing_rad = relative_bearing(pose_, spec_.source);
    t.geodesic_m = geodesic_now();
    const float bin_w = 30.f / static_cast<float>(distance_bins);
    t.distance_bin =
        std::min(std::max(static_cast<int>(t.euclidean_m / bin_w), 0), distance_bins - 1);
    const float aw = 2.f * kPi / static_cast<float>(distance_bins);
    t.angle_bin =
        std::min(std::max(static_cast<int>((t.bearing_rad + kPi) / aw), 0), distance_bins - 1);
    t.reached = t.geodesic_m <= static_cast<float>(spec_.success_radius_cells) * kCellSize;
    return t;
}

StepResult Env::step(Action a) {
    SACF_REQUIRE(!done_, "Env::step: episode already done");
    StepResult r;
    const float geo_before = geodesic_now();
    float reward = kStepPenalty;

    switch (a) {
        case Action::kMoveForward: {
            Cell target{pose_.cell.col + kDx[pose_.heading], pose_.cell.row + kDy[pose_.heading]};
            if (spec_.grid.free_cell(target)) {
                pose_.cell = target;
                r.moved = true;
            } else {
                r.collided = true;
                reward += kCollisionPenalty;
            }
            break;
        }
        case Action::kTurnLeft:
            pose_.heading = (pose_.heading + 1) % 4;
            break;
        case Action::kTurnRight:
            pose_.heading = (pose_.heading + 3) % 4;
            break;
        case Action::kStop:
            done_ = true;
            break;
    }
    ++steps_;
    const float geo_after = geodesic_now();
    reward += kRho * (geo_before - geo_after);

    if (a == Action::kStop) {
        r.success = geo_after <= static_cast<float>(spec_.success_radius_cells) * kCellSize;
        if (r.success) reward += kSuccessBonus;
    }
    if (steps_ >= spec_.max_steps) done_ = true;

    r.reward = reward;
    r.done = done_;
    r.obs = observe(&noise_rng_);
    r.truth = truth();
    return r;
}

std::string dump_grid(const OccupancyGrid& grid, std::optional<Cell> start,
                      std::optional<Cell> source) {
    std::ostringstream os;
    os << "grid " << grid.width() << " " << grid.height() << " " << grid.seed << "\n";
    for (int r = 0; r < grid.height(); ++r) {
        for (int c = 0; c < grid.width(); ++c) {
            Cell cell{c, r};
            char ch = grid.blocked(cell) ? '#' : '.';
            if (start && *start == cell) ch = 'S';
            if (source && *source == cell) ch = 'G';
            os << ch;
        }
        os << "\n";
    }
    return os.str();
}

}  // namespace sacf::sim
