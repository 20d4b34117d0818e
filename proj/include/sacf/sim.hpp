#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sacf/common.hpp"

namespace sacf::sim {

constexpr float kCellSize = 1.5f;  // meters

struct Cell {
    int col = 0, row = 0;
    bool operator==(const Cell&) const = default;
};

// Heading indices: 0:+x 1:+y 2:-x 3:-y (counterclockwise, +y is "up").
struct Pose {
    Cell cell;
    int heading = 0;
    bool operator==(const Pose&) const = default;
};

float heading_angle(int heading);

class OccupancyGrid {
public:
    OccupancyGrid() = default;
    OccupancyGrid(int width, int height);

    int width() const { return width_; }
    int height() const { return height_; }
    bool in_bounds(Cell c) const {
        return c.col >= 0 && c.col < width_ && c.row >= 0 && c.row < height_;
    }
    bool blocked(Cell c) const;
    bool free_cell(Cell c) const { return in_bounds(c) && !blocked(c); }
    void set_blocked(Cell c, bool b);

    int free_count() const;
    // All free cells mutually reachable through 4-connectivity.
    bool connected() const;

    std::uint64_t seed = 0;

private:
    int width_ = 0, height_ = 0;
    std::vector<std::uint8_t> blocked_;
};

// Random rooms-and-corridors layout: wall lines with door gaps plus scattered
// pillars. Border cells are blocked, free cells are one connected component,
// free fraction is at least 40% of the full grid.
OccupancyGrid generate_grid(std::uint64_t seed, int width = 20, int height = 20);

// 4-connected BFS hop count times the cell size. Both endpoints must be free.
float geodesic_distance(const OccupancyGrid& grid, Cell a, Cell b);

// Full BFS distance field (in hops; -1 where unreachable) from a source cell.
std::vector<int> geodesic_field(const OccupancyGrid& grid, Cell source);

// R rays over a 90-degree field of view centered on the heading, ordered from
// +45 (left) to -45 (right). Depth is the boundary-entry distance plus half a
// cell (center-to-center for axis-aligned rays), clamped to 30 m, divided by 30.
std::vector<float> raycast_depth(const OccupancyGrid& grid, const Pose& pose, int rays = 32);

struct SoundSpec {
    int id = 0;
    std::vector<float> spectrum;  // length B, positive, unit L2 norm
    bool heard = true;
};

struct SoundPool {
    std::vector<SoundSpec> heard;
    std::vector<SoundSpec> unheard;

    static SoundPool create(std::uint64_t master_seed, int bands, int n_heard, int n_unheard);
    const SoundSpec& by_id(int id) const;
};

// Euclidean center-to-center distance in meters.
float euclidean_distance(Cell a, Cell b);
// Bearing of b in a's heading frame, (-pi, pi], positive to the left.
float relative_bearing(const Pose& pose, Cell target);
// Number of blocked cells crossed by the straight segment between the two
// cell centers (supercover traversal: corner touches count both cells).
int walls_crossed(const OccupancyGrid& grid, Cell a, Cell b);

// Binaural band intensities [left row, right row], flattened to length 2B.
// Pass a null rng for the noise-free rendering used by tests and labels.
std::vector<float> render_audio(const OccupancyGrid& grid, const Pose& pose, Cell source,
                                const SoundSpec& sound, Rng* noise_rng,
                                float ild = 0.7f, float occlusion = 0.5f, float noise_sd = 0.01f);

struct EpisodeSpec {
    OccupancyGrid grid;
    Pose start;
    Cell source;
    int sound_id = 0;
    int max_steps = 200;
    int success_radius_cells = 1;
};

struct DifficultyBand {
    int min_hops = 4;
    int max_hops = 16;
};

struct SimParams {
    int grid_width = 20;
    int grid_height = 20;
    int rays = 32;
    int max_steps = 200;
    int success_radius_cells = 1;
    DifficultyBand difficulty;
    float ild = 0.7f;
    float occlusion = 0.5f;
    float noise_sd = 0.01f;
};

// Deterministic episode draw: grid, start pose, source placement within the
// difficulty band (in geodesic hops), and a sound id from the requested split.
EpisodeSpec sample_episode(std::uint64_t seed, const SoundPool& sounds, bool heard_split,
                           const SimParams& params);

enum class Action { kMoveForward = 0, kTurnLeft = 1, kTurnRight = 2, kStop = 3 };
constexpr int kNumActions = 4;

struct Observation {
    std::vector<float> depth;  // R values in [0, 1]
    std::vector<float> audio;  // 2B values >= 0
};

struct TruthLabels {
    int distance_bin = 0;
    int angle_bin = 0;
    bool reached = false;
    float geodesic_m = 0.f;
    float euclidean_m = 0.f;
    float bearing_rad = 0.f;
};

struct StepResult {
    Observation obs;
    float reward = 0.f;
    bool done = false;
    bool success = false;
    bool collided = false;
    bool moved = false;
    TruthLabels truth;
};

// One episode instance. Owns the BFS field for its source; rewards are the
// geodesic-shaping scheme (rho * meters of geodesic reduction, step and
// collision penalties, success bonus).
class Env {
public:
    Env() = default;

    void reset(EpisodeSpec spec, SoundSpec sound, std::uint64_t noise_seed);
    StepResult step(Action a);

    Observation observe(Rng* noise_rng);
    // Draws from the episode's own noise stream (what step() uses).
    Observation observe_with_noise() { return observe(&noise_rng_); }
    TruthLabels truth() const;

    bool done() const { return done_; }
    const Pose& pose() const { return pose_; }
    const EpisodeSpec& spec() const { return spec_; }
    int steps_taken() const { return steps_; }
    float geodesic_now() const;
    int distance_bins = 20;
    SimParams params;

    static constexpr float kRho = 1.0f;               // per meter of geodesic reduced
    static constexpr float kStepPenalty = -0.01f;
    static constexpr float kCollisionPenalty = -0.05f;
    static constexpr float kSuccessBonus = 10.f;

    const SoundSpec& sound() const { return sound_; }

private:
    EpisodeSpec spec_;
    SoundSpec sound_;
    Pose pose_;
    std::vector<int> field_;
    Rng noise_rng_{0};
    bool done_ = true;
    int steps_ = 0;
};

// Line-oriented dump: header `grid <width> <height> <seed>`, then one row per
// line with '#' blocked, '.' free, 'S' start, 'G' source.
std::string dump_grid(const OccupancyGrid& grid, std::optional<Cell> start = {},
                      std::optional<Cell> source = {});

}  // namespace sacf::sim
