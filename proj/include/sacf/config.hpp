#pragma once

#include <string>

#include "sacf/nets.hpp"
#include "sacf/ppo.hpp"
#include "sacf/sim.hpp"

namespace sacf {

// Every tunable in one place. Serializes to line-oriented `key = value` text
// with dotted section keys; parsing rejects unknown keys and the
// parse/serialize pair round-trips losslessly.
struct ExperimentConfig {
    PpoConfig ppo;
    NetConfig net;
    sim::SimParams simp;

    std::uint64_t seed = 1;
    std::string variant = "sacf-full";
    int heard_sounds = 8;
    int unheard_sounds = 4;
    int eval_episodes = 100;
    int eval_every = 100;
    int checkpoint_every = 500;

    void validate() const;

    // Keeps the duplicated dimensions (rays, bands, bins, ...) coherent.
    void sync_derived();

    std::string serialize() const;
    static ExperimentConfig parse(const std::string& text);
    static ExperimentConfig load_file(const std::string& path);
    void save_file(const std::string& path) const;

    // FNV-1a over the canonical serialization, as a 16-hex-digit string.
    std::string digest() const;
};

}  // namespace sacf
