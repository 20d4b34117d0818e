#include "sacf/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "sacf/acvf.hpp"

namespace sacf {

namespace {

enum class FieldType { kInt, kFloat, kU64, kString };

struct Field {
    const char* key;
    FieldType type;
    std::function<std::string(const ExperimentConfig&)> get;
    std::function<void(ExperimentConfig&, const std::string&)> set;
};

std::string fmt_float(float v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
    return buf;
}

float parse_float(const std::string& s) {
    std::size_t pos = 0;
    float v = std::stof(s, &pos);
    SACF_REQUIRE(pos == s.size(), "config: bad float value '" + s + "'");
    return v;
}

int parse_int(const std::string& s) {
    std::size_t pos = 0;
    int v = std::stoi(s, &pos);
    SACF_REQUIRE(pos == s.size(), "config: bad int value '" + s + "'");
    return v;
}

std::uint64_t parse_u64(const std::string& s) {
    std::size_t pos = 0;
    std::uint64_t v = std::stoull(s, &pos);
    SACF_REQUIRE(pos == s.size(), "config: bad unsigned value '" + s + "'");
    return v;
}

#define FIELD_INT(key, expr)                                                            \
    Field {                                                                             \
        key, FieldType::kInt, [](const ExperimentConfig& c) { return std::to_string(c.expr); }, \
            [](ExperimentConfig& c, const std::string& s) { c.expr = parse_int(s); }    \
    }
#define FIELD_FLOAT(key, expr)                                                         \
    Field {                                                                            \
        key, FieldType::kFloat, [](const ExperimentConfig& c) { return fmt_float(c.expr); }, \
            [](ExperimentConfig& c, const std::string& s) { c.expr = parse_float(s); } \
    }

std::vector<Field> field_table() {
    std::vector<Field> f = {
        FIELD_FLOAT("ppo.clip", ppo.clip),
        FIELD_INT("ppo.epochs", ppo.epochs),
        FIELD_INT("ppo.minibatches", ppo.minibatches),
        FIELD_FLOAT("ppo.value_coef", ppo.value_coef),
        FIELD_FLOAT("ppo.entropy_coef", ppo.entropy_coef),
        FIELD_FLOAT("ppo.max_grad_norm", ppo.max_grad_norm),
        FIELD_FLOAT("ppo.lr", ppo.lr),
        FIELD_FLOAT("ppo.adam_eps", ppo.adam_eps),
        FIELD_FLOAT("ppo.gamma", ppo.gamma),
        FIELD_FLOAT("ppo.gae_lambda", ppo.gae_lambda),
        FIELD_INT("ppo.updates", ppo.updates),
        FIELD_FLOAT("ppo.aux_weight", ppo.aux_weight),
        FIELD_INT("ppo.horizon", ppo.horizon),
        FIELD_INT("ppo.num_envs", ppo.num_envs),

        FIELD_INT("net.rays", net.rays),
        FIELD_INT("net.vis_c1", net.vis_c1),
        FIELD_INT("net.vis_k1", net.vis_k1),
        FIELD_INT("net.vis_s1", net.vis_s1),
        FIELD_INT("net.vis_c2", net.vis_c2),
        FIELD_INT("net.vis_k2", net.vis_k2),
        FIELD_INT("net.vis_s2", net.vis_s2),
        FIELD_INT("net.channels", net.channels),
        FIELD_INT("net.map_h", net.map_h),
        FIELD_INT("net.map_w", net.map_w),
        FIELD_INT("net.bands", net.bands),
        FIELD_INT("net.audio_channels", net.audio_channels),
        FIELD_INT("net.audio_h", net.audio_h),
        FIELD_INT("net.audio_w", net.audio_w),
        FIELD_INT("net.audio_embed", net.audio_embed),
        FIELD_INT("net.fused_dim", net.fused_dim),
        FIELD_INT("net.bins", net.bins),
        FIELD_INT("net.lstm_hidden", net.lstm_hidden),
        FIELD_INT("net.descriptor_dim", net.descriptor_dim),
        FIELD_INT("net.psi_hidden", net.psi_hidden),
        FIELD_INT("net.gru_hidden", net.gru_hidden),
        FIELD_INT("net.attention_dim", net.attention_dim),

        FIELD_INT("sim.grid_width", simp.grid_width),
        FIELD_INT("sim.grid_height", simp.grid_height),
        FIELD_INT("sim.max_steps", simp.max_steps),
        FIELD_INT("sim.success_radius_cells", simp.success_radius_cells),
        FIELD_INT("sim.difficulty_min", simp.difficulty.min_hops),
        FIELD_INT("sim.difficulty_max", simp.difficulty.max_hops),
        FIELD_FLOAT("sim.ild", simp.ild),
        FIELD_FLOAT("sim.occlusion", simp.occlusion),
        FIELD_FLOAT("sim.noise_sd", simp.noise_sd),
        FIELD_INT("sim.heard_sounds", heard_sounds),
        FIELD_INT("sim.unheard_sounds", unheard_sounds),

        FIELD_INT("run.eval_episodes", eval_episodes),
        FIELD_INT("run.eval_every", eval_every),
        FIELD_INT("run.checkpoint_every", checkpoint_every),
    };
    f.push_back(Field{"run.seed", FieldType::kU64,
                      [](const ExperimentConfig& c) { return std::to_string(c.seed); },
                      [](ExperimentConfig& c, const std::string& s) { c.seed = parse_u64(s); }});
    f.push_back(Field{"run.variant", FieldType::kString,
                      [](const ExperimentConfig& c) { return c.variant; },
                      [](ExperimentConfig& c, const std::string& s) { c.variant = s; }});
    std::sort(f.begin(), f.end(), [](const Field& a, const Field& b) {
        return std::string_view(a.key) < std::string_view(b.key);
    });
    return f;
}

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    std::size_t b = s.find_last_not_of(" \t\r");
    if (a == std::string::npos) return "";
    return s.substr(a, b - a + 1);
}

}  // namespace

void ExperimentConfig::validate() const {
    net.validate();
    variant_from_name(variant);  // throws on unknown names
    SACF_REQUIRE(ppo.epochs > 0 && ppo.horizon > 0 && ppo.num_envs > 0 && ppo.updates > 0,
                 "config: ppo sizes must be positive");
    SACF_REQUIRE(ppo.minibatches == 1, "config: only 1 minibatch is supported");
    SACF_REQUIRE(heard_sounds > 0 && unheard_sounds > 0, "config: sound pools must be non-empty");
    SACF_REQUIRE(eval_episodes > 0 && eval_every > 0 && checkpoint_every > 0,
                 "config: eval/checkpoint cadence must be positive");
    SACF_REQUIRE(simp.difficulty.min_hops >= 1 &&
                     simp.difficulty.max_hops >= simp.difficulty.min_hops,
                 "config: bad difficulty band");
}

void ExperimentConfig::sync_derived() {
    simp.rays = net.rays;
}

std::string ExperimentConfig::serialize() const {
    std::ostringstream os;
    os << "# sacf experiment configuration\n";
    std::string section;
    for (const auto& f : field_table()) {
        std::string key(f.key);
        std::string sec = key.substr(0, key.find('.'));
        if (sec != section) {
            os << "\n";
            section = sec;
        }
        os << key << " = " << f.get(*this) << "\n";
    }
    return os.str();
}

ExperimentConfig ExperimentConfig::parse(const std::string& text) {
    ExperimentConfig cfg;
    auto fields = field_table();
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const std::size_t eq = t.find('=');
        SACF_REQUIRE(eq != std::string::npos,
                     "config: line " + std::to_string(lineno) + " is not 'key = value'");
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        auto it = std::find_if(fields.begin(), fields.end(),
                               [&](const Field& f) { return key == f.key; });
        SACF_REQUIRE(it != fields.end(),
                     "config: unknown key '" + key + "' at line " + std::to_string(lineno));
        it->set(cfg, value);
    }
    cfg.sync_derived();
    cfg.validate();
    return cfg;
}

ExperimentConfig ExperimentConfig::load_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Fault("config: cannot open " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse(ss.str());
}

void ExperimentConfig::save_file(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw Fault("config: cannot write " + path);
    f << serialize();
}

std::string ExperimentConfig::digest() const {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(serialize())));
    return buf;
}

}  // namespace sacf
