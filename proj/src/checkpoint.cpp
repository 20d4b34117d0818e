#include "sacf/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <sstream>

namespace sacf {

namespace {

void append_le_floats(std::string& out, std::span<const float> v) {
    for (float x : v) {
        const std::uint32_t bits = std::bit_cast<std::uint32_t>(x);
        out.push_back(static_cast<char>(bits & 0xff));
        out.push_back(static_cast<char>((bits >> 8) & 0xff));
        out.push_back(static_cast<char>((bits >> 16) & 0xff));
        out.push_back(static_cast<char>((bits >> 24) & 0xff));
    }
}

void read_le_floats(const std::string& bytes, std::size_t offset, std::span<float> out) {
    for (std::size_t i = 0; i < out.size(); ++i) {
        const std::size_t p = offset + i * 4;
        const std::uint32_t bits = static_cast<std::uint8_t>(bytes[p]) |
                                   (static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes[p + 1])) << 8) |
                                   (static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes[p + 2])) << 16) |
                                   (static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes[p + 3])) << 24);
        out[i] = std::bit_cast<float>(bits);
    }
}

}  // namespace

void save_checkpoint(const std::string& path, const std::string& config_digest, int update,
                     const OptimizerState& opt) {
    std::ostringstream manifest;
    manifest << "sacf-checkpoint v1\n";
    manifest << "config_digest " << config_digest << "\n";
    manifest << "update " << update << "\n";
    manifest << "adam_step " << opt.step_count() << "\n";
    manifest << "params " << opt.params().size() << "\n";
    std::size_t offset = 0;
    for (const auto& p : opt.params()) {
        manifest << p.name << " " << offset;
        manifest << " " << p.tensor.shape().size();
        for (int d : p.tensor.shape()) manifest << " " << d;
        manifest << "\n";
        offset += static_cast<std::size_t>(p.tensor.size()) * 4;
    }
    const std::size_t param_bytes = offset;
    manifest << "payload " << param_bytes * 3 << "\n";

    std::string payload;
    payload.reserve(param_bytes * 3);
    for (const auto& p : opt.params()) append_le_floats(payload, p.tensor.values());
    for (const auto& m : opt.moments_m()) append_le_floats(payload, m);
    for (const auto& v : opt.moments_v()) append_le_floats(payload, v);

    std::ofstream f(path, std::ios::binary);
    if (!f) throw Fault("checkpoint: cannot write " + path);
    const std::string header = manifest.str();
    f.write(header.data(), static_cast<std::streamsize>(header.size()));
    f.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!f) throw Fault("checkpoint: short write to " + path);
}

namespace {

struct ParsedHeader {
    CheckpointMeta meta;
    std::size_t n_params = 0;
    std::vector<std::string> names;
    std::vector<std::size_t> offsets;
    std::vector<ad::Shape> shapes;
    std::size_t payload_bytes = 0;
    std::size_t payload_start = 0;
};

ParsedHeader parse_header(const std::string& bytes, const std::string& path) {
    std::istringstream is(bytes);
    ParsedHeader h;
    std::string line;
    auto next_line = [&]() {
        if (!std::getline(is, line)) throw Fault("checkpoint: truncated manifest in " + path);
        return line;
    };
    if (next_line() != "sacf-checkpoint v1")
        throw Fault("checkpoint: bad magic in " + path);
    {
        std::istringstream ls(next_line());
        std::string k;
        ls >> k >> h.meta.config_digest;
        if (k != "config_digest" || ls.fail()) throw Fault("checkpoint: bad digest line in " + path);
    }
    {
        std::istringstream ls(next_line());
        std::string k;
        ls >> k >> h.meta.update;
        if (k != "update" || ls.fail()) throw Fault("checkpoint: bad update line in " + path);
    }
    {
        std::istringstream ls(next_line());
        std::string k;
        ls >> k >> h.meta.adam_step;
        if (k != "adam_step" || ls.fail()) throw Fault("checkpoint: bad adam line in " + path);
    }
    {
        std::istringstream ls(next_line());
        std::string k;
        ls >> k >> h.n_params;
        if (k != "params" || ls.fail()) throw Fault("checkpoint: bad params line in " + path);
    }
    for (std::size_t i = 0; i < h.n_params; ++i) {
        std::istringstream ls(next_line());
        std::string name;
        std::size_t off = 0;
        std::size_t ndims = 0;
        ls >> name >> off >> ndims;
        ad::Shape shape(ndims);
        for (auto& d : shape) ls >> d;
        if (ls.fail()) throw Fault("checkpoint: bad manifest entry in " + path);
        h.names.push_back(std::move(name));
        h.offsets.push_back(off);
        h.shapes.push_back(std::move(shape));
    }
    {
        std::istringstream ls(next_line());
        std::string k;
        ls >> k >> h.payload_bytes;
        if (k != "payload" || ls.fail()) throw Fault("checkpoint: bad payload line in " + path);
    }
    h.payload_start = static_cast<std::size_t>(is.tellg());
    return h;
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Fault("checkpoint: cannot open " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

}  // namespace

CheckpointMeta peek_checkpoint(const std::string& path) {
    return parse_header(slurp(path), path).meta;
}

CheckpointMeta load_checkpoint(const std::string& path, const std::string& expected_digest,
                               OptimizerState& opt) {
    const std::string bytes = slurp(path);
    ParsedHeader h = parse_header(bytes, path);

    if (h.meta.config_digest != expected_digest)
        throw Fault("checkpoint: config digest mismatch (checkpoint " + h.meta.config_digest +
                    ", expected " + expected_digest + ")");
    if (bytes.size() - h.payload_start != h.payload_bytes)
        throw Fault("checkpoint: payload length mismatch in " + path + " (corrupt file)");
    if (h.n_params != opt.params().size())
        throw Fault("checkpoint: parameter count mismatch in " + path);

    std::size_t param_bytes = 0;
    for (std::size_t i = 0; i < h.n_params; ++i) {
        const auto& p = opt.params()[i];
        if (p.name != h.names[i] || p.tensor.shape() != h.shapes[i])
            throw Fault("checkpoint: manifest entry mismatch for " + p.name);
        param_bytes += static_cast<std::size_t>(p.tensor.size()) * 4;
    }
    if (h.payload_bytes != param_bytes * 3)
        throw Fault("checkpoint: manifest/payload size disagreement in " + path);

    for (std::size_t i = 0; i < h.n_params; ++i) {
        auto& p = opt.params()[i];
        read_le_floats(bytes, h.payload_start + h.offsets[i], p.tensor.values_mut());
    }
    std::size_t off = h.payload_start + param_bytes;
    for (auto& m : opt.moments_m()) {
        read_le_floats(bytes, off, m);
        off += m.size() * 4;
    }
    for (auto& v : opt.moments_v()) {
        read_le_floats(bytes, off, v);
        off += v.size() * 4;
    }
    opt.set_step_count(h.meta.adam_step);
    return h.meta;
}

}  // namespace sacf
