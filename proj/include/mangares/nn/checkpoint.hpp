#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mangares/nn/adam.hpp"

namespace mr::nn {

// Checkpoint layout: 8-byte magic, u64 header length, JSON header (kind,
// config, iteration, parameter manifest, optimizer flag), then float64
// payload — parameters in manifest order, then Adam m and v when present.
// Writes go to a temp file renamed into place, so readers never see a
// partial checkpoint. Values are stored little-endian (x86-64 native).

inline constexpr char kCkptMagic[8] = {'M', 'R', 'C', 'K', '0', '0', '0', '1'};

struct CheckpointHeader {
    std::string kind;
    nlohmann::json config;
    long iteration = 0;
    bool has_optimizer = false;
};

namespace detail {

inline void put_u64(std::ostream& os, std::uint64_t v) {
    char buf[8];
    std::memcpy(buf, &v, 8);
    os.write(buf, 8);
}

inline std::uint64_t get_u64(std::istream& is) {
    char buf[8];
    is.read(buf, 8);
    std::uint64_t v;
    std::memcpy(&v, buf, 8);
    return v;
}

inline void put_doubles(std::ostream& os, const double* p, size_t n) {
    os.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * sizeof(double)));
}

inline void get_doubles(std::istream& is, double* p, size_t n) {
    is.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n * sizeof(double)));
    if (!is) throw std::runtime_error("checkpoint: truncated payload");
}

inline nlohmann::json read_header(std::istream& is) {
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kCkptMagic, 8) != 0)
        throw std::runtime_error("checkpoint: bad magic");
    const auto len = get_u64(is);
    std::string text(len, '\0');
    is.read(text.data(), static_cast<std::streamsize>(len));
    if (!is) throw std::runtime_error("checkpoint: truncated header");
    return nlohmann::json::parse(text);
}

inline CheckpointHeader parse_header(const nlohmann::json& j) {
    CheckpointHeader h;
    h.kind = j.at("kind").get<std::string>();
    h.config = j.at("config");
    h.iteration = j.at("iteration").get<long>();
    h.has_optimizer = j.value("optimizer", nlohmann::json::object()).value("present", false);
    return h;
}

}  // namespace detail

inline CheckpointHeader peek_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
    return detail::parse_header(detail::read_header(is));
}

template <typename T>
void save_checkpoint(const std::string& path, const std::string& kind,
                     const nlohmann::json& config, const ParamStore<T>& ps,
                     const Adam<T>* opt, long iteration) {
    nlohmann::json header{{"kind", kind}, {"config", config}, {"iteration", iteration}};
    auto& params = header["params"] = nlohmann::json::array();
    for (const auto& [name, p] : ps.items)
        params.push_back({{"name", name}, {"shape", p->value.shape}});
    header["optimizer"] = opt ? nlohmann::json{{"present", true},
                                               {"t", opt->t},
                                               {"lr", opt->lr},
                                               {"beta1", opt->beta1},
                                               {"beta2", opt->beta2}}
                              : nlohmann::json{{"present", false}};

    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw std::runtime_error("cannot write checkpoint: " + tmp);
        os.write(kCkptMagic, 8);
        const std::string text = header.dump();
        detail::put_u64(os, text.size());
        os.write(text.data(), static_cast<std::streamsize>(text.size()));

        std::vector<double> buf;
        auto dump_tensor = [&](const std::vector<T>& src) {
            buf.assign(src.begin(), src.end());
            detail::put_doubles(os, buf.data(), buf.size());
        };
        for (const auto& [_, p] : ps.items) dump_tensor(p->value.data);
        if (opt) {
            for (const auto& mv : opt->m) detail::put_doubles(os, mv.data(), mv.size());
            for (const auto& vv : opt->v) detail::put_doubles(os, vv.data(), vv.size());
        }
        if (!os) throw std::runtime_error("checkpoint write failed: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

// The store must already hold parameters with matching names and shapes
// (build the model from the header's config first, then load into it).
template <typename T>
CheckpointHeader load_checkpoint(const std::string& path, ParamStore<T>& ps,
                                 Adam<T>* opt = nullptr) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
    const auto j = detail::read_header(is);
    const auto header = detail::parse_header(j);

    const auto& params = j.at("params");
    if (params.size() != ps.items.size())
        throw std::runtime_error("checkpoint: parameter count mismatch");
    std::vector<double> buf;
    for (size_t i = 0; i < ps.items.size(); ++i) {
        auto& [name, p] = ps.items[i];
        if (params[i].at("name").get<std::string>() != name)
            throw std::runtime_error("checkpoint: parameter order mismatch at " + name);
        if (params[i].at("shape").get<std::vector<int>>() != p->value.shape)
            throw std::runtime_error("checkpoint: shape mismatch for " + name);
        buf.resize(p->value.size());
        detail::get_doubles(is, buf.data(), buf.size());
        for (size_t k = 0; k < buf.size(); ++k) p->value.data[k] = static_cast<T>(buf[k]);
    }
    if (opt) {
        if (!header.has_optimizer)
            throw std::runtime_error("checkpoint: no optimizer state to resume from");
        const auto& o = j.at("optimizer");
        opt->t = o.at("t").get<long>();
        opt->lr = o.at("lr").get<double>();
        opt->beta1 = o.at("beta1").get<double>();
        opt->beta2 = o.at("beta2").get<double>();
        opt->m.assign(ps.items.size(), {});
        opt->v.assign(ps.items.size(), {});
        for (size_t i = 0; i < ps.items.size(); ++i) {
            opt->m[i].resize(ps.items[i].second->value.size());
            detail::get_doubles(is, opt->m[i].data(), opt->m[i].size());
        }
        for (size_t i = 0; i < ps.items.size(); ++i) {
            opt->v[i].resize(ps.items[i].second->value.size());
            detail::get_doubles(is, opt->v[i].data(), opt->v[i].size());
        }
    }
    return header;
}

}  // namespace mr::nn
