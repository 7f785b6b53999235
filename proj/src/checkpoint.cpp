#include "acc/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <vector>

namespace acc {

namespace {

constexpr char kMagic[4] = {'A', 'C', 'C', 'K'};
constexpr uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
void get(std::istream& in, T& v, const std::string& path) {
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw FormatError(path + ": truncated checkpoint");
}

struct Entry {
    Shape shape;
    std::vector<double> data;
};

std::ifstream open_checkpoint(const std::string& path, uint32_t& version, uint64_t& hash) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw FormatError(path + ": not a checkpoint file (bad magic)");
    get(in, version, path);
    if (version != kVersion)
        throw FormatError(path + ": unsupported checkpoint version " + std::to_string(version));
    get(in, hash, path);
    return in;
}

std::map<std::string, Entry> read_entries(std::istream& in, const std::string& path) {
    uint64_t n = 0;
    get(in, n, path);
    std::map<std::string, Entry> entries;
    for (uint64_t i = 0; i < n; ++i) {
        uint32_t name_len = 0;
        get(in, name_len, path);
        if (name_len > 4096) throw FormatError(path + ": implausible parameter name length");
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        if (!in) throw FormatError(path + ": truncated checkpoint");
        uint32_t rank = 0;
        get(in, rank, path);
        if (rank > 8) throw FormatError(path + ": implausible parameter rank");
        Entry e;
        e.shape.resize(rank);
        int64_t numel = 1;
        for (auto& d : e.shape) {
            get(in, d, path);
            if (d < 0) throw FormatError(path + ": negative dimension");
            numel *= d;
        }
        e.data.resize(static_cast<size_t>(numel));
        in.read(reinterpret_cast<char*>(e.data.data()),
                static_cast<std::streamsize>(e.data.size() * sizeof(double)));
        if (!in) throw FormatError(path + ": truncated checkpoint");
        if (!entries.emplace(std::move(name), std::move(e)).second)
            throw FormatError(path + ": duplicate parameter name");
    }
    return entries;
}

void fill_param(Parameter& p, const Entry& e, const std::string& path) {
    if (p.value.shape != e.shape)
        throw FormatError(path + ": parameter '" + p.name + "' has shape " +
                          shape_str(e.shape) + " on disk but " + shape_str(p.value.shape) +
                          " in the model");
    for (size_t i = 0; i < e.data.size(); ++i)
        p.value.data[i] = static_cast<real>(e.data[i]);
}

}  // namespace

void save_checkpoint(const ParamStore& ps, const std::string& path, uint64_t config_hash) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write(kMagic, 4);
    put(out, kVersion);
    put(out, config_hash);
    put(out, static_cast<uint64_t>(ps.size()));
    for (size_t i = 0; i < ps.size(); ++i) {
        const Parameter& p = ps[i];
        put(out, static_cast<uint32_t>(p.name.size()));
        out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        put(out, static_cast<uint32_t>(p.value.shape.size()));
        for (int64_t d : p.value.shape) put(out, d);
        for (real v : p.value.data) put(out, static_cast<double>(v));
    }
    if (!out) throw IoError("cannot write " + path);
}

uint64_t checkpoint_config_hash(const std::string& path) {
    uint32_t version = 0;
    uint64_t hash = 0;
    open_checkpoint(path, version, hash);
    return hash;
}

void load_checkpoint(ParamStore& ps, const std::string& path, uint64_t expected_hash) {
    uint32_t version = 0;
    uint64_t hash = 0;
    std::ifstream in = open_checkpoint(path, version, hash);
    if (hash != expected_hash)
        throw DataError(path + ": checkpoint was written for a different configuration");
    auto entries = read_entries(in, path);
    if (entries.size() != ps.size())
        throw FormatError(path + ": checkpoint has " + std::to_string(entries.size()) +
                          " parameters but the model has " + std::to_string(ps.size()));
    for (size_t i = 0; i < ps.size(); ++i) {
        Parameter& p = ps[i];
        auto it = entries.find(p.name);
        if (it == entries.end())
            throw FormatError(path + ": missing parameter '" + p.name + "'");
        fill_param(p, it->second, path);
    }
}

size_t load_checkpoint_partial(ParamStore& ps, const std::string& path) {
    uint32_t version = 0;
    uint64_t hash = 0;
    std::ifstream in = open_checkpoint(path, version, hash);
    auto entries = read_entries(in, path);
    size_t filled = 0;
    for (size_t i = 0; i < ps.size(); ++i) {
        Parameter& p = ps[i];
        auto it = entries.find(p.name);
        if (it == entries.end()) continue;
        fill_param(p, it->second, path);
        ++filled;
    }
    return filled;
}

}  // namespace acc
