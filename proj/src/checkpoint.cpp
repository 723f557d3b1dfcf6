#include "diffsed/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace diffsed {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads assume a little-endian host");

namespace {
void write_u32(std::ostream& os, uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_u64(std::ostream& os, uint64_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
uint32_t read_u32(std::istream& is) {
    uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}
uint64_t read_u64(std::istream& is) {
    uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}
}  // namespace

void save_checkpoint(const std::string& path, const ParamStore& params,
                     const nlohmann::json& meta) {
    nlohmann::json manifest;
    manifest["format_version"] = kCheckpointVersion;
    manifest["meta"] = meta;
    nlohmann::json plist = nlohmann::json::array();
    for (const auto& p : params.items()) {
        nlohmann::json e;
        e["name"] = p.name;
        e["shape"] = p.tensor.shape();
        plist.push_back(e);
    }
    manifest["params"] = plist;
    const std::string mstr = manifest.dump();

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path);
    os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    write_u32(os, kCheckpointVersion);
    write_u64(os, mstr.size());
    os.write(mstr.data(), static_cast<std::streamsize>(mstr.size()));
    for (const auto& p : params.items()) {
        const auto& d = p.tensor.data();
        os.write(reinterpret_cast<const char*>(d.data()),
                 static_cast<std::streamsize>(d.size() * sizeof(double)));
    }
    if (!os) throw std::runtime_error("write failure on checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
        throw std::runtime_error("not a checkpoint file: " + path);
    const uint32_t version = read_u32(is);
    if (version != kCheckpointVersion)
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
    const uint64_t mlen = read_u64(is);
    std::string mstr(mlen, '\0');
    is.read(mstr.data(), static_cast<std::streamsize>(mlen));
    if (!is) throw std::runtime_error("truncated checkpoint manifest: " + path);
    nlohmann::json manifest = nlohmann::json::parse(mstr);

    Checkpoint ck;
    ck.meta = manifest.at("meta");
    for (const auto& e : manifest.at("params")) {
        const std::string name = e.at("name").get<std::string>();
        const std::vector<size_t> shape = e.at("shape").get<std::vector<size_t>>();
        size_t n = 1;
        for (size_t d : shape) n *= d;
        std::vector<double> data(n);
        is.read(reinterpret_cast<char*>(data.data()),
                static_cast<std::streamsize>(n * sizeof(double)));
        if (!is) throw std::runtime_error("truncated checkpoint payload for " + name);
        ck.params.add(name, Tensor(shape, std::move(data)));
    }
    return ck;
}

}  // namespace diffsed
