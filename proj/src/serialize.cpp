#include "histogen/core/serialize.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "histogen/core/errors.hpp"

namespace histogen {

namespace {

void write_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const nlohmann::json& meta,
                     const std::vector<std::pair<std::string, const Tensor<float>*>>& tensors) {
    nlohmann::json header;
    header["format_version"] = 1;
    header["meta"] = meta;
    auto& tl = header["tensors"] = nlohmann::json::array();
    for (const auto& [name, t] : tensors) {
        tl.push_back({{"name", name}, {"dtype", "f32"}, {"dims", t->dims_vec()}});
    }
    const std::string header_str = header.dump();

    namespace fs = std::filesystem;
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    const fs::path tmp = target.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("cannot open checkpoint for writing: " + tmp.string());
        os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
        write_u64(os, header_str.size());
        os.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
        for (const auto& [name, t] : tensors) {
            os.write(reinterpret_cast<const char*>(t->data()),
                     static_cast<std::streamsize>(sizeof(float)) * t->size());
        }
        if (!os) throw IoError("short write while saving checkpoint: " + tmp.string());
    }
    fs::rename(tmp, target);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint: " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
        throw IoError("not a checkpoint file (bad magic): " + path);
    }
    const std::uint64_t header_len = read_u64(is);
    std::string header_str(header_len, '\0');
    is.read(header_str.data(), static_cast<std::streamsize>(header_len));
    if (!is) throw IoError("truncated checkpoint header: " + path);

    nlohmann::json header = nlohmann::json::parse(header_str);
    if (header.at("format_version").get<int>() != 1) {
        throw IoError("unsupported checkpoint version in " + path);
    }

    Checkpoint ck;
    ck.meta = header.at("meta");
    for (const auto& entry : header.at("tensors")) {
        const std::string name = entry.at("name").get<std::string>();
        const std::vector<Index> dims = entry.at("dims").get<std::vector<Index>>();
        Tensor<float> t;
        t.resize(dims);
        is.read(reinterpret_cast<char*>(t.data()),
                static_cast<std::streamsize>(sizeof(float)) * t.size());
        if (!is) throw IoError("truncated tensor payload '" + name + "' in " + path);
        ck.tensors.emplace(name, std::move(t));
    }
    return ck;
}

}  // namespace histogen
