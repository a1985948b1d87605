#include "aoisim/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <unordered_map>

namespace aoisim {

namespace {

constexpr uint32_t kMagic = 0x4B434F41;  // "AOCK"

template <typename T>
void write_le(std::ostream& os, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
        for (size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(buf[i], buf[sizeof(T) - 1 - i]);
    }
    os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
    unsigned char buf[sizeof(T)];
    is.read(reinterpret_cast<char*>(buf), sizeof(T));
    if (!is) throw CheckpointError("unexpected end of checkpoint file");
    if constexpr (std::endian::native == std::endian::big) {
        for (size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(buf[i], buf[sizeof(T) - 1 - i]);
    }
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::vector<Parameter*>& params) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointError("cannot open checkpoint for writing: " + path);
    write_le<uint32_t>(os, kMagic);
    write_le<uint32_t>(os, kCheckpointVersion);
    write_le<uint64_t>(os, params.size());
    for (const Parameter* p : params) {
        write_le<uint32_t>(os, static_cast<uint32_t>(p->name.size()));
        os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
        write_le<uint32_t>(os, static_cast<uint32_t>(p->value.shape.size()));
        for (int d : p->value.shape) write_le<uint64_t>(os, static_cast<uint64_t>(d));
        for (double v : p->value.data) write_le<double>(os, v);
    }
    if (!os) throw CheckpointError("write failure on checkpoint: " + path);
}

std::vector<std::pair<std::string, Tensor>> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("cannot open checkpoint: " + path);
    if (read_le<uint32_t>(is) != kMagic) throw CheckpointError("not a checkpoint file: " + path);
    uint32_t version = read_le<uint32_t>(is);
    if (version != kCheckpointVersion)
        throw CheckpointError("checkpoint format version " + std::to_string(version) +
                              " unsupported (expected " + std::to_string(kCheckpointVersion) + ")");
    uint64_t count = read_le<uint64_t>(is);
    std::vector<std::pair<std::string, Tensor>> records;
    records.reserve(count);
    for (uint64_t r = 0; r < count; ++r) {
        uint32_t name_len = read_le<uint32_t>(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (!is) throw CheckpointError("unexpected end of checkpoint file");
        uint32_t ndim = read_le<uint32_t>(is);
        std::vector<int> shape(ndim);
        size_t numel = 1;
        for (uint32_t d = 0; d < ndim; ++d) {
            shape[d] = static_cast<int>(read_le<uint64_t>(is));
            numel *= static_cast<size_t>(shape[d]);
        }
        std::vector<double> data(numel);
        for (size_t i = 0; i < numel; ++i) data[i] = read_le<double>(is);
        records.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
    }
    return records;
}

void apply_checkpoint(const std::vector<std::pair<std::string, Tensor>>& records,
                      const std::vector<Parameter*>& params) {
    std::unordered_map<std::string, const Tensor*> by_name;
    for (const auto& [name, t] : records) by_name.emplace(name, &t);
    for (Parameter* p : params) {
        auto it = by_name.find(p->name);
        if (it == by_name.end())
            throw CheckpointError("checkpoint (format v" + std::to_string(kCheckpointVersion) +
                                  ") is missing parameter '" + p->name + "'");
        if (it->second->shape != p->value.shape)
            throw CheckpointError("checkpoint parameter '" + p->name +
                                  "' has a different shape than this configuration expects");
        p->value = *it->second;
    }
}

}  // namespace aoisim
