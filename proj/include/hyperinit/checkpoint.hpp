#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

#include "hyperinit/tensor.hpp"

namespace hyperinit {

// Tensor container: little-endian, manifest first, raw row-major payloads
// after. Layout:
//   magic "HINITCK1"
//   u64 metadata length, metadata (JSON: format_version, seed, step, ...)
//   u64 entry count
//   per entry: u32 name length, name bytes, u8 dtype (0=f32, 1=f64),
//              u32 ndim, u32 dims[ndim]
//   payloads in manifest order
// Round-trips are bit-exact.

static_assert(std::endian::native == std::endian::little, "checkpoint format is little-endian");

namespace detail {

constexpr char kCheckpointMagic[8] = {'H', 'I', 'N', 'I', 'T', 'C', 'K', '1'};

template <typename V>
void write_pod(std::ostream& os, const V& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V read_pod(std::istream& is) {
    V v;
    is.read(reinterpret_cast<char*>(&v), sizeof(V));
    if (!is) throw IoError("checkpoint truncated");
    return v;
}

template <typename T>
constexpr uint8_t dtype_code() {
    if constexpr (std::is_same_v<T, float>) return 0;
    else return 1;
}

}  // namespace detail

template <typename T>
void save_checkpoint(const std::string& path, const std::vector<NamedParam<T>>& entries,
                     const nlohmann::json& metadata) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    os.write(detail::kCheckpointMagic, 8);
    nlohmann::json meta = metadata;
    if (!meta.contains("format_version")) meta["format_version"] = 1;
    const std::string mstr = meta.dump();
    detail::write_pod<uint64_t>(os, mstr.size());
    os.write(mstr.data(), static_cast<std::streamsize>(mstr.size()));
    detail::write_pod<uint64_t>(os, entries.size());
    for (const auto& e : entries) {
        detail::write_pod<uint32_t>(os, static_cast<uint32_t>(e.name.size()));
        os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        detail::write_pod<uint8_t>(os, detail::dtype_code<T>());
        detail::write_pod<uint32_t>(os, static_cast<uint32_t>(e.value->shape.size()));
        for (int d : e.value->shape) detail::write_pod<uint32_t>(os, static_cast<uint32_t>(d));
    }
    for (const auto& e : entries)
        os.write(reinterpret_cast<const char*>(e.value->data.data()),
                 static_cast<std::streamsize>(e.value->data.size() * sizeof(T)));
    if (!os) throw IoError("write failed for '" + path + "'");
}

template <typename T>
struct Checkpoint {
    nlohmann::json metadata;
    std::vector<NamedParam<T>> entries;  // manifest order

    TensorPtr<T> find(const std::string& name) const {
        for (const auto& e : entries)
            if (e.name == name) return e.value;
        return nullptr;
    }
};

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path + "'");
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, detail::kCheckpointMagic, 8) != 0)
        throw IoError("'" + path + "' is not a checkpoint container");
    Checkpoint<T> ck;
    const auto mlen = detail::read_pod<uint64_t>(is);
    std::string mstr(mlen, '\0');
    is.read(mstr.data(), static_cast<std::streamsize>(mlen));
    if (!is) throw IoError("checkpoint truncated");
    ck.metadata = nlohmann::json::parse(mstr);
    const auto count = detail::read_pod<uint64_t>(is);
    std::vector<uint8_t> dtypes;
    for (uint64_t i = 0; i < count; ++i) {
        const auto nlen = detail::read_pod<uint32_t>(is);
        std::string name(nlen, '\0');
        is.read(name.data(), nlen);
        const auto dt = detail::read_pod<uint8_t>(is);
        dtypes.push_back(dt);
        const auto ndim = detail::read_pod<uint32_t>(is);
        std::vector<int> shape;
        for (uint32_t d = 0; d < ndim; ++d) shape.push_back(static_cast<int>(detail::read_pod<uint32_t>(is)));
        ck.entries.push_back({std::move(name), make_tensor<T>(std::move(shape))});
    }
    for (uint64_t i = 0; i < count; ++i) {
        auto& e = ck.entries[i];
        if (dtypes[i] != detail::dtype_code<T>())
            throw IoError("checkpoint entry '" + e.name + "' has dtype code " + std::to_string(dtypes[i]) +
                          ", expected " + std::to_string(detail::dtype_code<T>()));
        is.read(reinterpret_cast<char*>(e.value->data.data()),
                static_cast<std::streamsize>(e.value->data.size() * sizeof(T)));
    }
    if (!is) throw IoError("checkpoint truncated");
    return ck;
}

}  // namespace hyperinit
