#include "flowsg/numkit/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>

#include "flowsg/errors.hpp"

namespace flowsg::numkit {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[4] = {'G', 'F', 'L', 'W'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ofstream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

template <typename T>
T get(std::ifstream& is, const std::string& path) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(v)))
        throw DataError("checkpoint truncated: " + path);
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const TensorMap& tensors) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open checkpoint for writing: " + path);
    os.write(kMagic, 4);
    put(os, kVersion);
    put(os, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, arr] : tensors) {
        put(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        put(os, static_cast<std::uint32_t>(arr.shape.size()));
        for (std::size_t d : arr.shape) put(os, static_cast<std::uint64_t>(d));
        os.write(reinterpret_cast<const char*>(arr.data.data()),
                 static_cast<std::streamsize>(arr.data.size() * sizeof(double)));
    }
    if (!os) throw DataError("checkpoint write failed: " + path);
}

TensorMap load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint: " + path);
    char magic[4];
    if (!is.read(magic, 4) || magic[0] != 'G' || magic[1] != 'F' || magic[2] != 'L' ||
        magic[3] != 'W')
        throw DataError("bad checkpoint magic: " + path);
    const auto version = get<std::uint32_t>(is, path);
    if (version != kVersion)
        throw DataError("unsupported checkpoint version " + std::to_string(version) + ": " + path);
    const auto count = get<std::uint32_t>(is, path);
    TensorMap out;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = get<std::uint32_t>(is, path);
        std::string name(name_len, '\0');
        if (!is.read(name.data(), name_len)) throw DataError("checkpoint truncated: " + path);
        const auto rank = get<std::uint32_t>(is, path);
        std::vector<std::size_t> shape(rank);
        for (auto& d : shape) d = static_cast<std::size_t>(get<std::uint64_t>(is, path));
        Array arr(shape);
        if (!is.read(reinterpret_cast<char*>(arr.data.data()),
                     static_cast<std::streamsize>(arr.data.size() * sizeof(double))))
            throw DataError("checkpoint truncated: " + path);
        out.emplace(std::move(name), std::move(arr));
    }
    return out;
}

}  // namespace flowsg::numkit
