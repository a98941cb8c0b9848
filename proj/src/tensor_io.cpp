#include "btks/tensor_io.hpp"

#include "btks/errors.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>

namespace btks {

namespace {

constexpr std::array<char, 4> kMagic{'B', 'T', 'K', 'S'};
constexpr std::uint8_t kVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
    const std::array<char, 4> b{static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                                static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
    os.write(b.data(), 4);
}

std::uint32_t get_u32(std::istream& is) {
    std::array<unsigned char, 4> b{};
    if (!is.read(reinterpret_cast<char*>(b.data()), 4)) throw InputError("BTKS: truncated header");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

} // namespace

void write_tensor(std::ostream& os, const Tensor<float>& t) {
    if (t.rank() > std::numeric_limits<std::uint8_t>::max()) throw ConfigError("BTKS: rank too large");
    os.write(kMagic.data(), kMagic.size());
    os.put(static_cast<char>(kVersion));
    os.put(static_cast<char>(t.rank()));
    for (auto d : t.shape()) {
        if (d > std::numeric_limits<std::uint32_t>::max()) throw ConfigError("BTKS: extent exceeds u32");
        put_u32(os, static_cast<std::uint32_t>(d));
    }
    for (float v : t.data()) put_u32(os, std::bit_cast<std::uint32_t>(v));
    if (!os) throw InputError("BTKS: write failed");
}

Tensor<float> read_tensor(std::istream& is) {
    std::array<char, 4> magic{};
    if (!is.read(magic.data(), 4) || magic != kMagic) throw InputError("BTKS: bad magic");
    const int version = is.get();
    if (version != kVersion) throw InputError("BTKS: unsupported version " + std::to_string(version));
    const int rank = is.get();
    if (rank < 0) throw InputError("BTKS: truncated header");
    Shape shape(static_cast<std::size_t>(rank));
    for (auto& d : shape) d = get_u32(is);
    std::vector<float> values(shape_numel(shape));
    for (auto& v : values) v = std::bit_cast<float>(get_u32(is));
    return Tensor<float>(std::move(shape), std::move(values));
}

void save_tensor(const std::filesystem::path& path, const Tensor<float>& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw InputError("cannot open " + path.string() + " for writing");
    write_tensor(os, t);
}

Tensor<float> load_tensor(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw InputError("cannot open " + path.string());
    return read_tensor(is);
}

} // namespace btks
