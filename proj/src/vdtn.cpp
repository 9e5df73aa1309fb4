#include "vdrive/vdtn.hpp"

#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace vdrive {

namespace {

constexpr unsigned char kVersion = 1;
constexpr unsigned char kDtypeF32 = 0;
constexpr std::size_t kMaxRank = 255;

void put_u64_le(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64_le(std::istream& in, const std::string& what) {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8)) {
        throw ValidationError("vdtn: truncated extent in " + what);
    }
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

std::uint32_t f32_bits(float f) {
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    return u;
}

float bits_f32(std::uint32_t u) {
    float f;
    std::memcpy(&f, &u, 4);
    return f;
}

}  // namespace

void write_vdtn(std::ostream& out, const Tensor& t) {
    if (t.rank() > kMaxRank) throw ValidationError("vdtn: rank exceeds 255");
    const unsigned char header[8] = {'V', 'D', 'T', 'N', kVersion, kDtypeF32,
                                     static_cast<unsigned char>(t.rank()), 0};
    out.write(reinterpret_cast<const char*>(header), 8);
    for (std::size_t d : t.dims) put_u64_le(out, static_cast<std::uint64_t>(d));
    for (float f : t.data) {
        std::uint32_t u = f32_bits(f);
        unsigned char b[4];
        for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((u >> (8 * i)) & 0xff);
        out.write(reinterpret_cast<const char*>(b), 4);
    }
    if (!out) throw ValidationError("vdtn: write failed");
}

Tensor read_vdtn(std::istream& in, const std::string& what) {
    unsigned char header[8];
    if (!in.read(reinterpret_cast<char*>(header), 8)) {
        throw ValidationError("vdtn: truncated header in " + what);
    }
    if (std::memcmp(header, "VDTN", 4) != 0) {
        throw ValidationError("vdtn: bad magic in " + what);
    }
    if (header[4] != kVersion) {
        throw ValidationError("vdtn: unsupported version " + std::to_string(header[4]) + " in " + what);
    }
    if (header[5] != kDtypeF32) {
        throw ValidationError("vdtn: unsupported dtype " + std::to_string(header[5]) + " in " + what);
    }
    const std::size_t rank = header[6];
    if (rank == 0) throw ValidationError("vdtn: zero rank in " + what);
    std::vector<std::size_t> dims(rank);
    std::size_t numel = 1;
    for (std::size_t i = 0; i < rank; ++i) {
        std::uint64_t d = get_u64_le(in, what);
        if (d == 0) throw ValidationError("vdtn: zero extent in " + what);
        dims[i] = static_cast<std::size_t>(d);
        numel *= dims[i];
    }
    std::vector<float> data(numel);
    for (std::size_t i = 0; i < numel; ++i) {
        unsigned char b[4];
        if (!in.read(reinterpret_cast<char*>(b), 4)) {
            throw ValidationError("vdtn: truncated payload in " + what);
        }
        std::uint32_t u = 0;
        for (int k = 0; k < 4; ++k) u |= static_cast<std::uint32_t>(b[k]) << (8 * k);
        data[i] = bits_f32(u);
    }
    return Tensor(std::move(dims), std::move(data));
}

void save_vdtn(const std::string& path, const Tensor& t) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ValidationError("vdtn: cannot open for write: " + path);
    write_vdtn(f, t);
    if (!f) throw ValidationError("vdtn: write failed: " + path);
}

Tensor load_vdtn(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ValidationError("vdtn: cannot open for read: " + path);
    return read_vdtn(f, path);
}

}  // namespace vdrive
