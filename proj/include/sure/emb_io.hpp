#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "sure/errors.hpp"
#include "sure/matrix.hpp"

namespace sure {

// EMB1 container: "EMB1" magic, u32le row count, u32le dim, then rows*dim
// IEEE-754 f32 little-endian values in row-major order. Stored as f32;
// promoted to f64 on read.

namespace detail {

inline std::uint32_t read_u32le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline void write_u32le(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline float f32_from_le_bytes(const unsigned char* p) {
    std::uint32_t bits = read_u32le(p);
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
}

inline void f32_to_le_bytes(float f, unsigned char* p) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    p[0] = static_cast<unsigned char>(bits & 0xff);
    p[1] = static_cast<unsigned char>((bits >> 8) & 0xff);
    p[2] = static_cast<unsigned char>((bits >> 16) & 0xff);
    p[3] = static_cast<unsigned char>((bits >> 24) & 0xff);
}

}  // namespace detail

inline Matrix read_embeddings(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open embedding file: " + path.string());

    unsigned char header[12];
    in.read(reinterpret_cast<char*>(header), sizeof(header));
    if (in.gcount() != static_cast<std::streamsize>(sizeof(header)))
        throw TruncationError(sizeof(header), static_cast<std::size_t>(in.gcount()));
    if (std::memcmp(header, "EMB1", 4) != 0)
        throw FormatError("bad magic in " + path.string() + " (want EMB1)");

    const std::uint32_t rows = detail::read_u32le(header + 4);
    const std::uint32_t dim = detail::read_u32le(header + 8);
    if (rows > 0 && dim == 0) throw FormatError("zero dim with nonzero rows in " + path.string());

    const std::size_t count = static_cast<std::size_t>(rows) * dim;
    std::vector<unsigned char> raw(count * 4);
    if (count > 0) {
        in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
        if (static_cast<std::size_t>(in.gcount()) != raw.size())
            throw TruncationError(sizeof(header) + raw.size(),
                                  sizeof(header) + static_cast<std::size_t>(in.gcount()));
    }

    Matrix m(rows, dim);
    for (std::size_t i = 0; i < count; ++i)
        m.data()[i] = static_cast<double>(detail::f32_from_le_bytes(raw.data() + i * 4));
    if (!m.all_finite()) throw FormatError("non-finite value in " + path.string());
    return m;
}

inline void write_embeddings(const std::filesystem::path& path, const Matrix& m) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot create embedding file: " + path.string());
    out.write("EMB1", 4);
    detail::write_u32le(out, static_cast<std::uint32_t>(m.rows()));
    detail::write_u32le(out, static_cast<std::uint32_t>(m.cols()));
    std::vector<unsigned char> raw(m.rows() * m.cols() * 4);
    for (std::size_t i = 0; i < m.rows() * m.cols(); ++i)
        detail::f32_to_le_bytes(static_cast<float>(m.data()[i]), raw.data() + i * 4);
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!out) throw FormatError("short write to " + path.string());
}

}  // namespace sure
