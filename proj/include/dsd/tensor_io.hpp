// Copyright (c) 2026 dsd authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include "dsd/errors.hpp"
#include "dsd/tensor.hpp"

namespace dsd {

// `.ten` wire format: u32 rank, u32 extents[rank], f64 data, all little-endian.

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_f64(std::ostream& os, double v) {
    std::uint64_t u;
    std::memcpy(&u, &v, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(u >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline bool get_u32(std::istream& is, std::uint32_t& v) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
    v = std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
        (std::uint32_t(b[3]) << 24);
    return true;
}

inline bool get_f64(std::istream& is, double& v) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) return false;
    std::uint64_t u = 0;
    for (int i = 0; i < 8; ++i) u |= std::uint64_t(b[i]) << (8 * i);
    std::memcpy(&v, &u, 8);
    return true;
}

}  // namespace detail

inline void write_tensor(std::ostream& os, const Tensor& t) {
    detail::put_u32(os, static_cast<std::uint32_t>(t.shape().size()));
    for (std::size_t e : t.shape()) detail::put_u32(os, static_cast<std::uint32_t>(e));
    for (double v : t.data()) detail::put_f64(os, v);
}

inline Tensor read_tensor(std::istream& is) {
    std::uint32_t rank = 0;
    if (!detail::get_u32(is, rank)) throw ParseError("tensor stream truncated at rank");
    if (rank > 8) throw ParseError("tensor rank implausibly large");
    std::vector<std::size_t> shape(rank);
    std::size_t n = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
        std::uint32_t e = 0;
        if (!detail::get_u32(is, e)) throw ParseError("tensor stream truncated at extents");
        if (e == 0) throw ParseError("tensor extent must be positive");
        shape[i] = e;
        n *= e;
    }
    std::vector<double> data(n);
    for (std::size_t i = 0; i < n; ++i)
        if (!detail::get_f64(is, data[i])) throw ParseError("tensor stream truncated at data");
    return Tensor(std::move(data), std::move(shape));
}

inline void save_tensor(const std::string& path, const Tensor& t) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ParseError("cannot open for write: " + path);
    write_tensor(f, t);
    if (!f) throw ParseError("write failed: " + path);
}

inline Tensor load_tensor(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ParseError("cannot open for read: " + path);
    return read_tensor(f);
}

}  // namespace dsd
