#pragma once

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "subflow/errors.hpp"
#include "subflow/grid.hpp"

namespace subflow {

/// Shortest exact decimal representation; parses back to the same bits.
inline std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s, const char* what) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
        throw Error(std::string(what) + ": cannot parse number '" + s + "'");
    }
    return v;
}

namespace detail {

inline void write_f64_le(std::ostream& out, double v) {
    const std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
    char bytes[8];
    for (int i = 0; i < 8; ++i) {
        bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
    }
    out.write(bytes, 8);
}

inline double read_f64_le(std::istream& in) {
    char bytes[8];
    in.read(bytes, 8);
    if (!in) {
        throw Error("unexpected end of binary payload");
    }
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) {
        bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[i])) << (8 * i);
    }
    return std::bit_cast<double>(bits);
}

inline std::string read_header_line(std::istream& in, const char* what) {
    std::string line;
    if (!std::getline(in, line)) {
        throw Error(std::string(what) + ": truncated header");
    }
    return line;
}

}  // namespace detail

/// Field file: plain-text header (magic, nx, ny, ordering) followed by
/// nx*ny little-endian 64-bit floats, cell (i,j) at offset j*nx+i.
inline void save_field(const std::string& path, const Grid& grid,
                       const std::vector<double>& values) {
    require_cell_array(grid, values, "save_field");
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error("save_field: cannot open '" + path + "' for writing");
    }
    out << "SUBFLOW-FIELD v1\n";
    out << "nx " << grid.nx << "\n";
    out << "ny " << grid.ny << "\n";
    out << "order row-major\n";
    out << "BINARY\n";
    for (double v : values) {
        detail::write_f64_le(out, v);
    }
    if (!out) {
        throw Error("save_field: write failed for '" + path + "'");
    }
}

struct LoadedField {
    int nx = 0;
    int ny = 0;
    std::vector<double> values;
};

inline LoadedField load_field(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("load_field: cannot open '" + path + "'");
    }
    if (detail::read_header_line(in, "load_field") != "SUBFLOW-FIELD v1") {
        throw Error("load_field: '" + path + "' is not a SUBFLOW-FIELD v1 file");
    }
    LoadedField f;
    std::string order;
    for (;;) {
        const std::string line = detail::read_header_line(in, "load_field");
        if (line == "BINARY") {
            break;
        }
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "nx") {
            ls >> f.nx;
        } else if (key == "ny") {
            ls >> f.ny;
        } else if (key == "order") {
            ls >> order;
        } else {
            throw Error("load_field: unknown header key '" + key + "' in '" + path + "'");
        }
    }
    if (f.nx < 1 || f.ny < 1) {
        throw Error("load_field: missing or invalid nx/ny in '" + path + "'");
    }
    if (order != "row-major") {
        throw Error("load_field: unsupported ordering '" + order + "' in '" + path + "'");
    }
    f.values.resize(static_cast<std::size_t>(f.nx) * f.ny);
    for (double& v : f.values) {
        v = detail::read_f64_le(in);
    }
    return f;
}

}  // namespace subflow
