#include "corrhal/grid.hpp"

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace corrhal {

namespace {

void write_u32(std::ostream& out, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    return static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 |
           static_cast<uint32_t>(b[2]) << 16 | static_cast<uint32_t>(b[3]) << 24;
}

void write_f32_block(std::ostream& out, const std::vector<double>& values) {
    std::vector<float> f(values.size());
    for (size_t i = 0; i < values.size(); ++i) f[i] = static_cast<float>(values[i]);
    static_assert(sizeof(float) == 4);
    out.write(reinterpret_cast<const char*>(f.data()), static_cast<std::streamsize>(f.size() * 4));
}

std::vector<double> read_f32_block(std::istream& in, size_t count) {
    std::vector<float> f(count);
    in.read(reinterpret_cast<char*>(f.data()), static_cast<std::streamsize>(count * 4));
    std::vector<double> v(count);
    for (size_t i = 0; i < count; ++i) v[i] = static_cast<double>(f[i]);
    return v;
}

void check_magic(std::istream& in, const char* magic, const std::string& path) {
    char buf[4];
    in.read(buf, 4);
    if (!in || std::memcmp(buf, magic, 4) != 0)
        raise(ErrorCode::BadFormat, "bad magic in " + path);
}

}  // namespace

void write_grid(const std::string& path, const Grid<double>& grid) {
    std::ofstream out(path, std::ios::binary);
    if (!out) raise(ErrorCode::IoError, "cannot open " + path + " for writing");
    out.write("CHG1", 4);
    write_u32(out, static_cast<uint32_t>(grid.width));
    write_u32(out, static_cast<uint32_t>(grid.height));
    write_f32_block(out, grid.data);
    if (!out) raise(ErrorCode::IoError, "write failed: " + path);
}

Grid<double> read_grid(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(ErrorCode::IoError, "cannot open " + path);
    check_magic(in, "CHG1", path);
    uint32_t w = read_u32(in);
    uint32_t h = read_u32(in);
    if (!in || w == 0 || h == 0 || w > 1u << 20 || h > 1u << 20)
        raise(ErrorCode::BadFormat, "bad grid dims in " + path);
    Grid<double> grid(static_cast<int>(w), static_cast<int>(h));
    grid.data = read_f32_block(in, grid.size());
    if (!in) raise(ErrorCode::BadFormat, "truncated grid file " + path);
    return grid;
}

void write_map_grid(const std::string& path, const MapFileHeader& header, const Grid<double>& grid) {
    std::ofstream out(path, std::ios::binary);
    if (!out) raise(ErrorCode::IoError, "cannot open " + path + " for writing");
    out.write("CHM1", 4);
    write_u32(out, static_cast<uint32_t>(header.map_w));
    write_u32(out, static_cast<uint32_t>(header.map_h));
    write_u32(out, static_cast<uint32_t>(header.stride));
    write_u32(out, static_cast<uint32_t>(header.pad_x));
    write_u32(out, static_cast<uint32_t>(header.pad_y));
    write_f32_block(out, grid.data);
    if (!out) raise(ErrorCode::IoError, "write failed: " + path);
}

Grid<double> read_map_grid(const std::string& path, MapFileHeader& header) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(ErrorCode::IoError, "cannot open " + path);
    check_magic(in, "CHM1", path);
    header.map_w = static_cast<int>(read_u32(in));
    header.map_h = static_cast<int>(read_u32(in));
    header.stride = static_cast<int>(read_u32(in));
    header.pad_x = static_cast<int>(read_u32(in));
    header.pad_y = static_cast<int>(read_u32(in));
    if (!in || header.map_w <= 0 || header.map_h <= 0 || header.stride <= 0)
        raise(ErrorCode::BadFormat, "bad map header in " + path);
    Grid<double> grid(header.map_w, header.map_h);
    grid.data = read_f32_block(in, grid.size());
    if (!in) raise(ErrorCode::BadFormat, "truncated map file " + path);
    return grid;
}

void write_pgm(const std::string& path, const Grid<double>& grid) {
    std::ofstream out(path, std::ios::binary);
    if (!out) raise(ErrorCode::IoError, "cannot open " + path + " for writing");
    double max_v = 0.0;
    for (double v : grid.data) max_v = std::max(max_v, v);
    if (max_v <= 0.0) max_v = 1.0;
    out << "P5\n" << grid.width << " " << grid.height << "\n255\n";
    std::vector<unsigned char> row(grid.width);
    for (int y = 0; y < grid.height; ++y) {
        for (int x = 0; x < grid.width; ++x) {
            double v = grid.at(x, y) / max_v;
            row[x] = static_cast<unsigned char>(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5);
        }
        out.write(reinterpret_cast<const char*>(row.data()), grid.width);
    }
    if (!out) raise(ErrorCode::IoError, "write failed: " + path);
}

}  // namespace corrhal
