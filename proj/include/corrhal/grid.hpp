#pragma once

#include <string>
#include <vector>

#include "corrhal/common.hpp"

namespace corrhal {

/// Dense row-major 2D grid. Rows index y, columns index x.
template <typename T>
struct Grid {
    int width = 0;
    int height = 0;
    std::vector<T> data;

    Grid() = default;
    Grid(int w, int h, T fill = T{}) : width(w), height(h), data(static_cast<size_t>(w) * h, fill) {}

    T& at(int x, int y) { return data[static_cast<size_t>(y) * width + x]; }
    const T& at(int x, int y) const { return data[static_cast<size_t>(y) * width + x]; }

    bool contains(int x, int y) const { return x >= 0 && x < width && y >= 0 && y < height; }
    size_t size() const { return data.size(); }

    bool operator==(const Grid& other) const {
        return width == other.width && height == other.height && data == other.data;
    }
};

/// Binary grid file: "CHG1", u32 width, u32 height, then width*height
/// little-endian f32 values in row-major order.
void write_grid(const std::string& path, const Grid<double>& grid);
Grid<double> read_grid(const std::string& path);

/// Correspondence-map file: "CHM1", u32 map_w, map_h, stride, pad_x, pad_y,
/// then map_w*map_h little-endian f32 values in row-major order.
struct MapFileHeader {
    int map_w = 0, map_h = 0, stride = 0, pad_x = 0, pad_y = 0;
};
void write_map_grid(const std::string& path, const MapFileHeader& header, const Grid<double>& grid);
Grid<double> read_map_grid(const std::string& path, MapFileHeader& header);

/// 8-bit PGM preview, values scaled so the grid maximum maps to 255.
void write_pgm(const std::string& path, const Grid<double>& grid);

}  // namespace corrhal
