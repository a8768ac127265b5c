#include "corrhal/corrmap.hpp"

#include <algorithm>
#include <cmath>

namespace corrhal {

namespace {

void check_dims(const Grid<double>& grid, const MapFrame& frame) {
    if (grid.width != frame.map_w || grid.height != frame.map_h)
        raise(ErrorCode::ShapeMismatch, "grid dimensions do not match map frame");
}

}  // namespace

CorrespondenceMap CorrespondenceMap::normalize(const Grid<double>& logits, const MapFrame& frame) {
    check_dims(logits, frame);
    double max_logit = -std::numeric_limits<double>::infinity();
    for (double v : logits.data) {
        if (!std::isfinite(v)) raise(ErrorCode::NonFiniteInput, "non-finite logit");
        max_logit = std::max(max_logit, v);
    }
    Grid<double> values(logits.width, logits.height);
    double sum = 0.0;
    for (size_t i = 0; i < logits.data.size(); ++i) {
        values.data[i] = std::exp(logits.data[i] - max_logit);
        sum += values.data[i];
    }
    for (double& v : values.data) v /= sum;
    return CorrespondenceMap(std::move(values), frame);
}

CorrespondenceMap CorrespondenceMap::from_probabilities(Grid<double> probabilities,
                                                        const MapFrame& frame) {
    check_dims(probabilities, frame);
    double sum = 0.0;
    for (double v : probabilities.data) {
        if (!std::isfinite(v) || v < 0.0)
            raise(ErrorCode::NonFiniteInput, "probabilities must be finite and nonnegative");
        sum += v;
    }
    if (sum <= 0.0) raise(ErrorCode::NonFiniteInput, "probabilities sum to zero");
    if (sum != 1.0)
        for (double& v : probabilities.data) v /= sum;
    return CorrespondenceMap(std::move(probabilities), frame);
}

CorrespondenceMap CorrespondenceMap::delta_at(const Vec2& map_pt, const MapFrame& frame) {
    int cx = std::clamp(static_cast<int>(std::floor(map_pt.x())), 0, frame.map_w - 1);
    int cy = std::clamp(static_cast<int>(std::floor(map_pt.y())), 0, frame.map_h - 1);
    Grid<double> values(frame.map_w, frame.map_h, 0.0);
    values.at(cx, cy) = 1.0;
    return CorrespondenceMap(std::move(values), frame);
}

CorrespondenceMap CorrespondenceMap::uniform(const MapFrame& frame) {
    Grid<double> values(frame.map_w, frame.map_h, 1.0 / frame.cell_count());
    return CorrespondenceMap(std::move(values), frame);
}

void CorrespondenceMap::save(const std::string& path) const {
    MapFileHeader header{frame_.map_w, frame_.map_h, frame_.stride, frame_.pad_x, frame_.pad_y};
    write_map_grid(path, header, values_);
}

CorrespondenceMap CorrespondenceMap::load(const std::string& path) {
    MapFileHeader header;
    Grid<double> values = read_map_grid(path, header);
    MapFrame frame;
    frame.stride = header.stride;
    frame.pad_x = header.pad_x;
    frame.pad_y = header.pad_y;
    frame.map_w = header.map_w;
    frame.map_h = header.map_h;
    // f32 storage perturbs the normalization; restore it exactly.
    return from_probabilities(std::move(values), frame);
}

void CorrespondenceMap::save_pgm(const std::string& path) const { write_pgm(path, values_); }

namespace {

double clamped_log(double p) { return std::log(std::max(p, kProbClamp)); }

struct BilinearSetup {
    int x0, y0;       // top-left cell of the interpolation square
    double fx, fy;    // fractional weights
    bool clamped_x, clamped_y;
};

// Query in cell-center space: cell (r, c) carries its value at (c+0.5, r+0.5).
// Coordinates outside the hull of centers clamp to its edge.
BilinearSetup bilinear_setup(const MapFrame& frame, const Vec2& map_pt) {
    BilinearSetup s{};
    double hx = map_pt.x() - 0.5;
    double hy = map_pt.y() - 0.5;
    double cx = std::clamp(hx, 0.0, static_cast<double>(frame.map_w - 1));
    double cy = std::clamp(hy, 0.0, static_cast<double>(frame.map_h - 1));
    s.clamped_x = cx != hx;
    s.clamped_y = cy != hy;
    s.x0 = std::min(static_cast<int>(std::floor(cx)), frame.map_w - 2);
    s.y0 = std::min(static_cast<int>(std::floor(cy)), frame.map_h - 2);
    s.x0 = std::max(s.x0, 0);
    s.y0 = std::max(s.y0, 0);
    s.fx = cx - s.x0;
    s.fy = cy - s.y0;
    return s;
}

}  // namespace

double nre_at(const CorrespondenceMap& map, const Vec2& map_pt) {
    return nre_at_with_grad(map, map_pt).value;
}

NreSample nre_at_with_grad(const CorrespondenceMap& map, const Vec2& map_pt) {
    const MapFrame& frame = map.frame();
    NreSample out;
    if (!frame.in_map(map_pt)) {
        out.value = cost_out();
        return out;
    }
    const Grid<double>& v = map.values();
    if (frame.map_w == 1 && frame.map_h == 1) {
        out.value = -clamped_log(v.at(0, 0));
        return out;
    }
    BilinearSetup s = bilinear_setup(frame, map_pt);
    int x1 = std::min(s.x0 + 1, frame.map_w - 1);
    int y1 = std::min(s.y0 + 1, frame.map_h - 1);
    double l00 = clamped_log(v.at(s.x0, s.y0));
    double l10 = clamped_log(v.at(x1, s.y0));
    double l01 = clamped_log(v.at(s.x0, y1));
    double l11 = clamped_log(v.at(x1, y1));
    // Lerp form keeps equal corners bit-exact.
    double top = l00 + s.fx * (l10 - l00);
    double bottom = l01 + s.fx * (l11 - l01);
    double value = top + s.fy * (bottom - top);
    out.value = -value;
    out.dx = s.clamped_x ? 0.0 : -((l10 - l00) + s.fy * ((l11 - l01) - (l10 - l00)));
    out.dy = s.clamped_y ? 0.0 : -(bottom - top);
    return out;
}

ArgmaxResult argmax_to_image(const CorrespondenceMap& map) {
    const Grid<double>& v = map.values();
    int best = 0;
    for (int i = 1; i < static_cast<int>(v.data.size()); ++i)
        if (v.data[i] > v.data[best]) best = i;
    int row = best / v.width;
    int col = best % v.width;
    ArgmaxResult result;
    result.pixel = map.frame().map_to_image({col + 0.5, row + 0.5});
    result.peak_probability = v.data[best];
    return result;
}

double uniform_nre(const MapFrame& frame) {
    return std::log(static_cast<double>(frame.cell_count()));
}

}  // namespace corrhal
