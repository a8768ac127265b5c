#pragma once

#include <string>

#include "corrhal/geometry.hpp"
#include "corrhal/grid.hpp"

namespace corrhal {

/// Probabilities below this clamp contribute ln(kProbClamp) to the NRE, which
/// keeps every cost finite and the MSAC arithmetic safe.
constexpr double kProbClamp = 1e-12;

/// NRE sentinel for queries outside the map extent.
inline double cost_out() { return -std::log(kProbClamp); }

/// Softmax-normalized probability grid over the (possibly padded) target
/// plane, together with the affine frame that maps image pixels to map cells.
/// The probability of cell (row r, col c) lives at map coordinate
/// (c + 0.5, r + 0.5); immutable after construction.
class CorrespondenceMap {
public:
    /// Joint 2D softmax of the logits. Throws NonFiniteInput.
    static CorrespondenceMap normalize(const Grid<double>& logits, const MapFrame& frame);

    /// Wraps an already nonnegative grid, rescaled to sum to one.
    static CorrespondenceMap from_probabilities(Grid<double> probabilities, const MapFrame& frame);

    /// All mass on the cell containing (or nearest to) the given map point.
    static CorrespondenceMap delta_at(const Vec2& map_pt, const MapFrame& frame);

    static CorrespondenceMap uniform(const MapFrame& frame);

    const Grid<double>& values() const { return values_; }
    const MapFrame& frame() const { return frame_; }

    void save(const std::string& path) const;
    static CorrespondenceMap load(const std::string& path);
    void save_pgm(const std::string& path) const;

private:
    CorrespondenceMap(Grid<double> values, const MapFrame& frame)
        : values_(std::move(values)), frame_(frame) {}

    Grid<double> values_;
    MapFrame frame_;
};

/// NRE value and its gradient with respect to the map-coordinate query.
struct NreSample {
    double value = 0;
    double dx = 0, dy = 0;
};

/// Negative log-likelihood at a map-coordinate query: bilinear interpolation
/// of the clamped log-probabilities between cell centers. Queries inside the
/// map extent but outside the cell-center hull clamp to the hull edge;
/// queries outside the extent return cost_out().
double nre_at(const CorrespondenceMap& map, const Vec2& map_pt);
NreSample nre_at_with_grad(const CorrespondenceMap& map, const Vec2& map_pt);

/// Peak cell converted to target-image pixel coordinates (cell centers);
/// ties break to the smallest row-major index.
struct ArgmaxResult {
    Vec2 pixel;
    double peak_probability = 0;
};
ArgmaxResult argmax_to_image(const CorrespondenceMap& map);

/// NRE of the uniform map: ln(map_w * map_h).
double uniform_nre(const MapFrame& frame);

}  // namespace corrhal
