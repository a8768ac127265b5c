#pragma once

#include <optional>
#include <string>
#include <vector>

#include "corrhal/corrmap.hpp"
#include "corrhal/pose.hpp"
#include "corrhal/synth.hpp"

namespace corrhal {

struct Histogram {
    double lo = 0, hi = 1;
    std::vector<long> counts;

    Histogram() = default;
    Histogram(double lo_, double hi_, int bins) : lo(lo_), hi(hi_), counts(bins, 0) {}

    /// Out-of-range values clamp into the edge bins, so totals always equal
    /// the sample count.
    void add(double v);
    long total() const;
    double bin_lo(int i) const { return lo + (hi - lo) * i / static_cast<double>(counts.size()); }
    double bin_hi(int i) const { return bin_lo(i + 1); }
};

constexpr int kHistogramBins = 40;

struct EvalSample {
    const CorrespondenceMap* map = nullptr;
    LabeledKeypoint kp;
};

struct NreLabelStats {
    KeypointLabel label = KeypointLabel::Identified;
    long count = 0;    // keypoints whose ground truth lies inside the map
    long dropped = 0;  // ground truth outside the padded map
    double mean = 0;
    Histogram histogram;
};

struct NreReport {
    double ln_omega = 0;
    std::vector<NreLabelStats> per_label;  // identified, inpainted, outpainted
};

/// NRE at the ground-truth correspondent, bucketed per label.
/// Bins span [0, ln_omega + 2].
NreReport nre_histogram(const std::vector<EvalSample>& samples);

struct ArgmaxLabelStats {
    KeypointLabel label = KeypointLabel::Identified;
    long count = 0;
    double median = 0;
    double e_u = 0;  // Monte-Carlo mean error of a uniform random prediction
    Histogram histogram;
};

struct ArgmaxReport {
    double map_diagonal_px = 0;
    std::vector<ArgmaxLabelStats> per_label;
};

/// Pixel distance between each map's argmax and the ground truth, per label,
/// with the random-prediction baseline E_U (10,000 seeded samples per label).
ArgmaxReport argmax_error_histogram(const std::vector<EvalSample>& samples, uint64_t seed);

struct PoseResultEntry {
    PoseEstimate estimate;
    RigidPose gt_pose;
    double overlap = 0;
};

struct PrecisionPoint {
    double x = 0;  // overlap upper bound
    long pairs = 0;
    long correct = 0;
    double fraction = 0;
};

/// Fraction of pairs with overlap in [x_min, x] whose pose error is within
/// (tau_t, tau_r_deg); failed estimates count as incorrect.
std::vector<PrecisionPoint> pose_precision_curve(const std::vector<PoseResultEntry>& results,
                                                 double tau_t, double tau_r_deg,
                                                 double x_min = 0.02, double x_max = 0.80,
                                                 int steps = 40);

struct FieldOfView {
    double horizontal_deg = 0;
    double vertical_deg = 0;
};

/// Effective field of view when the map is padded by gamma per side:
/// 2 atan((1 + 2 gamma) * (dim/2) / focal).
FieldOfView fov_of_gamma(const CameraModel& cam, double gamma);

struct EvalReport {
    NreReport nre;
    ArgmaxReport argmax;
    std::vector<PrecisionPoint> precision;
    double tau_t = 0, tau_r_deg = 0;
};

/// Writes nre_histogram.csv, nre_summary.csv, argmax_histogram.csv,
/// argmax_summary.csv and (when precision data is present)
/// precision_curve.csv into out_dir.
void write_report_csvs(const std::string& out_dir, const EvalReport& report);

}  // namespace corrhal
