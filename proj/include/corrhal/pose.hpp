#pragma once

#include <vector>

#include "corrhal/corrmap.hpp"
#include "corrhal/geometry.hpp"
#include "corrhal/synth.hpp"

namespace corrhal {

enum class PoseStatus { Ok, Failed };

struct PoseEstimate {
    RigidPose pose;
    int inlier_count = 0;
    double final_cost = std::numeric_limits<double>::infinity();
    PoseStatus status = PoseStatus::Failed;
};

/// Absolute pose from three bearing / 3D-point pairs; up to four solutions.
/// Every returned pose reprojects the three points onto their bearings to
/// within 1e-9 in normalized image coordinates. Throws
/// DegenerateConfiguration for (near-)collinear points.
std::vector<RigidPose> p3p_solve(const std::array<Vec3, 3>& bearings,
                                 const std::array<Vec3, 3>& points);

/// Unit bearing through a pixel.
Vec3 bearing_from_pixel(const CameraModel& cam, const Vec2& pixel);

struct MsacConfig {
    int max_iters = 5000;
    double top_fraction = 0.2;   // share of keypoints, ranked by map peak
    double threshold = -1;       // truncation in nats; <0 uses uniform_nre(frame)
    uint64_t seed = 0;
};

struct GncSchedule {
    double sigma_max = 2.0;  // map-cell units
    double sigma_min = 0.6;
    int steps = 5;
    // Stages end early once the line search stalls, so the budget is an
    // upper bound; descent on the piecewise-linear cost needs a few hundred
    // accepted steps to settle.
    int inner_iters = 300;
};

/// MSAC pose search: P3P on minimal triples drawn from the top-ranked
/// correspondences (argmax candidates), hypotheses scored by the truncated
/// NRE summed over all keypoints. Fails with fewer than 3 keypoints or when
/// no hypothesis beats the fully truncated score.
PoseEstimate msac_estimate(const std::vector<CorrespondenceMap>& maps,
                           const std::vector<Keypoint>& keypoints, const CameraModel& cam_s,
                           const CameraModel& cam_t, const MsacConfig& config);

/// Truncated-NRE objective sum_n min(nre_n(pose), tau) and its gradient with
/// respect to a local pose increment (axis-angle, translation). When
/// requested, `curvature` receives the diagonal of the active terms'
/// geometric Gauss-Newton matrix, used to scale descent directions.
double pose_objective(const RigidPose& pose, const std::vector<CorrespondenceMap>& maps,
                      const std::vector<Keypoint>& keypoints, const CameraModel& cam_s,
                      const CameraModel& cam_t, double tau,
                      Eigen::Matrix<double, 6, 1>* grad = nullptr,
                      Eigen::Matrix<double, 6, 1>* curvature = nullptr);

/// Applies a 6-dim local increment: R <- exp(omega) R, t <- t + dt.
RigidPose apply_increment(const RigidPose& pose, const Eigen::Matrix<double, 6, 1>& xi);

/// Graduated non-convexity over all keypoints: sigma anneals geometrically
/// from sigma_max to sigma_min; each stage runs backtracking gradient
/// descent on the truncated objective (threshold 1 nat per cell-unit of
/// sigma). The accepted-step cost sequence is non-increasing.
PoseEstimate gnc_refine(const RigidPose& initial, const std::vector<CorrespondenceMap>& maps,
                        const std::vector<Keypoint>& keypoints, const CameraModel& cam_s,
                        const CameraModel& cam_t, const GncSchedule& schedule);

struct EstimateConfig {
    MsacConfig msac;
    GncSchedule gnc;
};

/// msac_estimate followed by gnc_refine; failure propagates.
PoseEstimate estimate(const std::vector<CorrespondenceMap>& maps,
                      const std::vector<Keypoint>& keypoints, const CameraModel& cam_s,
                      const CameraModel& cam_t, const EstimateConfig& config);

}  // namespace corrhal
