#include "corrhal/pose.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <numeric>

namespace corrhal {

Vec3 bearing_from_pixel(const CameraModel& cam, const Vec2& pixel) {
    return cam.ray(pixel).normalized();
}

namespace {

// Real roots of a quartic (descending coefficients) via the companion matrix
// of the highest non-negligible degree, polished with Newton steps.
std::vector<double> real_poly_roots(const std::array<double, 5>& coeffs) {
    double scale = 0.0;
    for (double c : coeffs) scale = std::max(scale, std::abs(c));
    if (scale == 0.0) return {};
    int lead = 0;
    while (lead < 4 && std::abs(coeffs[static_cast<size_t>(lead)]) < 1e-14 * scale) ++lead;
    int degree = 4 - lead;
    if (degree == 0) return {};

    Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(degree, degree);
    double a0 = coeffs[static_cast<size_t>(lead)];
    for (int i = 0; i < degree; ++i) {
        companion(0, i) = -coeffs[static_cast<size_t>(lead + 1 + i)] / a0;
        if (i + 1 < degree) companion(i + 1, i) = 1.0;
    }
    Eigen::EigenSolver<Eigen::MatrixXd> solver(companion);

    auto poly = [&](double x, double& value, double& deriv) {
        value = coeffs[0];
        deriv = 0.0;
        for (int i = 1; i <= 4; ++i) {
            deriv = deriv * x + value;
            value = value * x + coeffs[static_cast<size_t>(i)];
        }
    };

    std::vector<double> roots;
    for (int i = 0; i < degree; ++i) {
        std::complex<double> z = solver.eigenvalues()(i);
        if (std::abs(z.imag()) > 1e-8 * (1.0 + std::abs(z.real()))) continue;
        double x = z.real();
        for (int it = 0; it < 8; ++it) {
            double value, deriv;
            poly(x, value, deriv);
            if (std::abs(deriv) < 1e-300) break;
            double step = value / deriv;
            x -= step;
            if (std::abs(step) < 1e-15 * (1.0 + std::abs(x))) break;
        }
        roots.push_back(x);
    }
    return roots;
}

// Least-squares rigid alignment Y = R X + t for exactly matched point sets.
RigidPose align_points(const std::array<Vec3, 3>& x, const std::array<Vec3, 3>& y) {
    Vec3 cx = (x[0] + x[1] + x[2]) / 3.0;
    Vec3 cy = (y[0] + y[1] + y[2]) / 3.0;
    Mat3 h = Mat3::Zero();
    for (int i = 0; i < 3; ++i) h += (x[static_cast<size_t>(i)] - cx) * (y[static_cast<size_t>(i)] - cy).transpose();
    Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 u = svd.matrixU(), v = svd.matrixV();
    Mat3 d = Mat3::Identity();
    d(2, 2) = (v * u.transpose()).determinant() > 0 ? 1.0 : -1.0;
    RigidPose pose;
    pose.rotation = v * d * u.transpose();
    pose.translation = cy - pose.rotation * cx;
    return pose;
}

// Newton polish of a pose on the three minimal correspondences; the six
// normalized-plane residuals against six pose degrees of freedom form a
// square system, solved directly.
bool polish_on_triple(RigidPose& pose, const std::array<Vec3, 3>& bearings,
                      const std::array<Vec3, 3>& points, double* max_residual) {
    double worst = std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < 8; ++iter) {
        Eigen::Matrix<double, 6, 6> jacobian;
        Eigen::Matrix<double, 6, 1> residual;
        worst = 0.0;
        for (int i = 0; i < 3; ++i) {
            Vec3 yc = pose.apply(points[static_cast<size_t>(i)]);
            if (!(yc.z() > kMinDepth)) return false;
            const Vec3& f = bearings[static_cast<size_t>(i)];
            if (!(f.z() > 1e-12)) return false;
            residual(2 * i) = yc.x() / yc.z() - f.x() / f.z();
            residual(2 * i + 1) = yc.y() / yc.z() - f.y() / f.z();
            worst = std::max(worst, std::abs(residual(2 * i)));
            worst = std::max(worst, std::abs(residual(2 * i + 1)));
            Eigen::Matrix<double, 2, 3> dproj;
            dproj << 1.0 / yc.z(), 0, -yc.x() / (yc.z() * yc.z()),
                     0, 1.0 / yc.z(), -yc.y() / (yc.z() * yc.z());
            Eigen::Matrix<double, 3, 6> dxc;
            Vec3 rx = pose.rotation * points[static_cast<size_t>(i)];
            Mat3 skew;
            skew << 0, -rx.z(), rx.y(), rx.z(), 0, -rx.x(), -rx.y(), rx.x(), 0;
            dxc.block<3, 3>(0, 0) = -skew;
            dxc.block<3, 3>(0, 3) = Mat3::Identity();
            jacobian.block<2, 6>(2 * i, 0) = dproj * dxc;
        }
        if (max_residual) *max_residual = worst;
        if (worst < 1e-14) return true;
        Eigen::Matrix<double, 6, 1> delta = jacobian.partialPivLu().solve(-residual);
        if (!delta.allFinite()) return false;
        pose = apply_increment(pose, delta);
    }
    // Recompute the final residual after the last step.
    worst = 0.0;
    for (int i = 0; i < 3; ++i) {
        Vec3 yc = pose.apply(points[static_cast<size_t>(i)]);
        if (!(yc.z() > kMinDepth)) return false;
        const Vec3& f = bearings[static_cast<size_t>(i)];
        Eigen::Vector2d r(yc.x() / yc.z() - f.x() / f.z(), yc.y() / yc.z() - f.y() / f.z());
        worst = std::max(worst, r.cwiseAbs().maxCoeff());
    }
    if (max_residual) *max_residual = worst;
    return true;
}

}  // namespace

RigidPose apply_increment(const RigidPose& pose, const Eigen::Matrix<double, 6, 1>& xi) {
    RigidPose out;
    out.rotation = exp_so3(xi.head<3>()) * pose.rotation;
    out.translation = pose.translation + xi.tail<3>();
    return out;
}

std::vector<RigidPose> p3p_solve(const std::array<Vec3, 3>& bearings,
                                 const std::array<Vec3, 3>& points) {
    // Collinearity: smallest triangle altitude = 2 * area / longest side.
    double side_a = (points[1] - points[2]).norm();
    double side_b = (points[0] - points[2]).norm();
    double side_c = (points[0] - points[1]).norm();
    double area = 0.5 * (points[1] - points[0]).cross(points[2] - points[0]).norm();
    double longest = std::max({side_a, side_b, side_c});
    if (longest <= 0 || 2.0 * area / longest <= 1e-6)
        raise(ErrorCode::DegenerateConfiguration, "3D points are (near-)collinear");

    std::array<Vec3, 3> f = {bearings[0].normalized(), bearings[1].normalized(),
                             bearings[2].normalized()};

    double p = 2.0 * f[1].dot(f[2]);
    double q = 2.0 * f[0].dot(f[2]);
    double r = 2.0 * f[0].dot(f[1]);
    double b_sq = side_b * side_b;
    double big_a = (side_a * side_a) / b_sq;
    double big_c = (side_c * side_c) / b_sq;

    // For distance ratios u = s2/s1, v = s3/s1 the law-of-cosines system
    // reduces to N(v)^2 - r N(v) D(v) + M(v) D(v)^2 = 0 with u = N(v)/D(v).
    // Quadratics in ascending order:
    double n0 = 1.0 + (big_a - big_c), n1 = -(big_a - big_c) * q, n2 = -1.0 + (big_a - big_c);
    double m0 = 1.0 - big_c, m1 = big_c * q, m2 = -big_c;
    double d0 = r, d1 = -p;

    auto mul_quad = [](double a0, double a1, double a2, double b0, double b1, double b2,
                       std::array<double, 5>& out) {
        out[0] += a0 * b0;
        out[1] += a0 * b1 + a1 * b0;
        out[2] += a0 * b2 + a1 * b1 + a2 * b0;
        out[3] += a1 * b2 + a2 * b1;
        out[4] += a2 * b2;
    };
    std::array<double, 5> quartic{};  // ascending
    mul_quad(n0, n1, n2, n0, n1, n2, quartic);
    mul_quad(-r * n0, -r * n1, -r * n2, d0, d1, 0.0, quartic);
    std::array<double, 5> dd{};
    mul_quad(d0, d1, 0.0, d0, d1, 0.0, dd);
    mul_quad(m0, m1, m2, dd[0], dd[1], dd[2], quartic);
    // mul_quad with dd treats it as quadratic; dd[3], dd[4] are zero.

    std::array<double, 5> descending{quartic[4], quartic[3], quartic[2], quartic[1], quartic[0]};
    std::vector<double> roots = real_poly_roots(descending);

    std::vector<RigidPose> solutions;
    for (double v : roots) {
        if (!(v > 0)) continue;
        double denom = d0 + d1 * v;
        if (std::abs(denom) < 1e-12) continue;
        double u = (n0 + n1 * v + n2 * v * v) / denom;
        if (!(u > 0)) continue;
        double radicand = 1.0 + v * v - q * v;
        if (!(radicand > 0)) continue;
        double s1 = side_b / std::sqrt(radicand);
        std::array<Vec3, 3> camera_points = {s1 * f[0], u * s1 * f[1], v * s1 * f[2]};
        RigidPose pose = align_points(points, camera_points);
        double residual = std::numeric_limits<double>::infinity();
        if (!polish_on_triple(pose, f, points, &residual)) continue;
        if (residual > 1e-9) continue;
        bool duplicate = false;
        for (const RigidPose& prev : solutions) {
            PoseError diff = pose_error(pose, prev);
            if (diff.rot_deg < 1e-7 && diff.trans < 1e-9) {
                duplicate = true;
                break;
            }
        }
        if (!duplicate) solutions.push_back(pose);
    }
    return solutions;
}

namespace {

struct Correspondence {
    Vec3 point;       // source-camera-frame 3D point
    Vec2 candidate;   // argmax pixel in the target plane
    double peak = 0;  // map peak probability
};

double residual_nre(const CorrespondenceMap& map, const Vec3& point, const RigidPose& pose,
                    const CameraModel& cam_t) {
    Vec3 yc = pose.apply(point);
    if (!(yc.z() > kMinDepth)) return cost_out();
    Vec2 pixel{cam_t.fx * yc.x() / yc.z() + cam_t.cx, cam_t.fy * yc.y() / yc.z() + cam_t.cy};
    return nre_at(map, map.frame().image_to_map(pixel));
}

void check_aligned_maps(const std::vector<CorrespondenceMap>& maps,
                        const std::vector<Keypoint>& keypoints) {
    if (maps.size() != keypoints.size())
        raise(ErrorCode::ShapeMismatch, "one correspondence map per keypoint required");
    for (const CorrespondenceMap& map : maps)
        if (!(map.frame() == maps.front().frame()))
            raise(ErrorCode::ShapeMismatch, "correspondence maps must share one frame");
}

}  // namespace

PoseEstimate msac_estimate(const std::vector<CorrespondenceMap>& maps,
                           const std::vector<Keypoint>& keypoints, const CameraModel& cam_s,
                           const CameraModel& cam_t, const MsacConfig& config) {
    PoseEstimate result;
    if (keypoints.size() < 3) return result;  // status Failed
    check_aligned_maps(maps, keypoints);
    const MapFrame& frame = maps.front().frame();
    double threshold = config.threshold > 0 ? config.threshold : uniform_nre(frame);
    size_t n = keypoints.size();

    std::vector<Correspondence> corr(n);
    for (size_t i = 0; i < n; ++i) {
        if (!(keypoints[i].depth > 0)) raise(ErrorCode::NonPositiveDepth, "keypoint depth <= 0");
        ArgmaxResult peak = argmax_to_image(maps[i]);
        corr[i].point = backproject(keypoints[i].p, keypoints[i].depth, cam_s);
        corr[i].candidate = peak.pixel;
        corr[i].peak = peak.peak_probability;
    }

    // Rank by map peak, ties by index; the minimal triples come from the top
    // fraction only.
    std::vector<size_t> ranked(n);
    std::iota(ranked.begin(), ranked.end(), size_t{0});
    std::stable_sort(ranked.begin(), ranked.end(),
                     [&](size_t a, size_t b) { return corr[a].peak > corr[b].peak; });
    size_t top_k = std::max<size_t>(3, static_cast<size_t>(
                                           std::ceil(config.top_fraction * static_cast<double>(n))));
    top_k = std::min(top_k, n);

    auto score_pose = [&](const RigidPose& pose) {
        double score = 0.0;
        for (size_t i = 0; i < n; ++i)
            score += std::min(residual_nre(maps[i], corr[i].point, pose, cam_t), threshold);
        return score;
    };

    double degenerate_score = static_cast<double>(n) * threshold;
    double best_score = degenerate_score;
    RigidPose best_pose;
    bool found = false;

    // Minimal triples from the top-ranked set for the full iteration budget;
    // every hypothesis is scored over all keypoints.
    Rng rng(hash_u64(config.seed ^ 0x7b4f9e2d1c3a5968ULL));
    for (long iter = 0; iter < config.max_iters; ++iter) {
        size_t i0 = ranked[rng.uniform_int(top_k)];
        size_t i1 = ranked[rng.uniform_int(top_k)];
        size_t i2 = ranked[rng.uniform_int(top_k)];
        if (i0 == i1 || i0 == i2 || i1 == i2) continue;

        std::array<Vec3, 3> bearings = {bearing_from_pixel(cam_t, corr[i0].candidate),
                                        bearing_from_pixel(cam_t, corr[i1].candidate),
                                        bearing_from_pixel(cam_t, corr[i2].candidate)};
        std::array<Vec3, 3> points = {corr[i0].point, corr[i1].point, corr[i2].point};
        std::vector<RigidPose> hypotheses;
        try {
            hypotheses = p3p_solve(bearings, points);
        } catch (const Error& e) {
            if (e.code() == ErrorCode::DegenerateConfiguration) continue;
            throw;
        }
        for (const RigidPose& pose : hypotheses) {
            double score = score_pose(pose);
            if (score < best_score) {
                best_score = score;
                best_pose = pose;
                found = true;
            }
        }
    }

    // A hypothesis must beat the fully truncated score by a real margin;
    // rounding in the log path is orders of magnitude below this.
    if (!found || best_score >= degenerate_score - 1e-9 * static_cast<double>(n))
        return result;  // Failed
    result.status = PoseStatus::Ok;
    result.pose = best_pose;
    result.final_cost = best_score;
    for (size_t i = 0; i < n; ++i)
        if (residual_nre(maps[i], corr[i].point, best_pose, cam_t) < threshold)
            ++result.inlier_count;
    return result;
}

double pose_objective(const RigidPose& pose, const std::vector<CorrespondenceMap>& maps,
                      const std::vector<Keypoint>& keypoints, const CameraModel& cam_s,
                      const CameraModel& cam_t, double tau, Eigen::Matrix<double, 6, 1>* grad,
                      Eigen::Matrix<double, 6, 1>* curvature) {
    check_aligned_maps(maps, keypoints);
    if (grad) grad->setZero();
    if (curvature) curvature->setZero();
    const MapFrame& frame = maps.front().frame();
    double total = 0.0;
    for (size_t i = 0; i < maps.size(); ++i) {
        Vec3 point = backproject(keypoints[i].p, keypoints[i].depth, cam_s);
        Vec3 yc = pose.apply(point);
        if (!(yc.z() > kMinDepth)) {
            total += tau;
            continue;
        }
        Vec2 pixel{cam_t.fx * yc.x() / yc.z() + cam_t.cx, cam_t.fy * yc.y() / yc.z() + cam_t.cy};
        Vec2 map_pt = frame.image_to_map(pixel);
        if (!frame.in_map(map_pt)) {
            total += tau;
            continue;
        }
        NreSample sample = nre_at_with_grad(maps[i], map_pt);
        if (sample.value >= tau) {
            total += tau;
            continue;  // truncated: no gradient
        }
        total += sample.value;
        if (!grad) continue;
        double z = yc.z();
        Eigen::Matrix<double, 2, 3> dpix;
        dpix << cam_t.fx / z, 0, -cam_t.fx * yc.x() / (z * z),
                0, cam_t.fy / z, -cam_t.fy * yc.y() / (z * z);
        Vec3 rx = pose.rotation * point;
        Mat3 skew;
        skew << 0, -rx.z(), rx.y(), rx.z(), 0, -rx.x(), -rx.y(), rx.x(), 0;
        Eigen::Matrix<double, 3, 6> dxc;
        dxc.block<3, 3>(0, 0) = -skew;
        dxc.block<3, 3>(0, 3) = Mat3::Identity();
        Eigen::Vector2d dnre(sample.dx, sample.dy);
        Eigen::Matrix<double, 2, 6> map_jac = (1.0 / frame.stride) * dpix * dxc;
        *grad += map_jac.transpose() * dnre;
        if (curvature) *curvature += map_jac.colwise().squaredNorm().transpose();
    }
    if (!std::isfinite(total)) raise(ErrorCode::NonFiniteCost, "pose objective is not finite");
    return total;
}

PoseEstimate gnc_refine(const RigidPose& initial, const std::vector<CorrespondenceMap>& maps,
                        const std::vector<Keypoint>& keypoints, const CameraModel& cam_s,
                        const CameraModel& cam_t, const GncSchedule& schedule) {
    if (!(schedule.sigma_max >= schedule.sigma_min) || !(schedule.sigma_min > 0))
        raise(ErrorCode::InvalidConfig, "need sigma_max >= sigma_min > 0");
    if (schedule.steps < 1 || schedule.inner_iters < 1)
        raise(ErrorCode::InvalidConfig, "schedule needs at least one stage and iteration");
    check_aligned_maps(maps, keypoints);
    for (const CorrespondenceMap& map : maps)
        for (double v : map.values().data)
            if (!std::isfinite(v)) raise(ErrorCode::NonFiniteCost, "map contains non-finite value");

    // Truncation coupling: nats of cost cap per cell-unit of sigma. Sized so
    // the final stage still sees sub-cell quantization residuals while
    // c * sigma_max stays below the uniform-map NRE of every frame in use,
    // keeping uninformative maps permanently truncated.
    constexpr double kNatsPerCell = 3.0;
    RigidPose pose = initial;
    double final_cost = 0.0;
    for (int stage = 0; stage < schedule.steps; ++stage) {
        double t_frac = schedule.steps > 1 ? static_cast<double>(stage) / (schedule.steps - 1) : 1.0;
        double sigma = schedule.sigma_max *
                       std::pow(schedule.sigma_min / schedule.sigma_max, t_frac);
        double tau = kNatsPerCell * sigma;

        for (int it = 0; it < schedule.inner_iters; ++it) {
            Eigen::Matrix<double, 6, 1> grad, curvature;
            double f = pose_objective(pose, maps, keypoints, cam_s, cam_t, tau, &grad, &curvature);
            final_cost = f;
            if (grad.squaredNorm() < 1e-24) break;
            // Jacobi-scaled descent direction: plain steepest descent stalls
            // on the anisotropic pose parameterization.
            Eigen::Matrix<double, 6, 1> direction;
            double floor_c = 1e-6 * (curvature.maxCoeff() + 1e-12);
            for (int k = 0; k < 6; ++k) direction(k) = -grad(k) / (curvature(k) + floor_c);
            double slope = grad.dot(direction);
            if (!(slope < 0)) break;
            double step = 1.0;
            bool accepted = false;
            while (step > 1e-12) {
                RigidPose candidate = apply_increment(pose, step * direction);
                double f_new =
                    pose_objective(candidate, maps, keypoints, cam_s, cam_t, tau, nullptr);
                if (f_new <= f + 1e-4 * step * slope) {
                    pose = candidate;
                    final_cost = f_new;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if (!accepted) break;
        }
    }

    PoseEstimate result;
    result.status = PoseStatus::Ok;
    result.pose = pose;
    result.final_cost = final_cost;
    double tau_final = 3.0 * schedule.sigma_min;
    for (size_t i = 0; i < maps.size(); ++i) {
        Vec3 point = backproject(keypoints[i].p, keypoints[i].depth, cam_s);
        if (residual_nre(maps[i], point, pose, cam_t) < tau_final) ++result.inlier_count;
    }
    return result;
}

PoseEstimate estimate(const std::vector<CorrespondenceMap>& maps,
                      const std::vector<Keypoint>& keypoints, const CameraModel& cam_s,
                      const CameraModel& cam_t, const EstimateConfig& config) {
    PoseEstimate coarse = msac_estimate(maps, keypoints, cam_s, cam_t, config.msac);
    if (coarse.status != PoseStatus::Ok) return coarse;
    PoseEstimate refined =
        gnc_refine(coarse.pose, maps, keypoints, cam_s, cam_t, config.gnc);
    // Inliers reported against the MSAC truncation threshold.
    const MapFrame& frame = maps.front().frame();
    double threshold = config.msac.threshold > 0 ? config.msac.threshold : uniform_nre(frame);
    refined.inlier_count = 0;
    for (size_t i = 0; i < maps.size(); ++i) {
        Vec3 point = backproject(keypoints[i].p, keypoints[i].depth, cam_s);
        if (residual_nre(maps[i], point, refined.pose, cam_t) < threshold)
            ++refined.inlier_count;
    }
    return refined;
}

}  // namespace corrhal
