#include "corrhal/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace corrhal {

void Histogram::add(double v) {
    if (counts.empty()) return;
    double t = (v - lo) / (hi - lo);
    int bin = static_cast<int>(std::floor(t * static_cast<double>(counts.size())));
    bin = std::clamp(bin, 0, static_cast<int>(counts.size()) - 1);
    ++counts[static_cast<size_t>(bin)];
}

long Histogram::total() const {
    long t = 0;
    for (long c : counts) t += c;
    return t;
}

namespace {

constexpr KeypointLabel kLabels[3] = {KeypointLabel::Identified, KeypointLabel::Inpainted,
                                      KeypointLabel::Outpainted};

double median_of(std::vector<double>& values) {
    if (values.empty()) return 0.0;
    std::sort(values.begin(), values.end());
    size_t n = values.size();
    if (n % 2 == 1) return values[n / 2];
    return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace

NreReport nre_histogram(const std::vector<EvalSample>& samples) {
    NreReport report;
    if (samples.empty()) {
        for (KeypointLabel label : kLabels) report.per_label.push_back({label, 0, 0, 0, {}});
        return report;
    }
    const MapFrame& frame = samples.front().map->frame();
    report.ln_omega = uniform_nre(frame);
    for (KeypointLabel label : kLabels) {
        NreLabelStats stats;
        stats.label = label;
        stats.histogram = Histogram(0.0, report.ln_omega + 2.0, kHistogramBins);
        double sum = 0;
        for (const EvalSample& s : samples) {
            if (s.kp.label != label) continue;
            Vec2 x_t = s.map->frame().image_to_map(s.kp.gt);
            if (!s.map->frame().in_map(x_t)) {
                ++stats.dropped;
                continue;
            }
            double nre = nre_at(*s.map, x_t);
            stats.histogram.add(nre);
            sum += nre;
            ++stats.count;
        }
        stats.mean = stats.count > 0 ? sum / static_cast<double>(stats.count) : 0.0;
        report.per_label.push_back(std::move(stats));
    }
    return report;
}

ArgmaxReport argmax_error_histogram(const std::vector<EvalSample>& samples, uint64_t seed) {
    ArgmaxReport report;
    if (samples.empty()) {
        for (KeypointLabel label : kLabels) report.per_label.push_back({label, 0, 0, 0, {}});
        return report;
    }
    const MapFrame& frame = samples.front().map->frame();
    double w_px = static_cast<double>(frame.map_w * frame.stride);
    double h_px = static_cast<double>(frame.map_h * frame.stride);
    report.map_diagonal_px = std::hypot(w_px, h_px);

    for (KeypointLabel label : kLabels) {
        ArgmaxLabelStats stats;
        stats.label = label;
        stats.histogram = Histogram(0.0, report.map_diagonal_px, kHistogramBins);
        std::vector<double> errors;
        std::vector<const EvalSample*> of_label;
        for (const EvalSample& s : samples) {
            if (s.kp.label != label) continue;
            of_label.push_back(&s);
            double err = (argmax_to_image(*s.map).pixel - s.kp.gt).norm();
            stats.histogram.add(err);
            errors.push_back(err);
        }
        stats.count = static_cast<long>(errors.size());
        stats.median = median_of(errors);

        // E_U: expected pixel distance between a uniform random in-map
        // prediction and the ground truth, averaged over this label's
        // keypoints (each draw pairs a random keypoint with a random point).
        if (!of_label.empty()) {
            Rng rng(hash_u64(seed ^ (0x1f2e3d4c5b6a7988ULL + static_cast<uint64_t>(label))));
            constexpr int kDraws = 10000;
            double sum = 0;
            for (int i = 0; i < kDraws; ++i) {
                const EvalSample& s = *of_label[rng.uniform_int(of_label.size())];
                const MapFrame& f = s.map->frame();
                Vec2 map_pt{rng.uniform(0.0, f.map_w), rng.uniform(0.0, f.map_h)};
                sum += (f.map_to_image(map_pt) - s.kp.gt).norm();
            }
            stats.e_u = sum / kDraws;
        }
        report.per_label.push_back(std::move(stats));
    }
    return report;
}

std::vector<PrecisionPoint> pose_precision_curve(const std::vector<PoseResultEntry>& results,
                                                 double tau_t, double tau_r_deg, double x_min,
                                                 double x_max, int steps) {
    std::vector<PrecisionPoint> curve;
    curve.reserve(static_cast<size_t>(steps));
    for (int i = 1; i <= steps; ++i) {
        PrecisionPoint pt;
        pt.x = x_min + (x_max - x_min) * i / static_cast<double>(steps);
        for (const PoseResultEntry& entry : results) {
            if (entry.overlap < x_min || entry.overlap > pt.x) continue;
            ++pt.pairs;
            if (entry.estimate.status != PoseStatus::Ok) continue;
            PoseError err = pose_error(entry.estimate.pose, entry.gt_pose);
            if (err.rot_deg <= tau_r_deg && err.trans <= tau_t) ++pt.correct;
        }
        pt.fraction = pt.pairs > 0 ? static_cast<double>(pt.correct) / pt.pairs : 0.0;
        curve.push_back(pt);
    }
    return curve;
}

FieldOfView fov_of_gamma(const CameraModel& cam, double gamma) {
    if (gamma < 0) raise(ErrorCode::InvalidConfig, "gamma must be nonnegative");
    FieldOfView fov;
    fov.horizontal_deg =
        2.0 * std::atan((1.0 + 2.0 * gamma) * (cam.width / 2.0) / cam.fx) * 180.0 / M_PI;
    fov.vertical_deg =
        2.0 * std::atan((1.0 + 2.0 * gamma) * (cam.height / 2.0) / cam.fy) * 180.0 / M_PI;
    return fov;
}

namespace {

std::ofstream open_csv(const std::string& path) {
    std::ofstream out(path);
    if (!out) raise(ErrorCode::IoError, "cannot write " + path);
    return out;
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

void write_report_csvs(const std::string& out_dir, const EvalReport& report) {
    std::filesystem::create_directories(out_dir);

    {
        auto out = open_csv(out_dir + "/nre_histogram.csv");
        out << "label,bin_index,bin_lo,bin_hi,count\n";
        for (const NreLabelStats& stats : report.nre.per_label)
            for (size_t b = 0; b < stats.histogram.counts.size(); ++b)
                out << label_name(stats.label) << "," << b << ","
                    << fmt(stats.histogram.bin_lo(static_cast<int>(b))) << ","
                    << fmt(stats.histogram.bin_hi(static_cast<int>(b))) << ","
                    << stats.histogram.counts[b] << "\n";
    }
    {
        auto out = open_csv(out_dir + "/nre_summary.csv");
        out << "label,count,dropped,mean_nre,ln_omega\n";
        for (const NreLabelStats& stats : report.nre.per_label)
            out << label_name(stats.label) << "," << stats.count << "," << stats.dropped << ","
                << fmt(stats.mean) << "," << fmt(report.nre.ln_omega) << "\n";
    }
    {
        auto out = open_csv(out_dir + "/argmax_histogram.csv");
        out << "label,bin_index,bin_lo,bin_hi,count\n";
        for (const ArgmaxLabelStats& stats : report.argmax.per_label)
            for (size_t b = 0; b < stats.histogram.counts.size(); ++b)
                out << label_name(stats.label) << "," << b << ","
                    << fmt(stats.histogram.bin_lo(static_cast<int>(b))) << ","
                    << fmt(stats.histogram.bin_hi(static_cast<int>(b))) << ","
                    << stats.histogram.counts[b] << "\n";
    }
    {
        auto out = open_csv(out_dir + "/argmax_summary.csv");
        out << "label,count,median_error_px,e_u_px\n";
        for (const ArgmaxLabelStats& stats : report.argmax.per_label)
            out << label_name(stats.label) << "," << stats.count << "," << fmt(stats.median) << ","
                << fmt(stats.e_u) << "\n";
    }
    if (!report.precision.empty()) {
        auto out = open_csv(out_dir + "/precision_curve.csv");
        out << "overlap_max,pairs,correct,fraction,tau_t,tau_r_deg\n";
        for (const PrecisionPoint& pt : report.precision)
            out << fmt(pt.x) << "," << pt.pairs << "," << pt.correct << "," << fmt(pt.fraction)
                << "," << fmt(report.tau_t) << "," << fmt(report.tau_r_deg) << "\n";
    }
}

}  // namespace corrhal
