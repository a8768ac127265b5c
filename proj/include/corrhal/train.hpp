#pragma once

#include <functional>
#include <string>
#include <vector>

#include "corrhal/dataset.hpp"
#include "corrhal/net.hpp"

namespace corrhal {

struct LabelMix {
    bool identified = true;
    bool inpainted = true;
    bool outpainted = true;

    bool contains(KeypointLabel label) const {
        switch (label) {
            case KeypointLabel::Identified: return identified;
            case KeypointLabel::Inpainted: return inpainted;
            case KeypointLabel::Outpainted: return outpainted;
        }
        return false;
    }
    bool empty() const { return !identified && !inpainted && !outpainted; }
};

struct TrainConfig {
    double base_lr = 1e-3;
    double weight_decay = 0.1;
    int warmup_epochs = 2;
    int decay_every = 5;
    double decay_factor = 0.5;
    int epochs = 20;
    int batch_pairs = 8;
    int keypoints_per_pair = 64;
    double gamma = 0.5;
    uint64_t seed = 0;
    LabelMix label_mix;
    int patience = 5;
    double val_fraction = 0.1;
    NetConfig net;  // gamma is overwritten from this config's gamma

    void validate() const;
    NetConfig net_config() const {
        NetConfig c = net;
        c.gamma = gamma;
        return c;
    }
};

TrainConfig train_config_from_json_file(const std::string& path);

/// Mean NRE over keypoints in the label mix whose ground-truth map
/// coordinate lies inside the padded map; the rest are dropped and counted.
/// Throws EmptyBatch if every keypoint drops out.
template <typename T>
struct NreLossResult {
    ad::Var loss = -1;
    int kept = 0;
    int dropped = 0;
};

template <typename T>
NreLossResult<T> nre_loss(ad::Tape<T>& tape, ad::Var map_rows, const MapFrame& frame,
                          const std::vector<LabeledKeypoint>& keypoints, const RigidPose& pose_ts,
                          const CameraModel& cam_s, const CameraModel& cam_t,
                          const LabelMix& mix) {
    if (tape.value(map_rows).dim(0) != static_cast<int>(keypoints.size()))
        raise(ErrorCode::ShapeMismatch, "one map row per keypoint required");
    NreLossResult<T> result;
    std::vector<int> kept_rows;
    std::vector<Vec2> targets;
    for (size_t n = 0; n < keypoints.size(); ++n) {
        const LabeledKeypoint& kp = keypoints[n];
        if (!mix.contains(kp.label)) continue;
        Vec2 x_t;
        try {
            x_t = frame.image_to_map(warp(kp.p, kp.depth, pose_ts, cam_s, cam_t));
        } catch (const Error&) {
            ++result.dropped;
            continue;
        }
        if (!frame.in_map(x_t)) {
            ++result.dropped;
            continue;
        }
        kept_rows.push_back(static_cast<int>(n));
        targets.push_back(x_t);
    }
    result.kept = static_cast<int>(kept_rows.size());
    if (result.kept == 0) raise(ErrorCode::EmptyBatch, "all keypoints dropped from the NRE loss");
    ad::Var logs = tape.clamp_log(tape.gather_rows(map_rows, kept_rows),
                                  static_cast<T>(kProbClamp));
    ad::Var sampled = tape.bilinear_sample_own_rows(logs, frame.map_h, frame.map_w, targets);
    result.loss = tape.scale(tape.sum_all(sampled), static_cast<T>(-1.0 / result.kept));
    return result;
}

/// Learning rate schedule: linear warmup from 0.1*base over warmup_epochs,
/// then halving-style decay every decay_every epochs starting at decay_every.
double lr_schedule(int epoch, const TrainConfig& config);

struct AdamWState {
    std::vector<ad::TensorData<float>> first_moment;
    std::vector<ad::TensorData<float>> second_moment;
    int64_t step = 0;

    static AdamWState for_params(const NetParams& params);
};

/// Adaptive-moment update with decoupled weight decay:
/// p -= lr * m_hat / (sqrt(v_hat) + eps) + lr * wd * p.
void adamw_step(NetParams& params, const std::vector<ad::TensorData<float>>& grads,
                AdamWState& state, double lr, double weight_decay);

struct TrainPair {
    PairRecord record;
    Grid<double> image_s;
    Grid<double> image_t;
};

struct TrainDataset {
    std::vector<TrainPair> pairs;
};

TrainDataset load_train_dataset(const std::string& dir);
TrainDataset dataset_from_generated(const std::vector<GeneratedPair>& generated);

struct EpochMetrics {
    int epoch = 0;
    double lr = 0;
    double train_nre = 0;
    double val_nre = 0;
    long dropped_keypoints = 0;
    double wall_seconds = 0;
};

struct TrainResult {
    NetParams params;  // best-validation snapshot
    std::vector<EpochMetrics> metrics;
    int best_epoch = 0;
};

/// Deterministic under a fixed seed; early-stops when validation NRE fails
/// to improve for `patience` epochs.
TrainResult train(const TrainConfig& config, const TrainDataset& data,
                  const std::function<void(const EpochMetrics&)>& on_epoch = {});

void write_metrics_csv(const std::string& path, const std::vector<EpochMetrics>& metrics);

struct DatasetNre {
    double mean_nre = 0;
    long kept = 0;
    long dropped = 0;
};

/// Forward-only evaluation of the mean NRE at ground truth over a pair set.
DatasetNre eval_dataset_nre(const NetParams& params, const TrainDataset& data,
                            const LabelMix& mix);

}  // namespace corrhal
