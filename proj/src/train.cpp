#include "corrhal/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "corrhal/json_io.hpp"

namespace corrhal {

using nlohmann::json;

void TrainConfig::validate() const {
    if (!(base_lr > 0)) raise(ErrorCode::InvalidConfig, "base_lr must be positive");
    if (!(decay_factor > 0 && decay_factor <= 1))
        raise(ErrorCode::InvalidConfig, "decay_factor must be in (0, 1]");
    if (label_mix.empty()) raise(ErrorCode::InvalidConfig, "label_mix must be nonempty");
    if (epochs < 1) raise(ErrorCode::InvalidConfig, "epochs must be >= 1");
    if (batch_pairs < 1) raise(ErrorCode::InvalidConfig, "batch_pairs must be >= 1");
    if (keypoints_per_pair < 1) raise(ErrorCode::InvalidConfig, "keypoints_per_pair must be >= 1");
    if (warmup_epochs < 0) raise(ErrorCode::InvalidConfig, "warmup_epochs must be >= 0");
    if (decay_every < 1) raise(ErrorCode::InvalidConfig, "decay_every must be >= 1");
    if (patience < 1) raise(ErrorCode::InvalidConfig, "patience must be >= 1");
    if (!(val_fraction >= 0 && val_fraction < 1))
        raise(ErrorCode::InvalidConfig, "val_fraction must be in [0, 1)");
    net_config().validate();
}

TrainConfig train_config_from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) raise(ErrorCode::IoError, "cannot open config " + path);
    json j = json::parse(in, nullptr, true, true);
    TrainConfig c;
    c.base_lr = j.value("base_lr", c.base_lr);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.warmup_epochs = j.value("warmup_epochs", c.warmup_epochs);
    c.decay_every = j.value("decay_every", c.decay_every);
    c.decay_factor = j.value("decay_factor", c.decay_factor);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_pairs = j.value("batch_pairs", c.batch_pairs);
    c.keypoints_per_pair = j.value("keypoints_per_pair", c.keypoints_per_pair);
    c.gamma = j.value("gamma", c.gamma);
    c.seed = j.value("seed", c.seed);
    c.patience = j.value("patience", c.patience);
    c.val_fraction = j.value("val_fraction", c.val_fraction);
    if (j.contains("label_mix")) {
        c.label_mix = {false, false, false};
        for (const auto& name : j.at("label_mix")) {
            KeypointLabel label = label_from_name(name);
            if (label == KeypointLabel::Identified) c.label_mix.identified = true;
            if (label == KeypointLabel::Inpainted) c.label_mix.inpainted = true;
            if (label == KeypointLabel::Outpainted) c.label_mix.outpainted = true;
        }
    }
    if (j.contains("net")) {
        const auto& n = j.at("net");
        c.net.channels = n.value("channels", c.net.channels);
        c.net.heads = n.value("heads", c.net.heads);
        c.net.cross_layers = n.value("cross_layers", c.net.cross_layers);
    }
    c.validate();
    return c;
}

double lr_schedule(int epoch, const TrainConfig& config) {
    if (epoch < 0) raise(ErrorCode::InvalidConfig, "epoch must be >= 0");
    if (config.warmup_epochs > 0 && epoch < config.warmup_epochs) {
        double t = static_cast<double>(epoch) / config.warmup_epochs;
        return config.base_lr * (0.1 + 0.9 * t);
    }
    if (epoch >= config.decay_every) {
        int steps = (epoch - config.decay_every) / config.decay_every + 1;
        return config.base_lr * std::pow(config.decay_factor, steps);
    }
    return config.base_lr;
}

AdamWState AdamWState::for_params(const NetParams& params) {
    AdamWState state;
    state.first_moment.reserve(params.tensors.size());
    state.second_moment.reserve(params.tensors.size());
    for (const NamedTensor& t : params.tensors) {
        state.first_moment.emplace_back(t.data.shape);
        state.second_moment.emplace_back(t.data.shape);
    }
    return state;
}

void adamw_step(NetParams& params, const std::vector<ad::TensorData<float>>& grads,
                AdamWState& state, double lr, double weight_decay) {
    if (grads.size() != params.tensors.size())
        raise(ErrorCode::ShapeMismatch, "gradient count does not match parameter count");
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    ++state.step;
    double bias1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    double bias2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
    for (size_t t = 0; t < params.tensors.size(); ++t) {
        auto& p = params.tensors[t].data;
        const auto& g = grads[t];
        if (g.shape != p.shape)
            raise(ErrorCode::ShapeMismatch, "gradient shape mismatch for " + params.tensors[t].name);
        auto& m = state.first_moment[t];
        auto& v = state.second_moment[t];
        for (size_t i = 0; i < p.v.size(); ++i) {
            double gi = g.v[i];
            double mi = beta1 * m.v[i] + (1.0 - beta1) * gi;
            double vi = beta2 * v.v[i] + (1.0 - beta2) * gi * gi;
            m.v[i] = static_cast<float>(mi);
            v.v[i] = static_cast<float>(vi);
            double m_hat = mi / bias1;
            double v_hat = vi / bias2;
            double update = lr * m_hat / (std::sqrt(v_hat) + eps) + lr * weight_decay * p.v[i];
            p.v[i] = static_cast<float>(p.v[i] - update);
        }
    }
}

TrainDataset load_train_dataset(const std::string& dir) {
    DatasetIndex index = read_manifest(dir);
    TrainDataset data;
    data.pairs.reserve(index.pairs.size());
    for (const PairEntry& entry : index.pairs) {
        std::string pair_dir = dir + "/" + entry.dir;
        TrainPair pair;
        pair.record = load_pair_record(dir, entry);
        pair.image_s = read_grid(pair_dir + "/source_image.grid");
        pair.image_t = read_grid(pair_dir + "/target_image.grid");
        data.pairs.push_back(std::move(pair));
    }
    return data;
}

TrainDataset dataset_from_generated(const std::vector<GeneratedPair>& generated) {
    TrainDataset data;
    data.pairs.reserve(generated.size());
    for (const GeneratedPair& g : generated)
        data.pairs.push_back({g.record, g.source.image, g.target.image});
    return data;
}

namespace {

std::vector<Vec2> keypoint_positions(const std::vector<LabeledKeypoint>& kps) {
    std::vector<Vec2> out;
    out.reserve(kps.size());
    for (const LabeledKeypoint& kp : kps) out.push_back(kp.p);
    return out;
}

/// Deterministic subset of at most `cap` keypoints (partial Fisher-Yates).
std::vector<LabeledKeypoint> subsample_keypoints(const std::vector<LabeledKeypoint>& kps, int cap,
                                                 Rng& rng) {
    if (static_cast<int>(kps.size()) <= cap) return kps;
    std::vector<int> idx(kps.size());
    for (size_t i = 0; i < kps.size(); ++i) idx[i] = static_cast<int>(i);
    for (int i = 0; i < cap; ++i) {
        int j = i + static_cast<int>(rng.uniform_int(idx.size() - static_cast<size_t>(i)));
        std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
    }
    std::vector<LabeledKeypoint> out;
    out.reserve(static_cast<size_t>(cap));
    for (int i = 0; i < cap; ++i) out.push_back(kps[static_cast<size_t>(idx[static_cast<size_t>(i)])]);
    return out;
}

struct PairLoss {
    double loss = 0;
    int kept = 0;
    int dropped = 0;
    bool empty = false;
};

PairLoss pair_backward(const NetParams& params, const TrainPair& pair,
                       const std::vector<LabeledKeypoint>& kps, const LabelMix& mix,
                       std::vector<ad::TensorData<float>>& grad_acc) {
    PairLoss out;
    ad::Tape<float> tape;
    NetVars<float> vars = register_params(tape, params);
    ForwardResult<float> fwd =
        net_forward(tape, vars, params.config, pair.image_s, pair.image_t, keypoint_positions(kps));
    NreLossResult<float> loss;
    try {
        loss = nre_loss(tape, fwd.map_rows, fwd.frame, kps, pair.record.pose_ts,
                        pair.record.cam_s, pair.record.cam_t, mix);
    } catch (const Error& e) {
        if (e.code() == ErrorCode::EmptyBatch) {
            out.empty = true;
            out.dropped = static_cast<int>(kps.size());
            return out;
        }
        throw;
    }
    tape.backward(loss.loss);
    for (size_t t = 0; t < vars.entries.size(); ++t) {
        const auto& g = tape.grad(vars.entries[t].second);
        for (size_t i = 0; i < g.v.size(); ++i) grad_acc[t].v[i] += g.v[i];
    }
    out.loss = static_cast<double>(tape.value(loss.loss).v[0]);
    out.kept = loss.kept;
    out.dropped = loss.dropped;
    return out;
}

}  // namespace

DatasetNre eval_dataset_nre(const NetParams& params, const TrainDataset& data,
                            const LabelMix& mix) {
    DatasetNre out;
    double total = 0;
    for (const TrainPair& pair : data.pairs) {
        std::vector<Vec2> pts = keypoint_positions(pair.record.keypoints);
        std::vector<CorrespondenceMap> maps = infer_maps(params, pair.image_s, pair.image_t, pts);
        for (size_t n = 0; n < maps.size(); ++n) {
            const LabeledKeypoint& kp = pair.record.keypoints[n];
            if (!mix.contains(kp.label)) continue;
            Vec2 x_t = maps[n].frame().image_to_map(kp.gt);
            if (!maps[n].frame().in_map(x_t)) {
                ++out.dropped;
                continue;
            }
            total += nre_at(maps[n], x_t);
            ++out.kept;
        }
    }
    out.mean_nre = out.kept > 0 ? total / static_cast<double>(out.kept)
                                : std::numeric_limits<double>::quiet_NaN();
    return out;
}

TrainResult train(const TrainConfig& config, const TrainDataset& data,
                  const std::function<void(const EpochMetrics&)>& on_epoch) {
    config.validate();
    if (data.pairs.empty()) raise(ErrorCode::EmptyDataset, "training dataset is empty");

    size_t n_total = data.pairs.size();
    size_t n_val = std::min(n_total - 1, static_cast<size_t>(
                                             std::lround(config.val_fraction * double(n_total))));
    size_t n_train = n_total - n_val;

    TrainDataset val;
    // A dataset too small to split validates on the training pairs.
    if (n_val == 0)
        val.pairs = data.pairs;
    else
        val.pairs.assign(data.pairs.begin() + static_cast<long>(n_train), data.pairs.end());

    TrainResult result;
    result.params = init_params(config.net_config(), config.seed);
    AdamWState opt_state = AdamWState::for_params(result.params);

    auto t_start = std::chrono::steady_clock::now();
    auto elapsed = [&] {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    };

    DatasetNre val0 = eval_dataset_nre(result.params, val, config.label_mix);
    EpochMetrics row0;
    row0.epoch = 0;
    row0.lr = 0;
    row0.train_nre = std::numeric_limits<double>::quiet_NaN();
    row0.val_nre = val0.mean_nre;
    row0.dropped_keypoints = val0.dropped;
    row0.wall_seconds = elapsed();
    result.metrics.push_back(row0);
    if (on_epoch) on_epoch(row0);

    NetParams best_params = result.params;
    double best_val = val0.mean_nre;
    int best_epoch = 0;
    int since_best = 0;

    std::vector<ad::TensorData<float>> grad_acc;
    grad_acc.reserve(result.params.tensors.size());
    for (const NamedTensor& t : result.params.tensors) grad_acc.emplace_back(t.data.shape);

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        double lr = lr_schedule(epoch - 1, config);
        Rng epoch_rng(hash_u64(config.seed ^ (0xa5a5a5a5ULL + static_cast<uint64_t>(epoch))));

        std::vector<size_t> order(n_train);
        for (size_t i = 0; i < n_train; ++i) order[i] = i;
        for (size_t i = n_train; i > 1; --i)
            std::swap(order[i - 1], order[epoch_rng.uniform_int(i)]);

        double epoch_loss = 0;
        long epoch_pairs = 0;
        long epoch_dropped = 0;

        for (size_t batch_start = 0; batch_start < n_train;
             batch_start += static_cast<size_t>(config.batch_pairs)) {
            size_t batch_end =
                std::min(batch_start + static_cast<size_t>(config.batch_pairs), n_train);
            for (auto& g : grad_acc) std::fill(g.v.begin(), g.v.end(), 0.0f);
            int contributed = 0;
            for (size_t b = batch_start; b < batch_end; ++b) {
                const TrainPair& pair = data.pairs[order[b]];
                Rng kp_rng = epoch_rng.fork(order[b]);
                std::vector<LabeledKeypoint> kps =
                    subsample_keypoints(pair.record.keypoints, config.keypoints_per_pair, kp_rng);
                PairLoss pl = pair_backward(result.params, pair, kps, config.label_mix, grad_acc);
                epoch_dropped += pl.dropped;
                if (pl.empty) continue;
                epoch_loss += pl.loss;
                ++epoch_pairs;
                ++contributed;
            }
            if (contributed == 0) continue;
            if (contributed > 1) {
                float inv = 1.0f / static_cast<float>(contributed);
                for (auto& g : grad_acc)
                    for (float& v : g.v) v *= inv;
            }
            adamw_step(result.params, grad_acc, opt_state, lr, config.weight_decay);
        }

        DatasetNre val_nre = eval_dataset_nre(result.params, val, config.label_mix);

        EpochMetrics row;
        row.epoch = epoch;
        row.lr = lr;
        row.train_nre = epoch_pairs > 0 ? epoch_loss / static_cast<double>(epoch_pairs)
                                        : std::numeric_limits<double>::quiet_NaN();
        row.val_nre = val_nre.mean_nre;
        row.dropped_keypoints = epoch_dropped;
        row.wall_seconds = elapsed();
        result.metrics.push_back(row);
        if (on_epoch) on_epoch(row);

        if (std::isfinite(row.val_nre) && row.val_nre < best_val - 1e-6) {
            best_val = row.val_nre;
            best_epoch = epoch;
            best_params = result.params;
            since_best = 0;
        } else if (++since_best >= config.patience) {
            break;
        }
    }

    result.params = std::move(best_params);
    result.best_epoch = best_epoch;
    return result;
}

void write_metrics_csv(const std::string& path, const std::vector<EpochMetrics>& metrics) {
    std::ofstream out(path);
    if (!out) raise(ErrorCode::IoError, "cannot write " + path);
    out << "epoch,lr,train_nre,val_nre,dropped_keypoints,wall_seconds\n";
    char line[256];
    for (const EpochMetrics& m : metrics) {
        std::snprintf(line, sizeof(line), "%d,%.17g,%.17g,%.17g,%ld,%.3f\n", m.epoch, m.lr,
                      m.train_nre, m.val_nre, m.dropped_keypoints, m.wall_seconds);
        out << line;
    }
}

}  // namespace corrhal
