#pragma once

#include <string>
#include <utility>
#include <vector>

#include "corrhal/autodiff.hpp"
#include "corrhal/corrmap.hpp"
#include "corrhal/grid.hpp"

namespace corrhal {

struct NetConfig {
    int stride = 4;      // backbone output-to-input ratio (two stride-2 convs)
    int channels = 32;   // descriptor width d
    int heads = 2;
    int cross_layers = 2;
    double gamma = 0.5;  // padding ratio per side

    int head_dim() const { return channels / heads; }
    void validate() const;
};

struct NamedTensor {
    std::string name;
    ad::TensorData<float> data;
};

struct NetParams {
    NetConfig config;
    std::vector<NamedTensor> tensors;

    const ad::TensorData<float>& get(const std::string& name) const;
    ad::TensorData<float>& get(const std::string& name);
};

/// Fixed tensor inventory for a configuration, in checkpoint order.
std::vector<std::pair<std::string, ad::Shape>> tensor_inventory(const NetConfig& config);

NetParams init_params(const NetConfig& config, uint64_t seed);

/// Parameter nodes registered on a tape, aligned with NetParams::tensors.
template <typename T>
struct NetVars {
    std::vector<std::pair<std::string, ad::Var>> entries;

    ad::Var get(const std::string& name) const {
        for (const auto& [n, v] : entries)
            if (n == name) return v;
        raise(ErrorCode::ShapeMismatch, "unknown parameter tensor: " + name);
    }
};

template <typename T>
NetVars<T> register_params(ad::Tape<T>& tape, const NetParams& params) {
    NetVars<T> vars;
    vars.entries.reserve(params.tensors.size());
    for (const NamedTensor& t : params.tensors)
        vars.entries.emplace_back(t.name, tape.input(t.data.template cast<T>()));
    return vars;
}

/// Builds NetVars from externally created vars (used by gradient checks).
template <typename T>
NetVars<T> net_vars_from(const NetParams& params, const std::vector<ad::Var>& vars) {
    NetVars<T> out;
    for (size_t i = 0; i < params.tensors.size(); ++i)
        out.entries.emplace_back(params.tensors[i].name, vars[i]);
    return out;
}

template <typename T>
ad::TensorData<T> image_tensor(const Grid<double>& image) {
    ad::TensorData<T> t(ad::Shape{image.height, image.width, 1});
    for (size_t i = 0; i < image.data.size(); ++i) t.v[i] = static_cast<T>(image.data[i]);
    return t;
}

struct GatedAttention {
    ad::Var out;
    ad::Var gate;  // scalar node
};

/// softmax(g * QK^T / sqrt(d_h)) V with the scalar gate
/// g = sigmoid(max of the scaled score matrix).
template <typename T>
GatedAttention gated_attention(ad::Tape<T>& tape, ad::Var q, ad::Var k, ad::Var v) {
    int dh = tape.value(q).dim(1);
    ad::Var scores = tape.scale(tape.matmul_nt(q, k), static_cast<T>(1.0 / std::sqrt(double(dh))));
    ad::Var gate = tape.sigmoid(tape.max_reduce(scores));
    ad::Var weights = tape.softmax_rows(tape.mul(scores, gate));
    return {tape.matmul(weights, v), gate};
}

/// Multi-head gated attention with residual: x_q + sum_h head_h * Wo_h.
template <typename T>
ad::Var attention_block(ad::Tape<T>& tape, const NetVars<T>& vars, const std::string& prefix,
                        int heads, ad::Var x_q, ad::Var x_kv) {
    ad::Var acc = x_q;
    for (int h = 0; h < heads; ++h) {
        std::string base = prefix + ".h" + std::to_string(h) + ".";
        ad::Var q = tape.matmul(x_q, vars.get(base + "wq"));
        ad::Var k = tape.matmul(x_kv, vars.get(base + "wk"));
        ad::Var v = tape.matmul(x_kv, vars.get(base + "wv"));
        ad::Var head = gated_attention(tape, q, k, v).out;
        acc = tape.add(acc, tape.matmul(head, vars.get(base + "wo")));
    }
    return acc;
}

/// Siamese convolutional backbone: two stride-2 3x3 convs plus a 1x1
/// compression, producing a {h/stride, w/stride, channels} grid.
template <typename T>
ad::Var net_extract_features(ad::Tape<T>& tape, const NetVars<T>& vars, const NetConfig& config,
                             ad::Var image) {
    const auto& shape = tape.value(image).shape;
    if (shape.size() != 3 || shape[2] != 1)
        raise(ErrorCode::ShapeMismatch, "expected a {h,w,1} image tensor");
    if (shape[0] % config.stride != 0 || shape[1] % config.stride != 0)
        raise(ErrorCode::ShapeMismatch, "image dims must be divisible by the stride");
    ad::Var c1 = tape.relu(tape.conv2d(image, vars.get("conv1_w"), vars.get("conv1_b"), 3, 2, 1));
    ad::Var c2 = tape.relu(tape.conv2d(c1, vars.get("conv2_w"), vars.get("conv2_b"), 3, 2, 1));
    int gh = tape.value(c2).dim(0), gw = tape.value(c2).dim(1);
    ad::Var flat = tape.reshape(c2, {gh * gw, config.channels});
    ad::Var compressed = tape.affine(flat, vars.get("compress_w"), vars.get("compress_b"));
    return tape.reshape(compressed, {gh, gw, config.channels});
}

/// Per-cell positional encoding over cell centers, with the unpadded grid
/// spanning (-1, 1); padded cells extend beyond. Output {cells, channels}.
template <typename T>
ad::Var positional_encoding(ad::Tape<T>& tape, const NetVars<T>& vars, int base_w, int base_h,
                            int pad_x, int pad_y) {
    int w = base_w + 2 * pad_x, h = base_h + 2 * pad_y;
    ad::TensorData<T> mesh(ad::Shape{h * w, 2});
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double nx = (2.0 * (x - pad_x) + 1.0) / base_w - 1.0;
            double ny = (2.0 * (y - pad_y) + 1.0) / base_h - 1.0;
            mesh.v[(static_cast<size_t>(y) * w + x) * 2 + 0] = static_cast<T>(nx);
            mesh.v[(static_cast<size_t>(y) * w + x) * 2 + 1] = static_cast<T>(ny);
        }
    }
    ad::Var x = tape.input(std::move(mesh));
    x = tape.relu(tape.affine(x, vars.get("pos_w1"), vars.get("pos_b1")));
    x = tape.relu(tape.affine(x, vars.get("pos_w2"), vars.get("pos_b2")));
    return tape.affine(x, vars.get("pos_w3"), vars.get("pos_b3"));
}

template <typename T>
struct ForwardResult {
    MapFrame frame;
    ad::Var map_rows = -1;          // {n, cells}; row i is keypoint i's map
    ad::Var padded_target = -1;     // {cells, channels} after attention
    ad::Var keypoint_descs = -1;    // {n, channels}
};

/// Full pipeline: siamese features, lambda padding, positional encodings,
/// source-descriptor sampling, source cross-attention, self-attention on the
/// padded target (keys/values max-pooled, stride 2), k target
/// cross-attention layers, then a per-keypoint correlation head with a
/// joint 2D softmax.
template <typename T>
ForwardResult<T> net_forward(ad::Tape<T>& tape, const NetVars<T>& vars, const NetConfig& config,
                             const Grid<double>& image_s, const Grid<double>& image_t,
                             const std::vector<Vec2>& keypoints) {
    const int d = config.channels;
    ad::Var img_s = tape.input(image_tensor<T>(image_s));
    ad::Var img_t = tape.input(image_tensor<T>(image_t));
    ad::Var feat_s = net_extract_features(tape, vars, config, img_s);
    ad::Var feat_t = net_extract_features(tape, vars, config, img_t);

    int sgh = tape.value(feat_s).dim(0), sgw = tape.value(feat_s).dim(1);
    MapFrame frame = MapFrame::for_dims(image_t.width, image_t.height, config.stride, config.gamma);

    ad::Var padded = tape.pad_with_vector(feat_t, vars.get("lambda"), frame.pad_x, frame.pad_y);

    // Positional encodings on both maps; the source uses its own unpadded frame.
    ad::Var pe_s = positional_encoding(tape, vars, sgw, sgh, 0, 0);
    ad::Var pe_t = positional_encoding(tape, vars, frame.map_w - 2 * frame.pad_x,
                                       frame.map_h - 2 * frame.pad_y, frame.pad_x, frame.pad_y);
    ad::Var src_flat = tape.add(tape.reshape(feat_s, {sgh * sgw, d}), pe_s);
    ad::Var src_grid = tape.reshape(src_flat, {sgh, sgw, d});
    ad::Var tgt_flat = tape.add(tape.reshape(padded, {frame.map_h * frame.map_w, d}), pe_t);
    ad::Var tgt_grid = tape.reshape(tgt_flat, {frame.map_h, frame.map_w, d});

    // Source descriptors sampled at p / stride in source grid coordinates.
    std::vector<Vec2> grid_pts;
    grid_pts.reserve(keypoints.size());
    for (const Vec2& p : keypoints) grid_pts.emplace_back(p.x() / config.stride, p.y() / config.stride);
    ad::Var descs = tape.bilinear_sample_rows(src_grid, grid_pts);

    descs = attention_block(tape, vars, "cross_s", config.heads, descs, src_flat);

    // Self-attention over the padded target; keys/values are max-pooled.
    ad::Var tgt_pooled = tape.max_pool2(tgt_grid);
    int ph = tape.value(tgt_pooled).dim(0), pw = tape.value(tgt_pooled).dim(1);
    ad::Var tgt_kv = tape.reshape(tgt_pooled, {ph * pw, d});
    ad::Var target = attention_block(tape, vars, "self_t", config.heads, tgt_flat, tgt_kv);

    for (int l = 0; l < config.cross_layers; ++l)
        descs = attention_block(tape, vars, "cross_t" + std::to_string(l), config.heads, descs,
                                target);

    // Correlation head: dot of each keypoint descriptor against every cell,
    // scaled by 1/sqrt(d), then a joint softmax over each keypoint's map.
    ad::Var logits = tape.scale(tape.matmul_nt(descs, target),
                                static_cast<T>(1.0 / std::sqrt(double(d))));
    ForwardResult<T> result;
    result.frame = frame;
    result.padded_target = target;
    result.keypoint_descs = descs;
    result.map_rows = tape.softmax_rows(logits);
    return result;
}

/// Inference helper: runs the f32 forward pass and materializes maps.
std::vector<CorrespondenceMap> infer_maps(const NetParams& params, const Grid<double>& image_s,
                                          const Grid<double>& image_t,
                                          const std::vector<Vec2>& keypoints);

// Checkpoint format: "CHCK", u32 version, u32 tensor count, then per tensor
// u32 name length, name bytes, u32 rank, u32 dims, little-endian f32 payload.
// Configuration scalars travel as config/... tensors. Loading rejects
// unknown, missing, or misshapen tensors.
void save_checkpoint(const std::string& path, const NetParams& params);
NetParams load_checkpoint(const std::string& path);

}  // namespace corrhal
