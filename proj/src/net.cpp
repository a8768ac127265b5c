#include "corrhal/net.hpp"

namespace corrhal {

void NetConfig::validate() const {
    if (stride != 4) raise(ErrorCode::InvalidConfig, "backbone stride must be 4");
    if (channels < 1 || heads < 1 || channels % heads != 0)
        raise(ErrorCode::InvalidConfig, "channels must be a positive multiple of heads");
    if (cross_layers < 1) raise(ErrorCode::InvalidConfig, "need at least one cross layer");
    if (gamma < 0) raise(ErrorCode::InvalidConfig, "gamma must be nonnegative");
}

const ad::TensorData<float>& NetParams::get(const std::string& name) const {
    for (const NamedTensor& t : tensors)
        if (t.name == name) return t.data;
    raise(ErrorCode::ShapeMismatch, "unknown parameter tensor: " + name);
}

ad::TensorData<float>& NetParams::get(const std::string& name) {
    for (NamedTensor& t : tensors)
        if (t.name == name) return t.data;
    raise(ErrorCode::ShapeMismatch, "unknown parameter tensor: " + name);
}

std::vector<std::pair<std::string, ad::Shape>> tensor_inventory(const NetConfig& config) {
    config.validate();
    const int d = config.channels;
    const int dh = config.head_dim();
    std::vector<std::pair<std::string, ad::Shape>> inv;
    inv.emplace_back("conv1_w", ad::Shape{9 * 1, 16});
    inv.emplace_back("conv1_b", ad::Shape{16});
    inv.emplace_back("conv2_w", ad::Shape{9 * 16, d});
    inv.emplace_back("conv2_b", ad::Shape{d});
    inv.emplace_back("compress_w", ad::Shape{d, d});
    inv.emplace_back("compress_b", ad::Shape{d});
    inv.emplace_back("lambda", ad::Shape{d});
    inv.emplace_back("pos_w1", ad::Shape{2, 8});
    inv.emplace_back("pos_b1", ad::Shape{8});
    inv.emplace_back("pos_w2", ad::Shape{8, 16});
    inv.emplace_back("pos_b2", ad::Shape{16});
    inv.emplace_back("pos_w3", ad::Shape{16, d});
    inv.emplace_back("pos_b3", ad::Shape{d});
    std::vector<std::string> blocks = {"cross_s", "self_t"};
    for (int l = 0; l < config.cross_layers; ++l) blocks.push_back("cross_t" + std::to_string(l));
    for (const std::string& block : blocks) {
        for (int h = 0; h < config.heads; ++h) {
            std::string base = block + ".h" + std::to_string(h) + ".";
            inv.emplace_back(base + "wq", ad::Shape{d, dh});
            inv.emplace_back(base + "wk", ad::Shape{d, dh});
            inv.emplace_back(base + "wv", ad::Shape{d, dh});
            inv.emplace_back(base + "wo", ad::Shape{dh, d});
        }
    }
    return inv;
}

NetParams init_params(const NetConfig& config, uint64_t seed) {
    NetParams params;
    params.config = config;
    Rng rng(hash_u64(seed ^ 0x3c6ef372fe94f82bULL));
    const double d = config.channels;
    const double dh = config.head_dim();
    for (auto& [name, shape] : tensor_inventory(config)) {
        double std_dev;
        if (name.ends_with("_b")) {
            std_dev = 0.0;
        } else if (name == "lambda") {
            std_dev = 0.3;
        } else if (name.ends_with(".wo")) {
            // Small output projections keep each residual block a
            // perturbation, so untrained maps stay near uniform.
            std_dev = 0.25 * std::sqrt(1.0 / dh);
        } else if (name.ends_with(".wq") || name.ends_with(".wk") || name.ends_with(".wv")) {
            std_dev = std::sqrt(1.0 / d);
        } else if (name == "compress_w" || name == "pos_w3") {
            std_dev = 0.5 * std::sqrt(1.0 / shape[0]);
        } else if (shape.size() == 2) {
            std_dev = std::sqrt(2.0 / shape[0]);  // fan-in
        } else {
            std_dev = 0.1;
        }
        ad::TensorData<float> tensor = ad::random_normal<float>(shape, std_dev, rng);
        if (name == "conv1_w" || name == "conv2_w" || name == "compress_w") {
            // Zero-mean columns: constant image regions produce no response,
            // so untrained content and padding cells score alike.
            int rows = shape[0], cols = shape[1];
            for (int c = 0; c < cols; ++c) {
                float mean = 0;
                for (int r = 0; r < rows; ++r) mean += tensor.v[static_cast<size_t>(r) * cols + c];
                mean /= static_cast<float>(rows);
                for (int r = 0; r < rows; ++r) tensor.v[static_cast<size_t>(r) * cols + c] -= mean;
            }
        }
        params.tensors.push_back({name, std::move(tensor)});
    }
    return params;
}

std::vector<CorrespondenceMap> infer_maps(const NetParams& params, const Grid<double>& image_s,
                                          const Grid<double>& image_t,
                                          const std::vector<Vec2>& keypoints) {
    ad::Tape<float> tape;
    NetVars<float> vars = register_params(tape, params);
    ForwardResult<float> fwd = net_forward(tape, vars, params.config, image_s, image_t, keypoints);
    const auto& rows = tape.value(fwd.map_rows);
    size_t cells = static_cast<size_t>(fwd.frame.cell_count());
    std::vector<CorrespondenceMap> maps;
    maps.reserve(keypoints.size());
    for (size_t n = 0; n < keypoints.size(); ++n) {
        Grid<double> grid(fwd.frame.map_w, fwd.frame.map_h);
        for (size_t i = 0; i < cells; ++i)
            grid.data[i] = static_cast<double>(rows.v[n * cells + i]);
        maps.push_back(CorrespondenceMap::from_probabilities(std::move(grid), fwd.frame));
    }
    return maps;
}

}  // namespace corrhal
