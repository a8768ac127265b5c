#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "corrhal/net.hpp"
#include "corrhal/train.hpp"
#include "support/test_support.hpp"

using namespace corrhal;
using ad::Shape;
using ad::Tape;
using ad::TensorData;
using ad::Var;

namespace {

Grid<double> random_image(int w, int h, Rng& rng) {
    Grid<double> img(w, h);
    for (double& v : img.data) v = rng.uniform();
    return img;
}

}  // namespace

TEST_CASE("extract_features shape contract and siamese weight sharing") {
    NetConfig config;
    NetParams params = init_params(config, 1);
    Rng rng(2);
    Grid<double> image = random_image(64, 48, rng);

    Tape<float> tape;
    NetVars<float> vars = register_params(tape, params);
    Var img = tape.input(image_tensor<float>(image));
    Var feat = net_extract_features(tape, vars, config, img);
    CHECK(tape.value(feat).shape == Shape{12, 16, 32});

    Var img2 = tape.input(image_tensor<float>(image));
    Var feat2 = net_extract_features(tape, vars, config, img2);
    CHECK(tape.value(feat).v == tape.value(feat2).v);  // same weights, same grid

    Grid<double> odd(30, 20);
    Var bad = tape.input(image_tensor<float>(odd));
    CHECK_THROWS_AS(net_extract_features(tape, vars, config, bad), Error);
}

TEST_CASE("constant-zero image produces a spatially constant grid") {
    NetConfig config;
    NetParams params = init_params(config, 3);
    Grid<double> zeros(32, 16, 0.0);
    Tape<float> tape;
    NetVars<float> vars = register_params(tape, params);
    Var feat = net_extract_features(tape, vars, config, tape.input(image_tensor<float>(zeros)));
    const auto& v = tape.value(feat);
    int gh = v.dim(0), gw = v.dim(1), c = v.dim(2);
    // Interior cells (away from zero-padding borders) share one descriptor.
    for (int ch = 0; ch < c; ++ch) {
        float reference = v.v[(1 * static_cast<size_t>(gw) + 1) * c + static_cast<size_t>(ch)];
        for (int y = 1; y + 1 < gh; ++y)
            for (int x = 1; x + 1 < gw; ++x)
                CHECK(v.v[(static_cast<size_t>(y) * gw + x) * c + static_cast<size_t>(ch)] ==
                      reference);
    }
}

TEST_CASE("pad_with_vector: gamma=0 is identity, padded ring equals lambda bit-exactly") {
    NetConfig config;
    NetParams params = init_params(config, 4);
    Rng rng(5);
    Grid<double> image = random_image(64, 48, rng);

    Tape<float> tape;
    NetVars<float> vars = register_params(tape, params);
    Var feat = net_extract_features(tape, vars, config, tape.input(image_tensor<float>(image)));

    Var same = tape.pad_with_vector(feat, vars.get("lambda"), 0, 0);
    CHECK(tape.value(same).v == tape.value(feat).v);

    MapFrame frame = MapFrame::for_dims(64, 48, config.stride, 0.5);
    CHECK(frame.map_w == 32);
    CHECK(frame.map_h == 24);
    Var padded = tape.pad_with_vector(feat, vars.get("lambda"), frame.pad_x, frame.pad_y);
    const auto& pv = tape.value(padded);
    const auto& lambda = tape.value(vars.get("lambda"));
    const auto& fv = tape.value(feat);
    int d = config.channels;
    long lambda_cells = 0;
    for (int y = 0; y < frame.map_h; ++y) {
        for (int x = 0; x < frame.map_w; ++x) {
            const float* cell = pv.v.data() + (static_cast<size_t>(y) * frame.map_w + x) * d;
            bool in_core = y >= frame.pad_y && y < frame.map_h - frame.pad_y &&
                           x >= frame.pad_x && x < frame.map_w - frame.pad_x;
            bool equals_lambda = std::equal(cell, cell + d, lambda.v.data());
            if (in_core) {
                const float* src = fv.v.data() +
                                   ((static_cast<size_t>(y - frame.pad_y)) * 16 + (x - frame.pad_x)) * d;
                CHECK(std::equal(cell, cell + d, src));
                CHECK_FALSE(equals_lambda);
            } else {
                CHECK(equals_lambda);
                ++lambda_cells;
            }
        }
    }
    CHECK(lambda_cells == frame.map_w * frame.map_h - 16 * 12);
}

TEST_CASE("positional encoding meshgrid conventions") {
    NetConfig config;
    NetParams params = init_params(config, 6);

    // Odd unpadded width: the middle cell sits exactly at (0, 0).
    Tape<double> tape;
    NetVars<double> vars = register_params(tape, params);
    int base_w = 15, base_h = 9;
    TensorData<double> mesh(Shape{base_h * base_w, 2});
    for (int y = 0; y < base_h; ++y)
        for (int x = 0; x < base_w; ++x) {
            mesh.v[(static_cast<size_t>(y) * base_w + x) * 2 + 0] = (2.0 * x + 1.0) / base_w - 1.0;
            mesh.v[(static_cast<size_t>(y) * base_w + x) * 2 + 1] = (2.0 * y + 1.0) / base_h - 1.0;
        }
    int center = (base_h / 2) * base_w + base_w / 2;
    CHECK(mesh.v[static_cast<size_t>(center) * 2 + 0] == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(mesh.v[static_cast<size_t>(center) * 2 + 1] == doctest::Approx(0.0).epsilon(1e-15));

    // Padded meshgrid: outermost padded cell magnitude is 2 - 1/n at gamma=0.5.
    int n = 16, pad = 8;
    double outermost = (2.0 * ((n + pad - 1)) + 1.0) / n - 1.0;  // cell index n+pad-1 (unpadded frame)
    CHECK(outermost == doctest::Approx(2.0 - 1.0 / n).epsilon(1e-12));

    // Encoding is deterministic given the frame.
    Var a = positional_encoding(tape, vars, 16, 12, 8, 6);
    Var b = positional_encoding(tape, vars, 16, 12, 8, 6);
    CHECK(tape.value(a).v == tape.value(b).v);
    CHECK(tape.value(a).shape == Shape{32 * 24, 32});
}

TEST_CASE("gated attention edge cases") {
    Tape<double> tape;
    Rng rng(9);

    SUBCASE("equal scores average the values for any gate") {
        Var q = tape.input(TensorData<double>(Shape{3, 4}, std::vector<double>(12, 0.0)));
        Var k = tape.input(ad::random_normal<double>({5, 4}, 1.0, rng));
        Var v = tape.input(ad::random_normal<double>({5, 4}, 1.0, rng));
        GatedAttention att = gated_attention(tape, q, k, v);
        const auto& kv = tape.value(v);
        const auto& out = tape.value(att.out);
        for (int col = 0; col < 4; ++col) {
            double mean = 0;
            for (int row = 0; row < 5; ++row) mean += kv.v[static_cast<size_t>(row) * 4 + col];
            mean /= 5;
            for (int row = 0; row < 3; ++row)
                CHECK(out.v[static_cast<size_t>(row) * 4 + col] ==
                      doctest::Approx(mean).epsilon(1e-12));
        }
        // Zero Q also zeroes the scores, so the gate is sigmoid(0) = 0.5.
        CHECK(tape.value(att.gate).v[0] == doctest::Approx(0.5).epsilon(1e-12));
    }

    SUBCASE("a single key returns its value row regardless of the gate") {
        Var q = tape.input(ad::random_normal<double>({2, 4}, 1.0, rng));
        Var k = tape.input(ad::random_normal<double>({1, 4}, 1.0, rng));
        Var v = tape.input(ad::random_normal<double>({1, 4}, 1.0, rng));
        GatedAttention att = gated_attention(tape, q, k, v);
        const auto& vv = tape.value(v);
        const auto& out = tape.value(att.out);
        for (int row = 0; row < 2; ++row)
            for (int col = 0; col < 4; ++col)
                CHECK(out.v[static_cast<size_t>(row) * 4 + col] ==
                      doctest::Approx(vv.v[static_cast<size_t>(col)]).epsilon(1e-12));
    }
}

TEST_CASE("forward contract: map count, normalization, dims") {
    NetConfig config;
    NetParams params = init_params(config, 11);
    Rng rng(13);
    Grid<double> img_s = random_image(64, 48, rng);
    Grid<double> img_t = random_image(64, 48, rng);
    std::vector<Vec2> kps = {{10.5, 12.5}, {33.5, 20.5}, {50.5, 40.5}};

    std::vector<CorrespondenceMap> maps = infer_maps(params, img_s, img_t, kps);
    REQUIRE(maps.size() == kps.size());
    MapFrame expected = MapFrame::for_dims(64, 48, 4, 0.5);
    for (const CorrespondenceMap& map : maps) {
        CHECK(map.frame() == expected);
        double sum = 0;
        for (double v : map.values().data) sum += v;
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("untrained maps stay near the uniform entropy") {
    NetConfig config;
    Rng rng(17);
    Grid<double> img_s = random_image(64, 48, rng);
    Grid<double> img_t = random_image(64, 48, rng);
    std::vector<Vec2> kps = {{14.5, 10.5}, {40.5, 30.5}};

    MapFrame frame = MapFrame::for_dims(64, 48, 4, 0.5);
    double ln_omega = uniform_nre(frame);
    double mean_entropy = 0;
    int count = 0;
    for (uint64_t seed = 0; seed < 10; ++seed) {
        NetParams params = init_params(config, seed);
        for (const CorrespondenceMap& map : infer_maps(params, img_s, img_t, kps)) {
            double entropy = 0;
            for (double v : map.values().data)
                if (v > 0) entropy -= v * std::log(v);
            mean_entropy += entropy;
            ++count;
        }
    }
    mean_entropy /= count;
    CHECK(mean_entropy > 0.9 * ln_omega);
    CHECK(mean_entropy <= 1.0001 * ln_omega);
}

TEST_CASE("swapping source and target swaps the feature grids exactly") {
    NetConfig config;
    NetParams params = init_params(config, 19);
    Rng rng(23);
    Grid<double> a = random_image(64, 48, rng);
    Grid<double> b = random_image(64, 48, rng);

    Tape<float> tape;
    NetVars<float> vars = register_params(tape, params);
    Var fa = net_extract_features(tape, vars, config, tape.input(image_tensor<float>(a)));
    Var fb = net_extract_features(tape, vars, config, tape.input(image_tensor<float>(b)));
    Var fb2 = net_extract_features(tape, vars, config, tape.input(image_tensor<float>(b)));
    Var fa2 = net_extract_features(tape, vars, config, tape.input(image_tensor<float>(a)));
    CHECK(tape.value(fa).v == tape.value(fa2).v);
    CHECK(tape.value(fb).v == tape.value(fb2).v);
    CHECK(tape.value(fa).v != tape.value(fb).v);
}

TEST_CASE("kv max pooling changes values but not the output shape") {
    NetConfig config;
    NetParams params = init_params(config, 29);
    Rng rng(31);
    Tape<float> tape;
    NetVars<float> vars = register_params(tape, params);
    Var x = tape.input(ad::random_normal<float>({12, 16, 32}, 1.0, rng));
    Var x_flat = tape.reshape(x, {12 * 16, 32});
    Var pooled = tape.max_pool2(x);
    Var kv = tape.reshape(pooled, {6 * 8, 32});
    Var with_pool = attention_block(tape, vars, "self_t", config.heads, x_flat, kv);
    Var without_pool = attention_block(tape, vars, "self_t", config.heads, x_flat, x_flat);
    CHECK(tape.value(with_pool).shape == tape.value(without_pool).shape);
    CHECK(tape.value(with_pool).v != tape.value(without_pool).v);
}

TEST_CASE("end-to-end gradient check on a tiny pair in f64") {
    NetConfig config;
    config.gamma = 0.5;
    NetParams params = init_params(config, 37);
    Rng rng(41);
    Grid<double> img_s = random_image(16, 12, rng);
    Grid<double> img_t = random_image(16, 12, rng);
    std::vector<Vec2> kps = {{5.5, 4.5}, {11.5, 8.5}};
    // A fixed in-map supervision point per keypoint, off cell centers.
    std::vector<Vec2> targets = {{2.3, 1.7}, {4.6, 3.2}};

    std::vector<TensorData<double>> inputs;
    inputs.reserve(params.tensors.size());
    for (const NamedTensor& t : params.tensors) inputs.push_back(t.data.cast<double>());

    double err = ad::grad_check_multi(
        [&](Tape<double>& tape, const std::vector<Var>& vars_in) {
            NetVars<double> vars = net_vars_from<double>(params, vars_in);
            ForwardResult<double> fwd = net_forward(tape, vars, config, img_s, img_t, kps);
            Var logs = tape.clamp_log(fwd.map_rows, 1e-12);
            Var sampled =
                tape.bilinear_sample_own_rows(logs, fwd.frame.map_h, fwd.frame.map_w, targets);
            return tape.scale(tape.sum_all(sampled), -0.5);
        },
        inputs, 1e-5);  // thousands of relu units: a 1e-4 stencil would straddle kinks
    CHECK(err < 1e-4);
}

TEST_CASE("checkpoints round trip and reject unknown names") {
    namespace fs = std::filesystem;
    NetConfig config;
    NetParams params = init_params(config, 43);
    std::string path = (fs::temp_directory_path() / "corrhal_ckpt_test.bin").string();
    save_checkpoint(path, params);
    NetParams loaded = load_checkpoint(path);
    CHECK(loaded.config.gamma == params.config.gamma);
    CHECK(loaded.config.channels == params.config.channels);
    REQUIRE(loaded.tensors.size() == params.tensors.size());
    for (size_t i = 0; i < params.tensors.size(); ++i) {
        CHECK(loaded.tensors[i].name == params.tensors[i].name);
        CHECK(loaded.tensors[i].data.v == params.tensors[i].data.v);
    }

    // Corrupt: rename a tensor in place; the loader must reject it.
    NetParams renamed = params;
    renamed.tensors[0].name = "conv9_w";
    save_checkpoint(path, renamed);
    CHECK_THROWS_AS(load_checkpoint(path), Error);
    fs::remove(path);
}
