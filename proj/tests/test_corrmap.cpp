#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "corrhal/corrmap.hpp"
#include "support/test_support.hpp"

using namespace corrhal;

namespace {

MapFrame frame_of(int w, int h, int stride = 4, int pad_x = 0, int pad_y = 0) {
    MapFrame frame;
    frame.stride = stride;
    frame.pad_x = pad_x;
    frame.pad_y = pad_y;
    frame.map_w = w;
    frame.map_h = h;
    return frame;
}

}  // namespace

TEST_CASE("normalize produces a uniform map from equal logits") {
    MapFrame frame = frame_of(16, 12);
    Grid<double> logits(16, 12, 3.7);
    CorrespondenceMap map = CorrespondenceMap::normalize(logits, frame);
    for (double v : map.values().data) CHECK(v == doctest::Approx(1.0 / 192).epsilon(1e-12));
}

TEST_CASE("normalize is shift invariant") {
    MapFrame frame = frame_of(8, 6);
    Rng rng(2);
    Grid<double> logits(8, 6);
    for (double& v : logits.data) v = rng.normal();
    Grid<double> shifted = logits;
    for (double& v : shifted.data) v += 11.25;
    CorrespondenceMap a = CorrespondenceMap::normalize(logits, frame);
    CorrespondenceMap b = CorrespondenceMap::normalize(shifted, frame);
    for (size_t i = 0; i < a.values().data.size(); ++i)
        CHECK(a.values().data[i] == doctest::Approx(b.values().data[i]).epsilon(1e-12));
}

TEST_CASE("normalize matches a hand softmax oracle") {
    MapFrame frame = frame_of(2, 1);
    Grid<double> logits(2, 1);
    logits.at(0, 0) = 0.0;
    logits.at(1, 0) = std::log(3.0);
    CorrespondenceMap map = CorrespondenceMap::normalize(logits, frame);
    CHECK(map.values().at(0, 0) == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(map.values().at(1, 0) == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("normalize rejects non-finite logits") {
    MapFrame frame = frame_of(2, 2);
    Grid<double> logits(2, 2, 0.0);
    logits.at(1, 1) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(CorrespondenceMap::normalize(logits, frame), Error);
    logits.at(1, 1) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(CorrespondenceMap::normalize(logits, frame), Error);
}

TEST_CASE("probabilities sum to one after construction") {
    Rng rng(9);
    MapFrame frame = frame_of(20, 15);
    for (int i = 0; i < 10; ++i) {
        CorrespondenceMap map = testing::random_map(frame, rng);
        double sum = 0;
        for (double v : map.values().data) {
            CHECK(v >= 0.0);
            sum += v;
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("uniform map NRE equals ln of the cell count everywhere") {
    MapFrame frame = frame_of(80, 60);
    CorrespondenceMap map = CorrespondenceMap::uniform(frame);
    CHECK(uniform_nre(frame) == doctest::Approx(std::log(4800.0)).epsilon(1e-15));
    CHECK(uniform_nre(frame) == doctest::Approx(8.4764).epsilon(1e-4));

    Rng rng(4);
    double reference = nre_at(map, {40.0, 30.0});
    CHECK(std::abs(reference - uniform_nre(frame)) < 1e-12);
    for (int i = 0; i < 200; ++i) {
        Vec2 q(rng.uniform(0.0, 80.0), rng.uniform(0.0, 60.0));
        CHECK(nre_at(map, q) == reference);  // lerp of equal corners is exact
    }
}

TEST_CASE("uniform_nre closed forms") {
    CHECK(uniform_nre(frame_of(160, 120)) == doctest::Approx(9.8627).epsilon(1e-4));
    CHECK(uniform_nre(frame_of(1, 1)) == 0.0);
}

TEST_CASE("delta map costs zero at its own center and cost_out outside") {
    MapFrame frame = frame_of(16, 12);
    CorrespondenceMap map = CorrespondenceMap::delta_at({7.5, 5.5}, frame);
    CHECK(nre_at(map, {7.5, 5.5}) == 0.0);
    CHECK(nre_at(map, {-1.0, 5.0}) == cost_out());
    CHECK(nre_at(map, {5.0, 12.5}) == cost_out());
}

TEST_CASE("bilinear-of-log midpoint matches the hand oracle") {
    // Two adjacent cells carry e^-2 and e^-4; halfway between their centers
    // the interpolated log is -3, so the NRE is 3.
    MapFrame frame = frame_of(4, 4);
    Grid<double> values(4, 4);
    double rest = (1.0 - std::exp(-2.0) - std::exp(-4.0)) / 14.0;
    for (double& v : values.data) v = rest;
    values.at(1, 2) = std::exp(-2.0);
    values.at(2, 2) = std::exp(-4.0);
    CorrespondenceMap map = CorrespondenceMap::from_probabilities(values, frame);
    CHECK(nre_at(map, {2.0, 2.5}) == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("nre is nonnegative in bounds on random maps") {
    Rng rng(21);
    MapFrame frame = frame_of(20, 14);
    for (int m = 0; m < 100; ++m) {
        CorrespondenceMap map = testing::random_map(frame, rng, 3.0);
        for (int i = 0; i < 20; ++i) {
            Vec2 q(rng.uniform(0.0, 20.0), rng.uniform(0.0, 14.0));
            CHECK(nre_at(map, q) >= 0.0);
        }
    }
}

TEST_CASE("nre at exact cell centers equals the negative log value") {
    Rng rng(33);
    MapFrame frame = frame_of(10, 8);
    CorrespondenceMap map = testing::random_map(frame, rng);
    for (int r = 0; r < 8; ++r)
        for (int c = 0; c < 10; ++c)
            CHECK(std::abs(nre_at(map, {c + 0.5, r + 0.5}) + std::log(map.values().at(c, r))) <
                  1e-12);
}

TEST_CASE("nre gradient matches central differences") {
    Rng rng(17);
    MapFrame frame = frame_of(16, 12);
    const double h = 1e-4;
    int checked = 0;
    for (int m = 0; m < 20; ++m) {
        CorrespondenceMap map = testing::random_map(frame, rng, 2.0);
        for (int i = 0; i < 40; ++i) {
            Vec2 q(rng.uniform(1.0, 15.0), rng.uniform(1.0, 11.0));
            // Stay away from cell-center kinks where bilinear is not smooth.
            double fx = q.x() - std::floor(q.x() - 0.5) - 0.5;
            double fy = q.y() - std::floor(q.y() - 0.5) - 0.5;
            if (fx < 0.05 || fx > 0.95 || fy < 0.05 || fy > 0.95) continue;
            NreSample s = nre_at_with_grad(map, q);
            double fd_x = (nre_at(map, {q.x() + h, q.y()}) - nre_at(map, {q.x() - h, q.y()})) / (2 * h);
            double fd_y = (nre_at(map, {q.x(), q.y() + h}) - nre_at(map, {q.x(), q.y() - h})) / (2 * h);
            CHECK(std::abs(s.dx - fd_x) / std::max({std::abs(s.dx), std::abs(fd_x), 1e-6}) < 1e-4);
            CHECK(std::abs(s.dy - fd_y) / std::max({std::abs(s.dy), std::abs(fd_y), 1e-6}) < 1e-4);
            ++checked;
        }
    }
    CHECK(checked > 400);
}

TEST_CASE("clamped hull queries have zero gradient in the clamped direction") {
    Rng rng(8);
    MapFrame frame = frame_of(12, 9);
    CorrespondenceMap map = testing::random_map(frame, rng);
    NreSample s = nre_at_with_grad(map, {0.1, 4.0});  // left of the first centers
    CHECK(s.dx == 0.0);
    NreSample t = nre_at_with_grad(map, {6.0, 8.9});  // below the last centers
    CHECK(t.dy == 0.0);
}

TEST_CASE("argmax examples") {
    MapFrame frame = frame_of(16, 12, 4, 0, 0);
    SUBCASE("delta at cell (row 5, col 7) lands at the cell-center pixel") {
        Grid<double> values(16, 12, 0.0);
        values.at(7, 5) = 1.0;
        CorrespondenceMap map = CorrespondenceMap::from_probabilities(values, frame);
        ArgmaxResult peak = argmax_to_image(map);
        CHECK(peak.pixel.x() == doctest::Approx(7 * 4 + 2));
        CHECK(peak.pixel.y() == doctest::Approx(5 * 4 + 2));
        CHECK(peak.peak_probability == doctest::Approx(1.0));
    }
    SUBCASE("uniform map ties break to cell (0,0)") {
        CorrespondenceMap map = CorrespondenceMap::uniform(frame);
        ArgmaxResult peak = argmax_to_image(map);
        CHECK(peak.pixel.x() == doctest::Approx(2.0));
        CHECK(peak.pixel.y() == doctest::Approx(2.0));
    }
    SUBCASE("two equal maxima pick the smaller row-major index") {
        Grid<double> values(16, 12, 0.0);
        values.at(3, 0) = 0.5;  // row 0, col 3 -> row-major index 3
        values.at(1, 2) = 0.5;  // row 2, col 1 -> row-major index 33
        CorrespondenceMap map = CorrespondenceMap::from_probabilities(values, frame);
        ArgmaxResult peak = argmax_to_image(map);
        CHECK(peak.pixel.x() == doctest::Approx(3 * 4 + 2));
        CHECK(peak.pixel.y() == doctest::Approx(2.0));
    }
}

TEST_CASE("map round trips through the binary format") {
    Rng rng(12);
    MapFrame frame = frame_of(10, 7, 4, 2, 1);
    CorrespondenceMap map = testing::random_map(frame, rng);
    std::string path = (std::filesystem::temp_directory_path() / "corrhal_map_test.chm").string();
    map.save(path);
    CorrespondenceMap loaded = CorrespondenceMap::load(path);
    CHECK(loaded.frame() == map.frame());
    double sum = 0;
    for (size_t i = 0; i < loaded.values().data.size(); ++i) {
        CHECK(loaded.values().data[i] == doctest::Approx(map.values().data[i]).epsilon(1e-5));
        sum += loaded.values().data[i];
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    std::filesystem::remove(path);
}
