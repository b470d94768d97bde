#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "mcactrl/errors.hpp"
#include "mcactrl/mask/mask.hpp"

using namespace mcactrl;

namespace {

BinaryMask random_mask(std::mt19937& rng, int w, int h, double p) {
    BinaryMask m(w, h);
    std::bernoulli_distribution coin(p);
    for (auto& b : m.bits) b = coin(rng) ? 1 : 0;
    return m;
}

std::filesystem::path scratch() {
    auto d = std::filesystem::temp_directory_path() / "mcactrl_test_mask";
    std::filesystem::create_directories(d);
    return d;
}

}  // namespace

TEST_SUITE("mask") {

TEST_CASE("set algebra") {
    BinaryMask a(3, 2), b(3, 2);
    a.set(0, 0);
    b.set(2, 1);
    const BinaryMask u = mask_union(a, b);
    CHECK(u.count() == 2);
    CHECK(mask_contains(u, a));
    CHECK_FALSE(mask_contains(a, u));
    CHECK(mask_invert(u).count() == 4);
    CHECK_THROWS_AS(mask_union(a, BinaryMask(2, 3)), std::invalid_argument);
}

TEST_CASE("dilation of a single pixel is a clipped 3x3 block") {
    BinaryMask m(5, 5);
    m.set(2, 2);
    CHECK(dilate(m).count() == 9);
    CHECK(dilate(m, {2}).count() == 25);
    CHECK(dilate(m, {0}) == m);
    BinaryMask corner(5, 5);
    corner.set(0, 0);
    CHECK(dilate(corner).count() == 4);
}

TEST_CASE("dilation is extensive, monotone and distributes over union") {
    std::mt19937 rng(21);
    for (int i = 0; i < 100; ++i) {
        const BinaryMask a = random_mask(rng, 9, 7, 0.15), b = random_mask(rng, 9, 7, 0.15);
        CHECK(mask_contains(dilate(a), a));
        CHECK(dilate(mask_union(a, b)) == mask_union(dilate(a), dilate(b)));
        CHECK(mask_contains(dilate(mask_union(a, b)), dilate(a)));
        CHECK(dilate(dilate(a)) == dilate(a, {2}));
    }
}

TEST_CASE("max-pool downsampling keeps every set pixel") {
    BinaryMask m(32, 32);
    m.set(31, 0);
    const BinaryMask d = downsample_max(m, 8, 8);
    CHECK(d.count() == 1);
    CHECK(d.at(7, 0) == 1);
    std::mt19937 rng(22);
    for (int i = 0; i < 50; ++i) {
        const BinaryMask r = random_mask(rng, 12, 12, 0.05);
        const BinaryMask low = downsample_max(r, 5, 5);
        for (int y = 0; y < 12; ++y) {
            for (int x = 0; x < 12; ++x) {
                if (r.at(x, y)) CHECK(low.at(x * 5 / 12, y * 5 / 12) == 1);
            }
        }
        CHECK(downsample_max(r, 12, 12) == r);
    }
}

TEST_CASE("pyramid levels") {
    BinaryMask m(32, 32);
    m.set(5, 9);
    const std::vector<std::pair<int, int>> res{{32, 32}, {16, 16}, {8, 8}};
    const MaskPyramid p = build_pyramid(m, res);
    CHECK(p.size() == 3);
    CHECK(p.at({16, 16}).at(2, 4) == 1);
    CHECK(p.at({8, 8}).at(1, 2) == 1);
    const std::vector<std::pair<int, int>> too_big{{64, 64}};
    CHECK_THROWS_AS(build_pyramid(m, too_big), std::invalid_argument);
}

TEST_CASE("cross-attention mask extraction") {
    // One layer at 2x2, one head, context of 3 tokens; token 1 dominates the top-left cell.
    CrossAttentionMap map{Tensor({1, 1, 4, 3}, FloatBuffer{0.1f, 0.8f, 0.1f, 0.5f, 0.1f, 0.4f,
                                                                   0.5f, 0.2f, 0.3f, 0.6f, 0.1f, 0.3f}),
                          2, 2};
    const std::vector<CrossAttentionMap> maps{map};
    const BinaryMask m = extract_cross_attention_mask(maps, 0, 1, 2, 4, 4);
    CHECK(m.count() == 4);
    CHECK(m.at(0, 0) == 1);
    CHECK(m.at(1, 1) == 1);
    CHECK(m.at(2, 0) == 0);
    CHECK_THROWS_AS(extract_cross_attention_mask(maps, 0, 2, 2, 4, 4), std::invalid_argument);
    CrossAttentionMap flat{Tensor({1, 1, 4, 3}, 0.25f), 2, 2};
    const std::vector<CrossAttentionMap> flats{flat};
    CHECK(extract_cross_attention_mask(flats, 0, 0, 1, 4, 4).none());
}

TEST_CASE("mask and region files") {
    const auto dir = scratch();
    std::mt19937 rng(23);
    const BinaryMask m = random_mask(rng, 7, 5, 0.5);
    save_mask_png(dir / "m.png", m);
    CHECK(load_mask_png(dir / "m.png") == m);
    save_region(dir / "r.txt", 2, 3, 4, 5);
    const BinaryMask r = load_region(dir / "r.txt", 8, 8);
    CHECK(r == box_mask(8, 8, 2, 3, 4, 5));
    CHECK(r.count() == 9);
    std::ofstream(dir / "bad.txt") << "1 2 3\n";
    CHECK_THROWS(load_region(dir / "bad.txt", 8, 8));
    CHECK_THROWS(load_mask_png(dir / "missing.png"));
}

}  // TEST_SUITE
