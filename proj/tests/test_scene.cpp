#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <set>

#include "mcactrl/errors.hpp"
#include "mcactrl/mask/segment.hpp"
#include "mcactrl/scene/scene.hpp"

using namespace mcactrl;

namespace {

bool within(Rgb a, Rgb b, int tol) {
    for (int c = 0; c < 3; ++c) {
        if (std::abs(int(a[c]) - int(b[c])) > tol) return false;
    }
    return true;
}

SceneSpec single(ObjectShape shape, int cx, int cy, int scale, int color = 3) {
    SceneSpec s;
    s.background = {BackgroundKind::Solid, 0, 0};
    s.objects.push_back({shape, color, Texture::Plain, cx, cy, scale});
    return s;
}

}  // namespace

TEST_SUITE("scene") {

TEST_CASE("palette") {
    CHECK(palette_rgb(3) == Rgb{210, 40, 40});
    CHECK(palette_name(5) == "blue");
    CHECK(palette_index("cyan") == 6);
    CHECK(palette_index("purple") == -1);
    CHECK(palette_distance(1, 4) == 3);
    CHECK(muted_rgb(0) == Rgb{195, 195, 195});
    CHECK(shade_rgb(Rgb{100, 200, 10}) == Rgb{70, 140, 7});
}

TEST_CASE("rasterised areas match exact pixel counts") {
    CHECK(render_scene(single(ObjectShape::Circle, 16, 16, 8)).masks[0].count() == 208);
    CHECK(render_scene(single(ObjectShape::Circle, 10, 12, 5)).masks[0].count() == 80);
    CHECK(render_scene(single(ObjectShape::Triangle, 16, 16, 6)).masks[0].count() == 72);
    CHECK(render_scene(single(ObjectShape::Square, 16, 16, 6)).masks[0].count() == 144);
    CHECK_THROWS_AS(render_scene(single(ObjectShape::Square, 40, 16, 6)), std::invalid_argument);
}

TEST_CASE("occluded pixels belong to the front object") {
    SceneSpec s = single(ObjectShape::Square, 12, 16, 6);
    s.objects.push_back({ObjectShape::Circle, 5, Texture::Plain, 18, 16, 5});
    const RenderedScene r = render_scene(s);
    CHECK(r.masks[1].count() == 80);
    CHECK(r.masks[0].count() < 144);
    for (size_t i = 0; i < r.masks[0].bits.size(); ++i) CHECK_FALSE((r.masks[0].bits[i] && r.masks[1].bits[i]));
}

TEST_CASE("backgrounds never pass for object colors") {
    for (const SceneSpec& spec : sample_training_specs(200, 7)) {
        const RenderedScene r = render_scene(spec);
        BinaryMask objects(32, 32);
        for (const auto& m : r.masks) objects = mask_union(objects, m);
        for (int y = 0; y < 32; ++y) {
            for (int x = 0; x < 32; ++x) {
                if (objects.at(x, y)) continue;
                for (int c = 0; c < kPaletteSize; ++c) {
                    CHECK_FALSE(within(r.image.at(x, y), palette_rgb(c), 12));
                    CHECK_FALSE(within(r.image.at(x, y), shade_rgb(palette_rgb(c)), 12));
                }
            }
        }
    }
}

TEST_CASE("captions encode with the vocabulary") {
    SceneSpec s = single(ObjectShape::Circle, 10, 10, 5);
    s.objects[0].texture = Texture::Striped;
    s.objects.push_back({ObjectShape::Square, 5, Texture::Plain, 22, 22, 5});
    CHECK(scene_caption(s) == "striped red circle and blue square on white");
    for (const SceneSpec& spec : sample_training_specs(50, 3)) {
        CHECK_NOTHROW(Vocabulary::instance().encode(scene_caption(spec)));
    }
}

TEST_CASE("training data is deterministic per seed") {
    const auto a = make_training_dataset(8, 5), b = make_training_dataset(8, 5), c = make_training_dataset(8, 6);
    REQUIRE(a.size() == 8);
    CHECK(a[3].image.data == b[3].image.data);
    CHECK(a[3].image.shape == Shape{3, 32, 32});
    bool differs = false;
    for (size_t i = 0; i < 8; ++i) differs = differs || a[i].image.data != c[i].image.data;
    CHECK(differs);
}

TEST_CASE("segmentation recovers benchmark objects") {
    BenchmarkConfig cfg;
    cfg.subjects = 3;
    for (const BenchmarkCase& bc : make_benchmark(cfg)) {
        const CaseImages img = render_case(bc);
        CHECK(segment_synthetic(img.subject, bc.subject_query) == img.subject_mask);
        if (bc.task == TaskKind::Swapping) {
            const BinaryMask got = segment_synthetic(img.condition, bc.edit_query);
            CHECK(mask_contains(got, img.edit_mask));
        }
    }
    const RgbImage blank = render_scene(SceneSpec{}).image;
    CHECK_THROWS_AS(segment_synthetic(blank, ObjectQuery::parse("red circle")), NotFoundError);
}

TEST_CASE("shape classifier") {
    CHECK(classify_region(render_scene(single(ObjectShape::Circle, 16, 16, 6)).masks[0]) == ObjectShape::Circle);
    CHECK(classify_region(render_scene(single(ObjectShape::Square, 16, 16, 6)).masks[0]) == ObjectShape::Square);
    CHECK(classify_region(render_scene(single(ObjectShape::Triangle, 16, 16, 6)).masks[0]) == ObjectShape::Triangle);
    CHECK_FALSE(classify_region(BinaryMask(8, 8)));
}

TEST_CASE("benchmark layout") {
    BenchmarkConfig cfg;
    cfg.subjects = 2;
    cfg.conditions_per_subject = 10;
    cfg.prompts_per_subject = 5;
    const auto cases = make_benchmark(cfg);
    CHECK(cases.size() == 2 * (10 + 10 + 5));
    std::set<std::string> ids;
    int clean_swaps = 0;
    for (const auto& c : cases) {
        ids.insert(c.id);
        if (c.task == TaskKind::Swapping && c.variant == SceneVariant::Clean) ++clean_swaps;
    }
    CHECK(ids.size() == cases.size());
    CHECK(clean_swaps == 12);
    CHECK(make_benchmark(cfg)[7].prompt == cases[7].prompt);
}

TEST_CASE("benchmark files round trip through the manifest") {
    const auto dir = std::filesystem::temp_directory_path() / "mcactrl_test_bench";
    std::filesystem::remove_all(dir);
    BenchmarkConfig cfg;
    cfg.subjects = 1;
    cfg.conditions_per_subject = 2;
    cfg.prompts_per_subject = 1;
    const auto cases = make_benchmark(cfg);
    write_benchmark(dir, cases);
    const auto entries = read_manifest(dir / "manifest.tsv");
    REQUIRE(entries.size() == cases.size());
    for (const auto& e : entries) {
        CHECK(std::filesystem::exists(dir / e.subject_image));
        if (e.task != TaskKind::Generation) CHECK(std::filesystem::exists(dir / e.condition_image));
    }
    write_manifest(dir / "copy.tsv", entries);
    const auto again = read_manifest(dir / "copy.tsv");
    CHECK(again.size() == entries.size());
    CHECK(again[0].prompt == entries[0].prompt);
    CHECK(again.back().schedule_overrides == entries.back().schedule_overrides);
    CHECK_THROWS_AS(parse_task("dance"), std::exception);
}

}  // TEST_SUITE
