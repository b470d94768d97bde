#include <doctest.h>

#include "mcactrl/control/schedule.hpp"
#include "mcactrl/errors.hpp"

using namespace mcactrl;

TEST_SUITE("schedule") {

TEST_CASE("presets") {
    const auto swap = schedule_preset("swap-uniform");
    REQUIRE(swap);
    CHECK(*swap == ControlSchedule{0, 20, 20, 48, 0, 8, 50});
    const auto gen = schedule_preset("gen-uniform");
    REQUIRE(gen);
    CHECK(*gen == ControlSchedule{0, 35, 35, 48, 0, 0, 50});
    CHECK_FALSE(schedule_preset("nope"));
}

TEST_CASE("dispatch boundaries: windows half-open, layer thresholds inclusive") {
    const ControlSchedule s{0, 20, 20, 48, 0, 8, 50};
    CHECK(edit_dispatch(0, 0, s) == EditDecision::GlobalInject);
    CHECK(edit_dispatch(19, 15, s) == EditDecision::GlobalInject);
    CHECK(edit_dispatch(20, 8, s) == EditDecision::LocalQuery);
    CHECK(edit_dispatch(20, 7, s) == EditDecision::Standard);
    CHECK(edit_dispatch(47, 15, s) == EditDecision::LocalQuery);
    CHECK(edit_dispatch(48, 15, s) == EditDecision::Standard);
    const ControlSchedule g{0, 20, 20, 48, 4, 8, 50};
    CHECK(edit_dispatch(5, 3, g) == EditDecision::Standard);
    CHECK(edit_dispatch(5, 4, g) == EditDecision::GlobalInject);
    CHECK(std::string(decision_name(EditDecision::LocalQuery)) == "local-query");
}

TEST_CASE("layer mapping onto the 16-layer scale") {
    CHECK(schedule_layer(0, 8) == 0);
    CHECK(schedule_layer(4, 8) == 8);
    CHECK(schedule_layer(7, 8) == 14);
    CHECK(schedule_layer(15, 16) == 15);
}

TEST_CASE("validation reports each violated clause") {
    CHECK(validate_schedule({0, 20, 20, 48, 0, 8, 50}).empty());
    CHECK(validate_schedule({0, 0, 0, 0, 0, 0, 50}).empty());
    const auto gap = validate_schedule({0, 20, 25, 48, 0, 8, 50});
    CHECK(gap.size() == 1);
    CHECK(gap[0] == "e_gi = s_lq");
    CHECK_FALSE(validate_schedule({5, 2, 2, 48, 0, 8, 50}).empty());
    CHECK_FALSE(validate_schedule({0, 20, 20, 60, 0, 8, 50}).empty());
    CHECK_FALSE(validate_schedule({0, 20, 20, 48, 0, 17, 50}).empty());
    const ControlSchedule reversed{20, 48, 0, 20, 0, 8, 50};
    CHECK_FALSE(validate_schedule(reversed).empty());
    CHECK(validate_schedule(reversed, {true}).empty());
}

TEST_CASE("rescaling and text round trip") {
    const ControlSchedule s{0, 20, 20, 48, 0, 8, 50};
    CHECK(rescale_schedule(s, 50) == s);
    const ControlSchedule r = rescale_schedule(s, 25);
    CHECK(r == ControlSchedule{0, 10, 10, 24, 0, 8, 25});
    CHECK(parse_schedule(format_schedule(s)) == s);
    CHECK_THROWS_AS(parse_schedule("s_gi=0\n"), ConfigError);
}

TEST_CASE("overrides") {
    const ControlSchedule s{0, 20, 20, 48, 0, 8, 50};
    CHECK(apply_schedule_overrides(s, "-") == s);
    const ControlSchedule o = apply_schedule_overrides(s, "e_gi=30,s_lq=30");
    CHECK(o.e_gi == 30);
    CHECK(o.s_lq == 30);
    CHECK_THROWS_AS(apply_schedule_overrides(s, "bogus=1"), ConfigError);
    CHECK_THROWS_AS(apply_schedule_overrides(s, "e_gi=x"), ConfigError);
}

}  // TEST_SUITE
