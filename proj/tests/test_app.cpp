#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "mcactrl/app/benchmark.hpp"
#include "mcactrl/app/metrics.hpp"
#include "mcactrl/core/io.hpp"
#include "mcactrl/errors.hpp"

using namespace mcactrl;

namespace {

std::filesystem::path scratch(const char* name) {
    auto d = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(d);
    std::filesystem::create_directories(d);
    return d;
}

int count_lines(const std::string& s) {
    int n = 0;
    for (char c : s) n += c == '\n';
    return n;
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(MCACTRL_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

DenoiserConfig narrow_config() {
    DenoiserConfig c;
    c.base_channels = 8;
    c.mid_channels = 8;
    c.low_channels = 8;
    c.lift_channels = 8;
    c.head_dim = 4;
    c.context_dim = 8;
    c.time_dim = 8;
    c.groups = 2;
    return c;
}

}  // namespace

TEST_SUITE("app") {

TEST_CASE("histogram distance") {
    RgbImage a(4, 4, {250, 0, 0}), b(4, 4, {0, 0, 250});
    const BinaryMask all(4, 4, 1), none(4, 4);
    CHECK(fg_hist_dist(a, all, a, all) == 0.0);
    CHECK(fg_hist_dist(a, all, b, all) == doctest::Approx(2.0));
    BinaryMask half(4, 4);
    for (int x = 0; x < 4; ++x) {
        half.set(x, 0);
        half.set(x, 1);
    }
    RgbImage mixed = a;
    for (int x = 0; x < 4; ++x) mixed.set(x, 3, {0, 0, 250});
    CHECK(fg_hist_dist(mixed, all, a, all) == doctest::Approx(0.5));
    CHECK(color_histogram(a, none)[0] == 0.0);
    // Bin boundaries fall at multiples of 64.
    const ColorHistogram h = color_histogram(RgbImage(1, 1, {63, 64, 255}), BinaryMask(1, 1, 1));
    CHECK(h[0 * 16 + 1 * 4 + 3] == 1.0);
}

TEST_CASE("background error ignores the editable region") {
    RgbImage a(2, 1, {0, 0, 0}), b(2, 1, {0, 0, 0});
    b.set(1, 0, {255, 255, 255});
    BinaryMask m(2, 1);
    CHECK(bg_mse(a, b, m) == doctest::Approx(0.5));
    m.set(1, 0);
    CHECK(bg_mse(a, b, m) == 0.0);
    CHECK(bg_mse(a, b, BinaryMask(2, 1, 1)) == 0.0);
    CHECK(mean_abs_error(a, b) == doctest::Approx(0.5));
}

TEST_CASE("task config parsing") {
    const std::string text =
        "# swap job\n"
        "task=swapping\n"
        "subject_image=subj.png\n"
        "subject_query=red circle\n"
        "subject_prompt=red circle on white\n"
        "condition_image=cond.png\n"
        "edit_query=blue square\n"
        "prompt=blue square on green\n"
        "steps=25\n"
        "e_gi=12\n"
        "s_lq=12\n"
        "e_lq=24\n"
        "out=run\n";
    const TaskRequest r = parse_task_request(text, "/data");
    CHECK(r.subject_image == "/data/subj.png");
    CHECK(r.output_dir == "/data/run");
    REQUIRE(r.schedule);
    CHECK(r.schedule->total_steps == 25);
    CHECK(r.resolved_schedule().e_gi == 12);
    CHECK_NOTHROW(r.validate());
    const TaskRequest again = parse_task_request(format_task_request(r));
    CHECK(again.resolved_schedule() == r.resolved_schedule());
    CHECK(again.prompt == r.prompt);

    CHECK_THROWS_WITH_AS(parse_task_request("foo=1\n"), "unknown key 'foo'", ConfigError);
    CHECK_THROWS_AS(parse_task_request("steps=2\nsteps=3\n"), ConfigError);
    CHECK_THROWS_AS(parse_task_request("steps=abc\n"), ConfigError);
    CHECK_THROWS_AS(parse_task_request("schedule_preset=swap-uniform\ne_gi=3\n"), ConfigError);
    CHECK_THROWS_AS(parse_task_request("task=generation\n").validate(), ConfigError);
}

TEST_CASE("default presets follow the task and rescale with the step count") {
    TaskRequest r;
    r.task = TaskKind::Generation;
    CHECK(r.resolved_schedule() == *schedule_preset("gen-uniform"));
    r.task = TaskKind::Swapping;
    r.sampler.steps = 25;
    CHECK(r.resolved_schedule().e_gi == 10);
}

TEST_CASE("sweep grid expansion") {
    SweepGrid g;
    g.e_gi = {0, 20, 60};
    const auto pts = expand_grid(g, false);
    REQUIRE(pts.size() == 3);
    CHECK(pts[0].second.empty());
    CHECK(pts[1].second.empty());
    CHECK_FALSE(pts[2].second.empty());
    CHECK(pts[1].first.schedule.s_lq == 20);
    g.e_gi = {20};
    g.include_reverse = true;
    const auto rev = expand_grid(g, false);
    REQUIRE(rev.size() == 2);
    CHECK_FALSE(rev[1].second.empty());
    const auto allowed = expand_grid(g, true);
    CHECK(allowed[1].second.empty());
    CHECK(allowed[1].first.reversed);
}

TEST_CASE("evaluation CSV covers every case, missing ones included") {
    const auto dir = scratch("mcactrl_test_eval");
    BenchmarkConfig cfg;
    cfg.subjects = 1;
    cfg.conditions_per_subject = 2;
    cfg.prompts_per_subject = 1;
    write_benchmark(dir / "bench", make_benchmark(cfg));
    const auto entries = read_manifest(dir / "bench" / "manifest.tsv");
    // Fake results: copy the condition image as the output of the first swap case.
    const auto& first = entries.front();
    std::filesystem::create_directories(dir / "results" / first.id);
    std::filesystem::copy_file(dir / "bench" / first.condition_image, dir / "results" / first.id / "target.png");
    std::ofstream(dir / "results" / first.id / "status.txt") << "ok\n";
    const EvalReport rep = eval_benchmark(dir / "results", dir / "bench" / "manifest.tsv");
    CHECK(rep.rows.size() == entries.size());
    CHECK(rep.aggregate.count == 1);
    CHECK(rep.rows.front().status == "ok");
    CHECK(rep.rows.front().bg_mse == 0.0);
    CHECK(rep.rows.back().status == "missing");
    std::ostringstream csv;
    write_eval_csv(csv, rep);
    CHECK(count_lines(csv.str()) == static_cast<int>(entries.size()) + 2);
    CHECK(csv.str().rfind("case_id,task,variant,status,bg_mse", 0) == 0);
}

TEST_CASE("parallel_for runs every index and propagates errors") {
    std::vector<int> hits(50, 0);
    parallel_for(50, 4, [&](int i) { hits[static_cast<size_t>(i)]++; });
    for (int h : hits) CHECK(h == 1);
    CHECK_THROWS_AS(parallel_for(10, 3, [](int i) { if (i == 7) throw std::runtime_error("x"); }), std::runtime_error);
}

TEST_CASE("command-line exit codes") {
    const auto dir = scratch("mcactrl_test_cli");
    save_weights(dir / "w.bin", ToyDenoiser(narrow_config()));
    BenchmarkConfig cfg;
    cfg.subjects = 1;
    cfg.conditions_per_subject = 1;
    cfg.prompts_per_subject = 1;
    const auto cases = make_benchmark(cfg);
    write_benchmark(dir / "bench", cases);
    const auto entries = read_manifest(dir / "bench" / "manifest.tsv");
    const ManifestEntry* swap = nullptr;
    for (const auto& e : entries) {
        if (e.task == TaskKind::Swapping) swap = &e;
    }
    REQUIRE(swap);
    const std::string b = (dir / "bench").string() + "/";
    const std::string inputs = "--subject " + b + swap->subject_image +
                               " --subject-prompt '" + swap->subject_prompt + "' --condition " + b +
                               swap->condition_image + " --edit-query '" + swap->edit_query + "' --prompt '" +
                               swap->prompt + "' --steps 2 --out " + (dir / "out").string();
    const std::string common = inputs + " --weights " + (dir / "w.bin").string();
    CHECK(run_cli("swap " + common + " --subject-query '" + swap->subject_query + "'") == 0);
    CHECK(std::filesystem::exists(dir / "out" / "target.png"));
    const std::string absent = swap->subject_query == "cyan triangle" ? "red square" : "cyan triangle";
    CHECK(run_cli("swap " + common + " --subject-query '" + absent + "'") == 3);
    CHECK(run_cli("swap " + common + " --subject-query '" + swap->subject_query + "' --e-gi 60") == 2);
    std::ofstream(dir / "bad.cfg") << "bogus=1\n";
    CHECK(run_cli("swap --config " + (dir / "bad.cfg").string() + " --weights " + (dir / "w.bin").string()) == 2);
    CHECK(run_cli("swap --no-such-flag") == 2);
    std::ofstream(dir / "junk.bin") << "not weights";
    CHECK(run_cli("swap " + inputs + " --subject-query '" + swap->subject_query + "' --weights " +
                  (dir / "junk.bin").string()) == 2);
}

}  // TEST_SUITE
