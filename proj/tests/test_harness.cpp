#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "plast/harness.hpp"

using namespace plast;

namespace {

RunConfig tiny_synthetic(const std::string& method) {
    RunConfig cfg;
    cfg.method = method;
    cfg.dataset = "synthetic";
    cfg.stream = "iid";
    cfg.cycles = 3;
    cfg.epochs_per_cycle = 2;
    cfg.batch_size = 32;
    cfg.synthetic_train = 256;
    cfg.synthetic_test = 96;
    cfg.compactness = 0.5;
    cfg.lr = 0.05;
    cfg.seed = 5;
    return cfg;
}

}  // namespace

TEST_CASE("parse_config: minimal config gets documented defaults") {
    const RunConfig cfg = parse_config_text(
        "[run]\n"
        "method = grow\n"
        "dataset = synthetic\n"
        "compactness = 0.4\n");
    CHECK(cfg.method == "grow");
    CHECK(cfg.compactness == doctest::Approx(0.4));
    CHECK(cfg.cycles == 5);
    CHECK(cfg.tau == doctest::Approx(0.05));
    CHECK(cfg.seed == 0);
    CHECK(cfg.schedule == "neutral");
}

TEST_CASE("parse_config: comments, sections, malformed lines") {
    const RunConfig cfg = parse_config_text(
        "# comment\n"
        "[run]\n"
        "method = prune   ; trailing comment\n"
        "dataset = synthetic\n"
        "\n"
        "[optimizer]\n"
        "kind = adam\n"
        "lr = 0.002\n");
    CHECK(cfg.method == "prune");
    CHECK(cfg.optimizer == "adam");
    CHECK(cfg.lr == doctest::Approx(0.002));

    CHECK_THROWS_AS(parse_config_text("[run\nmethod = dense\n"), ValidationError);
    CHECK_THROWS_AS(parse_config_text("[run]\njust a line\n"), ValidationError);
}

TEST_CASE("parse_config: unknown keys are rejected") {
    CHECK_THROWS_WITH_AS(parse_config_text("[run]\nmystery = 1\n"),
                         doctest::Contains("unknown key"), ValidationError);
    CHECK_THROWS_WITH_AS(parse_config_text("[nosuch]\nmethod = dense\n"),
                         doctest::Contains("unknown key"), ValidationError);
}

TEST_CASE("parse_config: invalid method/intervention combinations are named") {
    const std::string bad =
        "[run]\n"
        "method = prune\n"
        "dataset = synthetic\n"
        "[interventions]\n"
        "two_speed = true\n";
    CHECK_THROWS_WITH_AS(parse_config_text(bad), doctest::Contains("two_speed"), ValidationError);

    const std::string sgd_transplant =
        "[run]\n"
        "method = grow\n"
        "dataset = synthetic\n"
        "[interventions]\n"
        "moment_transplant = true\n";
    CHECK_THROWS_WITH_AS(parse_config_text(sgd_transplant), doctest::Contains("adam"),
                         ValidationError);

    // rsl is allowed with any method; published hyperparameters parse as-is
    const RunConfig rsl = parse_config_text(
        "[run]\n"
        "method = prune\n"
        "dataset = synthetic\n"
        "[interventions]\n"
        "rsl = true\n"
        "rsl_c = 0.5\n"
        "rsl_p = 0.5\n"
        "rsl_lower = 0.673\n"
        "rsl_upper = 2.673\n");
    CHECK(rsl.iv.rsl);
    CHECK(rsl.iv.rsl_params.upper == doctest::Approx(2.673));
}

TEST_CASE("apply_override: section and bare keys") {
    RunConfig cfg = tiny_synthetic("dense");
    apply_override(cfg, "run.method=grow");
    CHECK(cfg.method == "grow");
    apply_override(cfg, "compactness=0.3");
    CHECK(cfg.compactness == doctest::Approx(0.3));
    apply_override(cfg, "interventions.gradmax=true");
    CHECK(cfg.iv.gradmax);
    CHECK_THROWS_AS(apply_override(cfg, "nonsense=1"), ValidationError);
    CHECK_THROWS_AS(apply_override(cfg, "no_equals"), ValidationError);
}

TEST_CASE("cycle protocol: dense run has checkpoints and no edit events") {
    const RunLog log = run_cycle_protocol(tiny_synthetic("dense"));
    CHECK(log.checkpoints.size() == 3);
    CHECK(log.events.empty());
    CHECK(log.kind == "cycle");
    for (const auto& m : log.final_masks)
        for (uint8_t v : m) CHECK(v == 1);
}

TEST_CASE("cycle protocol: grow masks expand to the plan, nested") {
    RunConfig cfg = tiny_synthetic("grow");
    const RunLog log = run_cycle_protocol(cfg);
    REQUIRE(log.has_plan);
    REQUIRE(log.checkpoints.size() == 3);

    // nested increasing active counts, final counts equal the plan
    for (size_t mi = 0; mi < log.plan.masked_layers.size(); ++mi) {
        int prev = 0;
        for (const auto& cp : log.checkpoints) {
            CHECK(cp.active_counts[mi] >= prev);
            prev = cp.active_counts[mi];
        }
        CHECK(log.checkpoints.back().active_counts[mi] == log.plan.unit_targets[mi]);
    }
    // one structural step per cycle, including zero-quota steps
    CHECK(log.events.size() == 3);
    CHECK(!log.cohorts.empty());
}

TEST_CASE("cycle protocol: prune masks shrink to the plan") {
    RunConfig cfg = tiny_synthetic("prune");
    const RunLog log = run_cycle_protocol(cfg);
    for (size_t mi = 0; mi < log.plan.masked_layers.size(); ++mi) {
        int prev = 1 << 20;
        for (const auto& cp : log.checkpoints) {
            CHECK(cp.active_counts[mi] <= prev);
            prev = cp.active_counts[mi];
        }
        CHECK(log.checkpoints.back().active_counts[mi] == log.plan.unit_targets[mi]);
    }
    // initial masks are fully active
    for (const auto& m : log.initial_masks)
        for (uint8_t v : m) CHECK(v == 1);
}

TEST_CASE("grow and prune land on identical per-layer counts (budget matched)") {
    for (double c : {0.2, 0.5}) {
        RunConfig g = tiny_synthetic("grow");
        g.compactness = c;
        RunConfig p = tiny_synthetic("prune");
        p.compactness = c;
        const RunLog gl = run_cycle_protocol(g);
        const RunLog pl = run_cycle_protocol(p);
        CHECK(gl.checkpoints.back().active_counts == pl.checkpoints.back().active_counts);
    }
}

TEST_CASE("replay invariant: events rebuild the final mask from the initial one") {
    for (const char* method : {"grow", "prune"}) {
        const RunLog log = run_cycle_protocol(tiny_synthetic(method));
        std::vector<std::vector<uint8_t>> masks = log.initial_masks;
        // map layer id -> slot in the mask list
        std::vector<int> layer_ids;
        for (size_t mi = 0; mi < log.plan.masked_layers.size(); ++mi)
            layer_ids.push_back(log.plan.masked_layers[mi]);
        for (const auto& ev : log.events) {
            for (const auto& edit : ev.edits) {
                const auto slot =
                    std::find(layer_ids.begin(), layer_ids.end(), edit.layer) - layer_ids.begin();
                for (int j : edit.units)
                    masks[slot][j] = ev.action == "grow" ? 1 : 0;
            }
        }
        CHECK(masks == log.final_masks);
    }
}

TEST_CASE("run determinism: identical config and seed, identical log") {
    const RunLog a = run_cycle_protocol(tiny_synthetic("grow"));
    const RunLog b = run_cycle_protocol(tiny_synthetic("grow"));
    REQUIRE(a.checkpoints.size() == b.checkpoints.size());
    for (size_t i = 0; i < a.checkpoints.size(); ++i) {
        CHECK(a.checkpoints[i].acc_cum == b.checkpoints[i].acc_cum);
        CHECK(a.checkpoints[i].active_counts == b.checkpoints[i].active_counts);
    }
    CHECK(a.final_masks == b.final_masks);
}

TEST_CASE("winning ticket: frozen mask, no events, paired delta") {
    RunConfig cfg = tiny_synthetic("grow");
    const RunLog cycle = run_cycle_protocol(cfg);
    const RunLog wt = run_winning_ticket(cfg, cycle.final_masks, cycle.run_id, cycle.final_acc());
    CHECK(wt.kind == "ticket");
    CHECK(wt.events.empty());
    CHECK(wt.final_masks == cycle.final_masks);
    CHECK(wt.paired_run == cycle.run_id);
    CHECK(wt.has_delta);
    CHECK(wt.delta_wt_c == doctest::Approx(wt.final_acc() - cycle.final_acc()));
    // same checkpoint cadence as the cycle run
    CHECK(wt.checkpoints.size() == cycle.checkpoints.size());

    // mask shape mismatches are fatal
    std::vector<std::vector<uint8_t>> wrong = cycle.final_masks;
    wrong.pop_back();
    CHECK_THROWS_AS(run_winning_ticket(cfg, wrong), ConfigError);
}

TEST_CASE("winning ticket with an all-ones mask reproduces a dense run") {
    // the ticket path derives its seed from (seed, ticket-tag); a dense cycle
    // run started from that derived seed must match it exactly
    RunConfig cfg = tiny_synthetic("dense");
    std::vector<std::vector<uint8_t>> ones;
    const RunData data = prepare_run_data(cfg);
    const MaskedNetwork probe = build_network(cfg, data.train);
    for (int li : probe.masked_layer_indices())
        ones.emplace_back(probe.layers[li].mask.size(), uint8_t{1});

    const RunLog wt = run_winning_ticket(cfg, ones);

    RunConfig dense = cfg;
    dense.seed = Rng::mix(cfg.seed, 0x71c4e7);
    const RunLog base = run_cycle_protocol(dense);
    REQUIRE(wt.checkpoints.size() == base.checkpoints.size());
    for (size_t i = 0; i < wt.checkpoints.size(); ++i)
        CHECK(wt.checkpoints[i].acc_cum == base.checkpoints[i].acc_cum);
}

TEST_CASE("stress test: fixed horizon divided across K cycles") {
    RunConfig cfg = tiny_synthetic("grow");
    cfg.synthetic_train = 128;
    cfg.synthetic_test = 64;
    const auto logs = run_stress_test(cfg, {2, 4}, 8);
    REQUIRE(logs.size() == 2);
    CHECK(logs[0].config.cycles == 2);
    CHECK(logs[0].config.epochs_per_cycle == 4);
    CHECK(logs[1].config.cycles == 4);
    CHECK(logs[1].config.epochs_per_cycle == 2);
    // the structural step count equals K and the horizon is constant
    CHECK(logs[0].events.size() == 2);
    CHECK(logs[1].events.size() == 4);
    CHECK(logs[0].checkpoints.back().epoch == 8);
    CHECK(logs[1].checkpoints.back().epoch == 8);
    CHECK_THROWS_AS(run_stress_test(cfg, {3}, 8), ValidationError);
}

TEST_CASE("run outputs round-trip through the documented files") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "plast_run_out";
    fs::remove_all(dir);

    RunConfig cfg = tiny_synthetic("grow");
    cfg.out_dir = dir.string();
    RunLog log = run_cycle_protocol(cfg);
    write_run_outputs(log);

    for (const char* f : {"config.json", "metrics.csv", "events.jsonl", "cohorts.csv",
                          "online.csv", "mask_final.json", "summary.json"})
        CHECK(fs::exists(dir / f));

    const auto masks = read_final_mask(dir.string());
    CHECK(masks == log.final_masks);

    std::string kind;
    double acc = -1.0;
    const RunConfig echoed = read_run_config(dir.string(), &kind, &acc);
    CHECK(kind == "cycle");
    CHECK(acc == doctest::Approx(log.final_acc()));
    CHECK(echoed.method == "grow");
    CHECK(echoed.compactness == doctest::Approx(cfg.compactness));
    CHECK(echoed.seed == cfg.seed);

    fs::remove_all(dir);
}

TEST_CASE("split stream protocol smoke: cumulative accuracy and replay") {
    RunConfig cfg;
    cfg.method = "grow";
    cfg.dataset = "synthetic";
    cfg.stream = "split";
    cfg.cycles = 5;
    cfg.epochs_per_cycle = 1;
    cfg.batch_size = 16;
    cfg.synthetic_train = 400;
    cfg.synthetic_test = 100;
    cfg.compactness = 0.5;
    cfg.lr = 0.05;
    cfg.seed = 3;
    const RunLog log = run_cycle_protocol(cfg);
    REQUIRE(log.checkpoints.size() == 5);
    // checkpoint t evaluates t tasks
    for (size_t t = 0; t < 5; ++t) CHECK(log.checkpoints[t].per_task_acc.size() == t + 1);
    CHECK(log.per_task_online.size() == 5);
}

TEST_CASE("two-speed r=1 leaves the grow trajectory bit-identical") {
    RunConfig base = tiny_synthetic("grow");
    RunConfig twos = base;
    twos.iv.two_speed = true;
    twos.iv.two_speed_r = 1.0;
    twos.iv.two_speed_window = 50;
    const RunLog a = run_cycle_protocol(base);
    const RunLog b = run_cycle_protocol(twos);
    REQUIRE(a.checkpoints.size() == b.checkpoints.size());
    for (size_t i = 0; i < a.checkpoints.size(); ++i)
        CHECK(a.checkpoints[i].acc_cum == b.checkpoints[i].acc_cum);
    CHECK(a.final_masks == b.final_masks);
}

TEST_CASE("interventions wire up end to end") {
    RunConfig cfg = tiny_synthetic("grow");
    cfg.optimizer = "adam";
    cfg.lr = 0.002;
    cfg.iv.moment_transplant = true;
    cfg.iv.gradmax = true;
    cfg.iv.two_speed = true;
    cfg.iv.two_speed_r = 3.0;
    cfg.iv.two_speed_window = 10;
    const RunLog log = run_cycle_protocol(cfg);
    CHECK(log.checkpoints.size() == 3);
    CHECK(log.checkpoints.back().active_counts == log.plan.unit_targets);

    RunConfig n2w = tiny_synthetic("grow");
    n2w.iv.net2wider = true;
    const RunLog wlog = run_cycle_protocol(n2w);
    CHECK(wlog.checkpoints.back().active_counts == wlog.plan.unit_targets);

    RunConfig rsl = tiny_synthetic("prune");
    rsl.iv.rsl = true;
    rsl.iv.rsl_params = {0.5, 0.5, 0.673, 2.673};
    const RunLog rlog = run_cycle_protocol(rsl);
    CHECK(rlog.checkpoints.back().active_counts == rlog.plan.unit_targets);
}
