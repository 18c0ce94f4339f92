#include <cmath>

#include "doctest.h"
#include "plast/budget.hpp"

using namespace plast;

TEST_CASE("layer_compactness basics") {
    bool degenerate = false;
    CHECK(layer_compactness({1, 1, 1, 1}) == doctest::Approx(1.0));
    CHECK(layer_compactness({1, 0, 1, 0}) == doctest::Approx(0.5));
    CHECK(layer_compactness({0, 0, 0}, &degenerate) == doctest::Approx(0.0));
    CHECK(degenerate);
    CHECK_THROWS_AS(layer_compactness({}), ConfigError);
    CHECK_THROWS_AS(layer_compactness({1, 2}), ConfigError);
}

TEST_CASE("plan_targets: neutral schedule reduces to round(c*d)") {
    MaskedNetwork mlp = make_mlp(256);
    const auto plan = plan_targets(mlp, 0.5, BiasSchedule::neutral(2), 5);
    CHECK(plan.unit_targets == std::vector<int>{128, 128});

    // neutral identity holds up to one reconciliation unit per layer
    Rng rng(8);
    for (int trial = 0; trial < 30; ++trial) {
        const double c = rng.uniform(0.05, 1.0);
        const auto p = plan_targets(mlp, c, BiasSchedule::neutral(2), 5);
        for (size_t i = 0; i < p.unit_targets.size(); ++i) {
            const int expect = std::max(1, (int)std::lround(c * 256));
            CHECK(std::abs(p.unit_targets[i] - expect) <= 1);
        }
    }
}

TEST_CASE("plan_targets: convnet head allocation matches the share rule") {
    MaskedNetwork conv = make_convnet(100);
    const auto plan = plan_targets(conv, 0.2, BiasSchedule::neutral(3), 5);
    // ideal pre-reconciliation counts are round(0.2 * d) = (102, 102, 51);
    // reconciliation moves at most a few units to hit the weight budget
    REQUIRE(plan.unit_targets.size() == 3);
    CHECK(std::abs(plan.unit_targets[0] - 102) <= 3);
    CHECK(std::abs(plan.unit_targets[1] - 102) <= 3);
    CHECK(std::abs(plan.unit_targets[2] - 51) <= 3);

    // reconciliation leaves the kept-weight mass within half the largest
    // per-unit mass of the budget
    const double budget = 0.2 * (512.0 * 4097 + 512.0 * 513 + 256.0 * 513);
    double mass = plan.unit_targets[0] * 4097.0 + plan.unit_targets[1] * 513.0 +
                  plan.unit_targets[2] * 513.0;
    CHECK(std::abs(mass - budget) <= 4097.0 / 2);

    // protecting the last layer raises its kept fraction above fc1's
    const auto prot = plan_targets(conv, 0.5, BiasSchedule::named("fc3_protect", 3), 5);
    const double frac1 = prot.unit_targets[0] / 512.0;
    const double frac3 = prot.unit_targets[2] / 256.0;
    CHECK(frac3 > frac1);
}

TEST_CASE("plan_targets: validation and degenerate budgets") {
    MaskedNetwork mlp = make_mlp(256);
    CHECK_THROWS_AS(plan_targets(mlp, 0.0, BiasSchedule::neutral(2), 5), ConfigError);
    CHECK_THROWS_AS(plan_targets(mlp, 1.5, BiasSchedule::neutral(2), 5), ConfigError);
    CHECK_THROWS_AS(plan_targets(mlp, 0.5, BiasSchedule::neutral(3), 5), ConfigError);

    BiasSchedule bad = BiasSchedule::neutral(2);
    bad.scalars[1] = 0.0;
    CHECK_THROWS_AS(plan_targets(mlp, 0.5, bad, 5), ConfigError);

    // extreme compactness clamps to one unit and records the note
    MaskedNetwork tiny = make_mlp(8, Activation::relu, 4, 2);
    const auto plan = plan_targets(tiny, 0.01, BiasSchedule::neutral(2), 5);
    for (int u : plan.unit_targets) CHECK(u >= 1);
    CHECK(plan.budget_note);
}

TEST_CASE("plan_targets: raising a layer's bias never lowers its target") {
    MaskedNetwork conv = make_convnet(10);
    Rng rng(77);
    for (int trial = 0; trial < 40; ++trial) {
        BiasSchedule sched;
        sched.name = "random";
        sched.scalars = {rng.uniform(0.3, 2.0), rng.uniform(0.3, 2.0), rng.uniform(0.3, 2.0)};
        const double c = rng.uniform(0.1, 0.9);
        const int layer = rng.index(3);
        const auto before = plan_targets(conv, c, sched, 5);
        BiasSchedule raised = sched;
        raised.scalars[layer] *= 1.0 + rng.uniform(0.1, 1.0);
        const auto after = plan_targets(conv, c, raised, 5);
        CHECK(after.unit_targets[layer] >= before.unit_targets[layer]);
    }
}

TEST_CASE("plan identity across methods: same inputs, same plan") {
    MaskedNetwork a = make_mlp(256);
    MaskedNetwork b = make_mlp(256);
    // masks differ (as they would mid-run); the plan must not care
    b.layers[0].mask[3] = 0;
    for (double c : {0.2, 0.3, 0.4, 0.5}) {
        for (const char* s : {"neutral", "fc1_protect", "fc3_protect", "ends_skewed"}) {
            const auto pa = plan_targets(a, c, BiasSchedule::named(s, 2), 5);
            const auto pb = plan_targets(b, c, BiasSchedule::named(s, 2), 5);
            CHECK(pa.unit_targets == pb.unit_targets);
        }
    }
}

TEST_CASE("apply_mask_edit follows the edit contract") {
    MaskedNetwork net = make_mlp(2, Activation::relu, 2, 2);
    net.layers[0].mask = {0, 0};
    apply_mask_edit(net, 0, {1}, MaskAction::activate);
    CHECK(net.layers[0].mask == std::vector<uint8_t>{0, 1});

    net.layers[1].mask = {1, 1};
    apply_mask_edit(net, 1, {0}, MaskAction::deactivate);
    CHECK(net.layers[1].mask == std::vector<uint8_t>{0, 1});

    CHECK_THROWS_AS(apply_mask_edit(net, 0, {1}, MaskAction::activate), ConfigError);
    CHECK_THROWS_AS(apply_mask_edit(net, 1, {0}, MaskAction::deactivate), ConfigError);
    CHECK_THROWS_AS(apply_mask_edit(net, 0, {5}, MaskAction::activate), ConfigError);
    CHECK_THROWS_AS(apply_mask_edit(net, 2, {0}, MaskAction::activate), ConfigError);

    // parameters untouched by mask edits
    Rng rng(3);
    MaskedNetwork p = make_mlp(6, Activation::relu, 4, 2);
    init_network(p, rng);
    const Tensor w_before = p.layers[0].weight;
    apply_mask_edit(p, 0, {2, 4}, MaskAction::deactivate);
    for (size_t i = 0; i < w_before.size(); ++i) CHECK(p.layers[0].weight[i] == w_before[i]);
}

TEST_CASE("named schedules carry the published scalars") {
    const auto fc1 = BiasSchedule::named("fc1_protect", 3);
    CHECK(fc1.scalars == std::vector<double>{1.5, 1.5, 0.6});
    const auto fc3 = BiasSchedule::named("fc3_protect", 3);
    CHECK(fc3.scalars == std::vector<double>{0.6, 0.6, 1.5});
    const auto ends = BiasSchedule::named("ends_skewed", 3);
    CHECK(ends.scalars == std::vector<double>{1.2, 0.6, 1.2});
    const auto neutral = BiasSchedule::named("neutral", 2);
    CHECK(neutral.scalars == std::vector<double>{1.0, 1.0});
    CHECK_THROWS_AS(BiasSchedule::named("bogus", 2), ConfigError);
}
