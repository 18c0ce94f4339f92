#include <cmath>

#include "doctest.h"
#include "plast/metrics.hpp"
#include "plast/structural.hpp"

using namespace plast;

TEST_CASE("cum_acc, taa, taoa") {
    CHECK(cum_acc({0.9, 0.7}) == doctest::Approx(0.8));
    CHECK(cum_acc({0.42}) == doctest::Approx(0.42));

    CHECK(taa({0.5, 0.7, 0.9}) == doctest::Approx(0.7));
    CHECK(taa({0.6, 0.6, 0.6}) == doctest::Approx(0.6));
    // permuting interior checkpoints changes TAA but not the final ACC
    const std::vector<double> traj = {0.2, 0.8, 0.5, 0.9};
    const std::vector<double> perm = {0.8, 0.2, 0.5, 0.9};
    CHECK(traj.back() == perm.back());
    CHECK(taa(traj) == doctest::Approx(taa(perm)));  // same multiset here
    const std::vector<double> perm2 = {0.2, 0.8, 0.8, 0.9};
    CHECK(taa(traj) != taa(perm2));

    CHECK(taoa({1, 0, 1, 1}) == doctest::Approx(0.75));
    // equal task lengths: batch mean equals the mean of per-task means
    const std::vector<double> t1 = {0.2, 0.4}, t2 = {0.6, 0.8};
    std::vector<double> all = t1;
    all.insert(all.end(), t2.begin(), t2.end());
    CHECK(taoa(all) == doctest::Approx(0.5 * (taoa(t1) + taoa(t2))));
    // unequal lengths: batch-weighted, not task-weighted
    const std::vector<double> u1 = {1.0}, u2 = {0.0, 0.0, 0.0};
    std::vector<double> uu = u1;
    uu.insert(uu.end(), u2.begin(), u2.end());
    CHECK(taoa(uu) == doctest::Approx(0.25));
    CHECK(taoa(uu) != doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("early_task_taa windows") {
    const std::vector<std::vector<double>> online = {{0.1, 0.5, 0.9}, {0.3, 0.3, 0.3}};
    // full window equals the mean of per-task online means
    CHECK(early_task_taa(online, 1.0) == doctest::Approx(0.5 * (0.5 + 0.3)));
    // single-batch window: mean of first-batch accuracies
    CHECK(early_task_taa(online, 1e-9) == doctest::Approx(0.5 * (0.1 + 0.3)));
    // monotone-improving tasks: the early window cannot beat the full one
    const std::vector<std::vector<double>> rising = {{0.1, 0.2, 0.8}, {0.0, 0.5, 1.0}};
    CHECK(early_task_taa(rising, 0.34) <= early_task_taa(rising, 1.0));
}

TEST_CASE("ticket_cycle_delta sign convention") {
    CHECK(ticket_cycle_delta(96.4, 96.6) == doctest::Approx(-0.2));
    CHECK(ticket_cycle_delta(50.0, 50.0) == 0.0);
    // positive means the retrained ticket ends above the cycle endpoint
    CHECK(ticket_cycle_delta(97.0, 96.0) > 0.0);
}

TEST_CASE("welch_ttest: reference values and symmetry") {
    const std::vector<double> a = {1, 2, 3, 4, 5};
    const std::vector<double> b = {2, 3, 4, 5, 6};
    const WelchResult r = welch_ttest(a, b);
    CHECK(r.t == doctest::Approx(-1.0));
    CHECK(r.df == doctest::Approx(8.0));
    CHECK(r.p_two_sided == doctest::Approx(0.3466).epsilon(1e-3));

    // identical samples: t = 0, p = 1
    const WelchResult same = welch_ttest(a, a);
    CHECK(same.t == 0.0);
    CHECK(same.p_two_sided == doctest::Approx(1.0));

    // swapping samples negates t, keeps p
    const WelchResult swapped = welch_ttest(b, a);
    CHECK(swapped.t == doctest::Approx(-r.t));
    CHECK(swapped.p_two_sided == doctest::Approx(r.p_two_sided));

    CHECK_THROWS_AS(welch_ttest({1.0}, a), ConfigError);
    CHECK_THROWS_AS(welch_ttest({2, 2, 2}, {3, 3, 3}), ConfigError);

    // p stays in (0, 1]
    Rng rng(33);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> x(4), y(6);
        for (auto& v : x) v = rng.uniform();
        for (auto& v : y) v = rng.uniform() + 1.0;
        const WelchResult w = welch_ttest(x, y);
        CHECK(w.p_two_sided > 0.0);
        CHECK(w.p_two_sided <= 1.0);
    }
}

TEST_CASE("activation_rate and grad_magnitude") {
    CHECK(activation_rate({0.1, 0.0, 0.06, 0.01}, 0.05) == doctest::Approx(0.5));
    CHECK(activation_rate({0.01, 0.02}, 0.05) == 0.0);
    CHECK(activation_rate({0.0, 0.3, 0.0}, -1.0) == doctest::Approx(1.0));  // relu outputs >= 0

    CHECK(grad_magnitude({0.2, -0.2}) == doctest::Approx(0.2));
    CHECK(grad_magnitude({0.0, 0.0, 0.0}) == 0.0);
}

TEST_CASE("grad_magnitude agrees with the backward pass per unit") {
    Rng rng(44);
    MaskedNetwork net = make_mlp(6, Activation::relu, 5, 3);
    Rng init = rng.child(0);
    init_network(net, init);
    Batch batch;
    batch.images = Tensor({7, 5});
    for (auto& v : batch.images.values()) v = rng.uniform(-1, 1);
    batch.labels = {0, 1, 2, 0, 1, 2, 0};

    ForwardCache cache;
    const Tensor logits = forward(net, batch.images, Mode::eval, &cache);
    const Gradients g = backward(net, cache, softmax_xent(logits, batch.labels).grad_logits);
    const auto signals = unit_signals(net, batch, 0.05);

    for (int li : net.masked_layer_indices()) {
        for (int j = 0; j < net.layers[li].spec.out_dim; ++j) {
            std::vector<double> per_sample;
            for (int b = 0; b < 7; ++b) per_sample.push_back(g.dz[li].at(b, j));
            CHECK(grad_magnitude(per_sample) ==
                  doctest::Approx(signals.at(li).grad_mag[j]).epsilon(1e-12));
        }
    }
}

TEST_CASE("parity and survivor stability") {
    const Parity p = parity(0.25, 0.5);
    CHECK(p.ratio == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(p.log_ratio == doctest::Approx(-0.6931).epsilon(1e-3));

    const Parity eq = parity(0.4, 0.4);
    CHECK(eq.ratio == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(eq.log_ratio == doctest::Approx(0.0).epsilon(1e-6));

    // antisymmetry under cohort swap, up to epsilon effects
    const double eps = 1e-8;
    const Parity ab = parity(0.3, 0.7, eps);
    const Parity ba = parity(0.7, 0.3, eps);
    CHECK(std::abs(ab.log_ratio + ba.log_ratio) <= 2 * eps / 0.3);

    const SurvivorStability none = survivor_stability({0.4, 0.2}, {0.4, 0.2});
    CHECK(none.additive == doctest::Approx(0.0));
    CHECK(none.log_form == doctest::Approx(0.0).epsilon(1e-6));

    const SurvivorStability drop = survivor_stability({0.4}, {0.2});
    CHECK(drop.additive == doctest::Approx(0.2));
    CHECK(drop.log_form == doctest::Approx(std::log(2.0)).epsilon(1e-6));
    // increasingly negative additive values mean post < end (perturbation)
    CHECK(survivor_stability({0.1}, {0.5}).additive < 0.0);
}

TEST_CASE("spearman_rho with ties") {
    CHECK(spearman_rho({1, 2, 3, 5}, {2, 4, 9, 10}) == doctest::Approx(1.0));
    CHECK(spearman_rho({1, 2, 3}, {9, 5, 1}) == doctest::Approx(-1.0));
    CHECK(spearman_rho({1, 2, 3, 4}, {1, 3, 2, 4}) == doctest::Approx(0.8));
    CHECK_THROWS_AS(spearman_rho({1, 1, 1}, {1, 2, 3}), ConfigError);
    CHECK_THROWS_AS(spearman_rho({1, 2}, {1, 2, 3}), ConfigError);
}

TEST_CASE("catchup_series: ratio curves from cohort rows") {
    std::vector<CohortRow> rows;
    auto add = [&](int event, int layer, const char* cohort, const char* tp, int age, double act,
                   double grad) {
        CohortRow r;
        r.event = event;
        r.layer = layer;
        r.cohort = cohort;
        r.timepoint = tp;
        r.age_epochs = age;
        r.n_units = 4;
        r.mean_act = act;
        r.mean_grad = grad;
        rows.push_back(r);
    };

    // identical cohorts give ratio 1 at every age
    add(1, 0, "newborn", "post", 0, 0.5, 0.1);
    add(1, 0, "incumbent", "post", 0, 0.5, 0.1);
    add(1, 0, "newborn", "age", 1, 0.6, 0.2);
    add(1, 0, "incumbent", "age", 1, 0.6, 0.2);
    // zero-outgoing newborn: gradient ratio exactly 0 at birth
    add(2, 0, "newborn", "post", 0, 0.5, 0.0);
    add(2, 0, "incumbent", "post", 0, 0.5, 0.2);

    const auto series = catchup_series(rows);
    REQUIRE(series.size() == 3);
    CHECK(series[0].event == 1);
    CHECK(series[0].age_epochs == 0);
    CHECK(series[0].act_ratio == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(series[0].grad_ratio == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(series[1].age_epochs == 1);
    CHECK(series[2].event == 2);
    CHECK(series[2].grad_ratio == 0.0);

    // deterministic: same rows, same curves
    const auto again = catchup_series(rows);
    CHECK(again.size() == series.size());
    for (size_t i = 0; i < series.size(); ++i) {
        CHECK(again[i].act_ratio == series[i].act_ratio);
        CHECK(again[i].grad_ratio == series[i].grad_ratio);
    }
}
