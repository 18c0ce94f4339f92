#include "plast/selfcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "plast/harness.hpp"
#include "plast/metrics.hpp"
#include "plast/optim.hpp"
#include "plast/streams.hpp"
#include "plast/structural.hpp"

namespace plast::check {

namespace {

using Clock = std::chrono::steady_clock;

struct Timer {
    Clock::time_point start = Clock::now();
    double seconds() const { return std::chrono::duration<double>(Clock::now() - start).count(); }
};

CheckResult finish(const std::string& name, bool pass, const std::string& detail,
                   const Timer& timer) {
    return {name, pass, detail, timer.seconds()};
}

// ---------------------------------------------------------------------------
// criterion 1: parameter gradients vs central finite differences
// ---------------------------------------------------------------------------

double loss_of(const MaskedNetwork& net, const Batch& batch) {
    const Tensor logits = forward(net, batch.images, Mode::eval);
    return softmax_xent(logits, batch.labels).loss;
}

struct FdReport {
    double worst = 0.0;
    int checked = 0;
};

FdReport fd_check_network(MaskedNetwork& net, const Batch& batch, double eps) {
    ForwardCache cache;
    const Tensor logits = forward(net, batch.images, Mode::eval, &cache);
    const LossResult loss = softmax_xent(logits, batch.labels);
    const Gradients grads = backward(net, cache, loss.grad_logits);

    FdReport rep;
    for (size_t li = 0; li < net.layers.size(); ++li) {
        if (!net.layers[li].spec.has_params()) continue;
        auto probe = [&](Tensor& param, const Tensor& analytic) {
            for (size_t i = 0; i < param.size(); ++i) {
                const double keep = param[i];
                param[i] = keep + eps;
                const double lp = loss_of(net, batch);
                param[i] = keep - eps;
                const double lm = loss_of(net, batch);
                param[i] = keep;
                const double fd = (lp - lm) / (2.0 * eps);
                const double an = analytic[i];
                const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1.0});
                rep.worst = std::max(rep.worst, rel);
                rep.checked += 1;
            }
        };
        probe(net.layers[li].weight, grads.weight[li]);
        probe(net.layers[li].bias, grads.bias[li]);
    }
    return rep;
}

}  // namespace

CheckResult check_gradient_correctness() {
    Timer timer;
    Rng rng(20204);
    double worst = 0.0;
    int total = 0;
    for (int trial = 0; trial < 20; ++trial) {
        const int in = 2 + rng.index(3);
        const int hidden = 2 + rng.index(3);
        const int out = 2 + rng.index(2);
        const bool use_rsl = trial % 2 == 1;
        MaskedNetwork net = make_mlp(hidden, use_rsl ? Activation::rsl : Activation::relu, in, out);
        if (use_rsl) {
            net.rsl.c = rng.uniform(0.5, 3.0);
            net.rsl.p = rng.uniform(0.5, 3.0);
            net.rsl.lower = rng.uniform(0.05, 0.4);
            net.rsl.upper = net.rsl.lower + rng.uniform(0.0, 0.6);
        }
        Rng init = rng.child(trial);
        init_network(net, init);
        // random masks with at least one active unit per layer
        for (int li : net.masked_layer_indices()) {
            auto& mask = net.layers[li].mask;
            for (auto& m : mask) m = rng.uniform() < 0.3 ? 0 : 1;
            mask[rng.index(static_cast<int>(mask.size()))] = 1;
        }
        size_t params = 0;
        for (const auto& l : net.layers) params += l.weight.size() + l.bias.size();
        if (params > 50) {
            // keep the nets tiny; regenerate deterministically
            --trial;
            continue;
        }
        Batch batch;
        const int b = 3 + rng.index(3);
        batch.images = Tensor({b, in});
        for (auto& v : batch.images.values()) v = rng.uniform(-1.0, 1.0);
        batch.labels.resize(b);
        for (auto& l : batch.labels) l = rng.index(out);

        const FdReport rep = fd_check_network(net, batch, 1e-5);
        worst = std::max(worst, rep.worst);
        total += rep.checked;
    }
    std::ostringstream detail;
    detail << total << " gradients, worst relative error " << worst;
    return finish("gradient-correctness", worst <= 1e-4, detail.str(), timer);
}

// ---------------------------------------------------------------------------
// criterion 2: net2wider function preservation
// ---------------------------------------------------------------------------

CheckResult check_net2wider_preservation() {
    Timer timer;
    Rng rng(31337);
    MaskedNetwork net = make_mlp(10, Activation::relu, 12, 4);
    Rng init = rng.child(0);
    init_network(net, init);
    for (int li : net.masked_layer_indices()) {
        auto& mask = net.layers[li].mask;
        std::fill(mask.begin(), mask.end(), uint8_t{0});
        for (int j = 0; j < 4; ++j) mask[j] = 1;
    }
    Batch batch;
    batch.images = Tensor({8, 12});
    for (auto& v : batch.images.values()) v = rng.uniform(-1.0, 1.0);
    batch.labels.assign(8, 0);

    Tensor prev = forward(net, batch.images, Mode::eval);
    double worst = 0.0;
    const auto masked = net.masked_layer_indices();
    for (int step = 0; step < 10; ++step) {
        const int li = masked[step % masked.size()];
        std::vector<double> rates(net.layers[li].spec.out_dim);
        for (auto& r : rates) r = rng.uniform();
        net2wider_insert(net, li, 1, rates, /*noise_eps=*/0.0, rng);
        const Tensor now = forward(net, batch.images, Mode::eval);
        for (size_t i = 0; i < now.size(); ++i)
            worst = std::max(worst, std::abs(now[i] - prev[i]));
        prev = now;
    }
    std::ostringstream detail;
    detail << "10 insertions, max |logit drift| " << worst;
    return finish("net2wider-preservation", worst <= 1e-10, detail.str(), timer);
}

// ---------------------------------------------------------------------------
// criterion 3: grow/prune budget matching
// ---------------------------------------------------------------------------

namespace {

std::vector<int> simulate_grow_counts(const CompactnessPlan& plan,
                                      const std::vector<int>& widths, double seed_fraction) {
    std::vector<int> a(widths.size());
    for (size_t i = 0; i < widths.size(); ++i)
        a[i] = std::min(plan.unit_targets[i],
                        std::max(1, static_cast<int>(std::lround(seed_fraction * widths[i]))));
    for (int t = 1; t <= plan.cycles; ++t)
        for (size_t i = 0; i < widths.size(); ++i)
            a[i] += grow_quota(a[i], plan.unit_targets[i], t, plan.cycles, widths[i]);
    return a;
}

std::vector<int> simulate_prune_counts(const CompactnessPlan& plan,
                                       const std::vector<int>& widths) {
    std::vector<int> a = widths;
    for (int t = 1; t <= plan.cycles; ++t)
        for (size_t i = 0; i < widths.size(); ++i)
            a[i] -= prune_quota(a[i], plan.unit_targets[i], t, plan.cycles);
    return a;
}

}  // namespace

CheckResult check_budget_matching() {
    Timer timer;
    const std::vector<double> levels = {0.2, 0.3, 0.4, 0.5};
    const std::vector<std::string> schedules = {"neutral", "fc1_protect", "fc3_protect",
                                                "ends_skewed"};
    std::ostringstream detail;
    int combos = 0;

    // Plan/recurrence level, both architectures.
    for (int archi = 0; archi < 2; ++archi) {
        MaskedNetwork net = archi == 0 ? make_mlp(256) : make_convnet(100);
        std::vector<int> widths;
        for (int li : net.masked_layer_indices()) widths.push_back(net.layers[li].spec.out_dim);
        for (double c : levels) {
            for (const auto& sname : schedules) {
                const auto plan =
                    plan_targets(net, c, BiasSchedule::named(sname, widths.size()), 5);
                const auto grow_final = simulate_grow_counts(plan, widths, 0.10);
                const auto prune_final = simulate_prune_counts(plan, widths);
                ++combos;
                if (grow_final != prune_final || grow_final != plan.unit_targets) {
                    detail << (archi == 0 ? "mlp" : "convnet") << " c=" << c << " " << sname
                           << ": grow/prune counts diverge";
                    return finish("budget-matching", false, detail.str(), timer);
                }
            }
        }
    }

    // Operator level on the MLP: real grow_step / prune_step edits.
    Rng rng(777);
    Batch batch;
    batch.images = Tensor({8, 784});
    for (auto& v : batch.images.values()) v = rng.uniform(0.0, 1.0);
    batch.labels.assign(8, 1);
    for (double c : levels) {
        for (const auto& sname : schedules) {
            MaskedNetwork grow_net = make_mlp(256);
            Rng init = rng.child(combos);
            init_network(grow_net, init);
            const auto plan = plan_targets(grow_net, c, BiasSchedule::named(sname, 2), 5);
            for (int li : grow_net.masked_layer_indices()) {
                auto& mask = grow_net.layers[li].mask;
                std::fill(mask.begin(), mask.end(), uint8_t{0});
                for (int j = 0; j < 26; ++j) mask[j] = 1;
            }
            MaskedNetwork prune_net = make_mlp(256);
            init_network(prune_net, init);
            GrowOptions opts;
            Rng grow_rng = rng.child(1000 + combos);
            for (int t = 1; t <= 5; ++t) {
                grow_step(grow_net, plan, t, batch, opts, grow_rng);
                prune_step(prune_net, plan, t, nullptr);
            }
            for (size_t mi = 0; mi < plan.masked_layers.size(); ++mi) {
                const int li = plan.masked_layers[mi];
                if (grow_net.active_count(li) != prune_net.active_count(li) ||
                    grow_net.active_count(li) != plan.unit_targets[mi]) {
                    detail << "operator-level mismatch at c=" << c << " " << sname;
                    return finish("budget-matching", false, detail.str(), timer);
                }
            }
            ++combos;
        }
    }
    detail << combos << " (arch, c, schedule) combinations matched";
    return finish("budget-matching", true, detail.str(), timer);
}

// ---------------------------------------------------------------------------
// criterion 4: quota schedules over random (d, c, T) triples
// ---------------------------------------------------------------------------

CheckResult check_quota_schedules() {
    Timer timer;
    Rng rng(4242);
    std::ostringstream detail;
    for (int trial = 0; trial < 1000; ++trial) {
        const int d = 4 + rng.index(509);
        const double c = rng.uniform(0.12, 0.95);
        const int t_total = 1 + rng.index(12);
        const int target = std::max(1, static_cast<int>(std::lround(c * d)));

        int a = std::min(target, std::max(1, static_cast<int>(std::lround(0.1 * d))));
        int prev = a;
        for (int t = 1; t <= t_total; ++t) {
            const int n = grow_quota(a, target, t, t_total, d);
            if (n < 0) return finish("quota-schedules", false, "negative grow quota", timer);
            a += n;
            if (a < prev) return finish("quota-schedules", false, "grow count decreased", timer);
            prev = a;
        }
        if (a != target) {
            detail << "grow missed target: d=" << d << " c=" << c << " T=" << t_total << " got "
                   << a << " want " << target;
            return finish("quota-schedules", false, detail.str(), timer);
        }

        int b = d;
        prev = b;
        for (int t = 1; t <= t_total; ++t) {
            const int k = prune_quota(b, target, t, t_total);
            if (k < 0) return finish("quota-schedules", false, "negative prune quota", timer);
            b -= k;
            if (b > prev) return finish("quota-schedules", false, "prune count increased", timer);
            prev = b;
        }
        if (b != target) {
            detail << "prune missed target: d=" << d << " c=" << c << " T=" << t_total;
            return finish("quota-schedules", false, detail.str(), timer);
        }
    }

    // Nested active sets on real networks.
    Batch batch;
    batch.images = Tensor({6, 20});
    for (auto& v : batch.images.values()) v = rng.uniform(0.0, 1.0);
    batch.labels.assign(6, 0);
    for (int trial = 0; trial < 20; ++trial) {
        const int t_total = 2 + rng.index(6);
        MaskedNetwork gnet = make_mlp(24, Activation::relu, 20, 3);
        Rng init = rng.child(50 + trial);
        init_network(gnet, init);
        const double c = rng.uniform(0.3, 0.9);
        const auto plan = plan_targets(gnet, c, BiasSchedule::neutral(2), t_total);
        for (int li : gnet.masked_layer_indices()) {
            auto& mask = gnet.layers[li].mask;
            std::fill(mask.begin(), mask.end(), uint8_t{0});
            mask[0] = mask[1] = 1;
        }
        MaskedNetwork pnet = make_mlp(24, Activation::relu, 20, 3);
        init_network(pnet, init);

        GrowOptions opts;
        Rng grow_rng = rng.child(90 + trial);
        std::set<int> grow_seen[2], prune_gone[2];
        for (int li : gnet.masked_layer_indices())
            for (int j : gnet.active_units(li)) grow_seen[li == 1].insert(j);
        for (int t = 1; t <= t_total; ++t) {
            grow_step(gnet, plan, t, batch, opts, grow_rng);
            prune_step(pnet, plan, t, nullptr);
            int slot = 0;
            for (int li : gnet.masked_layer_indices()) {
                for (int j : gnet.active_units(li)) {
                    grow_seen[slot].insert(j);
                }
                // every previously active unit must still be active
                if (static_cast<int>(grow_seen[slot].size()) != gnet.active_count(li))
                    return finish("quota-schedules", false, "grow set not nested", timer);
                ++slot;
            }
            slot = 0;
            for (int li : pnet.masked_layer_indices()) {
                for (int j = 0; j < pnet.layers[li].spec.out_dim; ++j)
                    if (!pnet.layers[li].mask[j]) prune_gone[slot].insert(j);
                int inactive = pnet.layers[li].spec.out_dim - pnet.active_count(li);
                if (static_cast<int>(prune_gone[slot].size()) != inactive)
                    return finish("quota-schedules", false, "prune set not nested", timer);
                ++slot;
            }
        }
    }
    detail << "1000 recurrence triples + 20 operator runs, targets met exactly";
    return finish("quota-schedules", true, detail.str(), timer);
}

// ---------------------------------------------------------------------------
// criterion 5: optimizer interventions
// ---------------------------------------------------------------------------

namespace {

// Scalar Adam written straight from the update equations; the oracle for
// the vectorized implementation.
struct ScalarAdam {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    double m = 0.0, v = 0.0;
    long t = 0;
    double step(double theta, double g, double lr) {
        t += 1;
        m = beta1 * m + (1 - beta1) * g;
        v = beta2 * v + (1 - beta2) * g * g;
        const double mhat = m / (1 - std::pow(beta1, static_cast<double>(t)));
        const double vhat = v / (1 - std::pow(beta2, static_cast<double>(t)));
        return theta - lr * mhat / (std::sqrt(vhat) + eps);
    }
};

MaskedNetwork tiny_net(uint64_t seed) {
    MaskedNetwork net = make_mlp(6, Activation::relu, 5, 3);
    Rng init(seed);
    init_network(net, init);
    return net;
}

Batch tiny_batch(Rng& rng, int b, int in, int classes) {
    Batch batch;
    batch.images = Tensor({b, in});
    for (auto& v : batch.images.values()) v = rng.uniform(-1.0, 1.0);
    batch.labels.resize(b);
    for (auto& l : batch.labels) l = rng.index(classes);
    return batch;
}

}  // namespace

CheckResult check_optimizer_interventions() {
    Timer timer;
    std::ostringstream detail;

    // (a) Two-Speed r=1 is bit-identical to the base optimizer, 500 steps.
    {
        MaskedNetwork base = tiny_net(9001);
        MaskedNetwork twos = tiny_net(9001);
        OptimizerState base_opt = OptimizerState::make(OptimKind::adam, 1e-3, base);
        OptimizerState twos_opt = OptimizerState::make(OptimKind::adam, 1e-3, twos);
        TwoSpeedController ctrl(1.0, 250);
        ctrl.register_birth({{0, 1}, {1, 2}});
        Rng data_a(555), data_b(555);
        for (int step = 0; step < 500; ++step) {
            Batch ba = tiny_batch(data_a, 4, 5, 3);
            Batch bb = tiny_batch(data_b, 4, 5, 3);
            auto train = [](MaskedNetwork& net, OptimizerState& opt, const Batch& batch,
                            TwoSpeedController* ts) {
                ForwardCache cache;
                const Tensor logits = forward(net, batch.images, Mode::train, &cache);
                const LossResult loss = softmax_xent(logits, batch.labels);
                const Gradients grads = backward(net, cache, loss.grad_logits);
                if (ts) ts->capture(net);
                optim_step(net, grads, opt, 1e-3);
                if (ts) ts->apply(net);
            };
            train(base, base_opt, ba, nullptr);
            train(twos, twos_opt, bb, &ctrl);
            if (step == 200) ctrl.register_birth({{0, 3}});
        }
        for (size_t li = 0; li < base.layers.size(); ++li) {
            for (size_t i = 0; i < base.layers[li].weight.size(); ++i)
                if (base.layers[li].weight[i] != twos.layers[li].weight[i])
                    return finish("optimizer-interventions", false,
                                  "two-speed r=1 diverges from base", timer);
            for (size_t i = 0; i < base.layers[li].bias.size(); ++i)
                if (base.layers[li].bias[i] != twos.layers[li].bias[i])
                    return finish("optimizer-interventions", false,
                                  "two-speed r=1 diverges from base (bias)", timer);
        }
    }

    // (b) Adam against the scalar oracle on a quadratic, 10 steps, 1e-10.
    {
        MaskedNetwork net = make_mlp(2, Activation::none, 2, 2);
        for (auto& l : net.layers) {
            l.weight.fill(0.0);
            l.bias.fill(0.0);
        }
        net.layers[0].weight.at(0, 0) = 1.0;
        net.layers[0].weight.at(1, 1) = -0.5;
        std::vector<ScalarAdam> oracle(net.layers[0].weight.size());
        std::vector<double> theta(net.layers[0].weight.values());
        OptimizerState opt = OptimizerState::make(OptimKind::adam, 0.05, net);
        Rng rng(777);
        double worst = 0.0;
        for (int step = 0; step < 10; ++step) {
            Gradients grads;
            grads.weight.resize(net.layers.size());
            grads.bias.resize(net.layers.size());
            for (size_t li = 0; li < net.layers.size(); ++li) {
                grads.weight[li] = Tensor(net.layers[li].weight.shape());
                grads.bias[li] = Tensor(net.layers[li].bias.shape());
            }
            // quadratic loss: grad = c .* theta, with fixed random curvature
            Rng curv(42);
            for (size_t i = 0; i < grads.weight[0].size(); ++i)
                grads.weight[0][i] = curv.uniform(0.5, 2.0) * net.layers[0].weight[i];
            std::vector<double> oracle_grads(theta.size());
            Rng curv2(42);
            for (size_t i = 0; i < theta.size(); ++i)
                oracle_grads[i] = curv2.uniform(0.5, 2.0) * theta[i];

            adam_step(net, grads, opt, 0.05);
            for (size_t i = 0; i < theta.size(); ++i)
                theta[i] = oracle[i].step(theta[i], oracle_grads[i], 0.05);
            for (size_t i = 0; i < theta.size(); ++i)
                worst = std::max(worst, std::abs(theta[i] - net.layers[0].weight[i]));
        }
        if (worst > 1e-10) {
            detail << "adam vs scalar oracle drift " << worst;
            return finish("optimizer-interventions", false, detail.str(), timer);
        }
        detail << "adam oracle drift " << worst;
    }

    // (c) Moment transplant copies buffers exactly and only buffers.
    {
        MaskedNetwork net = tiny_net(123);
        OptimizerState opt = OptimizerState::make(OptimKind::adam, 1e-3, net);
        Rng rng(81);
        for (auto& t : opt.m_w)
            for (auto& v : t.values()) v = rng.uniform(-0.5, 0.5);
        for (auto& t : opt.v_w)
            for (auto& v : t.values()) v = rng.uniform(0.0, 0.5);
        for (auto& t : opt.m_b)
            for (auto& v : t.values()) v = rng.uniform(-0.5, 0.5);
        for (auto& t : opt.v_b)
            for (auto& v : t.values()) v = rng.uniform(0.0, 0.5);
        const MaskedNetwork params_before = net;
        const long step_before = opt.step_count;
        moment_transplant(opt, net, 0, {{2, 4}});
        bool ok = opt.step_count == step_before;
        for (int i = 0; i < net.layers[0].spec.in_dim; ++i) {
            ok = ok && opt.m_w[0].at(2, i) == opt.m_w[0].at(4, i);
            ok = ok && opt.v_w[0].at(2, i) == opt.v_w[0].at(4, i);
        }
        ok = ok && opt.m_b[0][2] == opt.m_b[0][4] && opt.v_b[0][2] == opt.v_b[0][4];
        for (int o = 0; o < net.layers[1].spec.out_dim; ++o) {
            ok = ok && opt.m_w[1].at(o, 2) == opt.m_w[1].at(o, 4);
            ok = ok && opt.v_w[1].at(o, 2) == opt.v_w[1].at(o, 4);
        }
        for (size_t li = 0; li < net.layers.size(); ++li)
            for (size_t i = 0; i < net.layers[li].weight.size(); ++i)
                ok = ok && net.layers[li].weight[i] == params_before.layers[li].weight[i];
        if (!ok)
            return finish("optimizer-interventions", false, "moment transplant mismatch", timer);
    }

    return finish("optimizer-interventions", true,
                  "two-speed no-op, adam oracle, transplant copy all exact; " + detail.str(),
                  timer);
}

// ---------------------------------------------------------------------------
// criterion 9: metric operations vs brute-force oracles
// ---------------------------------------------------------------------------

namespace {

// Student t density integrated by Simpson's rule: the reference CDF used to
// cross-check the incomplete-beta path.
double t_pdf(double x, double df) {
    const double c = std::exp(std::lgamma((df + 1) / 2.0) - std::lgamma(df / 2.0)) /
                     std::sqrt(df * M_PI);
    return c * std::pow(1.0 + x * x / df, -(df + 1) / 2.0);
}

double t_two_sided_p_quadrature(double t, double df) {
    const double hi = std::abs(t);
    const int n = 4000;  // even
    const double h = hi / n;
    double acc = t_pdf(0.0, df) + t_pdf(hi, df);
    for (int i = 1; i < n; ++i) acc += t_pdf(i * h, df) * (i % 2 ? 4.0 : 2.0);
    const double central = acc * h / 3.0;  // integral 0..|t|
    return 1.0 - 2.0 * central;
}

double mean_ld(const std::vector<double>& v) {
    long double acc = 0.0L;
    for (double x : v) acc += x;
    return static_cast<double>(acc / v.size());
}

}  // namespace

CheckResult check_metric_oracles() {
    Timer timer;
    Rng rng(6060);
    std::ostringstream detail;
    double worst_mean = 0.0, worst_p = 0.0;

    for (int trial = 0; trial < 100; ++trial) {
        // cum_acc / taa / taoa: plain means
        const int n = 2 + rng.index(38);
        std::vector<double> xs(n);
        for (auto& v : xs) v = rng.uniform();
        worst_mean = std::max(worst_mean, std::abs(cum_acc(xs) - mean_ld(xs)));
        worst_mean = std::max(worst_mean, std::abs(taa(xs) - mean_ld(xs)));
        worst_mean = std::max(worst_mean, std::abs(taoa(xs) - mean_ld(xs)));

        // early-task taa
        const int tasks = 1 + rng.index(5);
        std::vector<std::vector<double>> online(tasks);
        for (auto& t : online) {
            t.resize(1 + rng.index(30));
            for (auto& v : t) v = rng.uniform();
        }
        const double w = rng.uniform(0.05, 1.0);
        long double oracle = 0.0L;
        for (const auto& t : online) {
            const int win = std::max<int>(
                1, static_cast<int>(std::ceil(w * static_cast<double>(t.size()))));
            long double s = 0.0L;
            for (int i = 0; i < win; ++i) s += t[i];
            oracle += s / win;
        }
        oracle /= tasks;
        worst_mean = std::max(worst_mean,
                              std::abs(early_task_taa(online, w) - static_cast<double>(oracle)));

        // welch
        const int na = 2 + rng.index(10), nb = 2 + rng.index(10);
        std::vector<double> a(na), b(nb);
        for (int i = 0; i < na; ++i) a[i] = rng.uniform() + i * 1e-3;  // nonzero variance
        for (int i = 0; i < nb; ++i) b[i] = rng.uniform() + i * 1e-3 + 0.1;
        const WelchResult wr = welch_ttest(a, b);
        // independent long-double recomputation of t and df
        {
            long double ma = 0.0L, mb = 0.0L;
            for (double x : a) ma += x;
            for (double x : b) mb += x;
            ma /= na;
            mb /= nb;
            long double va = 0.0L, vb = 0.0L;
            for (double x : a) va += (x - ma) * (x - ma);
            for (double x : b) vb += (x - mb) * (x - mb);
            va /= (na - 1);
            vb /= (nb - 1);
            const long double sa = va / na, sb = vb / nb;
            const double t_ref = static_cast<double>((ma - mb) / std::sqrt((double)(sa + sb)));
            const double df_ref = static_cast<double>(
                (sa + sb) * (sa + sb) / (sa * sa / (na - 1) + sb * sb / (nb - 1)));
            if (std::abs(t_ref - wr.t) > 1e-9 || std::abs(df_ref - wr.df) > 1e-6)
                return finish("metric-oracles", false, "welch t/df mismatch", timer);
            const double p_ref = t_two_sided_p_quadrature(wr.t, wr.df);
            worst_p = std::max(worst_p, std::abs(p_ref - wr.p_two_sided));
        }

        // spearman: counting-rank oracle
        const int ns = 3 + rng.index(20);
        std::vector<double> sx(ns), sy(ns);
        for (int i = 0; i < ns; ++i) {
            sx[i] = rng.index(8);  // force ties
            sy[i] = rng.index(8);
        }
        // degenerate constant samples are invalid inputs; perturb one entry
        sx[0] += 0.5;
        sy[0] += 0.25;
        auto count_ranks = [](const std::vector<double>& v) {
            std::vector<double> r(v.size());
            for (size_t i = 0; i < v.size(); ++i) {
                int less = 0, equal = 0;
                for (size_t j = 0; j < v.size(); ++j) {
                    if (v[j] < v[i]) ++less;
                    if (v[j] == v[i]) ++equal;
                }
                r[i] = less + 0.5 * (equal - 1) + 1.0;
            }
            return r;
        };
        const auto rx = count_ranks(sx), ry = count_ranks(sy);
        long double mx = 0.0L, my = 0.0L;
        for (size_t i = 0; i < rx.size(); ++i) {
            mx += rx[i];
            my += ry[i];
        }
        mx /= ns;
        my /= ns;
        long double cov = 0.0L, vx = 0.0L, vy = 0.0L;
        for (int i = 0; i < ns; ++i) {
            cov += (rx[i] - mx) * (ry[i] - my);
            vx += (rx[i] - mx) * (rx[i] - mx);
            vy += (ry[i] - my) * (ry[i] - my);
        }
        const double rho_ref = static_cast<double>(cov / std::sqrt((double)(vx * vy)));
        worst_mean = std::max(worst_mean, std::abs(rho_ref - spearman_rho(sx, sy)));
    }

    detail << "means worst " << worst_mean << ", welch p worst " << worst_p;
    return finish("metric-oracles", worst_mean <= 1e-12 && worst_p <= 1e-6, detail.str(), timer);
}

// ---------------------------------------------------------------------------
// criterion 10: stream invariants over random constructions
// ---------------------------------------------------------------------------

namespace {

bool tasks_equal(const TaskStream& a, const TaskStream& b) {
    if (a.tasks.size() != b.tasks.size()) return false;
    for (size_t i = 0; i < a.tasks.size(); ++i) {
        const Task& x = a.tasks[i];
        const Task& y = b.tasks[i];
        if (x.train_indices != y.train_indices || x.train_labels != y.train_labels ||
            x.pixel_perm != y.pixel_perm || x.eval_indices != y.eval_indices)
            return false;
    }
    return true;
}

std::set<int> classes_of(const Dataset& ds, const Task& t) {
    std::set<int> out;
    for (int i : t.train_indices) out.insert(ds.labels[i]);
    return out;
}

}  // namespace

CheckResult check_stream_invariants() {
    Timer timer;
    Rng rng(505);
    std::ostringstream detail;

    const Dataset ten = synthetic_dataset(800, 10, {16}, 11);
    const Dataset ten_test = synthetic_dataset(300, 10, {16}, 12);
    const Dataset hundred = synthetic_dataset(3000, 100, {16}, 13);

    for (int trial = 0; trial < 50; ++trial) {
        const uint64_t seed = rng.child(trial).mix(trial, 99);

        // split: determinism, class disjointness, cumulative eval growth
        {
            TaskStream s1 = make_split_stream(ten, ten_test, 5, 2, 8, Rng(seed));
            TaskStream s2 = make_split_stream(ten, ten_test, 5, 2, 8, Rng(seed));
            if (!tasks_equal(s1, s2))
                return finish("stream-invariants", false, "split stream not deterministic", timer);
            std::set<int> seen;
            for (const auto& t : s1.tasks) {
                for (int c : classes_of(ten, t)) {
                    if (seen.count(c))
                        return finish("stream-invariants", false, "split classes overlap", timer);
                    seen.insert(c);
                }
            }
            // replay caps across the stream
            ReplayBuffer buffer(50, 200);
            for (const auto& t : s1.tasks) {
                std::vector<int> labs;
                for (int i : t.train_indices) labs.push_back(ten.labels[i]);
                buffer.add_task_examples(t.train_indices, labs);
                if (buffer.total() > 200)
                    return finish("stream-invariants", false, "replay total cap exceeded", timer);
                for (int c = 0; c < 10; ++c)
                    if (buffer.count_for_class(c) > 50)
                        return finish("stream-invariants", false, "replay class cap exceeded",
                                      timer);
            }
        }

        // permuted: bijectivity + determinism
        {
            TaskStream p1 = make_permuted_stream(ten, 4, 200, 1, 8, Rng(seed));
            TaskStream p2 = make_permuted_stream(ten, 4, 200, 1, 8, Rng(seed));
            if (!tasks_equal(p1, p2))
                return finish("stream-invariants", false, "permuted stream not deterministic",
                              timer);
            for (const auto& t : p1.tasks) {
                std::vector<int> sorted = t.pixel_perm;
                std::sort(sorted.begin(), sorted.end());
                for (size_t i = 0; i < sorted.size(); ++i)
                    if (sorted[i] != static_cast<int>(i))
                        return finish("stream-invariants", false, "permutation not a bijection",
                                      timer);
            }
        }

        // random-label: fixed inputs, deterministic labels
        {
            TaskStream r1 = make_random_label_stream(ten, 120, 3, 1, 8, Rng(seed));
            TaskStream r2 = make_random_label_stream(ten, 120, 3, 1, 8, Rng(seed));
            if (!tasks_equal(r1, r2))
                return finish("stream-invariants", false, "random-label not deterministic", timer);
            for (size_t t = 1; t < r1.tasks.size(); ++t)
                if (r1.tasks[t].train_indices != r1.tasks[0].train_indices)
                    return finish("stream-invariants", false, "random-label inputs drift", timer);
        }

        // hard/easy: parity, disjointness, step budget
        {
            TaskStream h1 = make_hard_easy_stream(hundred, 10, 30, 8, 20, Rng(seed));
            std::set<int> seen;
            for (size_t t = 0; t < h1.tasks.size(); ++t) {
                if (h1.tasks[t].is_hard != (t % 2 == 0))
                    return finish("stream-invariants", false, "hard/easy parity broken", timer);
                if (h1.tasks[t].steps != 30)
                    return finish("stream-invariants", false, "hard/easy step budget wrong",
                                  timer);
                for (int c : classes_of(hundred, h1.tasks[t])) {
                    if (seen.count(c))
                        return finish("stream-invariants", false, "hard/easy class reuse", timer);
                    seen.insert(c);
                }
            }
        }

        // binary pair: labels {0,1}, no class reuse, balance
        {
            TaskStream b1 = make_binary_pair_stream(hundred, 40, 6, 1, 8, Rng(seed));
            std::set<int> seen;
            for (const auto& t : b1.tasks) {
                int zero = 0, one = 0;
                for (int l : t.train_labels) {
                    if (l == 0) ++zero;
                    else if (l == 1) ++one;
                    else
                        return finish("stream-invariants", false, "binary labels out of {0,1}",
                                      timer);
                }
                if (zero != one)
                    return finish("stream-invariants", false, "binary pair unbalanced", timer);
                for (int c : classes_of(hundred, t)) {
                    if (seen.count(c))
                        return finish("stream-invariants", false, "binary pair class reuse",
                                      timer);
                    seen.insert(c);
                }
            }
        }
    }
    detail << "50 constructions per stream kind, all invariants held";
    return finish("stream-invariants", true, detail.str(), timer);
}

// ---------------------------------------------------------------------------
// desk-scale checks (criteria 6-8)
// ---------------------------------------------------------------------------

namespace {

void run_parallel(std::vector<std::function<void()>> jobs, int threads) {
    std::mutex mu;
    size_t next = 0;
    auto worker = [&] {
        while (true) {
            std::function<void()> job;
            {
                std::lock_guard<std::mutex> lock(mu);
                if (next >= jobs.size()) return;
                job = jobs[next++];
            }
            job();
        }
    };
    std::vector<std::thread> pool;
    const int n = std::max(1, threads);
    for (int i = 0; i < n; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
}

RunConfig mnist_base(const std::string& data_dir, uint64_t seed) {
    RunConfig cfg;
    cfg.method = "dense";
    cfg.dataset = "mnist";
    cfg.stream = "iid";
    cfg.data_dir = data_dir;
    cfg.cycles = 5;
    cfg.epochs_per_cycle = 20;
    cfg.batch_size = 64;
    cfg.optimizer = "sgd";
    cfg.lr = 0.01;
    cfg.cosine = true;
    cfg.seed = seed;
    return cfg;
}

}  // namespace

CheckResult check_mnist_desk_run(const std::string& data_dir, int threads) {
    Timer timer;
    const std::vector<uint64_t> seeds = {0, 1, 2};
    struct SeedOutcome {
        double dense = 0.0, grow_wt = 0.0, prune_wt = 0.0;
    };
    std::vector<SeedOutcome> outcomes(seeds.size());
    std::string error;
    std::mutex err_mu;

    std::vector<std::function<void()>> jobs;
    for (size_t si = 0; si < seeds.size(); ++si) {
        jobs.push_back([&, si] {
            try {
                RunConfig dense = mnist_base(data_dir, seeds[si]);
                outcomes[si].dense = run_cycle_protocol(dense).final_acc();
            } catch (const std::exception& e) {
                std::lock_guard<std::mutex> lock(err_mu);
                error = e.what();
            }
        });
        jobs.push_back([&, si] {
            try {
                RunConfig grow = mnist_base(data_dir, seeds[si]);
                grow.method = "grow";
                grow.compactness = 0.5;
                const RunLog grow_cycle = run_cycle_protocol(grow);
                outcomes[si].grow_wt =
                    run_winning_ticket(grow, grow_cycle.final_masks).final_acc();
            } catch (const std::exception& e) {
                std::lock_guard<std::mutex> lock(err_mu);
                error = e.what();
            }
        });
        jobs.push_back([&, si] {
            try {
                RunConfig prune = mnist_base(data_dir, seeds[si]);
                prune.method = "prune";
                prune.compactness = 0.5;
                const RunLog prune_cycle = run_cycle_protocol(prune);
                outcomes[si].prune_wt =
                    run_winning_ticket(prune, prune_cycle.final_masks).final_acc();
            } catch (const std::exception& e) {
                std::lock_guard<std::mutex> lock(err_mu);
                error = e.what();
            }
        });
    }
    run_parallel(std::move(jobs), threads);
    if (!error.empty()) return finish("mnist-desk-run", false, error, timer);

    double dense = 0.0, grow = 0.0, prune = 0.0;
    for (const auto& o : outcomes) {
        dense += o.dense * 100.0 / seeds.size();
        grow += o.grow_wt * 100.0 / seeds.size();
        prune += o.prune_wt * 100.0 / seeds.size();
    }
    std::ostringstream detail;
    detail.precision(4);
    detail << "dense WT-final " << dense << " (target 95.98 +- 1.5), grow WT-final " << grow
           << " (96.40 +- 1.5), prune WT-final " << prune << " (96.39 +- 1.5), |grow-prune| "
           << std::abs(grow - prune) << " (<= 1.0), " << seeds.size() << " seeds";
    const bool pass = std::abs(dense - 95.98) <= 1.5 && std::abs(grow - 96.40) <= 1.5 &&
                      std::abs(prune - 96.39) <= 1.5 && std::abs(grow - prune) <= 1.0;
    return finish("mnist-desk-run", pass, detail.str(), timer);
}

CheckResult check_newborn_diagnostics(const std::string& data_dir) {
    Timer timer;
    std::ostringstream detail;

    // Contrived oracle first: a newborn with zeroed outgoing weights must
    // report exactly zero gradient signal.
    {
        MaskedNetwork net = make_mlp(8, Activation::relu, 10, 3);
        Rng init(5);
        init_network(net, init);
        const int li = 0;
        std::fill(net.layers[li].mask.begin(), net.layers[li].mask.end(), uint8_t{1});
        const int newborn = 3;
        Layer& consumer = net.layers[net.consumer_of(li)];
        for (int o = 0; o < consumer.spec.out_dim; ++o) consumer.weight.at(o, newborn) = 0.0;
        Rng brng(6);
        Batch batch = tiny_batch(brng, 16, 10, 3);
        const auto sig = unit_signals(net, batch, 0.05);
        if (sig.at(li).grad_mag[newborn] != 0.0)
            return finish("newborn-diagnostics", false,
                          "zero-outgoing oracle: gradient not exactly 0", timer);
        double incumbent = 0.0;
        for (int j = 0; j < 8; ++j)
            if (j != newborn) incumbent += sig.at(li).grad_mag[j] / 7.0;
        if (parity(sig.at(li).grad_mag[newborn], incumbent).ratio != 0.0)
            return finish("newborn-diagnostics", false, "zero-outgoing oracle: ratio not 0",
                          timer);
    }

    // Grow run on the MNIST subset; birth-time parity across cycles. Short
    // cycles keep incumbents young enough that newborns stay forward-active
    // while the backward-signal gap is already visible.
    RunConfig cfg = mnist_base(data_dir, 7);
    cfg.method = "grow";
    cfg.compactness = 0.5;
    cfg.cycles = 5;
    cfg.epochs_per_cycle = 2;
    cfg.lr = 0.01;
    cfg.train_limit = 4000;
    const RunLog log = run_cycle_protocol(cfg);

    // One birth log-parity per (event, layer): newborn vs incumbent at Post,
    // averaged layer-first within each event.
    std::map<int, std::map<int, std::pair<double, double>>> newborn_post, incumbent_post;
    for (const auto& row : log.cohorts) {
        if (row.timepoint != "post") continue;
        if (row.cohort == "newborn")
            newborn_post[row.event][row.layer] = {row.mean_act, row.mean_grad};
        else if (row.cohort == "incumbent")
            incumbent_post[row.event][row.layer] = {row.mean_act, row.mean_grad};
    }
    std::vector<double> act_logs, grad_logs;
    for (const auto& [event, layers] : newborn_post) {
        double act_sum = 0.0, grad_sum = 0.0;
        int n = 0;
        for (const auto& [layer, nb] : layers) {
            const auto& inc = incumbent_post.at(event).at(layer);
            act_sum += parity(nb.first, inc.first).log_ratio;
            grad_sum += parity(nb.second, inc.second).log_ratio;
            ++n;
        }
        act_logs.push_back(act_sum / n);
        grad_logs.push_back(grad_sum / n);
    }
    if (act_logs.empty())
        return finish("newborn-diagnostics", false, "no grow events recorded", timer);
    const double mean_act = mean_ld(act_logs);
    const double mean_grad = mean_ld(grad_logs);
    detail.precision(4);
    detail << "birth grad log-parity " << mean_grad << " (< 0), birth act log-parity " << mean_act
           << " (> -0.2), " << act_logs.size() << " events";
    return finish("newborn-diagnostics", mean_grad < 0.0 && mean_act > -0.2, detail.str(), timer);
}

CheckResult check_stress_monotonicity(const std::string& data_dir, int threads) {
    Timer timer;
    const std::vector<int> ks = {5, 10, 20};
    const std::vector<uint64_t> seeds = {0, 1, 2};
    std::vector<std::vector<double>> taa_by_seed(seeds.size(), std::vector<double>(ks.size()));
    std::string error;
    std::mutex err_mu;

    std::vector<std::function<void()>> jobs;
    for (size_t si = 0; si < seeds.size(); ++si) {
        for (size_t ki = 0; ki < ks.size(); ++ki) {
            jobs.push_back([&, si, ki] {
                try {
                    RunConfig cfg = mnist_base(data_dir, seeds[si]);
                    cfg.method = "grow";
                    cfg.compactness = 0.5;
                    cfg.cycles = ks[ki];
                    cfg.epochs_per_cycle = 200 / ks[ki];
                    cfg.train_limit = 1500;
                    cfg.catchup_every = 4;
                    taa_by_seed[si][ki] = run_cycle_protocol(cfg).taa_value();
                } catch (const std::exception& e) {
                    std::lock_guard<std::mutex> lock(err_mu);
                    error = e.what();
                }
            });
        }
    }
    run_parallel(std::move(jobs), threads);
    if (!error.empty()) return finish("stress-monotonicity", false, error, timer);

    int monotone_seeds = 0;
    std::ostringstream detail;
    detail.precision(4);
    for (size_t si = 0; si < seeds.size(); ++si) {
        const auto& t = taa_by_seed[si];
        const bool mono = t[0] >= t[1] && t[1] >= t[2];
        monotone_seeds += mono ? 1 : 0;
        detail << "seed " << seeds[si] << ": TAA(K=5,10,20) = " << t[0] << ", " << t[1] << ", "
               << t[2] << (mono ? " [non-increasing]" : " [violated]") << "; ";
    }
    detail << monotone_seeds << "/3 seeds monotone (need >= 2)";
    return finish("stress-monotonicity", monotone_seeds >= 2, detail.str(), timer);
}

std::vector<CheckResult> run_fast_checks() {
    return {check_gradient_correctness(), check_net2wider_preservation(), check_budget_matching(),
            check_quota_schedules(),      check_optimizer_interventions(), check_metric_oracles(),
            check_stream_invariants()};
}

std::vector<CheckResult> run_desk_checks(const std::string& data_dir, int threads) {
    return {check_mnist_desk_run(data_dir, threads), check_newborn_diagnostics(data_dir),
            check_stress_monotonicity(data_dir, threads)};
}

}  // namespace plast::check
