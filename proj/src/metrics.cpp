#include "plast/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace plast {

namespace {

double mean_of(const std::vector<double>& v) {
    if (v.empty()) throw ConfigError("mean of empty sequence");
    return std::accumulate(v.begin(), v.end(), 0.0) / v.size();
}

double sample_variance(const std::vector<double>& v, double mean) {
    double acc = 0.0;
    for (double x : v) acc += (x - mean) * (x - mean);
    return acc / (v.size() - 1);
}

}  // namespace

double cum_acc(const std::vector<double>& per_task_acc) { return mean_of(per_task_acc); }

double taa(const std::vector<double>& cumulative_accs) { return mean_of(cumulative_accs); }

double taoa(const std::vector<double>& online_batch_accs) { return mean_of(online_batch_accs); }

double early_task_taa(const std::vector<std::vector<double>>& per_task_online,
                      double window_fraction) {
    if (per_task_online.empty()) throw ConfigError("early_task_taa: no tasks");
    double acc = 0.0;
    for (const auto& task : per_task_online) {
        if (task.empty()) throw ConfigError("early_task_taa: empty task");
        const int window = std::max<int>(
            1, static_cast<int>(std::ceil(window_fraction * static_cast<double>(task.size()))));
        const int n = std::min<int>(window, static_cast<int>(task.size()));
        acc += std::accumulate(task.begin(), task.begin() + n, 0.0) / n;
    }
    return acc / per_task_online.size();
}

double ticket_cycle_delta(double final_wt, double final_cycle) { return final_wt - final_cycle; }

// Continued-fraction evaluation of the regularized incomplete beta
// (Lentz's method).
double incomplete_beta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                            a * std::log(x) + b * std::log1p(-x);
    const bool swap = x > (a + 1.0) / (a + b + 2.0);
    const double aa = swap ? b : a;
    const double bb = swap ? a : b;
    const double xx = swap ? 1.0 - x : x;

    constexpr double tiny = 1e-300;
    double c = 1.0;
    double d = 1.0 - (aa + bb) * xx / (aa + 1.0);
    if (std::abs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double result = d;
    for (int m = 1; m <= 500; ++m) {
        const double dm = static_cast<double>(m);
        double num = dm * (bb - dm) * xx / ((aa + 2.0 * dm - 1.0) * (aa + 2.0 * dm));
        d = 1.0 + num * d;
        if (std::abs(d) < tiny) d = tiny;
        c = 1.0 + num / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        result *= d * c;
        num = -(aa + dm) * (aa + bb + dm) * xx / ((aa + 2.0 * dm) * (aa + 2.0 * dm + 1.0));
        d = 1.0 + num * d;
        if (std::abs(d) < tiny) d = tiny;
        c = 1.0 + num / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double delta = d * c;
        result *= delta;
        if (std::abs(delta - 1.0) < 1e-15) break;
    }
    const double front = std::exp(ln_front) / aa;
    const double value = front * result;
    return swap ? 1.0 - value : value;
}

double t_two_sided_p(double t, double df) {
    const double x = df / (df + t * t);
    return incomplete_beta(df / 2.0, 0.5, x);
}

WelchResult welch_ttest(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() < 2 || b.size() < 2)
        throw ConfigError("welch_ttest: each sample needs at least 2 values");
    const double ma = mean_of(a), mb = mean_of(b);
    const double va = sample_variance(a, ma), vb = sample_variance(b, mb);
    const double sa = va / a.size(), sb = vb / b.size();
    if (sa + sb <= 0.0) throw ConfigError("welch_ttest: degenerate (zero) variance");
    WelchResult r;
    r.t = (ma - mb) / std::sqrt(sa + sb);
    r.df = (sa + sb) * (sa + sb) /
           (sa * sa / (a.size() - 1) + sb * sb / (b.size() - 1));
    r.p_two_sided = t_two_sided_p(r.t, r.df);
    return r;
}

double activation_rate(const std::vector<double>& post_activations, double tau) {
    if (post_activations.empty()) throw ConfigError("activation_rate: empty input");
    int n = 0;
    for (double v : post_activations)
        if (v > tau) ++n;
    return static_cast<double>(n) / post_activations.size();
}

double grad_magnitude(const std::vector<double>& pre_activation_grads) {
    if (pre_activation_grads.empty()) throw ConfigError("grad_magnitude: empty input");
    double acc = 0.0;
    for (double v : pre_activation_grads) acc += std::abs(v);
    return acc / pre_activation_grads.size();
}

Parity parity(double cohort_a_mean, double cohort_b_mean, double eps) {
    Parity p;
    p.ratio = cohort_a_mean / (cohort_b_mean + eps);
    p.log_ratio = std::log(p.ratio);
    return p;
}

SurvivorStability survivor_stability(const std::vector<double>& post_acts,
                                     const std::vector<double>& end_acts, double eps) {
    const double post = mean_of(post_acts);
    const double end = mean_of(end_acts);
    SurvivorStability s;
    s.additive = post - end;
    s.log_form = std::log(post / (end + eps));
    return s;
}

double spearman_rho(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size() || xs.size() < 2)
        throw ConfigError("spearman_rho: need two equally sized samples of >= 2");
    auto ranks = [](const std::vector<double>& v) {
        const int n = static_cast<int>(v.size());
        std::vector<int> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](int a, int b) { return v[a] < v[b]; });
        std::vector<double> r(n);
        int i = 0;
        while (i < n) {
            int j = i;
            while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
            const double avg = 0.5 * (i + j) + 1.0;  // average rank, 1-based
            for (int k = i; k <= j; ++k) r[order[k]] = avg;
            i = j + 1;
        }
        return r;
    };
    const auto rx = ranks(xs);
    const auto ry = ranks(ys);
    const double mx = mean_of(rx), my = mean_of(ry);
    double cov = 0.0, vx = 0.0, vy = 0.0;
    for (size_t i = 0; i < rx.size(); ++i) {
        cov += (rx[i] - mx) * (ry[i] - my);
        vx += (rx[i] - mx) * (rx[i] - mx);
        vy += (ry[i] - my) * (ry[i] - my);
    }
    if (vx == 0.0 || vy == 0.0) throw ConfigError("spearman_rho: constant sample");
    return cov / std::sqrt(vx * vy);
}

std::vector<RatioPoint> catchup_series(const std::vector<CohortRow>& rows, double eps) {
    // (event, age) -> per-layer newborn/incumbent means
    struct Accum {
        std::vector<double> newborn_act, newborn_grad, incumbent_act, incumbent_grad;
    };
    std::map<std::pair<int, int>, Accum> groups;
    for (const auto& row : rows) {
        if (row.timepoint != "age" && row.timepoint != "post") continue;
        const int age = row.timepoint == "post" ? 0 : row.age_epochs;
        auto& g = groups[{row.event, age}];
        if (row.cohort == "newborn") {
            g.newborn_act.push_back(row.mean_act);
            g.newborn_grad.push_back(row.mean_grad);
        } else if (row.cohort == "incumbent") {
            g.incumbent_act.push_back(row.mean_act);
            g.incumbent_grad.push_back(row.mean_grad);
        }
    }
    std::vector<RatioPoint> out;
    for (const auto& [key, g] : groups) {
        if (g.newborn_act.empty() || g.incumbent_act.empty()) continue;
        RatioPoint p;
        p.event = key.first;
        p.age_epochs = key.second;
        // per-layer means first, then the ratio of cohort means
        p.act_ratio = parity(mean_of(g.newborn_act), mean_of(g.incumbent_act), eps).ratio;
        p.grad_ratio = parity(mean_of(g.newborn_grad), mean_of(g.incumbent_grad), eps).ratio;
        out.push_back(p);
    }
    std::sort(out.begin(), out.end(), [](const RatioPoint& a, const RatioPoint& b) {
        return a.event != b.event ? a.event < b.event : a.age_epochs < b.age_epochs;
    });
    return out;
}

}  // namespace plast
