#include "plast/budget.hpp"

#include <algorithm>
#include <cmath>

namespace plast {

void BiasSchedule::validate(size_t n_masked) const {
    if (scalars.size() != n_masked)
        throw ConfigError("bias schedule '" + name + "' defines " +
                          std::to_string(scalars.size()) + " scalars for " +
                          std::to_string(n_masked) + " masked layers");
    for (double b : scalars)
        if (!(b > 0.0)) throw ConfigError("bias schedule '" + name + "' has a non-positive scalar");
}

BiasSchedule BiasSchedule::neutral(size_t n_masked) {
    BiasSchedule s;
    s.name = "neutral";
    s.scalars.assign(n_masked, 1.0);
    return s;
}

BiasSchedule BiasSchedule::named(const std::string& name, size_t n_masked) {
    std::vector<double> base;
    if (name == "neutral") return neutral(n_masked);
    if (name == "fc1_protect")
        base = {1.5, 1.5, 0.6};
    else if (name == "fc3_protect")
        base = {0.6, 0.6, 1.5};
    else if (name == "ends_skewed")
        base = {1.2, 0.6, 1.2};
    else
        throw ConfigError("unknown bias schedule '" + name + "'");
    if (n_masked > base.size())
        throw ConfigError("bias schedule '" + name + "' supports at most 3 masked layers");
    BiasSchedule s;
    s.name = name;
    s.scalars.assign(base.begin(), base.begin() + n_masked);
    return s;
}

int CompactnessPlan::target_for_layer(int layer) const {
    for (size_t i = 0; i < masked_layers.size(); ++i)
        if (masked_layers[i] == layer) return unit_targets[i];
    throw ConfigError("layer " + std::to_string(layer) + " is not in the plan");
}

double layer_compactness(const std::vector<uint8_t>& mask, bool* degenerate) {
    if (mask.empty()) throw ConfigError("layer_compactness: empty mask");
    int active = 0;
    for (uint8_t m : mask) {
        if (m != 0 && m != 1) throw ConfigError("layer_compactness: mask must be binary");
        active += m;
    }
    if (degenerate) *degenerate = (active == 0);
    return static_cast<double>(active) / static_cast<double>(mask.size());
}

CompactnessPlan plan_targets(const MaskedNetwork& net, double global_c,
                             const BiasSchedule& schedule, int cycles) {
    if (!(global_c > 0.0) || global_c > 1.0)
        throw ConfigError("compactness must lie in (0, 1]");
    CompactnessPlan plan;
    plan.global_c = global_c;
    plan.schedule = schedule;
    plan.cycles = cycles;
    plan.masked_layers = net.masked_layer_indices();
    const size_t n = plan.masked_layers.size();
    if (n == 0) throw ConfigError("plan_targets: network has no masked layers");
    // Structural edits are confined to hidden linear layers; the output
    // layer and the conv trunk stay dense.
    for (int li : plan.masked_layers) {
        if (net.layers[li].spec.kind != LayerKind::linear ||
            li + 1 == static_cast<int>(net.layers.size()))
            throw ConfigError("plan_targets: mask on a non-hidden-linear layer " +
                              std::to_string(li));
    }
    schedule.validate(n);

    // Per-unit weight mass: incoming weights + 1 bias. Outgoing weights
    // belong to the consumer layer, so nothing is counted twice.
    std::vector<double> unit_mass(n), dims(n);
    double total_mass = 0.0, biased_mass = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const Layer& l = net.layers[plan.masked_layers[i]];
        unit_mass[i] = static_cast<double>(l.spec.fan_in()) + 1.0;
        dims[i] = static_cast<double>(l.spec.units());
        total_mass += dims[i] * unit_mass[i];
        biased_mass += schedule.scalars[i] * dims[i] * unit_mass[i];
    }
    const double budget = global_c * total_mass;

    // Ideal real-valued unit counts (share s_l = budget * b_l d_l W_l / B,
    // divided back by the per-unit mass), then nearest-integer with clamping.
    std::vector<double> ideal(n);
    std::vector<int> u(n);
    for (size_t i = 0; i < n; ++i) {
        ideal[i] = budget * schedule.scalars[i] * dims[i] / biased_mass;
        int r = static_cast<int>(std::lround(ideal[i]));
        if (r < 1) {
            r = 1;
            plan.budget_note = true;
        }
        u[i] = std::min(r, static_cast<int>(dims[i]));
    }

    // Reconcile: among single-unit moves that strictly shrink the absolute
    // budget deviation, take the one on the layer with the largest rounding
    // residual in the move's direction; stop when no move shrinks it.
    // Each accepted move strictly reduces |deviation|, so this terminates
    // well within sum(d_l) steps.
    auto deviation = [&] {
        double dev = -budget;
        for (size_t i = 0; i < n; ++i) dev += u[i] * unit_mass[i];
        return dev;
    };
    long guard = 0;
    for (size_t i = 0; i < n; ++i) guard += static_cast<long>(dims[i]);
    while (guard-- > 0) {
        const double dev = deviation();
        int best = -1;
        int dir = 0;
        double best_residual = -1e300;
        for (size_t i = 0; i < n; ++i) {
            const double res = ideal[i] - u[i];
            if (u[i] < static_cast<int>(dims[i]) &&
                std::abs(dev + unit_mass[i]) < std::abs(dev) - 1e-9 && res > best_residual) {
                best = static_cast<int>(i);
                dir = +1;
                best_residual = res;
            }
            if (u[i] > 1 && std::abs(dev - unit_mass[i]) < std::abs(dev) - 1e-9 &&
                -res > best_residual) {
                best = static_cast<int>(i);
                dir = -1;
                best_residual = -res;
            }
        }
        if (best < 0) break;
        u[best] += dir;
    }

    plan.unit_targets = u;
    return plan;
}

void apply_mask_edit(MaskedNetwork& net, int layer, const std::vector<int>& unit_indices,
                     MaskAction action) {
    Layer& l = net.layers.at(layer);
    if (!l.spec.masked) throw ConfigError("apply_mask_edit: layer is not masked");
    for (int j : unit_indices) {
        if (j < 0 || j >= static_cast<int>(l.mask.size()))
            throw ConfigError("apply_mask_edit: unit index out of range");
        const uint8_t want_current = action == MaskAction::activate ? 0 : 1;
        if (l.mask[j] != want_current)
            throw ConfigError("apply_mask_edit: unit " + std::to_string(j) +
                              (action == MaskAction::activate ? " is already active"
                                                              : " is already inactive"));
    }
    for (int j : unit_indices) l.mask[j] = action == MaskAction::activate ? 1 : 0;
}

}  // namespace plast
