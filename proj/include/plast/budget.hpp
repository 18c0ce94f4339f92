#pragma once

#include <string>
#include <vector>

#include "plast/network.hpp"

namespace plast {

/// Positive scalars weighting how much of the kept-weight budget each masked
/// layer receives. Neutral (all 1.0) distributes proportionally to layer
/// weight mass.
struct BiasSchedule {
    std::string name = "neutral";
    std::vector<double> scalars;  // one per masked layer, in network order

    void validate(size_t n_masked) const;

    static BiasSchedule neutral(size_t n_masked);
    /// Named schedules for a 3-layer masked head; the 2-layer MLP variants
    /// reuse the first two scalars.
    static BiasSchedule named(const std::string& name, size_t n_masked);
};

/// Global compactness target resolved into per-layer integer unit targets.
/// The plan depends only on (architecture, compactness, schedule), so Grow
/// and Prune runs at the same setting are budget-matched by construction.
struct CompactnessPlan {
    double global_c = 1.0;
    BiasSchedule schedule;
    std::vector<int> masked_layers;  // network layer indices
    std::vector<int> unit_targets;   // u*, parallel to masked_layers
    int cycles = 5;
    bool budget_note = false;  // a target was clamped away from 0

    int target_for_layer(int layer) const;
};

/// Fraction of active units a/d in (0,1]; 0.0 (with a warning flag) for an
/// all-zero mask.
double layer_compactness(const std::vector<uint8_t>& mask, bool* degenerate = nullptr);

/// Allocates the global kept-weight budget across masked layers.
///
/// Per-unit weight mass W_l counts incoming weights plus one bias. Shares
/// s_l ∝ b_l d_l W_l are normalized to the budget c * sum(d_l W_l), rounded
/// to units, clamped to [1, d_l], then reconciled one unit at a time until
/// no single-unit move brings sum(u_l W_l) closer to the budget.
CompactnessPlan plan_targets(const MaskedNetwork& net, double global_c,
                             const BiasSchedule& schedule, int cycles = 5);

enum class MaskAction { activate, deactivate };

/// Flips mask entries at the given indices. Activating an already-active
/// unit (or deactivating an inactive one) signals a scheduler bug and is
/// fatal. Parameters are untouched.
void apply_mask_edit(MaskedNetwork& net, int layer, const std::vector<int>& unit_indices,
                     MaskAction action);

}  // namespace plast
