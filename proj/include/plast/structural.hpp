#pragma once

#include <map>
#include <string>
#include <vector>

#include "plast/budget.hpp"
#include "plast/network.hpp"

namespace plast {

struct Batch {
    Tensor images;
    std::vector<int> labels;
    int size() const { return images.rows(); }
};

enum class GrowScorer { activation, gradient, gradmax };
enum class InitPolicy { fresh_kaiming, net2wider };

struct LayerEdit {
    int layer = 0;
    std::vector<int> units;      // activated (grow) or removed (prune)
    std::vector<double> scores;  // parallel to units
    std::vector<int> donors;     // grow: donor per newborn (net2wider / transplant)
    std::vector<int> kept;       // prune: survivors at decision time
};

struct EditEvent {
    int cycle = 0;
    std::string action;  // "grow" | "prune"
    std::vector<LayerEdit> edits;

    const LayerEdit* edit_for(int layer) const {
        for (const auto& e : edits)
            if (e.layer == layer) return &e;
        return nullptr;
    }
};

/// Full parameter copy used by IMP-style rewinding. Immutable once taken.
struct RewindSnapshot {
    std::vector<Tensor> weight;
    std::vector<Tensor> bias;
};

RewindSnapshot snapshot_params(const MaskedNetwork& net);

/// Rewinds surviving parameter slices of every masked layer to the snapshot:
/// incoming rows + biases of active units, and the consumer's input columns
/// for active producers.
void apply_imp_rewind(MaskedNetwork& net, const RewindSnapshot& snap);

/// Per-unit forward/backward vitality on one batch, measured in eval mode.
/// act_rate[j]: fraction of post-activation values phi(z_j) exceeding tau
/// (candidates scored as if their mask were lifted, downstream still
/// blocked). grad_mag[j]: mean |dL/dz_j| over the batch, with the same
/// virtual lift for inactive units.
struct UnitSignals {
    std::vector<double> act_rate;
    std::vector<double> grad_mag;
};

std::map<int, UnitSignals> unit_signals(const MaskedNetwork& net, const Batch& batch, double tau);

/// Activation-frequency grow scores for the inactive units of one layer.
/// Returned per-unit over the whole layer; callers select candidates.
std::vector<double> score_grow_activation(const MaskedNetwork& net, int layer, const Batch& batch,
                                          double tau);

/// Gradient-magnitude grow scores (|dL/dz_j| batch mean, virtual unmask).
std::vector<double> score_grow_gradient(const MaskedNetwork& net, int layer, const Batch& batch);

/// Mean absolute incoming-weight magnitude per unit (active or not).
std::vector<double> score_prune_magnitude(const MaskedNetwork& net, int layer);

/// Units to activate this cycle: evenly spreads the remaining deficit
/// q = target - active over the remaining cycles, closing it at cycle T.
int grow_quota(int active, int target, int cycle, int total_cycles, int width);

/// Units to remove this cycle; same spreading on the prune side.
int prune_quota(int active, int target, int cycle, int total_cycles);

struct GrowOptions {
    GrowScorer scorer = GrowScorer::activation;
    InitPolicy init = InitPolicy::fresh_kaiming;
    double tau = 0.05;
    double net2wider_noise = 1e-3;
};

/// One grow cycle over all masked layers: scores candidates on the batch,
/// activates the per-layer quota (ties to the lowest unit index) and
/// initializes newborn slices. No rewind. Masks are edited in place.
EditEvent grow_step(MaskedNetwork& net, const CompactnessPlan& plan, int cycle, const Batch& batch,
                    const GrowOptions& opts, Rng& rng);

/// One prune cycle: removes the lowest-magnitude active units per layer,
/// then rewinds surviving slices when a snapshot is given.
EditEvent prune_step(MaskedNetwork& net, const CompactnessPlan& plan, int cycle,
                     const RewindSnapshot* rewind);

/// Function-preserving widening. Each newborn copies its donor's incoming
/// slice (plus U[-eps, eps] noise on the weights); the donor's outgoing
/// column is halved and shared with the newborn. Donors cycle over active
/// units sorted by activation rate, re-splitting on repeats, so the forward
/// map is preserved after every single insertion when eps = 0.
void net2wider_insert(MaskedNetwork& net, int layer, const std::vector<int>& newborn_units,
                      const std::vector<double>& donor_rates, double noise_eps, Rng& rng,
                      std::vector<int>* donors_out = nullptr);

/// Convenience form: widens by n_new using the lowest-index inactive slots.
EditEvent net2wider_insert(MaskedNetwork& net, int layer, int n_new,
                           const std::vector<double>& donor_rates, double noise_eps, Rng& rng);

/// GradMax-style recruitment: the top-n inactive units by gradient score.
/// Selection only; insertion and optimizer handling are unchanged.
std::vector<int> gradmax_select(const MaskedNetwork& net, int layer, const Batch& batch, int n);

/// Top-n indices from `eligible` by score, ties to the lowest index.
std::vector<int> top_k_by_score(const std::vector<int>& eligible,
                                const std::vector<double>& scores, int n, bool highest);

}  // namespace plast
