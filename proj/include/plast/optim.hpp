#pragma once

#include <map>
#include <vector>

#include "plast/network.hpp"

namespace plast {

enum class OptimKind { sgd, adam };

/// Optimizer with per-parameter state. Adam keeps first/second moment
/// buffers shaped like the parameters plus a shared step counter.
struct OptimizerState {
    OptimKind kind = OptimKind::sgd;
    double lr0 = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long step_count = 0;
    std::vector<Tensor> m_w, v_w, m_b, v_b;  // per layer; empty for SGD

    static OptimizerState make(OptimKind kind, double lr, const MaskedNetwork& net);
    void reset(const MaskedNetwork& net);
};

/// theta <- theta - lr * g, in place. Non-finite gradients raise NumericFault.
void sgd_step(MaskedNetwork& net, const Gradients& grads, double lr);

/// Standard bias-corrected Adam update, in place.
void adam_step(MaskedNetwork& net, const Gradients& grads, OptimizerState& state, double lr);

/// One optimizer step at the given learning rate (dispatches on state.kind).
void optim_step(MaskedNetwork& net, const Gradients& grads, OptimizerState& state, double lr);

/// Cosine annealing to zero: lr0 * 0.5 * (1 + cos(pi * epoch / t_max)).
double cosine_lr(double lr0, double epoch, double t_max);

/// Newborn parameter slice: the incoming row (weight + bias) of `unit` in
/// `layer` plus the consumer's input column reading from it.
struct UnitSlice {
    int layer = 0;
    int unit = 0;
};

/// Post-step delta scaling on newborn slices:
///   theta <- theta_old + r * (theta_new - theta_old)
/// applied for `window` optimizer steps after each registered birth.
/// r == 1 is an exact no-op.
class TwoSpeedController {
public:
    TwoSpeedController(double r, int window) : r_(r), window_(window) {}

    void register_birth(const std::vector<UnitSlice>& slices);

    /// Copies the current values of every live slice; call right before the
    /// optimizer step.
    void capture(const MaskedNetwork& net);

    /// Rescales the stepped values; call right after the optimizer step.
    void apply(MaskedNetwork& net);

    bool active() const { return !entries_.empty(); }
    double multiplier() const { return r_; }
    int window() const { return window_; }

private:
    struct Entry {
        std::vector<UnitSlice> slices;
        int remaining = 0;
    };
    double r_;
    int window_;
    std::vector<Entry> entries_;
    // captured pre-step values, parallel to entries_/slices
    std::vector<std::vector<std::vector<double>>> captured_;
};

/// Copies Adam moment buffers of each donor unit's slices onto the matching
/// newborn slices. Parameters, masks and the step counter are untouched.
/// donor_map: newborn unit -> donor unit, all within `layer`.
void moment_transplant(OptimizerState& state, const MaskedNetwork& net, int layer,
                       const std::map<int, int>& donor_map);

}  // namespace plast
