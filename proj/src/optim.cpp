#include "plast/optim.hpp"

#include <cmath>

namespace plast {

OptimizerState OptimizerState::make(OptimKind kind, double lr, const MaskedNetwork& net) {
    OptimizerState s;
    s.kind = kind;
    s.lr0 = lr;
    s.reset(net);
    return s;
}

void OptimizerState::reset(const MaskedNetwork& net) {
    step_count = 0;
    m_w.clear();
    v_w.clear();
    m_b.clear();
    v_b.clear();
    if (kind != OptimKind::adam) return;
    for (const auto& layer : net.layers) {
        m_w.emplace_back(layer.weight.shape());
        v_w.emplace_back(layer.weight.shape());
        m_b.emplace_back(layer.bias.shape());
        v_b.emplace_back(layer.bias.shape());
    }
}

namespace {

void check_grad_finite(const Tensor& g) {
    for (double v : g.values())
        if (!std::isfinite(v)) throw NumericFault("non-finite gradient");
}

void sgd_update(Tensor& param, const Tensor& grad, double lr) {
    check_grad_finite(grad);
    for (size_t i = 0; i < param.size(); ++i) param[i] -= lr * grad[i];
}

void adam_update(Tensor& param, const Tensor& grad, Tensor& m, Tensor& v,
                 const OptimizerState& s, double lr, double bc1, double bc2) {
    check_grad_finite(grad);
    for (size_t i = 0; i < param.size(); ++i) {
        const double g = grad[i];
        m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * g;
        v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * g * g;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        param[i] -= lr * mhat / (std::sqrt(vhat) + s.eps);
    }
}

}  // namespace

void sgd_step(MaskedNetwork& net, const Gradients& grads, double lr) {
    for (size_t li = 0; li < net.layers.size(); ++li) {
        if (!net.layers[li].spec.has_params()) continue;
        sgd_update(net.layers[li].weight, grads.weight[li], lr);
        sgd_update(net.layers[li].bias, grads.bias[li], lr);
    }
}

void adam_step(MaskedNetwork& net, const Gradients& grads, OptimizerState& state, double lr) {
    if (state.m_w.size() != net.layers.size())
        throw ConfigError("adam: state not initialized for this network");
    state.step_count += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
    for (size_t li = 0; li < net.layers.size(); ++li) {
        if (!net.layers[li].spec.has_params()) continue;
        adam_update(net.layers[li].weight, grads.weight[li], state.m_w[li], state.v_w[li], state,
                    lr, bc1, bc2);
        adam_update(net.layers[li].bias, grads.bias[li], state.m_b[li], state.v_b[li], state, lr,
                    bc1, bc2);
    }
}

void optim_step(MaskedNetwork& net, const Gradients& grads, OptimizerState& state, double lr) {
    if (state.kind == OptimKind::adam) {
        adam_step(net, grads, state, lr);
    } else {
        state.step_count += 1;
        sgd_step(net, grads, lr);
    }
}

double cosine_lr(double lr0, double epoch, double t_max) {
    if (t_max <= 0.0) return lr0;
    return lr0 * 0.5 * (1.0 + std::cos(M_PI * epoch / t_max));
}

namespace {

// Visits every parameter belonging to a newborn slice: the unit's incoming
// weight row and bias in its own layer, and the consumer's column.
template <typename Fn>
void visit_slice(MaskedNetwork& net, const UnitSlice& s, Fn&& fn) {
    Layer& own = net.layers.at(s.layer);
    const int in = own.spec.in_dim;
    double* wrow = own.weight.row(s.unit);
    for (int i = 0; i < in; ++i) fn(wrow[i]);
    fn(own.bias[s.unit]);
    Layer& consumer = net.layers.at(net.consumer_of(s.layer));
    for (int o = 0; o < consumer.spec.out_dim; ++o) fn(consumer.weight.at(o, s.unit));
}

}  // namespace

void TwoSpeedController::register_birth(const std::vector<UnitSlice>& slices) {
    if (slices.empty() || window_ <= 0) return;
    entries_.push_back({slices, window_});
}

void TwoSpeedController::capture(const MaskedNetwork& net) {
    captured_.clear();
    if (entries_.empty() || r_ == 1.0) return;
    captured_.resize(entries_.size());
    for (size_t e = 0; e < entries_.size(); ++e) {
        captured_[e].resize(entries_[e].slices.size());
        for (size_t i = 0; i < entries_[e].slices.size(); ++i) {
            auto& dst = captured_[e][i];
            // const_cast is safe: the visit only reads through fn here
            visit_slice(const_cast<MaskedNetwork&>(net), entries_[e].slices[i],
                        [&dst](double& v) { dst.push_back(v); });
        }
    }
}

void TwoSpeedController::apply(MaskedNetwork& net) {
    if (entries_.empty()) return;
    if (r_ != 1.0 && !captured_.empty()) {
        for (size_t e = 0; e < entries_.size(); ++e) {
            for (size_t i = 0; i < entries_[e].slices.size(); ++i) {
                size_t k = 0;
                const auto& old = captured_[e][i];
                visit_slice(net, entries_[e].slices[i], [&](double& v) {
                    v = old[k] + r_ * (v - old[k]);
                    ++k;
                });
            }
        }
    }
    for (auto& e : entries_) e.remaining -= 1;
    std::erase_if(entries_, [](const Entry& e) { return e.remaining <= 0; });
    captured_.clear();
}

void moment_transplant(OptimizerState& state, const MaskedNetwork& net, int layer,
                       const std::map<int, int>& donor_map) {
    if (state.kind != OptimKind::adam)
        throw ConfigError("moment transplant requires an adam optimizer");
    if (state.m_w.empty()) throw ConfigError("moment transplant: uninitialized state");
    const Layer& own = net.layers.at(layer);
    const int consumer = net.consumer_of(layer);
    const Layer& cons = net.layers.at(consumer);
    const int in = own.spec.in_dim;
    for (const auto& [newborn, donor] : donor_map) {
        for (int i = 0; i < in; ++i) {
            state.m_w[layer].at(newborn, i) = state.m_w[layer].at(donor, i);
            state.v_w[layer].at(newborn, i) = state.v_w[layer].at(donor, i);
        }
        state.m_b[layer][newborn] = state.m_b[layer][donor];
        state.v_b[layer][newborn] = state.v_b[layer][donor];
        for (int o = 0; o < cons.spec.out_dim; ++o) {
            state.m_w[consumer].at(o, newborn) = state.m_w[consumer].at(o, donor);
            state.v_w[consumer].at(o, newborn) = state.v_w[consumer].at(o, donor);
        }
    }
}

}  // namespace plast
