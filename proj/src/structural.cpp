#include "plast/structural.hpp"

#include <algorithm>
#include <cmath>

namespace plast {

RewindSnapshot snapshot_params(const MaskedNetwork& net) {
    RewindSnapshot snap;
    for (const auto& l : net.layers) {
        snap.weight.push_back(l.weight);
        snap.bias.push_back(l.bias);
    }
    return snap;
}

void apply_imp_rewind(MaskedNetwork& net, const RewindSnapshot& snap) {
    if (snap.weight.size() != net.layers.size())
        throw ConfigError("rewind snapshot does not match the network");
    for (int li : net.masked_layer_indices()) {
        Layer& l = net.layers[li];
        const int in = l.spec.in_dim;
        for (int j = 0; j < l.spec.out_dim; ++j) {
            if (!l.mask[j]) continue;
            for (int i = 0; i < in; ++i) l.weight.at(j, i) = snap.weight[li].at(j, i);
            l.bias[j] = snap.bias[li][j];
        }
        const int ci = net.consumer_of(li);
        Layer& cons = net.layers[ci];
        for (int j = 0; j < l.spec.out_dim; ++j) {
            if (!l.mask[j]) continue;
            for (int o = 0; o < cons.spec.out_dim; ++o)
                cons.weight.at(o, j) = snap.weight[ci].at(o, j);
        }
    }
}

std::map<int, UnitSignals> unit_signals(const MaskedNetwork& net, const Batch& batch, double tau) {
    ForwardCache cache;
    Tensor logits = forward(net, batch.images, Mode::eval, &cache);
    LossResult loss = softmax_xent(logits, batch.labels);
    Gradients grads = backward(net, cache, loss.grad_logits);

    std::map<int, UnitSignals> out;
    const int b = batch.size();
    for (int li : net.masked_layer_indices()) {
        const Layer& layer = net.layers[li];
        const int units = layer.spec.out_dim;
        const int ci = net.consumer_of(li);
        const Layer& cons = net.layers[ci];
        const Tensor& z = cache.layers[li].z;
        const Tensor& dz_cons = grads.dz[ci];

        UnitSignals sig;
        sig.act_rate.assign(units, 0.0);
        sig.grad_mag.assign(units, 0.0);
        for (int bi = 0; bi < b; ++bi) {
            const double* zrow = z.row(bi);
            const double* dcrow = dz_cons.row(bi);
            for (int j = 0; j < units; ++j) {
                double value, deriv;
                switch (layer.spec.act) {
                    case Activation::relu:
                        value = zrow[j] > 0.0 ? zrow[j] : 0.0;
                        deriv = zrow[j] > 0.0 ? 1.0 : 0.0;
                        break;
                    case Activation::rsl:
                        rsl_value_deriv(zrow[j], cache.layers[li].alpha[j], net.rsl, &value,
                                        &deriv);
                        break;
                    default:
                        value = zrow[j];
                        deriv = 1.0;
                        break;
                }
                if (value > tau) sig.act_rate[j] += 1.0;
                // dL/dz_j through the consumer, identical to the true
                // backward value for active units and a virtual lift for
                // inactive ones.
                double dh = 0.0;
                for (int o = 0; o < cons.spec.out_dim; ++o)
                    dh += cons.weight.at(o, j) * dcrow[o];
                sig.grad_mag[j] += std::abs(deriv * dh);
            }
        }
        for (int j = 0; j < units; ++j) {
            sig.act_rate[j] /= b;
            sig.grad_mag[j] /= b;
        }
        out.emplace(li, std::move(sig));
    }
    return out;
}

std::vector<double> score_grow_activation(const MaskedNetwork& net, int layer, const Batch& batch,
                                          double tau) {
    const Layer& l = net.layers.at(layer);
    if (l.spec.kind == LayerKind::conv2d) {
        // Spatial variant: per channel, the batch mean of the per-pixel
        // exceedance fraction. The shipped architectures never mask conv
        // layers, so this path only serves channel scoring.
        ForwardCache cache;
        forward(net, batch.images, Mode::eval, &cache);
        const Tensor& z = cache.layers[layer].z;
        const int b = z.dim(0), ch = z.dim(1);
        const int hw = static_cast<int>(z.size()) / b / ch;
        std::vector<double> scores(ch, 0.0);
        for (int bi = 0; bi < b; ++bi) {
            for (int c = 0; c < ch; ++c) {
                const size_t base = (static_cast<size_t>(bi) * ch + c) * hw;
                int over = 0;
                for (int t = 0; t < hw; ++t) {
                    double value;
                    switch (l.spec.act) {
                        case Activation::relu: value = z[base + t] > 0 ? z[base + t] : 0; break;
                        case Activation::rsl:
                            rsl_value_deriv(z[base + t], net.rsl.eval_slope(), net.rsl, &value,
                                            nullptr);
                            break;
                        default: value = z[base + t]; break;
                    }
                    if (value > tau) ++over;
                }
                scores[c] += static_cast<double>(over) / hw;
            }
        }
        for (auto& s : scores) s /= b;
        return scores;
    }
    return unit_signals(net, batch, tau).at(layer).act_rate;
}

std::vector<double> score_grow_gradient(const MaskedNetwork& net, int layer, const Batch& batch) {
    return unit_signals(net, batch, 0.05).at(layer).grad_mag;
}

std::vector<double> score_prune_magnitude(const MaskedNetwork& net, int layer) {
    const Layer& l = net.layers.at(layer);
    std::vector<double> scores;
    if (l.spec.kind == LayerKind::linear) {
        scores.resize(l.spec.out_dim);
        for (int j = 0; j < l.spec.out_dim; ++j) {
            double s = 0.0;
            const double* row = l.weight.row(j);
            for (int i = 0; i < l.spec.in_dim; ++i) s += std::abs(row[i]);
            scores[j] = s / l.spec.in_dim;
        }
    } else if (l.spec.kind == LayerKind::conv2d) {
        const int per = l.spec.in_ch * l.spec.kernel * l.spec.kernel;
        scores.resize(l.spec.out_ch);
        for (int j = 0; j < l.spec.out_ch; ++j) {
            double s = 0.0;
            const double* base = l.weight.data() + static_cast<size_t>(j) * per;
            for (int i = 0; i < per; ++i) s += std::abs(base[i]);
            scores[j] = s / per;
        }
    } else {
        throw ConfigError("magnitude score needs a parameterized layer");
    }
    return scores;
}

int grow_quota(int active, int target, int cycle, int total_cycles, int width) {
    const int q = target - active;
    if (q < 0) throw ConfigError("grow quota: active count exceeds target");
    if (q == 0) return 0;
    const int spread =
        static_cast<int>(std::ceil(static_cast<double>(q) / std::max(1, total_cycles - cycle)));
    return std::min({q, spread, width - active});
}

int prune_quota(int active, int target, int cycle, int total_cycles) {
    const int q = active - target;
    if (q < 0) throw ConfigError("prune quota: active count below target");
    if (q == 0) return 0;
    const int spread =
        static_cast<int>(std::ceil(static_cast<double>(q) / std::max(1, total_cycles - cycle)));
    return std::min({q, spread, active});
}

std::vector<int> top_k_by_score(const std::vector<int>& eligible,
                                const std::vector<double>& scores, int n, bool highest) {
    std::vector<int> order = eligible;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        if (scores[a] != scores[b]) return highest ? scores[a] > scores[b] : scores[a] < scores[b];
        return a < b;
    });
    if (n > static_cast<int>(order.size()))
        throw ConfigError("top_k_by_score: quota exceeds candidate pool");
    order.resize(n);
    std::sort(order.begin(), order.end());
    return order;
}

void net2wider_insert(MaskedNetwork& net, int layer, const std::vector<int>& newborn_units,
                      const std::vector<double>& donor_rates, double noise_eps, Rng& rng,
                      std::vector<int>* donors_out) {
    Layer& l = net.layers.at(layer);
    Layer& cons = net.layers.at(net.consumer_of(layer));
    const std::vector<int> active = net.active_units(layer);
    if (active.empty()) throw ConfigError("net2wider: no active donors");
    // Donor order: highest activation rate first, cycling on repeats.
    std::vector<int> donor_order = active;
    std::stable_sort(donor_order.begin(), donor_order.end(), [&](int a, int b) {
        if (donor_rates[a] != donor_rates[b]) return donor_rates[a] > donor_rates[b];
        return a < b;
    });

    for (size_t k = 0; k < newborn_units.size(); ++k) {
        const int j = newborn_units[k];
        const int donor = donor_order[k % donor_order.size()];
        if (donors_out) donors_out->push_back(donor);
        // incoming copy (+ symmetry-breaking noise on weights only)
        for (int i = 0; i < l.spec.in_dim; ++i) {
            double w = l.weight.at(donor, i);
            if (noise_eps > 0.0) w += rng.uniform(-noise_eps, noise_eps);
            l.weight.at(j, i) = w;
        }
        l.bias[j] = l.bias[donor];
        // split the donor's current outgoing column in half
        for (int o = 0; o < cons.spec.out_dim; ++o) {
            const double half = 0.5 * cons.weight.at(o, donor);
            cons.weight.at(o, donor) = half;
            cons.weight.at(o, j) = half;
        }
        apply_mask_edit(net, layer, {j}, MaskAction::activate);
    }
}

EditEvent net2wider_insert(MaskedNetwork& net, int layer, int n_new,
                           const std::vector<double>& donor_rates, double noise_eps, Rng& rng) {
    const std::vector<int> inactive = net.inactive_units(layer);
    if (n_new > static_cast<int>(inactive.size()))
        throw ConfigError("net2wider: not enough inactive slots");
    std::vector<int> newborn(inactive.begin(), inactive.begin() + n_new);
    EditEvent ev;
    ev.action = "grow";
    LayerEdit edit;
    edit.layer = layer;
    edit.units = newborn;
    net2wider_insert(net, layer, newborn, donor_rates, noise_eps, rng, &edit.donors);
    ev.edits.push_back(std::move(edit));
    return ev;
}

std::vector<int> gradmax_select(const MaskedNetwork& net, int layer, const Batch& batch, int n) {
    if (n == 0) return {};
    const std::vector<double> scores = score_grow_gradient(net, layer, batch);
    return top_k_by_score(net.inactive_units(layer), scores, n, /*highest=*/true);
}

EditEvent grow_step(MaskedNetwork& net, const CompactnessPlan& plan, int cycle, const Batch& batch,
                    const GrowOptions& opts, Rng& rng) {
    const auto signals = unit_signals(net, batch, opts.tau);

    EditEvent ev;
    ev.cycle = cycle;
    ev.action = "grow";
    for (size_t mi = 0; mi < plan.masked_layers.size(); ++mi) {
        const int li = plan.masked_layers[mi];
        const int target = plan.unit_targets[mi];
        const Layer& layer = net.layers[li];
        const int n =
            grow_quota(net.active_count(li), target, cycle, plan.cycles, layer.spec.out_dim);
        if (n == 0) continue;

        const UnitSignals& sig = signals.at(li);
        const std::vector<double>& scores =
            opts.scorer == GrowScorer::activation ? sig.act_rate : sig.grad_mag;
        const std::vector<int> chosen =
            top_k_by_score(net.inactive_units(li), scores, n, /*highest=*/true);

        LayerEdit edit;
        edit.layer = li;
        edit.units = chosen;
        for (int j : chosen) edit.scores.push_back(scores[j]);

        if (opts.init == InitPolicy::net2wider) {
            net2wider_insert(net, li, chosen, sig.act_rate, opts.net2wider_noise, rng,
                             &edit.donors);
        } else {
            // Fresh newborn slices; the donor recorded here is the
            // highest-activation incumbent, used by moment transplant.
            const std::vector<int> active = net.active_units(li);
            int donor = -1;
            if (!active.empty()) {
                donor = active[0];
                for (int a : active)
                    if (sig.act_rate[a] > sig.act_rate[donor]) donor = a;
            }
            for (int j : chosen) {
                init_unit_incoming(net, li, j, rng);
                init_unit_outgoing(net, li, j, rng);
                edit.donors.push_back(donor);
            }
            apply_mask_edit(net, li, chosen, MaskAction::activate);
        }
        ev.edits.push_back(std::move(edit));
    }
    return ev;
}

EditEvent prune_step(MaskedNetwork& net, const CompactnessPlan& plan, int cycle,
                     const RewindSnapshot* rewind) {
    EditEvent ev;
    ev.cycle = cycle;
    ev.action = "prune";
    for (size_t mi = 0; mi < plan.masked_layers.size(); ++mi) {
        const int li = plan.masked_layers[mi];
        const int target = plan.unit_targets[mi];
        const int k = prune_quota(net.active_count(li), target, cycle, plan.cycles);
        if (k == 0) continue;

        const std::vector<double> scores = score_prune_magnitude(net, li);
        const std::vector<int> active = net.active_units(li);
        const std::vector<int> doomed = top_k_by_score(active, scores, k, /*highest=*/false);

        LayerEdit edit;
        edit.layer = li;
        edit.units = doomed;
        for (int j : doomed) edit.scores.push_back(scores[j]);
        for (int j : active)
            if (!std::binary_search(doomed.begin(), doomed.end(), j)) edit.kept.push_back(j);

        apply_mask_edit(net, li, doomed, MaskAction::deactivate);
        ev.edits.push_back(std::move(edit));
    }
    if (rewind && !ev.edits.empty()) apply_imp_rewind(net, *rewind);
    return ev;
}

}  // namespace plast
