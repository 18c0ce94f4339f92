#include "plast/network.hpp"

#include <algorithm>
#include <cmath>

namespace plast {

namespace {

void check_finite(const Tensor& t, const char* what, int layer) {
    for (double v : t.values()) {
        if (!std::isfinite(v))
            throw NumericFault(std::string("non-finite ") + what + " in layer " +
                               std::to_string(layer));
    }
}

double relu(double z) { return z > 0.0 ? z : 0.0; }
double relu_deriv(double z) { return z > 0.0 ? 1.0 : 0.0; }

// Smooth gate g(z) = (1 + exp(-c z))^(-p) and its derivative, computed in
// log space so large |z| cannot overflow.
void rsl_gate(double z, const RslParams& p, double* g, double* gprime) {
    const double t = p.c * z;
    double L;  // log(1 + exp(-t))
    if (t >= 0.0) {
        L = std::log1p(std::exp(-t));
    } else {
        L = -t + std::log1p(std::exp(t));
    }
    *g = std::exp(-p.p * L);
    *gprime = p.p * p.c * std::exp(-t - (p.p + 1.0) * L);
}

}  // namespace

void rsl_value_deriv(double z, double alpha, const RslParams& p, double* value, double* deriv) {
    double g, gp;
    rsl_gate(z, p, &g, &gp);
    if (value) *value = g * z + (1.0 - g) * alpha * z;
    if (deriv) *deriv = g + alpha * (1.0 - g) + (1.0 - alpha) * z * gp;
}

Tensor rsl_activation(const Tensor& z, const RslParams& params, Mode mode, Rng* rng) {
    params.validate();
    if (z.shape().empty()) return z;
    const int units = z.shape().back();
    Tensor alphas({units});
    if (mode == Mode::train) {
        if (!rng) throw ConfigError("rsl: train mode needs an rng");
        for (int j = 0; j < units; ++j) alphas[j] = rng->uniform(params.lower, params.upper);
    } else {
        alphas.fill(params.eval_slope());
    }
    Tensor out = z;
    const size_t n = z.size();
    for (size_t i = 0; i < n; ++i) {
        double v;
        rsl_value_deriv(z[i], alphas[i % units], params, &v, nullptr);
        out[i] = v;
    }
    return out;
}

double kaiming_bound(int fan_in) {
    if (fan_in < 1) throw ConfigError("kaiming init: fan_in must be >= 1");
    return std::sqrt(6.0 / fan_in);
}

Tensor kaiming_uniform_init(const std::vector<int>& shape, int fan_in, Rng& rng) {
    const double bound = kaiming_bound(fan_in);
    Tensor t(shape);
    for (auto& v : t.values()) v = rng.uniform(-bound, bound);
    return t;
}

std::vector<int> MaskedNetwork::masked_layer_indices() const {
    std::vector<int> out;
    for (size_t i = 0; i < layers.size(); ++i)
        if (layers[i].spec.masked) out.push_back(static_cast<int>(i));
    return out;
}

int MaskedNetwork::consumer_of(int layer) const {
    for (size_t i = layer + 1; i < layers.size(); ++i)
        if (layers[i].spec.has_params()) return static_cast<int>(i);
    throw ConfigError("layer " + std::to_string(layer) + " has no consumer");
}

int MaskedNetwork::active_count(int layer) const {
    const auto& m = layers.at(layer).mask;
    return static_cast<int>(std::count(m.begin(), m.end(), uint8_t{1}));
}

std::vector<int> MaskedNetwork::active_units(int layer) const {
    std::vector<int> out;
    const auto& m = layers.at(layer).mask;
    for (size_t j = 0; j < m.size(); ++j)
        if (m[j]) out.push_back(static_cast<int>(j));
    return out;
}

std::vector<int> MaskedNetwork::inactive_units(int layer) const {
    std::vector<int> out;
    const auto& m = layers.at(layer).mask;
    for (size_t j = 0; j < m.size(); ++j)
        if (!m[j]) out.push_back(static_cast<int>(j));
    return out;
}

namespace {

// z = x W^T + b  via a transposed weight copy so the inner loop is contiguous.
Tensor linear_forward(const Tensor& x, const Layer& layer) {
    const int batch = x.dim(0);
    const int in = layer.spec.in_dim;
    const int out = layer.spec.out_dim;
    if (x.cols() != in) throw ConfigError("linear: input width mismatch");
    Tensor wt({in, out});
    for (int o = 0; o < out; ++o) {
        const double* wrow = layer.weight.row(o);
        for (int i = 0; i < in; ++i) wt.at(i, o) = wrow[i];
    }
    Tensor z({batch, out});
    for (int bi = 0; bi < batch; ++bi) {
        double* zrow = z.row(bi);
        for (int o = 0; o < out; ++o) zrow[o] = layer.bias[o];
    }
    matmul_accumulate(x.data(), batch, in, wt.data(), out, z.data());
    return z;
}

Tensor conv_forward(const Tensor& x, const Layer& layer) {
    const auto& s = layer.spec;
    const int batch = x.dim(0), ic = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (ic != s.in_ch) throw ConfigError("conv2d: channel mismatch");
    const int k = s.kernel, pad = s.padding;
    const int oh = h + 2 * pad - k + 1, ow = w + 2 * pad - k + 1;
    Tensor z({batch, s.out_ch, oh, ow});
    for (int bi = 0; bi < batch; ++bi) {
        for (int oc = 0; oc < s.out_ch; ++oc) {
            const double bias = layer.bias[oc];
            for (int y = 0; y < oh; ++y) {
                for (int xo = 0; xo < ow; ++xo) {
                    double acc = bias;
                    for (int c = 0; c < ic; ++c) {
                        for (int ky = 0; ky < k; ++ky) {
                            const int iy = y + ky - pad;
                            if (iy < 0 || iy >= h) continue;
                            const double* xrow =
                                x.data() + (((static_cast<size_t>(bi) * ic + c) * h + iy) * w);
                            const double* wrow =
                                layer.weight.data() +
                                (((static_cast<size_t>(oc) * ic + c) * k + ky) * k);
                            for (int kx = 0; kx < k; ++kx) {
                                const int ix = xo + kx - pad;
                                if (ix < 0 || ix >= w) continue;
                                acc += xrow[ix] * wrow[kx];
                            }
                        }
                    }
                    z[((static_cast<size_t>(bi) * s.out_ch + oc) * oh + y) * ow + xo] = acc;
                }
            }
        }
    }
    return z;
}

Tensor maxpool_forward(const Tensor& x, int pool, std::vector<int>* argmax) {
    const int batch = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int oh = h / pool, ow = w / pool;
    Tensor out({batch, ch, oh, ow});
    argmax->assign(out.size(), -1);
    size_t idx = 0;
    for (int bi = 0; bi < batch; ++bi) {
        for (int c = 0; c < ch; ++c) {
            const size_t plane = (static_cast<size_t>(bi) * ch + c) * h * w;
            for (int y = 0; y < oh; ++y) {
                for (int xo = 0; xo < ow; ++xo, ++idx) {
                    double best = -std::numeric_limits<double>::infinity();
                    int best_at = -1;
                    for (int py = 0; py < pool; ++py) {
                        for (int px = 0; px < pool; ++px) {
                            const int iy = y * pool + py, ix = xo * pool + px;
                            const size_t at = plane + static_cast<size_t>(iy) * w + ix;
                            if (x[at] > best) {
                                best = x[at];
                                best_at = static_cast<int>(at);
                            }
                        }
                    }
                    out[idx] = best;
                    (*argmax)[idx] = best_at;
                }
            }
        }
    }
    return out;
}

void apply_activation_and_mask(Tensor& z, Tensor& h, LayerCache& lc, const Layer& layer,
                               const RslParams& rsl, Mode mode, Rng* rsl_rng) {
    const auto& s = layer.spec;
    const int units = s.units();
    const int per_unit = static_cast<int>(z.size()) / z.dim(0) / units;  // spatial extent
    const int batch = z.dim(0);

    if (s.act == Activation::rsl) {
        rsl.validate();
        lc.alpha = Tensor({units});
        if (mode == Mode::train) {
            if (!rsl_rng) throw ConfigError("rsl: train-mode forward needs an rng");
            for (int j = 0; j < units; ++j) lc.alpha[j] = rsl_rng->uniform(rsl.lower, rsl.upper);
        } else {
            lc.alpha.fill(rsl.eval_slope());
        }
    }

    h = Tensor(z.shape());
    for (int bi = 0; bi < batch; ++bi) {
        for (int j = 0; j < units; ++j) {
            const size_t base = (static_cast<size_t>(bi) * units + j) * per_unit;
            const bool dead = s.masked && !layer.mask[j];
            for (int t = 0; t < per_unit; ++t) {
                if (dead) {
                    h[base + t] = 0.0;  // exact zero; raw value never leaks downstream
                    continue;
                }
                const double zv = z[base + t];
                double hv;
                switch (s.act) {
                    case Activation::relu: hv = relu(zv); break;
                    case Activation::rsl:
                        rsl_value_deriv(zv, lc.alpha[j], rsl, &hv, nullptr);
                        break;
                    default: hv = zv; break;
                }
                h[base + t] = hv;
            }
        }
    }
}

}  // namespace

Tensor forward(const MaskedNetwork& net, const Tensor& x, Mode mode, ForwardCache* cache,
               Rng* rsl_rng) {
    if (x.shape().size() != net.input_shape.size() + 1)
        throw ConfigError("forward: input rank mismatch");
    for (size_t i = 0; i < net.input_shape.size(); ++i)
        if (x.dim(static_cast<int>(i) + 1) != net.input_shape[i])
            throw ConfigError("forward: input shape mismatch");

    if (cache) {
        cache->mode = mode;
        cache->input = x;
        cache->layers.assign(net.layers.size(), {});
    }

    Tensor cur = x;
    for (size_t li = 0; li < net.layers.size(); ++li) {
        const Layer& layer = net.layers[li];
        const auto& s = layer.spec;
        LayerCache local;
        LayerCache& lc = cache ? cache->layers[li] : local;

        switch (s.kind) {
            case LayerKind::linear: {
                Tensor z = linear_forward(cur, layer);
                check_finite(z, "pre-activation", static_cast<int>(li));
                Tensor h;
                apply_activation_and_mask(z, h, lc, layer, net.rsl, mode, rsl_rng);
                lc.z = std::move(z);
                cur = h;
                break;
            }
            case LayerKind::conv2d: {
                Tensor z = conv_forward(cur, layer);
                check_finite(z, "pre-activation", static_cast<int>(li));
                Tensor h;
                apply_activation_and_mask(z, h, lc, layer, net.rsl, mode, rsl_rng);
                lc.z = std::move(z);
                cur = h;
                break;
            }
            case LayerKind::maxpool2d: {
                cur = maxpool_forward(cur, s.pool, &lc.argmax);
                break;
            }
            case LayerKind::flatten: {
                const int batch = cur.dim(0);
                const int feat = static_cast<int>(cur.size()) / batch;
                Tensor flat = Tensor::from({batch, feat}, cur.values());
                cur = std::move(flat);
                break;
            }
        }
        if (cache) cache->layers[li].h = cur;
    }
    check_finite(cur, "logits", static_cast<int>(net.layers.size()) - 1);
    return cur;
}

namespace {

double act_deriv(const LayerSpec& s, const RslParams& rsl, const Tensor& alpha, int unit,
                 double z) {
    switch (s.act) {
        case Activation::relu: return relu_deriv(z);
        case Activation::rsl: {
            double d;
            rsl_value_deriv(z, alpha[unit], rsl, nullptr, &d);
            return d;
        }
        default: return 1.0;
    }
}

}  // namespace

Gradients backward(const MaskedNetwork& net, const ForwardCache& cache,
                   const Tensor& grad_logits) {
    if (cache.layers.size() != net.layers.size())
        throw ConfigError("backward: cache does not match network");

    Gradients g;
    g.weight.resize(net.layers.size());
    g.bias.resize(net.layers.size());
    g.dz.resize(net.layers.size());

    Tensor delta = grad_logits;  // gradient w.r.t. the current layer's output
    for (int li = static_cast<int>(net.layers.size()) - 1; li >= 0; --li) {
        const Layer& layer = net.layers[li];
        const auto& s = layer.spec;
        const LayerCache& lc = cache.layers[li];
        const Tensor& input = li == 0 ? cache.input : cache.layers[li - 1].h;

        switch (s.kind) {
            case LayerKind::linear: {
                const int batch = delta.dim(0), out = s.out_dim, in = s.in_dim;
                if (delta.cols() != out) throw ConfigError("backward: delta width mismatch");
                // dz = delta ⊙ mask ⊙ phi'(z)
                Tensor dz({batch, out});
                for (int bi = 0; bi < batch; ++bi) {
                    const double* drow = delta.row(bi);
                    const double* zrow = lc.z.row(bi);
                    double* dzrow = dz.row(bi);
                    for (int o = 0; o < out; ++o) {
                        if (s.masked && !layer.mask[o]) {
                            dzrow[o] = 0.0;
                            continue;
                        }
                        dzrow[o] = drow[o] * act_deriv(s, net.rsl, lc.alpha, o, zrow[o]);
                    }
                }
                // dW[o][i] = sum_b dz[b][o] x[b][i];  db[o] = sum_b dz[b][o]
                Tensor dw(layer.weight.shape());
                Tensor db(layer.bias.shape());
                for (int bi = 0; bi < batch; ++bi) {
                    const double* dzrow = dz.row(bi);
                    const double* xrow = input.row(bi);
                    for (int o = 0; o < out; ++o) {
                        const double dv = dzrow[o];
                        if (dv == 0.0) continue;
                        db[o] += dv;
                        double* dwrow = dw.row(o);
                        for (int i = 0; i < in; ++i) dwrow[i] += dv * xrow[i];
                    }
                }
                // dX = dz W   (W rows are contiguous over the input index);
                // the input gradient of the first layer is never consumed.
                if (li > 0) {
                    Tensor dx({batch, in});
                    matmul_accumulate(dz.data(), batch, out, layer.weight.data(), in, dx.data());
                    delta = std::move(dx);
                }
                g.weight[li] = std::move(dw);
                g.bias[li] = std::move(db);
                g.dz[li] = std::move(dz);
                break;
            }
            case LayerKind::conv2d: {
                const int batch = delta.dim(0), oc = s.out_ch, ic = s.in_ch;
                const int oh = delta.dim(2), ow = delta.dim(3);
                const int h = input.dim(2), w = input.dim(3);
                const int k = s.kernel, pad = s.padding;
                Tensor dz(delta.shape());
                for (int bi = 0; bi < batch; ++bi) {
                    for (int c = 0; c < oc; ++c) {
                        const size_t plane = (static_cast<size_t>(bi) * oc + c) *
                                             static_cast<size_t>(oh) * ow;
                        const bool dead = s.masked && !layer.mask[c];
                        for (int t = 0; t < oh * ow; ++t) {
                            if (dead) {
                                dz[plane + t] = 0.0;
                                continue;
                            }
                            dz[plane + t] =
                                delta[plane + t] *
                                act_deriv(s, net.rsl, lc.alpha, c, lc.z[plane + t]);
                        }
                    }
                }
                Tensor dw(layer.weight.shape());
                Tensor db(layer.bias.shape());
                Tensor dx(input.shape());
                for (int bi = 0; bi < batch; ++bi) {
                    for (int c = 0; c < oc; ++c) {
                        const size_t zplane =
                            (static_cast<size_t>(bi) * oc + c) * static_cast<size_t>(oh) * ow;
                        for (int y = 0; y < oh; ++y) {
                            for (int xo = 0; xo < ow; ++xo) {
                                const double dv = dz[zplane + static_cast<size_t>(y) * ow + xo];
                                if (dv == 0.0) continue;
                                db[c] += dv;
                                for (int cc = 0; cc < ic; ++cc) {
                                    const size_t xplane =
                                        (static_cast<size_t>(bi) * ic + cc) *
                                        static_cast<size_t>(h) * w;
                                    for (int ky = 0; ky < k; ++ky) {
                                        const int iy = y + ky - pad;
                                        if (iy < 0 || iy >= h) continue;
                                        for (int kx = 0; kx < k; ++kx) {
                                            const int ix = xo + kx - pad;
                                            if (ix < 0 || ix >= w) continue;
                                            const size_t xat =
                                                xplane + static_cast<size_t>(iy) * w + ix;
                                            const size_t wat =
                                                ((static_cast<size_t>(c) * ic + cc) * k + ky) *
                                                    k +
                                                kx;
                                            dw[wat] += dv * input[xat];
                                            dx[xat] += dv * layer.weight[wat];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                g.weight[li] = std::move(dw);
                g.bias[li] = std::move(db);
                g.dz[li] = std::move(dz);
                delta = std::move(dx);
                break;
            }
            case LayerKind::maxpool2d: {
                Tensor dx(input.shape());
                for (size_t t = 0; t < delta.size(); ++t) {
                    if (lc.argmax[t] >= 0) dx[lc.argmax[t]] += delta[t];
                }
                delta = std::move(dx);
                break;
            }
            case LayerKind::flatten: {
                delta = Tensor::from(input.shape(), delta.values());
                break;
            }
        }
    }
    return g;
}

LossResult softmax_xent(const Tensor& logits, const std::vector<int>& labels) {
    const int batch = logits.dim(0);
    const int classes = logits.cols();
    if (static_cast<int>(labels.size()) != batch)
        throw ConfigError("softmax_xent: label count != batch size");
    LossResult res;
    res.grad_logits = Tensor({batch, classes});
    double total = 0.0;
    const double inv_b = 1.0 / batch;
    for (int bi = 0; bi < batch; ++bi) {
        const int y = labels[bi];
        if (y < 0 || y >= classes) throw ConfigError("softmax_xent: label out of range");
        const double* row = logits.row(bi);
        double mx = row[0];
        for (int c = 1; c < classes; ++c) mx = std::max(mx, row[c]);
        double sum = 0.0;
        for (int c = 0; c < classes; ++c) sum += std::exp(row[c] - mx);
        const double lse = mx + std::log(sum);
        total += lse - row[y];
        double* grow = res.grad_logits.row(bi);
        for (int c = 0; c < classes; ++c)
            grow[c] = (std::exp(row[c] - lse) - (c == y ? 1.0 : 0.0)) * inv_b;
    }
    res.loss = total * inv_b;
    if (!std::isfinite(res.loss)) throw NumericFault("non-finite loss");
    return res;
}

MaskedNetwork make_mlp(int hidden, Activation act, int input_dim, int classes) {
    MaskedNetwork net;
    net.input_shape = {input_dim};
    net.num_classes = classes;
    auto hidden_spec = [&](int in, int out) {
        LayerSpec s;
        s.kind = LayerKind::linear;
        s.in_dim = in;
        s.out_dim = out;
        s.act = act;
        s.masked = true;
        return s;
    };
    LayerSpec head;
    head.kind = LayerKind::linear;
    head.in_dim = hidden;
    head.out_dim = classes;

    for (const auto& s : {hidden_spec(input_dim, hidden), hidden_spec(hidden, hidden), head}) {
        Layer l;
        l.spec = s;
        l.weight = Tensor({s.out_dim, s.in_dim});
        l.bias = Tensor({s.out_dim});
        if (s.masked) l.mask.assign(s.out_dim, 1);
        net.layers.push_back(std::move(l));
    }
    return net;
}

MaskedNetwork make_convnet(int classes, Activation act, int h1, int h2, int h3) {
    MaskedNetwork net;
    net.input_shape = {3, 32, 32};
    net.num_classes = classes;

    auto conv = [&](int ic, int oc) {
        LayerSpec s;
        s.kind = LayerKind::conv2d;
        s.in_ch = ic;
        s.out_ch = oc;
        s.kernel = 3;
        s.padding = 1;
        s.act = act;
        return s;
    };
    auto pool = [] {
        LayerSpec s;
        s.kind = LayerKind::maxpool2d;
        s.pool = 2;
        return s;
    };
    auto flat = [] {
        LayerSpec s;
        s.kind = LayerKind::flatten;
        return s;
    };
    auto fc = [&](int in, int out, bool masked, Activation a) {
        LayerSpec s;
        s.kind = LayerKind::linear;
        s.in_dim = in;
        s.out_dim = out;
        s.act = a;
        s.masked = masked;
        return s;
    };

    std::vector<LayerSpec> specs = {conv(3, 32),  pool(), conv(32, 64), pool(), flat(),
                                    fc(8 * 8 * 64, h1, true, act), fc(h1, h2, true, act),
                                    fc(h2, h3, true, act), fc(h3, classes, false, Activation::none)};
    for (const auto& s : specs) {
        Layer l;
        l.spec = s;
        if (s.kind == LayerKind::linear) {
            l.weight = Tensor({s.out_dim, s.in_dim});
            l.bias = Tensor({s.out_dim});
        } else if (s.kind == LayerKind::conv2d) {
            l.weight = Tensor({s.out_ch, s.in_ch, s.kernel, s.kernel});
            l.bias = Tensor({s.out_ch});
        }
        if (s.masked) l.mask.assign(s.units(), 1);
        net.layers.push_back(std::move(l));
    }
    return net;
}

void init_network(MaskedNetwork& net, Rng& rng) {
    for (auto& layer : net.layers) {
        if (!layer.spec.has_params()) continue;
        const int fan_in = layer.spec.fan_in();
        layer.weight = kaiming_uniform_init(layer.weight.shape(), fan_in, rng);
        const double bb = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (auto& v : layer.bias.values()) v = rng.uniform(-bb, bb);
    }
}

void init_unit_incoming(MaskedNetwork& net, int layer, int unit, Rng& rng) {
    Layer& l = net.layers.at(layer);
    if (l.spec.kind != LayerKind::linear)
        throw ConfigError("unit re-init is only defined for linear layers");
    const double bound = kaiming_bound(l.spec.fan_in());
    double* wrow = l.weight.row(unit);
    for (int i = 0; i < l.spec.in_dim; ++i) wrow[i] = rng.uniform(-bound, bound);
    const double bb = 1.0 / std::sqrt(static_cast<double>(l.spec.fan_in()));
    l.bias[unit] = rng.uniform(-bb, bb);
}

void init_unit_outgoing(MaskedNetwork& net, int layer, int unit, Rng& rng) {
    Layer& consumer = net.layers.at(net.consumer_of(layer));
    if (consumer.spec.kind != LayerKind::linear)
        throw ConfigError("unit re-init is only defined for linear consumers");
    const double bound = kaiming_bound(consumer.spec.fan_in());
    for (int o = 0; o < consumer.spec.out_dim; ++o)
        consumer.weight.at(o, unit) = rng.uniform(-bound, bound);
}

}  // namespace plast
