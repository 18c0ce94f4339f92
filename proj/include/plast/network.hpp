#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "plast/rng.hpp"
#include "plast/tensor.hpp"

namespace plast {

enum class LayerKind { linear, conv2d, maxpool2d, flatten };
enum class Activation { none, relu, rsl };
enum class Mode { train, eval };

/// Randomized smooth-leaky activation parameters. The unit's output blends
/// the identity and a leaky slope alpha through a smooth gate
/// g(z) = (1 + exp(-c z))^(-p):  out = g(z) z + (1 - g(z)) alpha z.
/// Train mode samples alpha per unit from U[lower, upper]; eval mode uses
/// the midpoint slope.
struct RslParams {
    double c = 1.0;
    double p = 1.0;
    double lower = 1.0;
    double upper = 1.0;

    void validate() const {
        if (!(c > 0.0) || !(p > 0.0)) throw ConfigError("rsl: c and p must be positive");
        if (!(lower > 0.0) || lower > upper) throw ConfigError("rsl: need 0 < lower <= upper");
    }
    double eval_slope() const { return 0.5 * (lower + upper); }
};

struct LayerSpec {
    LayerKind kind = LayerKind::linear;
    // linear
    int in_dim = 0;
    int out_dim = 0;
    // conv2d
    int in_ch = 0;
    int out_ch = 0;
    int kernel = 0;
    int padding = 0;
    // maxpool2d (kernel == stride)
    int pool = 0;

    Activation act = Activation::none;
    bool masked = false;

    bool has_params() const { return kind == LayerKind::linear || kind == LayerKind::conv2d; }
    int units() const { return kind == LayerKind::linear ? out_dim : out_ch; }
    int fan_in() const {
        return kind == LayerKind::linear ? in_dim : in_ch * kernel * kernel;
    }
};

struct Layer {
    LayerSpec spec;
    Tensor weight;  // linear: {out, in}; conv2d: {out_ch, in_ch, k, k}
    Tensor bias;    // {out} / {out_ch}
    std::vector<uint8_t> mask;  // per-unit, masked layers only
};

/// Fixed-topology layer stack with per-layer unit masks. Unit j of a masked
/// layer contributes exactly zero downstream while mask[j] == 0, in both the
/// forward and backward pass.
struct MaskedNetwork {
    std::vector<Layer> layers;
    std::vector<int> input_shape;  // {D} or {C, H, W}
    int num_classes = 0;
    RslParams rsl;
    uint64_t rng_seed = 0;

    std::vector<int> masked_layer_indices() const;
    /// Index of the next parameterized layer reading this layer's output.
    int consumer_of(int layer) const;
    int active_count(int layer) const;
    std::vector<int> active_units(int layer) const;
    std::vector<int> inactive_units(int layer) const;
};

struct LayerCache {
    Tensor z;      // pre-activation (linear/conv)
    Tensor h;      // layer output (post-activation, post-mask)
    Tensor alpha;  // per-unit RSL slopes actually used
    std::vector<int> argmax;  // maxpool routing
};

struct ForwardCache {
    Mode mode = Mode::eval;
    Tensor input;
    std::vector<LayerCache> layers;
};

struct Gradients {
    std::vector<Tensor> weight;  // per layer, shape of Layer::weight
    std::vector<Tensor> bias;
    std::vector<Tensor> dz;  // per layer: {B, units} pre-activation grads (linear layers)
};

/// Runs the stack on a batch. x is {B, D} or {B, C, H, W}. Every layer
/// output is checked for non-finite values; a NumericFault names the layer.
Tensor forward(const MaskedNetwork& net, const Tensor& x, Mode mode,
               ForwardCache* cache = nullptr, Rng* rsl_rng = nullptr);

/// Manual backprop through a cached forward pass. grad_logits is the loss
/// gradient w.r.t. the network output (mean reduction included). Returns
/// parameter gradients plus per-unit pre-activation gradients for linear
/// layers; masked-out units report exactly zero.
Gradients backward(const MaskedNetwork& net, const ForwardCache& cache, const Tensor& grad_logits);

struct LossResult {
    double loss = 0.0;
    Tensor grad_logits;  // {B, C}, mean reduction
};

/// Mean cross-entropy with softmax. Labels must lie in [0, C).
LossResult softmax_xent(const Tensor& logits, const std::vector<int>& labels);

/// Standalone randomized smooth-leaky op over the last dimension of z.
Tensor rsl_activation(const Tensor& z, const RslParams& params, Mode mode, Rng* rng = nullptr);

/// value and derivative of the RSL unit at z with leak slope alpha
void rsl_value_deriv(double z, double alpha, const RslParams& p, double* value, double* deriv);

/// i.i.d. Uniform[-bound, bound] with bound = sqrt(6 / fan_in).
Tensor kaiming_uniform_init(const std::vector<int>& shape, int fan_in, Rng& rng);

double kaiming_bound(int fan_in);

/// 784 -> H -> H -> 10 stack, both hidden layers masked.
MaskedNetwork make_mlp(int hidden = 256, Activation act = Activation::relu, int input_dim = 784,
                       int classes = 10);

/// Dense conv trunk (3->32->64, 3x3, maxpool2) + masked FC head
/// 4096 -> h1 -> h2 -> h3 -> classes. Only the FC hidden layers are masked.
MaskedNetwork make_convnet(int classes, Activation act = Activation::relu, int h1 = 512,
                           int h2 = 512, int h3 = 256);

/// Kaiming-uniform weights, U[-1/sqrt(fan_in), 1/sqrt(fan_in)] biases.
void init_network(MaskedNetwork& net, Rng& rng);

/// Re-initializes the incoming slice (weight row + bias) of one unit.
void init_unit_incoming(MaskedNetwork& net, int layer, int unit, Rng& rng);
/// Re-initializes the consumer's input column reading from `unit`.
void init_unit_outgoing(MaskedNetwork& net, int layer, int unit, Rng& rng);

}  // namespace plast
