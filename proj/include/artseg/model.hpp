#pragma once

#include <array>
#include <string>

#include "artseg/ops.hpp"

namespace artseg {

// ---------------------------------------------------------------------------
// Configuration. encoder_channels / pool_kernels follow the reference ARTSeg layer
// table; width_multiplier shrinks every channel count for desk-scale runs.
// ---------------------------------------------------------------------------

struct ARTSegConfig {
    int in_channels = 1;   // thermal input is single-channel
    int num_classes = 9;
    std::array<int, 4> encoder_channels{32, 64, 128, 256};
    int bottleneck_channels = 256;
    int recurrence_steps = 2;
    std::array<int, 4> pool_kernels{2, 2, 2, 4};
    double width_multiplier = 1.0;
    // The bottleneck row is named "RCNN-5" (one R): no residual sum there.
    bool bottleneck_residual = false;

    void validate() const {
        if (in_channels < 1) throw ConfigError("in_channels must be >= 1");
        if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
        if (num_classes > 255) throw ConfigError("num_classes must fit 8-bit label maps (<= 255)");
        if (recurrence_steps < 1) throw ConfigError("recurrence_steps must be >= 1");
        if (!(width_multiplier > 0.0)) throw ConfigError("width_multiplier must be positive");
        if (bottleneck_channels < 1) throw ConfigError("bottleneck_channels must be >= 1");
        for (int c : encoder_channels)
            if (c < 1) throw ConfigError("encoder channel counts must be >= 1");
        for (int k : pool_kernels)
            if (k < 2) throw ConfigError("pool kernels must be >= 2");
    }

    int scaled(int channels) const {
        return std::max(1, static_cast<int>(std::lround(channels * width_multiplier)));
    }

    int spatial_divisor() const {
        return pool_kernels[0] * pool_kernels[1] * pool_kernels[2] * pool_kernels[3];
    }
};

enum class ParamKind {
    conv_weight,
    conv_bias,
    bn_gamma,
    bn_beta,
    bn_running_mean,
    bn_running_var,
};

inline bool is_parameter(ParamKind k) {
    return k == ParamKind::conv_weight || k == ParamKind::conv_bias ||
           k == ParamKind::bn_gamma || k == ParamKind::bn_beta;
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

template <typename T>
struct Conv2dLayer {
    Tensor<T> weight;  // Cout x Cin x K x K
    Tensor<T> bias;    // undefined when the layer is bias-free
    int stride = 1;
    int padding = 0;

    Conv2dLayer() = default;
    Conv2dLayer(int in_ch, int out_ch, int k, int stride_, int padding_, bool with_bias)
        : weight(Shape{out_ch, in_ch, k, k}), stride(stride_), padding(padding_) {
        if (with_bias) bias = Tensor<T>(Shape{out_ch});
    }

    Tensor<T> forward(const Tensor<T>& x) const { return conv2d(x, weight, bias, stride, padding); }

    template <typename Fn>
    void visit(const std::string& prefix, Fn&& fn) {
        fn(prefix + ".weight", weight, ParamKind::conv_weight);
        if (bias.defined()) fn(prefix + ".bias", bias, ParamKind::conv_bias);
    }
};

template <typename T>
struct BatchNorm2dLayer {
    Tensor<T> gamma, beta;
    Tensor<T> running_mean, running_var;
    T momentum = T(0.1);
    T eps = T(1e-5);

    BatchNorm2dLayer() = default;
    explicit BatchNorm2dLayer(int channels)
        : gamma(Tensor<T>::full({channels}, T(1))),
          beta(Shape{channels}),
          running_mean(Shape{channels}),
          running_var(Tensor<T>::full({channels}, T(1))) {}

    Tensor<T> forward(const Tensor<T>& x, Mode mode) {
        return batch_norm2d(x, gamma, beta, running_mean, running_var, mode, momentum, eps);
    }

    template <typename Fn>
    void visit(const std::string& prefix, Fn&& fn) {
        fn(prefix + ".gamma", gamma, ParamKind::bn_gamma);
        fn(prefix + ".beta", beta, ParamKind::bn_beta);
        fn(prefix + ".running_mean", running_mean, ParamKind::bn_running_mean);
        fn(prefix + ".running_var", running_var, ParamKind::bn_running_var);
    }
};

// One recurrent convolution unit: the forward conv of the unit input is
// re-applied at every step, the recurrent conv feeds the previous step's
// activation back in. The recurrent state before step 0 is zero, so step 0
// has no recurrent term.
//
// The batch-norm parameter set (gamma/beta) is shared across steps, but the
// running statistics are kept per step: step 0 normalizes conv_f(x) while
// later steps normalize conv_f(x) + conv_r(h), two different distributions
// that one moving-average buffer cannot represent at eval time.
template <typename T>
struct RecurrentConvUnit {
    Conv2dLayer<T> conv_f;  // carries the unit bias
    Conv2dLayer<T> conv_r;  // bias-free: the bias enters once per step via conv_f
    BatchNorm2dLayer<T> bn;  // gamma/beta plus the step-0 statistics
    std::vector<Tensor<T>> step_means;  // statistics for steps 1..t-1
    std::vector<Tensor<T>> step_vars;
    int steps = 2;

    RecurrentConvUnit() = default;
    RecurrentConvUnit(int in_ch, int out_ch, int steps_)
        : conv_f(in_ch, out_ch, 3, 1, 1, true), bn(out_ch), steps(steps_) {
        // a single unrolled step never applies the recurrent weights
        if (steps > 1) conv_r = Conv2dLayer<T>(out_ch, out_ch, 3, 1, 1, false);
        for (int k = 1; k < steps; ++k) {
            step_means.emplace_back(Shape{out_ch});
            step_vars.push_back(Tensor<T>::full({out_ch}, T(1)));
        }
    }

    Tensor<T> forward(const Tensor<T>& x, Mode mode) {
        Tensor<T> f = conv_f.forward(x);
        Tensor<T> h = relu(bn.forward(f, mode));
        for (int k = 1; k < steps; ++k) {
            Tensor<T> pre = add(f, conv_r.forward(h));
            h = relu(batch_norm2d(pre, bn.gamma, bn.beta, step_means[static_cast<std::size_t>(k - 1)],
                                  step_vars[static_cast<std::size_t>(k - 1)], mode, bn.momentum,
                                  bn.eps));
        }
        return h;
    }

    template <typename Fn>
    void visit(const std::string& prefix, Fn&& fn) {
        conv_f.visit(prefix + ".conv_f", fn);
        if (steps > 1) conv_r.visit(prefix + ".conv_r", fn);
        bn.visit(prefix + ".bn", fn);
        for (int k = 1; k < steps; ++k) {
            fn(prefix + ".bn.running_mean" + std::to_string(k),
               step_means[static_cast<std::size_t>(k - 1)], ParamKind::bn_running_mean);
            fn(prefix + ".bn.running_var" + std::to_string(k),
               step_vars[static_cast<std::size_t>(k - 1)], ParamKind::bn_running_var);
        }
    }
};

// Residual block of two recurrent-conv units. When input and block channels
// differ, a 1x1 projection aligns the identity path; the residual sum can be
// switched off (bottleneck).
template <typename T>
struct RRCNNBlock {
    Conv2dLayer<T> projection;
    bool has_projection = false;
    RecurrentConvUnit<T> unit1, unit2;
    bool residual = true;

    RRCNNBlock() = default;
    RRCNNBlock(int in_ch, int out_ch, int steps, bool residual_)
        : has_projection(in_ch != out_ch),
          unit1(out_ch, out_ch, steps),
          unit2(out_ch, out_ch, steps),
          residual(residual_) {
        if (has_projection) projection = Conv2dLayer<T>(in_ch, out_ch, 1, 1, 0, false);
    }

    Tensor<T> forward(const Tensor<T>& x, Mode mode) {
        Tensor<T> p = has_projection ? projection.forward(x) : x;
        Tensor<T> branch = unit2.forward(unit1.forward(p, mode), mode);
        return residual ? add(p, branch) : branch;
    }

    template <typename Fn>
    void visit(const std::string& prefix, Fn&& fn) {
        if (has_projection) projection.visit(prefix + ".proj", fn);
        unit1.visit(prefix + ".u1", fn);
        unit2.visit(prefix + ".u2", fn);
    }
};

// Additive attention gate on a skip connection. skip and g must share shape;
// the coefficient map has one channel and multiplies every skip channel.
// s = psi(relu(Wx*skip + Wg*g + b_g)) + b_psi; alpha = sigmoid(s).
template <typename T>
struct AttentionGate {
    Conv2dLayer<T> wx;   // skip path, bias absorbed into wg's
    Conv2dLayer<T> wg;   // gating path, carries b_g
    Conv2dLayer<T> psi;  // inter -> 1 channel, carries b_psi

    AttentionGate() = default;
    AttentionGate(int channels, int inter_channels)
        : wx(channels, inter_channels, 1, 1, 0, false),
          wg(channels, inter_channels, 1, 1, 0, true),
          psi(inter_channels, 1, 1, 1, 0, true) {}

    struct Result {
        Tensor<T> out;    // skip scaled by alpha
        Tensor<T> alpha;  // B x 1 x H x W, strictly inside (0,1)
    };

    Result forward(const Tensor<T>& skip, const Tensor<T>& g) const {
        if (skip.shape() != g.shape())
            throw DimensionError("attention gate: skip " + shape_str(skip.shape()) +
                                 " and gating signal " + shape_str(g.shape()) + " must match");
        Tensor<T> s = psi.forward(relu(add(wx.forward(skip), wg.forward(g))));
        Tensor<T> alpha = sigmoid(s);
        return Result{mul(skip, alpha), alpha};
    }

    template <typename Fn>
    void visit(const std::string& prefix, Fn&& fn) {
        wx.visit(prefix + ".wx", fn);
        wg.visit(prefix + ".wg", fn);
        psi.visit(prefix + ".psi", fn);
    }
};

// Decoder up-block: nearest upsampling, 3x3 conv, batch-norm, ReLU.
template <typename T>
struct UpBlock {
    Conv2dLayer<T> conv;
    BatchNorm2dLayer<T> bn;
    int factor = 2;

    UpBlock() = default;
    UpBlock(int in_ch, int out_ch, int factor_)
        : conv(in_ch, out_ch, 3, 1, 1, true), bn(out_ch), factor(factor_) {
        if (factor_ != 2 && factor_ != 4)
            throw ConfigError("up-block factor must be 2 or 4, got " + std::to_string(factor_));
    }

    Tensor<T> forward(const Tensor<T>& x, Mode mode) {
        return relu(bn.forward(conv.forward(upsample_nearest(x, factor)), mode));
    }

    template <typename Fn>
    void visit(const std::string& prefix, Fn&& fn) {
        conv.visit(prefix + ".conv", fn);
        bn.visit(prefix + ".bn", fn);
    }
};

// Per-layer output shapes plus the attention coefficient maps of the last
// forward pass; filled only when a trace is requested.
template <typename T>
struct ForwardTrace {
    std::vector<std::pair<std::string, Shape>> layers;
    std::vector<Tensor<T>> alphas;  // deepest gate first
};

// ---------------------------------------------------------------------------
// The full encoder-decoder.
//
// Encoder: four residual recurrent blocks with pooling, then the RCNN-5
// bottleneck. Decoder stage i: upsample-conv block, additive attention gate
// on the matching-shape encoder tensor, channel concat, RRCNN block back to
// the skip width. Stage 1's skip is the pooled third-block output - the only
// encoder tensor matching the first up-block's shape, and the pairing that
// reproduces the expected concat widths.
// ---------------------------------------------------------------------------

template <typename T>
class ARTSegModel {
public:
    explicit ARTSegModel(ARTSegConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.validate();
        const int c1 = cfg_.scaled(cfg_.encoder_channels[0]);
        const int c2 = cfg_.scaled(cfg_.encoder_channels[1]);
        const int c3 = cfg_.scaled(cfg_.encoder_channels[2]);
        const int c4 = cfg_.scaled(cfg_.encoder_channels[3]);
        const int cb = cfg_.scaled(cfg_.bottleneck_channels);
        const int t = cfg_.recurrence_steps;

        enc1_ = RRCNNBlock<T>(cfg_.in_channels, c1, t, true);
        enc2_ = RRCNNBlock<T>(c1, c2, t, true);
        enc3_ = RRCNNBlock<T>(c2, c3, t, true);
        enc4_ = RRCNNBlock<T>(c3, c4, t, true);
        bottleneck_ = RRCNNBlock<T>(c4, cb, t, cfg_.bottleneck_residual);

        up1_ = UpBlock<T>(cb, c3, cfg_.pool_kernels[3]);
        up2_ = UpBlock<T>(c3, c3, cfg_.pool_kernels[2]);
        up3_ = UpBlock<T>(c3, c2, cfg_.pool_kernels[1]);
        up4_ = UpBlock<T>(c2, c1, cfg_.pool_kernels[0]);

        gate1_ = AttentionGate<T>(c3, inter_width(c3));
        gate2_ = AttentionGate<T>(c3, inter_width(c3));
        gate3_ = AttentionGate<T>(c2, inter_width(c2));
        gate4_ = AttentionGate<T>(c1, inter_width(c1));

        dec1_ = RRCNNBlock<T>(2 * c3, c3, t, true);
        dec2_ = RRCNNBlock<T>(2 * c3, c3, t, true);
        dec3_ = RRCNNBlock<T>(2 * c2, c2, t, true);
        dec4_ = RRCNNBlock<T>(2 * c1, c1, t, true);
        head_ = Conv2dLayer<T>(c1, cfg_.num_classes, 1, 1, 0, true);
    }

    // F_int = skip channels / 2.
    static int inter_width(int channels) { return std::max(1, channels / 2); }

    const ARTSegConfig& config() const { return cfg_; }

    Tensor<T> forward(const Tensor<T>& image, Mode mode, ForwardTrace<T>* trace = nullptr) {
        detail::require_rank4(image.shape(), "model input");
        if (image.dim(1) != cfg_.in_channels)
            throw DimensionError("model expects " + std::to_string(cfg_.in_channels) +
                                 " input channels, got " + std::to_string(image.dim(1)));
        const int div = cfg_.spatial_divisor();
        if (image.dim(2) % div != 0 || image.dim(3) % div != 0)
            throw ConfigError("input spatial size " + std::to_string(image.dim(2)) + "x" +
                              std::to_string(image.dim(3)) + " must be divisible by " +
                              std::to_string(div));

        auto tr = [&](const char* name, const Tensor<T>& t) {
            if (trace) trace->layers.emplace_back(name, t.shape());
        };
        if (trace) {
            trace->layers.clear();
            trace->alphas.clear();
        }
        tr("Input", image);

        const auto& pk = cfg_.pool_kernels;
        Tensor<T> e1 = enc1_.forward(image, mode);
        tr("RRCNN-1", e1);
        Tensor<T> p1 = max_pool2d(e1, pk[0], pk[0]);
        tr("MaxPool-1", p1);
        Tensor<T> e2 = enc2_.forward(p1, mode);
        tr("RRCNN-2", e2);
        Tensor<T> p2 = max_pool2d(e2, pk[1], pk[1]);
        tr("MaxPool-2", p2);
        Tensor<T> e3 = enc3_.forward(p2, mode);
        tr("RRCNN-3", e3);
        Tensor<T> p3 = max_pool2d(e3, pk[2], pk[2]);
        tr("MaxPool-3", p3);
        Tensor<T> e4 = enc4_.forward(p3, mode);
        tr("RRCNN-4", e4);
        Tensor<T> p4 = max_pool2d(e4, pk[3], pk[3]);
        tr("MaxPool-4", p4);
        Tensor<T> bott = bottleneck_.forward(p4, mode);
        tr("RCNN-5", bott);

        auto stage = [&](const char* up_name, const char* att_name, const char* dec_name,
                         UpBlock<T>& up, const AttentionGate<T>& gate, RRCNNBlock<T>& dec,
                         const Tensor<T>& prev, const Tensor<T>& skip) {
            Tensor<T> u = up.forward(prev, mode);
            tr(up_name, u);
            auto gated = gate.forward(skip, u);
            if (trace) trace->alphas.push_back(gated.alpha);
            Tensor<T> cat = concat_channels(gated.out, u);
            tr(att_name, cat);
            Tensor<T> d = dec.forward(cat, mode);
            tr(dec_name, d);
            return d;
        };

        Tensor<T> d1 = stage("UpBlock-1", "Attention-1", "RRCNN-4-dec", up1_, gate1_, dec1_, bott, p3);
        Tensor<T> d2 = stage("UpBlock-2", "Attention-2", "RRCNN-3-dec", up2_, gate2_, dec2_, d1, e3);
        Tensor<T> d3 = stage("UpBlock-3", "Attention-3", "RRCNN-2-dec", up3_, gate3_, dec3_, d2, e2);
        Tensor<T> d4 = stage("UpBlock-4", "Attention-4", "RRCNN-1-dec", up4_, gate4_, dec4_, d3, e1);

        Tensor<T> logits = head_.forward(d4);
        tr("Conv1x1", logits);
        return logits;
    }

    // Visits every parameter and buffer in a fixed order (construction
    // order); this order defines init, checkpoint, and optimizer layouts.
    template <typename Fn>
    void visit_state(Fn&& fn) {
        enc1_.visit("enc1", fn);
        enc2_.visit("enc2", fn);
        enc3_.visit("enc3", fn);
        enc4_.visit("enc4", fn);
        bottleneck_.visit("bottleneck", fn);
        up1_.visit("up1", fn);
        gate1_.visit("gate1", fn);
        dec1_.visit("dec1", fn);
        up2_.visit("up2", fn);
        gate2_.visit("gate2", fn);
        dec2_.visit("dec2", fn);
        up3_.visit("up3", fn);
        gate3_.visit("gate3", fn);
        dec3_.visit("dec3", fn);
        up4_.visit("up4", fn);
        gate4_.visit("gate4", fn);
        dec4_.visit("dec4", fn);
        head_.visit("head", fn);
    }

    std::vector<std::pair<std::string, Tensor<T>*>> parameters() {
        std::vector<std::pair<std::string, Tensor<T>*>> out;
        visit_state([&out](const std::string& name, Tensor<T>& t, ParamKind kind) {
            if (is_parameter(kind)) out.emplace_back(name, &t);
        });
        return out;
    }

    std::int64_t parameter_count() {
        std::int64_t n = 0;
        visit_state([&n](const std::string&, Tensor<T>& t, ParamKind kind) {
            if (is_parameter(kind)) n += t.numel();
        });
        return n;
    }

    // Conv weights ~ U(-b, b) with b = sqrt(6 / fan_in); biases and BN betas
    // zero; gammas one; running stats reset. One seeded stream, fixed order.
    void init_parameters(std::uint64_t seed) {
        Rng rng(seed);
        visit_state([&rng](const std::string&, Tensor<T>& t, ParamKind kind) {
            init_tensor(t, kind, rng);
        });
    }

    static void init_tensor(Tensor<T>& t, ParamKind kind, Rng& rng) {
        switch (kind) {
            case ParamKind::conv_weight: {
                const Shape& s = t.shape();
                const double fan_in = static_cast<double>(s[1]) * s[2] * s[3];
                const double bound = std::sqrt(6.0 / fan_in);
                for (T& v : t.values()) v = static_cast<T>(rng.uniform(-bound, bound));
                break;
            }
            case ParamKind::conv_bias:
            case ParamKind::bn_beta:
            case ParamKind::bn_running_mean:
                for (T& v : t.values()) v = T(0);
                break;
            case ParamKind::bn_gamma:
            case ParamKind::bn_running_var:
                for (T& v : t.values()) v = T(1);
                break;
        }
    }

    void watch_parameters(Tape<T>& tape) {
        visit_state([&tape](const std::string&, Tensor<T>& t, ParamKind kind) {
            if (is_parameter(kind)) tape.watch(t);
        });
    }

    void clear_gradients() {
        visit_state([](const std::string&, Tensor<T>& t, ParamKind) { t.clear_grad(); });
    }

    // Direct access for structure-level tests.
    RRCNNBlock<T>& encoder_block(int i) {
        switch (i) {
            case 0: return enc1_;
            case 1: return enc2_;
            case 2: return enc3_;
            case 3: return enc4_;
            default: return bottleneck_;
        }
    }
    AttentionGate<T>& gate(int i) {
        switch (i) {
            case 0: return gate1_;
            case 1: return gate2_;
            case 2: return gate3_;
            default: return gate4_;
        }
    }

private:
    ARTSegConfig cfg_;
    RRCNNBlock<T> enc1_, enc2_, enc3_, enc4_, bottleneck_;
    UpBlock<T> up1_, up2_, up3_, up4_;
    AttentionGate<T> gate1_, gate2_, gate3_, gate4_;
    RRCNNBlock<T> dec1_, dec2_, dec3_, dec4_;
    Conv2dLayer<T> head_;
};

}  // namespace artseg
