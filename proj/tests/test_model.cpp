#include <artseg/grad_check.hpp>
#include <artseg/model.hpp>
#include <artseg/optimizer.hpp>

#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <set>

#include "test_util.hpp"

using namespace artseg;

namespace {

ARTSegConfig desk_config(int classes = 3, double width = 0.25) {
    ARTSegConfig cfg;
    cfg.num_classes = classes;
    cfg.width_multiplier = width;
    return cfg;
}

template <typename T>
void randomize_params(ARTSegModel<T>& model, std::uint64_t seed) {
    model.init_parameters(seed);
    // init leaves conv biases and betas at zero; give them small random
    // values so composition tests exercise the bias paths too.
    Rng rng(seed ^ 0xabcdef);
    model.visit_state([&rng](const std::string&, Tensor<T>& t, ParamKind kind) {
        if (kind == ParamKind::conv_bias || kind == ParamKind::bn_beta)
            for (T& v : t.values()) v = static_cast<T>(rng.uniform(-0.3, 0.3));
    });
}

}  // namespace

// ---------------------------------------------------------------------------
// Hand-unrolled oracle for the recurrent unit: plain-loop conv, batch-norm
// statistics, and ReLU, applied step by step with no engine machinery.
// ---------------------------------------------------------------------------
namespace oracle {

// 3x3 pad-1 stride-1 cross-correlation on a single batch item.
std::vector<double> conv3x3(const std::vector<double>& x, int Cin, int H, int W,
                            const std::vector<double>& w, int Cout,
                            const std::vector<double>& bias) {
    std::vector<double> out(static_cast<std::size_t>(Cout) * H * W, 0.0);
    for (int co = 0; co < Cout; ++co)
        for (int h = 0; h < H; ++h)
            for (int wo = 0; wo < W; ++wo) {
                double acc = bias.empty() ? 0.0 : bias[co];
                for (int ci = 0; ci < Cin; ++ci)
                    for (int kh = -1; kh <= 1; ++kh)
                        for (int kw = -1; kw <= 1; ++kw) {
                            const int ih = h + kh, iw = wo + kw;
                            if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                            acc += x[(static_cast<std::size_t>(ci) * H + ih) * W + iw] *
                                   w[((static_cast<std::size_t>(co) * Cin + ci) * 3 + kh + 1) * 3 +
                                     kw + 1];
                        }
                out[(static_cast<std::size_t>(co) * H + h) * W + wo] = acc;
            }
    return out;
}

std::vector<double> bn_relu(const std::vector<double>& x, int C, int HW,
                            const std::vector<double>& gamma, const std::vector<double>& beta,
                            double eps) {
    std::vector<double> out(x.size());
    for (int c = 0; c < C; ++c) {
        double mean = 0.0;
        for (int i = 0; i < HW; ++i) mean += x[static_cast<std::size_t>(c) * HW + i];
        mean /= HW;
        double var = 0.0;
        for (int i = 0; i < HW; ++i) {
            const double d = x[static_cast<std::size_t>(c) * HW + i] - mean;
            var += d * d;
        }
        var /= HW;
        const double inv = 1.0 / std::sqrt(var + eps);
        for (int i = 0; i < HW; ++i) {
            const double v = gamma[c] * (x[static_cast<std::size_t>(c) * HW + i] - mean) * inv +
                             beta[c];
            out[static_cast<std::size_t>(c) * HW + i] = v > 0.0 ? v : 0.0;
        }
    }
    return out;
}

}  // namespace oracle

// ---------------------------------------------------------------------------
// recurrent_conv_unit
// ---------------------------------------------------------------------------

TEST_CASE("recurrent unit with zero recurrent weights ignores the step count", "[model][unit]") {
    Rng rng(101);
    auto x = testutil::random_tensor<double>({1, 2, 4, 4}, rng);
    Tensor<double> out1, out3;
    for (int steps : {1, 3}) {
        RecurrentConvUnit<double> unit(2, 3, steps);
        Rng init(55);
        unit.visit("u", [&init](const std::string&, Tensor<double>& t, ParamKind kind) {
            ARTSegModel<double>::init_tensor(t, kind, init);
        });
        // conv_r stays zero-initialized only if we zero it explicitly
        if (unit.conv_r.weight.defined())
            for (double& v : unit.conv_r.weight.values()) v = 0.0;
        auto y = unit.forward(x, Mode::train);
        (steps == 1 ? out1 : out3) = y;
    }
    REQUIRE(testutil::bitwise_equal(out1, out3));
}

TEST_CASE("recurrent unit with t=1 is exactly conv+bn+relu", "[model][unit]") {
    Rng rng(103);
    auto x = testutil::random_tensor<double>({1, 2, 4, 4}, rng);
    RecurrentConvUnit<double> unit(2, 3, 1);
    Rng init(56);
    unit.visit("u", [&init](const std::string&, Tensor<double>& t, ParamKind kind) {
        ARTSegModel<double>::init_tensor(t, kind, init);
    });
    auto got = unit.forward(x, Mode::train);

    BatchNorm2dLayer<double> bn(3);
    auto want = relu(bn.forward(unit.conv_f.forward(x), Mode::train));
    REQUIRE(testutil::bitwise_equal(got, want));
}

TEST_CASE("recurrent unit t=2 matches the hand-unrolled oracle", "[model][unit]") {
    Rng rng(107);
    auto x = testutil::random_tensor<double>({1, 1, 4, 4}, rng);
    RecurrentConvUnit<double> unit(1, 2, 2);
    Rng init(57);
    unit.visit("u", [&init](const std::string&, Tensor<double>& t, ParamKind kind) {
        ARTSegModel<double>::init_tensor(t, kind, init);
    });
    for (double& v : unit.conv_f.bias.values()) v = init.uniform(-0.5, 0.5);
    for (double& v : unit.bn.beta.values()) v = init.uniform(-0.5, 0.5);
    for (double& v : unit.bn.gamma.values()) v = init.uniform(0.5, 1.5);

    auto got = unit.forward(x, Mode::train);

    const std::vector<double> xv(x.values().begin(), x.values().end());
    const std::vector<double> wf(unit.conv_f.weight.values().begin(),
                                 unit.conv_f.weight.values().end());
    const std::vector<double> wr(unit.conv_r.weight.values().begin(),
                                 unit.conv_r.weight.values().end());
    const std::vector<double> b(unit.conv_f.bias.values().begin(),
                                unit.conv_f.bias.values().end());
    const std::vector<double> gamma(unit.bn.gamma.values().begin(), unit.bn.gamma.values().end());
    const std::vector<double> beta(unit.bn.beta.values().begin(), unit.bn.beta.values().end());

    // step 0: o = conv_f(x) + b (recurrent state is zero), then bn+relu
    auto f = oracle::conv3x3(xv, 1, 4, 4, wf, 2, b);
    auto h0 = oracle::bn_relu(f, 2, 16, gamma, beta, 1e-5);
    // step 1: o = conv_f(x) + conv_r(h0) + b, then bn+relu
    auto r = oracle::conv3x3(h0, 2, 4, 4, wr, 2, {});
    std::vector<double> pre(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) pre[i] = f[i] + r[i];
    auto h1 = oracle::bn_relu(pre, 2, 16, gamma, beta, 1e-5);

    for (std::size_t i = 0; i < h1.size(); ++i)
        REQUIRE(got.values()[i] == Catch::Approx(h1[i]).margin(1e-10));
}

// ---------------------------------------------------------------------------
// rrcnn_block_forward
// ---------------------------------------------------------------------------

TEST_CASE("rrcnn block with zero unit weights is the identity on the projection",
          "[model][rrcnn]") {
    Rng rng(109);
    auto x = testutil::random_tensor<double>({1, 4, 6, 6}, rng);
    RRCNNBlock<double> block(4, 3, 2, true);
    Rng init(58);
    block.visit("b", [&init](const std::string& name, Tensor<double>& t, ParamKind kind) {
        ARTSegModel<double>::init_tensor(t, kind, init);
        // zero both units' convs, keep the projection random
        if (name.find(".u") != std::string::npos && kind == ParamKind::conv_weight)
            for (double& v : t.values()) v = 0.0;
    });
    auto got = block.forward(x, Mode::train);
    auto proj = block.projection.forward(x);
    REQUIRE(testutil::bitwise_equal(got, proj));
}

TEST_CASE("rrcnn block skips the projection when channels match", "[model][rrcnn]") {
    RRCNNBlock<double> same(8, 8, 2, true);
    REQUIRE_FALSE(same.has_projection);
    RRCNNBlock<double> diff(4, 8, 2, true);
    REQUIRE(diff.has_projection);

    std::set<std::string> names;
    same.visit("b", [&names](const std::string& n, Tensor<double>&, ParamKind) { names.insert(n); });
    for (const auto& n : names) REQUIRE(n.find(".proj") == std::string::npos);

    // parameter count difference is exactly the 1x1 projection
    std::int64_t n_same = 0, n_diff = 0;
    same.visit("b", [&n_same](const std::string&, Tensor<double>& t, ParamKind k) {
        if (is_parameter(k)) n_same += t.numel();
    });
    diff.visit("b", [&n_diff](const std::string&, Tensor<double>& t, ParamKind k) {
        if (is_parameter(k)) n_diff += t.numel();
    });
    // diff: projection 8*4*1*1; conv_f in diff takes 8 channels like same
    REQUIRE(n_diff - n_same == 8 * 4);
}

TEST_CASE("rrcnn block equals independent re-application of the primitives", "[model][rrcnn]") {
    Rng rng(113);
    auto x = testutil::random_tensor<double>({1, 32, 8, 8}, rng);
    RRCNNBlock<double> block(32, 16, 2, true);
    Rng init(59);
    block.visit("b", [&init](const std::string&, Tensor<double>& t, ParamKind kind) {
        ARTSegModel<double>::init_tensor(t, kind, init);
    });
    auto got = block.forward(x, Mode::train);

    auto unit_fwd = [](RecurrentConvUnit<double>& u, const Tensor<double>& in) {
        auto f = conv2d(in, u.conv_f.weight, u.conv_f.bias, 1, 1);
        auto h = relu(batch_norm2d(f, u.bn.gamma, u.bn.beta, u.bn.running_mean, u.bn.running_var,
                                   Mode::train, 0.1, 1e-5));
        for (int k = 1; k < u.steps; ++k) {
            auto rec = conv2d(h, u.conv_r.weight, u.conv_r.bias, 1, 1);
            h = relu(batch_norm2d(add(f, rec), u.bn.gamma, u.bn.beta, u.bn.running_mean,
                                  u.bn.running_var, Mode::train, 0.1, 1e-5));
        }
        return h;
    };
    auto p = conv2d(x, block.projection.weight, block.projection.bias, 1, 0);
    auto want = add(p, unit_fwd(block.unit2, unit_fwd(block.unit1, p)));
    REQUIRE(testutil::bitwise_equal(got, want));
}

TEST_CASE("rrcnn block and attention gate pass gradient checks", "[model][gradcheck]") {
    Rng rng(127);
    SECTION("rrcnn block") {
        auto x = testutil::random_tensor<double>({1, 3, 6, 6}, rng);
        RRCNNBlock<double> block(3, 4, 2, true);
        Rng init(60);
        block.visit("b", [&init](const std::string&, Tensor<double>& t, ParamKind kind) {
            ARTSegModel<double>::init_tensor(t, kind, init);
        });
        auto r = testutil::random_tensor<double>({1, 4, 6, 6}, rng);
        std::vector<Tensor<double>*> watched{&x};
        block.visit("b", [&watched](const std::string&, Tensor<double>& t, ParamKind kind) {
            // conv biases feed batch-norm here, so their true gradient is
            // exactly zero; probing them measures only noise.
            if (is_parameter(kind) && kind != ParamKind::conv_bias) watched.push_back(&t);
        });
        auto fn = [&] { return sum(mul(block.forward(x, Mode::train), r)); };
        auto res = grad_check(fn, watched, 1e-5);
        REQUIRE(res.max_rel_error < 1e-3);
    }
    SECTION("attention gate") {
        auto skip = testutil::random_tensor<double>({1, 4, 3, 3}, rng);
        auto g = testutil::random_tensor<double>({1, 4, 3, 3}, rng);
        AttentionGate<double> gate(4, 2);
        Rng init(61);
        gate.visit("g", [&init](const std::string&, Tensor<double>& t, ParamKind kind) {
            ARTSegModel<double>::init_tensor(t, kind, init);
        });
        for (double& v : gate.wg.bias.values()) v = init.uniform(-0.5, 0.5);
        for (double& v : gate.psi.bias.values()) v = init.uniform(-0.5, 0.5);
        auto r = testutil::random_tensor<double>({1, 4, 3, 3}, rng);
        std::vector<Tensor<double>*> watched{&skip, &g,
                                             &gate.wx.weight, &gate.wg.weight, &gate.wg.bias,
                                             &gate.psi.weight, &gate.psi.bias};
        auto fn = [&] { return sum(mul(gate.forward(skip, g).out, r)); };
        auto res = grad_check(fn, watched, 1e-5);
        REQUIRE(res.max_rel_error < 1e-3);
    }
}

// ---------------------------------------------------------------------------
// attention_gate_forward
// ---------------------------------------------------------------------------

TEST_CASE("zero-initialized attention gate scales the skip by exactly one half",
          "[model][attention]") {
    Rng rng(131);
    auto skip = testutil::random_tensor<float>({2, 4, 3, 3}, rng);
    auto g = testutil::random_tensor<float>({2, 4, 3, 3}, rng);
    AttentionGate<float> gate(4, 2);  // all weights and biases zero
    auto res = gate.forward(skip, g);
    for (float a : res.alpha.values()) REQUIRE(a == 0.5f);
    for (std::size_t i = 0; i < res.out.values().size(); ++i)
        REQUIRE(res.out.values()[i] == 0.5f * skip.values()[i]);
}

TEST_CASE("attention coefficients stay strictly inside (0,1)", "[model][attention]") {
    Rng rng(137);
    auto skip = testutil::random_tensor<float>({1, 4, 4, 4}, rng);
    auto g = testutil::random_tensor<float>({1, 4, 4, 4}, rng);
    AttentionGate<float> gate(4, 2);
    Rng init(62);
    gate.visit("g", [&init](const std::string&, Tensor<float>& t, ParamKind kind) {
        ARTSegModel<float>::init_tensor(t, kind, init);
    });
    // exaggerate the weights to push the sigmoid toward saturation
    for (float& v : gate.psi.weight.values()) v *= 50.0f;
    auto res = gate.forward(skip, g);
    for (float a : res.alpha.values()) {
        REQUIRE(a > 0.0f);
        REQUIRE(a < 1.0f);
    }
    for (std::size_t i = 0; i < res.out.values().size(); ++i)
        if (skip.values()[i] != 0.0f)
            REQUIRE(std::abs(res.out.values()[i]) < std::abs(skip.values()[i]));
}

TEST_CASE("attention gate matches the direct formula", "[model][attention]") {
    Rng rng(139);
    auto skip = testutil::random_tensor<double>({1, 4, 2, 2}, rng);
    auto g = testutil::random_tensor<double>({1, 4, 2, 2}, rng);
    AttentionGate<double> gate(4, 2);
    Rng init(63);
    gate.visit("g", [&init](const std::string&, Tensor<double>& t, ParamKind kind) {
        ARTSegModel<double>::init_tensor(t, kind, init);
    });
    for (double& v : gate.wg.bias.values()) v = init.uniform(-0.5, 0.5);
    for (double& v : gate.psi.bias.values()) v = init.uniform(-0.5, 0.5);

    auto res = gate.forward(skip, g);

    // direct evaluation, one pixel at a time
    const auto wx = gate.wx.weight.values();
    const auto wg = gate.wg.weight.values();
    const auto bg = gate.wg.bias.values();
    const auto pw = gate.psi.weight.values();
    const auto pb = gate.psi.bias.values();
    for (int p = 0; p < 4; ++p) {
        double s = pb[0];
        for (int f = 0; f < 2; ++f) {
            double inner = bg[f];
            for (int c = 0; c < 4; ++c) {
                inner += wx[static_cast<std::size_t>(f) * 4 + c] *
                         skip.values()[static_cast<std::size_t>(c) * 4 + p];
                inner += wg[static_cast<std::size_t>(f) * 4 + c] *
                         g.values()[static_cast<std::size_t>(c) * 4 + p];
            }
            if (inner > 0.0) s += pw[f] * inner;
        }
        const double alpha = 1.0 / (1.0 + std::exp(-s));
        REQUIRE(res.alpha.values()[p] == Catch::Approx(alpha).margin(1e-12));
        for (int c = 0; c < 4; ++c) {
            const double want = skip.values()[static_cast<std::size_t>(c) * 4 + p] * alpha;
            REQUIRE(res.out.values()[static_cast<std::size_t>(c) * 4 + p] ==
                    Catch::Approx(want).margin(1e-12));
        }
    }
}

TEST_CASE("attention gate rejects mismatched shapes", "[model][attention][errors]") {
    AttentionGate<float> gate(4, 2);
    Tensor<float> skip(Shape{1, 4, 4, 4});
    Tensor<float> g(Shape{1, 4, 2, 2});
    REQUIRE_THROWS_AS(gate.forward(skip, g), DimensionError);
}

// ---------------------------------------------------------------------------
// up_block_forward
// ---------------------------------------------------------------------------

TEST_CASE("up-block shapes follow the layer table", "[model][upblock]") {
    SECTION("256x8x8 by factor 4 becomes 128x32x32") {
        UpBlock<float> up(256, 128, 4);
        Rng init(64);
        up.visit("up", [&init](const std::string&, Tensor<float>& t, ParamKind kind) {
            ARTSegModel<float>::init_tensor(t, kind, init);
        });
        Tensor<float> x(Shape{1, 256, 8, 8});
        auto y = up.forward(x, Mode::eval);
        REQUIRE(y.shape() == Shape{1, 128, 32, 32});
    }
    SECTION("64x128x128 by factor 2 becomes 32x256x256") {
        UpBlock<float> up(64, 32, 2);
        Rng init(65);
        up.visit("up", [&init](const std::string&, Tensor<float>& t, ParamKind kind) {
            ARTSegModel<float>::init_tensor(t, kind, init);
        });
        Tensor<float> x(Shape{1, 64, 128, 128});
        auto y = up.forward(x, Mode::eval);
        REQUIRE(y.shape() == Shape{1, 32, 256, 256});
    }
    SECTION("zero conv weights give zero output in train mode") {
        UpBlock<float> up(4, 2, 2);  // weights default-zero
        Rng rng(149);
        auto x = testutil::random_tensor<float>({1, 4, 4, 4}, rng);
        auto y = up.forward(x, Mode::train);
        for (float v : y.values()) REQUIRE(v == 0.0f);
    }
    SECTION("factors outside {2,4} are rejected") {
        REQUIRE_THROWS_AS(UpBlock<float>(4, 2, 3), ConfigError);
    }
}

// ---------------------------------------------------------------------------
// artseg_forward
// ---------------------------------------------------------------------------

TEST_CASE("forward trace matches the scaled layer table row for row", "[model][forward]") {
    ARTSegModel<float> model(desk_config(3, 0.25));
    model.init_parameters(7);
    Tensor<float> x(Shape{1, 1, 64, 64});
    ForwardTrace<float> trace;
    auto logits = model.forward(x, Mode::eval, &trace);
    REQUIRE(logits.shape() == Shape{1, 3, 64, 64});

    const std::vector<std::pair<std::string, Shape>> want = {
        {"Input", {1, 1, 64, 64}},        {"RRCNN-1", {1, 8, 64, 64}},
        {"MaxPool-1", {1, 8, 32, 32}},    {"RRCNN-2", {1, 16, 32, 32}},
        {"MaxPool-2", {1, 16, 16, 16}},   {"RRCNN-3", {1, 32, 16, 16}},
        {"MaxPool-3", {1, 32, 8, 8}},     {"RRCNN-4", {1, 64, 8, 8}},
        {"MaxPool-4", {1, 64, 2, 2}},     {"RCNN-5", {1, 64, 2, 2}},
        {"UpBlock-1", {1, 32, 8, 8}},     {"Attention-1", {1, 64, 8, 8}},
        {"RRCNN-4-dec", {1, 32, 8, 8}},   {"UpBlock-2", {1, 32, 16, 16}},
        {"Attention-2", {1, 64, 16, 16}}, {"RRCNN-3-dec", {1, 32, 16, 16}},
        {"UpBlock-3", {1, 16, 32, 32}},   {"Attention-3", {1, 32, 32, 32}},
        {"RRCNN-2-dec", {1, 16, 32, 32}}, {"UpBlock-4", {1, 8, 64, 64}},
        {"Attention-4", {1, 16, 64, 64}}, {"RRCNN-1-dec", {1, 8, 64, 64}},
        {"Conv1x1", {1, 3, 64, 64}},
    };
    REQUIRE(trace.layers.size() == want.size());
    for (std::size_t i = 0; i < want.size(); ++i) {
        INFO("row " << i << " = " << trace.layers[i].first);
        REQUIRE(trace.layers[i].first == want[i].first);
        REQUIRE(trace.layers[i].second == want[i].second);
    }
    REQUIRE(trace.alphas.size() == 4);
}

TEST_CASE("forward accepts any /32-divisible size and rejects others", "[model][forward]") {
    ARTSegModel<float> model(desk_config(5, 0.25));
    model.init_parameters(3);
    auto y = model.forward(Tensor<float>(Shape{2, 1, 32, 64}), Mode::eval);
    REQUIRE(y.shape() == Shape{2, 5, 32, 64});
    REQUIRE_THROWS_AS(model.forward(Tensor<float>(Shape{1, 1, 48, 48}), Mode::eval), ConfigError);
    REQUIRE_THROWS_AS(model.forward(Tensor<float>(Shape{1, 3, 64, 64}), Mode::eval),
                      DimensionError);
}

TEST_CASE("eval forward is bitwise deterministic", "[model][forward][determinism]") {
    ARTSegModel<float> model(desk_config(3, 0.25));
    model.init_parameters(11);
    Rng rng(151);
    auto x = testutil::random_tensor<float>({1, 1, 64, 64}, rng, 0.0, 1.0);
    auto y1 = model.forward(x, Mode::eval);
    auto y2 = model.forward(x, Mode::eval);
    REQUIRE(testutil::bitwise_equal(y1, y2));
}

// ---------------------------------------------------------------------------
// init_parameters
// ---------------------------------------------------------------------------

TEST_CASE("init is reproducible and sets gammas to exactly one", "[model][init]") {
    ARTSegModel<float> a(desk_config()), b(desk_config());
    a.init_parameters(42);
    b.init_parameters(42);
    bool equal = true;
    auto pa = a.parameters();
    auto pb = b.parameters();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i)
        equal = equal && testutil::bitwise_equal(*pa[i].second, *pb[i].second);
    REQUIRE(equal);

    a.visit_state([](const std::string&, Tensor<float>& t, ParamKind kind) {
        if (kind == ParamKind::bn_gamma)
            for (float v : t.values()) REQUIRE(v == 1.0f);
        if (kind == ParamKind::conv_bias)
            for (float v : t.values()) REQUIRE(v == 0.0f);
    });
}

TEST_CASE("init weight spread matches the fan-in rule", "[model][init]") {
    // U(-b, b) with b = sqrt(6/fan_in) has stddev b/sqrt(3) = sqrt(2/fan_in).
    Conv2dLayer<float> conv(256, 256, 3, 1, 1, true);
    Rng rng(77);
    ARTSegModel<float>::init_tensor(conv.weight, ParamKind::conv_weight, rng);
    const double fan_in = 256.0 * 9.0;
    const double want_sd = std::sqrt(2.0 / fan_in);
    double mean = 0.0;
    for (float v : conv.weight.values()) mean += v;
    mean /= static_cast<double>(conv.weight.numel());
    double var = 0.0;
    for (float v : conv.weight.values()) var += (v - mean) * (v - mean);
    var /= static_cast<double>(conv.weight.numel());
    REQUIRE(conv.weight.numel() > 100000);
    REQUIRE(std::sqrt(var) == Catch::Approx(want_sd).epsilon(0.05));
    const double bound = std::sqrt(6.0 / fan_in);
    for (float v : conv.weight.values()) REQUIRE(std::abs(v) <= bound);
}

// ---------------------------------------------------------------------------
// invariants
// ---------------------------------------------------------------------------

TEST_CASE("every parameter receives gradient after one backward pass", "[model][gradflow]") {
    ARTSegModel<float> model(desk_config(3, 0.25));
    model.init_parameters(13);
    Rng rng(157);
    auto x = testutil::random_tensor<float>({1, 1, 64, 64}, rng, 0.0, 1.0);
    std::vector<std::uint8_t> labels(64 * 64);
    for (auto& l : labels) l = static_cast<std::uint8_t>(rng.below(3));

    Tape<float> tape;
    Tensor<float> loss;
    {
        auto scope = tape.activate();
        model.watch_parameters(tape);
        auto logits = model.forward(x, Mode::train);
        loss = softmax_cross_entropy(logits, labels);
    }
    tape.backward(loss);

    model.visit_state([](const std::string& name, Tensor<float>& t, ParamKind kind) {
        if (!is_parameter(kind)) return;
        INFO("parameter " << name);
        REQUIRE(t.has_grad());
        bool any = false;
        for (float g : t.grad())
            if (g != 0.0f) any = true;
        REQUIRE(any);
    });
}

TEST_CASE("configuration invariants are enforced", "[model][config][errors]") {
    ARTSegConfig bad;
    bad.num_classes = 1;
    REQUIRE_THROWS_AS(ARTSegModel<float>(bad), ConfigError);
    bad = ARTSegConfig();
    bad.recurrence_steps = 0;
    REQUIRE_THROWS_AS(ARTSegModel<float>(bad), ConfigError);
    bad = ARTSegConfig();
    bad.width_multiplier = 0.0;
    REQUIRE_THROWS_AS(ARTSegModel<float>(bad), ConfigError);

    TrainConfig tc;
    tc.adam_beta1 = 1.0;
    REQUIRE_THROWS_AS(tc.validate(), ConfigError);
    tc = TrainConfig();
    tc.batch_size = 0;
    REQUIRE_THROWS_AS(tc.validate(), ConfigError);
    tc = TrainConfig();
    tc.total_epochs = 0;
    REQUIRE_THROWS_AS(tc.validate(), ConfigError);
}

TEST_CASE("parameter count is frozen for the default configuration", "[model][params]") {
    ARTSegModel<float> model((ARTSegConfig()));
    // regression constant, computed once from the default channel plan
    REQUIRE(model.parameter_count() == 7556173);

    // pure function of the config: same config, same count
    ARTSegModel<float> again((ARTSegConfig()));
    REQUIRE(again.parameter_count() == model.parameter_count());

    // head channels follow num_classes
    ARTSegConfig c5;
    c5.num_classes = 5;
    ARTSegModel<float> five(c5);
    REQUIRE(model.parameter_count() - five.parameter_count() == 4 * (32 + 1));
}
