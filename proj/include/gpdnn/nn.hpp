#pragma once

// Layer and model descriptions, shape inference, the built-in presets and the
// small stateless layers (dropout, softmax head).

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "gpdnn/conv.hpp"
#include "gpdnn/error.hpp"
#include "gpdnn/gp.hpp"
#include "gpdnn/graph.hpp"
#include "gpdnn/ops.hpp"
#include "gpdnn/random.hpp"

namespace gpdnn {

enum class LayerKind { Conv, MaxPool, Fc, Relu, Dropout, Flatten };

struct LayerSpec {
    LayerKind kind = LayerKind::Relu;
    std::size_t kernel = 0;    // conv
    std::size_t channels = 0;  // conv output channels
    Padding padding = Padding::Same;
    std::size_t units = 0;     // fc
    double rate = 0.0;         // dropout

    static LayerSpec conv(std::size_t kernel, std::size_t channels, Padding padding) {
        return {LayerKind::Conv, kernel, channels, padding, 0, 0.0};
    }
    static LayerSpec maxpool(Padding padding) { return {LayerKind::MaxPool, 0, 0, padding, 0, 0.0}; }
    static LayerSpec fc(std::size_t units) { return {LayerKind::Fc, 0, 0, Padding::Same, units, 0.0}; }
    static LayerSpec relu() { return {LayerKind::Relu, 0, 0, Padding::Same, 0, 0.0}; }
    static LayerSpec dropout(double rate) { return {LayerKind::Dropout, 0, 0, Padding::Same, 0, rate}; }
    static LayerSpec flatten() { return {LayerKind::Flatten, 0, 0, Padding::Same, 0, 0.0}; }
};

/// A: extractor → FC(C) → softmax. B: extractor → FC(D) → FC(C) → softmax.
/// C: extractor → FC(D) → GP with robustmax.
enum class Architecture { A, B, C };

inline const char* to_string(Architecture a) { return a == Architecture::A ? "A" : a == Architecture::B ? "B" : "C"; }

enum class InitScheme {
    TruncatedNormal,  // weights ~ N(0, 0.1²) truncated at 2σ, biases 0.1
    FanInUniform,     // weights ~ U(±1/√fan_in), biases 0
};

struct ModelSpec {
    std::string name;
    Shape input;  // per-example shape, [H, W, C] or [D]
    std::vector<LayerSpec> extractor;
    Architecture arch = Architecture::A;
    std::size_t hidden_dim = 0;  // D, used by B and C
    std::size_t classes = 10;
    InitScheme init = InitScheme::TruncatedNormal;
    // GP head (architecture C)
    KernelKind kernel = KernelKind::Rbf;
    std::size_t inducing = 100;
    double beta = 1e-3;
    bool learn_beta = false;

    bool has_gp_head() const { return arch == Architecture::C; }
};

/// Per-layer output shapes (batch axis omitted), extractor only.
inline std::vector<Shape> infer_shapes(const ModelSpec& spec) {
    std::vector<Shape> shapes;
    Shape cur = spec.input;
    for (const LayerSpec& layer : spec.extractor) {
        switch (layer.kind) {
            case LayerKind::Conv:
                if (cur.size() != 3) throw ShapeError(spec.name + ": conv layer needs an [H,W,C] input");
                if (layer.padding == Padding::Valid) {
                    if (cur[0] < layer.kernel || cur[1] < layer.kernel) throw ShapeError(spec.name + ": kernel larger than input");
                    cur = Shape{cur[0] - layer.kernel + 1, cur[1] - layer.kernel + 1, layer.channels};
                } else {
                    cur = Shape{cur[0], cur[1], layer.channels};
                }
                break;
            case LayerKind::MaxPool:
                if (cur.size() != 3) throw ShapeError(spec.name + ": pooling needs an [H,W,C] input");
                cur = Shape{pooled_extent(cur[0], layer.padding), pooled_extent(cur[1], layer.padding), cur[2]};
                break;
            case LayerKind::Flatten:
                cur = Shape{shape_size(cur)};
                break;
            case LayerKind::Fc:
                if (cur.size() != 1) throw ShapeError(spec.name + ": fully connected layer needs a flat input");
                cur = Shape{layer.units};
                break;
            case LayerKind::Relu:
                break;
            case LayerKind::Dropout:
                if (!(layer.rate >= 0.0 && layer.rate < 1.0)) throw ContractError(spec.name + ": dropout rate outside [0,1)");
                break;
        }
        shapes.push_back(cur);
    }
    return shapes;
}

/// Width of the extractor output.
inline std::size_t extractor_width(const ModelSpec& spec) {
    const auto shapes = infer_shapes(spec);
    const Shape& last = shapes.empty() ? spec.input : shapes.back();
    if (last.size() != 1) throw ShapeError(spec.name + ": extractor must end flat");
    return last[0];
}

/// Width of the features entering the head (D for B/C).
inline std::size_t feature_width(const ModelSpec& spec) {
    return spec.arch == Architecture::A ? extractor_width(spec) : spec.hidden_dim;
}

inline std::vector<std::string> preset_names() {
    return {"sc-a",        "sc-b",      "sc-c",      "sc-c-linear",        "dc-b",
            "dc-c",        "halfmoon-nn", "halfmoon-gpdnn-rbf", "halfmoon-gpdnn-linear"};
}

/// Built-in architectures.
///   SC (MNIST, SAME padding): conv5×5/32 → pool → conv5×5/64 → pool → FC 1024.
///   DC (MNIST, VALID convs):  conv3×3/32 ×2 → pool → conv3×3/64 ×2 → pool → FC 200 → dropout 0.5;
///                             28 → 26 → 24 → 12 → 10 → 8 → 4, so the first FC sees 4·4·64 = 1024 inputs.
///   halfmoon: FC 75 on 2-D inputs, D = 10.
inline ModelSpec model_preset(const std::string& name) {
    ModelSpec s;
    s.name = name;
    if (name.rfind("sc-", 0) == 0) {
        s.input = Shape{28, 28, 1};
        s.extractor = {LayerSpec::conv(5, 32, Padding::Same), LayerSpec::relu(), LayerSpec::maxpool(Padding::Same),
                       LayerSpec::conv(5, 64, Padding::Same), LayerSpec::relu(), LayerSpec::maxpool(Padding::Same),
                       LayerSpec::flatten(), LayerSpec::fc(1024), LayerSpec::relu()};
        s.init = InitScheme::TruncatedNormal;
        s.inducing = 100;
        if (name == "sc-a") {
            s.arch = Architecture::A;
        } else if (name == "sc-b") {
            s.arch = Architecture::B;
            s.hidden_dim = 100;
        } else if (name == "sc-c" || name == "sc-c-linear") {
            s.arch = Architecture::C;
            s.hidden_dim = 100;
            s.kernel = name == "sc-c" ? KernelKind::Rbf : KernelKind::Linear;
        } else {
            throw ContractError("unknown model preset '" + name + "'");
        }
        return s;
    }
    if (name == "dc-b" || name == "dc-c") {
        s.input = Shape{28, 28, 1};
        s.extractor = {LayerSpec::conv(3, 32, Padding::Valid), LayerSpec::relu(),
                       LayerSpec::conv(3, 32, Padding::Valid), LayerSpec::relu(),
                       LayerSpec::maxpool(Padding::Valid),
                       LayerSpec::conv(3, 64, Padding::Valid), LayerSpec::relu(),
                       LayerSpec::conv(3, 64, Padding::Valid), LayerSpec::relu(),
                       LayerSpec::maxpool(Padding::Valid),
                       LayerSpec::flatten(), LayerSpec::fc(200), LayerSpec::relu(), LayerSpec::dropout(0.5)};
        s.init = InitScheme::FanInUniform;
        s.arch = name == "dc-b" ? Architecture::B : Architecture::C;
        s.hidden_dim = 50;
        s.inducing = 100;
        return s;
    }
    if (name.rfind("halfmoon-", 0) == 0) {
        s.input = Shape{2};
        s.extractor = {LayerSpec::fc(75), LayerSpec::relu()};
        s.init = InitScheme::FanInUniform;
        s.classes = 2;
        s.hidden_dim = 10;
        s.inducing = 20;
        s.beta = 1e-3;
        if (name == "halfmoon-nn") {
            s.arch = Architecture::B;
        } else if (name == "halfmoon-gpdnn-rbf" || name == "halfmoon-gpdnn-linear") {
            s.arch = Architecture::C;
            s.kernel = name == "halfmoon-gpdnn-rbf" ? KernelKind::Rbf : KernelKind::Linear;
        } else {
            throw ContractError("unknown model preset '" + name + "'");
        }
        return s;
    }
    throw ContractError("unknown model preset '" + name + "'");
}

enum class Mode { Train, Eval };

/// Inverted dropout: in training each unit is zeroed with probability `rate`
/// and survivors are scaled by 1/(1−rate); evaluation is the identity.
inline Var dropout(Var x, double rate, Mode mode, Rng* rng) {
    if (!(rate >= 0.0 && rate < 1.0)) throw ContractError("dropout: rate must lie in [0, 1)");
    if (mode == Mode::Eval || rate == 0.0) return x;
    if (!rng) throw ContractError("dropout: training mode needs a random generator");
    Tensor mask(x.shape());
    const double keep = 1.0 / (1.0 - rate);
    for (double& v : mask.mutable_data()) v = rng->bernoulli(rate) ? 0.0 : keep;
    return mul(x, x.graph().constant(std::move(mask)));
}

/// Fully connected layer: x [B, in] · W [in, out] + b [out].
inline Var dense(Var x, Var w, Var b) { return add(matmul(x, w), b); }

/// Class probabilities of a linear softmax head.
inline Var softmax_head_forward(Var features, Var w, Var b) { return exp(log_softmax(dense(features, w, b))); }

}  // namespace gpdnn
