#pragma once

// A concrete network: a ModelSpec plus its named parameter tensors, the graph
// forward pass for all three architectures, and checkpoint I/O.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gpdnn/checkpoint.hpp"
#include "gpdnn/conv.hpp"
#include "gpdnn/gp.hpp"
#include "gpdnn/graph.hpp"
#include "gpdnn/nn.hpp"
#include "gpdnn/ops.hpp"
#include "gpdnn/random.hpp"
#include "gpdnn/robustmax.hpp"

namespace gpdnn {

class Model {
public:
    ModelSpec spec;
    std::vector<NamedTensor> params;

    bool has(const std::string& name) const { return index_of(name).has_value(); }

    const Tensor& param(const std::string& name) const { return params[require(name)].value; }
    Tensor& param(const std::string& name) { return params[require(name)].value; }

    std::optional<std::size_t> index_of(const std::string& name) const {
        for (std::size_t i = 0; i < params.size(); ++i)
            if (params[i].name == name) return i;
        return std::nullopt;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& p : params) n += p.value.size();
        return n;
    }

    /// Current robustmax settings (β decoded from its logit when learnt).
    RobustmaxParams robustmax() const {
        RobustmaxParams r{spec.beta, spec.learn_beta, spec.classes};
        if (spec.learn_beta) r.beta = RobustmaxParams::beta_from_logit(param("robustmax.beta_logit").item());
        return r;
    }

    GPLayerState gp_state() const {
        if (!spec.has_gp_head()) throw ContractError(spec.name + ": model has no GP head");
        GPLayerState s;
        s.inducing = param("gp.Z");
        s.mean = param("gp.m");
        for (std::size_t c = 0; c < spec.classes; ++c) s.chol.push_back(param("gp.L" + std::to_string(c)));
        s.kernel.kind = spec.kernel;
        s.kernel.log_variance = param("gp.log_variance").item();
        s.kernel.log_lengthscale = param("gp.log_lengthscale").item();
        s.kernel.log_noise = param("gp.log_noise").item();
        return s;
    }

    void set_gp_state(const GPLayerState& s) {
        if (!spec.has_gp_head()) throw ContractError(spec.name + ": model has no GP head");
        if (s.num_classes() != spec.classes || s.chol.size() != spec.classes) {
            throw ShapeError(spec.name + ": GP state has the wrong number of classes");
        }
        if (s.inducing.dim(1) != feature_width(spec)) throw ShapeError(spec.name + ": inducing inputs have the wrong width");
        spec.inducing = s.num_inducing();
        spec.kernel = s.kernel.kind;
        param("gp.Z") = s.inducing;
        param("gp.m") = s.mean;
        for (std::size_t c = 0; c < spec.classes; ++c) param("gp.L" + std::to_string(c)) = s.chol[c];
        param("gp.log_variance") = Tensor::scalar(s.kernel.log_variance);
        param("gp.log_lengthscale") = Tensor::scalar(s.kernel.log_lengthscale);
        param("gp.log_noise") = Tensor::scalar(s.kernel.log_noise);
    }

private:
    std::size_t require(const std::string& name) const {
        auto i = index_of(name);
        if (!i) throw ContractError(spec.name + ": no parameter named '" + name + "'");
        return *i;
    }
};

namespace detail {

inline Tensor init_weights(Shape shape, std::size_t fan_in, InitScheme scheme, Rng& rng) {
    Tensor w(std::move(shape));
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& v : w.mutable_data()) {
        v = scheme == InitScheme::TruncatedNormal ? rng.truncated_normal(0.1) : rng.uniform(-bound, bound);
    }
    return w;
}

inline Tensor init_bias(std::size_t n, InitScheme scheme) {
    return Tensor(Shape{n}, scheme == InitScheme::TruncatedNormal ? 0.1 : 0.0);
}

}  // namespace detail

/// Fresh parameters for `spec`, deterministic in `seed`. A GP head starts from
/// placeholder inducing inputs; initialize_gp_head() replaces them with data.
inline Model build_model(const ModelSpec& spec, std::uint64_t seed) {
    Model model;
    model.spec = spec;
    Rng rng(seed);
    const auto shapes = infer_shapes(spec);
    Shape cur = spec.input;
    for (std::size_t i = 0; i < spec.extractor.size(); ++i) {
        const LayerSpec& layer = spec.extractor[i];
        const std::string prefix = "layer" + std::to_string(i);
        if (layer.kind == LayerKind::Conv) {
            const std::size_t fan_in = layer.kernel * layer.kernel * cur[2];
            model.params.push_back({prefix + ".w", detail::init_weights(Shape{layer.kernel, layer.kernel, cur[2], layer.channels},
                                                                        fan_in, spec.init, rng)});
            model.params.push_back({prefix + ".b", detail::init_bias(layer.channels, spec.init)});
        } else if (layer.kind == LayerKind::Fc) {
            model.params.push_back({prefix + ".w", detail::init_weights(Shape{cur[0], layer.units}, cur[0], spec.init, rng)});
            model.params.push_back({prefix + ".b", detail::init_bias(layer.units, spec.init)});
        }
        cur = shapes[i];
    }
    const std::size_t width = extractor_width(spec);
    if (spec.arch != Architecture::A) {
        if (spec.hidden_dim == 0) throw ContractError(spec.name + ": architectures B and C need a hidden width D");
        model.params.push_back({"hidden.w", detail::init_weights(Shape{width, spec.hidden_dim}, width, spec.init, rng)});
        model.params.push_back({"hidden.b", detail::init_bias(spec.hidden_dim, spec.init)});
    }
    const std::size_t features = feature_width(spec);
    if (spec.has_gp_head()) {
        if (spec.inducing == 0) throw ContractError(spec.name + ": GP head needs inducing points");
        Tensor z(Shape{spec.inducing, features});
        for (double& v : z.mutable_data()) v = rng.normal();
        model.params.push_back({"gp.Z", z});
        model.params.push_back({"gp.m", Tensor::zeros(Shape{spec.inducing, spec.classes})});
        for (std::size_t c = 0; c < spec.classes; ++c) {
            model.params.push_back({"gp.L" + std::to_string(c), Tensor::identity(spec.inducing)});
        }
        model.params.push_back({"gp.log_variance", Tensor::scalar(0.0)});
        model.params.push_back({"gp.log_lengthscale", Tensor::scalar(std::log(std::sqrt(2.0 * static_cast<double>(features))))});
        model.params.push_back({"gp.log_noise", Tensor::scalar(std::log(1e-3))});
        if (spec.learn_beta) {
            model.params.push_back({"robustmax.beta_logit", Tensor::scalar(RobustmaxParams::logit_for(spec.beta))});
        }
    } else {
        model.params.push_back({"out.w", detail::init_weights(Shape{features, spec.classes}, features, spec.init, rng)});
        model.params.push_back({"out.b", detail::init_bias(spec.classes, spec.init)});
    }
    return model;
}

inline Model build_model(const std::string& preset, std::uint64_t seed) { return build_model(model_preset(preset), seed); }

/// Parameters of a model placed on a graph, in the model's parameter order.
struct BoundModel {
    const Model* model = nullptr;
    std::vector<Var> vars;

    Var operator[](const std::string& name) const {
        auto i = model->index_of(name);
        if (!i) throw ContractError("no parameter named '" + name + "'");
        return vars[*i];
    }
};

inline BoundModel bind(Graph& g, const Model& model, bool trainable) {
    BoundModel b{&model, {}};
    b.vars.reserve(model.params.size());
    for (const auto& p : model.params) b.vars.push_back(trainable ? g.variable(p.value) : g.constant(p.value));
    return b;
}

inline GpVars gp_vars(const BoundModel& b) {
    const Model& m = *b.model;
    GpVars gp{b["gp.Z"], b["gp.m"], {}, {m.spec.kernel, b["gp.log_variance"], b["gp.log_lengthscale"], b["gp.log_noise"]}};
    for (std::size_t c = 0; c < m.spec.classes; ++c) gp.chol.push_back(b["gp.L" + std::to_string(c)]);
    return gp;
}

inline const QuadratureRule& default_quadrature() {
    static const QuadratureRule rule = gauss_hermite(kDefaultQuadratureNodes);
    return rule;
}

struct ForwardOutputs {
    Var features;
    Var log_probs;  // log predictive class probabilities, [B, C]
    // GP head only
    std::optional<LatentMarginalVars> latent;
    std::optional<Var> argmax_p;
    std::optional<Var> beta;
};

/// Extractor (plus the FC-to-D layer for B and C). The D layer is linear.
inline Var extract_features(const BoundModel& b, Var x, Mode mode, Rng* rng) {
    const ModelSpec& spec = b.model->spec;
    Shape expected = spec.input;
    expected.insert(expected.begin(), x.shape().at(0));
    if (x.shape() != expected) {
        throw ShapeError(spec.name + ": input shape " + shape_string(x.shape()) + " does not match " + shape_string(expected));
    }
    Var h = x;
    for (std::size_t i = 0; i < spec.extractor.size(); ++i) {
        const LayerSpec& layer = spec.extractor[i];
        const std::string prefix = "layer" + std::to_string(i);
        switch (layer.kind) {
            case LayerKind::Conv: h = conv2d(h, b[prefix + ".w"], b[prefix + ".b"], layer.padding); break;
            case LayerKind::MaxPool: h = maxpool2d(h, layer.padding); break;
            case LayerKind::Fc: h = dense(h, b[prefix + ".w"], b[prefix + ".b"]); break;
            case LayerKind::Relu: h = relu(h); break;
            case LayerKind::Dropout: h = dropout(h, layer.rate, mode, rng); break;
            case LayerKind::Flatten: h = flatten(h); break;
        }
    }
    if (spec.arch != Architecture::A) h = dense(h, b["hidden.w"], b["hidden.b"]);
    return h;
}

inline ForwardOutputs forward(const BoundModel& b, Var x, Mode mode = Mode::Eval, Rng* rng = nullptr,
                              const QuadratureRule& quad = default_quadrature()) {
    const ModelSpec& spec = b.model->spec;
    ForwardOutputs out;
    out.features = extract_features(b, x, mode, rng);
    if (!spec.has_gp_head()) {
        out.log_probs = log_softmax(dense(out.features, b["out.w"], b["out.b"]));
        return out;
    }
    Graph& g = x.graph();
    const auto gp = gp_vars(b);
    out.latent = latent_marginals(gp, out.features);
    out.argmax_p = argmax_probs(out.latent->mean, out.latent->variance, quad);
    const RobustmaxParams params{spec.beta, spec.learn_beta, spec.classes};
    out.beta = spec.learn_beta ? robustmax_beta(g, params, b["robustmax.beta_logit"]) : robustmax_beta(g, params);
    // Quadrature leaves the rows of P a hair away from 1; renormalise before mixing in β.
    out.log_probs = log(predictive_probs(normalize_rows(*out.argmax_p), *out.beta));
    return out;
}

/// Runs `fn(begin, end)` over consecutive row blocks of at most `batch` rows.
template <class F>
void for_each_block(std::size_t rows, std::size_t batch, F fn) {
    if (batch == 0) batch = rows ? rows : 1;
    for (std::size_t begin = 0; begin < rows; begin += batch) fn(begin, std::min(rows, begin + batch));
}

/// Eval-mode log predictive probabilities [N, C], computed block by block.
inline Tensor predict_log_probs(const Model& model, const Tensor& x, std::size_t batch = 500) {
    const std::size_t n = x.dim(0), classes = model.spec.classes;
    Tensor out(Shape{n, classes});
    double* o = out.mutable_ptr();
    for_each_block(n, batch, [&](std::size_t begin, std::size_t end) {
        Graph g;
        const BoundModel b = bind(g, model, false);
        const Tensor lp = forward(b, g.constant(slice_rows(x, begin, end))).log_probs.value();
        std::copy(lp.ptr(), lp.ptr() + lp.size(), o + begin * classes);
    });
    return out;
}

/// Eval-mode head inputs [N, D].
inline Tensor compute_features(const Model& model, const Tensor& x, std::size_t batch = 500) {
    const std::size_t n = x.dim(0), width = feature_width(model.spec);
    Tensor out(Shape{n, width});
    double* o = out.mutable_ptr();
    for_each_block(n, batch, [&](std::size_t begin, std::size_t end) {
        Graph g;
        const BoundModel b = bind(g, model, false);
        const Tensor f = extract_features(b, g.constant(slice_rows(x, begin, end)), Mode::Eval, nullptr).value();
        std::copy(f.ptr(), f.ptr() + f.size(), o + begin * width);
    });
    return out;
}

/// Replaces the GP head with init_gp_head() on the model's own features of `sample`.
inline void initialize_gp_head(Model& model, const Tensor& sample, std::uint64_t seed) {
    const Tensor feats = compute_features(model, sample);
    model.set_gp_state(init_gp_head(feats, model.spec.inducing, model.spec.kernel, model.spec.classes, seed));
}

/// Preset name of the architecture-C counterpart of a B preset.
inline std::string gp_counterpart(const std::string& preset, KernelKind kernel) {
    const bool rbf = kernel == KernelKind::Rbf;
    if (preset == "sc-b") return rbf ? "sc-c" : "sc-c-linear";
    if (preset == "dc-b") return "dc-c";
    if (preset == "halfmoon-nn") return rbf ? "halfmoon-gpdnn-rbf" : "halfmoon-gpdnn-linear";
    return preset + "-gp";
}

/// Architecture B → C: keeps the extractor and the FC-to-D layer, drops the
/// softmax layer and initialises a GP head on the features of `sample`.
inline Model switch_head(const Model& trained, std::size_t num_inducing, KernelKind kernel, const Tensor& sample,
                         std::uint64_t seed) {
    if (trained.spec.arch != Architecture::B) {
        throw ContractError("switch_head: expected an architecture B model, got " + std::string(to_string(trained.spec.arch)));
    }
    ModelSpec spec = trained.spec;
    spec.name = gp_counterpart(trained.spec.name, kernel);
    spec.arch = Architecture::C;
    spec.kernel = kernel;
    spec.inducing = num_inducing;
    Model fresh = build_model(spec, seed);
    for (auto& p : fresh.params) {
        if (p.name.rfind("gp.", 0) == 0 || p.name.rfind("robustmax.", 0) == 0) continue;
        p.value = trained.param(p.name);
    }
    initialize_gp_head(fresh, sample, seed);
    return fresh;
}

// ---------------------------------------------------------------------------
// Checkpoints: the model's parameters plus two metadata tensors,
// "meta.preset:<name>" (value: architecture index) and "meta.beta".

inline std::vector<NamedTensor> to_named_tensors(const Model& model) {
    std::vector<NamedTensor> out;
    out.push_back({"meta.preset:" + model.spec.name, Tensor::scalar(static_cast<double>(model.spec.arch))});
    out.push_back({"meta.beta", Tensor::scalar(model.spec.beta)});
    out.insert(out.end(), model.params.begin(), model.params.end());
    return out;
}

inline Model from_named_tensors(const std::vector<NamedTensor>& tensors, const std::string& source) {
    std::optional<std::string> preset;
    std::optional<double> beta;
    for (const auto& t : tensors) {
        if (t.name.rfind("meta.preset:", 0) == 0) preset = t.name.substr(12);
        if (t.name == "meta.beta") beta = t.value.item();
    }
    if (!preset) throw DataError(source + ": checkpoint carries no model preset");
    ModelSpec spec;
    try {
        spec = model_preset(*preset);
    } catch (const ContractError& e) {
        throw DataError(source + ": " + e.what());
    }
    if (beta) spec.beta = *beta;
    for (const auto& t : tensors) {
        if (t.name == "robustmax.beta_logit") spec.learn_beta = true;
        if (t.name == "gp.Z") spec.inducing = t.value.dim(0);
    }
    Model model = build_model(spec, 0);
    std::size_t matched = 0;
    for (const auto& t : tensors) {
        if (t.name.rfind("meta.", 0) == 0) continue;
        auto i = model.index_of(t.name);
        if (!i) throw DataError(source + ": unexpected tensor '" + t.name + "' for preset " + *preset);
        if (model.params[*i].value.shape() != t.value.shape()) {
            throw DataError(source + ": tensor '" + t.name + "' has shape " + shape_string(t.value.shape()) + ", expected " +
                            shape_string(model.params[*i].value.shape()));
        }
        model.params[*i].value = t.value;
        ++matched;
    }
    if (matched != model.params.size()) throw DataError(source + ": checkpoint is missing parameters");
    return model;
}

inline void save_model(const Model& model, const std::string& path) { save_tensors(path, to_named_tensors(model)); }

inline Model load_model(const std::string& path) { return from_named_tensors(load_tensors(path), path); }

}  // namespace gpdnn
