#include <gtest/gtest.h>

#include <cmath>

#include "gpdnn/datasets.hpp"
#include "gpdnn/training.hpp"
#include "gradcheck.hpp"

using namespace gpdnn;
using gradcheck::random_tensor;

namespace {

ModelSpec tiny_conv_gp() {
    ModelSpec s;
    s.name = "tiny";
    s.input = Shape{5, 5, 1};
    s.extractor = {LayerSpec::conv(3, 2, Padding::Same), LayerSpec::relu(), LayerSpec::maxpool(Padding::Same),
                   LayerSpec::flatten(), LayerSpec::fc(4), LayerSpec::relu()};
    s.arch = Architecture::C;
    s.hidden_dim = 2;
    s.classes = 2;
    s.inducing = 3;
    s.init = InitScheme::FanInUniform;
    s.learn_beta = true;
    s.beta = 0.05;
    return s;
}

Model perturbed_gp(const ModelSpec& spec, const Tensor& sample, std::uint64_t seed) {
    Model m = build_model(spec, seed);
    initialize_gp_head(m, sample, seed);
    Rng rng(seed + 1);
    for (auto& p : m.params) {
        if (p.name == "gp.m") p.value = random_tensor(p.value.shape(), rng, -0.5, 0.5);
        if (p.name.rfind("gp.L", 0) == 0) {
            Tensor l = p.value.clone();
            const std::size_t n = l.dim(0);
            auto v = l.mutable_data();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < i; ++j) v[i * n + j] = rng.uniform(-0.2, 0.2);
            p.value = l;
        }
    }
    return m;
}

double full_data_term(const Model& m, const Tensor& x, const std::vector<std::size_t>& y) {
    Graph g;
    const BoundModel b = bind(g, m, false);
    const ForwardOutputs out = forward(b, g.constant(x));
    return sum(variational_expectation(*out.argmax_p, y, *out.beta)).value().item();
}

std::vector<std::size_t> labels_for(std::size_t n) {
    std::vector<std::size_t> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = (i * 7 + 3) % 2;
    return y;
}

}  // namespace

TEST(Loss, UniformSoftmaxIsLogC) {
    Model m = build_model("sc-a", 1);
    m.param("out.w") = Tensor::zeros(m.param("out.w").shape());
    m.param("out.b") = Tensor::zeros(m.param("out.b").shape());
    Rng rng(1);
    const Tensor x = random_tensor({3, 28, 28, 1}, rng);
    EXPECT_NEAR(loss(m, x, std::vector<std::size_t>{0, 4, 9}), std::log(10.0), 1e-12);
    EXPECT_THROW(loss(m, Tensor(Shape{0, 28, 28, 1}), std::vector<std::size_t>{}), ContractError);
}

TEST(Loss, FullBatchElboHasNoScaling) {
    Rng rng(2);
    const Tensor x = random_tensor({6, 5, 5, 1}, rng);
    const auto y = labels_for(6);
    const Model m = perturbed_gp(tiny_conv_gp(), x, 3);
    const double kl = kl_to_prior(m.gp_state());
    EXPECT_GT(kl, 0.0);
    EXPECT_NEAR(loss(m, x, y, 6), -(full_data_term(m, x, y) - kl), 1e-12);
}

TEST(Loss, MinibatchScalingIsUnbiasedOverAPartition) {
    Rng rng(3);
    const Tensor x = random_tensor({8, 5, 5, 1}, rng);
    const auto y = labels_for(8);
    const Model m = perturbed_gp(tiny_conv_gp(), x, 4);
    const double kl = kl_to_prior(m.gp_state());
    double mean_scaled = 0.0;
    for (std::size_t b = 0; b < 4; ++b) {
        const Tensor xb = slice_rows(x, 2 * b, 2 * b + 2);
        const std::vector<std::size_t> yb(y.begin() + 2 * b, y.begin() + 2 * b + 2);
        mean_scaled += -loss(m, xb, yb, 8) + kl;  // (N/B) Σ_batch varexp
    }
    mean_scaled /= 4.0;
    EXPECT_NEAR(mean_scaled, full_data_term(m, x, y), 1e-10);
}

TEST(LossGradient, NegativeElboEveryParameterGroup) {
    Rng rng(5);
    const Tensor x = random_tensor({4, 5, 5, 1}, rng);
    const auto y = labels_for(4);
    const Model m = perturbed_gp(tiny_conv_gp(), x, 6);
    std::vector<Tensor> inputs;
    for (const auto& p : m.params) inputs.push_back(p.value);
    const auto r = gradcheck::check(
        [&](Graph& g, const std::vector<Var>& v) {
            BoundModel b{&m, v};
            return training_loss(b, g.constant(x), y, 10, Mode::Eval);
        },
        inputs, 1e-5, 25);
    EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
    EXPECT_GT(r.checked, 80u);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
    std::vector<Tensor> p = {Tensor::vector({1, -2, 3})};
    const std::vector<Tensor> g = {Tensor::zeros(Shape{3})};
    AdamState s;
    adam_step(p, g, s, 0.1);
    EXPECT_EQ(p[0], Tensor::vector({1, -2, 3}));
}

TEST(Adam, FirstStepIsSignTimesRate) {
    std::vector<Tensor> p = {Tensor::vector({0, 0, 0})};
    const std::vector<Tensor> g = {Tensor::vector({1e-3, -50, 7})};
    AdamState s;
    adam_step(p, g, s, 0.01);
    EXPECT_NEAR(p[0][0], -0.01, 1e-7);
    EXPECT_NEAR(p[0][1], 0.01, 1e-9);
    EXPECT_NEAR(p[0][2], -0.01, 1e-9);
}

TEST(Adam, ConvergesOnQuadratic) {
    std::vector<Tensor> p = {Tensor::scalar(0.0)};
    AdamState s;
    for (int t = 0; t < 200; ++t) {
        const std::vector<Tensor> g = {Tensor::scalar(2.0 * (p[0].item() - 3.0))};
        adam_step(p, g, s, 0.1);
    }
    EXPECT_NEAR(p[0].item(), 3.0, 0.05);
}

TEST(Adam, ShapeMismatch) {
    std::vector<Tensor> p = {Tensor::vector({0, 0})};
    const std::vector<Tensor> g = {Tensor::vector({1, 2, 3})};
    AdamState s;
    EXPECT_THROW(adam_step(p, g, s, 0.1), ShapeError);
}

TEST(Train, ZeroIterationsReturnsInitialModel) {
    const Dataset d = half_moons(40, 0.1, 1);
    const Model m = build_model("halfmoon-nn", 2);
    TrainConfig cfg;
    cfg.iterations = 0;
    cfg.batch_size = 10;
    const TrainResult r = train(m, d, &d, cfg);
    for (std::size_t i = 0; i < m.params.size(); ++i) EXPECT_EQ(r.model.params[i].value, m.params[i].value);
    EXPECT_EQ(r.trace.size(), 1u);
}

TEST(Train, DeterministicGivenSeed) {
    const Dataset d = half_moons(60, 0.1, 1);
    Model m = build_model("halfmoon-gpdnn-rbf", 2);
    initialize_gp_head(m, d.images, 3);
    TrainConfig cfg;
    cfg.iterations = 30;
    cfg.batch_size = 16;
    cfg.val_interval = 10;
    cfg.learning_rate = 1e-2;
    const TrainResult a = train(m, d, &d, cfg), b = train(m, d, &d, cfg);
    EXPECT_EQ(trace_table(a.trace).str(), trace_table(b.trace).str());
    for (std::size_t i = 0; i < m.params.size(); ++i) EXPECT_EQ(a.model.params[i].value, b.model.params[i].value);
    EXPECT_EQ(trace_table(a.trace).header(), (std::vector<std::string>{"iter", "loss", "val_error", "val_ll"}));
    EXPECT_EQ(a.trace.size(), 4u);
}

TEST(Train, FullBatchStepsDecreaseLoss) {
    const Dataset d = half_moons(40, 0.1, 5);
    for (const std::string name : {"halfmoon-nn", "halfmoon-gpdnn-rbf"}) {
        Model m = build_model(name, 6);
        if (m.spec.has_gp_head()) initialize_gp_head(m, d.images, 7);
        TrainConfig cfg;
        cfg.iterations = 50;
        cfg.batch_size = d.size();
        cfg.val_interval = 1;
        cfg.learning_rate = 1e-2;
        const TrainResult r = train(m, d, nullptr, cfg);
        ASSERT_EQ(r.trace.size(), 51u);
        std::size_t decreases = 0;
        // row k (k ≥ 1) holds the loss at the start of step k
        for (std::size_t k = 2; k < r.trace.size(); ++k) decreases += r.trace[k].loss < r.trace[k - 1].loss;
        decreases += r.trace[1].loss <= r.trace[0].loss;
        EXPECT_GE(decreases, 45u) << name;
    }
}

TEST(Train, NonFiniteInputAbortsWithIteration) {
    Dataset d = half_moons(20, 0.1, 1);
    d.images.mutable_data()[0] = NAN;
    TrainConfig cfg;
    cfg.iterations = 5;
    cfg.batch_size = 20;
    try {
        train(build_model("halfmoon-nn", 1), d, nullptr, cfg);
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("iteration"), std::string::npos) << e.what();
    }
}

TEST(Train, BatchLargerThanDatasetRejected) {
    const Dataset d = half_moons(20, 0.1, 1);
    TrainConfig cfg;
    cfg.batch_size = 21;
    EXPECT_THROW(train(build_model("halfmoon-nn", 1), d, nullptr, cfg), ContractError);
}

TEST(Train, BootstrapSwitchKeepsAccuracy) {
    const Dataset d = half_moons(200, 0.1, 11);
    TrainConfig cfg;
    cfg.iterations = 400;
    cfg.batch_size = 50;
    cfg.val_interval = 100;
    cfg.learning_rate = 1e-2;
    const TrainResult pre = train(build_model("halfmoon-nn", 12), d, nullptr, cfg);
    const double pre_acc = 1.0 - evaluate(pre.model, d).error;
    cfg.iterations = 500;
    const Model switched = switch_head(pre.model, 20, KernelKind::Rbf, d.images, 13);
    const TrainResult post = train(switched, d, nullptr, cfg);
    const double post_acc = 1.0 - evaluate(post.model, d).error;
    EXPECT_GE(post_acc, pre_acc - 1e-12) << pre_acc << " -> " << post_acc;
}

TEST(Train, SwitchIterationInsideTheLoop) {
    const Dataset d = half_moons(100, 0.1, 2);
    TrainConfig cfg;
    cfg.iterations = 60;
    cfg.batch_size = 25;
    cfg.val_interval = 20;
    cfg.learning_rate = 1e-2;
    cfg.switch_iteration = 30;
    cfg.switch_inducing = 10;
    const TrainResult r = train(build_model("halfmoon-nn", 3), d, &d, cfg);
    EXPECT_EQ(r.model.spec.arch, Architecture::C);
    EXPECT_GE(r.best_iteration, 40u);
}
