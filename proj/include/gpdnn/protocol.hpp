#pragma once

// Desk-scale experiment protocols shared by the CLI and the acceptance run.

#include <cstddef>
#include <cstdint>
#include <string>

#include "gpdnn/attacks.hpp"
#include "gpdnn/datasets.hpp"
#include "gpdnn/model.hpp"
#include "gpdnn/training.hpp"

namespace gpdnn {

inline constexpr std::size_t kValidationSize = 5000;
inline constexpr std::size_t kTestSize = 2000;
inline constexpr std::size_t kInducingSample = 1000;

struct MnistSplit {
    Dataset train, validation, test;
};

/// Validation = first 5000 training images; training = seeded proportion of the
/// rest; test = the first `test_size` images of the test file.
inline MnistSplit mnist_split(const std::string& dir, double proportion, std::uint64_t seed,
                              std::size_t test_size = kTestSize, std::size_t val_size = kValidationSize) {
    const MnistFiles files = load_mnist(dir);
    const Split s = split(files.train.size(), val_size, proportion, seed);
    Dataset test = files.test.head(test_size);
    test.name = "mnist-test";
    return {files.train.subset(s.train, "mnist-train"), files.train.subset(s.validation, "mnist-val"), std::move(test)};
}

/// Fresh model for `preset`; a GP head is placed on features of the first training items.
inline Model init_model(const std::string& preset, std::uint64_t seed, const Dataset& train) {
    Model m = build_model(preset, seed);
    if (m.spec.has_gp_head()) initialize_gp_head(m, train.head(kInducingSample).images, seed);
    return m;
}

/// Two-moons protocol: 200 points, σ = 0.1, 2000 Adam steps of batch 50 at 1e-2.
inline Dataset moons_data(std::uint64_t seed = 1) { return half_moons(200, 0.1, seed); }

inline TrainConfig moons_train_config(std::uint64_t seed = 1) {
    TrainConfig cfg;
    cfg.iterations = 2000;
    cfg.batch_size = 50;
    cfg.learning_rate = 1e-2;
    cfg.val_interval = 500;
    cfg.seed = seed;
    return cfg;
}

/// CW settings that fit the desk budget: c starts at 0.1 and grows ×10 until
/// bracketed, then three bisections; 300 Adam steps per round.
inline CWConfig desk_cw_config() {
    CWConfig cfg;
    cfg.search_steps = 6;
    cfg.initial_const = 0.1;
    cfg.iterations = 300;
    cfg.learning_rate = 1e-2;
    return cfg;
}

}  // namespace gpdnn
