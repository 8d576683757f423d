// gpdnn: train, evaluate, attack and inspect GPDNN models.
//
// Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gpdnn/gpdnn.hpp"

using namespace gpdnn;
namespace fs = std::filesystem;

namespace {

constexpr int kUsageError = 2;
constexpr int kDataError = 3;
constexpr int kNumericError = 4;

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item.erase(0, item.find_first_not_of(" \t"));
        item.erase(item.find_last_not_of(" \t") + 1);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::vector<double> parse_doubles(const std::string& s) {
    std::vector<double> out;
    for (const auto& item : split_list(s)) {
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(item, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != item.size()) throw ContractError("not a number: '" + item + "'");
        out.push_back(v);
    }
    return out;
}

/// `key = value` lines ('#' starts a comment) become `--key=value` arguments.
std::vector<std::string> config_arguments(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config file '" + path + "'");
    std::vector<std::string> args;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        line = line.substr(0, line.find('#'));
        const auto eq = line.find('=');
        auto trim = [](std::string s) {
            s.erase(0, s.find_first_not_of(" \t\r"));
            s.erase(s.find_last_not_of(" \t\r") + 1);
            return s;
        };
        if (trim(line).empty()) continue;
        if (eq == std::string::npos) throw DataError(path + ":" + std::to_string(line_no) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
        if (key == "config") throw DataError(path + ":" + std::to_string(line_no) + ": config files cannot nest");
        args.push_back("--" + key + "=" + value);
    }
    return args;
}

/// Name a checkpoint is reported under: its stem, or its directory for the default `model.ckpt`.
std::string model_name(const std::string& path) {
    const fs::path p(path);
    if (p.stem() == "model" && p.has_parent_path()) return p.parent_path().filename().string();
    return p.stem().string();
}

struct LoadedModels {
    std::vector<Model> models;
    std::vector<std::string> names;

    std::vector<NamedModel> named() const {
        std::vector<NamedModel> out;
        for (std::size_t i = 0; i < models.size(); ++i) out.push_back({names[i], &models[i]});
        return out;
    }
};

LoadedModels load_models(const std::vector<std::string>& paths) {
    if (paths.empty()) throw ContractError("no checkpoints given");
    LoadedModels out;
    for (const auto& p : paths) {
        out.models.push_back(load_model(p));
        out.names.push_back(model_name(p));
    }
    return out;
}

/// Evaluation data for a model input shape: MNIST test images or the two-moons set.
Dataset eval_data(const Shape& input, const std::string& mnist, std::size_t test_size, std::uint64_t seed) {
    if (input == Shape{2}) return moons_data(seed);
    if (mnist.empty()) throw DataError("MNIST models need --mnist DIR");
    Dataset test = load_mnist(mnist).test.head(test_size);
    test.name = "mnist-test";
    return test;
}

/// Every option of `cmd` as key=value; `resolved` replaces values the command
/// derived itself (an empty string drops the key).
void write_effective_config(const CLI::App& cmd, const std::string& command, const fs::path& out,
                            const std::map<std::string, std::string>& resolved = {}) {
    std::ostringstream os;
    os << "command=" << command << '\n';
    for (const CLI::Option* opt : cmd.get_options()) {
        if (opt->get_lnames().empty() || opt->get_lnames()[0] == "help") continue;
        const std::string& key = opt->get_lnames()[0];
        std::string value = opt->count() ? opt->results().back() : opt->get_default_str();
        if (const auto it = resolved.find(key); it != resolved.end()) value = it->second;
        if (value.empty()) continue;
        os << key << '=' << value << '\n';
    }
    std::ofstream f(out / "config.txt", std::ios::trunc);
    f << os.str();
}

void save_atomically(const Model& m, const fs::path& path) {
    const fs::path tmp = path.string() + ".partial";
    save_model(m, tmp.string());
    fs::rename(tmp, path);
}

struct Common {
    std::string out;
    std::string mnist;
    std::uint64_t seed = 1;
    std::size_t test_size = kTestSize;
    std::size_t threads = 1;
};

void add_common(CLI::App* cmd, Common& c, bool with_threads) {
    cmd->add_option("--out", c.out, "Output directory")->required();
    cmd->add_option("--mnist", c.mnist, "Directory holding the four MNIST IDX files");
    cmd->add_option("--seed", c.seed, "Random seed");
    cmd->add_option("--test-size", c.test_size, "Number of MNIST test images used");
    if (with_threads) cmd->add_option("--threads", c.threads, "Worker threads (1 keeps results bit-exact)");
}

// ---------------------------------------------------------------- train

struct TrainArgs {
    Common common;
    std::string preset;
    double proportion = 0.1;
    std::size_t iters = 6000, batch = 250, val_interval = 500, val_size = kValidationSize;
    double lr = 1e-3;
    double gp_lr = 0.0;
    std::size_t switch_at = 0, switch_inducing = 100;
    std::string switch_kernel = "rbf";
};

int cmd_train(const TrainArgs& a, const CLI::App& cmd) {
    const bool moons = a.preset.rfind("halfmoon-", 0) == 0;
    Model model = build_model(a.preset, a.common.seed);  // validates the preset before any data is read
    TrainConfig cfg = moons ? moons_train_config(a.common.seed) : TrainConfig{};
    cfg.seed = a.common.seed;
    auto given = [&](const char* name) { return cmd.count(name) > 0; };
    if (!moons || given("--iters")) cfg.iterations = a.iters;
    if (!moons || given("--batch")) cfg.batch_size = a.batch;
    if (!moons || given("--lr")) cfg.learning_rate = a.lr;
    if (!moons || given("--val-interval")) cfg.val_interval = a.val_interval;
    if (a.gp_lr > 0.0) cfg.gp_learning_rate = a.gp_lr;
    if (given("--switch-at")) {
        cfg.switch_iteration = a.switch_at;
        cfg.switch_inducing = a.switch_inducing;
        cfg.switch_kernel = a.switch_kernel == "linear" ? KernelKind::Linear : KernelKind::Rbf;
        if (a.switch_kernel != "rbf" && a.switch_kernel != "linear") throw ContractError("--switch-kernel must be rbf or linear");
    }

    Dataset train_set, validation, test;
    if (moons) {
        train_set = moons_data(a.common.seed);
        test = train_set;
    } else {
        if (a.common.mnist.empty()) throw DataError("MNIST presets need --mnist DIR");
        MnistSplit s = mnist_split(a.common.mnist, a.proportion, a.common.seed, a.common.test_size, a.val_size);
        train_set = std::move(s.train);
        validation = std::move(s.validation);
        test = std::move(s.test);
    }
    if (model.spec.has_gp_head()) initialize_gp_head(model, train_set.head(kInducingSample).images, a.common.seed);

    const fs::path out(a.common.out);
    fs::create_directories(out);
    std::map<std::string, std::string> resolved = {
        {"iters", std::to_string(cfg.iterations)},
        {"batch", std::to_string(cfg.batch_size)},
        {"lr", format_number(cfg.learning_rate)},
        {"gp-lr", format_number(cfg.gp_learning_rate.value_or(cfg.learning_rate))},
        {"val-interval", std::to_string(cfg.val_interval)}};
    if (moons) {
        for (const char* key : {"proportion", "val-size", "test-size", "mnist"}) resolved[key] = "";
    }
    if (!cfg.switch_iteration) {
        for (const char* key : {"switch-at", "switch-inducing", "switch-kernel"}) resolved[key] = "";
    }
    write_effective_config(cmd, "train", out, resolved);
    const TrainResult r = train(model, train_set, moons ? nullptr : &validation, cfg, &std::cerr);
    trace_table(r.trace).write((out / "trace.csv").string());
    EvalReport rep = evaluate(r.model, test);
    rep.model = a.preset;
    CsvTable t = eval_table();
    add_row(t, rep);
    t.write((out / "eval.csv").string());
    save_atomically(r.model, out / "model.ckpt");
    std::cout << "best iteration " << r.best_iteration << '\n'
              << rep.dataset << ": error " << format_number(rep.error) << " ll " << format_number(rep.ll) << " entropy "
              << format_number(rep.entropy) << '\n';
    return 0;
}

// ---------------------------------------------------------------- transfer / evaluate

struct TransferArgs {
    Common common;
    std::string models;
    std::string semeion;
};

int cmd_transfer(const TransferArgs& a, const CLI::App& cmd) {
    const LoadedModels lm = load_models(split_list(a.models));
    std::vector<Dataset> sets;
    const Shape input = lm.models.front().spec.input;
    sets.push_back(eval_data(input, a.common.mnist, a.common.test_size, a.common.seed));
    if (!a.semeion.empty()) sets.push_back(load_semeion(a.semeion));
    std::vector<const Dataset*> ptrs;
    for (const auto& d : sets) ptrs.push_back(&d);

    const fs::path out(a.common.out);
    fs::create_directories(out);
    write_effective_config(cmd, "transfer", out);
    CsvTable t = eval_table();
    for (const auto& r : transfer_test(lm.named(), ptrs)) {
        add_row(t, r);
        std::cout << r.dataset << " " << r.model << ": error " << format_number(r.error) << " ll " << format_number(r.ll)
                  << " entropy " << format_number(r.entropy) << '\n';
    }
    t.write((out / "transfer.csv").string());
    return 0;
}

// ---------------------------------------------------------------- attacks

struct FgsmArgs {
    Common common;
    std::string source;
    std::string eval;
    std::string eps = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1";
};

int cmd_fgsm(const FgsmArgs& a, const CLI::App& cmd) {
    const std::vector<double> eps = parse_doubles(a.eps);
    const Model source = load_model(a.source);
    const LoadedModels lm = load_models(a.eval.empty() ? std::vector<std::string>{a.source} : split_list(a.eval));
    const Dataset data = eval_data(source.spec.input, a.common.mnist, a.common.test_size, a.common.seed);

    const fs::path out(a.common.out);
    fs::create_directories(out);
    write_effective_config(cmd, "attack fgsm", out);
    const SweepReport rep = epsilon_sweep(lm.named(), source, data, eps);
    rep.table().write((out / "sweep.csv").string());
    for (const auto& row : rep.rows)
        for (const auto& r : row.reports)
            std::cout << "eps " << format_number(row.epsilon) << " " << r.model << ": error " << format_number(r.error) << " ll "
                      << format_number(r.ll) << " entropy " << format_number(r.entropy) << '\n';
    return 0;
}

struct CwArgs {
    Common common;
    std::string models;
    std::size_t n = 100;
    CWConfig cw = desk_cw_config();
    bool no_abort_early = false;
};

int cmd_cw(const CwArgs& a, const CLI::App& cmd) {
    const LoadedModels lm = load_models(split_list(a.models));
    if (lm.models.size() != 2) throw ContractError("attack cw compares exactly two models (--models A,B)");
    const Dataset data = eval_data(lm.models[0].spec.input, a.common.mnist, a.common.test_size, a.common.seed);
    CWConfig cfg = a.cw;
    cfg.threads = a.common.threads;
    cfg.abort_early = !a.no_abort_early;

    const fs::path out(a.common.out);
    fs::create_directories(out);
    write_effective_config(cmd, "attack cw", out);
    const auto rows = correct_for_all({&lm.models[0], &lm.models[1]}, data, a.n);
    if (rows.size() < a.n) std::cerr << "only " << rows.size() << " images are classified correctly by both models\n";
    const auto named = lm.named();
    const CwStudy s = cw_study(named[0], named[1], data, rows, cfg);
    s.table().write((out / "cw.csv").string());
    s.paired_table().write((out / "cw_paired.csv").string());
    s.histogram_table().write((out / "cw_histogram.csv").string());
    s.transfer_table().write((out / "cw_transfer.csv").string());
    std::cout << rows.size() << " images\n"
              << s.name_a << ": " << s.failures_a << " failures, mean L2 " << format_number(s.mean_distance(false)) << '\n'
              << s.name_b << ": " << s.failures_b << " failures, mean L2 " << format_number(s.mean_distance(true)) << '\n'
              << s.paired.size() << " paired, mean difference (" << s.name_b << " − " << s.name_a << ") "
              << format_number(s.mean_difference()) << '\n';
    return 0;
}

// ---------------------------------------------------------------- grid

struct GridArgs {
    std::string out;
    std::string model;
    GridSpec spec;
    std::size_t n = 200;
};

int cmd_grid(const GridArgs& a, const CLI::App& cmd) {
    const Model m = load_model(a.model);
    GridSpec spec = a.spec;
    spec.n0 = spec.n1 = a.n;
    const auto grid = boundary_grid(m, spec);
    const fs::path out(a.out);
    fs::create_directories(out);
    write_effective_config(cmd, "grid", out);
    grid_table(grid).write((out / "grid.csv").string());
    std::cout << grid.size() << " grid points\n";
    return 0;
}

/// Index just past the command words (`train`, `attack cw`, ...).
std::size_t command_end(const std::vector<std::string>& args) {
    if (args.empty()) return 0;
    if (args[0] == "attack") return std::min<std::size_t>(2, args.size());
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Gaussian-process hybrid deep networks: training, attacks and transfer tests"};
    app.require_subcommand(1);
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast)->always_capture_default();

    TrainArgs train_args;
    CLI::App* train_cmd = app.add_subcommand("train", "Train a preset; writes model.ckpt, trace.csv and eval.csv");
    add_common(train_cmd, train_args.common, false);
    train_cmd->add_option("--preset", train_args.preset, "Model preset")
        ->required()
        ->check(CLI::IsMember(preset_names()));
    train_cmd->add_option("--proportion", train_args.proportion, "Fraction of the non-validation training images");
    train_cmd->add_option("--val-size", train_args.val_size, "Validation images taken from the start of the training file");
    train_cmd->add_option("--iters", train_args.iters, "Training iterations");
    train_cmd->add_option("--batch", train_args.batch, "Minibatch size");
    train_cmd->add_option("--lr", train_args.lr, "Adam learning rate");
    train_cmd->add_option("--gp-lr", train_args.gp_lr, "Learning rate of the GP head (default: --lr)");
    train_cmd->add_option("--val-interval", train_args.val_interval, "Iterations between validation checks");
    train_cmd->add_option("--switch-at", train_args.switch_at, "Swap a B model's softmax for a GP after this iteration");
    train_cmd->add_option("--switch-inducing", train_args.switch_inducing, "Inducing points of the swapped-in GP");
    train_cmd->add_option("--switch-kernel", train_args.switch_kernel, "Kernel of the swapped-in GP (rbf|linear)");

    TransferArgs transfer_args;
    CLI::App* transfer_cmd = app.add_subcommand("transfer", "Score checkpoints on MNIST test (and Semeion); writes transfer.csv");
    transfer_cmd->alias("evaluate");
    add_common(transfer_cmd, transfer_args.common, false);
    transfer_cmd->add_option("--models", transfer_args.models, "Comma-separated checkpoints")->required();
    transfer_cmd->add_option("--semeion", transfer_args.semeion, "Path to semeion.data");

    CLI::App* attack_cmd = app.add_subcommand("attack", "Adversarial attacks");
    attack_cmd->require_subcommand(1);
    FgsmArgs fgsm_args;
    CLI::App* fgsm_cmd = attack_cmd->add_subcommand("fgsm", "FGSM ε-sweep; writes sweep.csv");
    add_common(fgsm_cmd, fgsm_args.common, false);
    fgsm_cmd->add_option("--source", fgsm_args.source, "Checkpoint the examples are generated on")->required();
    fgsm_cmd->add_option("--eval", fgsm_args.eval, "Comma-separated checkpoints to score (default: the source)");
    fgsm_cmd->add_option("--eps", fgsm_args.eps, "Comma-separated, strictly increasing step sizes");

    CwArgs cw_args;
    CLI::App* cw_cmd = attack_cmd->add_subcommand("cw", "Paired Carlini-Wagner L2 study of two models");
    add_common(cw_cmd, cw_args.common, true);
    cw_cmd->add_option("--models", cw_args.models, "Two comma-separated checkpoints")->required();
    cw_cmd->add_option("--n", cw_args.n, "Images attacked (first ones both models classify correctly)");
    cw_cmd->add_option("--search-steps", cw_args.cw.search_steps, "Binary-search rounds over c");
    cw_cmd->add_option("--c0", cw_args.cw.initial_const, "Initial trade-off constant c");
    cw_cmd->add_option("--iters", cw_args.cw.iterations, "Adam steps per round");
    cw_cmd->add_option("--lr", cw_args.cw.learning_rate, "Adam learning rate");
    cw_cmd->add_option("--confidence", cw_args.cw.confidence, "Margin κ");
    cw_cmd->add_option("--block", cw_args.cw.block, "Images optimised together");
    cw_cmd->add_flag("--no-abort-early", cw_args.no_abort_early, "Run every Adam step even when the loss stalls");

    GridArgs grid_args;
    CLI::App* grid_cmd = app.add_subcommand("grid", "Predictive p(class 1) and entropy over a 2-D grid; writes grid.csv");
    grid_cmd->add_option("--out", grid_args.out, "Output directory")->required();
    grid_cmd->add_option("--model", grid_args.model, "Checkpoint of a 2-D input model")->required();
    grid_cmd->add_option("--n", grid_args.n, "Points per axis");
    grid_cmd->add_option("--x0-lo", grid_args.spec.x0_lo);
    grid_cmd->add_option("--x0-hi", grid_args.spec.x0_hi);
    grid_cmd->add_option("--x1-lo", grid_args.spec.x1_lo);
    grid_cmd->add_option("--x1-hi", grid_args.spec.x1_hi);

    std::vector<std::string> args(argv + 1, argv + argc);
    try {
        // Expand --config FILE in place of the flag, ahead of every explicit flag.
        std::vector<std::string> expanded, from_config;
        for (std::size_t i = 0; i < args.size(); ++i) {
            if (args[i] == "--config" && i + 1 < args.size()) {
                from_config = config_arguments(args[++i]);
            } else if (args[i].rfind("--config=", 0) == 0) {
                from_config = config_arguments(args[i].substr(9));
            } else {
                expanded.push_back(args[i]);
            }
        }
        const std::size_t at = command_end(expanded);
        expanded.insert(expanded.begin() + static_cast<std::ptrdiff_t>(at), from_config.begin(), from_config.end());
        std::reverse(expanded.begin(), expanded.end());
        app.parse(expanded);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kUsageError;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kDataError;
    }

    try {
        if (*train_cmd) return cmd_train(train_args, *train_cmd);
        if (*transfer_cmd) return cmd_transfer(transfer_args, *transfer_cmd);
        if (*fgsm_cmd) return cmd_fgsm(fgsm_args, *fgsm_cmd);
        if (*cw_cmd) return cmd_cw(cw_args, *cw_cmd);
        if (*grid_cmd) return cmd_grid(grid_args, *grid_cmd);
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kDataError;
    } catch (const ShapeError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kDataError;
    } catch (const NumericError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return kNumericError;
    } catch (const ContractError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return kUsageError;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kDataError;
    }
    return kUsageError;
}
