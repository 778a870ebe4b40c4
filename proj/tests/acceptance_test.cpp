// Acceptance suite: one test case per criterion, each printing a PASS/FAIL
// line. Thresholds are pinned here, from pilot runs where derived.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <vector>

#include "debiaslab/biaspipe.hpp"
#include "debiaslab/commands.hpp"
#include "debiaslab/config.hpp"
#include "debiaslab/digest.hpp"
#include "debiaslab/rng.hpp"
#include "debiaslab/trainer.hpp"
#include "straightline_oracle.hpp"

using namespace debiaslab;
namespace fs = std::filesystem;

namespace {

// Pinned acceptance thresholds.
constexpr double kGradientRelTol = 1e-5;
constexpr double kWorkedValueTol = 1e-5;
constexpr double kOracleTol = 1e-10;
constexpr double kUniformEquivalenceTol = 1e-10;
constexpr double kBiasedTrainFloor = 0.95;
constexpr double kBiasedOodCenter = 1.0 / 3.0;
constexpr double kBiasedOodWindow = 0.03;
constexpr double kMinOodGainOverCe = 0.10;
constexpr double kMaxIdGapToCe = 0.03;

struct CriterionGuard {
    const char* name;
    bool passed = false;
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    ~CriterionGuard() {
        const double seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::printf("[acceptance] %-28s %s  (%.1fs)\n", name, passed ? "PASS" : "FAIL",
                    seconds);
        std::fflush(stdout);
    }
};

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double shift = 0.0) {
    Tensor t = Tensor::zeros(std::move(shape), true);
    for (double& x : t.values) {
        x = rng.normal() + shift;
    }
    return t;
}

// f(x) = sum(w * op(x)) with fixed random weights, checked against central
// differences at the given point.
double op_gradient_error(const Tensor& point,
                         const std::function<Tape::Var(Tape&, Tape::Var)>& op, Rng& rng) {
    std::vector<double> weights;
    {
        Tape probe;
        Tensor input = point;
        const Tensor& out = probe.value(op(probe, probe.leaf(input)));
        weights.resize(out.numel());
        for (double& w : weights) {
            w = rng.normal();
        }
    }
    auto fn = [&](const Tensor& p) {
        Tape tape;
        const Tape::Var x = tape.leaf(p);
        Tape::Var y = op(tape, x);
        y = tape.mul(y, tape.constant(Tensor(tape.value(y).shape, weights)));
        while (tape.value(y).numel() > 1 || tape.value(y).rank() > 0) {
            y = tape.sum(y, 0);
        }
        tape.backward(y);
        const std::span<const double> g = tape.grad(x);
        return std::make_pair(tape.value(y).values[0],
                              std::vector<double>(g.begin(), g.end()));
    };
    return grad_check(fn, point, 1e-6);
}

std::vector<double> log_of(std::vector<double> probs) {
    for (double& p : probs) {
        p = std::log(p);
    }
    return probs;
}

std::vector<double> random_probs(Rng& rng, std::size_t classes) {
    std::vector<double> p(classes);
    double z = 0.0;
    for (double& x : p) {
        x = 0.05 + rng.real01();
        z += x;
    }
    for (double& x : p) {
        x /= z;
    }
    return p;
}

std::vector<double> dense_unit_grid() {
    std::vector<double> grid = {0.001, 0.01};
    for (double v = 0.05; v < 0.951; v += 0.05) {
        grid.push_back(v);
    }
    grid.push_back(0.99);
    grid.push_back(0.999);
    return grid;
}

const std::vector<double> kAlphaGrid = {0.01, 0.1, 0.2, 0.3, 0.5, 1.0};
const std::vector<double> kBetaGrid = {0.1, 0.3, 0.5, 1.0};

// The default experiment, built once and shared by criteria 4 and 5.
struct DefaultPipeline {
    ExperimentConfig config;
    DatasetSplits data;
    ClassifierParams biased;
    std::vector<BiasArtifact> artifacts;
    double biased_train_accuracy = 0.0;
    double biased_ood_accuracy = 0.0;
};

const DefaultPipeline& default_pipeline() {
    static const DefaultPipeline pipeline = [] {
        DefaultPipeline p;
        p.config.validate();
        p.data = generate(p.config.dataset);
        p.biased = train_biased(p.data.train, p.config.dims(), p.config.train);
        p.artifacts = export_bias_artifacts(p.biased, p.data.train);
        p.biased_train_accuracy =
            evaluate(p.biased, p.data.train, ViewMode::kBiasSegmentOnly);
        p.biased_ood_accuracy =
            evaluate(p.biased, p.data.ood_test, ViewMode::kBiasSegmentOnly);
        return p;
    }();
    return pipeline;
}

}  // namespace

TEST_CASE("criterion 1: gradient correctness") {
    CriterionGuard guard{"1 gradient correctness"};
    Rng rng(1001);

    using OpFn = std::function<Tape::Var(Tape&, Tape::Var)>;
    struct OpCheck {
        const char* name;
        std::vector<std::size_t> shape;
        double shift;
        OpFn op;
    };
    Tensor rhs = random_tensor({3, 4}, rng);
    Tensor rhs_matmul = random_tensor({4, 2}, rng);
    Tensor lhs_matmul = random_tensor({3, 4}, rng);
    const std::vector<OpCheck> checks = {
        {"matmul-lhs", {3, 4}, 0.0,
         [&](Tape& t, Tape::Var x) { return t.matmul(x, t.constant(rhs_matmul)); }},
        {"matmul-rhs", {4, 2}, 0.0,
         [&](Tape& t, Tape::Var x) { return t.matmul(t.constant(lhs_matmul), x); }},
        {"add", {3, 4}, 0.0,
         [&](Tape& t, Tape::Var x) { return t.add(x, t.constant(rhs)); }},
        {"sub", {3, 4}, 0.0,
         [&](Tape& t, Tape::Var x) { return t.sub(x, t.constant(rhs)); }},
        {"mul", {3, 4}, 0.0,
         [&](Tape& t, Tape::Var x) { return t.mul(x, t.constant(rhs)); }},
        {"add-scalar", {3, 4}, 0.0, [](Tape& t, Tape::Var x) { return t.add(x, 1.7); }},
        {"mul-scalar", {3, 4}, 0.0, [](Tape& t, Tape::Var x) { return t.mul(x, -0.8); }},
        {"tanh", {12}, 0.0, [](Tape& t, Tape::Var x) { return t.tanh(x); }},
        {"relu-positive", {12}, 4.0, [](Tape& t, Tape::Var x) { return t.relu(x); }},
        {"relu-negative", {12}, -4.0, [](Tape& t, Tape::Var x) { return t.relu(x); }},
        {"exp", {12}, 0.0, [](Tape& t, Tape::Var x) { return t.exp(x); }},
        {"log", {12}, 6.0, [](Tape& t, Tape::Var x) { return t.log(x); }},
        {"pow_scalar", {12}, 6.0,
         [](Tape& t, Tape::Var x) { return t.pow_scalar(x, 2.31); }},
        {"log_softmax", {3, 5}, 0.0, [](Tape& t, Tape::Var x) { return t.log_softmax(x); }},
        {"sum", {3, 4}, 0.0, [](Tape& t, Tape::Var x) { return t.sum(x, 1); }},
        {"mean", {3, 4}, 0.0, [](Tape& t, Tape::Var x) { return t.mean(x, 0); }},
        {"l2_norm", {3, 4}, 0.0, [](Tape& t, Tape::Var x) { return t.l2_norm(x, 1); }},
        {"embedding_gather", {6, 4}, 0.0,
         [](Tape& t, Tape::Var x) { return t.embedding_gather(x, {5, 0, 2, 2, 4}); }},
    };
    for (const OpCheck& check : checks) {
        INFO(check.name);
        for (int point = 0; point < 10; ++point) {
            const Tensor at = random_tensor(check.shape, rng, check.shift);
            REQUIRE(op_gradient_error(at, check.op, rng) < kGradientRelTol);
        }
    }

    // Composed model loss: embedding -> pooled MLP -> log_softmax -> loss,
    // differentiated with respect to every parameter tensor.
    const ModelDims dims{12, 6, 8, 3};
    for (int point = 0; point < 10; ++point) {
        const ClassifierParams base = init_classifier(dims, 2000 + point);
        InputView input;
        input.token_ids = {static_cast<std::int32_t>(rng.below(12)),
                           static_cast<std::int32_t>(rng.below(12)),
                           static_cast<std::int32_t>(rng.below(12)),
                           static_cast<std::int32_t>(rng.below(12)),
                           static_cast<std::int32_t>(rng.below(12))};
        input.visible = {1, 1, 0, 1, 1};
        const std::size_t gold = rng.below(3);
        const std::vector<double> biased_lp = log_of(random_probs(rng, 3));
        const double rho = rng.real01();

        LossConfig ce_only;
        ce_only.variant = LossVariant::kCe;
        LossConfig sals;
        sals.variant = LossVariant::kPoeSals;

        // Frozen similarity weights for the finite-difference route.
        double w_poe = 0.0;
        double w_ce = 1.0;
        {
            Tape tape;
            const ParamVars vars = insert_params(tape, base);
            const ExampleGraph g = build_example(tape, vars, input);
            const LossGraph lg = build_loss(tape, tape.log_softmax(g.logits), biased_lp, rho,
                                            gold, sals);
            w_poe = lg.breakdown.rho_star;
            w_ce = sals.alpha * (1.0 - lg.breakdown.rho_star);
        }

        for (std::size_t tensor_index = 0; tensor_index < ClassifierParams::kTensorCount;
             ++tensor_index) {
            auto fn = [&](const Tensor& perturbed) {
                ClassifierParams params = base;
                *params.tensors()[tensor_index] = perturbed;
                params.tensors()[tensor_index]->requires_grad = true;
                Tape tape;
                const ParamVars vars = insert_params(tape, params);
                const ExampleGraph g = build_example(tape, vars, input);
                const Tape::Var lp = tape.log_softmax(g.logits);
                const std::vector<double>& row = tape.value(lp).values;
                const double frozen_value = w_poe * poe_loss(row, biased_lp, gold) +
                                            w_ce * ce_loss(row, gold);
                const LossGraph lg = build_loss(tape, lp, biased_lp, rho, gold, sals);
                tape.backward(lg.total);
                const std::array<Tape::Var, 5> all = {vars.embedding, vars.hidden_weight,
                                                      vars.hidden_bias, vars.output_weight,
                                                      vars.output_bias};
                const std::span<const double> g2 = tape.grad(all[tensor_index]);
                return std::make_pair(frozen_value,
                                      std::vector<double>(g2.begin(), g2.end()));
            };
            REQUIRE(grad_check(fn, *base.tensors()[tensor_index], 1e-6) < kGradientRelTol);
        }
    }
    guard.passed = true;
}

TEST_CASE("criterion 2: loss-oracle equivalence") {
    CriterionGuard guard{"2 loss-oracle equivalence"};

    // Worked example, frozen.
    const std::vector<double> main_lp = log_of({0.6, 0.4});
    const std::vector<double> biased_lp = log_of({0.9, 0.1});
    LossConfig config;
    config.variant = LossVariant::kPoeSals;
    const PerExampleLossBreakdown worked = poe_sals_loss(main_lp, biased_lp, 0.5, 0, config);
    REQUIRE(std::abs(worked.poe - 0.071459) < kWorkedValueTol);
    REQUIRE(std::abs(worked.rho_star - 0.524486) < kWorkedValueTol);
    REQUIRE(std::abs(worked.total - 0.280385) < kWorkedValueTol);

    // 1,000 randomized cases against the straight-line reimplementation.
    Rng rng(1002);
    double max_diff = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t classes = 2 + rng.below(4);
        const std::vector<double> main_probs = random_probs(rng, classes);
        const std::vector<double> biased_probs = random_probs(rng, classes);
        const double rho = rng.real01();
        const std::size_t gold = rng.below(classes);
        LossConfig c;
        c.variant = LossVariant::kPoeSals;
        c.alpha = 0.01 + rng.real01() * 1.2;
        c.beta = 0.05 + rng.real01() * 1.2;
        const PerExampleLossBreakdown ours =
            poe_sals_loss(log_of(main_probs), log_of(biased_probs), rho, gold, c);
        const oracle::Values expected =
            oracle::poe_sals(main_probs, biased_probs, rho, gold, c.alpha, c.beta, c.epsilon);
        max_diff = std::max(max_diff, std::abs(ours.ce - expected.ce));
        max_diff = std::max(max_diff, std::abs(ours.poe - expected.poe));
        max_diff = std::max(max_diff, std::abs(ours.rho_star - expected.rho_star));
        max_diff = std::max(max_diff, std::abs(ours.total - expected.total));
    }
    REQUIRE(max_diff < kOracleTol);
    guard.passed = true;
}

TEST_CASE("criterion 3: loss regime properties") {
    CriterionGuard guard{"3 loss regime properties"};
    const std::vector<double> grid = dense_unit_grid();

    // Uniform biased expert: the similarity-weighted loss is plain CE.
    for (double p_main : grid) {
        const std::vector<double> main_lp =
            log_of({p_main, (1.0 - p_main) / 2.0, (1.0 - p_main) / 2.0});
        const std::vector<double> uniform = log_of({1.0 / 3, 1.0 / 3, 1.0 / 3});
        for (double rho : grid) {
            for (double beta : kBetaGrid) {
                LossConfig c;
                c.variant = LossVariant::kPoeSals;
                c.alpha = 1.0;
                c.beta = beta;
                const PerExampleLossBreakdown b =
                    poe_sals_loss(main_lp, uniform, rho, 0, c);
                REQUIRE(std::abs(b.total - ce_loss(main_lp, 0)) < kUniformEquivalenceTol);
            }
        }
    }

    // Adjusted similarity dominates and is monotone in rho and beta.
    for (double p : grid) {
        for (double rho : grid) {
            double previous_beta_value = -1.0;
            for (double beta : kBetaGrid) {
                const double star = adjusted_similarity(rho, p, beta, 1e-12);
                REQUIRE(star >= rho);
                REQUIRE(star >= previous_beta_value);
                previous_beta_value = star;
            }
        }
        for (double beta : kBetaGrid) {
            double previous = -1.0;
            for (double rho : grid) {
                const double star = adjusted_similarity(rho, p, beta, 1e-12);
                REQUIRE(star > previous);
                previous = star;
            }
        }
    }

    // Certain-correct biased expert: loss strictly decreasing in rho.
    const std::vector<double> certain_correct =
        log_of({1.0 - 1e-9, 0.5e-9, 0.5e-9});
    for (double p_main : grid) {
        const std::vector<double> main_lp =
            log_of({p_main, (1.0 - p_main) / 2.0, (1.0 - p_main) / 2.0});
        for (double alpha : kAlphaGrid) {
            for (double beta : kBetaGrid) {
                LossConfig c;
                c.variant = LossVariant::kPoeSals;
                c.alpha = alpha;
                c.beta = beta;
                double previous = std::numeric_limits<double>::infinity();
                for (double rho : grid) {
                    const double total =
                        poe_sals_loss(main_lp, certain_correct, rho, 0, c).total;
                    REQUIRE(total < previous);
                    previous = total;
                }
            }
        }
    }

    // Certain-incorrect biased expert with a correct main model: loss
    // strictly increasing in rho.
    const std::vector<double> certain_incorrect = log_of({1e-6, 0.5, 0.5 - 1e-6});
    for (double p_main : grid) {
        if (p_main <= 0.5) {
            continue;  // "correct main" half of the grid
        }
        const std::vector<double> main_lp =
            log_of({p_main, (1.0 - p_main) / 2.0, (1.0 - p_main) / 2.0});
        for (double alpha : kAlphaGrid) {
            for (double beta : kBetaGrid) {
                LossConfig c;
                c.variant = LossVariant::kPoeSals;
                c.alpha = alpha;
                c.beta = beta;
                double previous = -std::numeric_limits<double>::infinity();
                for (double rho : grid) {
                    const double total =
                        poe_sals_loss(main_lp, certain_incorrect, rho, 0, c).total;
                    REQUIRE(total > previous);
                    previous = total;
                }
            }
        }
    }
    guard.passed = true;
}

TEST_CASE("criterion 4: bias-construction certificate") {
    CriterionGuard guard{"4 bias certificate"};
    const DefaultPipeline& p = default_pipeline();
    std::printf("[acceptance]   biased model: train %.4f, decorrelated ood %.4f\n",
                p.biased_train_accuracy, p.biased_ood_accuracy);
    REQUIRE(p.biased_train_accuracy > kBiasedTrainFloor);
    REQUIRE(std::abs(p.biased_ood_accuracy - kBiasedOodCenter) <= kBiasedOodWindow);
    guard.passed = true;
}

TEST_CASE("criterion 5: directional debiasing result") {
    CriterionGuard guard{"5 directional debiasing"};
    const DefaultPipeline& p = default_pipeline();

    auto run_variant = [&](LossVariant variant) {
        TrainConfig config = p.config.train;
        config.loss.variant = variant;
        return multi_seed_run(p.data, &p.artifacts, p.config.dims(), config, 6).report;
    };
    const EvalReport ce = run_variant(LossVariant::kCe);
    const EvalReport poe = run_variant(LossVariant::kPoe);
    const EvalReport sals = run_variant(LossVariant::kPoeSals);

    std::printf("[acceptance]   ce       id %.4f+-%.4f  ood %.4f+-%.4f\n", ce.id.mean,
                ce.id.stddev, ce.ood.mean, ce.ood.stddev);
    std::printf("[acceptance]   poe      id %.4f+-%.4f  ood %.4f+-%.4f\n", poe.id.mean,
                poe.id.stddev, poe.ood.mean, poe.ood.stddev);
    std::printf("[acceptance]   poe_sals id %.4f+-%.4f  ood %.4f+-%.4f\n", sals.id.mean,
                sals.id.stddev, sals.ood.mean, sals.ood.stddev);

    REQUIRE(sals.ood.mean - ce.ood.mean >= kMinOodGainOverCe);
    REQUIRE(sals.ood.mean >= poe.ood.mean);
    REQUIRE(std::abs(sals.id.mean - ce.id.mean) <= kMaxIdGapToCe);
    guard.passed = true;
}

TEST_CASE("criterion 6: determinism across runs") {
    CriterionGuard guard{"6 determinism"};
    SyntheticSpec spec;
    spec.vocab_size = 16;
    spec.seq_len = 8;
    spec.n_signal_tokens = 6;
    spec.n_train = 400;
    spec.n_id_test = 100;
    spec.n_ood_test = 100;
    spec.bias_end = 2;
    spec.seed = 33;
    const ModelDims dims{spec.vocab_size, 12, 20, spec.num_classes};
    TrainConfig config;
    config.epochs = 2;
    config.peak_lr = 0.01;
    config.loss.variant = LossVariant::kPoeSals;
    config.bias_seed = 44;

    auto run_once = [&](const fs::path& dir) {
        fs::create_directories(dir);
        const DatasetSplits data = generate(spec);
        write_dataset(dir / "train.jsonl", data.train);
        write_dataset(dir / "ood.jsonl", data.ood_test);
        const ClassifierParams biased = train_biased(data.train, dims, config);
        const std::vector<BiasArtifact> artifacts = export_bias_artifacts(biased, data.train);
        write_artifacts(dir / "artifacts.jsonl", artifacts);
        const TrainResult main = train_main(data.train, &artifacts, dims, config, 9);
        save_checkpoint(main.params, dir / "main.ckpt");
    };
    const fs::path base = fs::temp_directory_path() / "debiaslab_acceptance_det";
    fs::remove_all(base);
    run_once(base / "a");
    run_once(base / "b");
    for (const char* file : {"train.jsonl", "ood.jsonl", "artifacts.jsonl", "main.ckpt"}) {
        REQUIRE(file_digest(base / "a" / file) == file_digest(base / "b" / file));
    }
    fs::remove_all(base);
    guard.passed = true;
}

TEST_CASE("criterion 7: file round-trip fidelity") {
    CriterionGuard guard{"7 round-trip fidelity"};
    SyntheticSpec spec;
    spec.vocab_size = 16;
    spec.seq_len = 8;
    spec.n_signal_tokens = 6;
    spec.n_train = 300;
    spec.n_id_test = 100;
    spec.n_ood_test = 100;
    spec.bias_end = 2;
    spec.seed = 34;
    const ModelDims dims{spec.vocab_size, 12, 20, spec.num_classes};
    TrainConfig config;
    config.epochs = 1;
    config.peak_lr = 0.01;
    config.loss.variant = LossVariant::kCe;

    const fs::path base = fs::temp_directory_path() / "debiaslab_acceptance_rt";
    fs::remove_all(base);
    fs::create_directories(base);

    const DatasetSplits data = generate(spec);
    write_dataset(base / "data_1.jsonl", data.train);
    write_dataset(base / "data_2.jsonl", read_dataset(base / "data_1.jsonl"));
    REQUIRE(file_digest(base / "data_1.jsonl") == file_digest(base / "data_2.jsonl"));

    const ClassifierParams biased = train_biased(data.train, dims, config);
    const std::vector<BiasArtifact> artifacts = export_bias_artifacts(biased, data.train);
    write_artifacts(base / "artifacts_1.jsonl", artifacts);
    write_artifacts(base / "artifacts_2.jsonl", read_artifacts(base / "artifacts_1.jsonl"));
    REQUIRE(file_digest(base / "artifacts_1.jsonl") == file_digest(base / "artifacts_2.jsonl"));

    save_checkpoint(biased, base / "model_1.ckpt");
    save_checkpoint(load_checkpoint(base / "model_1.ckpt"), base / "model_2.ckpt");
    REQUIRE(file_digest(base / "model_1.ckpt") == file_digest(base / "model_2.ckpt"));

    fs::remove_all(base);
    guard.passed = true;
}

TEST_CASE("default config file matches the built-in defaults") {
    // Keeps configs/default.json in lockstep with the acceptance runs above.
    CriterionGuard guard{"default-config consistency"};
    const fs::path path = fs::path(DEBIASLAB_SOURCE_DIR) / "configs" / "default.json";
    const ExperimentConfig from_file = load_experiment_config(path);
    const ExperimentConfig built_in;
    REQUIRE(experiment_config_to_json(from_file) == experiment_config_to_json(built_in));
    guard.passed = true;
}
