#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "debiaslab/biaspipe.hpp"
#include "debiaslab/errors.hpp"
#include "debiaslab/losses.hpp"
#include "debiaslab/trainer.hpp"

using namespace debiaslab;

namespace {

SyntheticSpec pilot_spec() {
    SyntheticSpec spec;
    spec.vocab_size = 16;
    spec.seq_len = 8;
    spec.num_classes = 3;
    spec.n_signal_tokens = 6;
    spec.p_bias = 1.0;
    spec.signal_noise = 0.0;
    spec.n_train = 2000;
    spec.n_id_test = 500;
    spec.n_ood_test = 1000;
    spec.bias_begin = 0;
    spec.bias_end = 2;
    spec.seed = 901;
    return spec;
}

ModelDims pilot_dims(const SyntheticSpec& spec) {
    return ModelDims{spec.vocab_size, 16, 32, spec.num_classes};
}

TrainConfig pilot_config() {
    TrainConfig config;
    config.epochs = 3;
    config.batch_size = 32;
    config.peak_lr = 0.01;
    config.bias_seed = 111;
    config.loss.variant = LossVariant::kCe;
    return config;
}

}  // namespace

TEST_CASE("biased model exploits a fully predictive shortcut") {
    const SyntheticSpec spec = pilot_spec();
    const DatasetSplits splits = generate(spec);
    const ClassifierParams params =
        train_biased(splits.train, pilot_dims(spec), pilot_config());
    CHECK(evaluate(params, splits.train, ViewMode::kBiasSegmentOnly) > 0.99);

    // Decorrelated OOD leaves the shortcut at chance, within 3 points.
    CHECK(std::abs(evaluate(params, splits.ood_test, ViewMode::kBiasSegmentOnly) - 1.0 / 3) <
          0.03);
}

TEST_CASE("zero-epoch training returns the initialization unchanged") {
    const SyntheticSpec spec = pilot_spec();
    const DatasetSplits splits = generate(spec);
    TrainConfig config = pilot_config();
    config.epochs = 0;
    const ClassifierParams trained =
        train_biased(splits.train, pilot_dims(spec), config);
    const ClassifierParams fresh = init_classifier(pilot_dims(spec), config.bias_seed);
    const auto a = trained.tensors();
    const auto b = fresh.tensors();
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i]->values == b[i]->values);
    }
}

TEST_CASE("single-class data is refused with a diagnostic") {
    SyntheticSpec spec = pilot_spec();
    spec.n_train = 50;
    DatasetSplits splits = generate(spec);
    for (LabeledExample& ex : splits.train) {
        ex.label = 1;
    }
    CHECK_THROWS_AS(train_biased(splits.train, pilot_dims(spec), pilot_config()), DataError);
}

TEST_CASE("artifact export is aligned, non-negative and reproducible") {
    SyntheticSpec spec = pilot_spec();
    spec.n_train = 300;
    const DatasetSplits splits = generate(spec);
    TrainConfig config = pilot_config();
    config.epochs = 1;
    const ClassifierParams params =
        train_biased(splits.train, pilot_dims(spec), config);

    const std::vector<BiasArtifact> artifacts = export_bias_artifacts(params, splits.train);
    REQUIRE(artifacts.size() == splits.train.size());
    double score_mass = 0.0;
    for (const BiasArtifact& a : artifacts) {
        for (double s : a.saliency.scores) {
            score_mass += s;
        }
    }
    CHECK(score_mass > 0.0);  // a trained model attributes something to its input
    for (std::size_t i = 0; i < artifacts.size(); ++i) {
        CHECK(artifacts[i].example_index == static_cast<std::int64_t>(i));
        double prob_sum = 0.0;
        for (double lp : artifacts[i].biased_log_probs) {
            prob_sum += std::exp(lp);
        }
        CHECK(prob_sum == doctest::Approx(1.0).epsilon(1e-9));
        REQUIRE(artifacts[i].saliency.positions.size() ==
                splits.train[i].bias_end - splits.train[i].bias_begin);
        for (std::size_t j = 0; j < artifacts[i].saliency.positions.size(); ++j) {
            const std::int32_t pos = artifacts[i].saliency.positions[j];
            CHECK(splits.train[i].in_bias_segment(static_cast<std::size_t>(pos)));
            CHECK(artifacts[i].saliency.scores[j] >= 0.0);
        }
    }

    // Frozen model: re-export is bit-identical.
    const std::vector<BiasArtifact> again = export_bias_artifacts(params, splits.train);
    for (std::size_t i = 0; i < artifacts.size(); ++i) {
        CHECK(artifacts[i].biased_log_probs == again[i].biased_log_probs);
        CHECK(artifacts[i].saliency.scores == again[i].saliency.scores);
    }
}

TEST_CASE("stored log-probs are recomputable from the checkpoint to 1e-12") {
    SyntheticSpec spec = pilot_spec();
    spec.n_train = 200;
    const DatasetSplits splits = generate(spec);
    TrainConfig config = pilot_config();
    config.epochs = 1;
    const ClassifierParams params =
        train_biased(splits.train, pilot_dims(spec), config);
    const std::vector<BiasArtifact> artifacts = export_bias_artifacts(params, splits.train);

    const auto ckpt = std::filesystem::temp_directory_path() / "debiaslab_bias_test.ckpt";
    save_checkpoint(params, ckpt);
    const ClassifierParams restored = load_checkpoint(ckpt);
    std::filesystem::remove(ckpt);

    const std::size_t probe = 123;
    const InputView view = make_view(splits.train[probe], ViewMode::kBiasSegmentOnly);
    const std::vector<double> recomputed =
        log_softmax_row(forward(restored, view).values);
    REQUIRE(recomputed.size() == artifacts[probe].biased_log_probs.size());
    for (std::size_t k = 0; k < recomputed.size(); ++k) {
        CHECK(std::abs(recomputed[k] - artifacts[probe].biased_log_probs[k]) < 1e-12);
    }
}

TEST_CASE("artifact files round-trip and misalignment is rejected") {
    SyntheticSpec spec = pilot_spec();
    spec.n_train = 100;
    const DatasetSplits splits = generate(spec);
    TrainConfig config = pilot_config();
    config.epochs = 1;
    const ClassifierParams params =
        train_biased(splits.train, pilot_dims(spec), config);
    const std::vector<BiasArtifact> artifacts = export_bias_artifacts(params, splits.train);

    const auto path = std::filesystem::temp_directory_path() / "debiaslab_artifacts_test.jsonl";
    write_artifacts(path, artifacts);
    const std::vector<BiasArtifact> restored = read_artifacts(path);
    REQUIRE(restored.size() == artifacts.size());
    for (std::size_t i = 0; i < artifacts.size(); ++i) {
        CHECK(restored[i].example_index == artifacts[i].example_index);
        CHECK(restored[i].biased_log_probs == artifacts[i].biased_log_probs);
        CHECK(restored[i].saliency.positions == artifacts[i].saliency.positions);
        CHECK(restored[i].saliency.scores == artifacts[i].saliency.scores);
    }

    // An out-of-order index is a hard error naming the line.
    {
        std::ofstream out(path);
        out << R"({"example_index":1,"log_probs":[-1.0,-1.0,-1.0],)"
            << R"("saliency":{"positions":[0],"scores":[0.5]}})" << "\n";
    }
    CHECK_THROWS_AS(read_artifacts(path), DataError);
    std::filesystem::remove(path);
}
