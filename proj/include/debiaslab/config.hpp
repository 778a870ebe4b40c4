#pragma once

#include <filesystem>

#include <json.hpp>

#include "debiaslab/classifier.hpp"
#include "debiaslab/datagen.hpp"
#include "debiaslab/trainer.hpp"

namespace debiaslab {

struct ModelConfig {
    std::size_t embedding_dim = 24;
    std::size_t hidden_dim = 48;
};

// One file drives one experiment end to end. Parsing rejects unknown keys;
// omitted keys take the defaults, and the echoed form always carries every
// field fully materialized.
struct ExperimentConfig {
    SyntheticSpec dataset;
    ModelConfig model;
    TrainConfig train;

    ModelDims dims() const {
        return ModelDims{dataset.vocab_size, model.embedding_dim, model.hidden_dim,
                         dataset.num_classes};
    }
    void validate() const;
};

ExperimentConfig parse_experiment_config(const nlohmann::json& source);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

nlohmann::json experiment_config_to_json(const ExperimentConfig& config);
nlohmann::json train_config_to_json(const TrainConfig& config);
nlohmann::json eval_report_to_json(const EvalReport& report);

}  // namespace debiaslab
