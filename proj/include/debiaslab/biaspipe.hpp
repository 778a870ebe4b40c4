#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "debiaslab/attribution.hpp"
#include "debiaslab/classifier.hpp"
#include "debiaslab/datagen.hpp"

namespace debiaslab {

struct TrainConfig;

// Frozen biased-model record for one training example: its log-probabilities
// under the bias-segment-only view and its gold-logit saliency over the bias
// segment positions. Index-aligned with the dataset file.
struct BiasArtifact {
    std::int64_t example_index = 0;
    std::vector<double> biased_log_probs;
    SaliencyVector saliency;
};

// Trains the biased model: plain cross entropy on inputs restricted to the
// bias segment, using the same trainer defaults as the main model. Refuses
// degenerate single-class data.
ClassifierParams train_biased(const std::vector<LabeledExample>& train, const ModelDims& dims,
                              const TrainConfig& config);

// One artifact per example, in dataset order, computed from the frozen
// parameters. Deterministic: re-export is bit-identical.
std::vector<BiasArtifact> export_bias_artifacts(const ClassifierParams& params,
                                                const std::vector<LabeledExample>& dataset);

void write_artifacts(const std::filesystem::path& path,
                     const std::vector<BiasArtifact>& artifacts);
std::vector<BiasArtifact> read_artifacts(const std::filesystem::path& path);

}  // namespace debiaslab
