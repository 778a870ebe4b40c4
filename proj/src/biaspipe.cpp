#include "debiaslab/biaspipe.hpp"

#include <algorithm>
#include <fstream>
#include <string>

#include <json.hpp>

#include "debiaslab/errors.hpp"
#include "debiaslab/losses.hpp"
#include "debiaslab/trainer.hpp"

namespace debiaslab {

ClassifierParams train_biased(const std::vector<LabeledExample>& train, const ModelDims& dims,
                              const TrainConfig& config) {
    if (train.empty()) {
        throw DataError("train_biased: empty training set");
    }
    const std::int32_t first_label = train.front().label;
    const bool single_class =
        std::all_of(train.begin(), train.end(),
                    [&](const LabeledExample& ex) { return ex.label == first_label; });
    if (single_class) {
        throw DataError("train_biased: degenerate training set, every example has label " +
                        std::to_string(first_label));
    }
    TrainConfig biased_config = config;
    biased_config.loss.variant = LossVariant::kCe;
    return train_loop(train, nullptr, ViewMode::kBiasSegmentOnly, dims, biased_config,
                      config.bias_seed)
        .params;
}

std::vector<BiasArtifact> export_bias_artifacts(const ClassifierParams& params,
                                                const std::vector<LabeledExample>& dataset) {
    std::vector<BiasArtifact> artifacts;
    artifacts.reserve(dataset.size());
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const LabeledExample& ex = dataset[i];
        const InputView view = make_view(ex, ViewMode::kBiasSegmentOnly);
        const InputGradResult fg =
            forward_with_input_grad(params, view, static_cast<std::size_t>(ex.label));
        Tensor embeddings = Tensor::zeros({ex.token_ids.size(), params.dims.embedding_dim});
        for (std::size_t j = 0; j < ex.token_ids.size(); ++j) {
            const std::size_t row = static_cast<std::size_t>(ex.token_ids[j]);
            for (std::size_t c = 0; c < params.dims.embedding_dim; ++c) {
                embeddings.values[j * params.dims.embedding_dim + c] =
                    params.embedding_table.values[row * params.dims.embedding_dim + c];
            }
        }
        BiasArtifact artifact;
        artifact.example_index = static_cast<std::int64_t>(i);
        artifact.biased_log_probs = log_softmax_row(fg.logits.values);
        artifact.saliency = saliency(fg.grad_embeddings, embeddings, ex.bias_positions());
        artifacts.push_back(std::move(artifact));
    }
    return artifacts;
}

void write_artifacts(const std::filesystem::path& path,
                     const std::vector<BiasArtifact>& artifacts) {
    std::ofstream out(path);
    if (!out) {
        throw MissingFileError("cannot open artifact file for writing: " + path.string());
    }
    for (const BiasArtifact& a : artifacts) {
        nlohmann::json record = {
            {"example_index", a.example_index},
            {"log_probs", a.biased_log_probs},
            {"saliency", {{"positions", a.saliency.positions}, {"scores", a.saliency.scores}}},
        };
        out << record.dump() << "\n";
    }
    if (!out) {
        throw DataError("failed writing artifacts: " + path.string());
    }
}

std::vector<BiasArtifact> read_artifacts(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw MissingFileError("artifact file not found: " + path.string());
    }
    std::vector<BiasArtifact> artifacts;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        const std::string where = path.string() + ":" + std::to_string(line_no);
        nlohmann::json record;
        try {
            record = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw DataError("artifact parse error at " + where + ": " + e.what());
        }
        BiasArtifact a;
        try {
            a.example_index = record.at("example_index").get<std::int64_t>();
            a.biased_log_probs = record.at("log_probs").get<std::vector<double>>();
            const nlohmann::json& sal = record.at("saliency");
            a.saliency.positions = sal.at("positions").get<std::vector<std::int32_t>>();
            a.saliency.scores = sal.at("scores").get<std::vector<double>>();
        } catch (const nlohmann::json::exception& e) {
            throw DataError("artifact record error at " + where + ": " + e.what());
        }
        if (a.saliency.positions.size() != a.saliency.scores.size()) {
            throw DataError("artifact record error at " + where +
                            ": saliency positions and scores differ in length");
        }
        if (a.example_index != static_cast<std::int64_t>(artifacts.size())) {
            throw DataError("artifact record error at " + where + ": example_index " +
                            std::to_string(a.example_index) + " out of order (expected " +
                            std::to_string(artifacts.size()) + ")");
        }
        artifacts.push_back(std::move(a));
    }
    return artifacts;
}

}  // namespace debiaslab
