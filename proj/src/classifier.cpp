#include "debiaslab/classifier.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "debiaslab/errors.hpp"

namespace debiaslab {

namespace {

constexpr int kCheckpointVersion = 1;
constexpr const char* kCheckpointFormat = "debiaslab_checkpoint";

Tensor pooling_weights(const InputView& input) {
    const std::size_t len = input.token_ids.size();
    std::size_t visible_count = 0;
    for (std::uint8_t v : input.visible) {
        visible_count += v != 0;
    }
    if (visible_count == 0) {
        throw std::invalid_argument("forward: input has no visible positions");
    }
    Tensor weights = Tensor::zeros({1, len});
    const double w = 1.0 / static_cast<double>(visible_count);
    for (std::size_t j = 0; j < len; ++j) {
        if (input.visible[j] != 0) {
            weights.values[j] = w;
        }
    }
    return weights;
}

}  // namespace

const std::array<const char*, ClassifierParams::kTensorCount> ClassifierParams::kTensorNames = {
    "embedding_table", "hidden_weight", "hidden_bias", "output_weight", "output_bias"};

void ModelDims::validate() const {
    if (num_classes < 2) {
        throw ConfigError("model: num_classes must be at least 2, got " +
                          std::to_string(num_classes));
    }
    if (vocab_size == 0 || embedding_dim == 0 || hidden_dim == 0) {
        throw ConfigError("model: vocab_size, embedding_dim and hidden_dim must be positive");
    }
}

std::array<Tensor*, ClassifierParams::kTensorCount> ClassifierParams::tensors() {
    return {&embedding_table, &hidden_weight, &hidden_bias, &output_weight, &output_bias};
}

std::array<const Tensor*, ClassifierParams::kTensorCount> ClassifierParams::tensors() const {
    return {&embedding_table, &hidden_weight, &hidden_bias, &output_weight, &output_bias};
}

ClassifierParams init_classifier(const ModelDims& dims, Rng& rng) {
    dims.validate();
    ClassifierParams p;
    p.dims = dims;
    p.embedding_table = Tensor::zeros({dims.vocab_size, dims.embedding_dim}, true);
    for (double& x : p.embedding_table.values) {
        x = rng.normal(0.0, 0.5);
    }
    p.hidden_weight = Tensor::zeros({dims.embedding_dim, dims.hidden_dim}, true);
    const double hidden_scale = 1.0 / std::sqrt(static_cast<double>(dims.embedding_dim));
    for (double& x : p.hidden_weight.values) {
        x = rng.normal(0.0, hidden_scale);
    }
    p.hidden_bias = Tensor::zeros({1, dims.hidden_dim}, true);
    p.output_weight = Tensor::zeros({dims.hidden_dim, dims.num_classes}, true);
    const double output_scale = 1.0 / std::sqrt(static_cast<double>(dims.hidden_dim));
    for (double& x : p.output_weight.values) {
        x = rng.normal(0.0, output_scale);
    }
    p.output_bias = Tensor::zeros({1, dims.num_classes}, true);
    return p;
}

ClassifierParams init_classifier(const ModelDims& dims, std::uint64_t seed) {
    Rng rng(seed);
    return init_classifier(dims, rng);
}

ParamVars insert_params(Tape& tape, const ClassifierParams& params) {
    ParamVars vars;
    vars.embedding = tape.leaf(params.embedding_table);
    vars.hidden_weight = tape.leaf(params.hidden_weight);
    vars.hidden_bias = tape.leaf(params.hidden_bias);
    vars.output_weight = tape.leaf(params.output_weight);
    vars.output_bias = tape.leaf(params.output_bias);
    return vars;
}

ExampleGraph build_example(Tape& tape, const ParamVars& vars, const InputView& input) {
    if (input.token_ids.empty()) {
        throw std::invalid_argument("forward: empty token sequence");
    }
    if (input.token_ids.size() != input.visible.size()) {
        throw std::invalid_argument("forward: token_ids and visibility mask lengths differ (" +
                                    std::to_string(input.token_ids.size()) + " vs " +
                                    std::to_string(input.visible.size()) + ")");
    }
    ExampleGraph g;
    g.gathered = tape.embedding_gather(vars.embedding, input.token_ids);
    const Tape::Var pooled = tape.matmul(tape.constant(pooling_weights(input)), g.gathered);
    const Tape::Var hidden =
        tape.tanh(tape.add(tape.matmul(pooled, vars.hidden_weight), vars.hidden_bias));
    g.logits = tape.add(tape.matmul(hidden, vars.output_weight), vars.output_bias);
    return g;
}

Tensor forward(const ClassifierParams& params, const InputView& input) {
    Tape tape;
    const ParamVars vars = insert_params(tape, params);
    const ExampleGraph g = build_example(tape, vars, input);
    return Tensor({params.dims.num_classes}, tape.value(g.logits).values);
}

InputGradResult forward_with_input_grad(const ClassifierParams& params, const InputView& input,
                                        std::size_t class_index) {
    const std::size_t classes = params.dims.num_classes;
    if (class_index >= classes) {
        throw std::out_of_range("forward_with_input_grad: class index " +
                                std::to_string(class_index) + " out of range [0, " +
                                std::to_string(classes) + ")");
    }
    Tape tape;
    const ParamVars vars = insert_params(tape, params);
    const ExampleGraph g = build_example(tape, vars, input);

    Tensor one_hot = Tensor::zeros({1, classes});
    one_hot.values[class_index] = 1.0;
    const Tape::Var target = tape.sum(tape.mul(g.logits, tape.constant(one_hot)), 1);
    tape.backward(target);

    InputGradResult result;
    result.logits = Tensor({classes}, tape.value(g.logits).values);
    const std::span<const double> grad = tape.grad(g.gathered);
    result.grad_embeddings =
        Tensor({input.token_ids.size(), params.dims.embedding_dim},
               std::vector<double>(grad.begin(), grad.end()));
    return result;
}

void save_checkpoint(const ClassifierParams& params, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw MissingFileError("cannot open checkpoint for writing: " + path.string());
    }
    nlohmann::json header = {
        {"format", kCheckpointFormat},
        {"version", kCheckpointVersion},
        {"vocab_size", params.dims.vocab_size},
        {"embedding_dim", params.dims.embedding_dim},
        {"hidden_dim", params.dims.hidden_dim},
        {"num_classes", params.dims.num_classes},
    };
    out << header.dump() << "\n";
    const auto tensors = params.tensors();
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        nlohmann::json record = {
            {"name", ClassifierParams::kTensorNames[i]},
            {"shape", tensors[i]->shape},
            {"values", tensors[i]->values},
        };
        out << record.dump() << "\n";
    }
    if (!out) {
        throw DataError("failed writing checkpoint: " + path.string());
    }
}

ClassifierParams load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw MissingFileError("checkpoint not found: " + path.string());
    }
    std::string line;
    std::size_t line_no = 0;
    auto next_record = [&](const char* what) {
        if (!std::getline(in, line)) {
            throw DataError("checkpoint " + path.string() + ": missing " + what + " at line " +
                            std::to_string(line_no + 1));
        }
        ++line_no;
        try {
            return nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw DataError("checkpoint " + path.string() + ": parse error at line " +
                            std::to_string(line_no) + ": " + e.what());
        }
    };

    const nlohmann::json header = next_record("header");
    if (header.value("format", "") != kCheckpointFormat) {
        throw DataError("checkpoint " + path.string() + ": unrecognized format");
    }
    if (header.value("version", -1) != kCheckpointVersion) {
        throw DataError("checkpoint " + path.string() + ": unsupported version");
    }
    ClassifierParams params;
    params.dims.vocab_size = header.at("vocab_size").get<std::size_t>();
    params.dims.embedding_dim = header.at("embedding_dim").get<std::size_t>();
    params.dims.hidden_dim = header.at("hidden_dim").get<std::size_t>();
    params.dims.num_classes = header.at("num_classes").get<std::size_t>();
    params.dims.validate();

    const auto tensors = params.tensors();
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        const nlohmann::json record = next_record(ClassifierParams::kTensorNames[i]);
        if (record.value("name", "") != ClassifierParams::kTensorNames[i]) {
            throw DataError("checkpoint " + path.string() + ": expected tensor " +
                            ClassifierParams::kTensorNames[i] + " at line " +
                            std::to_string(line_no));
        }
        *tensors[i] = Tensor(record.at("shape").get<std::vector<std::size_t>>(),
                             record.at("values").get<std::vector<double>>(), true);
    }
    return params;
}

}  // namespace debiaslab
