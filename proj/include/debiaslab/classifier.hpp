#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "debiaslab/rng.hpp"
#include "debiaslab/tape.hpp"
#include "debiaslab/tensor.hpp"

namespace debiaslab {

struct ModelDims {
    std::size_t vocab_size = 64;
    std::size_t embedding_dim = 24;
    std::size_t hidden_dim = 48;
    std::size_t num_classes = 3;

    void validate() const;
};

// Token classifier: mean pooling over the visible embedded tokens feeds a
// two-layer tanh head. The same parameter set serves the main model (all
// positions visible) and the biased model (bias segment only).
struct ClassifierParams {
    ModelDims dims;
    Tensor embedding_table;  // [V x d]
    Tensor hidden_weight;    // [d x h]
    Tensor hidden_bias;      // [1 x h]
    Tensor output_weight;    // [h x Y]
    Tensor output_bias;      // [1 x Y]

    static constexpr std::size_t kTensorCount = 5;
    static const std::array<const char*, kTensorCount> kTensorNames;
    std::array<Tensor*, kTensorCount> tensors();
    std::array<const Tensor*, kTensorCount> tensors() const;
};

ClassifierParams init_classifier(const ModelDims& dims, Rng& rng);
ClassifierParams init_classifier(const ModelDims& dims, std::uint64_t seed);

// A token sequence with per-position visibility. Invisible positions are
// excluded from the pooled representation and receive exactly zero
// input-gradient.
struct InputView {
    std::vector<std::int32_t> token_ids;
    std::vector<std::uint8_t> visible;  // same length; nonzero = visible
};

struct ParamVars {
    Tape::Var embedding;
    Tape::Var hidden_weight;
    Tape::Var hidden_bias;
    Tape::Var output_weight;
    Tape::Var output_bias;
};

struct ExampleGraph {
    Tape::Var gathered;  // [L x d] input embeddings; grad() holds d(target)/d(embeddings)
    Tape::Var logits;    // [1 x Y]
};

// Inserts the parameter tensors once; reusable across examples on one tape.
ParamVars insert_params(Tape& tape, const ClassifierParams& params);
ExampleGraph build_example(Tape& tape, const ParamVars& vars, const InputView& input);

Tensor forward(const ClassifierParams& params, const InputView& input);  // logits, shape {Y}

struct InputGradResult {
    Tensor logits;           // shape {Y}; bitwise identical to forward()
    Tensor grad_embeddings;  // [L x d]; rows at invisible positions are zero
};

InputGradResult forward_with_input_grad(const ClassifierParams& params, const InputView& input,
                                        std::size_t class_index);

// Versioned line-delimited checkpoint; load(save(p)) == p bitwise.
void save_checkpoint(const ClassifierParams& params, const std::filesystem::path& path);
ClassifierParams load_checkpoint(const std::filesystem::path& path);

}  // namespace debiaslab
