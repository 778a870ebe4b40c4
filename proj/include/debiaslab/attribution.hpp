#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "debiaslab/tensor.hpp"

namespace debiaslab {

// Per-token attribution scores over a subset of positions. Scores are L2
// norms of real vectors, hence non-negative; positions are kept ascending.
struct SaliencyVector {
    std::vector<std::int32_t> positions;
    std::vector<double> scores;
};

// Gradient-times-input attribution: for each selected position j, the score
// is the L2 norm over the embedding dimension of grad[j,:] * emb[j,:].
SaliencyVector saliency(const Tensor& grad_embeddings, const Tensor& embeddings,
                        std::span<const std::int32_t> positions);

// Cosine similarity over the intersection of covered positions. Returns a
// value in [0, 1] for non-negative scores; a zero-norm restriction on either
// side yields 0. Disjoint position sets are an error.
double cosine_similarity(const SaliencyVector& a, const SaliencyVector& b);

}  // namespace debiaslab
