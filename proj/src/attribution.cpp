#include "debiaslab/attribution.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace debiaslab {

SaliencyVector saliency(const Tensor& grad_embeddings, const Tensor& embeddings,
                        std::span<const std::int32_t> positions) {
    if (grad_embeddings.rank() != 2 || embeddings.rank() != 2 ||
        !same_shape(grad_embeddings, embeddings)) {
        throw std::invalid_argument("saliency: shape mismatch " +
                                    shape_to_string(grad_embeddings.shape) + " vs " +
                                    shape_to_string(embeddings.shape));
    }
    if (positions.empty()) {
        throw std::invalid_argument("saliency: empty position set");
    }
    const std::size_t len = embeddings.shape[0];
    const std::size_t dim = embeddings.shape[1];
    SaliencyVector out;
    out.positions.assign(positions.begin(), positions.end());
    std::sort(out.positions.begin(), out.positions.end());
    out.positions.erase(std::unique(out.positions.begin(), out.positions.end()),
                        out.positions.end());
    out.scores.reserve(out.positions.size());
    for (std::int32_t pos : out.positions) {
        if (pos < 0 || static_cast<std::size_t>(pos) >= len) {
            throw std::out_of_range("saliency: position " + std::to_string(pos) +
                                    " out of range [0, " + std::to_string(len) + ")");
        }
        double sum_sq = 0.0;
        const std::size_t base = static_cast<std::size_t>(pos) * dim;
        for (std::size_t c = 0; c < dim; ++c) {
            const double product = grad_embeddings.values[base + c] * embeddings.values[base + c];
            sum_sq += product * product;
        }
        out.scores.push_back(std::sqrt(sum_sq));
    }
    return out;
}

double cosine_similarity(const SaliencyVector& a, const SaliencyVector& b) {
    double dot = 0.0;
    double norm_a = 0.0;
    double norm_b = 0.0;
    std::size_t shared = 0;
    std::size_t i = 0;
    std::size_t j = 0;
    while (i < a.positions.size() && j < b.positions.size()) {
        if (a.positions[i] < b.positions[j]) {
            ++i;
        } else if (a.positions[i] > b.positions[j]) {
            ++j;
        } else {
            const double x = a.scores[i];
            const double y = b.scores[j];
            dot += x * y;
            norm_a += x * x;
            norm_b += y * y;
            ++shared;
            ++i;
            ++j;
        }
    }
    if (shared == 0) {
        throw std::invalid_argument("cosine_similarity: disjoint position sets");
    }
    if (norm_a == 0.0 || norm_b == 0.0) {
        return 0.0;  // no attribution evidence on either side
    }
    return std::min(1.0, dot / (std::sqrt(norm_a) * std::sqrt(norm_b)));
}

}  // namespace debiaslab
