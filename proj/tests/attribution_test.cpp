#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "debiaslab/attribution.hpp"
#include "debiaslab/rng.hpp"

using namespace debiaslab;

namespace {

SaliencyVector make_saliency(std::vector<std::int32_t> positions, std::vector<double> scores) {
    return SaliencyVector{std::move(positions), std::move(scores)};
}

SaliencyVector random_nonnegative(Rng& rng, std::int32_t length) {
    SaliencyVector s;
    for (std::int32_t j = 0; j < length; ++j) {
        s.positions.push_back(j);
        s.scores.push_back(rng.real01() * 10.0);
    }
    return s;
}

}  // namespace

TEST_CASE("saliency scores are per-position norms of grad*input") {
    const Tensor grad({2, 2}, {1, 1, 0, 0});
    const Tensor emb({2, 2}, {3, 4, 7, 9});
    const std::vector<std::int32_t> positions = {0, 1};
    const SaliencyVector s = saliency(grad, emb, positions);
    CHECK(s.scores[0] == doctest::Approx(5.0));  // ||(3, 4)||
    CHECK(s.scores[1] == 0.0);                   // zero gradient row
    CHECK(s.positions == positions);
}

TEST_CASE("saliency is invariant to reciprocal rescaling of grad and input") {
    Rng rng(3);
    Tensor grad = Tensor::zeros({3, 4});
    Tensor emb = Tensor::zeros({3, 4});
    for (double& x : grad.values) {
        x = rng.normal();
    }
    for (double& x : emb.values) {
        x = rng.normal();
    }
    Tensor grad_scaled = grad;
    Tensor emb_scaled = emb;
    const double c = 8.0;  // power of two keeps the rescaling exact
    for (double& x : grad_scaled.values) {
        x /= c;
    }
    for (double& x : emb_scaled.values) {
        x *= c;
    }
    const std::vector<std::int32_t> positions = {0, 1, 2};
    const SaliencyVector a = saliency(grad, emb, positions);
    const SaliencyVector b = saliency(grad_scaled, emb_scaled, positions);
    for (std::size_t j = 0; j < a.scores.size(); ++j) {
        CHECK(a.scores[j] == doctest::Approx(b.scores[j]).epsilon(1e-12));
    }
}

TEST_CASE("saliency validates its inputs") {
    const Tensor grad({2, 2}, {1, 1, 1, 1});
    const Tensor emb({2, 3}, {1, 1, 1, 1, 1, 1});
    const std::vector<std::int32_t> positions = {0};
    CHECK_THROWS_AS(saliency(grad, emb, positions), std::invalid_argument);
    const Tensor emb_ok({2, 2}, {1, 1, 1, 1});
    CHECK_THROWS_AS(saliency(grad, emb_ok, std::vector<std::int32_t>{}),
                    std::invalid_argument);
    CHECK_THROWS_AS(saliency(grad, emb_ok, std::vector<std::int32_t>{5}), std::out_of_range);
}

TEST_CASE("cosine similarity on worked values") {
    CHECK(cosine_similarity(make_saliency({0, 1}, {2, 3}), make_saliency({0, 1}, {2, 3})) ==
          doctest::Approx(1.0));
    CHECK(cosine_similarity(make_saliency({0, 1}, {1, 0}), make_saliency({0, 1}, {0, 1})) ==
          doctest::Approx(0.0));
    CHECK(cosine_similarity(make_saliency({0, 1}, {1, 2}), make_saliency({0, 1}, {2, 1})) ==
          doctest::Approx(0.8));  // 4 / (sqrt(5) * sqrt(5))
}

TEST_CASE("cosine similarity handles zero norms and disjoint sets") {
    CHECK(cosine_similarity(make_saliency({0, 1}, {0, 0}), make_saliency({0, 1}, {1, 2})) ==
          0.0);
    CHECK(cosine_similarity(make_saliency({0, 1}, {1, 2}), make_saliency({0, 1}, {0, 0})) ==
          0.0);
    CHECK_THROWS_AS(
        cosine_similarity(make_saliency({0, 1}, {1, 2}), make_saliency({2, 3}, {1, 2})),
        std::invalid_argument);
}

TEST_CASE("similarity of non-negative vectors stays in [0, 1]") {
    Rng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        const SaliencyVector a = random_nonnegative(rng, 6);
        const SaliencyVector b = random_nonnegative(rng, 6);
        const double rho = cosine_similarity(a, b);
        CHECK(rho >= 0.0);
        CHECK(rho <= 1.0);
        CHECK(cosine_similarity(a, a) == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("similarity is invariant to positive rescaling of either vector") {
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        const SaliencyVector a = random_nonnegative(rng, 5);
        const SaliencyVector b = random_nonnegative(rng, 5);
        SaliencyVector scaled = a;
        const double c = 0.1 + rng.real01() * 20.0;
        for (double& s : scaled.scores) {
            s *= c;
        }
        CHECK(cosine_similarity(a, b) ==
              doctest::Approx(cosine_similarity(scaled, b)).epsilon(1e-12));
    }
}

TEST_CASE("positions outside the intersection never change the similarity") {
    Rng rng(9);
    for (int trial = 0; trial < 50; ++trial) {
        const SaliencyVector a = random_nonnegative(rng, 4);
        SaliencyVector b = random_nonnegative(rng, 4);
        const double before = cosine_similarity(a, b);
        SaliencyVector extended = b;
        extended.positions.push_back(17);
        extended.scores.push_back(rng.real01() * 100.0);
        extended.positions.push_back(23);
        extended.scores.push_back(rng.real01() * 100.0);
        CHECK(cosine_similarity(a, extended) == before);
    }
}
