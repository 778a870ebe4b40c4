#pragma once

#include <span>
#include <string>
#include <vector>

#include "debiaslab/tape.hpp"

namespace debiaslab {

enum class LossVariant { kCe, kPoe, kPoeCe, kPoeSals };

std::string loss_variant_name(LossVariant variant);
LossVariant parse_loss_variant(const std::string& name);

struct LossConfig {
    LossVariant variant = LossVariant::kPoeSals;
    double alpha = 1.0;    // weight of the CE term
    double beta = 1.0;     // exponent shaping the combined-probability adjustment
    double epsilon = 1e-12;  // floor applied to the combined gold probability

    void validate() const;
};

// Diagnostic decomposition of one example's loss. For the similarity-weighted
// variant, total = rho_star * poe + alpha * (1 - rho_star) * ce exactly.
struct PerExampleLossBreakdown {
    double ce = 0.0;
    double poe = 0.0;
    double rho = 0.0;
    double rho_star = 0.0;
    double combined_gold_prob = 1.0;
    double total = 0.0;
};

double log_sum_exp(std::span<const double> values);
// Log-probabilities of a logit row via the max-subtracted stable form.
std::vector<double> log_softmax_row(std::span<const double> logits);

double ce_loss(std::span<const double> main_log_probs, std::size_t gold);

// Combined log scores: elementwise sum of the two log-probability rows.
// Unnormalized; renormalize with log_softmax wherever a probability is needed.
std::vector<double> combine_log_scores(std::span<const double> main_log_probs,
                                       std::span<const double> biased_log_probs);

// Cross entropy of the renormalized combined distribution, entirely in log space.
double poe_loss(std::span<const double> main_log_probs,
                std::span<const double> biased_log_probs, std::size_t gold);

// rho^(p^beta) with p the combined gold probability clamped to [epsilon, 1].
double adjusted_similarity(double rho, double combined_gold_prob, double beta, double epsilon);

PerExampleLossBreakdown poe_sals_loss(std::span<const double> main_log_probs,
                                      std::span<const double> biased_log_probs, double rho,
                                      std::size_t gold, const LossConfig& config);

// Static mixture: poe + alpha * ce, independent of any similarity.
double poe_ce_loss(std::span<const double> main_log_probs,
                   std::span<const double> biased_log_probs, std::size_t gold, double alpha);

struct LossGraph {
    Tape::Var total;
    PerExampleLossBreakdown breakdown;
};

// Builds the configured loss on the tape from a [1 x Y] log-probability node.
// The similarity weights rho_star and (1 - rho_star) are computed from node
// values and enter the graph as plain scalars, so backward treats them as
// constants with respect to the main model. `biased_log_probs` may be empty
// for the plain CE variant only.
LossGraph build_loss(Tape& tape, Tape::Var main_log_probs,
                     std::span<const double> biased_log_probs, double rho, std::size_t gold,
                     const LossConfig& config);

}  // namespace debiaslab
