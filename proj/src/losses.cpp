#include "debiaslab/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "debiaslab/errors.hpp"

namespace debiaslab {

namespace {

void check_gold(std::size_t gold, std::size_t classes) {
    if (gold >= classes) {
        throw std::out_of_range("loss: gold label " + std::to_string(gold) +
                                " out of range [0, " + std::to_string(classes) + ")");
    }
}

// Scalar node holding row[index], built from ops already on the tape.
Tape::Var pick_scalar(Tape& tape, Tape::Var row, std::size_t index) {
    const Tensor& value = tape.value(row);
    Tensor one_hot = Tensor::zeros(value.shape);
    one_hot.values[index] = 1.0;
    return tape.sum(tape.mul(row, tape.constant(one_hot)), value.rank() - 1);
}

}  // namespace

std::string loss_variant_name(LossVariant variant) {
    switch (variant) {
        case LossVariant::kCe: return "ce";
        case LossVariant::kPoe: return "poe";
        case LossVariant::kPoeCe: return "poe_ce";
        case LossVariant::kPoeSals: return "poe_sals";
    }
    throw std::logic_error("loss_variant_name: bad variant");
}

LossVariant parse_loss_variant(const std::string& name) {
    if (name == "ce") return LossVariant::kCe;
    if (name == "poe") return LossVariant::kPoe;
    if (name == "poe_ce") return LossVariant::kPoeCe;
    if (name == "poe_sals") return LossVariant::kPoeSals;
    throw ConfigError("unknown loss variant \"" + name +
                      "\" (expected ce, poe, poe_ce or poe_sals)");
}

void LossConfig::validate() const {
    if (!(alpha > 0.0)) {
        throw ConfigError("loss.alpha must be positive, got " + std::to_string(alpha));
    }
    if (!(beta > 0.0)) {
        throw ConfigError("loss.beta must be positive, got " + std::to_string(beta));
    }
    if (!(epsilon > 0.0) || epsilon > 1e-6) {
        throw ConfigError("loss.epsilon must lie in (0, 1e-6], got " + std::to_string(epsilon));
    }
}

double log_sum_exp(std::span<const double> values) {
    if (values.empty()) {
        throw std::invalid_argument("log_sum_exp: empty input");
    }
    const double max = *std::max_element(values.begin(), values.end());
    double total = 0.0;
    for (double v : values) {
        total += std::exp(v - max);
    }
    return max + std::log(total);
}

std::vector<double> log_softmax_row(std::span<const double> logits) {
    const double lse = log_sum_exp(logits);
    std::vector<double> out(logits.begin(), logits.end());
    for (double& v : out) {
        v -= lse;
    }
    return out;
}

double ce_loss(std::span<const double> main_log_probs, std::size_t gold) {
    check_gold(gold, main_log_probs.size());
    return -main_log_probs[gold];
}

std::vector<double> combine_log_scores(std::span<const double> main_log_probs,
                                       std::span<const double> biased_log_probs) {
    if (main_log_probs.size() != biased_log_probs.size()) {
        throw std::invalid_argument("combine_log_scores: length mismatch " +
                                    std::to_string(main_log_probs.size()) + " vs " +
                                    std::to_string(biased_log_probs.size()));
    }
    std::vector<double> combined(main_log_probs.size());
    for (std::size_t k = 0; k < combined.size(); ++k) {
        combined[k] = main_log_probs[k] + biased_log_probs[k];
    }
    return combined;
}

double poe_loss(std::span<const double> main_log_probs,
                std::span<const double> biased_log_probs, std::size_t gold) {
    check_gold(gold, main_log_probs.size());
    const std::vector<double> combined = combine_log_scores(main_log_probs, biased_log_probs);
    return log_sum_exp(combined) - combined[gold];
}

double adjusted_similarity(double rho, double combined_gold_prob, double beta, double epsilon) {
    if (!(rho >= 0.0 && rho <= 1.0)) {
        throw std::domain_error("adjusted_similarity: rho " + std::to_string(rho) +
                                " outside [0, 1]");
    }
    if (!(beta > 0.0)) {
        throw std::domain_error("adjusted_similarity: beta must be positive");
    }
    if (!(epsilon > 0.0) || epsilon > 1e-6) {
        throw std::domain_error("adjusted_similarity: epsilon must lie in (0, 1e-6]");
    }
    // Allow one ulp of softmax rounding above 1 before declaring a domain error.
    if (!(combined_gold_prob >= 0.0 && combined_gold_prob <= 1.0 + 1e-9)) {
        throw std::domain_error("adjusted_similarity: combined probability " +
                                std::to_string(combined_gold_prob) + " outside [0, 1]");
    }
    if (rho == 0.0) {
        return 0.0;
    }
    if (rho == 1.0) {
        return 1.0;
    }
    const double p = std::clamp(combined_gold_prob, epsilon, 1.0);
    return std::exp(std::pow(p, beta) * std::log(rho));
}

PerExampleLossBreakdown poe_sals_loss(std::span<const double> main_log_probs,
                                      std::span<const double> biased_log_probs, double rho,
                                      std::size_t gold, const LossConfig& config) {
    config.validate();
    PerExampleLossBreakdown b;
    b.ce = ce_loss(main_log_probs, gold);
    b.poe = poe_loss(main_log_probs, biased_log_probs, gold);
    b.rho = rho;
    b.combined_gold_prob = std::clamp(std::exp(-b.poe), config.epsilon, 1.0);
    b.rho_star = adjusted_similarity(rho, b.combined_gold_prob, config.beta, config.epsilon);
    b.total = b.rho_star * b.poe + config.alpha * (1.0 - b.rho_star) * b.ce;
    return b;
}

double poe_ce_loss(std::span<const double> main_log_probs,
                   std::span<const double> biased_log_probs, std::size_t gold, double alpha) {
    if (alpha < 0.0) {
        throw std::domain_error("poe_ce_loss: alpha must be non-negative");
    }
    return poe_loss(main_log_probs, biased_log_probs, gold) +
           alpha * ce_loss(main_log_probs, gold);
}

LossGraph build_loss(Tape& tape, Tape::Var main_log_probs,
                     std::span<const double> biased_log_probs, double rho, std::size_t gold,
                     const LossConfig& config) {
    config.validate();
    const Tensor& main_value = tape.value(main_log_probs);
    if (main_value.rank() != 2 || main_value.shape[0] != 1) {
        throw std::invalid_argument("build_loss: main log-probs must be [1 x Y], got " +
                                    shape_to_string(main_value.shape));
    }
    const std::size_t classes = main_value.shape[1];
    check_gold(gold, classes);
    if (config.variant != LossVariant::kCe && biased_log_probs.size() != classes) {
        throw std::invalid_argument("build_loss: biased log-probs length " +
                                    std::to_string(biased_log_probs.size()) +
                                    " does not match " + std::to_string(classes) + " classes");
    }

    LossGraph out;
    const Tape::Var ce_node = tape.mul(pick_scalar(tape, main_log_probs, gold), -1.0);
    out.breakdown.ce = tape.value(ce_node).values[0];
    out.breakdown.rho = rho;

    if (config.variant == LossVariant::kCe) {
        out.total = ce_node;
        out.breakdown.total = tape.value(out.total).values[0];
        return out;
    }

    Tensor biased({1, classes},
                  std::vector<double>(biased_log_probs.begin(), biased_log_probs.end()));
    const Tape::Var combined =
        tape.log_softmax(tape.add(main_log_probs, tape.constant(std::move(biased))));
    const Tape::Var poe_node = tape.mul(pick_scalar(tape, combined, gold), -1.0);
    out.breakdown.poe = tape.value(poe_node).values[0];

    switch (config.variant) {
        case LossVariant::kPoe:
            out.total = poe_node;
            break;
        case LossVariant::kPoeCe:
            out.total = tape.add(poe_node, tape.mul(ce_node, config.alpha));
            break;
        case LossVariant::kPoeSals: {
            out.breakdown.combined_gold_prob =
                std::clamp(std::exp(-out.breakdown.poe), config.epsilon, 1.0);
            out.breakdown.rho_star = adjusted_similarity(
                rho, out.breakdown.combined_gold_prob, config.beta, config.epsilon);
            // Detached weights: plain scalars as far as the tape is concerned.
            const double poe_weight = out.breakdown.rho_star;
            const double ce_weight = config.alpha * (1.0 - out.breakdown.rho_star);
            out.total = tape.add(tape.mul(poe_node, poe_weight), tape.mul(ce_node, ce_weight));
            break;
        }
        case LossVariant::kCe:
            break;  // handled above
    }
    out.breakdown.total = tape.value(out.total).values[0];
    return out;
}

}  // namespace debiaslab
