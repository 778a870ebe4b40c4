#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace debiaslab {

enum class OodRule {
    kDecorrelated,    // bias token drawn uniformly over all classes (agreement 1/Y)
    kAntiCorrelated,  // bias token never agrees with the label
};

// Synthetic token-classification task with a controllable shortcut.
//
// Token space: ids [0, Y) are reserved class-indexed bias tokens; ids
// [Y, Y + n_signal_tokens) are signal tokens, where signal token t carries
// class (t - Y) mod Y; the remaining ids are inert filler tokens. Each
// example draws its label uniformly, then:
//   - the signal position (the last of the sequence) gets a signal token of
//     the label's class; with probability signal_noise it is replaced by a
//     filler, erasing the generalizable evidence for that example;
//   - the bias token for some class lands at the first position of the bias
//     segment: agreeing with the label with probability p_bias on train/ID
//     splits, or following the OOD rule;
//   - every other position, including the rest of the bias segment, is a
//     random filler token.
// Both cues are carried by token identity, so a pooling model can use
// either. The bias is one token per class and is picked up quickly; the
// signal spreads the same evidence over n_signal_tokens per class and is
// learned more slowly, which is what makes the shortcut attractive.
struct SyntheticSpec {
    std::size_t vocab_size = 64;
    std::size_t seq_len = 12;
    std::size_t num_classes = 3;
    double p_bias = 0.95;
    double signal_noise = 0.03;
    std::size_t n_signal_tokens = 30;
    std::size_t n_train = 8000;
    std::size_t n_id_test = 2000;
    std::size_t n_ood_test = 2000;
    std::size_t bias_begin = 0;
    std::size_t bias_end = 3;
    OodRule ood_rule = OodRule::kDecorrelated;
    std::uint64_t seed = 17;

    void validate() const;
    std::size_t signal_position() const { return seq_len - 1; }
    std::size_t filler_begin() const { return num_classes + n_signal_tokens; }
};

struct LabeledExample {
    std::vector<std::int32_t> token_ids;
    std::int32_t label = 0;
    std::size_t bias_begin = 0;
    std::size_t bias_end = 0;

    bool in_bias_segment(std::size_t pos) const { return pos >= bias_begin && pos < bias_end; }
    std::vector<std::uint8_t> bias_segment_mask() const;
    std::vector<std::int32_t> bias_positions() const;
};

struct DatasetSplits {
    std::vector<LabeledExample> train;
    std::vector<LabeledExample> id_test;
    std::vector<LabeledExample> ood_test;
};

inline bool is_bias_token(std::int32_t token, std::size_t num_classes) {
    return token >= 0 && static_cast<std::size_t>(token) < num_classes;
}
inline bool is_signal_token(std::int32_t token, const SyntheticSpec& spec) {
    return token >= static_cast<std::int32_t>(spec.num_classes) &&
           static_cast<std::size_t>(token) < spec.filler_begin();
}
inline std::int32_t signal_token_class(std::int32_t token, std::size_t num_classes) {
    return static_cast<std::int32_t>((static_cast<std::size_t>(token) - num_classes) %
                                     num_classes);
}

// Pure function of the spec (including its seed).
DatasetSplits generate(const SyntheticSpec& spec);

// Line-delimited records; read(write(x)) == x.
void write_dataset(const std::filesystem::path& path,
                   const std::vector<LabeledExample>& examples);
std::vector<LabeledExample> read_dataset(const std::filesystem::path& path);

}  // namespace debiaslab
