#include "debiaslab/datagen.hpp"

#include <fstream>
#include <string>

#include <json.hpp>

#include "debiaslab/errors.hpp"
#include "debiaslab/rng.hpp"

namespace debiaslab {

namespace {

enum class SplitRule { kTrain, kOod };

class ExampleSampler {
  public:
    ExampleSampler(const SyntheticSpec& spec, Rng& rng) : spec_(spec), rng_(rng) {}

    LabeledExample sample(SplitRule rule) {
        const std::size_t classes = spec_.num_classes;
        LabeledExample ex;
        ex.bias_begin = spec_.bias_begin;
        ex.bias_end = spec_.bias_end;
        ex.label = static_cast<std::int32_t>(rng_.below(classes));

        ex.token_ids.resize(spec_.seq_len);
        for (std::size_t j = 0; j < spec_.seq_len; ++j) {
            ex.token_ids[j] = random_filler_token();
        }

        if (rng_.real01() >= spec_.signal_noise) {
            ex.token_ids[spec_.signal_position()] =
                signal_token_of_class(static_cast<std::size_t>(ex.label));
        }
        // else: the signal position keeps an uninformative filler token.

        std::size_t bias_class;
        if (rule == SplitRule::kTrain) {
            bias_class = rng_.real01() < spec_.p_bias
                             ? static_cast<std::size_t>(ex.label)
                             : other_class(static_cast<std::size_t>(ex.label));
        } else if (spec_.ood_rule == OodRule::kDecorrelated) {
            bias_class = rng_.below(classes);
        } else {
            bias_class = other_class(static_cast<std::size_t>(ex.label));
        }
        ex.token_ids[spec_.bias_begin] = static_cast<std::int32_t>(bias_class);
        return ex;
    }

  private:
    std::int32_t random_filler_token() {
        const std::size_t fillers = spec_.vocab_size - spec_.filler_begin();
        return static_cast<std::int32_t>(spec_.filler_begin() + rng_.below(fillers));
    }

    std::int32_t signal_token_of_class(std::size_t cls) {
        // Signal tokens of class c are Y+c, Y+c+Y, ... below Y+S.
        const std::size_t count = (spec_.n_signal_tokens - cls + spec_.num_classes - 1) /
                                  spec_.num_classes;
        const std::size_t pick = rng_.below(count);
        return static_cast<std::int32_t>(spec_.num_classes + cls +
                                         pick * spec_.num_classes);
    }

    std::size_t other_class(std::size_t label) {
        return (label + 1 + rng_.below(spec_.num_classes - 1)) % spec_.num_classes;
    }

    const SyntheticSpec& spec_;
    Rng& rng_;
};

}  // namespace

void SyntheticSpec::validate() const {
    if (num_classes < 2) {
        throw ConfigError("dataset.num_classes must be at least 2, got " +
                          std::to_string(num_classes));
    }
    if (n_signal_tokens < num_classes) {
        throw ConfigError("dataset.n_signal_tokens must cover every class, got " +
                          std::to_string(n_signal_tokens) + " for " +
                          std::to_string(num_classes) + " classes");
    }
    if (vocab_size <= num_classes + n_signal_tokens) {
        throw ConfigError("dataset.vocab_size must exceed " +
                          std::to_string(num_classes + n_signal_tokens) +
                          " (reserved bias tokens plus signal tokens), got " +
                          std::to_string(vocab_size));
    }
    if (!(p_bias >= 0.0 && p_bias <= 1.0)) {
        throw ConfigError("dataset.p_bias must lie in [0, 1], got " + std::to_string(p_bias));
    }
    if (!(signal_noise >= 0.0 && signal_noise < 1.0)) {
        throw ConfigError("dataset.signal_noise must lie in [0, 1), got " +
                          std::to_string(signal_noise));
    }
    if (seq_len < 3) {
        throw ConfigError("dataset.seq_len must be at least 3, got " + std::to_string(seq_len));
    }
    if (bias_begin >= bias_end || bias_end > seq_len) {
        throw ConfigError("dataset.bias_segment [" + std::to_string(bias_begin) + ", " +
                          std::to_string(bias_end) + ") is not a valid range within " +
                          std::to_string(seq_len) + " positions");
    }
    if (bias_end > signal_position()) {
        throw ConfigError("dataset.bias_segment must end before the signal position " +
                          std::to_string(signal_position()));
    }
    if (n_train == 0 || n_id_test == 0 || n_ood_test == 0) {
        throw ConfigError("dataset split sizes must be positive");
    }
}

std::vector<std::uint8_t> LabeledExample::bias_segment_mask() const {
    std::vector<std::uint8_t> mask(token_ids.size(), 0);
    for (std::size_t j = bias_begin; j < bias_end; ++j) {
        mask[j] = 1;
    }
    return mask;
}

std::vector<std::int32_t> LabeledExample::bias_positions() const {
    std::vector<std::int32_t> positions;
    positions.reserve(bias_end - bias_begin);
    for (std::size_t j = bias_begin; j < bias_end; ++j) {
        positions.push_back(static_cast<std::int32_t>(j));
    }
    return positions;
}

DatasetSplits generate(const SyntheticSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    ExampleSampler sampler(spec, rng);
    DatasetSplits splits;
    splits.train.reserve(spec.n_train);
    for (std::size_t i = 0; i < spec.n_train; ++i) {
        splits.train.push_back(sampler.sample(SplitRule::kTrain));
    }
    splits.id_test.reserve(spec.n_id_test);
    for (std::size_t i = 0; i < spec.n_id_test; ++i) {
        splits.id_test.push_back(sampler.sample(SplitRule::kTrain));
    }
    splits.ood_test.reserve(spec.n_ood_test);
    for (std::size_t i = 0; i < spec.n_ood_test; ++i) {
        splits.ood_test.push_back(sampler.sample(SplitRule::kOod));
    }
    return splits;
}

void write_dataset(const std::filesystem::path& path,
                   const std::vector<LabeledExample>& examples) {
    std::ofstream out(path);
    if (!out) {
        throw MissingFileError("cannot open dataset for writing: " + path.string());
    }
    for (const LabeledExample& ex : examples) {
        nlohmann::json record = {
            {"token_ids", ex.token_ids},
            {"label", ex.label},
            {"bias_segment", {ex.bias_begin, ex.bias_end}},
        };
        out << record.dump() << "\n";
    }
    if (!out) {
        throw DataError("failed writing dataset: " + path.string());
    }
}

std::vector<LabeledExample> read_dataset(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw MissingFileError("dataset not found: " + path.string());
    }
    std::vector<LabeledExample> examples;
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
            throw DataError("dataset parse error at " + where + ": " + e.what());
        }
        LabeledExample ex;
        try {
            ex.token_ids = record.at("token_ids").get<std::vector<std::int32_t>>();
            ex.label = record.at("label").get<std::int32_t>();
            const auto segment = record.at("bias_segment").get<std::array<std::size_t, 2>>();
            ex.bias_begin = segment[0];
            ex.bias_end = segment[1];
        } catch (const nlohmann::json::exception& e) {
            throw DataError("dataset record error at " + where + ": " + e.what());
        }
        if (ex.token_ids.empty()) {
            throw DataError("dataset record error at " + where + ": empty token_ids");
        }
        if (ex.label < 0) {
            throw DataError("dataset record error at " + where + ": negative label");
        }
        if (ex.bias_begin >= ex.bias_end || ex.bias_end > ex.token_ids.size()) {
            throw DataError("dataset record error at " + where + ": bias_segment [" +
                            std::to_string(ex.bias_begin) + ", " + std::to_string(ex.bias_end) +
                            ") invalid for " + std::to_string(ex.token_ids.size()) + " tokens");
        }
        examples.push_back(std::move(ex));
    }
    return examples;
}

}  // namespace debiaslab
