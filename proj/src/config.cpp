#include "debiaslab/config.hpp"

#include <fstream>
#include <set>
#include <string>

#include "debiaslab/errors.hpp"

namespace debiaslab {

namespace {

// Strict section reader: every key must be known, every known key type-checked.
class Section {
  public:
    Section(const nlohmann::json& source, std::string name)
        : source_(source), name_(std::move(name)) {
        if (!source_.is_object()) {
            throw ConfigError("config section \"" + name_ + "\" must be an object");
        }
    }

    ~Section() = default;

    template <typename T>
    void read(const char* key, T& target) {
        seen_.insert(key);
        if (!source_.contains(key)) {
            return;  // keep the default
        }
        try {
            target = source_.at(key).get<T>();
        } catch (const nlohmann::json::exception&) {
            throw ConfigError("config field \"" + name_ + "." + key + "\" has the wrong type");
        }
    }

    bool has(const char* key) const { return source_.contains(key); }

    const nlohmann::json& raw(const char* key) {
        seen_.insert(key);
        return source_.at(key);
    }

    void mark(const char* key) { seen_.insert(key); }

    void finish() const {
        for (const auto& [key, value] : source_.items()) {
            if (!seen_.contains(key)) {
                throw ConfigError("unknown config key \"" + name_ + "." + key + "\"");
            }
        }
    }

  private:
    const nlohmann::json& source_;
    std::string name_;
    std::set<std::string> seen_;
};

SyntheticSpec parse_dataset(const nlohmann::json& source) {
    SyntheticSpec spec;
    Section section(source, "dataset");
    section.read("vocab_size", spec.vocab_size);
    section.read("seq_len", spec.seq_len);
    section.read("num_classes", spec.num_classes);
    section.read("p_bias", spec.p_bias);
    section.read("signal_noise", spec.signal_noise);
    section.read("n_signal_tokens", spec.n_signal_tokens);
    section.read("n_train", spec.n_train);
    section.read("n_id_test", spec.n_id_test);
    section.read("n_ood_test", spec.n_ood_test);
    section.read("seed", spec.seed);
    if (section.has("bias_segment")) {
        std::array<std::size_t, 2> segment{};
        try {
            segment = section.raw("bias_segment").get<std::array<std::size_t, 2>>();
        } catch (const nlohmann::json::exception&) {
            throw ConfigError(
                "config field \"dataset.bias_segment\" must be a pair of integers");
        }
        spec.bias_begin = segment[0];
        spec.bias_end = segment[1];
    } else {
        section.mark("bias_segment");
    }
    std::string ood = spec.ood_rule == OodRule::kDecorrelated ? "decorrelated" : "anti";
    section.read("ood_rule", ood);
    if (ood == "decorrelated") {
        spec.ood_rule = OodRule::kDecorrelated;
    } else if (ood == "anti") {
        spec.ood_rule = OodRule::kAntiCorrelated;
    } else {
        throw ConfigError("config field \"dataset.ood_rule\" must be \"decorrelated\" or "
                          "\"anti\", got \"" + ood + "\"");
    }
    section.finish();
    return spec;
}

ModelConfig parse_model(const nlohmann::json& source) {
    ModelConfig model;
    Section section(source, "model");
    section.read("embedding_dim", model.embedding_dim);
    section.read("hidden_dim", model.hidden_dim);
    section.finish();
    return model;
}

LossConfig parse_loss(const nlohmann::json& source) {
    LossConfig loss;
    Section section(source, "loss");
    std::string variant = loss_variant_name(loss.variant);
    section.read("variant", variant);
    loss.variant = parse_loss_variant(variant);
    section.read("alpha", loss.alpha);
    section.read("beta", loss.beta);
    section.read("epsilon", loss.epsilon);
    section.finish();
    return loss;
}

TrainConfig parse_train(const nlohmann::json& source) {
    TrainConfig train;
    Section section(source, "train");
    section.read("epochs", train.epochs);
    section.read("batch_size", train.batch_size);
    section.read("peak_lr", train.peak_lr);
    section.read("warmup_fraction", train.warmup_fraction);
    section.read("seeds", train.seeds);
    section.read("bias_seed", train.bias_seed);
    if (section.has("adam")) {
        Section adam(section.raw("adam"), "train.adam");
        adam.read("beta1", train.adam.beta1);
        adam.read("beta2", train.adam.beta2);
        adam.read("epsilon", train.adam.epsilon);
        adam.finish();
    } else {
        section.mark("adam");
    }
    std::string target = train.saliency_target == SaliencyTarget::kGoldLabel ? "gold" : "argmax";
    section.read("saliency_target", target);
    if (target == "gold") {
        train.saliency_target = SaliencyTarget::kGoldLabel;
    } else if (target == "argmax") {
        train.saliency_target = SaliencyTarget::kArgmaxPrediction;
    } else {
        throw ConfigError("config field \"train.saliency_target\" must be \"gold\" or "
                          "\"argmax\", got \"" + target + "\"");
    }
    section.finish();
    return train;
}

nlohmann::json split_stats_to_json(const SplitStats& stats) {
    return {{"mean", stats.mean}, {"stddev", stats.stddev}, {"raw", stats.raw}};
}

}  // namespace

void ExperimentConfig::validate() const {
    dataset.validate();
    dims().validate();
    train.validate();
}

ExperimentConfig parse_experiment_config(const nlohmann::json& source) {
    if (!source.is_object()) {
        throw ConfigError("experiment config must be a JSON object");
    }
    ExperimentConfig config;
    Section root(source, "config");
    if (root.has("dataset")) {
        config.dataset = parse_dataset(root.raw("dataset"));
    } else {
        root.mark("dataset");
    }
    if (root.has("model")) {
        config.model = parse_model(root.raw("model"));
    } else {
        root.mark("model");
    }
    if (root.has("train")) {
        config.train = parse_train(root.raw("train"));
    } else {
        root.mark("train");
    }
    if (root.has("loss")) {
        config.train.loss = parse_loss(root.raw("loss"));
    } else {
        root.mark("loss");
    }
    root.finish();
    config.validate();
    return config;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw MissingFileError("config file not found: " + path.string());
    }
    nlohmann::json source;
    try {
        in >> source;
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config parse error in " + path.string() + ": " + e.what());
    }
    return parse_experiment_config(source);
}

nlohmann::json experiment_config_to_json(const ExperimentConfig& config) {
    const SyntheticSpec& d = config.dataset;
    return {
        {"dataset",
         {{"vocab_size", d.vocab_size},
          {"seq_len", d.seq_len},
          {"num_classes", d.num_classes},
          {"p_bias", d.p_bias},
          {"signal_noise", d.signal_noise},
          {"n_signal_tokens", d.n_signal_tokens},
          {"n_train", d.n_train},
          {"n_id_test", d.n_id_test},
          {"n_ood_test", d.n_ood_test},
          {"bias_segment", {d.bias_begin, d.bias_end}},
          {"ood_rule", d.ood_rule == OodRule::kDecorrelated ? "decorrelated" : "anti"},
          {"seed", d.seed}}},
        {"model",
         {{"embedding_dim", config.model.embedding_dim},
          {"hidden_dim", config.model.hidden_dim}}},
        {"train", train_config_to_json(config.train)},
        {"loss",
         {{"variant", loss_variant_name(config.train.loss.variant)},
          {"alpha", config.train.loss.alpha},
          {"beta", config.train.loss.beta},
          {"epsilon", config.train.loss.epsilon}}},
    };
}

nlohmann::json train_config_to_json(const TrainConfig& config) {
    return {
        {"epochs", config.epochs},
        {"batch_size", config.batch_size},
        {"peak_lr", config.peak_lr},
        {"warmup_fraction", config.warmup_fraction},
        {"seeds", config.seeds},
        {"bias_seed", config.bias_seed},
        {"adam",
         {{"beta1", config.adam.beta1},
          {"beta2", config.adam.beta2},
          {"epsilon", config.adam.epsilon}}},
        {"saliency_target",
         config.saliency_target == SaliencyTarget::kGoldLabel ? "gold" : "argmax"},
    };
}

nlohmann::json eval_report_to_json(const EvalReport& report) {
    return {
        {"id", split_stats_to_json(report.id)},
        {"ood", split_stats_to_json(report.ood)},
        {"seeds", report.config.seeds},
        {"config",
         {{"train", train_config_to_json(report.config)},
          {"loss",
           {{"variant", loss_variant_name(report.config.loss.variant)},
            {"alpha", report.config.loss.alpha},
            {"beta", report.config.loss.beta},
            {"epsilon", report.config.loss.epsilon}}},
          {"model",
           {{"vocab_size", report.dims.vocab_size},
            {"embedding_dim", report.dims.embedding_dim},
            {"hidden_dim", report.dims.hidden_dim},
            {"num_classes", report.dims.num_classes}}}}},
    };
}

}  // namespace debiaslab
