#include "debiaslab/trainer.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <exception>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "debiaslab/errors.hpp"
#include "debiaslab/rng.hpp"

namespace debiaslab {

namespace {

std::size_t argmax_lowest(std::span<const double> values) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i) {
        if (values[i] > values[best]) {
            best = i;
        }
    }
    return best;
}

void shuffle_indices(std::vector<std::size_t>& indices, Rng& rng) {
    for (std::size_t i = indices.size(); i > 1; --i) {
        const std::size_t j = rng.below(i);
        std::swap(indices[i - 1], indices[j]);
    }
}

void check_artifacts(const std::vector<LabeledExample>& data,
                     const std::vector<BiasArtifact>& artifacts, std::size_t num_classes) {
    if (artifacts.size() != data.size()) {
        throw DataError("artifacts misaligned: " + std::to_string(artifacts.size()) +
                        " records for " + std::to_string(data.size()) + " examples");
    }
    for (std::size_t i = 0; i < artifacts.size(); ++i) {
        if (artifacts[i].example_index != static_cast<std::int64_t>(i)) {
            throw DataError("artifacts misaligned: record " + std::to_string(i) +
                            " has example_index " + std::to_string(artifacts[i].example_index));
        }
        if (artifacts[i].biased_log_probs.size() != num_classes) {
            throw DataError("artifact " + std::to_string(i) + " has " +
                            std::to_string(artifacts[i].biased_log_probs.size()) +
                            " log-probs for " + std::to_string(num_classes) + " classes");
        }
    }
}

// Runs fn(i) for i in [0, n) on up to `jobs` threads. Any exception is
// rethrown for the lowest offending index.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
    if (jobs <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) {
            fn(i);
        }
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(n);
    const std::size_t worker_count = std::min<std::size_t>(static_cast<std::size_t>(jobs), n);
    std::vector<std::thread> workers;
    workers.reserve(worker_count);
    for (std::size_t w = 0; w < worker_count; ++w) {
        workers.emplace_back([&] {
            while (true) {
                const std::size_t i = next.fetch_add(1);
                if (i >= n) {
                    return;
                }
                try {
                    fn(i);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        });
    }
    for (std::thread& t : workers) {
        t.join();
    }
    for (const std::exception_ptr& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
}

}  // namespace

void TrainConfig::validate() const {
    if (epochs < 0) {
        throw ConfigError("train.epochs must be non-negative, got " + std::to_string(epochs));
    }
    if (batch_size == 0) {
        throw ConfigError("train.batch_size must be positive");
    }
    if (!(peak_lr >= 0.0)) {
        throw ConfigError("train.peak_lr must be non-negative, got " + std::to_string(peak_lr));
    }
    if (!(warmup_fraction >= 0.0 && warmup_fraction <= 1.0)) {
        throw ConfigError("train.warmup_fraction must lie in [0, 1], got " +
                          std::to_string(warmup_fraction));
    }
    if (seeds.empty()) {
        throw ConfigError("train.seeds must not be empty");
    }
    loss.validate();
}

LrSchedule::LrSchedule(double peak, long total_steps, double warmup_fraction)
    : peak_(peak), total_(total_steps) {
    warmup_ = std::lround(warmup_fraction * static_cast<double>(total_steps));
    if (total_ > 0 && warmup_ >= total_) {
        warmup_ = total_ - 1;
    }
    if (warmup_ < 0) {
        warmup_ = 0;
    }
}

double LrSchedule::at(long step) const {
    if (total_ <= 0) {
        return 0.0;
    }
    if (warmup_ > 0 && step <= warmup_) {
        return peak_ * (static_cast<double>(step) / static_cast<double>(warmup_));
    }
    return peak_ * (static_cast<double>(total_ - step) / static_cast<double>(total_ - warmup_));
}

AdamOptimizer::AdamOptimizer(const AdamConfig& config, const ClassifierParams& params)
    : config_(config) {
    for (const Tensor* t : params.tensors()) {
        first_moment_.emplace_back(t->numel(), 0.0);
        second_moment_.emplace_back(t->numel(), 0.0);
    }
}

void AdamOptimizer::step(ClassifierParams& params,
                         const std::vector<std::vector<double>>& grads, double lr) {
    const auto tensors = params.tensors();
    if (grads.size() != tensors.size()) {
        throw std::invalid_argument("AdamOptimizer::step: expected " +
                                    std::to_string(tensors.size()) + " gradient buffers, got " +
                                    std::to_string(grads.size()));
    }
    ++t_;
    const double bias1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double bias2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < tensors.size(); ++k) {
        std::vector<double>& m = first_moment_[k];
        std::vector<double>& v = second_moment_[k];
        std::vector<double>& p = tensors[k]->values;
        const std::vector<double>& g = grads[k];
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
            v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
            p[i] -= lr * (m[i] / bias1) / (std::sqrt(v[i] / bias2) + config_.epsilon);
        }
    }
}

InputView make_view(const LabeledExample& example, ViewMode mode) {
    InputView view;
    view.token_ids = example.token_ids;
    if (mode == ViewMode::kFull) {
        view.visible.assign(example.token_ids.size(), 1);
    } else {
        view.visible = example.bias_segment_mask();
    }
    return view;
}

TrainResult train_loop(const std::vector<LabeledExample>& data,
                       const std::vector<BiasArtifact>* artifacts, ViewMode view_mode,
                       const ModelDims& dims, const TrainConfig& config, std::uint64_t seed,
                       const std::vector<LabeledExample>* id_eval) {
    config.validate();
    dims.validate();
    if (data.empty()) {
        throw DataError("train: empty training set");
    }
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (data[i].label < 0 ||
            static_cast<std::size_t>(data[i].label) >= dims.num_classes) {
            throw DataError("train: example " + std::to_string(i) + " has label " +
                            std::to_string(data[i].label) + " outside [0, " +
                            std::to_string(dims.num_classes) + ")");
        }
    }
    const bool needs_artifacts = config.loss.variant != LossVariant::kCe;
    if (needs_artifacts) {
        if (artifacts == nullptr) {
            throw DataError("train: loss variant " + loss_variant_name(config.loss.variant) +
                            " requires bias artifacts");
        }
        check_artifacts(data, *artifacts, dims.num_classes);
    }
    const bool needs_similarity = config.loss.variant == LossVariant::kPoeSals;

    Rng rng(seed);
    TrainResult result;
    result.params = init_classifier(dims, rng);
    AdamOptimizer optimizer(config.adam, result.params);

    const std::size_t n = data.size();
    const long steps_per_epoch =
        static_cast<long>((n + config.batch_size - 1) / config.batch_size);
    const LrSchedule schedule(config.peak_lr, config.epochs * steps_per_epoch,
                              config.warmup_fraction);

    std::vector<std::size_t> indices(n);
    std::iota(indices.begin(), indices.end(), 0);
    std::vector<std::vector<double>> grads(ClassifierParams::kTensorCount);

    long step = 0;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        shuffle_indices(indices, rng);
        double loss_sum = 0.0;
        double rho_sum = 0.0;
        double rho_star_sum = 0.0;

        for (std::size_t start = 0; start < n; start += config.batch_size) {
            const std::size_t batch_end = std::min(n, start + config.batch_size);
            const std::size_t batch_n = batch_end - start;

            Tape tape;
            const ParamVars vars = insert_params(tape, result.params);
            Tape::Var batch_total{};
            bool have_total = false;

            for (std::size_t b = start; b < batch_end; ++b) {
                const LabeledExample& ex = data[indices[b]];
                const BiasArtifact* artifact =
                    needs_artifacts ? &(*artifacts)[indices[b]] : nullptr;
                const InputView view = make_view(ex, view_mode);
                const ExampleGraph g = build_example(tape, vars, view);
                const Tape::Var log_probs = tape.log_softmax(g.logits);

                double rho = 0.0;
                if (needs_similarity) {
                    // Targeted backward for the saliency before the loss backward.
                    const std::size_t target =
                        config.saliency_target == SaliencyTarget::kGoldLabel
                            ? static_cast<std::size_t>(ex.label)
                            : argmax_lowest(tape.value(g.logits).values);
                    Tensor one_hot = Tensor::zeros({1, dims.num_classes});
                    one_hot.values[target] = 1.0;
                    const Tape::Var picked =
                        tape.sum(tape.mul(g.logits, tape.constant(one_hot)), 1);
                    tape.backward(picked);
                    const std::span<const double> grad = tape.grad(g.gathered);
                    const Tensor grad_embeddings(tape.value(g.gathered).shape,
                                                 std::vector<double>(grad.begin(), grad.end()));
                    const SaliencyVector main_saliency =
                        saliency(grad_embeddings, tape.value(g.gathered),
                                 artifact->saliency.positions);
                    rho = cosine_similarity(main_saliency, artifact->saliency);
                }

                const std::span<const double> biased =
                    needs_artifacts ? std::span<const double>(artifact->biased_log_probs)
                                    : std::span<const double>();
                const LossGraph loss = build_loss(tape, log_probs, biased, rho,
                                                  static_cast<std::size_t>(ex.label),
                                                  config.loss);
                loss_sum += loss.breakdown.total;
                rho_sum += loss.breakdown.rho;
                rho_star_sum += loss.breakdown.rho_star;
                batch_total = have_total ? tape.add(batch_total, loss.total) : loss.total;
                have_total = true;
            }

            const Tape::Var batch_mean =
                tape.mul(batch_total, 1.0 / static_cast<double>(batch_n));
            const double batch_loss = tape.value(batch_mean).values[0];
            if (!std::isfinite(batch_loss)) {
                throw DataError("train: non-finite batch loss " + std::to_string(batch_loss) +
                                " at epoch " + std::to_string(epoch + 1) + ", step " +
                                std::to_string(step + 1) + " (examples " + std::to_string(start) +
                                ".." + std::to_string(batch_end - 1) + " of the shuffle)");
            }
            tape.backward(batch_mean);

            const std::array<Tape::Var, ClassifierParams::kTensorCount> param_vars = {
                vars.embedding, vars.hidden_weight, vars.hidden_bias, vars.output_weight,
                vars.output_bias};
            for (std::size_t k = 0; k < param_vars.size(); ++k) {
                const std::span<const double> g = tape.grad(param_vars[k]);
                grads[k].assign(g.begin(), g.end());
            }
            ++step;
            optimizer.step(result.params, grads, schedule.at(step));
        }

        EpochStats stats;
        stats.epoch = epoch + 1;
        stats.mean_loss = loss_sum / static_cast<double>(n);
        stats.mean_rho = rho_sum / static_cast<double>(n);
        stats.mean_rho_star = rho_star_sum / static_cast<double>(n);
        if (id_eval != nullptr) {
            stats.id_accuracy = evaluate(result.params, *id_eval, view_mode);
        }
        result.history.push_back(stats);
    }
    return result;
}

double evaluate(const ClassifierParams& params, const std::vector<LabeledExample>& split,
                ViewMode view_mode) {
    if (split.empty()) {
        throw std::invalid_argument("evaluate: empty split");
    }
    std::size_t correct = 0;
    for (const LabeledExample& ex : split) {
        const Tensor logits = forward(params, make_view(ex, view_mode));
        if (argmax_lowest(logits.values) == static_cast<std::size_t>(ex.label)) {
            ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(split.size());
}

SplitStats aggregate(std::vector<double> raw) {
    if (raw.empty()) {
        throw std::invalid_argument("aggregate: no values");
    }
    SplitStats stats;
    stats.raw = std::move(raw);
    for (double v : stats.raw) {
        stats.mean += v;
    }
    stats.mean /= static_cast<double>(stats.raw.size());
    if (stats.raw.size() > 1) {
        double ss = 0.0;
        for (double v : stats.raw) {
            ss += (v - stats.mean) * (v - stats.mean);
        }
        stats.stddev = std::sqrt(ss / static_cast<double>(stats.raw.size() - 1));
    }
    return stats;
}

MultiSeedResult multi_seed_run(const DatasetSplits& data,
                               const std::vector<BiasArtifact>* artifacts, const ModelDims& dims,
                               const TrainConfig& config, int jobs) {
    config.validate();
    if (config.seeds.size() < 2) {
        throw ConfigError("multi_seed_run: at least 2 seeds required, got " +
                          std::to_string(config.seeds.size()));
    }
    const std::size_t k = config.seeds.size();
    MultiSeedResult result;
    result.runs.resize(k);
    std::vector<double> id_raw(k);
    std::vector<double> ood_raw(k);

    parallel_for(k, jobs, [&](std::size_t i) {
        try {
            result.runs[i] = train_main(data.train, artifacts, dims, config, config.seeds[i],
                                        &data.id_test);
            id_raw[i] = evaluate(result.runs[i].params, data.id_test);
            ood_raw[i] = evaluate(result.runs[i].params, data.ood_test);
        } catch (const std::exception& e) {
            throw DataError("multi_seed_run: seed " + std::to_string(config.seeds[i]) +
                            " failed: " + e.what());
        }
    });

    result.report.id = aggregate(std::move(id_raw));
    result.report.ood = aggregate(std::move(ood_raw));
    result.report.dims = dims;
    result.report.config = config;
    return result;
}

std::vector<SweepCell> sweep(std::span<const double> alphas, std::span<const double> betas,
                             const DatasetSplits& data,
                             const std::vector<BiasArtifact>* artifacts, const ModelDims& dims,
                             const TrainConfig& base_config, int jobs) {
    if (alphas.empty() || betas.empty()) {
        throw ConfigError("sweep: alpha and beta grids must be non-empty");
    }
    std::vector<SweepCell> cells;
    cells.reserve(alphas.size() * betas.size());
    for (double alpha : alphas) {
        for (double beta : betas) {
            SweepCell cell;
            cell.alpha = alpha;
            cell.beta = beta;
            cells.push_back(cell);
        }
    }
    parallel_for(cells.size(), jobs, [&](std::size_t i) {
        TrainConfig config = base_config;
        config.loss.alpha = cells[i].alpha;
        config.loss.beta = cells[i].beta;
        cells[i].report = multi_seed_run(data, artifacts, dims, config, 1).report;
    });
    std::stable_sort(cells.begin(), cells.end(), [](const SweepCell& a, const SweepCell& b) {
        return a.report.ood.mean > b.report.ood.mean;
    });
    return cells;
}

}  // namespace debiaslab
