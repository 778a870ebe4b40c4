#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "debiaslab/biaspipe.hpp"
#include "debiaslab/classifier.hpp"
#include "debiaslab/datagen.hpp"
#include "debiaslab/losses.hpp"

namespace debiaslab {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

enum class SaliencyTarget {
    kGoldLabel,         // gradient of the gold-label logit (default)
    kArgmaxPrediction,  // gradient of the currently predicted logit
};

struct TrainConfig {
    int epochs = 3;
    std::size_t batch_size = 32;
    double peak_lr = 0.003;
    double warmup_fraction = 0.1;
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5, 6};
    std::uint64_t bias_seed = 101;
    LossConfig loss;
    AdamConfig adam;
    SaliencyTarget saliency_target = SaliencyTarget::kGoldLabel;

    void validate() const;
};

// Linear warmup to the peak, then linear decay to zero over the total step
// count. at(t) is exact at the warmup boundary and at the final step.
class LrSchedule {
  public:
    LrSchedule(double peak, long total_steps, double warmup_fraction);
    double at(long step) const;  // step is 1-based
    long warmup_steps() const { return warmup_; }
    long total_steps() const { return total_; }

  private:
    double peak_;
    long total_;
    long warmup_;
};

class AdamOptimizer {
  public:
    AdamOptimizer(const AdamConfig& config, const ClassifierParams& params);
    void step(ClassifierParams& params,
              const std::vector<std::vector<double>>& grads, double lr);

  private:
    AdamConfig config_;
    std::vector<std::vector<double>> first_moment_;
    std::vector<std::vector<double>> second_moment_;
    long t_ = 0;
};

enum class ViewMode { kFull, kBiasSegmentOnly };

InputView make_view(const LabeledExample& example, ViewMode mode);

struct EpochStats {
    int epoch = 0;  // 1-based
    double mean_loss = 0.0;
    double mean_rho = 0.0;
    double mean_rho_star = 0.0;
    std::optional<double> id_accuracy;
};

struct TrainResult {
    ClassifierParams params;
    std::vector<EpochStats> history;
};

// One optimization run. Per batch: forward every example, recompute the main
// model's saliency at the current parameters over the artifact's positions,
// take the cosine against the stored biased saliency, build the configured
// loss with the similarity weights detached, and apply one Adam step under
// the schedule. Artifacts may be null for the plain CE variant only.
TrainResult train_loop(const std::vector<LabeledExample>& data,
                       const std::vector<BiasArtifact>* artifacts, ViewMode view_mode,
                       const ModelDims& dims, const TrainConfig& config, std::uint64_t seed,
                       const std::vector<LabeledExample>* id_eval = nullptr);

inline TrainResult train_main(const std::vector<LabeledExample>& data,
                              const std::vector<BiasArtifact>* artifacts, const ModelDims& dims,
                              const TrainConfig& config, std::uint64_t seed,
                              const std::vector<LabeledExample>* id_eval = nullptr) {
    return train_loop(data, artifacts, ViewMode::kFull, dims, config, seed, id_eval);
}

// Fraction of argmax-correct predictions; ties resolve to the lowest class index.
double evaluate(const ClassifierParams& params, const std::vector<LabeledExample>& split,
                ViewMode view_mode = ViewMode::kFull);

struct SplitStats {
    double mean = 0.0;
    double stddev = 0.0;  // sample convention (n - 1)
    std::vector<double> raw;
};

SplitStats aggregate(std::vector<double> raw);

struct EvalReport {
    SplitStats id;
    SplitStats ood;
    ModelDims dims;
    TrainConfig config;  // exact configuration the runs used
};

struct MultiSeedResult {
    EvalReport report;
    std::vector<TrainResult> runs;  // in seed order
};

// Trains one independent model per configured seed (at least two) and
// aggregates per-split accuracy. Seed runs are independent, so jobs > 1
// executes them on worker threads without changing any result.
MultiSeedResult multi_seed_run(const DatasetSplits& data,
                               const std::vector<BiasArtifact>* artifacts, const ModelDims& dims,
                               const TrainConfig& config, int jobs = 1);

struct SweepCell {
    double alpha = 0.0;
    double beta = 0.0;
    EvalReport report;
};

// Full Cartesian grid over alpha and beta; each cell is a multi-seed run.
// Cells are returned ranked by OOD mean, best first.
std::vector<SweepCell> sweep(std::span<const double> alphas, std::span<const double> betas,
                             const DatasetSplits& data,
                             const std::vector<BiasArtifact>* artifacts, const ModelDims& dims,
                             const TrainConfig& base_config, int jobs = 1);

}  // namespace debiaslab
