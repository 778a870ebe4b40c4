#include <cstdlib>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "debiaslab/commands.hpp"

namespace {

// DEBIAS_LAB_OUT overrides --out wherever an output directory is taken.
std::string resolve_out(const std::string& flag_value) {
    if (const char* env = std::getenv("DEBIAS_LAB_OUT")) {
        return env;
    }
    return flag_value;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Synthetic debiasing laboratory: product-of-experts training with "
                 "attribution-similarity weighting"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir = "runs/default";
    std::string checkpoint;
    std::string split = "id";
    std::string view = "full";
    std::string loss;
    std::optional<double> alpha;
    std::optional<double> beta;
    std::vector<std::uint64_t> seeds;
    std::vector<double> alphas{0.01, 0.1, 0.2, 0.3, 0.5, 1.0};
    std::vector<double> betas{0.1, 0.3, 0.5, 1.0};
    std::vector<std::string> report_dirs;
    std::string report_out;
    int jobs = 1;

    CLI::App* generate = app.add_subcommand("generate", "Generate dataset splits and manifest");
    generate->add_option("--config", config_path, "Experiment config JSON")->required();
    generate->add_option("--out", out_dir, "Output directory");

    CLI::App* train_biased =
        app.add_subcommand("train-biased", "Train the bias-segment-only model");
    train_biased->add_option("--out", out_dir, "Run directory");

    CLI::App* export_artifacts = app.add_subcommand(
        "export-artifacts", "Freeze the biased model's per-example predictions and saliencies");
    export_artifacts->add_option("--out", out_dir, "Run directory");

    CLI::App* train_main = app.add_subcommand("train-main", "Train main models over seeds");
    train_main->add_option("--out", out_dir, "Run directory");
    train_main->add_option("--loss", loss, "Loss variant: ce, poe, poe_ce or poe_sals");
    double alpha_value = 0.0;
    double beta_value = 0.0;
    CLI::Option* alpha_opt =
        train_main->add_option("--alpha", alpha_value, "CE-term weight override");
    CLI::Option* beta_opt =
        train_main->add_option("--beta", beta_value, "Adjustment exponent override");
    train_main->add_option("--seeds", seeds, "Seed list override")->delimiter(',');
    std::uint64_t single_seed = 0;
    CLI::Option* seed_opt = train_main->add_option("--seed", single_seed, "Single-seed override");
    train_main->add_option("--jobs", jobs, "Parallel seed workers");

    CLI::App* evaluate = app.add_subcommand("evaluate", "Evaluate a checkpoint on a split");
    evaluate->add_option("--out", out_dir, "Run directory");
    evaluate->add_option("--checkpoint", checkpoint, "Checkpoint path")->required();
    evaluate->add_option("--split", split, "train, id or ood");
    evaluate->add_option("--view", view, "full or bias");

    CLI::App* sweep = app.add_subcommand("sweep", "Grid-sweep alpha and beta");
    sweep->add_option("--out", out_dir, "Run directory");
    sweep->add_option("--alphas", alphas, "Alpha grid")->delimiter(',');
    sweep->add_option("--betas", betas, "Beta grid")->delimiter(',');
    sweep->add_option("--jobs", jobs, "Parallel cell workers");

    CLI::App* report = app.add_subcommand("report", "Render a comparison table across runs");
    report->add_option("dirs", report_dirs, "Run directories")->required();
    report->add_option("--out", report_out, "Directory for report.txt and report_rows.jsonl");

    CLI11_PARSE(app, argc, argv);

    if (alpha_opt->count() > 0) {
        alpha = alpha_value;
    }
    if (beta_opt->count() > 0) {
        beta = beta_value;
    }
    if (seed_opt->count() > 0) {
        seeds = {single_seed};
    }

    return debiaslab::run_cli_command([&] {
        if (generate->parsed()) {
            debiaslab::cmd_generate(config_path, resolve_out(out_dir));
        } else if (train_biased->parsed()) {
            debiaslab::cmd_train_biased(resolve_out(out_dir));
        } else if (export_artifacts->parsed()) {
            debiaslab::cmd_export_artifacts(resolve_out(out_dir));
        } else if (train_main->parsed()) {
            debiaslab::TrainMainOptions options;
            if (!loss.empty()) {
                options.loss_variant = loss;
            }
            options.alpha = alpha;
            options.beta = beta;
            if (!seeds.empty()) {
                options.seeds = seeds;
            }
            options.jobs = jobs;
            debiaslab::cmd_train_main(resolve_out(out_dir), options);
        } else if (evaluate->parsed()) {
            debiaslab::cmd_evaluate(resolve_out(out_dir), checkpoint, split, view);
        } else if (sweep->parsed()) {
            debiaslab::cmd_sweep(resolve_out(out_dir), alphas, betas, jobs);
        } else if (report->parsed()) {
            std::vector<std::filesystem::path> dirs(report_dirs.begin(), report_dirs.end());
            std::optional<std::filesystem::path> out;
            if (const char* env = std::getenv("DEBIAS_LAB_OUT")) {
                out = env;
            } else if (!report_out.empty()) {
                out = report_out;
            }
            debiaslab::cmd_report(dirs, out);
        }
    });
}
