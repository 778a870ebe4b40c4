#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace debiaslab {

// Exit codes for the CLI; each error category gets its own.
constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;
constexpr int kExitMissingFile = 3;
constexpr int kExitDigestMismatch = 4;
constexpr int kExitData = 5;

// Runs a command body, mapping typed errors onto exit codes and printing a
// categorized message to stderr.
int run_cli_command(const std::function<void()>& body);

struct TrainMainOptions {
    std::optional<std::string> loss_variant;
    std::optional<double> alpha;
    std::optional<double> beta;
    std::optional<std::vector<std::uint64_t>> seeds;
    int jobs = 1;
};

// Pipeline stages. Every command echoes the fully-resolved configuration it
// runs with, verifies its inputs against the manifest digests, and is a
// no-op when its recorded outputs are already up to date.
void cmd_generate(const std::filesystem::path& config_path,
                  const std::filesystem::path& out_dir);
void cmd_train_biased(const std::filesystem::path& out_dir);
void cmd_export_artifacts(const std::filesystem::path& out_dir);
void cmd_train_main(const std::filesystem::path& out_dir, const TrainMainOptions& options);
void cmd_evaluate(const std::filesystem::path& out_dir,
                  const std::filesystem::path& checkpoint, const std::string& split,
                  const std::string& view);
void cmd_sweep(const std::filesystem::path& out_dir, const std::vector<double>& alphas,
               const std::vector<double>& betas, int jobs);
void cmd_report(const std::vector<std::filesystem::path>& run_dirs,
                const std::optional<std::filesystem::path>& out_dir);

}  // namespace debiaslab
