#include "debiaslab/commands.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "debiaslab/biaspipe.hpp"
#include "debiaslab/config.hpp"
#include "debiaslab/digest.hpp"
#include "debiaslab/errors.hpp"
#include "debiaslab/trainer.hpp"

namespace debiaslab {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr int kManifestVersion = 1;
constexpr const char* kTrainFile = "train.jsonl";
constexpr const char* kIdTestFile = "id_test.jsonl";
constexpr const char* kOodTestFile = "ood_test.jsonl";
constexpr const char* kBiasedCkptFile = "biased_model.ckpt";
constexpr const char* kArtifactsFile = "artifacts.jsonl";

struct Manifest {
    fs::path dir;
    json root;

    fs::path path() const { return dir / "manifest.json"; }

    static Manifest load(const fs::path& out_dir) {
        Manifest m;
        m.dir = out_dir;
        std::ifstream in(m.path());
        if (!in) {
            throw MissingFileError("manifest not found in " + out_dir.string() +
                                   "; run generate first");
        }
        try {
            in >> m.root;
        } catch (const json::parse_error& e) {
            throw DataError("manifest parse error in " + m.path().string() + ": " + e.what());
        }
        return m;
    }

    void save() const {
        std::ofstream out(path());
        if (!out) {
            throw MissingFileError("cannot write manifest: " + path().string());
        }
        out << root.dump(2) << "\n";
    }

    ExperimentConfig config() const { return parse_experiment_config(root.at("config")); }

    bool has_stage(const std::string& name) const {
        return root.contains("stages") && root.at("stages").contains(name);
    }

    // Verifies that `file`, produced by `producer`, still matches its
    // recorded digest. Returns the digest.
    std::string verify_upstream(const std::string& producer, const std::string& file) const {
        if (!has_stage(producer)) {
            throw MissingFileError("stage \"" + producer + "\" has not run in " + dir.string() +
                                   "; run it first");
        }
        const json& outputs = root.at("stages").at(producer).at("outputs");
        if (!outputs.contains(file)) {
            throw MissingFileError("stage \"" + producer + "\" did not record " + file);
        }
        const std::string recorded = outputs.at(file).get<std::string>();
        const fs::path full = dir / file;
        if (!fs::exists(full)) {
            throw MissingFileError(file + " missing from " + dir.string() + "; re-run " +
                                   producer);
        }
        const std::string actual = file_digest(full);
        if (actual != recorded) {
            throw DigestMismatchError(file + " digest " + actual + " does not match the " +
                                      recorded + " recorded by " + producer + "; re-run " +
                                      producer + " and the stages after it");
        }
        return actual;
    }

    // True when the stage already ran with the same inputs/extras and all of
    // its outputs are still present and unchanged.
    bool stage_up_to_date(const std::string& name, const json& inputs,
                          const json& extra = json::object()) const {
        if (!has_stage(name)) {
            return false;
        }
        const json& stage = root.at("stages").at(name);
        if (stage.value("inputs", json::object()) != inputs) {
            return false;
        }
        for (const auto& [key, value] : extra.items()) {
            if (!stage.contains(key) || stage.at(key) != value) {
                return false;
            }
        }
        if (!stage.contains("outputs")) {
            return false;
        }
        for (const auto& [file, digest] : stage.at("outputs").items()) {
            const fs::path full = dir / file;
            if (!fs::exists(full) || file_digest(full) != digest.get<std::string>()) {
                return false;
            }
        }
        return true;
    }

    void record_stage(const std::string& name, json stage) {
        root["stages"][name] = std::move(stage);
        save();
    }
};

void echo_config(const json& config) {
    std::cout << "config: " << config.dump(2) << "\n";
}

json digest_outputs(const fs::path& dir, const std::vector<std::string>& files) {
    json outputs = json::object();
    for (const std::string& file : files) {
        outputs[file] = file_digest(dir / file);
    }
    return outputs;
}

std::vector<LabeledExample> load_split(const fs::path& dir, const std::string& file) {
    return read_dataset(dir / file);
}

void write_history(const fs::path& path, const std::vector<EpochStats>& history) {
    std::ofstream out(path);
    if (!out) {
        throw MissingFileError("cannot write history: " + path.string());
    }
    for (const EpochStats& e : history) {
        json row = {{"epoch", e.epoch},
                    {"mean_loss", e.mean_loss},
                    {"mean_rho", e.mean_rho},
                    {"mean_rho_star", e.mean_rho_star}};
        row["id_acc"] = e.id_accuracy.has_value() ? json(*e.id_accuracy) : json(nullptr);
        out << row.dump() << "\n";
    }
}

std::string percent_cell(double mean, double stddev) {
    char buffer[64];
    std::snprintf(buffer, sizeof(buffer), "%.2f±%.2f", mean * 100.0, stddev * 100.0);
    return buffer;
}

struct ReportRow {
    std::string run;
    std::string variant;
    double id_mean = 0.0;
    double id_stddev = 0.0;
    double ood_mean = 0.0;
    double ood_stddev = 0.0;
};

std::string render_report_table(const std::vector<ReportRow>& rows) {
    double best_id = -1.0;
    double best_ood = -1.0;
    for (const ReportRow& row : rows) {
        best_id = std::max(best_id, row.id_mean);
        best_ood = std::max(best_ood, row.ood_mean);
    }
    auto cell = [](const std::string& text, bool is_max) {
        return is_max ? "*" + text + "*" : text;
    };
    std::vector<std::array<std::string, 3>> lines;
    lines.push_back({"model", "ID", "OOD"});
    for (const ReportRow& row : rows) {
        lines.push_back({row.run.empty() ? row.variant : row.variant + " (" + row.run + ")",
                         cell(percent_cell(row.id_mean, row.id_stddev), row.id_mean == best_id),
                         cell(percent_cell(row.ood_mean, row.ood_stddev),
                              row.ood_mean == best_ood)});
    }
    std::array<std::size_t, 3> widths{0, 0, 0};
    for (const auto& line : lines) {
        for (std::size_t c = 0; c < 3; ++c) {
            widths[c] = std::max(widths[c], line[c].size());
        }
    }
    std::string out;
    for (const auto& line : lines) {
        for (std::size_t c = 0; c < 3; ++c) {
            out += line[c];
            if (c + 1 < 3) {
                out.append(widths[c] - line[c].size() + 2, ' ');
            }
        }
        out += "\n";
    }
    return out;
}

}  // namespace

int run_cli_command(const std::function<void()>& body) {
    try {
        body();
        return kExitOk;
    } catch (const ConfigError& e) {
        std::cerr << "error[config]: " << e.what() << "\n";
        return kExitConfig;
    } catch (const MissingFileError& e) {
        std::cerr << "error[missing-file]: " << e.what() << "\n";
        return kExitMissingFile;
    } catch (const DigestMismatchError& e) {
        std::cerr << "error[digest-mismatch]: " << e.what() << "\n";
        return kExitDigestMismatch;
    } catch (const DataError& e) {
        std::cerr << "error[data]: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}

void cmd_generate(const fs::path& config_path, const fs::path& out_dir) {
    const ExperimentConfig config = load_experiment_config(config_path);
    const json resolved = experiment_config_to_json(config);
    echo_config(resolved);
    const std::string config_digest = digest_hex(resolved.dump());

    fs::create_directories(out_dir);
    const fs::path manifest_path = out_dir / "manifest.json";
    if (fs::exists(manifest_path)) {
        Manifest existing = Manifest::load(out_dir);
        if (existing.root.value("config_digest", "") == config_digest &&
            existing.stage_up_to_date("generate", json::object())) {
            std::cout << "generate: up to date in " << out_dir.string() << "\n";
            return;
        }
    }

    const DatasetSplits splits = generate(config.dataset);
    write_dataset(out_dir / kTrainFile, splits.train);
    write_dataset(out_dir / kIdTestFile, splits.id_test);
    write_dataset(out_dir / kOodTestFile, splits.ood_test);
    {
        std::ofstream out(out_dir / "resolved_config.json");
        out << resolved.dump(2) << "\n";
    }

    Manifest manifest;
    manifest.dir = out_dir;
    manifest.root = {{"version", kManifestVersion},
                     {"config", resolved},
                     {"config_digest", config_digest},
                     {"stages", json::object()}};
    manifest.root["stages"]["generate"] = {
        {"inputs", json::object()},
        {"outputs", digest_outputs(out_dir, {kTrainFile, kIdTestFile, kOodTestFile})}};
    manifest.save();
    std::cout << "generate: wrote " << splits.train.size() << " train, "
              << splits.id_test.size() << " id_test, " << splits.ood_test.size()
              << " ood_test examples to " << out_dir.string() << "\n";
}

void cmd_train_biased(const fs::path& out_dir) {
    Manifest manifest = Manifest::load(out_dir);
    const ExperimentConfig config = manifest.config();
    echo_config(experiment_config_to_json(config));

    json inputs = json::object();
    inputs[kTrainFile] = manifest.verify_upstream("generate", kTrainFile);
    if (manifest.stage_up_to_date("train_biased", inputs)) {
        std::cout << "train-biased: up to date in " << out_dir.string() << "\n";
        return;
    }

    const std::vector<LabeledExample> train = load_split(out_dir, kTrainFile);
    const std::vector<LabeledExample> ood = load_split(out_dir, kOodTestFile);
    const ClassifierParams params = train_biased(train, config.dims(), config.train);
    save_checkpoint(params, out_dir / kBiasedCkptFile);

    const double train_accuracy = evaluate(params, train, ViewMode::kBiasSegmentOnly);
    const double ood_accuracy = evaluate(params, ood, ViewMode::kBiasSegmentOnly);
    std::cout << "train-biased: train accuracy " << train_accuracy << ", ood accuracy "
              << ood_accuracy << " (near-chance certifies the bias construction)\n";

    manifest.record_stage("train_biased",
                          {{"inputs", inputs},
                           {"outputs", digest_outputs(out_dir, {kBiasedCkptFile})},
                           {"train_accuracy", train_accuracy},
                           {"ood_accuracy", ood_accuracy}});
}

void cmd_export_artifacts(const fs::path& out_dir) {
    Manifest manifest = Manifest::load(out_dir);
    const ExperimentConfig config = manifest.config();
    echo_config(experiment_config_to_json(config));

    json inputs = json::object();
    inputs[kTrainFile] = manifest.verify_upstream("generate", kTrainFile);
    inputs[kBiasedCkptFile] = manifest.verify_upstream("train_biased", kBiasedCkptFile);
    if (manifest.stage_up_to_date("export_artifacts", inputs)) {
        std::cout << "export-artifacts: up to date in " << out_dir.string() << "\n";
        return;
    }

    const std::vector<LabeledExample> train = load_split(out_dir, kTrainFile);
    const ClassifierParams params = load_checkpoint(out_dir / kBiasedCkptFile);
    const std::vector<BiasArtifact> artifacts = export_bias_artifacts(params, train);
    write_artifacts(out_dir / kArtifactsFile, artifacts);

    manifest.record_stage("export_artifacts",
                          {{"inputs", inputs},
                           {"outputs", digest_outputs(out_dir, {kArtifactsFile})}});
    std::cout << "export-artifacts: wrote " << artifacts.size() << " records\n";
}

void cmd_train_main(const fs::path& out_dir, const TrainMainOptions& options) {
    Manifest manifest = Manifest::load(out_dir);
    ExperimentConfig config = manifest.config();
    if (options.loss_variant) {
        config.train.loss.variant = parse_loss_variant(*options.loss_variant);
    }
    if (options.alpha) {
        config.train.loss.alpha = *options.alpha;
    }
    if (options.beta) {
        config.train.loss.beta = *options.beta;
    }
    if (options.seeds) {
        config.train.seeds = *options.seeds;
    }
    config.validate();
    echo_config(experiment_config_to_json(config));

    const std::string variant = loss_variant_name(config.train.loss.variant);
    const bool needs_artifacts = config.train.loss.variant != LossVariant::kCe;

    json inputs = json::object();
    inputs[kTrainFile] = manifest.verify_upstream("generate", kTrainFile);
    inputs[kIdTestFile] = manifest.verify_upstream("generate", kIdTestFile);
    inputs[kOodTestFile] = manifest.verify_upstream("generate", kOodTestFile);
    if (needs_artifacts) {
        inputs[kArtifactsFile] = manifest.verify_upstream("export_artifacts", kArtifactsFile);
    }

    const std::string stage_name = "train_main:" + variant;
    const json loss_echo = {{"variant", variant},
                            {"alpha", config.train.loss.alpha},
                            {"beta", config.train.loss.beta},
                            {"seeds", config.train.seeds}};
    if (manifest.stage_up_to_date(stage_name, inputs, {{"loss", loss_echo}})) {
        std::cout << "train-main: " << variant << " up to date in " << out_dir.string() << "\n";
        return;
    }

    DatasetSplits data;
    data.train = load_split(out_dir, kTrainFile);
    data.id_test = load_split(out_dir, kIdTestFile);
    data.ood_test = load_split(out_dir, kOodTestFile);
    std::vector<BiasArtifact> artifacts;
    if (needs_artifacts) {
        artifacts = read_artifacts(out_dir / kArtifactsFile);
    }

    MultiSeedResult result;
    if (config.train.seeds.size() == 1) {
        // --seed: one run, reported with zero spread.
        result.runs.push_back(train_main(data.train,
                                         needs_artifacts ? &artifacts : nullptr, config.dims(),
                                         config.train, config.train.seeds.front(),
                                         &data.id_test));
        result.report.id = aggregate({evaluate(result.runs.front().params, data.id_test)});
        result.report.ood = aggregate({evaluate(result.runs.front().params, data.ood_test)});
        result.report.dims = config.dims();
        result.report.config = config.train;
    } else {
        result = multi_seed_run(data, needs_artifacts ? &artifacts : nullptr, config.dims(),
                                config.train, options.jobs);
    }

    const fs::path variant_dir = out_dir / "main" / variant;
    fs::create_directories(variant_dir);
    std::vector<std::string> output_files;
    for (std::size_t i = 0; i < config.train.seeds.size(); ++i) {
        const std::string seed_tag = "seed_" + std::to_string(config.train.seeds[i]);
        save_checkpoint(result.runs[i].params, variant_dir / (seed_tag + ".ckpt"));
        write_history(variant_dir / ("history_" + seed_tag + ".jsonl"),
                      result.runs[i].history);
        output_files.push_back("main/" + variant + "/" + seed_tag + ".ckpt");
        output_files.push_back("main/" + variant + "/history_" + seed_tag + ".jsonl");
    }
    json report = eval_report_to_json(result.report);
    report["variant"] = variant;
    {
        std::ofstream out(variant_dir / "report.json");
        out << report.dump(2) << "\n";
    }
    output_files.push_back("main/" + variant + "/report.json");

    manifest.record_stage(stage_name, {{"inputs", inputs},
                                       {"loss", loss_echo},
                                       {"outputs", digest_outputs(out_dir, output_files)}});
    std::cout << "train-main: " << variant << " id " << percent_cell(result.report.id.mean,
                                                                     result.report.id.stddev)
              << " ood " << percent_cell(result.report.ood.mean, result.report.ood.stddev)
              << " over " << config.train.seeds.size() << " seeds\n";
}

void cmd_evaluate(const fs::path& out_dir, const fs::path& checkpoint,
                  const std::string& split, const std::string& view) {
    Manifest manifest = Manifest::load(out_dir);
    const ExperimentConfig config = manifest.config();
    echo_config(experiment_config_to_json(config));

    std::string split_file;
    if (split == "train") {
        split_file = kTrainFile;
    } else if (split == "id") {
        split_file = kIdTestFile;
    } else if (split == "ood") {
        split_file = kOodTestFile;
    } else {
        throw ConfigError("evaluate: unknown split \"" + split +
                          "\" (expected train, id or ood)");
    }
    ViewMode mode;
    if (view == "full") {
        mode = ViewMode::kFull;
    } else if (view == "bias") {
        mode = ViewMode::kBiasSegmentOnly;
    } else {
        throw ConfigError("evaluate: unknown view \"" + view + "\" (expected full or bias)");
    }

    const ClassifierParams params = load_checkpoint(checkpoint);
    const std::vector<LabeledExample> examples = load_split(out_dir, split_file);
    const double accuracy = evaluate(params, examples, mode);
    const json result = {{"checkpoint", checkpoint.string()},
                         {"split", split},
                         {"view", view},
                         {"accuracy", accuracy}};
    std::cout << result.dump() << "\n";
}

void cmd_sweep(const fs::path& out_dir, const std::vector<double>& alphas,
               const std::vector<double>& betas, int jobs) {
    Manifest manifest = Manifest::load(out_dir);
    const ExperimentConfig config = manifest.config();
    echo_config(experiment_config_to_json(config));
    if (config.train.loss.variant == LossVariant::kCe) {
        throw ConfigError("sweep: the configured loss variant is ce, which has no alpha/beta");
    }

    json inputs = json::object();
    inputs[kTrainFile] = manifest.verify_upstream("generate", kTrainFile);
    inputs[kIdTestFile] = manifest.verify_upstream("generate", kIdTestFile);
    inputs[kOodTestFile] = manifest.verify_upstream("generate", kOodTestFile);
    inputs[kArtifactsFile] = manifest.verify_upstream("export_artifacts", kArtifactsFile);
    const json grid_echo = {{"alphas", alphas}, {"betas", betas}};
    if (manifest.stage_up_to_date("sweep", inputs, {{"grid", grid_echo}})) {
        std::cout << "sweep: up to date in " << out_dir.string() << "\n";
        return;
    }

    DatasetSplits data;
    data.train = load_split(out_dir, kTrainFile);
    data.id_test = load_split(out_dir, kIdTestFile);
    data.ood_test = load_split(out_dir, kOodTestFile);
    const std::vector<BiasArtifact> artifacts = read_artifacts(out_dir / kArtifactsFile);

    const std::vector<SweepCell> cells =
        sweep(alphas, betas, data, &artifacts, config.dims(), config.train, jobs);

    std::ofstream rows(out_dir / "sweep.jsonl");
    std::vector<ReportRow> table_rows;
    for (const SweepCell& cell : cells) {
        const json row = {{"alpha", cell.alpha},
                          {"beta", cell.beta},
                          {"id", {{"mean", cell.report.id.mean},
                                  {"stddev", cell.report.id.stddev}}},
                          {"ood", {{"mean", cell.report.ood.mean},
                                   {"stddev", cell.report.ood.stddev}}}};
        rows << row.dump() << "\n";
        char label[64];
        std::snprintf(label, sizeof(label), "alpha=%g beta=%g", cell.alpha, cell.beta);
        table_rows.push_back({"", label, cell.report.id.mean, cell.report.id.stddev,
                              cell.report.ood.mean, cell.report.ood.stddev});
    }
    rows.close();
    const std::string table = render_report_table(table_rows);
    {
        std::ofstream out(out_dir / "sweep.txt");
        out << table;
    }
    std::cout << table;
    manifest.record_stage("sweep", {{"inputs", inputs},
                                    {"grid", grid_echo},
                                    {"outputs", digest_outputs(out_dir,
                                                               {"sweep.jsonl", "sweep.txt"})}});
}

void cmd_report(const std::vector<fs::path>& run_dirs,
                const std::optional<fs::path>& out_dir) {
    if (run_dirs.empty()) {
        throw ConfigError("report: at least one run directory required");
    }
    std::vector<ReportRow> rows;
    for (const fs::path& dir : run_dirs) {
        Manifest manifest = Manifest::load(dir);
        bool found = false;
        for (const auto& [name, stage] : manifest.root.at("stages").items()) {
            if (name.rfind("train_main:", 0) != 0) {
                continue;
            }
            const std::string variant = name.substr(std::string("train_main:").size());
            const fs::path report_path = dir / "main" / variant / "report.json";
            std::ifstream in(report_path);
            if (!in) {
                throw DataError("incomplete run directory " + dir.string() + ": missing " +
                                report_path.string());
            }
            json report;
            try {
                in >> report;
            } catch (const json::parse_error& e) {
                throw DataError("incomplete run directory " + dir.string() + ": " + e.what());
            }
            ReportRow row;
            row.run = run_dirs.size() > 1 ? dir.filename().string() : "";
            row.variant = variant;
            row.id_mean = report.at("id").at("mean").get<double>();
            row.id_stddev = report.at("id").at("stddev").get<double>();
            row.ood_mean = report.at("ood").at("mean").get<double>();
            row.ood_stddev = report.at("ood").at("stddev").get<double>();
            rows.push_back(std::move(row));
            found = true;
        }
        if (!found) {
            throw DataError("incomplete run directory " + dir.string() +
                            ": no trained main model");
        }
    }
    std::sort(rows.begin(), rows.end(), [](const ReportRow& a, const ReportRow& b) {
        return a.variant == b.variant ? a.run < b.run : a.variant < b.variant;
    });

    const std::string table = render_report_table(rows);
    std::cout << table;
    if (out_dir) {
        fs::create_directories(*out_dir);
        std::ofstream text(*out_dir / "report.txt");
        text << table;
        std::ofstream jsonl(*out_dir / "report_rows.jsonl");
        for (const ReportRow& row : rows) {
            const json record = {{"run", row.run},
                                 {"variant", row.variant},
                                 {"id", {{"mean", row.id_mean}, {"stddev", row.id_stddev}}},
                                 {"ood", {{"mean", row.ood_mean}, {"stddev", row.ood_stddev}}}};
            jsonl << record.dump() << "\n";
        }
    }
}

}  // namespace debiaslab
