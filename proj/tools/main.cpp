#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"
#include "lorica/error.hpp"

namespace {

int exit_code(lorica::ErrorCategory category) {
    switch (category) {
        case lorica::ErrorCategory::config: return 2;
        case lorica::ErrorCategory::io: return 4;
        default: return 3;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Personalized federated adversarial fine-tuning with low-rank adapters"};
    app.require_subcommand(1);

    std::string config_path;
    lorica::cli::Overrides overrides;
    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
        cmd->add_option_function<std::uint64_t>("--seed", [&](std::uint64_t v) { overrides.seed = v; },
                                                "Override the config seed");
        cmd->add_option_function<std::string>("--out", [&](const std::string& v) { overrides.out = v; },
                                              "Override the output directory");
        cmd->add_option_function<int>("--threads", [&](int v) { overrides.threads = v; },
                                      "Worker threads for client-parallel work")
            ->check(CLI::PositiveNumber);
    };

    auto* partition = app.add_subcommand("partition", "Build the dataset and write per-client shards");
    auto* phase1 = app.add_subcommand("phase1", "Federated adversarial fine-tuning of the adapters");
    auto* phase2 = app.add_subcommand("phase2", "Gated layer selection and benign retraining per client");
    auto* evaluate = app.add_subcommand("evaluate", "Benign accuracy and robustness of the latest checkpoints");
    for (auto* cmd : {partition, phase1, phase2, evaluate}) add_common(cmd);
    std::optional<std::string> stage;
    evaluate->add_option_function<std::string>("--stage", [&](const std::string& v) { stage = v; },
                                               "phase1 or phase2 (default: latest available)")
        ->check(CLI::IsMember({"phase1", "phase2"}));

    auto* report = app.add_subcommand("report", "Columnar summaries of one or more run directories");
    std::vector<std::string> run_dirs;
    std::string report_out = "report";
    report->add_option("runs", run_dirs, "Run directories")->required();
    report->add_option("--out", report_out, "Directory for the summary tables");
    report->add_option("--config", config_path, "Ignored; accepted for symmetry with the other commands");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (report->parsed()) {
            std::vector<std::filesystem::path> dirs(run_dirs.begin(), run_dirs.end());
            lorica::cli::cmd_report(dirs, report_out);
            return 0;
        }
        const auto cfg = lorica::cli::load_with_overrides(config_path, overrides);
        if (partition->parsed()) lorica::cli::cmd_partition(cfg);
        if (phase1->parsed()) lorica::cli::cmd_phase1(cfg);
        if (phase2->parsed()) lorica::cli::cmd_phase2(cfg);
        if (evaluate->parsed()) lorica::cli::cmd_evaluate(cfg, stage);
    } catch (const lorica::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code(e.category());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    }
    return 0;
}
