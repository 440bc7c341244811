#include "commands.hpp"

#include <charconv>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "lorica/checkpoint.hpp"
#include "lorica/error.hpp"
#include "lorica/experiment.hpp"
#include "lorica/parallel.hpp"
#include "lorica/random.hpp"

#ifndef LORICA_GIT_REV
#define LORICA_GIT_REV "unknown"
#endif

namespace lorica::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kEvaluate = 0xe7a1;

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

std::ofstream open_out(const fs::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    return out;
}

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

std::vector<json> read_jsonl(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path.string());
    std::vector<json> records;
    std::string line;
    for (int lineno = 1; std::getline(in, line); ++lineno) {
        if (line.empty()) continue;
        try {
            records.push_back(json::parse(line));
        } catch (const json::parse_error& e) {
            throw IoError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return records;
}

void write_json(const fs::path& path, const json& j) {
    auto out = open_out(path);
    out << j.dump(2) << '\n';
}

fs::path data_dir(const ExperimentConfig& cfg) { return fs::path(cfg.output_dir) / "data"; }

fs::path checkpoint_path(const ExperimentConfig& cfg, const std::string& stage, int client) {
    return fs::path(cfg.output_dir) / "checkpoints" / stage / ("client_" + std::to_string(client) + ".ckpt");
}

/// Records the command in manifest.json. `fresh` starts a new stage list.
void update_manifest(const ExperimentConfig& cfg, const std::string& stage, bool fresh) {
    const fs::path path = fs::path(cfg.output_dir) / "manifest.json";
    const std::string hash = config_hash(cfg);
    std::vector<std::string> stages;
    if (!fresh && fs::exists(path)) stages = read_json(path).value("stages", std::vector<std::string>{});
    if (std::find(stages.begin(), stages.end(), stage) == stages.end()) stages.push_back(stage);
    write_json(path, {{"schema", "lorica.manifest.v1"},
                      {"provenance", provenance()},
                      {"config_hash", hash},
                      {"seed", cfg.seed},
                      {"stages", stages},
                      {"config", to_json(cfg)}});
}

void require_manifest(const ExperimentConfig& cfg) {
    const fs::path path = fs::path(cfg.output_dir) / "manifest.json";
    if (!fs::exists(path)) throw IoError(path.string() + " not found; run `lorica partition` first");
    if (read_json(path).value("config_hash", "") != config_hash(cfg)) {
        throw ConfigError("output directory " + cfg.output_dir +
                          " was produced by a different config; run partition again or pick another --out");
    }
}

PreparedData load_partition(const ExperimentConfig& cfg) {
    const fs::path dir = data_dir(cfg);
    const fs::path pool = dir / "pretrain_pool.csv";
    if (!fs::exists(pool)) throw IoError(pool.string() + " not found; run `lorica partition` first");
    PreparedData data;
    data.pretrain_pool = load_csv(pool, cfg.dataset.num_classes);
    for (int k = 0; k < cfg.partition.num_clients; ++k) {
        const std::string stem = "client_" + std::to_string(k);
        ClientData c{load_csv(dir / (stem + "_train.csv"), cfg.dataset.num_classes),
                     load_csv(dir / (stem + "_test.csv"), cfg.dataset.num_classes)};
        c.train.name = stem + "/train";
        c.test.name = stem + "/test";
        data.clients.push_back(std::move(c));
    }
    return data;
}

std::string format_number(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, r.ptr);
}

std::string join_ints(const json& arr) {
    if (arr.empty()) return "-";
    std::string s;
    for (const auto& v : arr) {
        if (!s.empty()) s += ',';
        s += std::to_string(v.get<long long>());
    }
    return s;
}

std::string join_numbers(const json& arr) {
    std::string s;
    for (const auto& v : arr) {
        if (!s.empty()) s += ',';
        s += format_number(v.get<double>());
    }
    return s.empty() ? "-" : s;
}

/// Wide table keyed by an integer row id; missing cells print as NA.
class Table {
public:
    explicit Table(std::string key) : key_(std::move(key)) {}

    void set(long row, const std::string& column, double value) {
        if (std::find(columns_.begin(), columns_.end(), column) == columns_.end()) columns_.push_back(column);
        cells_[row][column] = value;
    }

    void write(const fs::path& path, const std::map<long, std::string>& row_names = {}) const {
        auto out = open_out(path);
        out << key_;
        for (const auto& c : columns_) out << '\t' << c;
        out << '\n';
        for (const auto& [row, values] : cells_) {
            const auto named = row_names.find(row);
            out << (named != row_names.end() ? named->second : std::to_string(row));
            for (const auto& c : columns_) {
                const auto it = values.find(c);
                out << '\t' << (it == values.end() ? "NA" : format_number(it->second));
            }
            out << '\n';
        }
    }

private:
    std::string key_;
    std::vector<std::string> columns_;
    std::map<long, std::map<std::string, double>> cells_;
};

}  // namespace

std::string provenance() { return std::string("lorica git:") + LORICA_GIT_REV; }

ExperimentConfig load_with_overrides(const fs::path& config_path, const Overrides& overrides) {
    ExperimentConfig cfg = load_config(config_path);
    if (overrides.seed) cfg.seed = *overrides.seed;
    if (overrides.out) cfg.output_dir = *overrides.out;
    if (overrides.threads) cfg.threads = *overrides.threads;
    validate(cfg);
    return cfg;
}

void cmd_partition(const ExperimentConfig& cfg) {
    const PreparedData data = prepare_data(cfg);
    const fs::path dir = data_dir(cfg);
    ensure_dir(dir);
    write_csv(dir / "pretrain_pool.csv", data.pretrain_pool);
    for (std::size_t k = 0; k < data.clients.size(); ++k) {
        const std::string stem = "client_" + std::to_string(k);
        write_csv(dir / (stem + "_train.csv"), data.clients[k].train);
        write_csv(dir / (stem + "_test.csv"), data.clients[k].test);
    }
    json manifest = partition_manifest(data.shards);
    manifest["schema"] = "lorica.partition.v1";
    write_json(fs::path(cfg.output_dir) / "partition.json", manifest);
    update_manifest(cfg, "partition", true);
    std::cerr << "partition: " << data.clients.size() << " clients written to " << dir.string() << '\n';
}

void cmd_phase1(const ExperimentConfig& cfg) {
    require_manifest(cfg);
    const PreparedData data = load_partition(cfg);
    const int n = static_cast<int>(data.clients.size());
    const DenseNet pretrained = pretrain(cfg, data.pretrain_pool);
    ensure_dir(fs::path(cfg.output_dir) / "checkpoints" / "phase1");
    save_checkpoint(fs::path(cfg.output_dir) / "checkpoints" / "pretrained.ckpt", pretrained);

    const Phase1Config p1 = resolve_phase1(cfg, n, cfg.dataset.num_classes);
    auto rounds = open_out(fs::path(cfg.output_dir) / "rounds.jsonl");
    const Phase1Result result =
        run_phase1(p1, data.clients, initial_client_models(cfg, pretrained, n), [&](const RoundReport& r) {
            rounds << to_json(r).dump() << '\n';
            rounds.flush();
            std::cerr << "phase1: round " << r.round << "/" << p1.rounds << " excluded " << r.aggregation.excluded.size()
                      << (r.skipped ? " (skipped)" : "") << '\n';
        });
    if (!rounds) throw IoError("failed writing rounds.jsonl");
    for (const auto& m : result.clients) save_checkpoint(checkpoint_path(cfg, "phase1", m.client_id), m);
    update_manifest(cfg, "phase1", false);
}

void cmd_phase2(const ExperimentConfig& cfg) {
    require_manifest(cfg);
    const PreparedData data = load_partition(cfg);
    const int n = static_cast<int>(data.clients.size());
    std::vector<ClientModel> models;
    for (int k = 0; k < n; ++k) {
        const fs::path path = checkpoint_path(cfg, "phase1", k);
        if (!fs::exists(path)) throw IoError(path.string() + " not found; run `lorica phase1` first");
        models.push_back(load_client_checkpoint(path));
    }
    const Phase2Config p2 = resolve_phase2(cfg);
    std::vector<Phase2Result> results(static_cast<std::size_t>(n));
    parallel_for(static_cast<std::size_t>(n), cfg.threads, [&](std::size_t k) {
        results[k] = run_phase2(models[k], data.clients[k].train, p2);
    });
    ensure_dir(fs::path(cfg.output_dir) / "checkpoints" / "phase2");
    auto reports = open_out(fs::path(cfg.output_dir) / "phase2_reports.jsonl");
    for (int k = 0; k < n; ++k) {
        const auto& r = results[static_cast<std::size_t>(k)];
        save_checkpoint(checkpoint_path(cfg, "phase2", k), r.model, k);
        reports << to_json(r.report).dump() << '\n';
    }
    if (!reports) throw IoError("failed writing phase2_reports.jsonl");
    update_manifest(cfg, "phase2", false);
    std::cerr << "phase2: " << n << " clients fine-tuned\n";
}

void cmd_evaluate(const ExperimentConfig& cfg, const std::optional<std::string>& stage_arg) {
    require_manifest(cfg);
    const PreparedData data = load_partition(cfg);
    const int n = static_cast<int>(data.clients.size());
    std::string stage;
    if (stage_arg) {
        stage = *stage_arg;
        if (stage != "phase1" && stage != "phase2") throw ConfigError("--stage must be phase1 or phase2");
    } else {
        stage = fs::exists(checkpoint_path(cfg, "phase2", 0)) ? "phase2" : "phase1";
    }

    std::vector<DenseNet> nets;
    for (int k = 0; k < n; ++k) {
        const fs::path path = checkpoint_path(cfg, stage, k);
        if (!fs::exists(path)) throw IoError(path.string() + " not found; run `lorica " + stage + "` first");
        nets.push_back(stage == "phase1" ? load_client_checkpoint(path).effective() : load_dense_checkpoint(path));
    }
    const ByzantineSpec byz = resolve_phase1(cfg, n, cfg.dataset.num_classes).byzantine;

    std::vector<Accuracy> acc(static_cast<std::size_t>(n));
    parallel_for(static_cast<std::size_t>(n), cfg.threads, [&](std::size_t k) {
        acc[k] = evaluate(nets[k], data.clients[k].test, cfg.attack, derive_seed(cfg.seed, {kEvaluate, k}));
    });

    json clients = json::array();
    double ba = 0.0, ar = 0.0, honest_ba = 0.0, honest_ar = 0.0;
    int honest = 0;
    for (int k = 0; k < n; ++k) {
        const auto& a = acc[static_cast<std::size_t>(k)];
        const bool malicious = byz.is_malicious(k);
        clients.push_back({{"client_id", k}, {"malicious", malicious}, {"ba", a.ba}, {"ar", a.ar}});
        ba += a.ba;
        ar += a.ar;
        if (!malicious) {
            honest_ba += a.ba;
            honest_ar += a.ar;
            ++honest;
        }
    }
    const json record = {{"schema", "lorica.metrics.v1"},
                         {"stage", stage},
                         {"config_hash", config_hash(cfg)},
                         {"attack",
                          {{"epsilon", cfg.attack.epsilon},
                           {"step_size", cfg.attack.step_size},
                           {"iterations", cfg.attack.iterations}}},
                         {"clients", clients},
                         {"mean_ba", ba / n},
                         {"mean_ar", ar / n},
                         {"honest_mean_ba", honest > 0 ? honest_ba / honest : 0.0},
                         {"honest_mean_ar", honest > 0 ? honest_ar / honest : 0.0}};
    write_json(fs::path(cfg.output_dir) / ("metrics_" + stage + ".json"), record);
    update_manifest(cfg, "evaluate", false);
    std::cerr << "evaluate (" << stage << "): mean BA " << ba / n << ", mean AR " << ar / n << '\n';
}

void cmd_report(const std::vector<fs::path>& run_dirs, const fs::path& out_dir) {
    if (run_dirs.empty()) throw ConfigError("report needs at least one run directory");
    ensure_dir(out_dir);

    Table accuracy("round"), losses("round"), grad("round"), clients("client"), final_metrics("client");
    std::map<long, std::string> client_rows;
    auto exclusions = open_out(out_dir / "exclusions.tsv");
    exclusions << "run\tround\tskipped\tnum_excluded\texcluded\n";
    auto gates = open_out(out_dir / "gates.tsv");
    gates << "run\tclient\tbudget\tbudget_clamped\tselected\tfinal_gates\n";

    std::set<std::string> labels;
    for (const auto& dir : run_dirs) {
        const fs::path rounds_path = dir / "rounds.jsonl";
        const fs::path phase2_path = dir / "phase2_reports.jsonl";
        const bool has_metrics = fs::exists(dir / "metrics_phase1.json") || fs::exists(dir / "metrics_phase2.json");
        if (!fs::is_directory(dir)) throw IoError(dir.string() + " is not a directory");
        if (!fs::exists(rounds_path) && !fs::exists(phase2_path) && !has_metrics) {
            throw IoError(dir.string() + " holds no run outputs");
        }
        std::string label = dir.filename().empty() ? dir.parent_path().filename().string() : dir.filename().string();
        for (int i = 2; labels.count(label); ++i) label = dir.filename().string() + "#" + std::to_string(i);
        labels.insert(label);

        if (fs::exists(rounds_path)) {
            const auto records = read_jsonl(rounds_path);
            double running = 0.0;
            for (std::size_t t = 0; t < records.size(); ++t) {
                const json& r = records[t];
                const long round = r.at("round").get<long>();
                double ba = 0.0, ar = 0.0, total = 0.0, adv = 0.0, smooth = 0.0, ref = 0.0;
                const auto& cs = r.at("clients");
                for (const auto& c : cs) {
                    ba += c.at("ba").get<double>();
                    ar += c.at("ar").get<double>();
                    total += c.at("loss_total").get<double>();
                    adv += c.at("loss_adversarial").get<double>();
                    smooth += c.at("loss_smoothness").get<double>();
                    ref += c.at("loss_reference").get<double>();
                }
                const double m = cs.empty() ? 1.0 : static_cast<double>(cs.size());
                accuracy.set(round, label + ".ba", ba / m);
                accuracy.set(round, label + ".ar", ar / m);
                losses.set(round, label + ".total", total / m);
                losses.set(round, label + ".adversarial", adv / m);
                losses.set(round, label + ".smoothness", smooth / m);
                losses.set(round, label + ".reference", ref / m);
                const double g = r.at("grad_norm_sq").get<double>();
                running += (g - running) / static_cast<double>(t + 1);
                grad.set(round, label + ".grad_norm_sq", g);
                grad.set(round, label + ".running_average", running);
                const auto& excluded = r.at("aggregation").at("excluded");
                exclusions << label << '\t' << round << '\t' << (r.at("skipped").get<bool>() ? 1 : 0) << '\t'
                           << excluded.size() << '\t' << join_ints(excluded) << '\n';
                if (t + 1 == records.size()) {
                    for (const auto& c : cs) {
                        const long id = c.at("client_id").get<long>();
                        clients.set(id, label + ".ba", c.at("ba").get<double>());
                        clients.set(id, label + ".ar", c.at("ar").get<double>());
                    }
                }
            }
        }
        if (fs::exists(phase2_path)) {
            for (const auto& r : read_jsonl(phase2_path)) {
                gates << label << '\t' << r.at("client_id").get<long>() << '\t' << r.at("budget").get<long>() << '\t'
                      << (r.at("budget_clamped").get<bool>() ? 1 : 0) << '\t' << join_ints(r.at("selected")) << '\t'
                      << join_numbers(r.at("final_gates")) << '\n';
            }
        }
        for (const std::string stage : {"phase1", "phase2"}) {
            const fs::path path = dir / ("metrics_" + stage + ".json");
            if (!fs::exists(path)) continue;
            const json m = read_json(path);
            for (const auto& c : m.at("clients")) {
                const long id = c.at("client_id").get<long>();
                final_metrics.set(id, label + "." + stage + ".ba", c.at("ba").get<double>());
                final_metrics.set(id, label + "." + stage + ".ar", c.at("ar").get<double>());
            }
            constexpr long kMeanRow = 1L << 40;
            final_metrics.set(kMeanRow, label + "." + stage + ".ba", m.at("mean_ba").get<double>());
            final_metrics.set(kMeanRow, label + "." + stage + ".ar", m.at("mean_ar").get<double>());
            client_rows[kMeanRow] = "mean";
        }
    }
    accuracy.write(out_dir / "accuracy_by_round.tsv");
    losses.write(out_dir / "loss_by_round.tsv");
    grad.write(out_dir / "grad_norm_by_round.tsv");
    clients.write(out_dir / "client_accuracy.tsv");
    final_metrics.write(out_dir / "metrics.tsv", client_rows);
    if (!exclusions || !gates) throw IoError("failed writing report tables");
    std::cerr << "report: " << run_dirs.size() << " run(s) summarised in " << out_dir.string() << '\n';
}

}  // namespace lorica::cli
