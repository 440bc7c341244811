#include "lorica/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "lorica/error.hpp"
#include "lorica/random.hpp"

namespace lorica {

namespace {

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::optional<double> parse_real(const std::string& raw) {
    const std::string s = trim(raw);
    if (s.empty()) return std::nullopt;
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

std::optional<int> parse_label(const std::string& raw) {
    const std::string s = trim(raw);
    int v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

}  // namespace

void validate(const Dataset& ds) {
    if (static_cast<std::size_t>(ds.features.rows()) != ds.labels.size()) {
        throw RuntimeError("dataset '" + ds.name + "': feature rows and labels differ in length");
    }
    for (std::size_t i = 0; i < ds.labels.size(); ++i) {
        if (ds.labels[i] < 0 || ds.labels[i] >= ds.num_classes) {
            throw RuntimeError("dataset '" + ds.name + "': label " + std::to_string(ds.labels[i]) +
                               " at row " + std::to_string(i) + " outside [0, " +
                               std::to_string(ds.num_classes) + ")");
        }
    }
}

Matrix blob_means(int num_classes, int dim, double radius) {
    Matrix means = Matrix::Constant(num_classes, dim, 0.5);
    if (dim >= num_classes) {
        const double scale = radius / std::sqrt(1.0 - 1.0 / num_classes);
        for (int c = 0; c < num_classes; ++c) {
            for (int j = 0; j < num_classes; ++j) means(c, j) += scale * ((c == j ? 1.0 : 0.0) - 1.0 / num_classes);
        }
    } else if (dim >= 2) {
        for (int c = 0; c < num_classes; ++c) {
            const double angle = 2.0 * std::numbers::pi * c / num_classes;
            means(c, 0) += radius * std::cos(angle);
            means(c, 1) += radius * std::sin(angle);
        }
    } else {
        for (int c = 0; c < num_classes; ++c) means(c, 0) += radius * (2.0 * c / (num_classes - 1) - 1.0);
    }
    return means;
}

Dataset make_blobs(int num_classes, int per_class, int dim, double spread, std::uint64_t seed,
                   double radius) {
    if (num_classes < 2 || per_class < 1 || dim < 1) throw ConfigError("make_blobs: need C >= 2, n >= 1, dim >= 1");
    const Matrix means = blob_means(num_classes, dim, radius);
    Dataset ds;
    ds.name = "blobs";
    ds.num_classes = num_classes;
    ds.features.resize(static_cast<Eigen::Index>(num_classes) * per_class, dim);
    ds.labels.reserve(ds.features.rows());
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::Index row = 0;
    for (int c = 0; c < num_classes; ++c) {
        for (int i = 0; i < per_class; ++i, ++row) {
            for (int j = 0; j < dim; ++j) ds.features(row, j) = means(c, j) + spread * normal(rng);
            ds.labels.push_back(c);
        }
    }
    return ds;
}

Dataset load_csv(const std::filesystem::path& path, std::optional<int> num_classes) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<std::vector<double>> rows;
    std::vector<int> labels;
    std::string line;
    std::size_t line_no = 0;
    std::size_t width = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto fields = split_fields(line);
        std::vector<double> values;
        bool numeric = true;
        for (std::size_t i = 0; i + 1 < fields.size() && numeric; ++i) {
            auto v = parse_real(fields[i]);
            if (!v) numeric = false;
            else values.push_back(*v);
        }
        auto label = fields.empty() ? std::nullopt : parse_label(fields.back());
        if (!numeric || !label) {
            if (rows.empty() && width == 0) {  // header
                width = fields.size();
                continue;
            }
            throw IoError(path.string() + ":" + std::to_string(line_no) + ": malformed row");
        }
        if (fields.size() < 2) throw IoError(path.string() + ":" + std::to_string(line_no) + ": need features and a label");
        if (width == 0) width = fields.size();
        if (fields.size() != width) {
            throw IoError(path.string() + ":" + std::to_string(line_no) + ": expected " + std::to_string(width) +
                          " fields, got " + std::to_string(fields.size()));
        }
        if (*label < 0) throw IoError(path.string() + ":" + std::to_string(line_no) + ": negative label");
        if (num_classes && *label >= *num_classes) {
            throw IoError(path.string() + ":" + std::to_string(line_no) + ": label " + std::to_string(*label) +
                          " >= number of classes " + std::to_string(*num_classes));
        }
        rows.push_back(std::move(values));
        labels.push_back(*label);
    }
    if (rows.empty()) throw IoError(path.string() + ": no data rows");
    Dataset ds;
    ds.name = path.stem().string();
    ds.num_classes = num_classes ? *num_classes : *std::max_element(labels.begin(), labels.end()) + 1;
    ds.features.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(width - 1));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j + 1 < width; ++j) ds.features(i, j) = rows[i][j];
    ds.labels = std::move(labels);
    return ds;
}

void write_csv(const std::filesystem::path& path, const Dataset& ds, bool header) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    if (header) {
        for (int j = 0; j < ds.dim(); ++j) out << 'x' << j << ',';
        out << "label\n";
    }
    char buf[64];
    for (std::size_t i = 0; i < ds.size(); ++i) {
        for (int j = 0; j < ds.dim(); ++j) {
            const auto res = std::to_chars(buf, buf + sizeof buf, ds.features(static_cast<Eigen::Index>(i), j));
            out.write(buf, res.ptr - buf);
            out << ',';
        }
        out << ds.labels[i] << '\n';
    }
    if (!out) throw IoError("short write on " + path.string());
}

Dataset subset(const Dataset& ds, std::span<const std::size_t> indices) {
    Dataset out;
    out.name = ds.name;
    out.num_classes = ds.num_classes;
    out.features.resize(static_cast<Eigen::Index>(indices.size()), ds.features.cols());
    out.labels.reserve(indices.size());
    for (std::size_t r = 0; r < indices.size(); ++r) {
        out.features.row(static_cast<Eigen::Index>(r)) = ds.features.row(static_cast<Eigen::Index>(indices[r]));
        out.labels.push_back(ds.labels[indices[r]]);
    }
    return out;
}

std::vector<std::size_t> class_counts(const Dataset& ds) {
    std::vector<std::size_t> counts(static_cast<std::size_t>(std::max(ds.num_classes, 0)), 0);
    for (int y : ds.labels) ++counts.at(static_cast<std::size_t>(y));
    return counts;
}

std::vector<Dataset> dirichlet_partition(const Dataset& ds, const PartitionSpec& spec) {
    if (spec.num_clients < 1) throw ConfigError("partition: num_clients must be >= 1");
    if (!(spec.dirichlet_alpha > 0.0)) throw ConfigError("partition: dirichlet_alpha must be > 0");
    if (spec.num_clients == 1) return {ds};

    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(ds.num_classes));
    for (std::size_t i = 0; i < ds.size(); ++i) by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        if (by_class[c].empty()) throw RuntimeError("partition: class " + std::to_string(c) + " has no samples");
    }

    const auto n_clients = static_cast<std::size_t>(spec.num_clients);
    Rng rng(derive_seed(spec.seed, {0x9a27}));
    std::gamma_distribution<double> gamma(spec.dirichlet_alpha, 1.0);
    for (int attempt = 0; attempt < kMaxPartitionRetries; ++attempt) {
        std::vector<std::vector<std::size_t>> assigned(n_clients);
        for (auto members : by_class) {
            std::shuffle(members.begin(), members.end(), rng);
            std::vector<double> p(n_clients);
            double total = 0.0;
            for (auto& v : p) total += (v = gamma(rng));
            std::size_t start = 0;
            double cumulative = 0.0;
            for (std::size_t k = 0; k < n_clients; ++k) {
                cumulative += p[k] / total;
                std::size_t end = k + 1 == n_clients
                                      ? members.size()
                                      : std::min(members.size(), static_cast<std::size_t>(std::floor(
                                                                     cumulative * static_cast<double>(members.size()))));
                end = std::max(end, start);
                assigned[k].insert(assigned[k].end(), members.begin() + static_cast<std::ptrdiff_t>(start),
                                   members.begin() + static_cast<std::ptrdiff_t>(end));
                start = end;
            }
        }
        if (std::none_of(assigned.begin(), assigned.end(), [](const auto& a) { return a.empty(); })) {
            std::vector<Dataset> shards;
            shards.reserve(n_clients);
            for (std::size_t k = 0; k < n_clients; ++k) {
                std::sort(assigned[k].begin(), assigned[k].end());
                Dataset shard = subset(ds, assigned[k]);
                shard.name = ds.name + "/client_" + std::to_string(k);
                shards.push_back(std::move(shard));
            }
            return shards;
        }
    }
    throw RuntimeError("partition: a client stayed empty after " + std::to_string(kMaxPartitionRetries) +
                       " draws; use a larger dataset or a larger dirichlet_alpha");
}

std::vector<Dataset> iid_partition(const Dataset& ds, int num_clients, std::uint64_t seed) {
    if (num_clients < 1) throw ConfigError("partition: num_clients must be >= 1");
    if (ds.size() < static_cast<std::size_t>(num_clients)) throw RuntimeError("partition: fewer samples than clients");
    const auto n_clients = static_cast<std::size_t>(num_clients);
    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(ds.num_classes));
    for (std::size_t i = 0; i < ds.size(); ++i) by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
    Rng rng(derive_seed(seed, {0x11d}));
    std::vector<std::vector<std::size_t>> assigned(n_clients);
    std::size_t next = 0;
    for (auto& members : by_class) {
        std::shuffle(members.begin(), members.end(), rng);
        for (std::size_t idx : members) assigned[next++ % n_clients].push_back(idx);
    }
    std::vector<Dataset> shards;
    shards.reserve(n_clients);
    for (std::size_t k = 0; k < n_clients; ++k) {
        std::sort(assigned[k].begin(), assigned[k].end());
        Dataset shard = subset(ds, assigned[k]);
        shard.name = ds.name + "/client_" + std::to_string(k);
        shards.push_back(std::move(shard));
    }
    return shards;
}

std::pair<Dataset, Dataset> stratified_split(const Dataset& ds, double held_out_fraction, std::uint64_t seed) {
    if (held_out_fraction < 0.0 || held_out_fraction >= 1.0) throw ConfigError("split fraction must be in [0, 1)");
    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(ds.num_classes));
    for (std::size_t i = 0; i < ds.size(); ++i) by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
    Rng rng(seed);
    std::vector<std::size_t> kept;
    std::vector<std::size_t> held;
    for (auto& members : by_class) {
        std::shuffle(members.begin(), members.end(), rng);
        const auto n_held = static_cast<std::size_t>(std::lround(held_out_fraction * static_cast<double>(members.size())));
        held.insert(held.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_held));
        kept.insert(kept.end(), members.begin() + static_cast<std::ptrdiff_t>(n_held), members.end());
    }
    std::sort(kept.begin(), kept.end());
    std::sort(held.begin(), held.end());
    return {subset(ds, kept), subset(ds, held)};
}

Dataset concat(std::span<const Dataset> parts, std::string name) {
    Dataset out;
    out.name = std::move(name);
    if (parts.empty()) return out;
    out.num_classes = parts.front().num_classes;
    Eigen::Index rows = 0;
    for (const auto& p : parts) {
        if (p.dim() != parts.front().dim() || p.num_classes != out.num_classes) {
            throw DimensionError(-1, "concat: datasets disagree on dimension or class count");
        }
        rows += p.features.rows();
    }
    out.features.resize(rows, parts.front().dim());
    Eigen::Index r = 0;
    for (const auto& p : parts) {
        out.features.middleRows(r, p.features.rows()) = p.features;
        r += p.features.rows();
        out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
    }
    return out;
}

nlohmann::json partition_manifest(std::span<const Dataset> shards) {
    nlohmann::json clients = nlohmann::json::object();
    for (std::size_t k = 0; k < shards.size(); ++k) clients[std::to_string(k)] = class_counts(shards[k]);
    return {{"num_classes", shards.empty() ? 0 : shards.front().num_classes}, {"clients", clients}};
}

}  // namespace lorica
