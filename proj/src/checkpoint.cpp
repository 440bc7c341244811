#include "lorica/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "lorica/error.hpp"

namespace lorica {

namespace {

constexpr char kMagic[8] = {'L', 'O', 'R', 'I', 'C', 'A', 'C', 'K'};
constexpr std::uint32_t kKindAdapter = 1;
constexpr std::uint32_t kKindDense = 2;

class Writer {
public:
    void raw(const char* p, std::size_t n) { out_.insert(out_.end(), p, p + n); }

    template <typename T>
    void le(T value) {
        using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                                     std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint8_t>>;
        auto u = std::bit_cast<U>(value);
        for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
    }

    void matrix(const Matrix& m) {
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j) le(m(i, j));
    }

    std::vector<std::uint8_t> take() { return std::move(out_); }

private:
    std::vector<std::uint8_t> out_;
};

class Reader {
public:
    explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) throw IoError("checkpoint truncated");
    }

    template <typename T>
    T le() {
        using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                                     std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint8_t>>;
        need(sizeof(U));
        U u = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) u |= static_cast<U>(static_cast<U>(bytes_[pos_ + i]) << (8 * i));
        pos_ += sizeof(U);
        return std::bit_cast<T>(u);
    }

    Matrix matrix(Eigen::Index rows, Eigen::Index cols) {
        Matrix m(rows, cols);
        for (Eigen::Index i = 0; i < rows; ++i)
            for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = le<double>();
        return m;
    }

    void magic() {
        need(sizeof kMagic);
        if (std::memcmp(bytes_.data() + pos_, kMagic, sizeof kMagic) != 0) throw IoError("not a checkpoint (bad magic)");
        pos_ += sizeof kMagic;
    }

    bool done() const { return pos_ == bytes_.size(); }

private:
    const std::vector<std::uint8_t>& bytes_;
    std::size_t pos_ = 0;
};

struct Header {
    std::uint32_t kind = 0;
    std::int64_t client_id = 0;
    std::vector<std::uint32_t> dims;
    std::uint32_t rank = 0;
    std::uint32_t num_classes = 0;
    std::vector<Activation> activations;
};

void write_header(Writer& w, const Header& h) {
    w.raw(kMagic, sizeof kMagic);
    w.le(kCheckpointVersion);
    w.le(h.kind);
    w.le(h.client_id);
    w.le(static_cast<std::uint32_t>(h.activations.size()));
    for (auto d : h.dims) w.le(d);
    w.le(h.rank);
    w.le(h.num_classes);
    for (auto a : h.activations) w.le(static_cast<std::uint8_t>(a == Activation::relu ? 0 : 1));
}

Header read_header(Reader& r) {
    r.magic();
    const auto version = r.le<std::uint32_t>();
    if (version != kCheckpointVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
    Header h;
    h.kind = r.le<std::uint32_t>();
    h.client_id = r.le<std::int64_t>();
    const auto layers = r.le<std::uint32_t>();
    if (layers > 4096) throw IoError("implausible layer count in checkpoint");
    for (std::uint32_t i = 0; i <= layers; ++i) h.dims.push_back(r.le<std::uint32_t>());
    h.rank = r.le<std::uint32_t>();
    h.num_classes = r.le<std::uint32_t>();
    for (std::uint32_t i = 0; i < layers; ++i) {
        const auto a = r.le<std::uint8_t>();
        if (a > 1) throw IoError("unknown activation code in checkpoint");
        h.activations.push_back(a == 0 ? Activation::relu : Activation::identity);
    }
    return h;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write on " + path.string());
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const ClientModel& model) {
    Header h;
    h.kind = kKindAdapter;
    h.client_id = model.client_id;
    h.dims.push_back(static_cast<std::uint32_t>(model.input_dim()));
    for (const auto& layer : model.backbone) {
        h.dims.push_back(static_cast<std::uint32_t>(layer.out_dim()));
        h.activations.push_back(layer.activation);
    }
    h.rank = model.backbone.empty() ? 0 : static_cast<std::uint32_t>(model.backbone.front().rank());
    for (const auto& layer : model.backbone) {
        if (static_cast<std::uint32_t>(layer.rank()) != h.rank) throw DimensionError(-1, "checkpoint requires uniform rank");
    }
    h.num_classes = static_cast<std::uint32_t>(model.num_classes);
    Writer w;
    write_header(w, h);
    for (const auto& layer : model.backbone) {
        w.matrix(layer.w_pre);
        w.matrix(layer.a_fixed);
        w.matrix(layer.b_train);
    }
    w.matrix(model.classifier);
    return w.take();
}

std::vector<std::uint8_t> encode_checkpoint(const DenseNet& net, std::int64_t client_id) {
    Header h;
    h.kind = kKindDense;
    h.client_id = client_id;
    h.dims.push_back(static_cast<std::uint32_t>(net.input_dim()));
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
        h.dims.push_back(static_cast<std::uint32_t>(net.weights[l].cols()));
        h.activations.push_back(net.activations[l]);
    }
    h.num_classes = static_cast<std::uint32_t>(net.num_classes());
    Writer w;
    write_header(w, h);
    for (const auto& m : net.weights) w.matrix(m);
    w.matrix(net.classifier);
    return w.take();
}

ClientModel decode_client_checkpoint(const std::vector<std::uint8_t>& bytes) {
    Reader r(bytes);
    const Header h = read_header(r);
    if (h.kind != kKindAdapter) throw IoError("checkpoint does not hold an adapter model");
    ClientModel m;
    m.client_id = static_cast<int>(h.client_id);
    m.num_classes = static_cast<int>(h.num_classes);
    for (std::size_t l = 0; l < h.activations.size(); ++l) {
        AdapterLayer layer;
        layer.activation = h.activations[l];
        layer.w_pre = r.matrix(h.dims[l], h.dims[l + 1]);
        layer.a_fixed = r.matrix(h.dims[l], h.rank);
        layer.b_train = r.matrix(h.rank, h.dims[l + 1]);
        m.backbone.push_back(std::move(layer));
    }
    m.classifier = r.matrix(h.dims.back(), h.num_classes);
    if (!r.done()) throw IoError("trailing bytes after checkpoint payload");
    return m;
}

DenseNet decode_dense_checkpoint(const std::vector<std::uint8_t>& bytes) {
    Reader r(bytes);
    const Header h = read_header(r);
    if (h.kind != kKindDense) throw IoError("checkpoint does not hold a dense model");
    DenseNet net;
    net.activations = h.activations;
    for (std::size_t l = 0; l < h.activations.size(); ++l) net.weights.push_back(r.matrix(h.dims[l], h.dims[l + 1]));
    net.classifier = r.matrix(h.dims.back(), h.num_classes);
    if (!r.done()) throw IoError("trailing bytes after checkpoint payload");
    return net;
}

void save_checkpoint(const std::filesystem::path& path, const ClientModel& model) {
    write_file(path, encode_checkpoint(model));
}

void save_checkpoint(const std::filesystem::path& path, const DenseNet& net, std::int64_t client_id) {
    write_file(path, encode_checkpoint(net, client_id));
}

ClientModel load_client_checkpoint(const std::filesystem::path& path) {
    return decode_client_checkpoint(read_file(path));
}

DenseNet load_dense_checkpoint(const std::filesystem::path& path) {
    return decode_dense_checkpoint(read_file(path));
}

std::uint32_t checkpoint_kind(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    Reader r(bytes);
    return read_header(r).kind;
}

}  // namespace lorica
