#include "wpfs/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>

#include "wpfs/errors.hpp"

namespace wpfs {

namespace {

constexpr char kMagic[8] = {'W', 'P', 'F', 'S', 'M', 'D', 'L', '1'};
constexpr std::uint32_t kFormatVersion = 1;

std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

template <typename T>
void write_pod(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_pod(std::istream& in, T& v) {
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw InputError("model file truncated");
}

void write_matrix(std::ostream& out, const Matrix& m) {
    write_pod(out, static_cast<std::uint64_t>(m.rows()));
    write_pod(out, static_cast<std::uint64_t>(m.cols()));
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(m.size() * sizeof(double)));
}

Matrix read_matrix(std::istream& in) {
    std::uint64_t rows = 0, cols = 0;
    read_pod(in, rows);
    read_pod(in, cols);
    Matrix m = Matrix::uninitialized(rows, cols);
    in.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!in) throw InputError("model file truncated inside a matrix block");
    return m;
}

MlpConfig aux_config(const WpfsArch& arch, std::size_t out_width, ActKind out_act) {
    MlpConfig cfg;
    cfg.input_width = arch.embed_size;
    for (std::size_t w : arch.aux_hidden)
        cfg.hidden.push_back(LayerSpec{w, true, arch.dropout, ActKind::leaky_relu});
    cfg.output_width = out_width;
    cfg.output_activation = out_act;
    cfg.leaky_slope = arch.leaky_slope;
    cfg.bn_eps = arch.bn_eps;
    cfg.bn_momentum = arch.bn_momentum;
    return cfg;
}

MlpConfig tail_config(const WpfsArch& arch) {
    MlpConfig cfg;
    cfg.input_width = arch.first_hidden;
    for (std::size_t i = 1; i < arch.classifier_tail.size(); ++i)
        cfg.hidden.push_back(
            LayerSpec{arch.classifier_tail[i], true, arch.dropout, ActKind::leaky_relu});
    cfg.output_width = arch.class_count;
    cfg.output_activation = ActKind::softmax_rows;
    cfg.leaky_slope = arch.leaky_slope;
    cfg.bn_eps = arch.bn_eps;
    cfg.bn_momentum = arch.bn_momentum;
    return cfg;
}

}  // namespace

WpfsModel::WpfsModel(WpfsArch arch, EmbeddingMatrix embedding)
    : arch_(std::move(arch)), embedding_(std::move(embedding)) {
    if (arch_.feature_count == 0 || arch_.class_count == 0)
        throw ValueError("WpfsModel: feature and class counts must be positive");
    if (arch_.classifier_tail.empty() || arch_.classifier_tail.front() != arch_.first_hidden)
        throw ValueError("WpfsModel: classifier_tail must start with the first hidden width");
    if (arch_.use_wpn || arch_.use_spn) {
        if (embedding_.e.rows() != arch_.feature_count || embedding_.e.cols() != arch_.embed_size)
            throw ShapeError("WpfsModel: embedding is " + embedding_.e.shape_str() +
                             ", expected " + std::to_string(arch_.feature_count) + "x" +
                             std::to_string(arch_.embed_size));
        embedding_.e.ensure_finite("WpfsModel embedding");
    }

    const std::size_t d = arch_.feature_count;
    const std::size_t k = arch_.first_hidden;
    if (arch_.use_wpn) {
        wpn_.emplace(aux_config(arch_, k, ActKind::tanh_fn), "wpn");
        wpn_->register_params(store_);
    }
    if (arch_.use_spn) {
        spn_.emplace(aux_config(arch_, 1, ActKind::sigmoid), "spn");
        spn_->register_params(store_);
    }
    if (!arch_.use_wpn) w1_slot_ = store_.add("clf.w1", Matrix(d, k));
    b1_slot_ = store_.add("clf.b1", Matrix(1, k));
    bn1_gamma_slot_ = store_.add("clf.bn1.gamma", Matrix(1, k, 1.0));
    bn1_beta_slot_ = store_.add("clf.bn1.beta", Matrix(1, k, 0.0));
    bn1_ = BnBuffers{Matrix(1, k, 0.0), Matrix(1, k, 1.0)};
    tail_.emplace(tail_config(arch_), "clf.tail");
    tail_->register_params(store_);
}

void WpfsModel::init_params(Rng& rng) {
    if (wpn_) wpn_->init_params(store_, rng);
    if (spn_) spn_->init_params(store_, rng);
    const double bound = 1.0 / std::sqrt(static_cast<double>(arch_.feature_count));
    if (!arch_.use_wpn) {
        Matrix& w1 = store_.slot(w1_slot_).value;
        for (std::size_t i = 0; i < w1.size(); ++i) w1[i] = rng.uniform(-bound, bound);
    }
    Matrix& b1 = store_.slot(b1_slot_).value;
    for (std::size_t i = 0; i < b1.size(); ++i) b1[i] = rng.uniform(-bound, bound);
    tail_->init_params(store_, rng);
}

WpfsModel::FirstLayer WpfsModel::first_layer(Tape& tape, Mode mode, Rng& rng) {
    FirstLayer out;
    Tape::Var e{};
    if (arch_.use_wpn || arch_.use_spn) e = tape.constant(embedding_.e);
    if (arch_.use_wpn) {
        out.weights_dk = wpn_->forward(tape, store_, e, mode, rng);
    } else {
        out.weights_dk = tape.parameter(store_, w1_slot_);
    }
    if (arch_.use_spn) {
        out.gates = spn_->forward(tape, store_, e, mode, rng);
        out.weights_dk = tape.scale_rows(out.weights_dk, *out.gates);
    }
    return out;
}

std::pair<Matrix, std::vector<double>> WpfsModel::assemble_first_layer(Mode mode, Rng& rng) {
    Tape tape(false);
    FirstLayer fl = first_layer(tape, mode, rng);
    Matrix w1 = transpose(tape.value(fl.weights_dk));  // K x D, column j = w(j) * s_j
    std::vector<double> s(arch_.feature_count, 1.0);
    if (fl.gates) {
        const Matrix& g = tape.value(*fl.gates);
        for (std::size_t j = 0; j < s.size(); ++j) s[j] = g[j];
    }
    return {std::move(w1), std::move(s)};
}

Tape::Var WpfsModel::classifier_forward(Tape& tape, Tape::Var x, const FirstLayer& first,
                                        Mode mode, Rng& rng) {
    if (x.cols != arch_.feature_count)
        throw ShapeError("wpfs_forward: input width " + std::to_string(x.cols) + ", expected " +
                         std::to_string(arch_.feature_count));
    if (mode == Mode::train && x.rows < 2)
        throw SmallBatchError("wpfs_forward: batch of size " + std::to_string(x.rows) +
                              " cannot be batch-normalised in train mode");
    Tape::Var h = tape.linear(x, first.weights_dk, tape.parameter(store_, b1_slot_));
    h = batch_norm(tape, store_, bn1_gamma_slot_, bn1_beta_slot_, bn1_, h, mode, arch_.bn_eps,
                   arch_.bn_momentum);
    h = tape.dropout_act(ActKind::leaky_relu, h, mode == Mode::eval ? 0.0 : arch_.dropout, &rng,
                         arch_.leaky_slope);
    return tail_->forward(tape, store_, h, mode, rng);
}

Tape::Var WpfsModel::forward(Tape& tape, Tape::Var x, Mode mode, Rng& rng) {
    FirstLayer fl = first_layer(tape, mode, rng);
    return classifier_forward(tape, x, fl, mode, rng);
}

Matrix WpfsModel::forward_values(const Matrix& x, Mode mode, Rng& rng) {
    Tape tape(false);
    Tape::Var xv = tape.constant(x);
    Tape::Var probs = forward(tape, xv, mode, rng);
    return tape.value(probs);
}

Tape::Var WpfsModel::loss(Tape& tape, Tape::Var probs, const FirstLayer& first,
                          const std::vector<int>& labels, const ClassWeights& weights,
                          double lambda) {
    if (lambda < 0.0) throw ValueError("loss: lambda must be non-negative");
    Tape::Var ce = tape.weighted_ce(probs, labels, weights.w);
    if (arch_.use_spn && lambda > 0.0)
        return tape.add(ce, tape.scale(tape.sum(*first.gates), lambda));
    return ce;
}

ImportanceVector WpfsModel::feature_importance(double threshold) {
    ImportanceVector out;
    out.threshold = threshold;
    if (!arch_.use_spn) {
        out.available = false;
        out.s.assign(arch_.feature_count, 1.0);
        for (std::size_t j = 0; j < arch_.feature_count; ++j)
            if (out.s[j] > threshold) out.selected.push_back(j);
        return out;
    }
    Tape tape(false);
    Rng dummy(0);
    Tape::Var e = tape.constant(embedding_.e);
    Tape::Var s = spn_->forward(tape, store_, e, Mode::eval, dummy);
    const Matrix& sv = tape.value(s);
    out.s.resize(arch_.feature_count);
    for (std::size_t j = 0; j < arch_.feature_count; ++j) {
        out.s[j] = sv[j];
        if (sv[j] > threshold) out.selected.push_back(j);
    }
    return out;
}

ParameterCounts WpfsModel::parameter_counts() const {
    ParameterCounts pc;
    const std::size_t d = arch_.feature_count;
    const std::size_t k = arch_.first_hidden;
    pc.direct_first_layer = k * d;
    pc.wpfs_total = store_.parameter_count();
    pc.direct_total = k * d            // first-layer weights
                      + k              // first-layer bias
                      + 2 * k          // first-layer batch-norm scale/shift
                      + tail_->param_count();
    pc.reduction = 1.0 - static_cast<double>(pc.wpfs_total) / static_cast<double>(pc.direct_total);
    return pc;
}

std::vector<BnBuffers*> WpfsModel::all_bn_buffers() {
    std::vector<BnBuffers*> out;
    if (wpn_)
        for (auto& b : wpn_->bn_buffers())
            if (b.running_mean.size()) out.push_back(&b);
    if (spn_)
        for (auto& b : spn_->bn_buffers())
            if (b.running_mean.size()) out.push_back(&b);
    out.push_back(&bn1_);
    for (auto& b : tail_->bn_buffers())
        if (b.running_mean.size()) out.push_back(&b);
    return out;
}

std::vector<const BnBuffers*> WpfsModel::all_bn_buffers() const {
    auto mutable_list = const_cast<WpfsModel*>(this)->all_bn_buffers();
    return {mutable_list.begin(), mutable_list.end()};
}

WpfsModel::Snapshot WpfsModel::snapshot() const {
    Snapshot snap;
    snap.values = store_.snapshot_values();
    for (const BnBuffers* b : all_bn_buffers()) {
        snap.bn_stats.push_back(b->running_mean);
        snap.bn_stats.push_back(b->running_var);
    }
    return snap;
}

void WpfsModel::restore(const Snapshot& snap) {
    store_.restore_values(snap.values);
    auto buffers = all_bn_buffers();
    if (snap.bn_stats.size() != buffers.size() * 2)
        throw UsageError("WpfsModel::restore: snapshot does not match this model");
    for (std::size_t i = 0; i < buffers.size(); ++i) {
        buffers[i]->running_mean = snap.bn_stats[2 * i];
        buffers[i]->running_var = snap.bn_stats[2 * i + 1];
    }
}

std::string WpfsModel::config_digest_input() const {
    std::string s = "D=" + std::to_string(arch_.feature_count) +
                    ";C=" + std::to_string(arch_.class_count) +
                    ";M=" + std::to_string(arch_.embed_size) +
                    ";K=" + std::to_string(arch_.first_hidden) + ";tail=";
    for (std::size_t w : arch_.classifier_tail) s += std::to_string(w) + ",";
    s += ";aux=";
    for (std::size_t w : arch_.aux_hidden) s += std::to_string(w) + ",";
    s += ";wpn=" + std::to_string(arch_.use_wpn) + ";spn=" + std::to_string(arch_.use_spn) +
         ";dropout=" + std::to_string(arch_.dropout) + ";embed=" + to_string(embedding_.method);
    return s;
}

// Container layout (little-endian): magic "WPFSMDL1", u32 format version,
// u64 config digest, architecture block (sizes, widths, flags, rates),
// embedding block (method, M, D x M matrix), then the parameter slots in
// declaration order (name, rows, cols, f64 data) and the batch-norm running
// statistics in the same fixed order.
void WpfsModel::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot open '" + path + "' for writing");
    out.write(kMagic, sizeof(kMagic));
    write_pod(out, kFormatVersion);
    write_pod(out, fnv1a(config_digest_input()));

    write_pod(out, static_cast<std::uint64_t>(arch_.feature_count));
    write_pod(out, static_cast<std::uint64_t>(arch_.class_count));
    write_pod(out, static_cast<std::uint64_t>(arch_.embed_size));
    write_pod(out, static_cast<std::uint64_t>(arch_.first_hidden));
    auto write_widths = [&](const std::vector<std::size_t>& ws) {
        write_pod(out, static_cast<std::uint64_t>(ws.size()));
        for (std::size_t w : ws) write_pod(out, static_cast<std::uint64_t>(w));
    };
    write_widths(arch_.classifier_tail);
    write_widths(arch_.aux_hidden);
    write_pod(out, static_cast<std::uint8_t>(arch_.use_wpn));
    write_pod(out, static_cast<std::uint8_t>(arch_.use_spn));
    write_pod(out, arch_.dropout);
    write_pod(out, arch_.leaky_slope);
    write_pod(out, arch_.bn_eps);
    write_pod(out, arch_.bn_momentum);

    write_pod(out, static_cast<std::uint32_t>(embedding_.method));
    write_pod(out, static_cast<std::uint64_t>(embedding_.size));
    write_matrix(out, embedding_.e);

    write_pod(out, static_cast<std::uint64_t>(store_.count()));
    for (std::size_t i = 0; i < store_.count(); ++i) {
        const auto& slot = store_.slot(i);
        write_pod(out, static_cast<std::uint32_t>(slot.name.size()));
        out.write(slot.name.data(), static_cast<std::streamsize>(slot.name.size()));
        write_matrix(out, slot.value);
    }

    const auto buffers = all_bn_buffers();
    write_pod(out, static_cast<std::uint64_t>(buffers.size()));
    for (const BnBuffers* b : buffers) {
        write_matrix(out, b->running_mean);
        write_matrix(out, b->running_var);
    }
    if (!out) throw InputError("write to '" + path + "' failed");
}

WpfsModel WpfsModel::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open model file '" + path + "'");
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || !std::equal(magic, magic + 8, kMagic))
        throw InputError("'" + path + "' is not a WPFS model file");
    std::uint32_t version = 0;
    read_pod(in, version);
    if (version != kFormatVersion)
        throw InputError("unsupported model format version " + std::to_string(version));
    std::uint64_t stored_digest = 0;
    read_pod(in, stored_digest);

    WpfsArch arch;
    std::uint64_t v64 = 0;
    read_pod(in, v64);
    arch.feature_count = v64;
    read_pod(in, v64);
    arch.class_count = v64;
    read_pod(in, v64);
    arch.embed_size = v64;
    read_pod(in, v64);
    arch.first_hidden = v64;
    auto read_widths = [&]() {
        std::uint64_t n = 0;
        read_pod(in, n);
        std::vector<std::size_t> ws(n);
        for (auto& w : ws) {
            std::uint64_t x = 0;
            read_pod(in, x);
            w = x;
        }
        return ws;
    };
    arch.classifier_tail = read_widths();
    arch.aux_hidden = read_widths();
    std::uint8_t flag = 0;
    read_pod(in, flag);
    arch.use_wpn = flag != 0;
    read_pod(in, flag);
    arch.use_spn = flag != 0;
    read_pod(in, arch.dropout);
    read_pod(in, arch.leaky_slope);
    read_pod(in, arch.bn_eps);
    read_pod(in, arch.bn_momentum);

    EmbeddingMatrix embedding;
    std::uint32_t method = 0;
    read_pod(in, method);
    embedding.method = static_cast<EmbedMethod>(method);
    read_pod(in, v64);
    embedding.size = v64;
    embedding.e = read_matrix(in);

    embedding.e.ensure_finite("model file embedding");
    WpfsModel model(arch, std::move(embedding));
    if (fnv1a(model.config_digest_input()) != stored_digest)
        throw InputError("'" + path + "': config digest mismatch");

    std::uint64_t slot_count = 0;
    read_pod(in, slot_count);
    if (slot_count != model.store_.count())
        throw InputError("'" + path + "': parameter slot count mismatch");
    for (std::size_t i = 0; i < slot_count; ++i) {
        std::uint32_t len = 0;
        read_pod(in, len);
        std::string name(len, '\0');
        in.read(name.data(), len);
        if (!in) throw InputError("model file truncated in slot names");
        auto& slot = model.store_.slot(i);
        if (slot.name != name)
            throw InputError("'" + path + "': slot order mismatch at '" + name + "'");
        Matrix value = read_matrix(in);
        if (!value.same_shape(slot.value))
            throw InputError("'" + path + "': shape mismatch for slot '" + name + "'");
        value.ensure_finite("model file slot " + name);
        slot.value = std::move(value);
    }

    std::uint64_t buffer_count = 0;
    read_pod(in, buffer_count);
    auto buffers = model.all_bn_buffers();
    if (buffer_count != buffers.size())
        throw InputError("'" + path + "': batch-norm buffer count mismatch");
    for (BnBuffers* b : buffers) {
        b->running_mean = read_matrix(in);
        b->running_var = read_matrix(in);
    }
    return model;
}

double total_loss_value(const Matrix& probs, const std::vector<int>& labels,
                        const ClassWeights& weights, const std::vector<double>& s, double lambda) {
    if (lambda < 0.0) throw ValueError("total_loss: lambda must be non-negative");
    double sparsity = 0.0;
    for (double v : s) sparsity += v;
    return weighted_ce_value(probs, labels, weights.w) + lambda * sparsity;
}

}  // namespace wpfs
