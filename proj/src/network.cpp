#include "wpfs/network.hpp"

#include <algorithm>
#include <cmath>

#include "wpfs/errors.hpp"

namespace wpfs {

Mlp::Mlp(MlpConfig cfg, std::string prefix) : cfg_(std::move(cfg)), prefix_(std::move(prefix)) {
    if (cfg_.input_width == 0 || cfg_.output_width == 0)
        throw ValueError("Mlp: zero input or output width");
    for (const auto& l : cfg_.hidden) {
        if (l.width == 0) throw ValueError("Mlp: zero hidden width");
        if (l.dropout < 0.0 || l.dropout >= 1.0)
            throw ValueError("Mlp: dropout must lie in [0, 1)");
    }
}

void Mlp::register_params(ParameterStore& store) {
    if (registered_) throw UsageError("Mlp::register_params called twice for " + prefix_);
    registered_ = true;
    std::size_t in = cfg_.input_width;
    for (std::size_t l = 0; l < cfg_.hidden.size(); ++l) {
        const auto& layer = cfg_.hidden[l];
        const std::string base = prefix_ + ".L" + std::to_string(l);
        weight_slots_.push_back(store.add(base + ".w", Matrix(in, layer.width)));
        bias_slots_.push_back(store.add(base + ".b", Matrix(1, layer.width)));
        if (layer.batch_norm) {
            gamma_slots_.push_back(store.add(base + ".bn.gamma", Matrix(1, layer.width, 1.0)));
            beta_slots_.push_back(store.add(base + ".bn.beta", Matrix(1, layer.width, 0.0)));
            bn_.push_back(BnBuffers{Matrix(1, layer.width, 0.0), Matrix(1, layer.width, 1.0)});
        } else {
            gamma_slots_.push_back(static_cast<std::size_t>(-1));
            beta_slots_.push_back(static_cast<std::size_t>(-1));
            bn_.push_back(BnBuffers{});
        }
        in = layer.width;
    }
    weight_slots_.push_back(store.add(prefix_ + ".head.w", Matrix(in, cfg_.output_width)));
    bias_slots_.push_back(store.add(prefix_ + ".head.b", Matrix(1, cfg_.output_width)));
}

void Mlp::init_params(ParameterStore& store, Rng& rng) {
    if (!registered_) throw UsageError("Mlp::init_params before register_params");
    std::size_t in = cfg_.input_width;
    for (std::size_t l = 0; l <= cfg_.hidden.size(); ++l) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        Matrix& w = store.slot(weight_slots_[l]).value;
        for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-bound, bound);
        Matrix& b = store.slot(bias_slots_[l]).value;
        for (std::size_t i = 0; i < b.size(); ++i) b[i] = rng.uniform(-bound, bound);
        if (l < cfg_.hidden.size()) in = cfg_.hidden[l].width;
    }
}

Tape::Var batch_norm(Tape& tape, ParameterStore& store, std::size_t gamma_slot,
                     std::size_t beta_slot, BnBuffers& buffers, Tape::Var x, Mode mode,
                     double eps, double momentum) {
    Tape::Var gamma = tape.parameter(store, gamma_slot);
    Tape::Var beta = tape.parameter(store, beta_slot);
    if (mode == Mode::train) {
        Matrix batch_mean, batch_var;
        Tape::Var out = tape.batchnorm_train(x, gamma, beta, eps, &batch_mean, &batch_var);
        const double b = static_cast<double>(x.rows);
        const double unbias = b / (b - 1.0);
        Matrix& rm = buffers.running_mean;
        Matrix& rv = buffers.running_var;
        for (std::size_t j = 0; j < rm.size(); ++j) {
            rm[j] = (1.0 - momentum) * rm[j] + momentum * batch_mean[j];
            rv[j] = (1.0 - momentum) * rv[j] + momentum * batch_var[j] * unbias;
        }
        return out;
    }
    // eval / frozen: normalise with the running statistics; gradients still
    // flow to gamma and beta.
    return tape.batchnorm_frozen(x, gamma, beta, buffers.running_mean, buffers.running_var, eps);
}

Tape::Var Mlp::forward(Tape& tape, ParameterStore& store, Tape::Var x, Mode mode, Rng& rng) {
    if (!registered_) throw UsageError("Mlp::forward before register_params");
    if (x.cols != cfg_.input_width)
        throw ShapeError(prefix_ + ": input width " + std::to_string(x.cols) + ", expected " +
                         std::to_string(cfg_.input_width));
    Tape::Var h = x;
    for (std::size_t l = 0; l < cfg_.hidden.size(); ++l) {
        const auto& layer = cfg_.hidden[l];
        if (mode == Mode::train && layer.batch_norm && x.rows < 2)
            throw SmallBatchError(prefix_ + ": batch of size " + std::to_string(x.rows) +
                                  " cannot be batch-normalised in train mode");
        h = tape.linear(h, tape.parameter(store, weight_slots_[l]),
                        tape.parameter(store, bias_slots_[l]));
        if (layer.batch_norm) {
            h = batch_norm(tape, store, gamma_slots_[l], beta_slots_[l], bn_[l], h, mode,
                           cfg_.bn_eps, cfg_.bn_momentum);
        }
        h = tape.dropout_act(layer.act, h, mode == Mode::eval ? 0.0 : layer.dropout, &rng,
                             cfg_.leaky_slope);
    }
    h = tape.linear(h, tape.parameter(store, weight_slots_.back()),
                    tape.parameter(store, bias_slots_.back()));
    if (cfg_.output_activation) h = tape.activation(*cfg_.output_activation, h, cfg_.leaky_slope);
    return h;
}

std::size_t Mlp::param_count() const {
    std::size_t total = 0;
    std::size_t in = cfg_.input_width;
    for (const auto& layer : cfg_.hidden) {
        total += in * layer.width + layer.width;
        if (layer.batch_norm) total += 2 * layer.width;
        in = layer.width;
    }
    total += in * cfg_.output_width + cfg_.output_width;
    return total;
}

ClassWeights class_weights(const std::vector<int>& y, std::size_t class_count) {
    std::vector<std::size_t> counts(class_count, 0);
    for (int label : y) {
        if (label < 0 || static_cast<std::size_t>(label) >= class_count)
            throw ValueError("class_weights: label " + std::to_string(label) + " out of range");
        ++counts[static_cast<std::size_t>(label)];
    }
    ClassWeights cw;
    cw.w.resize(class_count);
    const double n = static_cast<double>(y.size());
    for (std::size_t c = 0; c < class_count; ++c) {
        if (counts[c] == 0)
            throw ValueError("class_weights: class " + std::to_string(c) +
                             " is absent from the labels");
        cw.w[c] = n / (static_cast<double>(class_count) * static_cast<double>(counts[c]));
    }
    return cw;
}

AdamwState::AdamwState(const ParameterStore& store, AdamwConfig cfg) : cfg_(cfg) {
    m_.reserve(store.count());
    v_.reserve(store.count());
    for (std::size_t s = 0; s < store.count(); ++s) {
        const Matrix& value = store.slot(s).value;
        m_.emplace_back(value.rows(), value.cols(), 0.0);
        v_.emplace_back(value.rows(), value.cols(), 0.0);
    }
}

void AdamwState::step(ParameterStore& store, double lr) {
    if (m_.size() != store.count()) throw UsageError("AdamwState: store changed since creation");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t s = 0; s < store.count(); ++s) {
        Matrix& theta = store.slot(s).value;
        const Matrix& g = store.slot(s).grad;
        Matrix& m = m_[s];
        Matrix& v = v_[s];
        for (std::size_t i = 0; i < theta.size(); ++i) {
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            theta[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps) + lr * cfg_.weight_decay * theta[i];
        }
    }
}

double clip_gradients(ParameterStore& store, double max_norm) {
    if (!(max_norm > 0.0)) throw ValueError("clip_gradients: max_norm must be positive");
    const double norm = store.grad_l2_norm();
    if (norm <= max_norm) return 1.0;
    const double scale = max_norm / norm;
    for (std::size_t s = 0; s < store.count(); ++s) {
        Matrix& g = store.slot(s).grad;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] *= scale;
    }
    return scale;
}

double lr_at(const ScheduleConfig& s, long epoch) {
    if (!(s.lr_start >= s.lr_end) || !(s.lr_end > 0.0))
        throw ValueError("lr_at: requires lr_start >= lr_end > 0");
    if (s.decay_epochs <= 0 || epoch >= s.decay_epochs) return s.lr_end;
    const double t = static_cast<double>(epoch) / static_cast<double>(s.decay_epochs);
    return s.lr_start + (s.lr_end - s.lr_start) * t;
}

}  // namespace wpfs
