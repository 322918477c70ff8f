#include "wpfs/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "wpfs/errors.hpp"

namespace wpfs {

namespace {
constexpr double kLogClamp = 1e-12;

void check_same_shape(const Matrix& a, const Matrix& b, const char* op) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(op) + ": shapes disagree, " + a.shape_str() + " vs " +
                         b.shape_str());
    }
}
}  // namespace

std::size_t ParameterStore::add(const std::string& name, Matrix value) {
    if (index_.count(name)) throw UsageError("ParameterStore: duplicate slot '" + name + "'");
    const std::size_t id = slots_.size();
    Matrix grad(value.rows(), value.cols(), 0.0);
    slots_.push_back(Slot{name, std::move(value), std::move(grad)});
    index_.emplace(name, id);
    return id;
}

bool ParameterStore::contains(const std::string& name) const { return index_.count(name) > 0; }

std::size_t ParameterStore::index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw UsageError("ParameterStore: unknown slot '" + name + "'");
    return it->second;
}

std::size_t ParameterStore::parameter_count() const {
    std::size_t n = 0;
    for (const auto& s : slots_) n += s.value.size();
    return n;
}

void ParameterStore::zero_grads() {
    for (auto& s : slots_) s.grad.fill(0.0);
}

double ParameterStore::grad_l2_norm() const {
    double acc = 0.0;
    for (const auto& s : slots_)
        for (std::size_t i = 0; i < s.grad.size(); ++i) acc += s.grad[i] * s.grad[i];
    return std::sqrt(acc);
}

std::vector<Matrix> ParameterStore::snapshot_values() const {
    std::vector<Matrix> out;
    out.reserve(slots_.size());
    for (const auto& s : slots_) out.push_back(s.value);
    return out;
}

void ParameterStore::restore_values(const std::vector<Matrix>& values) {
    if (values.size() != slots_.size())
        throw UsageError("ParameterStore::restore_values: slot count mismatch");
    for (std::size_t i = 0; i < slots_.size(); ++i) {
        check_same_shape(slots_[i].value, values[i], "restore_values");
        slots_[i].value = values[i];
    }
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

Tape::Var Tape::push(Matrix value, bool needs_grad) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = recording_ && needs_grad;
    nodes_.push_back(std::move(n));
    const auto& v = nodes_.back().value;
    return Var{static_cast<std::int32_t>(nodes_.size() - 1),
               static_cast<std::uint32_t>(v.rows()), static_cast<std::uint32_t>(v.cols())};
}

void Tape::accumulate(std::int32_t id, Matrix contribution) {
    Node& n = nodes_[id];
    if (!n.grad_set) {
        n.grad = std::move(contribution);
        n.grad_set = true;
        return;
    }
    for (std::size_t i = 0; i < n.grad.size(); ++i) n.grad[i] += contribution[i];
}

void Tape::check_valid(Var v, const char* op) const {
    if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size())
        throw UsageError(std::string(op) + ": variable does not belong to this tape");
}

Tape::Var Tape::constant(Matrix v) { return push(std::move(v), false); }

Tape::Var Tape::parameter(ParameterStore& store, std::size_t slot_index) {
    Var v = push(store.slot(slot_index).value, true);
    Node& n = nodes_[v.id];
    n.store = &store;
    n.slot = slot_index;
    return v;
}

Tape::Var Tape::parameter(ParameterStore& store, const std::string& name) {
    return parameter(store, store.index_of(name));
}

Tape::Var Tape::matmul(Var a, Var b) {
    check_valid(a, "matmul");
    check_valid(b, "matmul");
    Matrix c = wpfs::matmul(nodes_[a.id].value, nodes_[b.id].value);
    const bool ag = nodes_[a.id].needs_grad, bg = nodes_[b.id].needs_grad;
    Var out = push(std::move(c), ag || bg);
    if (nodes_[out.id].needs_grad) {
        nodes_[out.id].backprop = [a, b, ag, bg](Tape& t, Node& self) {
            if (ag) t.accumulate(a.id, matmul_nt(self.grad, t.nodes_[b.id].value));
            if (bg) t.accumulate(b.id, matmul_tn(t.nodes_[a.id].value, self.grad));
        };
    }
    return out;
}

Tape::Var Tape::linear(Var x, Var w, Var bias) {
    check_valid(x, "linear");
    check_valid(w, "linear");
    check_valid(bias, "linear");
    const Matrix& xv = nodes_[x.id].value;
    const Matrix& wv = nodes_[w.id].value;
    const Matrix& bv = nodes_[bias.id].value;
    if (bv.rows() != 1 || bv.cols() != wv.cols())
        throw ShapeError("linear: bias must be 1x" + std::to_string(wv.cols()) + ", got " +
                         bv.shape_str());
    Matrix y = wpfs::matmul(xv, wv);
    for (std::size_t i = 0; i < y.rows(); ++i) {
        double* r = y.row(i);
        for (std::size_t j = 0; j < y.cols(); ++j) r[j] += bv[j];
    }
    const bool xg = nodes_[x.id].needs_grad;
    const bool wg = nodes_[w.id].needs_grad;
    const bool bg = nodes_[bias.id].needs_grad;
    Var out = push(std::move(y), xg || wg || bg);
    if (nodes_[out.id].needs_grad) {
        nodes_[out.id].backprop = [x, w, bias, xg, wg, bg](Tape& t, Node& self) {
            if (xg) t.accumulate(x.id, matmul_nt(self.grad, t.nodes_[w.id].value));
            if (wg) t.accumulate(w.id, matmul_tn(t.nodes_[x.id].value, self.grad));
            if (bg) {
                Matrix db(1, self.grad.cols(), 0.0);
                for (std::size_t i = 0; i < self.grad.rows(); ++i) {
                    const double* g = self.grad.row(i);
                    for (std::size_t j = 0; j < self.grad.cols(); ++j) db[j] += g[j];
                }
                t.accumulate(bias.id, std::move(db));
            }
        };
    }
    return out;
}

Tape::Var Tape::add(Var a, Var b) {
    check_valid(a, "add");
    check_valid(b, "add");
    const Matrix& av = nodes_[a.id].value;
    const Matrix& bv = nodes_[b.id].value;
    check_same_shape(av, bv, "add");
    Matrix c = Matrix::uninitialized(av.rows(), av.cols());
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = av[i] + bv[i];
    const bool ag = nodes_[a.id].needs_grad, bg = nodes_[b.id].needs_grad;
    Var out = push(std::move(c), ag || bg);
    if (nodes_[out.id].needs_grad) {
        nodes_[out.id].backprop = [a, b, ag, bg](Tape& t, Node& self) {
            if (ag) t.accumulate(a.id, self.grad);
            if (bg) t.accumulate(b.id, self.grad);
        };
    }
    return out;
}


Tape::Var Tape::hadamard(Var a, Var b) {
    check_valid(a, "hadamard");
    check_valid(b, "hadamard");
    const Matrix& av = nodes_[a.id].value;
    const Matrix& bv = nodes_[b.id].value;
    check_same_shape(av, bv, "hadamard");
    Matrix c = Matrix::uninitialized(av.rows(), av.cols());
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = av[i] * bv[i];
    const bool ag = nodes_[a.id].needs_grad, bg = nodes_[b.id].needs_grad;
    Var out = push(std::move(c), ag || bg);
    if (nodes_[out.id].needs_grad) {
        nodes_[out.id].backprop = [a, b, ag, bg](Tape& t, Node& self) {
            if (ag) {
                const Matrix& bval = t.nodes_[b.id].value;
                Matrix da = Matrix::uninitialized(self.grad.rows(), self.grad.cols());
                for (std::size_t i = 0; i < da.size(); ++i) da[i] = self.grad[i] * bval[i];
                t.accumulate(a.id, std::move(da));
            }
            if (bg) {
                const Matrix& aval = t.nodes_[a.id].value;
                Matrix db = Matrix::uninitialized(self.grad.rows(), self.grad.cols());
                for (std::size_t i = 0; i < db.size(); ++i) db[i] = self.grad[i] * aval[i];
                t.accumulate(b.id, std::move(db));
            }
        };
    }
    return out;
}


Tape::Var Tape::scale_rows(Var a, Var col) {
    check_valid(a, "scale_rows");
    check_valid(col, "scale_rows");
    const Matrix& av = nodes_[a.id].value;
    const Matrix& cv = nodes_[col.id].value;
    if (cv.cols() != 1 || cv.rows() != av.rows()) {
        throw ShapeError("scale_rows: expected " + std::to_string(av.rows()) + "x1, got " +
                         cv.shape_str());
    }
    Matrix c = Matrix::uninitialized(av.rows(), av.cols());
    for (std::size_t i = 0; i < av.rows(); ++i) {
        const double s = cv[i];
        const double* src = av.row(i);
        double* dst = c.row(i);
        for (std::size_t j = 0; j < av.cols(); ++j) dst[j] = src[j] * s;
    }
    const bool ag = nodes_[a.id].needs_grad, cg = nodes_[col.id].needs_grad;
    Var out = push(std::move(c), ag || cg);
    if (nodes_[out.id].needs_grad) {
        nodes_[out.id].backprop = [a, col, ag, cg](Tape& t, Node& self) {
            const Matrix& aval = t.nodes_[a.id].value;
            const Matrix& cval = t.nodes_[col.id].value;
            if (ag) {
                Matrix da = Matrix::uninitialized(aval.rows(), aval.cols());
                for (std::size_t i = 0; i < aval.rows(); ++i) {
                    const double s = cval[i];
                    const double* g = self.grad.row(i);
                    double* dst = da.row(i);
                    for (std::size_t j = 0; j < aval.cols(); ++j) dst[j] = g[j] * s;
                }
                t.accumulate(a.id, std::move(da));
            }
            if (cg) {
                Matrix dc(aval.rows(), 1, 0.0);
                for (std::size_t i = 0; i < aval.rows(); ++i) {
                    const double* g = self.grad.row(i);
                    const double* src = aval.row(i);
                    double acc = 0.0;
                    for (std::size_t j = 0; j < aval.cols(); ++j) acc += g[j] * src[j];
                    dc[i] = acc;
                }
                t.accumulate(col.id, std::move(dc));
            }
        };
    }
    return out;
}


Tape::Var Tape::scale(Var a, double c) {
    check_valid(a, "scale");
    const Matrix& av = nodes_[a.id].value;
    Matrix out_v = Matrix::uninitialized(av.rows(), av.cols());
    for (std::size_t i = 0; i < out_v.size(); ++i) out_v[i] = av[i] * c;
    const bool ag = nodes_[a.id].needs_grad;
    Var out = push(std::move(out_v), ag);
    if (nodes_[out.id].needs_grad) {
        nodes_[out.id].backprop = [a, c](Tape& t, Node& self) {
            Matrix da = Matrix::uninitialized(self.grad.rows(), self.grad.cols());
            for (std::size_t i = 0; i < da.size(); ++i) da[i] = self.grad[i] * c;
            t.accumulate(a.id, std::move(da));
        };
    }
    return out;
}

Tape::Var Tape::activation(ActKind kind, Var x, double leaky_slope) {
    check_valid(x, "activation");
    const Matrix& xv = nodes_[x.id].value;
    if (kind == ActKind::softmax_rows && xv.cols() < 1)
        throw ShapeError("softmax_rows: needs at least one column");
    Matrix y = Matrix::uninitialized(xv.rows(), xv.cols());
    switch (kind) {
        case ActKind::leaky_relu:
            for (std::size_t i = 0; i < y.size(); ++i)
                y[i] = xv[i] > 0.0 ? xv[i] : leaky_slope * xv[i];
            break;
        case ActKind::tanh_fn:
            for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::tanh(xv[i]);
            break;
        case ActKind::sigmoid:
            for (std::size_t i = 0; i < y.size(); ++i) y[i] = 1.0 / (1.0 + std::exp(-xv[i]));
            break;
        case ActKind::softmax_rows:
            for (std::size_t i = 0; i < xv.rows(); ++i) {
                const double* src = xv.row(i);
                double* dst = y.row(i);
                double mx = src[0];
                for (std::size_t j = 1; j < xv.cols(); ++j) mx = std::max(mx, src[j]);
                double total = 0.0;
                for (std::size_t j = 0; j < xv.cols(); ++j) {
                    dst[j] = std::exp(src[j] - mx);
                    total += dst[j];
                }
                for (std::size_t j = 0; j < xv.cols(); ++j) dst[j] /= total;
            }
            break;
    }
    const bool xg = nodes_[x.id].needs_grad;
    Var out = push(std::move(y), xg);
    if (nodes_[out.id].needs_grad) {
        nodes_[out.id].backprop = [kind, x, leaky_slope, out](Tape& t, Node& self) {
            const Matrix& xval = t.nodes_[x.id].value;
            const Matrix& yval = self.value;
            Matrix dx = Matrix::uninitialized(xval.rows(), xval.cols());
            switch (kind) {
                case ActKind::leaky_relu:
                    for (std::size_t i = 0; i < dx.size(); ++i)
                        dx[i] = self.grad[i] * (xval[i] > 0.0 ? 1.0 : leaky_slope);
                    break;
                case ActKind::tanh_fn:
                    for (std::size_t i = 0; i < dx.size(); ++i)
                        dx[i] = self.grad[i] * (1.0 - yval[i] * yval[i]);
                    break;
                case ActKind::sigmoid:
                    for (std::size_t i = 0; i < dx.size(); ++i)
                        dx[i] = self.grad[i] * yval[i] * (1.0 - yval[i]);
                    break;
                case ActKind::softmax_rows:
                    for (std::size_t i = 0; i < xval.rows(); ++i) {
                        const double* g = self.grad.row(i);
                        const double* yr = yval.row(i);
                        double dot = 0.0;
                        for (std::size_t j = 0; j < xval.cols(); ++j) dot += g[j] * yr[j];
                        double* d = dx.row(i);
                        for (std::size_t j = 0; j < xval.cols(); ++j)
                            d[j] = yr[j] * (g[j] - dot);
                    }
                    break;
            }
            t.accumulate(x.id, std::move(dx));
        };
    }
    return out;
}

Tape::Var Tape::batchnorm_train(Var x, Var gamma, Var beta, double eps, Matrix* mean_out,
                                Matrix* var_out) {
    check_valid(x, "batchnorm_train");
    check_valid(gamma, "batchnorm_train");
    check_valid(beta, "batchnorm_train");
    const Matrix& xv = nodes_[x.id].value;
    const std::size_t b = xv.rows(), c = xv.cols();
    if (b < 2) throw SmallBatchError("batchnorm_train: batch of size " + std::to_string(b));
    const Matrix& gv = nodes_[gamma.id].value;
    const Matrix& bv = nodes_[beta.id].value;
    if (gv.rows() != 1 || gv.cols() != c || bv.rows() != 1 || bv.cols() != c)
        throw ShapeError("batchnorm_train: gamma/beta must be 1x" + std::to_string(c));

    // Single pass over the batch for both moments.
    Matrix mean(1, c, 0.0), sumsq(1, c, 0.0);
    for (std::size_t i = 0; i < b; ++i) {
        const double* r = xv.row(i);
        for (std::size_t j = 0; j < c; ++j) {
            mean[j] += r[j];
            sumsq[j] += r[j] * r[j];
        }
    }
    Matrix var(1, c, 0.0);
    auto istd = std::make_shared<Matrix>(Matrix::uninitialized(1, c));
    auto mean_p = std::make_shared<Matrix>(Matrix::uninitialized(1, c));
    for (std::size_t j = 0; j < c; ++j) {
        mean[j] /= static_cast<double>(b);
        var[j] = std::max(0.0, sumsq[j] / static_cast<double>(b) - mean[j] * mean[j]);
        (*istd)[j] = 1.0 / std::sqrt(var[j] + eps);
        (*mean_p)[j] = mean[j];
    }
    if (mean_out) *mean_out = mean;
    if (var_out) *var_out = var;

    Matrix y = Matrix::uninitialized(b, c);
    for (std::size_t i = 0; i < b; ++i) {
        const double* r = xv.row(i);
        double* o = y.row(i);
        for (std::size_t j = 0; j < c; ++j)
            o[j] = gv[j] * ((r[j] - mean[j]) * (*istd)[j]) + bv[j];
    }
    const bool xg = nodes_[x.id].needs_grad;
    const bool gg = nodes_[gamma.id].needs_grad;
    const bool bg = nodes_[beta.id].needs_grad;
    Var out = push(std::move(y), xg || gg || bg);
    if (nodes_[out.id].needs_grad) {
        // xhat is recomputed from the input (still on the tape) rather than
        // stored; the backward is two fused passes.
        nodes_[out.id].backprop = [x, gamma, beta, xg, gg, bg, mean_p, istd](Tape& t,
                                                                             Node& self) {
            const std::size_t b = self.grad.rows(), c = self.grad.cols();
            const Matrix& xval = t.nodes_[x.id].value;
            Matrix dg(1, c, 0.0), db(1, c, 0.0);
            for (std::size_t i = 0; i < b; ++i) {
                const double* g = self.grad.row(i);
                const double* r = xval.row(i);
                for (std::size_t j = 0; j < c; ++j) {
                    dg[j] += g[j] * ((r[j] - (*mean_p)[j]) * (*istd)[j]);
                    db[j] += g[j];
                }
            }
            if (xg) {
                const Matrix& gv = t.nodes_[gamma.id].value;
                // sum_dh = db .* gamma, sum_dh_h = dg .* gamma
                Matrix dx = Matrix::uninitialized(b, c);
                const double bn = static_cast<double>(b);
                for (std::size_t i = 0; i < b; ++i) {
                    const double* g = self.grad.row(i);
                    const double* r = xval.row(i);
                    double* d = dx.row(i);
                    for (std::size_t j = 0; j < c; ++j) {
                        const double h = (r[j] - (*mean_p)[j]) * (*istd)[j];
                        const double dh = g[j] * gv[j];
                        d[j] = (*istd)[j] / bn *
                               (bn * dh - db[j] * gv[j] - h * dg[j] * gv[j]);
                    }
                }
                t.accumulate(x.id, std::move(dx));
            }
            if (gg) t.accumulate(gamma.id, std::move(dg));
            if (bg) t.accumulate(beta.id, std::move(db));
        };
    }
    return out;
}


Tape::Var Tape::batchnorm_frozen(Var x, Var gamma, Var beta, const Matrix& running_mean,
                                 const Matrix& running_var, double eps) {
    check_valid(x, "batchnorm_frozen");
    check_valid(gamma, "batchnorm_frozen");
    check_valid(beta, "batchnorm_frozen");
    const Matrix& xv = nodes_[x.id].value;
    const std::size_t c = xv.cols();
    const Matrix& gv = nodes_[gamma.id].value;
    const Matrix& bv = nodes_[beta.id].value;
    if (running_mean.cols() != c || running_var.cols() != c || gv.cols() != c || bv.cols() != c)
        throw ShapeError("batchnorm_frozen: coefficient width mismatch");

    auto istd = std::make_shared<Matrix>(Matrix::uninitialized(1, c));
    auto xhat = std::make_shared<Matrix>(Matrix::uninitialized(xv.rows(), c));
    for (std::size_t j = 0; j < c; ++j) (*istd)[j] = 1.0 / std::sqrt(running_var[j] + eps);
    Matrix y = Matrix::uninitialized(xv.rows(), c);
    for (std::size_t i = 0; i < xv.rows(); ++i) {
        const double* r = xv.row(i);
        double* h = xhat->row(i);
        double* o = y.row(i);
        for (std::size_t j = 0; j < c; ++j) {
            h[j] = (r[j] - running_mean[j]) * (*istd)[j];
            o[j] = gv[j] * h[j] + bv[j];
        }
    }
    const bool xg = nodes_[x.id].needs_grad;
    const bool gg = nodes_[gamma.id].needs_grad;
    const bool bg = nodes_[beta.id].needs_grad;
    Var out = push(std::move(y), xg || gg || bg);
    if (nodes_[out.id].needs_grad) {
        nodes_[out.id].backprop = [x, gamma, beta, xg, gg, bg, istd, xhat](Tape& t, Node& self) {
            const std::size_t b = self.grad.rows(), c = self.grad.cols();
            if (gg || bg) {
                Matrix dg(1, c, 0.0), db(1, c, 0.0);
                for (std::size_t i = 0; i < b; ++i) {
                    const double* g = self.grad.row(i);
                    const double* h = xhat->row(i);
                    for (std::size_t j = 0; j < c; ++j) {
                        dg[j] += g[j] * h[j];
                        db[j] += g[j];
                    }
                }
                if (gg) t.accumulate(gamma.id, std::move(dg));
                if (bg) t.accumulate(beta.id, std::move(db));
            }
            if (xg) {
                const Matrix& gv = t.nodes_[gamma.id].value;
                Matrix dx = Matrix::uninitialized(b, c);
                for (std::size_t i = 0; i < b; ++i) {
                    const double* g = self.grad.row(i);
                    double* d = dx.row(i);
                    for (std::size_t j = 0; j < c; ++j) d[j] = g[j] * gv[j] * (*istd)[j];
                }
                t.accumulate(x.id, std::move(dx));
            }
        };
    }
    return out;
}

Tape::Var Tape::dropout_act(ActKind kind, Var x, double dropout_p, Rng* rng,
                            double leaky_slope) {
    check_valid(x, "dropout_act");
    if (kind == ActKind::softmax_rows)
        throw UsageError("dropout_act: softmax_rows is not an elementwise activation");
    if (dropout_p <= 0.0) return activation(kind, x, leaky_slope);
    if (dropout_p >= 1.0) throw ValueError("dropout_act: dropout must lie in [0, 1)");
    if (!rng) throw UsageError("dropout_act: rng required when dropout is active");

    const Matrix& xv = nodes_[x.id].value;
    const double keep_scale = 1.0 / (1.0 - dropout_p);
    const auto threshold =
        static_cast<std::uint32_t>(dropout_p * 4294967296.0);  // P(u32 < threshold) = p
    auto mask = std::make_shared<std::vector<std::uint8_t>>(xv.size());
    Matrix y = Matrix::uninitialized(xv.rows(), xv.cols());
    for (std::size_t i = 0; i < xv.size(); ++i) {
        const bool keep = rng->next_u32() >= threshold;
        (*mask)[i] = keep;
        const double pre = keep ? xv[i] * keep_scale : 0.0;
        switch (kind) {
            case ActKind::leaky_relu: y[i] = pre > 0.0 ? pre : leaky_slope * pre; break;
            case ActKind::tanh_fn: y[i] = std::tanh(pre); break;
            case ActKind::sigmoid: y[i] = 1.0 / (1.0 + std::exp(-pre)); break;
            case ActKind::softmax_rows: break;  // rejected above
        }
    }
    const bool xg = nodes_[x.id].needs_grad;
    Var out = push(std::move(y), xg);
    if (nodes_[out.id].needs_grad) {
        nodes_[out.id].backprop = [kind, x, mask, keep_scale, leaky_slope](Tape& t, Node& self) {
            const Matrix& yv = self.value;
            Matrix dx = Matrix::uninitialized(yv.rows(), yv.cols());
            switch (kind) {
                case ActKind::leaky_relu:
                    for (std::size_t i = 0; i < dx.size(); ++i)
                        dx[i] = (*mask)[i] ? self.grad[i] * keep_scale *
                                                 (yv[i] > 0.0 ? 1.0 : leaky_slope)
                                           : 0.0;
                    break;
                case ActKind::tanh_fn:
                    for (std::size_t i = 0; i < dx.size(); ++i)
                        dx[i] = (*mask)[i] ? self.grad[i] * keep_scale * (1.0 - yv[i] * yv[i])
                                           : 0.0;
                    break;
                case ActKind::sigmoid:
                    for (std::size_t i = 0; i < dx.size(); ++i)
                        dx[i] = (*mask)[i]
                                    ? self.grad[i] * keep_scale * yv[i] * (1.0 - yv[i])
                                    : 0.0;
                    break;
                case ActKind::softmax_rows: break;
            }
            t.accumulate(x.id, std::move(dx));
        };
    }
    return out;
}

Tape::Var Tape::sum(Var a) {
    check_valid(a, "sum");
    const Matrix& av = nodes_[a.id].value;
    double total = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) total += av[i];
    Matrix y(1, 1, total);
    const bool ag = nodes_[a.id].needs_grad;
    Var out = push(std::move(y), ag);
    if (nodes_[out.id].needs_grad) {
        nodes_[out.id].backprop = [a](Tape& t, Node& self) {
            const Matrix& av = t.nodes_[a.id].value;
            Matrix da(av.rows(), av.cols(), self.grad[0]);
            t.accumulate(a.id, std::move(da));
        };
    }
    return out;
}

double weighted_ce_value(const Matrix& probs, const std::vector<int>& labels,
                         const std::vector<double>& class_weights) {
    if (labels.size() != probs.rows())
        throw ShapeError("weighted_ce: " + std::to_string(labels.size()) + " labels for " +
                         probs.shape_str() + " probabilities");
    double loss = 0.0, weight_sum = 0.0;
    for (std::size_t i = 0; i < probs.rows(); ++i) {
        const int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= probs.cols())
            throw ValueError("weighted_ce: label " + std::to_string(y) + " out of range at row " +
                             std::to_string(i));
        double row_sum = 0.0;
        for (std::size_t j = 0; j < probs.cols(); ++j) row_sum += probs(i, j);
        if (std::fabs(row_sum - 1.0) > 1e-9)
            throw ValueError("weighted_ce: row " + std::to_string(i) +
                             " is not a probability distribution (sum " +
                             std::to_string(row_sum) + ")");
        const double w = class_weights[static_cast<std::size_t>(y)];
        loss += w * -std::log(std::max(probs(i, static_cast<std::size_t>(y)), kLogClamp));
        weight_sum += w;
    }
    return loss / weight_sum;
}

Tape::Var Tape::weighted_ce(Var probs, const std::vector<int>& labels,
                            const std::vector<double>& class_weights) {
    check_valid(probs, "weighted_ce");
    const Matrix& pv = nodes_[probs.id].value;
    const double value = weighted_ce_value(pv, labels, class_weights);
    const bool pg = nodes_[probs.id].needs_grad;
    Var out = push(Matrix(1, 1, value), pg);
    if (nodes_[out.id].needs_grad) {
        double weight_sum = 0.0;
        for (int y : labels) weight_sum += class_weights[static_cast<std::size_t>(y)];
        auto ls = std::make_shared<std::vector<int>>(labels);
        auto ws = std::make_shared<std::vector<double>>(class_weights);
        nodes_[out.id].backprop = [probs, ls, ws, weight_sum](Tape& t, Node& self) {
            const Matrix& pv = t.nodes_[probs.id].value;
            Matrix dp(pv.rows(), pv.cols(), 0.0);
            const double g = self.grad[0];
            for (std::size_t i = 0; i < pv.rows(); ++i) {
                const auto y = static_cast<std::size_t>((*ls)[i]);
                const double p = pv(i, y);
                if (p > kLogClamp) dp(i, y) = -g * (*ws)[y] / (weight_sum * p);
            }
            t.accumulate(probs.id, std::move(dp));
        };
    }
    return out;
}

double Tape::scalar(Var v) const {
    check_valid(v, "scalar");
    const Matrix& m = nodes_[v.id].value;
    if (m.rows() != 1 || m.cols() != 1)
        throw ShapeError("scalar: node is " + m.shape_str() + ", expected 1x1");
    return m[0];
}

void Tape::backward(Var loss) {
    check_valid(loss, "backward");
    if (!recording_) throw UsageError("backward: tape was built with recording off");
    if (consumed_) throw UsageError("backward: tape already consumed");
    const Matrix& lv = nodes_[loss.id].value;
    if (lv.rows() != 1 || lv.cols() != 1)
        throw UsageError("backward: loss must be scalar, got " + lv.shape_str());
    consumed_ = true;

    accumulate(loss.id, Matrix(1, 1, 1.0));
    for (std::int32_t id = loss.id; id >= 0; --id) {
        Node& n = nodes_[id];
        if (!n.grad_set) continue;
        if (n.backprop) n.backprop(*this, n);
        if (n.store) {
            Matrix& g = n.store->slot(n.slot).grad;
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
        }
    }
}

}  // namespace wpfs
