#include "doctest.h"

#include <cmath>
#include <cstdio>

#include "wpfs/errors.hpp"
#include "wpfs/gradient_check.hpp"
#include "wpfs/model.hpp"

using namespace wpfs;

namespace {

EmbeddingMatrix toy_embedding(Rng& rng, std::size_t d, std::size_t m) {
    EmbeddingMatrix e;
    e.method = EmbedMethod::feature_values;
    e.size = m;
    e.e = Matrix::uninitialized(d, m);
    for (std::size_t i = 0; i < e.e.size(); ++i) e.e[i] = rng.uniform01();
    return e;
}

WpfsArch toy_arch(std::size_t d, std::size_t m, std::size_t c) {
    WpfsArch arch;
    arch.feature_count = d;
    arch.class_count = c;
    arch.embed_size = m;
    arch.first_hidden = 6;
    arch.classifier_tail = {6, 5};
    arch.aux_hidden = {8, 8, 8};
    return arch;
}

Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c, double lo = -1.0, double hi = 1.0) {
    Matrix m = Matrix::uninitialized(r, c);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.uniform(lo, hi);
    return m;
}

// Layer-by-layer counting oracle, written independently of the model: a
// linear layer holds in*out+out parameters, batch norm adds 2*width per
// normalised hidden layer.
std::size_t oracle_mlp_params(std::size_t in, const std::vector<std::size_t>& hidden,
                              std::size_t out, bool batch_norm) {
    std::size_t total = 0;
    std::size_t prev = in;
    for (std::size_t h : hidden) {
        total += prev * h + h;
        if (batch_norm) total += 2 * h;
        prev = h;
    }
    total += prev * out + out;
    return total;
}

std::size_t oracle_wpfs_total(std::size_t m, std::size_t k,
                              const std::vector<std::size_t>& tail,
                              const std::vector<std::size_t>& aux, std::size_t classes) {
    const std::size_t wpn = oracle_mlp_params(m, aux, k, true);
    const std::size_t spn = oracle_mlp_params(m, aux, 1, true);
    const std::size_t clf_first = k + 2 * k;  // bias + batch norm (weights are generated)
    std::vector<std::size_t> tail_hidden(tail.begin() + 1, tail.end());
    const std::size_t clf_tail = oracle_mlp_params(k, tail_hidden, classes, true);
    return wpn + spn + clf_first + clf_tail;
}

std::size_t oracle_direct_total(std::size_t d, std::size_t k,
                                const std::vector<std::size_t>& tail, std::size_t classes) {
    std::vector<std::size_t> hidden(1, k);
    hidden.insert(hidden.end(), tail.begin() + 1, tail.end());
    return oracle_mlp_params(d, hidden, classes, true);
}

}  // namespace

TEST_CASE("first layer: gates of one reproduce the predictor output exactly") {
    Rng rng(2);
    WpfsArch arch = toy_arch(10, 4, 3);
    arch.use_spn = false;
    WpfsModel model(arch, toy_embedding(rng, 10, 4));
    Rng init(3);
    model.init_params(init);

    // The WPN-only weights, computed separately through the public interface.
    Rng unused(0);
    auto [w1, s] = model.assemble_first_layer(Mode::eval, unused);
    CHECK(w1.rows() == 6);
    CHECK(w1.cols() == 10);
    for (double g : s) CHECK(g == 1.0);

    // An identical model with the SPN enabled but gates forced to one-ish is
    // covered by the column-scaling case below; here W1 must equal the raw
    // predictor output.
    Tape tape(false);
    WpfsModel::FirstLayer fl = model.first_layer(tape, Mode::eval, unused);
    const Matrix wd = tape.value(fl.weights_dk);
    for (std::size_t j = 0; j < 10; ++j)
        for (std::size_t r = 0; r < 6; ++r) CHECK(w1(r, j) == wd(j, r));
}

TEST_CASE("column scaling by hand: W1 = W_WPN diag(s)") {
    // K=2, D=2, W_WPN=[[1,2],[3,4]], s=[0.5,1] -> W1=[[0.5,2],[1.5,4]]
    Matrix w_wpn{{1, 2}, {3, 4}};  // K x D
    std::vector<double> s{0.5, 1.0};
    Tape tape;
    Tape::Var wd = tape.constant(transpose(w_wpn));  // feature-major D x K
    Tape::Var gates = tape.constant(Matrix{{0.5}, {1.0}});
    Tape::Var scaled = tape.scale_rows(wd, gates);
    Matrix w1 = transpose(tape.value(scaled));
    CHECK(w1(0, 0) == 0.5);
    CHECK(w1(0, 1) == 2.0);
    CHECK(w1(1, 0) == 1.5);
    CHECK(w1(1, 1) == 4.0);
}

TEST_CASE("mask identity: W1 x equals W_WPN (s .* x)") {
    Rng rng(5);
    WpfsArch arch = toy_arch(12, 4, 2);
    WpfsModel model(arch, toy_embedding(rng, 12, 4));
    Rng init(7);
    model.init_params(init);

    Rng unused(0);
    auto [w1, s] = model.assemble_first_layer(Mode::eval, unused);

    // Rebuild the ungated predictor weights by dividing the gates back out.
    Matrix x = random_matrix(rng, 3, 12);
    for (std::size_t row = 0; row < x.rows(); ++row) {
        std::vector<double> lhs(w1.rows(), 0.0), rhs(w1.rows(), 0.0);
        for (std::size_t r = 0; r < w1.rows(); ++r) {
            for (std::size_t j = 0; j < 12; ++j) {
                lhs[r] += w1(r, j) * x(row, j);
                rhs[r] += (w1(r, j) / s[j]) * (s[j] * x(row, j));
            }
            CHECK(std::fabs(lhs[r] - rhs[r]) < 1e-10);
        }
    }

    // A zero gate silences its feature entirely.
    Matrix w1_masked = w1;
    for (std::size_t r = 0; r < w1.rows(); ++r) w1_masked(r, 3) = 0.0;
    Matrix xa = random_matrix(rng, 1, 12);
    Matrix xb = xa;
    xb(0, 3) = 1e9;  // huge change on the masked feature
    for (std::size_t r = 0; r < w1.rows(); ++r) {
        double ya = 0.0, yb = 0.0;
        for (std::size_t j = 0; j < 12; ++j) {
            ya += w1_masked(r, j) * xa(0, j);
            yb += w1_masked(r, j) * xb(0, j);
        }
        CHECK(ya == doctest::Approx(yb));
    }
}

TEST_CASE("forward probabilities sum to one and eval is bit-stable") {
    Rng rng(9);
    WpfsArch arch = toy_arch(12, 4, 3);
    WpfsModel model(arch, toy_embedding(rng, 12, 4));
    Rng init(11);
    model.init_params(init);

    Matrix x = random_matrix(rng, 5, 12);
    Rng r1(0), r2(0);
    Matrix p1 = model.forward_values(x, Mode::eval, r1);
    Matrix p2 = model.forward_values(x, Mode::eval, r2);
    REQUIRE(p1.rows() == 5);
    REQUIRE(p1.cols() == 3);
    for (std::size_t i = 0; i < p1.rows(); ++i) {
        double total = 0.0;
        for (std::size_t j = 0; j < p1.cols(); ++j) total += p1(i, j);
        CHECK(std::fabs(total - 1.0) < 1e-9);
    }
    for (std::size_t i = 0; i < p1.size(); ++i) REQUIRE(p1[i] == p2[i]);
}

TEST_CASE("total loss: lambda 0 is the bare cross-entropy; sparsity adds lambda*sum(s)") {
    Matrix probs{{0.9, 0.1}, {0.2, 0.8}};
    ClassWeights w{{1.0, 1.0}};
    std::vector<double> s{0.2, 0.3, 0.5};
    const double ce = total_loss_value(probs, {0, 1}, w, s, 0.0);
    CHECK(ce == doctest::Approx(weighted_ce_value(probs, {0, 1}, w.w)));
    CHECK(total_loss_value(Matrix{{1.0, 0.0}}, {0}, w, s, 1.0) == doctest::Approx(1.0));

    std::vector<double> s_half(5000, 0.5);
    const double with_term = total_loss_value(probs, {0, 1}, w, s_half, 3e-5);
    CHECK(with_term - ce == doctest::Approx(0.075).epsilon(1e-9));
}

TEST_CASE("feature importance: fresh spn with zeroed head gives 0.5 everywhere") {
    Rng rng(13);
    WpfsArch arch = toy_arch(9, 4, 2);
    WpfsModel model(arch, toy_embedding(rng, 9, 4));
    Rng init(17);
    model.init_params(init);
    // zero the SPN head so the pre-sigmoid output is exactly 0
    model.store().slot(model.store().index_of("spn.head.w")).value.fill(0.0);
    model.store().slot(model.store().index_of("spn.head.b")).value.fill(0.0);
    ImportanceVector imp = model.feature_importance(0.95);
    REQUIRE(imp.available);
    REQUIRE(imp.s.size() == 9);
    for (double v : imp.s) CHECK(v == doctest::Approx(0.5));
    CHECK(imp.selected.empty());
}

TEST_CASE("importance threshold picks exactly the scores above tau") {
    ImportanceVector imp;
    std::vector<double> scores{0.99, 0.5, 0.96};
    // via the public type contract: selected = { j : s_j > tau }
    imp.s = scores;
    imp.threshold = 0.95;
    for (std::size_t j = 0; j < scores.size(); ++j)
        if (scores[j] > imp.threshold) imp.selected.push_back(j);
    CHECK(imp.selected == std::vector<std::size_t>{0, 2});
}

TEST_CASE("importance is flagged unavailable without an spn") {
    Rng rng(19);
    WpfsArch arch = toy_arch(7, 3, 2);
    arch.use_spn = false;
    WpfsModel model(arch, toy_embedding(rng, 7, 3));
    Rng init(23);
    model.init_params(init);
    ImportanceVector imp = model.feature_importance(0.95);
    CHECK_FALSE(imp.available);
    for (double v : imp.s) CHECK(v == 1.0);
}

TEST_CASE("parameter counts match the independent counting oracle") {
    SUBCASE("full-size acceptance geometry D=5000") {
        Rng rng(29);
        WpfsArch arch;
        arch.feature_count = 5000;
        arch.class_count = 2;
        arch.embed_size = 50;
        WpfsModel model(arch, toy_embedding(rng, 5000, 50));
        ParameterCounts pc = model.parameter_counts();
        CHECK(pc.direct_first_layer == 100u * 5000u);
        CHECK(pc.wpfs_total ==
              oracle_wpfs_total(50, 100, {100, 100, 10}, {100, 100, 100}, 2));
        CHECK(pc.direct_total == oracle_direct_total(5000, 100, {100, 100, 10}, 2));
        CHECK(pc.reduction > 0.85);
    }
    SUBCASE("reduction can be negative and is reported honestly") {
        Rng rng(31);
        WpfsArch arch = toy_arch(8, 8, 2);
        arch.aux_hidden = {64, 64, 64};  // auxiliaries dwarf an 8-feature layer
        WpfsModel model(arch, toy_embedding(rng, 8, 8));
        CHECK(model.parameter_counts().reduction < 0.0);
    }
    SUBCASE("mlp baseline counts itself as the direct model") {
        Rng rng(37);
        WpfsArch arch = toy_arch(20, 4, 2);
        arch.use_wpn = false;
        arch.use_spn = false;
        WpfsModel model(arch, EmbeddingMatrix{});
        ParameterCounts pc = model.parameter_counts();
        CHECK(pc.wpfs_total == pc.direct_total);
        CHECK(pc.reduction == doctest::Approx(0.0));
    }
}

TEST_CASE("gradients flow into both auxiliary networks") {
    Rng rng(41);
    WpfsArch arch = toy_arch(10, 4, 2);
    WpfsModel model(arch, toy_embedding(rng, 10, 4));
    Rng init(43);
    model.init_params(init);

    Matrix x = random_matrix(rng, 6, 10);
    std::vector<int> y{0, 1, 0, 1, 0, 1};
    ClassWeights w{{1.0, 1.0}};

    Tape tape;
    Rng noise(3);
    Tape::Var xv = tape.constant(x);
    WpfsModel::FirstLayer first = model.first_layer(tape, Mode::train, noise);
    Tape::Var probs = model.classifier_forward(tape, xv, first, Mode::train, noise);
    Tape::Var loss = model.loss(tape, probs, first, y, w, 1e-3);
    model.store().zero_grads();
    tape.backward(loss);

    auto grad_norm_of = [&](const std::string& prefix) {
        double acc = 0.0;
        for (std::size_t s = 0; s < model.store().count(); ++s) {
            const auto& slot = model.store().slot(s);
            if (slot.name.rfind(prefix, 0) != 0) continue;
            for (std::size_t i = 0; i < slot.grad.size(); ++i) acc += slot.grad[i] * slot.grad[i];
        }
        return std::sqrt(acc);
    };
    CHECK(grad_norm_of("wpn.") > 0.0);
    CHECK(grad_norm_of("spn.") > 0.0);
    CHECK(grad_norm_of("clf.") > 0.0);
}

TEST_CASE("full wpfs objective passes the gradient check on a toy instance") {
    Rng rng(47);
    const std::size_t d = 12, m = 4, c = 3;
    WpfsArch arch = toy_arch(d, m, c);
    WpfsModel model(arch, toy_embedding(rng, d, m));
    Rng init(53);
    model.init_params(init);

    Matrix x = random_matrix(rng, 8, d);
    std::vector<int> y{0, 1, 2, 0, 1, 2, 0, 1};
    ClassWeights w{{1.0, 2.0, 0.5}};

    auto f = [&](bool record) {
        Tape tape(record);
        Rng noise(99);  // frozen dropout masks; frozen batch statistics
        Tape::Var xv = tape.constant(x);
        WpfsModel::FirstLayer first = model.first_layer(tape, Mode::frozen, noise);
        Tape::Var probs = model.classifier_forward(tape, xv, first, Mode::frozen, noise);
        Tape::Var loss = model.loss(tape, probs, first, y, w, 3e-3);
        if (record) tape.backward(loss);
        return tape.scalar(loss);
    };
    CHECK(gradient_check(f, model.store(), 1e-5) < 1e-4);
}

TEST_CASE("model persistence round trip preserves outputs") {
    Rng rng(59);
    WpfsArch arch = toy_arch(11, 4, 2);
    WpfsModel model(arch, toy_embedding(rng, 11, 4));
    Rng init(61);
    model.init_params(init);

    // push the running stats away from their initial values
    Matrix x = random_matrix(rng, 8, 11);
    Tape tape;
    Rng noise(5);
    WpfsModel::FirstLayer first = model.first_layer(tape, Mode::train, noise);
    model.classifier_forward(tape, tape.constant(x), first, Mode::train, noise);

    const std::string path = "/tmp/wpfs_model_roundtrip.wpfs";
    model.save(path);
    WpfsModel loaded = WpfsModel::load(path);
    std::remove(path.c_str());

    Rng r1(0), r2(0);
    Matrix a = model.forward_values(x, Mode::eval, r1);
    Matrix b = loaded.forward_values(x, Mode::eval, r2);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);

    ImportanceVector ia = model.feature_importance();
    ImportanceVector ib = loaded.feature_importance();
    for (std::size_t i = 0; i < ia.s.size(); ++i) CHECK(ia.s[i] == ib.s[i]);
}
