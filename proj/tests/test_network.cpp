#include "doctest.h"

#include <cmath>

#include "wpfs/errors.hpp"
#include "wpfs/gradient_check.hpp"
#include "wpfs/network.hpp"

using namespace wpfs;

namespace {

Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c, double lo = -1.0, double hi = 1.0) {
    Matrix m = Matrix::uninitialized(r, c);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.uniform(lo, hi);
    return m;
}

}  // namespace

TEST_CASE("weighted cross-entropy: perfect, uniform and hand-computed cases") {
    Matrix perfect{{1.0, 0.0}, {0.0, 1.0}};
    CHECK(weighted_ce_value(perfect, {0, 1}, {1.0, 1.0}) == doctest::Approx(0.0).epsilon(1e-9));

    Matrix uniform(3, 4, 0.25);
    CHECK(weighted_ce_value(uniform, {0, 3, 2}, {0.2, 5.0, 1.0, 2.0}) ==
          doctest::Approx(std::log(4.0)));

    // (1*(-ln 0.9) + 3*(-ln 0.8)) / 4
    Matrix probs{{0.9, 0.1}, {0.2, 0.8}};
    CHECK(weighted_ce_value(probs, {0, 1}, {1.0, 3.0}) == doctest::Approx(0.19369779).epsilon(1e-7));
}

TEST_CASE("weighted cross-entropy rejects out-of-range labels and non-distributions") {
    Matrix probs{{0.5, 0.5}};
    CHECK_THROWS_AS(weighted_ce_value(probs, {2}, {1.0, 1.0}), ValueError);
    Matrix not_probs{{0.5, 0.2}};
    CHECK_THROWS_AS(weighted_ce_value(not_probs, {0}, {1.0, 1.0}), ValueError);
}

TEST_CASE("equal class weights reduce to the unweighted mean cross-entropy") {
    Rng rng(3);
    Matrix logits = random_matrix(rng, 6, 3, -2.0, 2.0);
    Tape tape(false);
    const Matrix& probs = tape.value(tape.activation(ActKind::softmax_rows,
                                                     tape.constant(logits)));
    std::vector<int> y{0, 1, 2, 1, 0, 2};
    const double weighted = weighted_ce_value(probs, y, {0.7, 0.7, 0.7});
    double plain = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i)
        plain += -std::log(probs(i, static_cast<std::size_t>(y[i])));
    plain /= static_cast<double>(y.size());
    CHECK(weighted == doctest::Approx(plain).epsilon(1e-12));
}

TEST_CASE("class_weights: balanced, imbalanced, missing class") {
    std::vector<int> balanced{0, 1, 0, 1};
    ClassWeights w = class_weights(balanced, 2);
    CHECK(w.w[0] == doctest::Approx(1.0));
    CHECK(w.w[1] == doctest::Approx(1.0));

    std::vector<int> skewed;
    skewed.insert(skewed.end(), 10, 0);
    skewed.insert(skewed.end(), 40, 1);
    w = class_weights(skewed, 2);
    CHECK(w.w[0] == doctest::Approx(2.5));
    CHECK(w.w[1] == doctest::Approx(0.625));

    std::vector<int> three{0, 1, 2, 2};
    w = class_weights(three, 3);
    CHECK(w.w[0] == doctest::Approx(4.0 / 3.0));
    CHECK(w.w[1] == doctest::Approx(4.0 / 3.0));
    CHECK(w.w[2] == doctest::Approx(2.0 / 3.0));

    std::vector<int> missing{0, 0, 2, 2};
    CHECK_THROWS_WITH_AS(class_weights(missing, 3), doctest::Contains("class 1"), ValueError);
}

TEST_CASE("adamw single-step hand calculations") {
    ParameterStore store;
    const std::size_t p = store.add("p", Matrix(1, 1, 1.0));

    SUBCASE("zero gradient without decay leaves parameters unchanged") {
        AdamwConfig cfg;
        cfg.weight_decay = 0.0;
        AdamwState opt(store, cfg);
        store.zero_grads();
        opt.step(store, 0.1);
        CHECK(store.slot(p).value[0] == 1.0);
    }
    SUBCASE("unit gradient moves by about lr") {
        AdamwConfig cfg;
        cfg.weight_decay = 0.0;
        AdamwState opt(store, cfg);
        store.zero_grads();
        store.slot(p).grad[0] = 1.0;
        opt.step(store, 0.1);
        CHECK(store.slot(p).value[0] == doctest::Approx(0.9).epsilon(1e-7));
    }
    SUBCASE("pure decoupled decay") {
        AdamwConfig cfg;
        cfg.weight_decay = 0.5;
        AdamwState opt(store, cfg);
        store.zero_grads();
        opt.step(store, 0.1);
        CHECK(store.slot(p).value[0] == doctest::Approx(0.95));
    }
}

TEST_CASE("clip_gradients: no-op below the bound, exact scaling above, idempotent") {
    ParameterStore store;
    const std::size_t a = store.add("a", Matrix(1, 2));
    const std::size_t b = store.add("b", Matrix(1, 2));
    store.slot(a).grad = Matrix{{3.0, 0.0}};
    store.slot(b).grad = Matrix{{0.0, 4.0}};  // global norm 5

    CHECK(clip_gradients(store, 10.0) == 1.0);
    CHECK(store.slot(a).grad[0] == 3.0);

    CHECK(clip_gradients(store, 2.5) == doctest::Approx(0.5));
    CHECK(store.slot(a).grad[0] == doctest::Approx(1.5));
    CHECK(store.slot(b).grad[1] == doctest::Approx(2.0));
    CHECK(store.grad_l2_norm() == doctest::Approx(2.5));

    const double again = clip_gradients(store, 2.5);
    CHECK(again == doctest::Approx(1.0));
    CHECK(store.slot(a).grad[0] == doctest::Approx(1.5));
}

TEST_CASE("lr schedule endpoints, midpoint and monotonicity") {
    ScheduleConfig s;  // 3e-3 -> 3e-4 over 500
    CHECK(lr_at(s, 0) == doctest::Approx(3e-3));
    CHECK(lr_at(s, 250) == doctest::Approx(1.65e-3));
    CHECK(lr_at(s, 500) == doctest::Approx(3e-4));
    CHECK(lr_at(s, 5000) == doctest::Approx(3e-4));
    double prev = lr_at(s, 0);
    for (long e = 1; e < 700; ++e) {
        const double cur = lr_at(s, e);
        CHECK(cur <= prev);
        prev = cur;
    }
}

TEST_CASE("batch norm train output has zero mean, unit variance per channel") {
    Rng rng(9);
    ParameterStore store;
    const std::size_t g = store.add("g", Matrix(1, 5, 1.0));
    const std::size_t b = store.add("b", Matrix(1, 5, 0.0));
    Matrix x = random_matrix(rng, 32, 5, -4.0, 4.0);
    Tape tape;
    Matrix mean_out, var_out;
    Tape::Var out = tape.batchnorm_train(tape.constant(x), tape.parameter(store, g),
                                         tape.parameter(store, b), 1e-12, &mean_out, &var_out);
    const Matrix& y = tape.value(out);
    for (std::size_t j = 0; j < 5; ++j) {
        double mean = 0.0;
        for (std::size_t i = 0; i < y.rows(); ++i) mean += y(i, j);
        mean /= static_cast<double>(y.rows());
        double var = 0.0;
        for (std::size_t i = 0; i < y.rows(); ++i) {
            const double d = y(i, j) - mean;
            var += d * d;
        }
        var /= static_cast<double>(y.rows());
        CHECK(std::fabs(mean) < 1e-8);
        CHECK(var == doctest::Approx(1.0).epsilon(1e-8));
    }
}

TEST_CASE("mlp: identity single layer, dropout p=0 train/eval equivalence") {
    MlpConfig cfg;
    cfg.input_width = 3;
    cfg.output_width = 3;  // no hidden layers: a plain linear map
    ParameterStore store;
    Mlp net(cfg, "net");
    net.register_params(store);
    // identity weights, zero bias
    Matrix& w = store.slot(store.index_of("net.head.w")).value;
    for (std::size_t i = 0; i < 3; ++i) w(i, i) = 1.0;

    Rng rng(1);
    Matrix x{{1.0, -2.0, 0.5}, {0.0, 3.0, -1.0}};
    Tape tape(false);
    Tape::Var out = net.forward(tape, store, tape.constant(x), Mode::eval, rng);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(tape.value(out)[i] == x[i]);

    // with dropout 0 and batch statistics frozen, train equals eval
    MlpConfig cfg2;
    cfg2.input_width = 3;
    cfg2.hidden.push_back(LayerSpec{4, false, 0.0, ActKind::leaky_relu});
    cfg2.output_width = 2;
    cfg2.output_activation = ActKind::softmax_rows;
    ParameterStore store2;
    Mlp net2(cfg2, "m");
    net2.register_params(store2);
    Rng init(7);
    net2.init_params(store2, init);
    Tape t_eval(false), t_train(false);
    Rng r1(5), r2(5);
    const Matrix& eval_out =
        t_eval.value(net2.forward(t_eval, store2, t_eval.constant(x), Mode::eval, r1));
    const Matrix& train_out =
        t_train.value(net2.forward(t_train, store2, t_train.constant(x), Mode::frozen, r2));
    for (std::size_t i = 0; i < eval_out.size(); ++i) CHECK(eval_out[i] == train_out[i]);
}

TEST_CASE("mlp refuses size-1 batches in train mode with batch norm") {
    MlpConfig cfg;
    cfg.input_width = 2;
    cfg.hidden.push_back(LayerSpec{3, true, 0.2, ActKind::leaky_relu});
    cfg.output_width = 2;
    ParameterStore store;
    Mlp net(cfg, "m");
    net.register_params(store);
    Rng rng(1);
    net.init_params(store, rng);
    Tape tape;
    Matrix one_row(1, 2, 0.5);
    CHECK_THROWS_AS(net.forward(tape, store, tape.constant(one_row), Mode::train, rng),
                    SmallBatchError);
}

TEST_CASE("composed mlp loss passes the gradient check with frozen noise") {
    MlpConfig cfg;
    cfg.input_width = 4;
    cfg.hidden.push_back(LayerSpec{6, true, 0.2, ActKind::leaky_relu});
    cfg.hidden.push_back(LayerSpec{5, true, 0.2, ActKind::leaky_relu});
    cfg.output_width = 3;
    cfg.output_activation = ActKind::softmax_rows;
    ParameterStore store;
    Mlp net(cfg, "m");
    net.register_params(store);
    Rng init(11);
    net.init_params(store, init);

    Rng data_rng(12);
    Matrix x = random_matrix(data_rng, 8, 4, -1.5, 1.5);
    std::vector<int> y{0, 1, 2, 0, 1, 2, 0, 1};
    std::vector<double> w{1.0, 0.5, 2.0};

    auto f = [&](bool record) {
        Tape tape(record);
        Rng noise(777);  // same masks every evaluation
        Tape::Var probs = net.forward(tape, store, tape.constant(x), Mode::frozen, noise);
        Tape::Var loss = tape.weighted_ce(probs, y, w);
        if (record) tape.backward(loss);
        return tape.scalar(loss);
    };
    CHECK(gradient_check(f, store, 1e-5) < 1e-4);
}

TEST_CASE("train-mode batch norm gradients also pass the check") {
    // Batch statistics are recomputed from the perturbed inputs here, which
    // exercises the full normalisation backward rather than the frozen path.
    ParameterStore store;
    Rng rng(21);
    const std::size_t x = store.add("x", random_matrix(rng, 6, 3, -2.0, 2.0));
    const std::size_t g = store.add("g", random_matrix(rng, 1, 3, 0.5, 1.5));
    const std::size_t b = store.add("b", random_matrix(rng, 1, 3, -0.5, 0.5));
    auto f = [&](bool record) {
        Tape tape(record);
        Tape::Var bn = tape.batchnorm_train(tape.parameter(store, x), tape.parameter(store, g),
                                            tape.parameter(store, b), 1e-5, nullptr, nullptr);
        Tape::Var loss = tape.sum(tape.hadamard(bn, bn));
        if (record) tape.backward(loss);
        return tape.scalar(loss);
    };
    CHECK(gradient_check(f, store, 1e-5) < 1e-4);
}

TEST_CASE("eval forward is deterministic and ignores the rng") {
    MlpConfig cfg;
    cfg.input_width = 3;
    cfg.hidden.push_back(LayerSpec{4, true, 0.5, ActKind::leaky_relu});
    cfg.output_width = 2;
    cfg.output_activation = ActKind::softmax_rows;
    ParameterStore store;
    Mlp net(cfg, "m");
    net.register_params(store);
    Rng init(3);
    net.init_params(store, init);
    Rng data_rng(4);
    Matrix x = random_matrix(data_rng, 5, 3);

    Rng r1(1), r2(999);
    Tape t1(false), t2(false);
    const Matrix& a = t1.value(net.forward(t1, store, t1.constant(x), Mode::eval, r1));
    const Matrix& b = t2.value(net.forward(t2, store, t2.constant(x), Mode::eval, r2));
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}
