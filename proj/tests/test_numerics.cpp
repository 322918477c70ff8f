#include "doctest.h"

#include <cmath>
#include <set>

#include "wpfs/autograd.hpp"
#include "wpfs/errors.hpp"
#include "wpfs/gradient_check.hpp"
#include "wpfs/matrix.hpp"
#include "wpfs/rng.hpp"

using namespace wpfs;

namespace {

// Independent oracle: textbook triple loop, accumulating in a separate order
// guard (j outermost) so it does not mirror the kernel.
Matrix naive_matmul(const Matrix& a, const Matrix& b) {
    Matrix c(a.rows(), b.cols(), 0.0);
    for (std::size_t j = 0; j < b.cols(); ++j)
        for (std::size_t i = 0; i < a.rows(); ++i) {
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) acc += a(i, k) * b(k, j);
            c(i, j) = acc;
        }
    return c;
}

Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c, double lo = -2.0, double hi = 2.0) {
    Matrix m = Matrix::uninitialized(r, c);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.uniform(lo, hi);
    return m;
}

}  // namespace

TEST_CASE("matmul identity and hand-expanded product") {
    Matrix identity{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
    Matrix b{{4, 5}, {6, 7}, {8, 9}};
    Matrix prod = matmul(identity, b);
    for (std::size_t i = 0; i < b.size(); ++i) CHECK(prod[i] == b[i]);

    Matrix a{{1, 2}, {3, 4}};
    Matrix v{{5}, {6}};
    Matrix av = matmul(a, v);
    CHECK(av(0, 0) == 17.0);
    CHECK(av(1, 0) == 39.0);
}

TEST_CASE("matmul rejects mismatched inner dimensions naming both shapes") {
    Matrix a(2, 3), b(2, 3);
    CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("2x3"), ShapeError);
}

TEST_CASE("matmul agrees with the naive oracle on random shapes up to 8x8") {
    Rng rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        const auto m = 1 + rng.below(8), n = 1 + rng.below(8), p = 1 + rng.below(8);
        Matrix a = random_matrix(rng, m, n);
        Matrix b = random_matrix(rng, n, p);
        Matrix fast = matmul(a, b);
        Matrix slow = naive_matmul(a, b);
        for (std::size_t i = 0; i < fast.size(); ++i)
            CHECK(std::fabs(fast[i] - slow[i]) < 1e-12);
    }
}

TEST_CASE("matmul agrees with the oracle on kernel-tile boundary shapes") {
    Rng rng(12);
    for (std::size_t m : {1u, 3u, 4u, 5u, 8u, 37u}) {
        for (std::size_t p : {1u, 7u, 8u, 15u, 16u, 17u, 33u, 48u}) {
            Matrix a = random_matrix(rng, m, 9);
            Matrix b = random_matrix(rng, 9, p);
            Matrix fast = matmul(a, b);
            Matrix slow = naive_matmul(a, b);
            for (std::size_t i = 0; i < fast.size(); ++i)
                CHECK(std::fabs(fast[i] - slow[i]) < 1e-12);
        }
    }
}

TEST_CASE("matmul_nt and matmul_tn match explicit transposition") {
    Rng rng(13);
    Matrix a = random_matrix(rng, 5, 7);
    Matrix b = random_matrix(rng, 9, 7);
    Matrix nt = matmul_nt(a, b);
    Matrix nt_ref = naive_matmul(a, transpose(b));
    REQUIRE(nt.rows() == 5);
    REQUIRE(nt.cols() == 9);
    for (std::size_t i = 0; i < nt.size(); ++i) CHECK(nt[i] == doctest::Approx(nt_ref[i]));

    Matrix c = random_matrix(rng, 5, 4);
    Matrix tn = matmul_tn(a, c);  // a^T (7x5) * c (5x4)
    Matrix tn_ref = naive_matmul(transpose(a), c);
    REQUIRE(tn.rows() == 7);
    REQUIRE(tn.cols() == 4);
    for (std::size_t i = 0; i < tn.size(); ++i) CHECK(tn[i] == doctest::Approx(tn_ref[i]));
}

TEST_CASE("matrix finiteness guard names the offending cell") {
    Matrix m(2, 2, 1.0);
    m(1, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_WITH_AS(m.ensure_finite("test"), doctest::Contains("row 1, col 0"), ValueError);
}

TEST_CASE("activation examples: sigmoid, softmax, leaky relu") {
    Tape tape(false);
    Tape::Var x = tape.constant(Matrix{{0.0}});
    CHECK(tape.value(tape.activation(ActKind::sigmoid, x))[0] == doctest::Approx(0.5));

    Tape::Var logits = tape.constant(Matrix{{0.0, 0.0}});
    const Matrix& sm = tape.value(tape.activation(ActKind::softmax_rows, logits));
    CHECK(sm[0] == doctest::Approx(0.5));
    CHECK(sm[1] == doctest::Approx(0.5));

    Tape::Var neg = tape.constant(Matrix{{-2.0}});
    CHECK(tape.value(tape.activation(ActKind::leaky_relu, neg, 0.01))[0] ==
          doctest::Approx(-0.02));
}

TEST_CASE("activation ranges and softmax row sums") {
    Rng rng(17);
    Tape tape(false);
    Matrix x = random_matrix(rng, 13, 9, -30.0, 30.0);
    Tape::Var xv = tape.constant(x);

    const Matrix& sig = tape.value(tape.activation(ActKind::sigmoid, xv));
    const Matrix& th = tape.value(tape.activation(ActKind::tanh_fn, xv));
    const Matrix& sm = tape.value(tape.activation(ActKind::softmax_rows, xv));
    for (std::size_t i = 0; i < sig.size(); ++i) {
        CHECK(sig[i] > 0.0);
        CHECK(sig[i] < 1.0);
        CHECK(th[i] > -1.0);
        CHECK(th[i] < 1.0);
    }
    for (std::size_t i = 0; i < sm.rows(); ++i) {
        double total = 0.0;
        for (std::size_t j = 0; j < sm.cols(); ++j) total += sm(i, j);
        CHECK(std::fabs(total - 1.0) < 1e-12);
    }
}

TEST_CASE("backward on a linear sum gives all-ones gradient") {
    ParameterStore store;
    const std::size_t w = store.add("w", Matrix(2, 2, 3.0));
    Tape tape;
    Tape::Var loss = tape.sum(tape.parameter(store, w));
    store.zero_grads();
    tape.backward(loss);
    for (std::size_t i = 0; i < 4; ++i) CHECK(store.slot(w).grad[i] == 1.0);
}

TEST_CASE("backward on half squared norm gives the parameter back") {
    ParameterStore store;
    Matrix init{{1.5, -2.0}, {0.25, 4.0}};
    const std::size_t w = store.add("w", init);
    Tape tape;
    Tape::Var wv = tape.parameter(store, w);
    Tape::Var loss = tape.scale(tape.sum(tape.hadamard(wv, wv)), 0.5);
    store.zero_grads();
    tape.backward(loss);
    for (std::size_t i = 0; i < 4; ++i) CHECK(store.slot(w).grad[i] == doctest::Approx(init[i]));
}

TEST_CASE("backward twice on one tape is a usage error") {
    ParameterStore store;
    const std::size_t w = store.add("w", Matrix(1, 1, 2.0));
    Tape tape;
    Tape::Var loss = tape.sum(tape.parameter(store, w));
    tape.backward(loss);
    CHECK_THROWS_AS(tape.backward(loss), UsageError);
}

TEST_CASE("non-participating parameters keep zero gradients") {
    ParameterStore store;
    const std::size_t used = store.add("used", Matrix(1, 3, 1.0));
    const std::size_t unused = store.add("unused", Matrix(2, 2, 5.0));
    Tape tape;
    Tape::Var loss = tape.sum(tape.parameter(store, used));
    store.zero_grads();
    tape.backward(loss);
    for (std::size_t i = 0; i < 4; ++i) CHECK(store.slot(unused).grad[i] == 0.0);
}

TEST_CASE("gradient_check on x squared and on a constant") {
    ParameterStore store;
    const std::size_t x = store.add("x", Matrix(1, 1, 3.0));
    auto square = [&](bool record) {
        Tape tape(record);
        Tape::Var xv = tape.parameter(store, x);
        Tape::Var loss = tape.hadamard(xv, xv);
        if (record) tape.backward(loss);
        return tape.scalar(loss);
    };
    CHECK(gradient_check(square, store, 1e-5) < 1e-8);

    ParameterStore store2;
    const std::size_t y = store2.add("y", Matrix(2, 2, 1.0));
    auto constant = [&](bool record) {
        Tape tape(record);
        tape.parameter(store2, y);
        Tape::Var loss = tape.constant(Matrix(1, 1, 7.0));
        Tape::Var zero = tape.scale(tape.sum(tape.parameter(store2, y)), 0.0);
        Tape::Var total = tape.add(loss, zero);
        if (record) tape.backward(total);
        return tape.scalar(total);
    };
    CHECK(gradient_check(constant, store2, 1e-5) == 0.0);
}

TEST_CASE("gradient_check rejects a non-deterministic function") {
    ParameterStore store;
    store.add("x", Matrix(1, 1, 1.0));
    int calls = 0;
    auto noisy = [&](bool) { return static_cast<double>(++calls); };
    CHECK_THROWS_AS(gradient_check(noisy, store, 1e-5), UsageError);
}

TEST_CASE("every differentiable primitive passes a finite-difference check") {
    Rng rng(23);
    ParameterStore store;
    const std::size_t a = store.add("a", random_matrix(rng, 4, 5));
    const std::size_t b = store.add("b", random_matrix(rng, 5, 3));
    const std::size_t c = store.add("c", random_matrix(rng, 4, 5));
    const std::size_t bias = store.add("bias", random_matrix(rng, 1, 3));
    const std::size_t col = store.add("col", random_matrix(rng, 4, 1));
    const std::size_t gamma = store.add("gamma", random_matrix(rng, 1, 3, 0.5, 1.5));
    const std::size_t beta = store.add("beta", random_matrix(rng, 1, 3));
    Matrix running_mean = random_matrix(rng, 1, 3);
    Matrix running_var = random_matrix(rng, 1, 3, 0.5, 2.0);

    auto f = [&](bool record) {
        Tape tape(record);
        Rng mask_rng(4242);  // frozen dropout masks
        Tape::Var av = tape.parameter(store, a);
        Tape::Var bv = tape.parameter(store, b);
        Tape::Var cv = tape.parameter(store, c);
        Tape::Var h = tape.hadamard(av, cv);
        h = tape.add(h, av);
        Tape::Var prod = tape.matmul(h, bv);  // 4x3
        prod = tape.add(prod, tape.linear(h, bv, tape.parameter(store, bias)));
        prod = tape.scale_rows(prod, tape.parameter(store, col));  // row gates
        Tape::Var frozen = tape.batchnorm_frozen(prod, tape.parameter(store, gamma),
                                                 tape.parameter(store, beta), running_mean,
                                                 running_var, 1e-5);
        Tape::Var bn = tape.batchnorm_train(frozen, tape.parameter(store, gamma),
                                            tape.parameter(store, beta), 1e-5, nullptr, nullptr);
        Tape::Var act = tape.dropout_act(ActKind::tanh_fn, bn, 0.25, &mask_rng, 0.01);
        act = tape.dropout_act(ActKind::leaky_relu, act, 0.25, &mask_rng, 0.01);
        Tape::Var sm = tape.activation(ActKind::softmax_rows, tape.scale(act, 2.0));
        Tape::Var loss = tape.weighted_ce(sm, {0, 2, 1, 0}, {1.0, 2.0, 0.5});
        Tape::Var sig = tape.activation(ActKind::sigmoid, tape.parameter(store, col));
        loss = tape.add(loss, tape.scale(tape.sum(sig), 0.3));
        if (record) tape.backward(loss);
        return tape.scalar(loss);
    };
    CHECK(gradient_check(f, store, 1e-5) < 1e-4);
}

TEST_CASE("pcg32 reference stream (seed 42, stream 54)") {
    // First outputs of the canonical pcg32 demo with pcg32_srandom(42, 54).
    Rng rng(42, 54);
    const std::uint32_t expected[6] = {0xa15c02b7u, 0x7b47f409u, 0xba1d3330u,
                                       0x83d2f293u, 0xbfa4784bu, 0xcbed606eu};
    for (std::uint32_t e : expected) CHECK(rng.next_u32() == e);
}

TEST_CASE("equal seeds give identical streams, different streams diverge") {
    Rng a(123456789, 7);
    Rng b(123456789, 7);
    for (int i = 0; i < 10000; ++i) REQUIRE(a.next_u32() == b.next_u32());

    Rng c(123456789, 8);
    Rng d(123456789, 7);
    int differences = 0;
    for (int i = 0; i < 100; ++i) differences += c.next_u32() != d.next_u32();
    CHECK(differences > 90);
}

TEST_CASE("rng helpers stay in range and shuffle permutes") {
    Rng rng(7);
    for (int i = 0; i < 1000; ++i) {
        const double u = rng.uniform01();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        CHECK(rng.below(17) < 17);
    }
    std::vector<int> v{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    rng.shuffle(v);
    CHECK(std::set<int>(v.begin(), v.end()).size() == 10);
}
