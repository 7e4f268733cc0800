#include <doctest.h>

#include "krsvqg/autograd.hpp"
#include "support/gradcheck.hpp"

using namespace krsvqg;
using Mat = Matrix<double>;

namespace {

Mat random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
    Mat m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.normal(0.0, scale);
    return m;
}

}  // namespace

TEST_CASE("constant loss has zero gradients") {
    Parameter<double> w("w", Mat::Ones(2, 2));
    Tape<double> t;
    t.leaf(w);  // w participates in no op
    Var<double> loss = t.constant(Mat::Constant(1, 1, 3.0));
    t.backward(loss);
    CHECK(w.grad.isZero());
}

TEST_CASE("single linear layer squared loss matches the closed form") {
    // loss = sum((x W - y)^2); dW = 2 x^T (x W - y)
    Rng rng(11);
    Mat x = random_matrix(rng, 3, 4);
    Mat y = random_matrix(rng, 3, 2);
    Parameter<double> w("w", random_matrix(rng, 4, 2));

    Tape<double> t;
    Var<double> pred = matmul(t.constant(x), t.leaf(w));
    Var<double> diff = add(pred, scale(t.constant(y), -1.0));
    // sum of squares via <diff, diff> using matmul with transposes
    Var<double> sq = matmul(diff, diff, true, false);  // 2x2
    Var<double> loss = add(slice_cols(slice_rows(sq, 0, 1), 0, 1),
                           slice_cols(slice_rows(sq, 1, 1), 1, 1));
    t.backward(loss);

    const Mat expected = 2.0 * x.transpose() * (x * w.value - y);
    CHECK((w.grad - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("backward before forward is an error") {
    Tape<double> t;
    CHECK_THROWS_AS(t.backward(Var<double>{}), std::logic_error);
}

TEST_CASE("backward demands a scalar loss") {
    Tape<double> t;
    Var<double> v = t.constant(Mat::Ones(2, 2));
    CHECK_THROWS_AS(t.backward(v), std::invalid_argument);
}

TEST_CASE("cross entropy value and uniform case") {
    // Uniform logits over vocab 10: loss = ln 10.
    Tape<double> t;
    Var<double> logits = t.constant(Mat::Zero(3, 10));
    Var<double> loss = cross_entropy(logits, {4, 7, 0}, 0);  // last position is PAD
    CHECK(loss.value()(0, 0) == doctest::Approx(std::log(10.0)).epsilon(1e-12));

    // Saturated softmax: target logit far above the rest.
    Tape<double> t2;
    Mat big = Mat::Zero(1, 10);
    big(0, 3) = 100.0;
    Var<double> loss2 = cross_entropy(t2.constant(big), {3}, 0);
    CHECK(loss2.value()(0, 0) < 1e-6);

    // Worked example: logits [1,2,3], target 2.
    Tape<double> t3;
    Mat row(1, 3);
    row << 1.0, 2.0, 3.0;
    Var<double> loss3 = cross_entropy(t3.constant(row), {2}, 0);
    const double expected = -std::log(std::exp(3.0) / (std::exp(1.0) + std::exp(2.0) + std::exp(3.0)));
    CHECK(loss3.value()(0, 0) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(loss3.value()(0, 0) == doctest::Approx(0.40760596444438).epsilon(1e-10));
}

TEST_CASE("cross entropy rejects an all-PAD target") {
    Tape<double> t;
    Var<double> logits = t.constant(Mat::Zero(2, 5));
    CHECK_THROWS_WITH_AS(cross_entropy(logits, {0, 0}, 0), "empty target",
                         std::invalid_argument);
}

TEST_CASE("cross entropy ignores PAD rows entirely") {
    Rng rng(3);
    Mat logits = random_matrix(rng, 4, 6);
    Tape<double> t1;
    Var<double> a = cross_entropy(t1.constant(logits.topRows(2)), {1, 2}, 0);
    Tape<double> t2;
    Var<double> b = cross_entropy(t2.constant(logits), {1, 2, 0, 0}, 0);
    CHECK(a.value()(0, 0) == b.value()(0, 0));
}

TEST_CASE("every primitive op passes a finite-difference check") {
    Rng rng(42);
    const Eigen::Index d = 5;
    Parameter<double> a("a", random_matrix(rng, 4, d));
    Parameter<double> b("b", random_matrix(rng, 4, d));
    Parameter<double> w("w", random_matrix(rng, d, d));
    Parameter<double> bias("bias", random_matrix(rng, 1, d));
    Parameter<double> gamma("gamma", Mat::Ones(1, d) + 0.1 * random_matrix(rng, 1, d));
    Parameter<double> beta("beta", 0.1 * random_matrix(rng, 1, d));
    Parameter<double> table("table", random_matrix(rng, 7, d));
    const std::vector<int> ids{2, 5, 2, 0};
    const std::vector<int> targets{1, 0, 2};  // over a 3-wide logit matrix

    auto build = [&](Tape<double>& t) {
        Var<double> va = t.leaf(a);
        Var<double> vb = t.leaf(b);
        Var<double> x = add(va, vb);
        x = add_rowvec(matmul(x, t.leaf(w)), t.leaf(bias));
        x = gelu(x);
        x = layer_norm(x, t.leaf(gamma), t.leaf(beta));
        Var<double> emb = embedding(t.leaf(table), ids);
        x = concat_rows(x, emb);                  // 8 x d
        Var<double> soft = softmax_rows(slice_rows(x, 0, 3));
        Var<double> rest = scale(slice_rows(x, 3, 3), 0.7);
        Var<double> joined = concat_cols<double>({soft, rest});  // 3 x 2d
        return cross_entropy(matmul(joined, joined, false, true), targets, -1);
    };

    std::vector<Parameter<double>*> params{&a, &b, &w, &bias, &gamma, &beta, &table};
    for (auto* p : params) p->zero_grad();
    Tape<double> t;
    Var<double> loss = build(t);
    t.backward(loss);

    auto loss_value = [&]() {
        Tape<double> scratch;
        return build(scratch).value()(0, 0);
    };
    const auto report = testsupport::finite_difference_report(params, loss_value);
    CAPTURE(report.worst);
    CHECK(report.entries_checked > 0);
    CHECK(report.max_error < 1e-3);
}

TEST_CASE("matmul transpose variants agree with finite differences") {
    Rng rng(9);
    Parameter<double> a("a", random_matrix(rng, 3, 4));
    Parameter<double> b("b", random_matrix(rng, 3, 4));

    for (const auto [ta, tb] : {std::pair{false, true}, std::pair{true, false}}) {
        auto build = [&](Tape<double>& t) {
            // Shapes: (3x4)(4x3) or (4x3)(3x4); reduce to scalar by CE.
            Var<double> prod = matmul(t.leaf(a), t.leaf(b), ta, tb);
            return cross_entropy(prod, std::vector<int>(static_cast<std::size_t>(prod.rows()), 1),
                                 0);
        };
        a.zero_grad();
        b.zero_grad();
        Tape<double> t;
        t.backward(build(t));
        auto loss_value = [&]() {
            Tape<double> scratch;
            return build(scratch).value()(0, 0);
        };
        const auto report =
            testsupport::finite_difference_report({&a, &b}, loss_value);
        CAPTURE(ta); CAPTURE(tb); CAPTURE(report.worst);
        CHECK(report.max_error < 1e-3);
    }
}

TEST_CASE("dropout zero rate is the identity, active rate masks and scales") {
    Rng data_rng(5);
    Mat x = random_matrix(data_rng, 6, 6);
    Tape<double> t;
    Var<double> vx = t.constant(x);
    Rng drop_rng(1);
    Var<double> same = dropout(vx, 0.0, drop_rng);
    CHECK(same.index() == vx.index());

    Var<double> dropped = dropout(vx, 0.5, drop_rng);
    int zeros = 0;
    for (Eigen::Index r = 0; r < 6; ++r)
        for (Eigen::Index c = 0; c < 6; ++c) {
            const double v = dropped.value()(r, c);
            if (v == 0.0)
                ++zeros;
            else
                CHECK(v == doctest::Approx(2.0 * x(r, c)));
        }
    CHECK(zeros > 0);
    CHECK(zeros < 36);
}

TEST_CASE("repeated embedding ids accumulate gradient") {
    Parameter<double> table("table", Mat::Ones(3, 2));
    Tape<double> t;
    Var<double> emb = embedding(t.leaf(table), {1, 1, 1});
    Var<double> loss = cross_entropy(emb, {0, 0, 0}, -1);  // no PAD exclusion
    t.backward(loss);
    // All three rows gather row 1: its gradient is the sum over rows.
    CHECK(table.grad.row(1).cwiseAbs().sum() > 0.0);
    CHECK(table.grad.row(0).isZero());
    CHECK(table.grad.row(2).isZero());
}
