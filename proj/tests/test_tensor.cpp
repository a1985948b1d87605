#include <cmath>
#include <cstdio>
#include <filesystem>

#include "aoisim/checkpoint.hpp"
#include "aoisim/tensor.hpp"
#include "doctest.h"

using namespace aoisim;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.data) v = 2.0 * uniform01(rng) - 1.0;
    return t;
}

}  // namespace

TEST_CASE("matmul basics") {
    Tape tape(false);
    Tensor eye = Tensor::matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Rng rng(7);
    Tensor m = random_tensor({3, 3}, rng);
    Tensor out = tape.val(tape.matmul(tape.input(eye), tape.input(m)));
    for (size_t i = 0; i < m.data.size(); ++i) CHECK(out.data[i] == doctest::Approx(m.data[i]).epsilon(1e-15));

    Tensor a = Tensor::matrix(2, 2, {1, 2, 3, 4});
    Tensor b = Tensor::matrix(2, 1, {1, 1});
    Tensor c = tape.val(tape.matmul(tape.input(a), tape.input(b)));
    CHECK(c.at(0, 0) == 3.0);
    CHECK(c.at(1, 0) == 7.0);

    Tensor bad = Tensor::zeros({4, 2});
    CHECK_THROWS_AS(tape.matmul(tape.input(Tensor::zeros({2, 3})), tape.input(bad)), DimensionError);
}

TEST_CASE("softmax rows") {
    Tape tape(false);
    Tensor z = tape.val(tape.softmax_rows(tape.input(Tensor::row({0, 0, 0}))));
    for (double v : z.data) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-15));

    Tensor masked = tape.val(tape.softmax_rows(tape.input(Tensor::row({-1e9, 0}))));
    CHECK(masked.data[0] <= 1e-30);
    CHECK(masked.data[1] == doctest::Approx(1.0).epsilon(1e-12));

    // independent direct evaluation of exp/sum
    double e1 = std::exp(1.0), e2 = std::exp(2.0);
    Tensor s = tape.val(tape.softmax_rows(tape.input(Tensor::row({1, 2}))));
    CHECK(s.data[0] == doctest::Approx(e1 / (e1 + e2)).epsilon(1e-10));
    CHECK(s.data[1] == doctest::Approx(e2 / (e1 + e2)).epsilon(1e-10));
    CHECK(s.data[0] == doctest::Approx(0.26894).epsilon(1e-4));
    CHECK(s.data[1] == doctest::Approx(0.73106).epsilon(1e-4));
}

TEST_CASE("softmax rows sum to one for large magnitudes") {
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor x = random_tensor({4, 7}, rng);
        for (double& v : x.data) v *= 1e3;
        Tape tape(false);
        Tensor s = tape.val(tape.softmax_rows(tape.input(x)));
        for (int i = 0; i < 4; ++i) {
            double sum = 0.0;
            for (int j = 0; j < 7; ++j) sum += s.at(i, j);
            CHECK(std::abs(sum - 1.0) < 1e-12);
            for (int j = 0; j < 7; ++j) CHECK(s.at(i, j) >= 0.0);
        }
    }
}

TEST_CASE("layer norm conventions") {
    Tape tape(false);
    Tensor gain = Tensor::row({1, 1, 1});
    Tensor bias = Tensor::row({0, 0, 0});

    // constant row maps to zeros (the eps in the denominator absorbs zero variance)
    Tensor z = tape.val(tape.layer_norm(tape.input(Tensor::row({5, 5, 5})), tape.input(gain),
                                        tape.input(bias), 1e-5));
    for (double v : z.data) CHECK(v == 0.0);

    // row [1,-1]: mean 0, population variance 1
    Tensor two = tape.val(tape.layer_norm(tape.input(Tensor::row({1, -1})), tape.input(Tensor::row({1, 1})),
                                          tape.input(Tensor::row({0, 0})), 1e-12));
    CHECK(two.data[0] == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(two.data[1] == doctest::Approx(-1.0).epsilon(1e-9));

    // gain 0 reduces every row to the bias
    Tensor b = Tensor::row({0.5, -2, 3});
    Tensor affine = tape.val(tape.layer_norm(tape.input(Tensor::matrix(2, 3, {1, 2, 3, -1, 0, 4})),
                                             tape.input(Tensor::row({0, 0, 0})), tape.input(b), 1e-5));
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 3; ++j) CHECK(affine.at(i, j) == b.data[j]);
}

TEST_CASE("relu and its subgradient") {
    Tape tape(true);
    Tensor x = Tensor::row({-1, 0, 2});
    Tensor y = tape.val(tape.relu(tape.input(x)));
    CHECK(y.data[0] == 0.0);
    CHECK(y.data[1] == 0.0);
    CHECK(y.data[2] == 2.0);

    Tape t2(false);
    Tensor allneg = t2.val(t2.relu(t2.input(Tensor::row({-3, -0.5}))));
    for (double v : allneg.data) CHECK(v == 0.0);

    // gradient of sum(relu(x)) at [-1, 2] -> [0, 1], confirmed by central differences
    Parameter w("w", Tensor::row({-1, 2}));
    auto eval = [&](bool with_grad) {
        Tape t(with_grad);
        Value loss = t.sum(t.relu(t.param(w)));
        double v = t.val(loss).item();
        if (with_grad) t.backward(loss);
        return v;
    };
    double err = finite_diff_check(eval, {&w}, 1e-6);
    CHECK(err < 1e-7);
    CHECK(w.grad.data[0] == 0.0);
    CHECK(w.grad.data[1] == 1.0);
}

TEST_CASE("backward contracts") {
    Parameter w("w", Tensor::matrix(2, 2, {1, -2, 3, 0.5}));

    // loss = sum(w): all-ones gradient
    {
        Tape tape(true);
        Value loss = tape.sum(tape.param(w));
        w.zero_grad();
        tape.backward(loss);
        for (double g : w.grad.data) CHECK(g == 1.0);
    }

    // loss = sum(w^2) at w=[3]: gradient 6
    {
        Parameter v("v", Tensor::row({3}));
        Tape tape(true);
        Value pv = tape.param(v);
        Value loss = tape.sum(tape.mul(pv, pv));
        tape.backward(loss);
        CHECK(v.grad.data[0] == doctest::Approx(6.0).epsilon(1e-15));
    }

    // gradients accumulate until zeroed
    {
        Tape tape(true);
        Value loss = tape.sum(tape.param(w));
        w.zero_grad();
        tape.backward(loss);
        tape.backward(loss);
        for (double g : w.grad.data) CHECK(g == 2.0);
    }

    // backward demands a scalar
    {
        Tape tape(true);
        Value v = tape.param(w);
        CHECK_THROWS_AS(tape.backward(v), ContractError);
    }
}

TEST_CASE("adam step") {
    // hand evaluation of the recurrence with bias correction, first step:
    // m=0.1, v=0.001, mhat=1, vhat=1 -> w -= lr * 1/(1+eps)
    Parameter w("w", Tensor::row({0}));
    w.grad.data[0] = 1.0;
    adam_step({&w}, 5e-5, 0.9, 0.999, 1e-8);
    CHECK(std::abs(w.value.data[0] - (-5e-5)) < 1e-9);
    CHECK(w.step_count == 1);
    CHECK(w.grad.data[0] == 1.0);  // untouched

    Parameter z("z", Tensor::row({0.25}));
    adam_step({&z}, 5e-5, 0.9, 0.999, 1e-8);  // zero grad: no movement
    CHECK(z.value.data[0] == 0.25);

    // two parameters update independently
    Parameter a("a", Tensor::row({1})), b("b", Tensor::row({1}));
    a.grad.data[0] = 1.0;
    b.grad.data[0] = -1.0;
    adam_step({&a, &b}, 1e-2, 0.9, 0.999, 1e-8);
    CHECK(a.value.data[0] < 1.0);
    CHECK(b.value.data[0] > 1.0);
    CHECK(a.value.data[0] + b.value.data[0] == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("finite difference harness") {
    Parameter w("w", Tensor::row({3}));
    auto square = [&](bool with_grad) {
        Tape tape(with_grad);
        Value pv = tape.param(w);
        Value loss = tape.sum(tape.mul(pv, pv));
        double v = tape.val(loss).item();
        if (with_grad) tape.backward(loss);
        return v;
    };
    CHECK(finite_diff_check(square, {&w}, 1e-5) < 1e-7);

    Parameter c("c", Tensor::row({1, 2}));
    auto constant = [&](bool with_grad) {
        Tape tape(with_grad);
        Value loss = tape.sum(tape.scale(tape.param(c), 0.0));
        double v = tape.val(loss).item();
        if (with_grad) tape.backward(loss);
        return v;
    };
    CHECK(finite_diff_check(constant, {&c}, 1e-5) == 0.0);
}

// Property: every differentiable op passes a central-difference check on
// random small tensors, seeds 0..9.
TEST_CASE("finite differences across the op set") {
    for (uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed);
        Parameter a("a", random_tensor({3, 4}, rng));
        Parameter b("b", random_tensor({3, 4}, rng));
        Parameter m1("m1", random_tensor({3, 4}, rng));
        Parameter m2("m2", random_tensor({4, 5}, rng));
        Parameter rowp("row", random_tensor({1, 4}, rng));
        Parameter gain("gain", random_tensor({1, 4}, rng));
        Parameter bias("bias", random_tensor({1, 4}, rng));
        Tensor weights = random_tensor({3, 4}, rng);  // fixed mixing constants

        std::vector<Parameter*> params = {&a, &b, &m1, &m2, &rowp, &gain, &bias};
        auto eval = [&](bool with_grad) {
            Tape t(with_grad);
            Value va = t.param(a);
            Value vb = t.param(b);
            Value mix = t.input(weights);

            Value expr = t.add(t.mul(va, vb), t.scale(t.sub(va, vb), 0.7));
            expr = t.add(expr, t.relu(t.add_const(va, 0.05)));
            expr = t.add(expr, t.exp(t.scale(vb, 0.3)));
            expr = t.add(expr, t.minimum(va, vb));
            expr = t.add(expr, t.clamp(va, -0.6, 0.6));
            expr = t.add_row_broadcast(expr, t.param(rowp));
            expr = t.layer_norm(expr, t.param(gain), t.param(bias), 1e-5);
            expr = t.add(expr, t.softmax_rows(va));
            expr = t.add(expr, t.log_softmax_rows(vb));
            expr = t.add(expr, t.concat_cols({t.slice_cols(va, 0, 2), t.slice_cols(va, 2, 4)}));

            Value prod = t.matmul(t.param(m1), t.param(m2));      // [3,5]
            Value pt = t.transpose(prod);                          // [5,3]
            Value back = t.matmul(prod, t.slice_rows(pt, 0, 5));  // [3,3]
            Value joined = t.concat_cols({expr, back});           // [3,7]

            Value gathered = t.gather_rows(joined, {0, 2, 4});
            Value pieces = t.stack_scalars({t.sum(t.mul(expr, mix)), t.mean(joined),
                                            t.sum(t.mean_rows(joined)), t.sum(t.row_sum(expr)),
                                            t.sum(gathered)});
            Value loss = t.sum(t.mul(pieces, pieces));
            double v = t.val(loss).item();
            if (with_grad) t.backward(loss);
            return v;
        };
        double err = finite_diff_check(eval, params, 1e-5);
        CHECK(err < 1e-4);
    }
}

// Two algebraically identical graphs must agree in value and gradient: the
// chain rule has no say in how an expression is factored.
TEST_CASE("composition consistency") {
    Rng rng(21);
    Parameter x("x", random_tensor({2, 3}, rng));
    Parameter w1("w1", random_tensor({3, 3}, rng));
    Parameter w2("w2", random_tensor({3, 3}, rng));

    auto grads_of = [&](auto&& build) {
        for (Parameter* p : {&x, &w1, &w2}) p->zero_grad();
        Tape tape(true);
        Value loss = build(tape);
        tape.backward(loss);
        std::vector<double> flat;
        for (Parameter* p : {&x, &w1, &w2})
            flat.insert(flat.end(), p->grad.data.begin(), p->grad.data.end());
        flat.push_back(tape.val(loss).item());
        return flat;
    };

    // x*(w1+w2) versus x*w1 + x*w2
    auto fused = grads_of([&](Tape& t) {
        return t.sum(t.matmul(t.param(x), t.add(t.param(w1), t.param(w2))));
    });
    auto staged = grads_of([&](Tape& t) {
        return t.sum(t.add(t.matmul(t.param(x), t.param(w1)), t.matmul(t.param(x), t.param(w2))));
    });
    REQUIRE(fused.size() == staged.size());
    for (size_t i = 0; i < fused.size(); ++i) CHECK(std::abs(fused[i] - staged[i]) < 1e-12);

    // (x*w1)*w2 versus x*(w1*w2)
    auto left = grads_of([&](Tape& t) {
        return t.sum(t.matmul(t.matmul(t.param(x), t.param(w1)), t.param(w2)));
    });
    auto right = grads_of([&](Tape& t) {
        return t.sum(t.matmul(t.param(x), t.matmul(t.param(w1), t.param(w2))));
    });
    for (size_t i = 0; i < left.size(); ++i) CHECK(std::abs(left[i] - right[i]) < 1e-12);
}

TEST_CASE("checkpoint round trip is bit exact") {
    Rng rng(5);
    Parameter a("net.a", random_tensor({3, 4}, rng));
    Parameter b("net.b", random_tensor({1, 7}, rng));
    a.value.data[0] = 1.0 / 3.0;
    b.value.data[2] = -0.1;

    std::string path = (std::filesystem::temp_directory_path() / "aoisim_ckpt_test.bin").string();
    save_checkpoint(path, {&a, &b});

    Parameter a2("net.a", Tensor::zeros({3, 4}));
    Parameter b2("net.b", Tensor::zeros({1, 7}));
    apply_checkpoint(load_checkpoint(path), {&a2, &b2});
    CHECK(a2.value.data == a.value.data);
    CHECK(b2.value.data == b.value.data);

    // second save of the reloaded values is byte-identical
    std::string path2 = (std::filesystem::temp_directory_path() / "aoisim_ckpt_test2.bin").string();
    save_checkpoint(path2, {&a2, &b2});
    auto slurp = [](const std::string& p) {
        FILE* f = std::fopen(p.c_str(), "rb");
        REQUIRE(f != nullptr);
        std::string bytes;
        char buf[4096];
        size_t n;
        while ((n = std::fread(buf, 1, sizeof buf, f)) > 0) bytes.append(buf, n);
        std::fclose(f);
        return bytes;
    };
    CHECK(slurp(path) == slurp(path2));

    // shape mismatch is a versioned, named error
    Parameter wrong("net.a", Tensor::zeros({4, 3}));
    Parameter fine("net.b", Tensor::zeros({1, 7}));
    CHECK_THROWS_AS(apply_checkpoint(load_checkpoint(path), {&wrong, &fine}), CheckpointError);

    std::filesystem::remove(path);
    std::filesystem::remove(path2);
}
