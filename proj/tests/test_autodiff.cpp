#include <doctest.h>

#include <cmath>
#include <functional>

#include "kiwi/autodiff.hpp"
#include "kiwi/conditioning.hpp"
#include "kiwi/rng.hpp"

using namespace kiwi;

namespace {

// Central-difference gradient check: builds the scalar loss twice per probed
// element and compares against the analytic gradient from backward().
void check_gradients(std::vector<Param*> params,
                     const std::function<ad::Var()>& build_loss,
                     double eps = 1e-6, double tol = 1e-5) {
    ad::Var loss = build_loss();
    REQUIRE(loss->val.numel() == 1);
    for (Param* p : params) p->zero_grad();
    ad::backward(loss);

    for (Param* p : params) {
        for (int64_t i = 0; i < p->value.numel(); ++i) {
            const double saved = p->value[i];
            p->value[i] = saved + eps;
            const double up = build_loss()->val[0];
            p->value[i] = saved - eps;
            const double down = build_loss()->val[0];
            p->value[i] = saved;
            const double numeric = (up - down) / (2.0 * eps);
            const double analytic = p->grad[i];
            const double scale = std::max({std::abs(numeric), std::abs(analytic), 1e-4});
            INFO(p->name << "[" << i << "] analytic=" << analytic << " numeric=" << numeric);
            CHECK(std::abs(analytic - numeric) / scale < tol);
        }
    }
}

} // namespace

TEST_CASE("gradient check: matmul -> gelu -> layernorm -> mean_sq_diff chain") {
    Rng rng(21);
    Param w("w", rng.randn({4, 6}, 0.5));
    Param b("b", rng.randn({1, 6}, 0.5));
    const Tensor x = rng.randn({3, 4});
    const Tensor target = rng.randn({3, 6});

    check_gradients({&w, &b}, [&] {
        ad::Var h = ad::add_rowvec(ad::matmul(ad::constant(x), ad::leaf(w)), ad::leaf(b));
        h = ad::gelu(h);
        h = ad::layernorm(h);
        return ad::mean_sq_diff(h, target);
    });
}

TEST_CASE("gradient check: attention-shaped graph (softmax over scaled scores)") {
    Rng rng(22);
    Param q("q", rng.randn({5, 8}, 0.3));
    Param k("k", rng.randn({7, 8}, 0.3));
    Param v("v", rng.randn({7, 8}, 0.3));
    const Tensor target = rng.randn({5, 8});

    check_gradients({&q, &k, &v}, [&] {
        ad::Var scores = ad::scale(ad::matmul_nt(ad::leaf(q), ad::leaf(k)),
                                   1.0 / std::sqrt(8.0));
        ad::Var attn = ad::softmax_rows(scores);
        return ad::mean_sq_diff(ad::matmul(attn, ad::leaf(v)), target);
    });
}

TEST_CASE("gradient check: structural ops (concat, slice, gather, reshape)") {
    Rng rng(23);
    Param a("a", rng.randn({4, 3}, 0.5));
    Param b("b", rng.randn({2, 3}, 0.5));
    const Tensor target = rng.randn({3, 6});

    check_gradients({&a, &b}, [&] {
        ad::Var cat = ad::concat_rows(ad::leaf(a), ad::leaf(b)); // (6,3)
        ad::Var picked = ad::gather_rows(cat, {5, 0, 2, 2, 1, 4});
        ad::Var wide = ad::reshape(picked, {3, 6});
        ad::Var sliced = ad::slice_rows(wide, 0, 3);
        return ad::mean_sq_diff(sliced, target);
    });
}

TEST_CASE("gradient check: hadamard, scale_by, add_scalar, sum_all") {
    Rng rng(24);
    Param a("a", rng.randn({3, 3}, 0.7));
    Param s("s", rng.randn({1, 1}, 0.5));

    check_gradients({&a, &s}, [&] {
        ad::Var prod = ad::hadamard(ad::leaf(a), ad::add_scalar(ad::leaf(a), 0.5));
        ad::Var scaled = ad::scale_by(prod, ad::leaf(s));
        return ad::scale(ad::sum_all(scaled), 0.1);
    });
}

TEST_CASE("gradient check: lora_apply") {
    Rng rng(25);
    Param base_w("base_w", rng.randn({6, 4}, 0.4));
    Param down("down", rng.randn({6, 2}, 0.4));
    Param up("up", rng.randn({2, 4}, 0.4));
    const Tensor x = rng.randn({5, 6});
    const Tensor target = rng.randn({5, 4});
    cond::LoraWeights lw;
    lw.down = &down;
    lw.up = &up;
    lw.alpha = 8.0;
    lw.rank = 2;

    check_gradients({&base_w, &down, &up}, [&] {
        ad::Var input = ad::constant(x);
        ad::Var base = ad::matmul(input, ad::leaf(base_w));
        return ad::mean_sq_diff(cond::lora_apply(base, input, lw), target);
    });
}

TEST_CASE("lora delta vanishes when the up matrix is zero") {
    Rng rng(26);
    Param down("down", rng.randn({6, 2}));
    Param up("up", Tensor::zeros({2, 4}));
    cond::LoraWeights lw;
    lw.down = &down;
    lw.up = &up;
    lw.alpha = 8.0;
    lw.rank = 2;

    const Tensor x = rng.randn({5, 6});
    ad::Var base = ad::constant(rng.randn({5, 4}));
    ad::Var out = cond::lora_apply(base, ad::constant(x), lw);
    CHECK(out->val.vec() == base->val.vec());
}

TEST_CASE("backward accumulates into shared leaves") {
    Param a("a", Tensor::full({2, 2}, 1.5));
    ad::Var l = ad::leaf(a);
    ad::Var loss = ad::sum_all(ad::add(l, l)); // d/da = 2 everywhere
    a.zero_grad();
    ad::backward(loss);
    for (int64_t i = 0; i < 4; ++i) CHECK(a.grad[i] == doctest::Approx(2.0));
}
