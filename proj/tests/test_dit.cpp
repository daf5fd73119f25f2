#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "kiwi/dit.hpp"
#include "kiwi/model.hpp"
#include "kiwi/rng.hpp"
#include "kiwi/training.hpp"

using namespace kiwi;

namespace {

dit::DiTConfig small_dit(dit::InjectionMode mode = dit::InjectionMode::AddScaled) {
    dit::DiTConfig c;
    c.dim = 16;
    c.depth = 2;
    c.heads = 2;
    c.pt = 1;
    c.ph = 2;
    c.pw = 2;
    c.injection = mode;
    c.latent_channels = 12;
    c.codec_factor = 2;
    c.time_feat = 8;
    return c;
}

cond::ContextTokens constant_context(Rng& rng, int64_t n, int64_t dim) {
    cond::ContextTokens ctx;
    ctx.data = ad::constant(rng.randn({n, dim}));
    ctx.n_query = n;
    ctx.n_ref = 0;
    return ctx;
}

codec::LatentVideo random_latent(Rng& rng) {
    return {rng.randn({2, 4, 4, 12}), 2};
}

// very small full model for gradient checks
ModelConfig micro_model_config() {
    ModelConfig c;
    c.init_seed = 5;
    c.codec_factor = 2;
    c.enc.dim = 16;
    c.enc.depth = 1;
    c.enc.heads = 2;
    c.enc.image_patch = 8;
    c.enc.dit_dim = 16;
    c.enc.lora_rank = 2;
    c.dit = small_dit();
    return c;
}

} // namespace

TEST_CASE("injection mode names round-trip") {
    for (dit::InjectionMode m :
         {dit::InjectionMode::AddScaled, dit::InjectionMode::AddUnscaled,
          dit::InjectionMode::AddSharedEmbed, dit::InjectionMode::ChannelConcat})
        CHECK(dit::injection_mode_from_name(dit::injection_mode_name(m)) == m);
    CHECK_THROWS_AS(dit::injection_mode_from_name("mul_scaled"), std::invalid_argument);
}

TEST_CASE("gamma(t) is exactly 1 at initialization") {
    ParamStore store;
    dit::EditorDiT net(small_dit(), 9, store);
    for (int i = 0; i < 100; ++i) {
        const double t = i / 99.0;
        CHECK(net.gamma(t)->val[0] == 1.0);
    }
}

TEST_CASE("zero-init source embedding makes the source branch inert") {
    ParamStore store;
    dit::EditorDiT net(small_dit(), 9, store);
    Rng rng(10);
    const codec::LatentVideo noisy = random_latent(rng);
    const codec::LatentVideo src = random_latent(rng);
    const cond::ContextTokens ctx = constant_context(rng, 6, 16);

    const ad::Var with_src = net.forward(noisy, &src, 0.3, ctx);
    const ad::Var without = net.forward(noisy, nullptr, 0.3, ctx);
    CHECK(with_src->val.vec() == without->val.vec());
}

TEST_CASE("all injection modes produce the noisy latent's shape") {
    Rng rng(11);
    const codec::LatentVideo noisy = random_latent(rng);
    const codec::LatentVideo src = random_latent(rng);
    for (dit::InjectionMode m :
         {dit::InjectionMode::AddScaled, dit::InjectionMode::AddUnscaled,
          dit::InjectionMode::AddSharedEmbed, dit::InjectionMode::ChannelConcat}) {
        ParamStore store;
        dit::EditorDiT net(small_dit(m), 9, store);
        const cond::ContextTokens ctx = constant_context(rng, 5, 16);
        const ad::Var out = net.forward(noisy, &src, 0.5, ctx);
        CHECK(out->val.shape() == noisy.data.shape());
    }
}

TEST_CASE("cross-attention context is permutation invariant") {
    ParamStore store;
    dit::EditorDiT net(small_dit(), 9, store);
    Rng rng(12);
    const codec::LatentVideo noisy = random_latent(rng);
    const Tensor ctx_data = rng.randn({7, 16});

    cond::ContextTokens ctx;
    ctx.data = ad::constant(ctx_data);
    ctx.n_query = 7;

    Tensor permuted({7, 16});
    const int64_t perm[7] = {4, 0, 6, 2, 5, 1, 3};
    for (int64_t r = 0; r < 7; ++r)
        for (int64_t c = 0; c < 16; ++c) permuted.at(r, c) = ctx_data.at(perm[r], c);
    cond::ContextTokens ctx_perm;
    ctx_perm.data = ad::constant(permuted);
    ctx_perm.n_query = 7;

    const ad::Var a = net.forward(noisy, nullptr, 0.4, ctx);
    const ad::Var b = net.forward(noisy, nullptr, 0.4, ctx_perm);
    for (int64_t i = 0; i < a->val.numel(); ++i)
        REQUIRE(a->val[i] == doctest::Approx(b->val[i]).epsilon(1e-10));
}

TEST_CASE("duplicating every context token leaves the output unchanged") {
    ParamStore store;
    dit::EditorDiT net(small_dit(), 9, store);
    Rng rng(13);
    const codec::LatentVideo noisy = random_latent(rng);
    const Tensor ctx_data = rng.randn({5, 16});

    cond::ContextTokens ctx;
    ctx.data = ad::constant(ctx_data);
    ctx.n_query = 5;

    Tensor doubled({10, 16});
    for (int64_t r = 0; r < 10; ++r)
        for (int64_t c = 0; c < 16; ++c) doubled.at(r, c) = ctx_data.at(r % 5, c);
    cond::ContextTokens ctx2;
    ctx2.data = ad::constant(doubled);
    ctx2.n_query = 10;

    const ad::Var a = net.forward(noisy, nullptr, 0.6, ctx);
    const ad::Var b = net.forward(noisy, nullptr, 0.6, ctx2);
    for (int64_t i = 0; i < a->val.numel(); ++i)
        REQUIRE(a->val[i] == doctest::Approx(b->val[i]).epsilon(1e-10));
}

TEST_CASE("disabled reference concat isolates the reference completely") {
    dit::DiTConfig cfg = small_dit();
    cfg.reference_concat = false;
    ParamStore store;
    dit::EditorDiT net(cfg, 9, store);
    Rng rng(14);
    const codec::LatentVideo noisy = random_latent(rng);
    const cond::ContextTokens ctx = constant_context(rng, 4, 16);
    const Tensor ref = rng.randn({8, 8, 3});

    const ad::Var with_ref = net.forward(noisy, nullptr, 0.2, ctx, ref);
    const ad::Var without = net.forward(noisy, nullptr, 0.2, ctx, std::nullopt);
    CHECK(with_ref->val.vec() == without->val.vec());
}

TEST_CASE("enabled reference concat changes the output but not its shape") {
    ParamStore store;
    dit::EditorDiT net(small_dit(), 9, store);
    Rng rng(15);
    const codec::LatentVideo noisy = random_latent(rng);
    const cond::ContextTokens ctx = constant_context(rng, 4, 16);
    const Tensor ref = rng.randn({8, 8, 3});

    const ad::Var with_ref = net.forward(noisy, nullptr, 0.2, ctx, ref);
    const ad::Var without = net.forward(noisy, nullptr, 0.2, ctx, std::nullopt);
    CHECK(with_ref->val.shape() == noisy.data.shape());
    CHECK(with_ref->val.vec() != without->val.vec());
}

TEST_CASE("full-model gradients match central differences") {
    EditorModel model(micro_model_config());
    Rng rng(16);

    train::FlowSample fs;
    fs.z1 = {rng.randn({1, 4, 4, 12}), 2};
    fs.z0 = {rng.randn({1, 4, 4, 12}), 2};
    fs.t = 0.45;
    fs.inputs.source = rng.randn({1, 8, 8, 3});
    fs.inputs.instruction = "Add a red circle";
    fs.inputs.reference = rng.randn({8, 8, 3});

    auto loss_value = [&] { return train::flow_loss_graph(model, fs)->val[0]; };

    model.store().zero_grads();
    ad::backward(train::flow_loss_graph(model, fs));

    std::vector<Param*> params = model.store().all_params();
    Rng pick(17);
    const double eps = 1e-5;
    int checked = 0;
    while (checked < 12) {
        Param* p = params[static_cast<size_t>(pick.uniform_int(0, static_cast<int64_t>(params.size()) - 1))];
        const int64_t i = pick.uniform_int(0, p->value.numel() - 1);
        const double saved = p->value[i];
        p->value[i] = saved + eps;
        const double up = loss_value();
        p->value[i] = saved - eps;
        const double down = loss_value();
        p->value[i] = saved;
        const double numeric = (up - down) / (2.0 * eps);
        const double analytic = p->grad[i];
        const double scale = std::max({std::abs(numeric), std::abs(analytic), 1e-4});
        INFO(p->name << "[" << i << "]: analytic=" << analytic << " numeric=" << numeric);
        CHECK(std::abs(analytic - numeric) / scale < 1e-4);
        ++checked;
    }
}

TEST_CASE("checkpoint save/load restores weights and config") {
    namespace fsys = std::filesystem;
    const std::string path = (fsys::temp_directory_path() / "kiwi_ckpt_test.ckpt").string();

    EditorModel model(micro_model_config());
    // perturb one weight so we are not just reloading an init
    model.store().find("dit", "head_b").value[0] = 0.125;
    save_checkpoint(path, model, {"unit-test"});

    std::vector<std::string> lineage;
    std::unique_ptr<EditorModel> back = load_checkpoint(path, &lineage);
    REQUIRE(lineage.size() == 1);
    CHECK(lineage[0] == "unit-test");
    CHECK(back->config().dit.dim == 16);
    for (const std::string& g : model.store().group_names())
        CHECK(model.store().group_hash(g) == back->store().group_hash(g));
    fsys::remove(path);
}
