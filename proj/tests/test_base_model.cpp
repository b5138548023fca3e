#include <catch2/catch_amalgamated.hpp>
#include <filesystem>

#include "tbev/base/model.hpp"
#include "tbev/core/serialize.hpp"

using namespace tbev;

using Tf = Tensor<float>;
using Emb = BEVEmbedding<float>;

namespace {

BaseConfig small_cfg() {
    BaseConfig cfg;
    cfg.channels = 8;
    cfg.obs_cells = 16;
    return cfg;
}

BinaryGrid random_obs(int cells, Rng& rng, double density = 0.1) {
    BinaryGrid g{cells, cells, std::vector<std::uint8_t>(std::size_t(cells) * cells, 0)};
    for (auto& c : g.cells) c = rng.bernoulli(density) ? 1 : 0;
    return g;
}

}  // namespace

TEST_CASE("encode: determinism, zero propagation, stride arithmetic") {
    Rng rng(1);
    auto model = CoopBaseModel<float>::make(small_cfg(), rng);
    Rng orng(2);
    const BinaryGrid obs = random_obs(16, orng);

    SECTION("fixed parameters and input give identical outputs") {
        const Emb a = model.encode(obs, 0, EmbeddingSource::ego_only);
        const Emb b = model.encode(obs, 0, EmbeddingSource::ego_only);
        for (std::size_t i = 0; i < a.data.numel(); ++i) CHECK(a.data.at(i) == b.data.at(i));
    }
    SECTION("bias-free encoder maps all-zero observations to zero") {
        auto m2 = model;
        for (auto* conv : {&m2.enc1, &m2.enc2, &m2.enc3})
            for (std::size_t i = 0; i < conv->bias.numel(); ++i) conv->bias.at(i) = 0.f;
        BinaryGrid zeros{16, 16, std::vector<std::uint8_t>(256, 0)};
        const Emb e = m2.encode(zeros, 0, EmbeddingSource::ego_only);
        for (std::size_t i = 0; i < e.data.numel(); ++i) CHECK(e.data.at(i) == 0.f);
    }
    SECTION("default configuration produces a 64x16x16 embedding from 64x64") {
        Rng r2(3);
        auto big = CoopBaseModel<float>::make(BaseConfig{}, r2);
        Rng r3(4);
        const Emb e = big.encode(random_obs(64, r3), 0, EmbeddingSource::ego_only);
        CHECK(e.data.shape() == Shape{64, 16, 16});
    }
    SECTION("wrong observation shape is rejected") {
        CHECK_THROWS_AS(model.encode_plane(Tf::zeros({1, 8, 8})), ArgumentError);
    }
}

TEST_CASE("fuse_agents: identity, symmetry and permutation invariance") {
    Rng rng(5);
    auto base = small_cfg();
    Rng erng(6);
    std::vector<Emb> embs;
    for (int n = 0; n < 3; ++n)
        embs.push_back(Emb{Tf::normal({8, 4, 4}, erng, 0.f, 1.f), 0, EmbeddingSource::ego_only});

    for (FusionKind kind : {FusionKind::mean, FusionKind::max, FusionKind::attn}) {
        BaseConfig cfg = base;
        cfg.fusion = kind;
        Rng r2(5);
        auto model = CoopBaseModel<float>::make(cfg, r2);

        INFO("fusion kind " << to_string(kind));
        const Emb single = model.fuse_agents({embs[0]});
        for (std::size_t i = 0; i < single.data.numel(); ++i)
            CHECK(single.data.at(i) == embs[0].data.at(i));

        const Emb fused = model.fuse_agents(embs);
        const Emb permuted = model.fuse_agents({embs[2], embs[0], embs[1]});
        for (std::size_t i = 0; i < fused.data.numel(); ++i)
            CHECK(permuted.data.at(i) == Catch::Approx(fused.data.at(i)).margin(1e-5));

        CHECK_THROWS_AS(model.fuse_agents({}), ArgumentError);
    }

    SECTION("mean of x and -x is zero") {
        BaseConfig cfg = base;
        cfg.fusion = FusionKind::mean;
        Rng r2(5);
        auto model = CoopBaseModel<float>::make(cfg, r2);
        Emb neg{scale(embs[0].data, -1.f), 0, EmbeddingSource::ego_only};
        const Emb fused = model.fuse_agents({embs[0], neg});
        for (std::size_t i = 0; i < fused.data.numel(); ++i) CHECK(fused.data.at(i) == 0.f);
    }
    SECTION("max of constant grids picks the larger") {
        BaseConfig cfg = base;
        cfg.fusion = FusionKind::max;
        Rng r2(5);
        auto model = CoopBaseModel<float>::make(cfg, r2);
        Emb ones{Tf::full({8, 4, 4}, 1.f), 0, EmbeddingSource::ego_only};
        Emb twos{Tf::full({8, 4, 4}, 2.f), 0, EmbeddingSource::ego_only};
        const Emb fused = model.fuse_agents({ones, twos});
        for (std::size_t i = 0; i < fused.data.numel(); ++i) CHECK(fused.data.at(i) == 2.f);
    }
}

TEST_CASE("decode: shape contract, determinism, gradient coverage") {
    Rng rng(7);
    auto model = CoopBaseModel<float>::make(small_cfg(), rng);
    Rng erng(8);
    Tf emb = Tf::normal({8, 4, 4}, erng, 0.f, 1.f);

    Tf logits = model.decode(emb);
    CHECK(logits.shape() == Shape{16, 16});
    Tf logits2 = model.decode(emb);
    for (std::size_t i = 0; i < logits.numel(); ++i) CHECK(logits.at(i) == logits2.at(i));

    CHECK_THROWS_AS(model.decode(Tf::zeros({8, 5, 5})), ArgumentError);

    ParamList<float> dec = model.decoder_params();
    set_trainable(dec, true);
    Rng mrng(9);
    Tf mask = Tf::normal({16, 16}, mrng, 0.f, 1.f);
    GradStore<float> grads = backward(sum_all(mul(model.decode(emb), mask)));
    for (auto& p : dec) {
        const auto* g = grads.find(p.tensor);
        REQUIRE(g != nullptr);
        float mx = 0;
        for (float v : *g) mx = std::max(mx, std::abs(v));
        INFO(p.name);
        CHECK(mx > 0.f);
    }
}

TEST_CASE("base model checkpoint roundtrip preserves the digest") {
    Rng rng(10);
    auto model = CoopBaseModel<float>::make(small_cfg(), rng);
    const auto path = std::filesystem::temp_directory_path() / "tbev_base_ckpt.tbc";
    save_checkpoint(path, model.params());

    Rng rng2(999);
    auto other = CoopBaseModel<float>::make(small_cfg(), rng2);
    CHECK(param_digest(other.params()) != param_digest(model.params()));
    ParamList<float> target = other.params();
    load_into(path, target);
    // load_into writes through the shared tensors of `other`.
    CHECK(param_digest(other.params()) == param_digest(model.params()));
    std::filesystem::remove(path);
}
