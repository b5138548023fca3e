#include <catch2/catch_amalgamated.hpp>

#include "tbev/bev/importance.hpp"
#include "testing_util.hpp"

using namespace tbev;
using tbev::testing::all_indices;
using tbev::testing::fd_check;

using Td = Tensor<double>;
using Emb = BEVEmbedding<double>;

namespace {

Emb make_emb(Shape shape, std::vector<double> v, int frame = 0) {
    return Emb{Td::from(std::move(shape), std::move(v)), frame, EmbeddingSource::fused_multi_cav};
}

ImportanceEstimator<double> zero_estimator(int channels, int out_channels, double bias_value = 0.0) {
    ImportanceEstimator<double> est;
    est.generator = LinearLayer<double>::make_zero(channels, out_channels);
    est.in_channels = channels;
    est.out_channels = out_channels;
    for (std::size_t i = 0; i < est.generator.bias.numel(); ++i) est.generator.bias.at(i) = bias_value;
    return est;
}

}  // namespace

TEST_CASE("importance map: zero generator gives 0.5 everywhere") {
    Rng rng(1);
    Emb e = make_emb({3, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12});
    auto est = zero_estimator(3, 4);
    Td m = importance_map(e, est);
    REQUIRE(m.shape() == Shape{2, 2});
    for (std::size_t i = 0; i < m.numel(); ++i) CHECK(m.at(i) == 0.5);
}

TEST_CASE("importance map: channel max then sigmoid") {
    // Generator emits exactly [2, -1, 0] at the single pixel.
    Emb e = make_emb({1, 1, 1}, {1.0});
    ImportanceEstimator<double> est;
    est.generator.weight = Td::from({3, 1}, {2.0, -1.0, 0.0});
    est.generator.bias = Td::zeros({3});
    est.in_channels = 1;
    est.out_channels = 3;
    Td m = importance_map(e, est);
    CHECK(m.at(0) == Catch::Approx(0.8807970779778823).epsilon(1e-9));
}

TEST_CASE("importance map: zero weights with bias -3") {
    Rng rng(2);
    Emb e{Td::normal({2, 3, 3}, rng, 0.0, 2.0), 0, EmbeddingSource::ego_only};
    auto est = zero_estimator(2, 1, -3.0);
    Td m = importance_map(e, est);
    for (std::size_t i = 0; i < m.numel(); ++i)
        CHECK(m.at(i) == Catch::Approx(0.04742587317756678).epsilon(1e-9));
}

TEST_CASE("importance map: estimator / embedding channel mismatch") {
    Emb e = make_emb({2, 1, 1}, {1.0, 2.0});
    auto est = zero_estimator(3, 2);
    CHECK_THROWS_AS(importance_map(e, est), ConfigError);
}

TEST_CASE("relative importance: softmax across members") {
    SECTION("singleton is all ones") {
        auto w = relative_importance<double>({Td::from({2, 2}, {0.1, 0.5, 0.9, 0.3})});
        REQUIRE(w.size() == 1);
        for (std::size_t i = 0; i < 4; ++i) CHECK(w[0].at(i) == 1.0);
    }
    SECTION("equal maps split evenly") {
        Td m = Td::full({2, 2}, 0.7);
        auto w = relative_importance<double>({m, m.clone()});
        for (std::size_t i = 0; i < 4; ++i) {
            CHECK(w[0].at(i) == 0.5);
            CHECK(w[1].at(i) == 0.5);
        }
    }
    SECTION("maps 1.0 and 0.0") {
        auto w = relative_importance<double>({Td::full({1, 1}, 1.0), Td::full({1, 1}, 0.0)});
        CHECK(w[0].at(0) == Catch::Approx(0.7310585786300049).epsilon(1e-9));
        CHECK(w[1].at(0) == Catch::Approx(0.2689414213699951).epsilon(1e-9));
    }
    SECTION("three-way softmax of (1,0,0)") {
        auto w = relative_importance<double>(
            {Td::full({1, 1}, 1.0), Td::full({1, 1}, 0.0), Td::full({1, 1}, 0.0)});
        CHECK(w[0].at(0) == Catch::Approx(0.5761168847658291).epsilon(1e-9));
        CHECK(w[1].at(0) == Catch::Approx(0.21194155761708544).epsilon(1e-9));
    }
    SECTION("errors") {
        CHECK_THROWS_AS(relative_importance<double>({}), ArgumentError);
        CHECK_THROWS_AS(relative_importance<double>({Td::zeros({2, 2}), Td::zeros({2, 3})}),
                        ArgumentError);
    }
}

TEST_CASE("relative importance: random maps sum to one per pixel") {
    Rng rng(5);
    std::vector<Td> maps;
    for (int n = 0; n < 4; ++n) maps.push_back(Td::uniform({6, 7}, rng, 0.0, 1.0));
    auto w = relative_importance(maps);
    for (std::size_t i = 0; i < maps[0].numel(); ++i) {
        double s = 0;
        for (const auto& t : w) {
            s += t.at(i);
            CHECK(t.at(i) >= 0.0);
            CHECK(t.at(i) <= 1.0);
        }
        CHECK(std::abs(s - 1.0) <= 1e-5);
    }
}

TEST_CASE("importance fuse: identity cases are exact") {
    Rng rng(6);
    Emb e{Td::normal({3, 4, 4}, rng, 0.0, 1.0), 3, EmbeddingSource::fused_multi_cav};
    auto est = ImportanceEstimator<double>::make(3, 8, rng);

    SECTION("single member returns the input bit-exactly") {
        Emb fused = importance_fuse<double>({e}, est);
        REQUIRE(fused.data.shape() == e.data.shape());
        for (std::size_t i = 0; i < e.data.numel(); ++i) CHECK(fused.data.at(i) == e.data.at(i));
    }
    SECTION("two identical members return that member") {
        Emb fused = importance_fuse<double>({e, e}, est);
        for (std::size_t i = 0; i < e.data.numel(); ++i) CHECK(fused.data.at(i) == e.data.at(i));
    }
}

TEST_CASE("importance fuse: weighted sum from crafted importances") {
    // gen(e) = e + 1 gives maps sigma(2)=0.8808 for e=1 and sigma(0)=0.5 for
    // e=-1; the fused value is then softmax-weighted: 0.594 - 0.406.
    Emb e1 = make_emb({1, 1, 1}, {1.0});
    Emb e2 = make_emb({1, 1, 1}, {-1.0});
    ImportanceEstimator<double> est;
    est.generator.weight = Td::from({1, 1}, {1.0});
    est.generator.bias = Td::from({1}, {1.0});
    est.in_channels = 1;
    est.out_channels = 1;
    Emb fused = importance_fuse<double>({e1, e2}, est);
    // Oracle: scalar softmax of the two sigmoid maps, then weighted sum.
    const double m1 = 1.0 / (1.0 + std::exp(-2.0));
    const double m2 = 0.5;
    const double w1 = std::exp(m1) / (std::exp(m1) + std::exp(m2));
    const double expect = w1 * 1.0 + (1.0 - w1) * -1.0;
    CHECK(fused.data.at(0) == Catch::Approx(expect).epsilon(1e-12));
    CHECK(fused.data.at(0) == Catch::Approx(0.188).margin(5e-4));
}

TEST_CASE("importance fuse: convexity and permutation equivariance") {
    Rng rng(7);
    auto est = ImportanceEstimator<double>::make(2, 5, rng);
    std::vector<Emb> embs;
    for (int n = 0; n < 3; ++n)
        embs.push_back(Emb{Td::normal({2, 4, 4}, rng, 0.0, 1.5), n, EmbeddingSource::fused_multi_cav});

    Emb fused = importance_fuse(embs, est);
    for (std::size_t i = 0; i < fused.data.numel(); ++i) {
        double lo = embs[0].data.at(i), hi = embs[0].data.at(i);
        for (const auto& e : embs) {
            lo = std::min(lo, e.data.at(i));
            hi = std::max(hi, e.data.at(i));
        }
        CHECK(fused.data.at(i) >= lo - 1e-12);
        CHECK(fused.data.at(i) <= hi + 1e-12);
    }

    Emb permuted = importance_fuse<double>({embs[2], embs[0], embs[1]}, est);
    for (std::size_t i = 0; i < fused.data.numel(); ++i)
        CHECK(permuted.data.at(i) == Catch::Approx(fused.data.at(i)).margin(1e-12));

    CHECK_THROWS_AS(importance_fuse<double>({}, est), ArgumentError);
}

TEST_CASE("importance fuse: gradient w.r.t. generator weights vs finite differences") {
    Rng rng(8);
    auto est = ImportanceEstimator<double>::make(2, 3, rng);
    est.generator.weight.set_trainable(true);
    Emb a{Td::normal({2, 4, 4}, rng, 0.0, 1.0), 0, EmbeddingSource::fused_multi_cav};
    Emb b{Td::normal({2, 4, 4}, rng, 0.0, 1.0), 1, EmbeddingSource::fused_multi_cav};
    Td mask = Td::normal({2, 4, 4}, rng, 0.0, 1.0);

    auto loss = [&] {
        Emb fused = importance_fuse<double>({a, b}, est);
        return sum_all(mul(fused.data, mask));
    };
    auto rep = fd_check(est.generator.weight, loss, all_indices(est.generator.weight), 1e-4);
    CHECK(rep.max_rel_err <= 1e-3);
}
