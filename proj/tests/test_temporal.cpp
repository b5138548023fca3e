#include <catch2/catch_amalgamated.hpp>

#include "tbev/temporal/fusion.hpp"
#include "testing_util.hpp"

using namespace tbev;
using tbev::testing::fd_check;

using Td = Tensor<double>;
using Emb = BEVEmbedding<double>;

namespace {

Emb rand_emb(Shape shape, Rng& rng, int frame, double stddev = 1.0) {
    return Emb{Td::normal(std::move(shape), rng, 0.0, stddev), frame,
               EmbeddingSource::fused_multi_cav};
}

void set_identity(LinearLayer<double>& lin) {
    const int o = lin.weight.dim(0), k = lin.weight.dim(1);
    REQUIRE(o == k);
    for (int i = 0; i < o; ++i)
        for (int j = 0; j < k; ++j) lin.weight.at2(i, j) = (i == j) ? 1.0 : 0.0;
    if (lin.bias.defined())
        for (std::size_t i = 0; i < lin.bias.numel(); ++i) lin.bias.at(i) = 0.0;
}

void set_zero(LinearLayer<double>& lin) {
    for (std::size_t i = 0; i < lin.weight.numel(); ++i) lin.weight.at(i) = 0.0;
    if (lin.bias.defined())
        for (std::size_t i = 0; i < lin.bias.numel(); ++i) lin.bias.at(i) = 0.0;
}

// Brute-force deformable cross-attention: plain loops and scalar math,
// independent of the tensor op implementations.
std::vector<double> oracle_dca(const DeformableCrossAttention<double>& d,
                               const std::vector<double>& query,  // [P*C] row-major tokens
                               const std::vector<const Td*>& frames, int h, int w) {
    const int c = d.channels, a = d.heads, f = d.frames, m = d.keypoints;
    const int hd = c / a;
    const int p = h * w;
    auto matvec = [&](const LinearLayer<double>& lin, const double* x, std::vector<double>& out) {
        const int o = lin.weight.dim(0), k = lin.weight.dim(1);
        out.assign(std::size_t(o), 0.0);
        for (int i = 0; i < o; ++i) {
            double acc = lin.bias.defined() ? lin.bias.at(std::size_t(i)) : 0.0;
            for (int j = 0; j < k; ++j) acc += lin.weight.at2(i, j) * x[j];
            out[std::size_t(i)] = acc;
        }
    };

    // Per-frame value projections, token layout [P][C].
    std::vector<std::vector<double>> values(std::size_t(f),
                                            std::vector<double>(std::size_t(p) * c));
    std::vector<double> tmp;
    for (int fi = 0; fi < f; ++fi)
        for (int q = 0; q < p; ++q) {
            std::vector<double> tok(static_cast<std::size_t>(c));
            for (int cc = 0; cc < c; ++cc) tok[std::size_t(cc)] = frames[std::size_t(fi)]->at3(cc, q / w, q % w);
            matvec(d.value_proj, tok.data(), tmp);
            std::copy(tmp.begin(), tmp.end(), values[std::size_t(fi)].begin() + std::size_t(q) * c);
        }

    auto bilerp = [&](const std::vector<double>& toks, int ch, double x, double y) {
        const int x0 = int(std::floor(x)), y0 = int(std::floor(y));
        const double fx = x - x0, fy = y - y0;
        auto tap = [&](int yy, int xx) {
            if (xx < 0 || xx >= w || yy < 0 || yy >= h) return 0.0;
            return toks[std::size_t(yy * w + xx) * c + ch];
        };
        return (1 - fy) * ((1 - fx) * tap(y0, x0) + fx * tap(y0, x0 + 1)) +
               fy * ((1 - fx) * tap(y0 + 1, x0) + fx * tap(y0 + 1, x0 + 1));
    };

    std::vector<double> out(std::size_t(p) * c, 0.0);
    std::vector<double> offsets, logits;
    for (int q = 0; q < p; ++q) {
        const double* tok = query.data() + std::size_t(q) * c;
        matvec(d.offset_proj, tok, offsets);  // [A*F*M*2]
        matvec(d.weight_proj, tok, logits);   // [A*F*M]
        std::vector<double> head_out(std::size_t(c), 0.0);
        for (int ai = 0; ai < a; ++ai) {
            // softmax over the F*M samples of this head
            double mx = -1e300;
            for (int s = 0; s < f * m; ++s) mx = std::max(mx, logits[std::size_t(ai * f * m + s)]);
            double denom = 0;
            for (int s = 0; s < f * m; ++s) denom += std::exp(logits[std::size_t(ai * f * m + s)] - mx);
            for (int fi = 0; fi < f; ++fi)
                for (int mi = 0; mi < m; ++mi) {
                    const std::size_t s = std::size_t((ai * f + fi) * m + mi);
                    const double wgt = std::exp(logits[s] - mx) / denom;
                    const double dx = offsets[2 * s], dy = offsets[2 * s + 1];
                    const double sx = double(q % w) + dx, sy = double(q / w) + dy;
                    for (int dd = 0; dd < hd; ++dd)
                        head_out[std::size_t(ai * hd + dd)] +=
                            wgt * bilerp(values[std::size_t(fi)], ai * hd + dd, sx, sy);
                }
        }
        matvec(d.out_proj, head_out.data(), tmp);
        std::copy(tmp.begin(), tmp.end(), out.begin() + std::size_t(q) * c);
    }
    return out;
}

}  // namespace

TEST_CASE("temporal config validation") {
    TemporalConfig cfg;
    CHECK_NOTHROW(cfg.validate(64));
    cfg.num_heads = 3;
    CHECK_THROWS_AS(cfg.validate(64), ConfigError);
    cfg = TemporalConfig{};
    cfg.num_blocks = 0;
    CHECK_THROWS_AS(cfg.validate(64), ConfigError);
}

TEST_CASE("history buffer: capacity eviction and frame ordering") {
    Rng rng(3);
    HistoryBuffer<double> buf(2);
    CHECK(buf.empty());
    buf.push(rand_emb({1, 2, 2}, rng, 0));
    buf.push(rand_emb({1, 2, 2}, rng, 1));
    buf.push(rand_emb({1, 2, 2}, rng, 5));
    CHECK(buf.size() == 2);
    CHECK(buf.at(0).frame_index == 1);
    CHECK(buf.at(1).frame_index == 5);
    CHECK_THROWS_AS(buf.push(rand_emb({1, 2, 2}, rng, 5)), ArgumentError);
}

TEST_CASE("initial query: identical history reproduces the current embedding") {
    Rng rng(4);
    Emb cur = rand_emb({2, 3, 3}, rng, 7);
    HistoryBuffer<double> buf(1);
    buf.push(Emb{cur.data.clone(), 6, cur.source});
    auto est = ImportanceEstimator<double>::make(2, 4, rng);
    Emb q = initial_query(cur, buf, est);
    for (std::size_t i = 0; i < cur.data.numel(); ++i) CHECK(q.data.at(i) == cur.data.at(i));

    HistoryBuffer<double> empty(1);
    CHECK_THROWS_AS(initial_query(cur, empty, est), ArgumentError);
    HistoryBuffer<double> wrong(1);
    wrong.push(rand_emb({2, 2, 2}, rng, 1));
    CHECK_THROWS_AS(initial_query(cur, wrong, est), ArgumentError);
}

TEST_CASE("initial query: equal importances average the members") {
    // Zero generator gives every member the same importance map.
    ImportanceEstimator<double> est;
    est.generator = LinearLayer<double>::make_zero(1, 1);
    est.in_channels = 1;
    est.out_channels = 1;
    Emb cur{Td::full({1, 1, 1}, 2.0), 1, EmbeddingSource::fused_multi_cav};
    HistoryBuffer<double> buf(1);
    buf.push(Emb{Td::full({1, 1, 1}, 0.0), 0, EmbeddingSource::fused_multi_cav});
    Emb q = initial_query(cur, buf, est);
    CHECK(q.data.at(0) == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("bilinear sample: lattice reads, interior interpolation, zero padding") {
    Emb e{Td::from({1, 2, 2}, {0, 1, 2, 3}), 0, EmbeddingSource::fused_multi_cav};
    CHECK(bilinear_sample(e, 1.0, 0.0)[0] == 1.0);
    CHECK(bilinear_sample(e, 0.5, 0.5)[0] == Catch::Approx(1.5));
    CHECK(bilinear_sample(e, -1.0, -1.0)[0] == 0.0);
}

TEST_CASE("deformable cross-attention: degenerate identity cases") {
    Rng rng(5);
    SECTION("zero offsets, one head, one keypoint, identity projections") {
        auto d = DeformableCrossAttention<double>::make(2, 1, 1, 1, rng);
        set_identity(d.value_proj);
        set_identity(d.out_proj);
        set_zero(d.weight_proj);
        Td frame = Td::normal({2, 3, 3}, rng, 0.0, 1.0);
        Td query = chw_to_tokens(Td::normal({2, 3, 3}, rng, 0.0, 1.0));
        Td out = d.forward(query, {frame}, 3, 3);
        Td expect = chw_to_tokens(frame);
        for (std::size_t i = 0; i < out.numel(); ++i)
            CHECK(out.at(i) == Catch::Approx(expect.at(i)).margin(1e-12));
    }
    SECTION("two keypoints with equal logits average two identical samples") {
        auto d = DeformableCrossAttention<double>::make(2, 1, 2, 1, rng);
        set_identity(d.value_proj);
        set_identity(d.out_proj);
        set_zero(d.weight_proj);
        Td frame = Td::normal({2, 3, 3}, rng, 0.0, 1.0);
        Td query = chw_to_tokens(Td::normal({2, 3, 3}, rng, 0.0, 1.0));
        Td out = d.forward(query, {frame}, 3, 3);
        Td expect = chw_to_tokens(frame);
        for (std::size_t i = 0; i < out.numel(); ++i)
            CHECK(out.at(i) == Catch::Approx(expect.at(i)).margin(1e-12));
    }
    SECTION("fixed offset (+0.5,+0.5) samples the bilinear oracle value") {
        auto d = DeformableCrossAttention<double>::make(1, 1, 1, 1, rng);
        set_identity(d.value_proj);
        set_identity(d.out_proj);
        set_zero(d.weight_proj);
        d.offset_proj.bias.at(0) = 0.5;
        d.offset_proj.bias.at(1) = 0.5;
        Td frame = Td::from({1, 2, 2}, {0, 1, 2, 3});
        Td query = chw_to_tokens(frame);
        Td out = d.forward(query, {frame}, 2, 2);
        CHECK(out.at2(0, 0) == Catch::Approx(1.5));
    }
    SECTION("frame count mismatch") {
        auto d = DeformableCrossAttention<double>::make(2, 1, 1, 2, rng);
        Td frame = Td::zeros({2, 3, 3});
        CHECK_THROWS_AS(d.forward(chw_to_tokens(frame), {frame}, 3, 3), ArgumentError);
    }
}

TEST_CASE("deformable cross-attention: offsets start at exactly zero") {
    Rng rng(6);
    auto d = DeformableCrossAttention<double>::make(8, 4, 4, 2, rng);
    Td query = Td::normal({5 * 5, 8}, rng, 0.0, 3.0);
    Td off = d.predict_offsets(query);
    for (std::size_t i = 0; i < off.numel(); ++i) CHECK(off.at(i) == 0.0);
}

TEST_CASE("deformable cross-attention: weights sum to one per head and query") {
    Rng rng(7);
    auto d = DeformableCrossAttention<double>::make(8, 2, 3, 2, rng);
    Td query = Td::normal({4 * 4, 8}, rng, 0.0, 2.0);
    Td wts = d.predict_weights(query);
    REQUIRE(wts.shape() == Shape{4 * 4 * 2, 2 * 3});
    for (int r = 0; r < wts.dim(0); ++r) {
        double s = 0;
        for (int cc = 0; cc < wts.dim(1); ++cc) s += wts.at2(r, cc);
        CHECK(std::abs(s - 1.0) <= 1e-5);
    }
}

TEST_CASE("deformable cross-attention: brute-force oracle equivalence on random 8x8") {
    Rng rng(8);
    auto d = DeformableCrossAttention<double>::make(8, 4, 4, 2, rng);
    // Random offset behavior rather than the zero init.
    d.offset_proj = LinearLayer<double>::make(8, 4 * 2 * 4 * 2, rng);
    for (std::size_t i = 0; i < d.offset_proj.weight.numel(); ++i) d.offset_proj.weight.at(i) *= 0.5;

    Td f0 = Td::normal({8, 8, 8}, rng, 0.0, 1.0);
    Td f1 = Td::normal({8, 8, 8}, rng, 0.0, 1.0);
    Td query = Td::normal({64, 8}, rng, 0.0, 1.0);

    Td out = d.forward(query, {f0, f1}, 8, 8);
    std::vector<double> qv(query.data(), query.data() + query.numel());
    auto expect = oracle_dca(d, qv, {&f0, &f1}, 8, 8);
    REQUIRE(out.numel() == expect.size());
    double max_err = 0;
    for (std::size_t i = 0; i < expect.size(); ++i)
        max_err = std::max(max_err, std::abs(out.at(i) - expect[i]));
    CHECK(max_err <= 1e-5);
}

TEST_CASE("attention block: shape preservation and zeroed-branch behavior") {
    Rng rng(9);
    TemporalConfig cfg;
    cfg.num_heads = 2;
    cfg.history_len = 1;
    auto block = AttentionBlock<double>::make(6, cfg, rng);
    Td x = Td::normal({4 * 4, 6}, rng, 0.0, 1.0);
    Td f0 = Td::normal({6, 4, 4}, rng, 0.0, 1.0);
    Td f1 = Td::normal({6, 4, 4}, rng, 0.0, 1.0);

    Td y = block.forward(x, {f0, f1}, 4, 4);
    CHECK(y.shape() == x.shape());

    set_zero(block.self_attn.out_proj);
    set_zero(block.cross_attn.out_proj);
    set_zero(block.ffn.lin2);
    Td y2 = block.forward(x, {f0, f1}, 4, 4);
    Td expect = layer_norm(x, Td::full({6}, 1.0), Td::zeros({6}));
    for (std::size_t i = 0; i < y2.numel(); ++i)
        CHECK(y2.at(i) == Catch::Approx(expect.at(i)).margin(1e-4));
}

TEST_CASE("attention block: gradient reaches every parameter") {
    Rng rng(10);
    TemporalConfig cfg;
    cfg.num_heads = 2;
    cfg.history_len = 1;
    auto block = AttentionBlock<double>::make(6, cfg, rng);
    // Nonzero offsets so sampling-position gradients are represented; the
    // bias keeps positions away from the bilinear kinks at integer
    // coordinates where finite differences straddle a derivative jump.
    block.cross_attn.offset_proj = LinearLayer<double>::make(6, 2 * 2 * 4 * 2, rng);
    for (std::size_t i = 0; i < block.cross_attn.offset_proj.weight.numel(); ++i)
        block.cross_attn.offset_proj.weight.at(i) *= 0.05;
    for (std::size_t i = 0; i < block.cross_attn.offset_proj.bias.numel(); ++i)
        block.cross_attn.offset_proj.bias.at(i) = 0.37;
    ParamList<double> params;
    block.collect("block", params);
    set_trainable(params, true);

    Td x = Td::normal({4 * 4, 6}, rng, 0.0, 1.0);
    Td f0 = Td::normal({6, 4, 4}, rng, 0.0, 1.0);
    Td f1 = Td::normal({6, 4, 4}, rng, 0.0, 1.0);
    Td mask = Td::normal({4 * 4, 6}, rng, 0.0, 1.0);

    auto loss_fn = [&] { return sum_all(mul(block.forward(x, {f0, f1}, 4, 4), mask)); };
    GradStore<double> grads = backward(loss_fn());
    for (auto& p : params) {
        const std::vector<double>* g = grads.find(p.tensor);
        REQUIRE(g != nullptr);
        double mx = 0;
        for (double v : *g) mx = std::max(mx, std::abs(v));
        INFO(p.name);
        CHECK(mx > 0.0);
    }

    // Finite-difference spot check on three random parameters.
    for (int k = 0; k < 3; ++k) {
        auto& p = params[rng.below(params.size())];
        auto idx = tbev::testing::sample_indices(p.tensor, 2, rng);
        CHECK(fd_check(p.tensor, loss_fn, idx, 1e-5).max_rel_err <= 1e-4);
    }
}

TEST_CASE("temporal forward: empty history bypass is bit-exact") {
    Rng rng(11);
    TemporalConfig cfg;
    cfg.num_heads = 2;
    auto tf = TemporalFusion<double>::make(4, cfg, rng);
    Emb cur = rand_emb({4, 5, 5}, rng, 3);
    HistoryBuffer<double> buf(cfg.history_len);
    Emb out = tf.forward(cur, buf);
    REQUIRE(out.data.numel() == cur.data.numel());
    for (std::size_t i = 0; i < cur.data.numel(); ++i) CHECK(out.data.at(i) == cur.data.at(i));
    CHECK(out.frame_index == cur.frame_index);
}

TEST_CASE("temporal forward: shape preservation and finiteness") {
    Rng rng(12);
    for (int heads : {1, 2}) {
        for (int hist : {1, 2}) {
            TemporalConfig cfg;
            cfg.num_heads = heads;
            cfg.history_len = hist;
            cfg.num_blocks = 2;
            auto tf = TemporalFusion<double>::make(6, cfg, rng);
            HistoryBuffer<double> buf(hist);
            buf.push(rand_emb({6, 4, 4}, rng, 0));
            Emb cur = rand_emb({6, 4, 4}, rng, 1);
            Emb out = tf.forward(cur, buf);
            CHECK(out.data.shape() == cur.data.shape());
            CHECK(out.finite());
            CHECK(out.source == EmbeddingSource::temporal_refined);
        }
    }
}

TEST_CASE("temporal forward: identical history stays near the current embedding") {
    Rng rng(19);
    TemporalConfig cfg;
    cfg.num_heads = 2;
    auto tf = TemporalFusion<double>::make(4, cfg, rng);
    Emb cur = rand_emb({4, 4, 4}, rng, 5);
    HistoryBuffer<double> buf(1);
    buf.push(Emb{cur.data.clone(), 4, cur.source});
    Emb out = tf.forward(cur, buf);
    CHECK(out.data.shape() == cur.data.shape());
    CHECK(out.finite());
}

TEST_CASE("temporal forward: block depth changes the output") {
    Rng rng1(13);
    TemporalConfig cfg1;
    cfg1.num_heads = 2;
    cfg1.num_blocks = 1;
    auto tf1 = TemporalFusion<double>::make(4, cfg1, rng1);

    Rng rng2(13);
    TemporalConfig cfg3 = cfg1;
    cfg3.num_blocks = 3;
    auto tf3 = TemporalFusion<double>::make(4, cfg3, rng2);

    Rng rd(14);
    Emb cur = rand_emb({4, 4, 4}, rd, 1);
    Emb past = rand_emb({4, 4, 4}, rd, 0);
    HistoryBuffer<double> b1(1), b3(1);
    b1.push(past);
    b3.push(past);
    Td o1 = tf1.forward(cur, b1).data;
    Td o3 = tf3.forward(cur, b3).data;
    double diff = 0;
    for (std::size_t i = 0; i < o1.numel(); ++i) diff = std::max(diff, std::abs(o1.at(i) - o3.at(i)));
    CHECK(diff > 0.0);
}

TEST_CASE("temporal forward: gradients match finite differences on C=8 8x8 H=1") {
    Rng rng(15);
    TemporalConfig cfg;
    cfg.num_heads = 4;
    cfg.history_len = 1;
    cfg.num_blocks = 2;
    auto tf = TemporalFusion<double>::make(8, cfg, rng);
    // Nonzero offset projections with a half-pixel-ish bias: positions stay
    // off the bilinear kinks at integer coordinates, where central
    // differences straddle a derivative jump.
    for (auto& b : tf.blocks) {
        b.cross_attn.offset_proj = LinearLayer<double>::make(8, 4 * 2 * 4 * 2, rng);
        for (std::size_t i = 0; i < b.cross_attn.offset_proj.weight.numel(); ++i)
            b.cross_attn.offset_proj.weight.at(i) *= 0.05;
        for (std::size_t i = 0; i < b.cross_attn.offset_proj.bias.numel(); ++i)
            b.cross_attn.offset_proj.bias.at(i) = 0.37;
    }
    ParamList<double> params = tf.params();
    set_trainable(params, true);

    Rng rd(16);
    Emb cur = rand_emb({8, 8, 8}, rd, 1);
    Emb past = rand_emb({8, 8, 8}, rd, 0);

    auto loss_fn = [&] {
        HistoryBuffer<double> buf(1);
        buf.push(Emb{past.data, past.frame_index, past.source});
        return sum_all(tf.forward(cur, buf).data);
    };

    Rng pick(17);
    for (int k = 0; k < 5; ++k) {
        auto& p = params[pick.below(params.size())];
        auto idx = tbev::testing::sample_indices(p.tensor, 1, pick);
        INFO(p.name << "[" << idx[0] << "]");
        CHECK(fd_check(p.tensor, loss_fn, idx, 1e-3).max_rel_err <= 1e-2);
    }
}

TEST_CASE("feature aggregate: identity, symmetry and crafted weights") {
    Rng rng(18);
    auto est = ImportanceEstimator<double>::make(2, 4, rng);
    Emb cur = rand_emb({2, 3, 3}, rng, 2);

    SECTION("equal inputs return the input") {
        Emb out = feature_aggregate(cur, Emb{cur.data.clone(), 2, cur.source}, est);
        for (std::size_t i = 0; i < cur.data.numel(); ++i) CHECK(out.data.at(i) == cur.data.at(i));
    }
    SECTION("equal importances average values 4 and 0 to 2") {
        ImportanceEstimator<double> zero;
        zero.generator = LinearLayer<double>::make_zero(1, 1);
        zero.in_channels = 1;
        zero.out_channels = 1;
        Emb a{Td::full({1, 1, 1}, 4.0), 0, EmbeddingSource::fused_multi_cav};
        Emb b{Td::full({1, 1, 1}, 0.0), 0, EmbeddingSource::temporal_refined};
        CHECK(feature_aggregate(a, b, zero).data.at(0) == Catch::Approx(2.0).margin(1e-12));
    }
    SECTION("importances 0.9/0.1 give softmax weights") {
        auto w = relative_importance<double>({Td::full({1, 1}, 0.9), Td::full({1, 1}, 0.1)});
        CHECK(w[0].at(0) == Catch::Approx(0.6899744811276125).epsilon(1e-9));
        CHECK(w[1].at(0) == Catch::Approx(0.3100255188723875).epsilon(1e-9));
    }
    SECTION("shape mismatch") {
        Emb bad = rand_emb({2, 2, 2}, rng, 1);
        CHECK_THROWS_AS(feature_aggregate(cur, bad, est), ArgumentError);
    }
}
