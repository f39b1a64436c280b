#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "test_support.hpp"
#include "tfsgc/decoder.hpp"
#include "tfsgc/decoding.hpp"
#include "tfsgc/model.hpp"

using namespace tfsgc;

namespace {

GraphEncoding<float> make_encoding(Tape& tape, const Array& g, std::array<std::size_t, kExperts> sizes) {
    GraphEncoding<float> enc;
    enc.all = tape.constant(g);
    enc.sizes = sizes;
    std::size_t off = 0;
    for (std::size_t k = 0; k < kExperts; ++k) {
        if (sizes[k] > 0) enc.segments[k] = slice_rows(enc.all, off, sizes[k]);
        off += sizes[k];
    }
    return enc;
}

Model random_model(std::uint64_t seed, float out_scale = 8.0f, std::size_t layers = 2) {
    ModelConfig cfg = test::small_config(16, 2, 12);
    cfg.decoder.layers = layers;
    cfg.decoder.max_len = 6;
    Model m(cfg, seed);
    for (auto& v : m.params().value("out.w").values()) v *= out_scale;
    for (auto& v : m.params().value("node_embed").values()) v *= 40.0f;
    return m;
}

std::vector<float> lse_normalize(std::vector<double> p) {
    std::vector<float> out;
    for (double v : p) out.push_back(static_cast<float>(std::log(v)));
    return out;
}

}  // namespace

TEST(SoftRoute, HandExample) {
    Tape tape;
    auto x = tape.constant(Array::matrix({{1, 0}}));
    std::array<std::optional<Var>, kExperts> z = {tape.constant(Array::matrix({{1, 0}})),
                                                  tape.constant(Array::matrix({{0, 1}})),
                                                  tape.constant(Array::matrix({{0, 0}}))};
    const auto r = soft_route(x, z);
    const double e = std::exp(1.0);
    EXPECT_NEAR(r.alpha.value()(0, 0), e / (e + 2), 1e-6);
    EXPECT_NEAR(r.alpha.value()(0, 0), 0.576, 1e-3);
    EXPECT_NEAR(r.alpha.value()(0, 1), 1 / (e + 2), 1e-6);
    EXPECT_NEAR(r.alpha.value()(0, 2), 0.212, 1e-3);
    EXPECT_NEAR(r.z.value()(0, 0), e / (e + 2), 1e-6);
    EXPECT_NEAR(r.z.value()(0, 1), 1 / (e + 2), 1e-6);
}

TEST(SoftRoute, EqualExpertsAndSingleExpert) {
    Tape tape;
    const Array v = Array::matrix({{0.3f, -1.1f, 2.0f}});
    auto x = tape.constant(Array::matrix({{0.5f, 0.2f, -0.7f}}));
    const auto r = soft_route(x, {tape.constant(v), tape.constant(v), tape.constant(v)});
    for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(r.alpha.value()(0, k), 1.0 / 3.0, 1e-6);
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(r.z.value()(0, c), v(0, c), 1e-6);

    const auto only = soft_route(x, {tape.constant(v), std::nullopt, std::nullopt});
    EXPECT_EQ(only.alpha.value(), Array::matrix({{1, 0, 0}}));
    EXPECT_EQ(only.z.value(), v);

    EXPECT_THROW(soft_route(x, {std::nullopt, std::nullopt, std::nullopt}), std::invalid_argument);
    EXPECT_THROW(soft_route(x, {tape.constant(v), std::nullopt, std::nullopt}, Expert::relation), std::invalid_argument);
}

TEST(NextWordDistribution, Examples) {
    const std::vector<float> z = {0.0f, 0.0f};
    const auto uni = next_word_distribution<float>(z, Array(2, 5), Array(1, 5));
    for (float p : uni.values()) EXPECT_FLOAT_EQ(p, 0.2f);

    const auto peaked = next_word_distribution<float>(z, Array(2, 4), Array::matrix({{0, 30, 0, 0}}));
    EXPECT_GT(static_cast<double>(peaked(0, 1)), 1.0 - 1e-9);

    const auto hand = next_word_distribution<float>(z, Array(2, 3), Array::matrix({{1, 2, 3}}));
    EXPECT_NEAR(hand(0, 0), 0.0900, 1e-4);
    EXPECT_NEAR(hand(0, 1), 0.2447, 1e-4);
    EXPECT_NEAR(hand(0, 2), 0.6652, 1e-4);

    const std::vector<float> z2 = {1.0f, -2.0f};
    const auto aff = next_word_distribution<float>(z2, Array::matrix({{1, 0, 2}, {0, 1, 1}}), Array(1, 3));
    const double e0 = std::exp(1.0), e1 = std::exp(-2.0), e2 = std::exp(0.0);
    EXPECT_NEAR(aff(0, 0), e0 / (e0 + e1 + e2), 1e-6);
    EXPECT_NEAR(aff(0, 0) + aff(0, 1) + aff(0, 2), 1.0, 1e-5);
}

TEST(MoeBlock, EmptyAttributeAndRelationSegmentsRouteToObjects) {
    Model m = random_model(5);
    Tape tape;
    const Array g = Array::matrix({{0.1f, 0.2f, -0.3f, 0.4f, 0.5f, -0.6f, 0.7f, 0.8f, 0.9f, 1.0f, -1.1f, 1.2f, 1.3f, 1.4f, -1.5f, 1.6f}});
    auto enc = make_encoding(tape, g, {1, 0, 0});
    const std::vector<int> in = {kBos, 5, 6};
    const auto xd = add(scale(embedding(tape.param(m.params(), "word_embed"), std::span<const int>(in)), 4.0f),
                        tape.constant(sinusoidal_positions<float>(3, 16)));
    const auto r = moe_decoder_block(tape, m.params(), m.config(), 0, xd, enc);
    for (std::size_t t = 0; t < 3; ++t) {
        EXPECT_EQ(r.alpha.value()(t, 0), 1.0f);
        EXPECT_EQ(r.alpha.value()(t, 1), 0.0f);
        EXPECT_EQ(r.alpha.value()(t, 2), 0.0f);
    }
    const auto causal = causal_mask<float>(3);
    auto xs = mha(xd, xd, xd, bind_attention(tape, m.params(), "dec.0.self"), 2, &causal);
    auto y = mha(xs, enc.all, enc.all, bind_attention(tape, m.params(), "dec.0.expert.object.attn"), 2, nullptr);
    auto zo = ffn(y, bind_ffn(tape, m.params(), "dec.0.expert.object.ffn"));
    EXPECT_EQ(r.z.value(), zo.value());
}

TEST(MoeBlock, TinyHandEvaluation) {
    // d=2, h=1, identity projections, zero FFN weights, one node per segment.
    ParamStore p;
    Array eye = Array::matrix({{1, 0}, {0, 1}});
    auto add_attn = [&](const std::string& pre) {
        for (const char* w : {".wq", ".wk", ".wv", ".wo"}) p.add(pre + w, eye);
        p.add(pre + ".ln_gain", Array(1, 2, 1.0f));
        p.add(pre + ".ln_bias", Array(1, 2, 0.0f));
    };
    auto add_ffn = [&](const std::string& pre) {
        p.add(pre + ".w1", Array(2, 8));
        p.add(pre + ".b1", Array(1, 8));
        p.add(pre + ".w2", Array(8, 2));
        p.add(pre + ".b2", Array(1, 2));
        p.add(pre + ".ln_gain", Array(1, 2, 1.0f));
        p.add(pre + ".ln_bias", Array(1, 2, 0.0f));
    };
    add_attn("dec.0.self");
    for (const char* e : {"object", "attribute", "relation"}) {
        add_attn(std::string("dec.0.expert.") + e + ".attn");
        add_ffn(std::string("dec.0.expert.") + e + ".ffn");
    }
    ModelConfig cfg;
    cfg.encoder = {2, 1, 0};
    cfg.decoder = {2, 1, 1, 5, 4};
    cfg.node_vocab_size = 1;

    Tape tape;
    const Array g = Array::matrix({{2.0f, 0.0f}, {0.0f, 3.0f}, {1.0f, 1.5f}});
    auto enc = make_encoding(tape, g, {1, 1, 1});
    const Array xd = Array::matrix({{0.5f, 0.1f}});
    const auto r = moe_decoder_block(tape, p, cfg, 0, tape.constant(xd), enc);

    auto ln = [](double a, double b) {
        const double m = (a + b) / 2, v = ((a - m) * (a - m) + (b - m) * (b - m)) / 2;
        const double s = std::sqrt(v + 1e-5);
        return std::array<double, 2>{(a - m) / s, (b - m) / s};
    };
    // Self-attention over one token: X = LN(xd + xd).
    const auto x = ln(2 * 0.5, 2 * 0.1);
    std::array<std::array<double, 2>, 3> z{};
    std::array<double, 3> logit{};
    for (std::size_t k = 0; k < 3; ++k) {
        const auto y = ln(g(k, 0) + x[0], g(k, 1) + x[1]);  // single key: A = [[1]]
        z[k] = ln(y[0], y[1]);                              // zero FFN: LN(Y)
        logit[k] = x[0] * z[k][0] + x[1] * z[k][1];
    }
    const double mx = std::max({logit[0], logit[1], logit[2]});
    double total = 0;
    for (double l : logit) total += std::exp(l - mx);
    std::array<double, 2> out{};
    for (std::size_t k = 0; k < 3; ++k) {
        const double a = std::exp(logit[k] - mx) / total;
        EXPECT_NEAR(r.alpha.value()(0, k), a, 1e-5);
        out[0] += a * z[k][0];
        out[1] += a * z[k][1];
    }
    EXPECT_NEAR(r.z.value()(0, 0), out[0], 1e-4);
    EXPECT_NEAR(r.z.value()(0, 1), out[1], 1e-4);
}

TEST(Decoder, PinnedObjectRouteEqualsObjectOnlyDecoder) {
    Model m = random_model(7);
    std::mt19937_64 rng(3);
    const auto nodes = test::random_graph_vocabulary();
    for (int trial = 0; trial < 50; ++trial) {
        const auto g = test::random_graph(rng);
        const auto lg = linearize(g, nodes);
        Tape tape;
        const auto full = m.encode(tape, lg);
        const Array go = full.segment(Expert::object).value();
        auto only = make_encoding(tape, go, {lg.n_obj, 0, 0});
        const std::vector<int> in = {kBos, 4, 7, 9};
        ModelConfig pinned = m.config();
        pinned.pinned_route = Expert::object;
        const auto a = decode_forward(tape, m.params(), pinned, full, std::span<const int>(in));
        const auto b = decode_forward(tape, m.params(), m.config(), only, std::span<const int>(in));
        EXPECT_EQ(a.logits.value(), b.logits.value());
    }
}

TEST(Decoder, KeyValuePermutationInvariance) {
    Model m = random_model(8);
    std::mt19937_64 rng(4);
    const auto nodes = test::random_graph_vocabulary();
    for (int trial = 0; trial < 50; ++trial) {
        const auto lg = linearize(test::random_graph(rng), nodes);
        Tape tape;
        const auto enc = m.encode(tape, lg);
        const Array g = enc.all.value();
        std::vector<std::size_t> perm(g.rows());
        std::size_t off = 0;
        for (std::size_t k = 0; k < kExperts; ++k) {
            std::iota(perm.begin() + static_cast<long>(off), perm.begin() + static_cast<long>(off + enc.sizes[k]), off);
            std::shuffle(perm.begin() + static_cast<long>(off), perm.begin() + static_cast<long>(off + enc.sizes[k]), rng);
            off += enc.sizes[k];
        }
        Array gp(g.rows(), g.cols());
        for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t c = 0; c < g.cols(); ++c) gp(i, c) = g(perm[i], c);
        const std::vector<int> in = {kBos, 5, 8, 6};
        const auto a = m.decode(tape, make_encoding(tape, g, enc.sizes), in).logits.value();
        const auto b = m.decode(tape, make_encoding(tape, gp, enc.sizes), in).logits.value();
        for (std::size_t i = 0; i < a.size(); ++i) EXPECT_LE(std::abs(a[i] - b[i]), 1e-4f * std::max(1.0f, std::abs(a[i])));
    }
}

TEST(Decoder, EncoderlessVariantRuns) {
    ModelConfig cfg = test::small_config(16, 2, 12);
    cfg.encoder.layers = 0;
    Model m(cfg, 2);
    std::mt19937_64 rng(5);
    const auto lg = linearize(test::random_graph(rng), test::random_graph_vocabulary());
    const auto r = decode_greedy(m, lg);
    EXPECT_FALSE(r.tokens.empty());
    EXPECT_EQ(r.routes.size(), r.tokens.size());
}

TEST(Decoding, RoutesStayOnSimplex) {
    Model m = random_model(9);
    std::mt19937_64 rng(6);
    const auto nodes = test::random_graph_vocabulary();
    for (int trial = 0; trial < 40; ++trial) {
        const auto lg = linearize(test::random_graph(rng), nodes);
        for (const auto& r : {decode_greedy(m, lg), decode_beam(m, lg, 3), decode_sample(m, lg, rng)}) {
            ASSERT_EQ(r.routes.size(), r.tokens.size());
            ASSERT_EQ(r.logprobs.size(), r.tokens.size());
            for (const auto& step : r.routes) {
                ASSERT_EQ(step.size(), 2u);
                for (const auto& a : step) {
                    EXPECT_NEAR(a.sum(), 1.0f, 1e-5f);
                    for (std::size_t k = 0; k < 3; ++k) {
                        EXPECT_GE(a[k], 0.0f);
                        EXPECT_LE(a[k], 1.0f);
                    }
                }
            }
        }
    }
}

TEST(Decoding, ZeroOutputProjectionEmitsLowestIdUntilMaxLen) {
    Model m = random_model(10);
    m.params().value("out.w").fill(0.0f);
    m.params().value("out.b").fill(0.0f);
    const auto lg = linearize(SceneGraph{{"o1"}, {}, {}}, test::random_graph_vocabulary());
    const auto r = decode_greedy(m, lg);
    EXPECT_EQ(r.tokens, std::vector<int>(m.config().decoder.max_len, kPad));
    for (float lp : r.logprobs) EXPECT_NEAR(lp, -std::log(12.0f), 1e-5f);
}

TEST(Decoding, BeamOneEqualsGreedy) {
    std::mt19937_64 rng(11);
    const auto nodes = test::random_graph_vocabulary();
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Model m = random_model(seed);
        for (int trial = 0; trial < 10; ++trial) {
            const auto lg = linearize(test::random_graph(rng), nodes);
            const auto g = decode_greedy(m, lg), b = decode_beam(m, lg, 1);
            EXPECT_EQ(g.tokens, b.tokens);
            EXPECT_EQ(g.logprobs, b.logprobs);
        }
    }
}

TEST(BeamSearch, TwoStepToyFindsBetterSequence) {
    // vocab: PAD BOS EOS w3 w4
    auto step = [](std::span<const int> prefix) {
        std::vector<double> p(5, 1e-6);
        if (prefix.size() == 1) {
            p[3] = 0.55;
            p[4] = 0.45;
        } else if (prefix.back() == 3) {
            p[kEos] = 0.4;
            p[3] = 0.3;
            p[4] = 0.3;
        } else {
            p[kEos] = 0.95;
            p[3] = 0.025;
            p[4] = 0.025;
        }
        double s = std::accumulate(p.begin(), p.end(), 0.0);
        for (double& v : p) v /= s;
        return DecoderStep{lse_normalize(p), {}};
    };
    // Brute force over every sequence of at most two tokens.
    double best = -1e300;
    std::vector<int> best_seq;
    for (int a = 0; a < 5; ++a) {
        std::vector<int> pre = {kBos};
        const double la = step(pre).logprobs[static_cast<std::size_t>(a)];
        if (a == kEos) {
            if (la > best) best = la, best_seq = {a};
            continue;
        }
        pre.push_back(a);
        for (int b = 0; b < 5; ++b) {
            const double lb = la + step(pre).logprobs[static_cast<std::size_t>(b)];
            if (lb > best) best = lb, best_seq = {a, b};
        }
    }
    EXPECT_EQ(best_seq, (std::vector<int>{4, kEos}));
    const auto greedy = greedy_search(step, 2);
    EXPECT_EQ(greedy.tokens, (std::vector<int>{3, kEos}));
    const auto beam = beam_search(step, 2, 2);
    EXPECT_EQ(beam.tokens, best_seq);
    EXPECT_NEAR(beam.total_logprob(), best, 1e-6);
    EXPECT_GT(beam.total_logprob(), greedy.total_logprob());
}

TEST(BeamSearch, LikelihoodNonDecreasingInBeamSize) {
    std::mt19937_64 rng(12);
    const auto nodes = test::random_graph_vocabulary();
    std::size_t violations = 0, total = 0;
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
        Model m = random_model(100 + seed, 3.0f);
        for (int trial = 0; trial < 8; ++trial) {
            const auto lg = linearize(test::random_graph(rng), nodes);
            double prev = -1e300;
            for (std::size_t b = 1; b <= 5; ++b) {
                const double lp = decode_beam(m, lg, b).total_logprob();
                ++total;
                if (lp < prev - 1e-6) ++violations;
                prev = std::max(prev, lp);
            }
        }
    }
    EXPECT_EQ(violations, 0u) << "of " << total;
}

TEST(BeamSearch, RejectsZeroBeam) {
    auto step = [](std::span<const int>) { return DecoderStep{{0.0f, -1.0f, -2.0f}, {}}; };
    EXPECT_THROW(beam_search(step, 0, 3), std::invalid_argument);
}
