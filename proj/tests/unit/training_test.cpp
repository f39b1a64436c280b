#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "test_support.hpp"
#include "tfsgc/synth.hpp"
#include "tfsgc/training.hpp"

using namespace tfsgc;

namespace {

struct SmallData {
    SynthDataset ds;
    Vocabularies vocab;
    std::vector<Example> train, val;

    explicit SmallData(std::size_t n_train = 120) {
        SynthSpec spec;
        spec.seed = 4;
        spec.n_train = n_train;
        spec.n_val = 20;
        spec.n_test = 20;
        ds = generate_dataset(spec);
        vocab = build_vocabularies(ds.train);
        train = make_examples(ds.train, vocab);
        val = make_examples(ds.val, vocab);
    }

    ModelConfig model_config(std::size_t d = 16, std::size_t heads = 2) const {
        ModelConfig cfg;
        cfg.encoder = {d, heads, 1};
        cfg.decoder = {d, heads, 1, 20, vocab.words.size()};
        cfg.node_vocab_size = vocab.nodes.size();
        return cfg;
    }
};

TrainConfig quick_config(std::uint64_t seed = 1) {
    TrainConfig t;
    t.batch_size = 10;
    t.lr_xe = 2e-3;
    t.seed = seed;
    return t;
}

// Logits realizing the given per-row distribution exactly in log space.
Array log_probs(const std::vector<std::vector<double>>& p) {
    Array a(p.size(), p[0].size());
    for (std::size_t r = 0; r < p.size(); ++r)
        for (std::size_t c = 0; c < p[r].size(); ++c) a(r, c) = static_cast<float>(std::log(p[r][c]));
    return a;
}

}  // namespace

TEST(LearningRate, DecaysEveryFiveEpochs) {
    EXPECT_DOUBLE_EQ(learning_rate(5e-4, 0.8, 5, 1), 5e-4);
    EXPECT_DOUBLE_EQ(learning_rate(5e-4, 0.8, 5, 5), 5e-4);
    EXPECT_DOUBLE_EQ(learning_rate(5e-4, 0.8, 5, 6), 0.8 * 5e-4);
    EXPECT_DOUBLE_EQ(learning_rate(5e-4, 0.8, 5, 11), 0.64 * 5e-4);
    EXPECT_THROW(learning_rate(5e-4, 0.8, 5, 0), std::invalid_argument);
}

TEST(LearningRate, RlPhaseRestartsTheSchedule) {
    SmallData data(20);
    Model m(data.model_config(), 1);
    TrainConfig t;
    t.epochs_xe = 7;
    t.epochs_rl = 3;
    Trainer tr(m, t, data.vocab.words);
    EXPECT_EQ(tr.schedule(7).first, "xe");
    EXPECT_DOUBLE_EQ(tr.schedule(7).second, 0.8 * t.lr_xe);
    EXPECT_EQ(tr.schedule(8).first, "rl");
    EXPECT_DOUBLE_EQ(tr.schedule(8).second, t.lr_rl);
}

TEST(XeLoss, Examples) {
    Tape tape;
    const std::vector<int> t2 = {5, 6};
    // Probability 1 on every gold token.
    Array sure(2, 8, -1e4f);
    sure(0, 5) = 0.0f;
    sure(1, 6) = 0.0f;
    EXPECT_NEAR(xe_loss(tape.constant(sure), std::span<const int>(t2)).value()[0], 0.0f, 1e-6f);
    // Uniform over 16 words.
    EXPECT_NEAR(xe_loss(tape.constant(Array(2, 16)), std::span<const int>(t2)).value()[0], std::log(16.0f), 1e-5f);
    // Probabilities 0.5 and 0.25 on the gold tokens.
    std::vector<double> r0(8, 0.5 / 7), r1(8, 0.75 / 7);
    r0[5] = 0.5;
    r1[6] = 0.25;
    const float l = xe_loss(tape.constant(log_probs({r0, r1})), std::span<const int>(t2)).value()[0];
    EXPECT_NEAR(l, (std::log(2.0) + std::log(4.0)) / 2, 1e-5);
    EXPECT_NEAR(l, 1.0397, 1e-4);
}

TEST(XeLoss, PadPositionsAreExcluded) {
    Tape tape;
    std::vector<double> r0(8, 0.5 / 7), r1(8, 0.75 / 7), pad(8, 0.9 / 7);
    r0[5] = 0.5;
    r1[6] = 0.25;
    pad[3] = 0.1;
    const std::vector<int> t = {5, 6, kPad};
    const float l = xe_loss(tape.constant(log_probs({r0, r1, pad})), std::span<const int>(t)).value()[0];
    EXPECT_NEAR(l, (std::log(2.0) + std::log(4.0)) / 2, 1e-5);
    const std::vector<int> all_pad = {kPad, kPad};
    EXPECT_THROW(xe_loss(tape.constant(Array(2, 8)), std::span<const int>(all_pad)), std::invalid_argument);
    EXPECT_THROW(xe_loss(tape.constant(Array(2, 8)), std::span<const int>(t)), std::invalid_argument);
}

TEST(RouterLoss, Examples) {
    Tape tape;
    const std::array<bool, kExperts> all = {true, true, true};
    const std::vector<PosTag> noun = {PosTag::noun};
    EXPECT_NEAR(router_pos_loss(tape.constant(Array::matrix({{1, 0, 0}})), std::span<const PosTag>(noun), all).value()[0],
                0.0f, 1e-7f);
    const std::vector<PosTag> adj = {PosTag::adj};
    const Array third(1, 3, 1.0f / 3.0f);
    EXPECT_NEAR(router_pos_loss(tape.constant(third), std::span<const PosTag>(adj), all).value()[0], std::log(3.0f), 1e-5f);

    // OTHER positions contribute nothing whatever their routes.
    const Array routes = Array::matrix({{0.2f, 0.5f, 0.3f}, {0.7f, 0.2f, 0.1f}, {0.1f, 0.1f, 0.8f}});
    const std::vector<PosTag> a = {PosTag::verb, PosTag::other, PosTag::other};
    const std::vector<PosTag> b = {PosTag::prep, PosTag::other, PosTag::other};
    const std::vector<PosTag> c = {PosTag::verb};
    const float la = router_pos_loss(tape.constant(routes), std::span<const PosTag>(a), all).value()[0];
    EXPECT_NEAR(la, -std::log(0.3f), 1e-6f);
    EXPECT_EQ(la, router_pos_loss(tape.constant(routes), std::span<const PosTag>(b), all).value()[0]);
    EXPECT_THROW(router_pos_loss(tape.constant(routes), std::span<const PosTag>(c), all), std::invalid_argument);

    // Unavailable experts and all-OTHER sequences give zero.
    const std::array<bool, kExperts> objects_only = {true, false, false};
    EXPECT_EQ(router_pos_loss(tape.constant(routes), std::span<const PosTag>(a), objects_only).value()[0], 0.0f);
}

TEST(Scst, ZeroAdvantageGivesZeroGradient) {
    SmallData data(20);
    Model m(data.model_config(), 2);
    m.params().zero_grad();
    {
        Tape tape(m.params());
        const std::vector<int> toks = {5, 6, kEos};
        tape.backward(policy_gradient_loss(tape, m, data.train[0].graph, toks, 0.0));
    }
    for (std::size_t i = 0; i < m.params().size(); ++i)
        for (float g : m.params().grad(i).values()) ASSERT_EQ(g, 0.0f);

    // References made of words no caption can contain: every reward is 0.
    std::vector<Example> odd = {data.train[0], data.train[1]};
    for (auto& ex : odd) ex.references = {{"zzz", "qqq"}, {"xxx"}};
    Trainer tr(m, quick_config(), data.vocab.words);
    const auto scorer = make_reward_scorer(odd);
    std::vector<const Example*> batch = {&odd[0], &odd[1]};
    m.params().zero_grad();
    const auto st = tr.scst_batch(batch, scorer);
    EXPECT_EQ(st.sample_reward, 0.0);
    EXPECT_EQ(st.greedy_reward, 0.0);
    for (std::size_t i = 0; i < m.params().size(); ++i)
        for (float g : m.params().grad(i).values()) ASSERT_EQ(g, 0.0f);
}

TEST(Scst, PositiveAdvantageStepRaisesSequenceLogProbability) {
    SmallData data(20);
    Model m(data.model_config(), 3);
    const auto& ex = data.train[0];
    auto logp = [&]() {
        Tape tape;
        return -static_cast<double>(policy_gradient_loss(tape, m, ex.graph, ex.target, 1.0).value()[0]);
    };
    const double before = logp();
    m.params().zero_grad();
    {
        Tape tape(m.params());
        tape.backward(policy_gradient_loss(tape, m, ex.graph, ex.target, 0.7));
    }
    for (std::size_t i = 0; i < m.params().size(); ++i) {
        auto& w = m.params().value(i);
        const auto& g = m.params().grad(i);
        for (std::size_t k = 0; k < w.size(); ++k) w[k] -= 1e-3f * g[k];
    }
    EXPECT_GT(logp(), before);
}

TEST(Scst, UninitializedScorerIsRejected) {
    SmallData data(20);
    Model m(data.model_config(), 3);
    Trainer tr(m, quick_config(), data.vocab.words);
    std::vector<const Example*> batch = {&data.train[0]};
    EXPECT_THROW(tr.scst_batch(batch, CiderD{}), std::logic_error);
}

TEST(Training, OverfitsOneSample) {
    SmallData data(20);
    std::vector<Example> one = {data.train[3]};
    Model m(data.model_config(32, 4), 5);
    TrainConfig t;
    t.batch_size = 1;
    t.epochs_xe = 200;
    t.lr_xe = 1e-3;
    t.lr_decay = 1.0;
    Trainer tr(m, t, data.vocab.words);
    for (std::size_t e = 0; e < t.epochs_xe; ++e) tr.run_epoch(one);
    EXPECT_EQ(decode_greedy(m, one[0].graph).tokens, one[0].target);
}

TEST(Training, EpochOneLossIsDeterministic) {
    SmallData data;
    auto run = [&]() {
        Model m(data.model_config(), 11);
        Trainer tr(m, quick_config(11), data.vocab.words);
        return tr.run_epoch(data.train).loss;
    };
    const double a = run(), b = run();
    EXPECT_EQ(a, b);
    EXPECT_NEAR(a, b, std::abs(a) * 5e-8);
}

TEST(Training, LossDecreasesOverTenEpochs) {
    SmallData data;
    Model m(data.model_config(), 12);
    Trainer tr(m, quick_config(12), data.vocab.words);
    const double first = tr.run_epoch(data.train).loss;
    double last = first;
    for (int e = 2; e <= 10; ++e) last = tr.run_epoch(data.train, e == 10 ? &data.val : nullptr).loss;
    EXPECT_LT(last, first);
    EXPECT_EQ(tr.epoch(), 10u);
}

TEST(Training, NonFiniteLossAborts) {
    SmallData data(20);
    Model m(data.model_config(), 13);
    m.params().value("out.b")[5] = std::numeric_limits<float>::quiet_NaN();
    Trainer tr(m, quick_config(), data.vocab.words);
    EXPECT_THROW(tr.run_epoch(data.train), TrainingDiverged);
}

TEST(Training, RouterLossNeedsMixtureOfExperts) {
    SmallData data(20);
    ModelConfig cfg = data.model_config();
    cfg.moe = false;
    Model m(cfg, 1);
    TrainConfig t = quick_config();
    t.router_pos_weight = 0.5;
    EXPECT_THROW(Trainer(m, t, data.vocab.words), std::invalid_argument);
}

TEST(Training, RouterSupervisionAddsGradient) {
    SmallData data(20);
    Model a(data.model_config(), 14), b(data.model_config(), 14);
    TrainConfig t = quick_config();
    Trainer plain(a, t, data.vocab.words);
    t.router_pos_weight = 0.5;
    Trainer routed(b, t, data.vocab.words);
    std::vector<const Example*> batch = {&data.train[0], &data.train[1]};
    a.params().zero_grad();
    b.params().zero_grad();
    EXPECT_EQ(plain.xe_batch(batch), routed.xe_batch(batch));
    bool differs = false;
    for (std::size_t i = 0; i < a.params().size(); ++i) differs = differs || !(a.params().grad(i) == b.params().grad(i));
    EXPECT_TRUE(differs);
}

TEST(ClipGradNorm, ScalesToMaximum) {
    ParamStore p;
    p.add("a", Array::matrix({{3, 4}}));
    p.grad(0) = Array::matrix({{30, 40}});
    EXPECT_DOUBLE_EQ(clip_grad_norm(p, 5.0), 50.0);
    EXPECT_NEAR(p.grad(0)[0], 3.0f, 1e-6f);
    EXPECT_NEAR(p.grad(0)[1], 4.0f, 1e-6f);
    EXPECT_NEAR(clip_grad_norm(p, 5.0), 5.0, 1e-6);
    EXPECT_NEAR(p.grad(0)[0], 3.0f, 1e-6f);
}

TEST(Adam, FirstStepMovesByLearningRate) {
    ParamStore p;
    p.add("w", Array::matrix({{1.0f, -2.0f, 0.5f}}));
    p.grad(0) = Array::matrix({{0.3f, -7.0f, 0.0f}});
    Adam opt;
    opt.step(p, 0.01);
    EXPECT_NEAR(p.value(0)[0], 0.99f, 1e-6f);
    EXPECT_NEAR(p.value(0)[1], -1.99f, 1e-6f);
    EXPECT_EQ(p.value(0)[2], 0.5f);
    EXPECT_EQ(opt.steps(), 1u);
}

TEST(GradCheck, TinyFullModel) {
    const auto rep = tiny_model_gradcheck(1, 200, 1e-3);
    EXPECT_EQ(rep.coordinates, 200u);
    EXPECT_LT(rep.max_relative_error, 1e-2);
}

TEST(Evaluate, ReportsConsistentMetrics) {
    SmallData data(20);
    Model m(data.model_config(), 15);
    const auto rep = evaluate(m, data.val, data.vocab.words, 1);
    EXPECT_EQ(rep.results.size(), data.val.size());
    EXPECT_EQ(rep.captions.size(), data.val.size());
    EXPECT_GE(rep.cider, 0.0);
    for (double b : rep.bleu) {
        EXPECT_GE(b, 0.0);
        EXPECT_LE(b, 1.0);
    }
    EXPECT_THROW(evaluate(m, {}, data.vocab.words, 1), std::invalid_argument);
}
