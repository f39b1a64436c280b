#pragma once

// Cross-entropy training, self-critical fine-tuning with a CIDEr-D reward,
// the POS-supervised router loss, Adam and the learning-rate schedule.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tfsgc/decoding.hpp"
#include "tfsgc/gradcheck.hpp"
#include "tfsgc/linearizer.hpp"
#include "tfsgc/metrics.hpp"
#include "tfsgc/model.hpp"
#include "tfsgc/pos.hpp"
#include "tfsgc/synth.hpp"

namespace tfsgc {

struct TrainConfig {
    std::size_t batch_size = 20;
    std::size_t epochs_xe = 20;
    std::size_t epochs_rl = 0;
    double lr_xe = 5e-4;
    double lr_rl = 5e-5;
    double lr_decay = 0.8;
    std::size_t decay_every = 5;
    double clip_norm = 5.0;
    double router_pos_weight = 0.0;
    std::uint64_t seed = 1;

    void validate() const {
        if (batch_size == 0) throw std::invalid_argument("batch_size must be at least 1");
        if (!(lr_xe > 0.0) || !(lr_rl > 0.0)) throw std::invalid_argument("learning rates must be positive");
        if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw std::invalid_argument("lr_decay must lie in (0, 1]");
        if (decay_every == 0) throw std::invalid_argument("decay_every must be at least 1");
        if (!(clip_norm > 0.0)) throw std::invalid_argument("clip_norm must be positive");
        if (router_pos_weight < 0.0) throw std::invalid_argument("router_pos_weight must be non-negative");
    }
};

/// base · decay^floor((epoch - 1) / every), epochs counted from 1 within a phase.
inline double learning_rate(double base, double decay, std::size_t every, std::size_t epoch) {
    if (epoch == 0) throw std::invalid_argument("learning_rate: epochs are counted from 1");
    return base * std::pow(decay, static_cast<double>((epoch - 1) / every));
}

/// Adam with bias correction.
class Adam {
public:
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    void step(ParamStore& params, double lr) {
        if (m_.empty()) {
            for (std::size_t i = 0; i < params.size(); ++i) {
                m_.emplace_back(params.value(i).rows(), params.value(i).cols());
                v_.emplace_back(params.value(i).rows(), params.value(i).cols());
            }
        }
        if (m_.size() != params.size()) throw std::invalid_argument("Adam: parameter layout changed");
        ++t_;
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& w = params.value(i);
            const auto& g = params.grad(i);
            auto& m = m_[i];
            auto& v = v_[i];
            for (std::size_t k = 0; k < w.size(); ++k) {
                const double gk = g[k];
                m[k] = static_cast<float>(beta1 * m[k] + (1.0 - beta1) * gk);
                v[k] = static_cast<float>(beta2 * v[k] + (1.0 - beta2) * gk * gk);
                const double mhat = m[k] / c1;
                const double vhat = v[k] / c2;
                w[k] = static_cast<float>(w[k] - lr * mhat / (std::sqrt(vhat) + eps));
            }
        }
    }

    std::uint64_t steps() const { return t_; }
    const std::vector<Array>& first_moments() const { return m_; }
    const std::vector<Array>& second_moments() const { return v_; }

    void restore(std::uint64_t t, std::vector<Array> m, std::vector<Array> v) {
        if (m.size() != v.size()) throw std::invalid_argument("Adam: moment lists differ in length");
        t_ = t;
        m_ = std::move(m);
        v_ = std::move(v);
    }

private:
    std::uint64_t t_ = 0;
    std::vector<Array> m_, v_;
};

/// Scales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
inline double clip_grad_norm(ParamStore& params, double max_norm) {
    double sq = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i)
        for (float g : params.grad(i).values()) sq += static_cast<double>(g) * g;
    const double norm = std::sqrt(sq);
    if (norm > max_norm) {
        const auto s = static_cast<float>(max_norm / norm);
        for (std::size_t i = 0; i < params.size(); ++i)
            for (auto& g : params.grad(i).values()) g *= s;
    }
    return norm;
}

// ---------------------------------------------------------------------------

/// One training or evaluation item in model vocabulary space.
struct Example {
    std::string id;
    LinearizedGraph graph;
    std::vector<int> target;     // caption word ids followed by EOS
    std::vector<PosTag> tags;    // aligned with target; EOS is OTHER
    std::vector<Tokens> references;
    TaggedCaption tagged;        // first reference with its POS tags
};

inline Example make_example(const SynthSample& s, const Vocabularies& vocab) {
    Example ex;
    ex.id = s.id;
    ex.graph = linearize(s.graph, vocab.nodes);
    for (const auto& c : s.captions) ex.references.push_back(tokenize(c));
    if (ex.references.empty() || ex.references.front().empty())
        throw std::invalid_argument("sample " + s.id + " has an empty caption");
    for (const auto& w : ex.references.front()) ex.target.push_back(vocab.words.id(w));
    ex.target.push_back(kEos);
    ex.tags = s.pos_tags;
    if (ex.tags.size() != ex.references.front().size())
        throw std::invalid_argument("sample " + s.id + ": POS tags do not align with the caption");
    ex.tagged = {ex.references.front(), ex.tags};
    ex.tags.push_back(PosTag::other);
    return ex;
}

inline std::vector<Example> make_examples(const std::vector<SynthSample>& samples, const Vocabularies& vocab) {
    std::vector<Example> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(make_example(s, vocab));
    return out;
}

/// [BOS, t_0, ..., t_{n-2}] for target [t_0, ..., t_{n-1}].
inline std::vector<int> teacher_inputs(std::span<const int> target) {
    std::vector<int> in{kBos};
    in.insert(in.end(), target.begin(), target.end() - (target.empty() ? 0 : 1));
    return in;
}

/// Σ -log softmax(logits)[r, target[r]] over rows whose target is not PAD,
/// with the number of such rows.
template <typename T>
std::pair<BasicVar<T>, std::size_t> token_nll_sum(BasicVar<T> logits, std::span<const int> targets) {
    if (targets.size() != logits.rows()) throw std::invalid_argument("token_nll_sum: one target per row required");
    std::vector<int> cols(targets.begin(), targets.end());
    std::size_t count = 0;
    for (int& c : cols) {
        if (c == kPad)
            c = -1;
        else
            ++count;
    }
    return {scale(sum(pick(log_softmax(logits), std::span<const int>(cols))), T(-1)), count};
}

/// Mean over non-PAD positions of -log P(target).
template <typename T>
BasicVar<T> xe_loss(BasicVar<T> logits, std::span<const int> targets) {
    auto [nll, count] = token_nll_sum(logits, targets);
    if (count == 0) throw std::invalid_argument("xe_loss: no non-PAD target");
    return scale(nll, T(1) / static_cast<T>(count));
}

/// Σ -log α_k over positions whose tag names an expert k that is present in
/// the graph, with the number of such positions. `alpha` is t×3.
template <typename T>
std::pair<BasicVar<T>, std::size_t> router_pos_nll_sum(BasicVar<T> alpha, std::span<const PosTag> tags,
                                                        const std::array<bool, kExperts>& available) {
    if (alpha.rows() != tags.size() || alpha.cols() != kExperts)
        throw std::invalid_argument("router_pos_loss: routes and POS labels are misaligned");
    std::vector<int> cols(tags.size(), -1);
    BasicArray<T> fill(tags.size(), 1);
    std::size_t count = 0;
    for (std::size_t r = 0; r < tags.size(); ++r) {
        const auto e = expert_for(tags[r]);
        if (!e || !available[static_cast<std::size_t>(*e)]) {
            fill[r] = T(1);
            continue;
        }
        cols[r] = static_cast<int>(*e);
        fill[r] = T(0);
        ++count;
    }
    auto& tape = alpha.tape();
    auto picked = add(pick(alpha, std::span<const int>(cols)), tape.constant(std::move(fill)));
    return {scale(sum(log(picked)), T(-1)), count};
}

/// Mean -log α_k(tag) over labelled positions; 0 when no position is labelled.
template <typename T>
BasicVar<T> router_pos_loss(BasicVar<T> alpha, std::span<const PosTag> tags,
                            const std::array<bool, kExperts>& available = {true, true, true}) {
    auto [nll, count] = router_pos_nll_sum(alpha, tags, available);
    return count ? scale(nll, T(1) / static_cast<T>(count)) : scale(nll, T(0));
}

/// Teacher-forced caption NLL summed over tokens, usable with any scalar type
/// (the gradient checker runs it in double).
template <typename T>
BasicVar<T> sequence_nll(BasicTape<T>& tape, const BasicParamStore<T>& params, const ModelConfig& cfg,
                         const LinearizedGraph& lg, std::span<const int> target) {
    const auto enc = encode(tape, lg, params, cfg);
    const auto inputs = teacher_inputs(target);
    const auto out = decode_forward(tape, params, cfg, enc, inputs);
    return token_nll_sum(out.logits, target).first;
}

/// -advantage · Σ_t log P(tokens_t | tokens_<t, graph): its gradient is the
/// self-critical policy gradient with the reward held constant.
inline Var policy_gradient_loss(Tape& tape, const Model& model, const LinearizedGraph& lg, std::span<const int> tokens,
                                double advantage) {
    if (tokens.empty()) throw std::invalid_argument("policy_gradient_loss: empty sequence");
    const auto enc = model.encode(tape, lg);
    const auto out = model.decode(tape, enc, teacher_inputs(tokens));
    auto logp = sum(pick(log_softmax(out.logits), tokens));
    return scale(logp, static_cast<float>(-advantage));
}

inline std::array<bool, kExperts> available_experts(const LinearizedGraph& lg) {
    return {lg.n_obj > 0, lg.n_attr > 0, lg.n_rel > 0};
}

inline std::vector<std::string> to_words(const std::vector<int>& ids, const Vocabulary& words) {
    std::vector<std::string> out;
    for (int id : ids) out.push_back(words.token(id));
    return out;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalReport {
    double cider = 0.0;
    std::array<double, 4> bleu{};
    PosRecall recall;
    std::vector<DecodeResult> results;
    std::vector<Tokens> captions;
};

/// Decodes every example (greedy when beam <= 1) and scores the corpus.
/// CIDEr-D document frequencies come from the evaluated references.
inline EvalReport evaluate(const Model& model, const std::vector<Example>& examples, const Vocabulary& words,
                           std::size_t beam) {
    if (examples.empty()) throw std::invalid_argument("evaluate: no examples");
    EvalReport rep;
    std::vector<std::vector<Tokens>> refs;
    std::vector<CorpusItem> items;
    std::vector<TaggedCaption> tagged;
    for (const auto& ex : examples) {
        auto res = beam <= 1 ? decode_greedy(model, ex.graph) : decode_beam(model, ex.graph, beam);
        Tokens cap = to_words(res.words(), words);
        CorpusItem item;
        for (std::size_t i = 0; i < cap.size(); ++i) item.candidate += (i ? " " : "") + cap[i];
        for (const auto& r : ex.references) {
            std::string s;
            for (std::size_t i = 0; i < r.size(); ++i) s += (i ? " " : "") + r[i];
            item.references.push_back(s);
        }
        items.push_back(std::move(item));
        refs.push_back(ex.references);
        tagged.push_back(ex.tagged);
        rep.captions.push_back(std::move(cap));
        rep.results.push_back(std::move(res));
    }
    const CiderD scorer(refs);
    for (std::size_t i = 0; i < examples.size(); ++i) rep.cider += scorer.score(rep.captions[i], refs[i]);
    rep.cider /= static_cast<double>(examples.size());
    for (int n = 1; n <= 4; ++n) rep.bleu[static_cast<std::size_t>(n - 1)] = bleu(items, n);
    rep.recall = pos_recall(rep.captions, tagged);
    return rep;
}

// ---------------------------------------------------------------------------

class TrainingDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct EpochRecord {
    std::size_t epoch = 0;
    std::string phase;    // "xe" or "rl"
    double loss = 0.0;    // XE: mean token NLL; RL: mean pseudo-loss
    double cider = 0.0;   // greedy CIDEr-D on the validation set
    double bleu4 = 0.0;
    double reward = 0.0;  // RL: mean sampled-caption reward
};

/// Result of one self-critical update on a batch.
struct ScstStats {
    double pseudo_loss = 0.0;
    double sample_reward = 0.0;
    double greedy_reward = 0.0;
};

/// Owns the optimizer state and runs epochs on a model.
class Trainer {
public:
    Trainer(Model& model, TrainConfig cfg, Vocabulary words)
        : model_(model), cfg_(cfg), words_(std::move(words)), rng_(cfg.seed ^ 0x9e3779b97f4a7c15ULL) {
        cfg_.validate();
        if (cfg_.router_pos_weight > 0.0 && !model_.config().moe)
            throw std::invalid_argument("router_pos_weight needs the mixture-of-experts decoder");
    }

    const TrainConfig& config() const { return cfg_; }
    std::size_t epoch() const { return epoch_; }
    Adam& optimizer() { return adam_; }
    const Adam& optimizer() const { return adam_; }
    std::mt19937_64& rng() { return rng_; }
    void set_epoch(std::size_t e) { epoch_ = e; }

    /// Phase and learning rate of the epoch `e` (1-based over both phases).
    std::pair<std::string, double> schedule(std::size_t e) const {
        if (e <= cfg_.epochs_xe) return {"xe", learning_rate(cfg_.lr_xe, cfg_.lr_decay, cfg_.decay_every, e)};
        return {"rl", learning_rate(cfg_.lr_rl, cfg_.lr_decay, cfg_.decay_every, e - cfg_.epochs_xe)};
    }

    /// Cross-entropy (+ router) loss of one batch; gradients are accumulated
    /// into the model's parameter store. Returns the mean token NLL.
    double xe_batch(std::span<const Example* const> batch) {
        if (batch.empty()) throw std::invalid_argument("xe_batch: empty batch");
        std::size_t tokens = 0, routed = 0;
        for (const Example* ex : batch) {
            tokens += ex->target.size();
            if (cfg_.router_pos_weight > 0.0) routed += routed_positions(*ex);
        }
        double nll_total = 0.0;
        auto& params = model_.params();
        for (const Example* ex : batch) {
            Tape tape(params);
            const auto enc = model_.encode(tape, ex->graph);
            const auto inputs = teacher_inputs(ex->target);
            const auto out = model_.decode(tape, enc, inputs);
            auto [nll, count] = token_nll_sum(out.logits, std::span<const int>(ex->target));
            nll_total += static_cast<double>(nll.value()[0]);
            auto loss = scale(nll, 1.0f / static_cast<float>(tokens));
            if (cfg_.router_pos_weight > 0.0 && routed > 0) {
                auto [rnll, rcount] = router_pos_nll_sum(out.alphas.back(), std::span<const PosTag>(ex->tags),
                                                         available_experts(ex->graph));
                if (rcount > 0)
                    loss = add(loss, scale(rnll, static_cast<float>(cfg_.router_pos_weight / static_cast<double>(routed))));
            }
            tape.backward(loss);
        }
        return nll_total / static_cast<double>(tokens);
    }

    /// Self-critical step: one sampled caption per example, baselined by the
    /// greedy caption's reward. Gradients accumulate into the parameter store.
    ScstStats scst_batch(std::span<const Example* const> batch, const CiderD& scorer) {
        if (!scorer.initialized()) throw std::logic_error("scst: CIDEr-D scorer is not initialized");
        if (batch.empty()) throw std::invalid_argument("scst: empty batch");
        ScstStats st;
        auto& params = model_.params();
        const float inv_b = 1.0f / static_cast<float>(batch.size());
        for (const Example* ex : batch) {
            const auto sampled = decode_sample(model_, ex->graph, rng_);
            const auto greedy = decode_greedy(model_, ex->graph);
            const double rs = scorer.score(to_words(sampled.words(), words_), ex->references);
            const double rg = scorer.score(to_words(greedy.words(), words_), ex->references);
            st.sample_reward += rs;
            st.greedy_reward += rg;
            const double adv = rs - rg;
            if (adv == 0.0) continue;
            Tape tape(params);
            auto loss = scale(policy_gradient_loss(tape, model_, ex->graph, sampled.tokens, adv), inv_b);
            st.pseudo_loss += static_cast<double>(loss.value()[0]);
            tape.backward(loss);
        }
        st.sample_reward /= static_cast<double>(batch.size());
        st.greedy_reward /= static_cast<double>(batch.size());
        return st;
    }

    /// Runs the next epoch (XE or RL by schedule) over `train` and evaluates
    /// greedy captions on `val` when given.
    EpochRecord run_epoch(const std::vector<Example>& train, const std::vector<Example>* val = nullptr,
                          const CiderD* reward = nullptr) {
        if (train.empty()) throw std::invalid_argument("train: empty dataset");
        const std::size_t e = epoch_ + 1;
        const auto [phase, lr] = schedule(e);
        std::vector<const Example*> order;
        for (const auto& ex : train) order.push_back(&ex);
        std::shuffle(order.begin(), order.end(), rng_);

        EpochRecord rec;
        rec.epoch = e;
        rec.phase = phase;
        double loss_sum = 0.0, reward_sum = 0.0;
        std::size_t batches = 0;
        auto& params = model_.params();
        for (std::size_t b = 0; b < order.size(); b += cfg_.batch_size) {
            const std::size_t n = std::min(cfg_.batch_size, order.size() - b);
            std::span<const Example* const> batch(order.data() + b, n);
            params.zero_grad();
            double loss = 0.0;
            if (phase == "xe") {
                loss = xe_batch(batch);
            } else {
                if (!reward) throw std::logic_error("rl epoch needs a CIDEr-D scorer");
                const auto st = scst_batch(batch, *reward);
                loss = st.pseudo_loss;
                reward_sum += st.sample_reward;
            }
            const double norm = clip_grad_norm(params, cfg_.clip_norm);
            if (!std::isfinite(loss) || !std::isfinite(norm)) {
                std::ostringstream os;
                os << "non-finite " << (std::isfinite(loss) ? "gradient" : "loss") << " in epoch " << e << " (" << phase
                   << "), batch " << b / cfg_.batch_size;
                throw TrainingDiverged(os.str());
            }
            adam_.step(params, lr);
            loss_sum += loss;
            ++batches;
        }
        params.zero_grad();
        rec.loss = loss_sum / static_cast<double>(batches);
        rec.reward = reward_sum / static_cast<double>(batches);
        if (val && !val->empty()) {
            const auto rep = evaluate(model_, *val, words_, 1);
            rec.cider = rep.cider;
            rec.bleu4 = rep.bleu[3];
        }
        epoch_ = e;
        return rec;
    }

private:
    static std::size_t routed_positions(const Example& ex) {
        const auto avail = available_experts(ex.graph);
        std::size_t n = 0;
        for (PosTag t : ex.tags) {
            const auto e = expert_for(t);
            if (e && avail[static_cast<std::size_t>(*e)]) ++n;
        }
        return n;
    }

    Model& model_;
    TrainConfig cfg_;
    Vocabulary words_;
    Adam adam_;
    std::mt19937_64 rng_;
    std::size_t epoch_ = 0;
};

/// CIDEr-D scorer over the training references, used as the RL reward.
inline CiderD make_reward_scorer(const std::vector<Example>& train) {
    std::vector<std::vector<Tokens>> refs;
    refs.reserve(train.size());
    for (const auto& ex : train) refs.push_back(ex.references);
    return CiderD(refs);
}

/// Finite-difference check of the caption loss on a tiny model (d = 8, two
/// heads, one encoder and one decoder layer) over the 4-node graph
/// {dog: black, fish; bite(dog, fish)} with a 5-word caption. Runs in double
/// precision so that central differences resolve small gradients.
inline GradCheckReport tiny_model_gradcheck(std::uint64_t seed, std::size_t coordinates = 200, double epsilon = 1e-3) {
    SceneGraph g{{"dog", "fish"}, {{0, "black"}}, {{0, 1, "bite"}}};
    Vocabularies v;
    for (const char* w : {"dog", "fish", "black", "bite"}) v.nodes.add(w);
    std::vector<int> target;
    for (const char* w : {"a", "black", "dog", "bite", "fish"}) target.push_back(v.words.add(w));
    target.push_back(kEos);

    ModelConfig cfg;
    cfg.encoder = {8, 2, 1};
    cfg.decoder = {8, 2, 1, 8, v.words.size()};
    cfg.node_vocab_size = v.nodes.size();
    const auto lg = linearize(g, v.nodes);
    auto params = init_params<double>(cfg, seed);
    const LossBuilder<double> loss = [&](BasicTape<double>& tape, const BasicParamStore<double>& p) {
        const auto enc = encode(tape, lg, p, cfg);
        const auto out = decode_forward(tape, p, cfg, enc, teacher_inputs(target));
        return xe_loss(out.logits, std::span<const int>(target));
    };
    return finite_difference_check(loss, params, epsilon, coordinates, seed);
}

}  // namespace tfsgc
