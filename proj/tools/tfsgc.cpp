// tfsgc: synthetic data generation, training, evaluation, decoding and
// routing traces for the scene-graph captioning model.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tfsgc/checkpoint.hpp"
#include "tfsgc/config.hpp"
#include "tfsgc/decoding.hpp"
#include "tfsgc/metrics.hpp"
#include "tfsgc/synth.hpp"
#include "tfsgc/training.hpp"

namespace fs = std::filesystem;
using namespace tfsgc;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> beam;
    std::string checkpoint;
    std::string out;
    std::string data;
    std::string input;
    std::string split = "test";
    std::vector<std::string> sets;
};

std::vector<std::pair<std::string, std::string>> overrides(const Options& o) {
    std::vector<std::pair<std::string, std::string>> kv;
    for (const auto& s : o.sets) kv.push_back(parse_override(s));
    if (o.seed) kv.emplace_back("seed", std::to_string(*o.seed));
    if (o.beam) kv.emplace_back("beam", std::to_string(*o.beam));
    return kv;
}

RunConfig load_config(const Options& o) { return parse_config(o.config, overrides(o)); }

/// Writes to the file named by --out, or to stdout when it is empty.
class Output {
public:
    explicit Output(const std::string& path) {
        if (path.empty()) return;
        file_ = std::make_unique<std::ofstream>(path, std::ios::binary);
        if (!*file_) throw std::runtime_error("cannot write " + path);
    }
    std::ostream& stream() { return file_ ? *file_ : std::cout; }

private:
    std::unique_ptr<std::ofstream> file_;
};

std::string header(const char* command, std::uint64_t seed) {
    return std::string("# tfsgc ") + command + " seed=" + std::to_string(seed) + "\n";
}

std::string join(const std::vector<std::string>& words) {
    std::string s;
    for (std::size_t i = 0; i < words.size(); ++i) s += (i ? " " : "") + words[i];
    return s;
}

void require(const std::string& value, const char* flag) {
    if (value.empty()) throw UsageError(std::string("missing required option ") + flag);
}

// ---------------------------------------------------------------------------

int cmd_gen(const Options& o) {
    require(o.out, "--out");
    const RunConfig cfg = load_config(o);
    const auto ds = generate_dataset(cfg.synth_spec());
    write_dataset(o.out, ds);
    std::cout << header("gen", cfg.seed) << "train\t" << ds.train.size() << "\nval\t" << ds.val.size() << "\ntest\t"
              << ds.test.size() << '\n';
    return 0;
}

int cmd_train(const Options& o) {
    require(o.data, "--data");
    require(o.out, "--out");
    RunConfig cfg;
    Vocabularies vocab;
    std::unique_ptr<Model> model;
    std::optional<Checkpoint> resume;
    if (!o.checkpoint.empty()) {
        resume = load_checkpoint(o.checkpoint);
        auto kv = parse_key_values(format_config(resume->config));
        for (auto& x : overrides(o)) kv.push_back(x);
        cfg = parse_config_text("", kv);
        vocab = resume->vocab;
        resume->config = cfg;
        model = std::make_unique<Model>(model_from_checkpoint(*resume));
    } else {
        cfg = load_config(o);
    }
    const auto ds = read_dataset(o.data);
    if (!resume) {
        vocab = build_vocabularies(ds.train);
        model = std::make_unique<Model>(cfg.model_config(vocab.nodes.size(), vocab.words.size()), cfg.seed);
    }
    fs::create_directories(o.out);
    const auto train = make_examples(ds.train, vocab);
    const auto val = make_examples(ds.val, vocab);
    Trainer trainer(*model, cfg.train_config(), vocab.words);
    if (resume) restore_trainer(*resume, trainer);
    const CiderD reward = make_reward_scorer(train);

    const fs::path ckpt = fs::path(o.out) / "checkpoint.ckpt";
    const fs::path log_path = fs::path(o.out) / "metrics.tsv";
    std::ofstream log(log_path, resume ? std::ios::app : std::ios::trunc);
    if (!log) throw std::runtime_error("cannot write " + log_path.string());
    if (!resume) log << header("train", cfg.seed) << "# epoch\tphase\tloss\tcider_d\tbleu4\n";
    std::cout << header("train", cfg.seed);

    const std::size_t total = cfg.train.epochs_xe + cfg.train.epochs_rl;
    while (trainer.epoch() < total) {
        EpochRecord rec;
        try {
            rec = trainer.run_epoch(train, &val, &reward);
        } catch (const TrainingDiverged& e) {
            std::cerr << "training diverged: " << e.what() << "; last good checkpoint: " << ckpt << '\n';
            return 2;
        }
        save_checkpoint(ckpt, make_checkpoint(cfg, vocab, *model, &trainer));
        std::ostringstream line;
        line << std::setprecision(7) << rec.epoch << '\t' << rec.phase << '\t' << rec.loss << '\t' << rec.cider << '\t'
             << rec.bleu4 << '\n';
        log << line.str() << std::flush;
        std::cout << line.str() << std::flush;
    }
    return 0;
}

int cmd_eval(const Options& o) {
    require(o.checkpoint, "--checkpoint");
    require(o.data, "--data");
    const Checkpoint c = load_checkpoint(o.checkpoint);
    const Model model = model_from_checkpoint(c);
    const std::size_t beam = o.beam.value_or(c.config.beam);
    if (beam == 0) throw UsageError("--beam must be at least 1");
    if (o.split != "train" && o.split != "val" && o.split != "test") throw UsageError("--split must be train, val or test");
    const auto samples = read_split(o.data, o.split);
    const auto examples = make_examples(samples, c.vocab);
    const auto rep = evaluate(model, examples, c.vocab.words, beam);

    Output out(o.out);
    auto& os = out.stream();
    os << header("eval", o.seed.value_or(c.config.seed));
    os << "# split=" << o.split << " beam=" << beam << '\n';
    os << "cider_d\tbleu1\tbleu2\tbleu3\tbleu4\trecall_noun\trecall_adj\trecall_verb\trecall_prep\n";
    os << std::fixed << std::setprecision(6) << rep.cider;
    for (double b : rep.bleu) os << '\t' << b;
    for (PosTag t : {PosTag::noun, PosTag::adj, PosTag::verb, PosTag::prep}) os << '\t' << rep.recall.recall(t);
    os << '\n';
    return 0;
}

std::vector<SceneGraphRecord> read_graphs(const std::string& path) {
    require(path, "--input");
    return parse_scene_graph_collection(read_text_file(path));
}

int cmd_decode(const Options& o) {
    require(o.checkpoint, "--checkpoint");
    const Checkpoint c = load_checkpoint(o.checkpoint);
    const Model model = model_from_checkpoint(c);
    const std::size_t beam = o.beam.value_or(c.config.beam);
    if (beam == 0) throw UsageError("--beam must be at least 1");
    const auto graphs = read_graphs(o.input);

    Output out(o.out);
    auto& os = out.stream();
    os << header("decode", o.seed.value_or(c.config.seed)) << "# beam=" << beam
       << " (summed log-probability, no length normalization)\n";
    for (const auto& r : graphs) {
        const auto lg = linearize(r.graph, c.vocab.nodes);
        const auto res = beam <= 1 ? decode_greedy(model, lg) : decode_beam(model, lg, beam);
        os << r.id << '\t' << join(to_words(res.words(), c.vocab.words)) << '\t' << std::fixed << std::setprecision(4)
           << res.total_logprob() << '\n';
    }
    return 0;
}

int cmd_trace(const Options& o) {
    require(o.checkpoint, "--checkpoint");
    const Checkpoint c = load_checkpoint(o.checkpoint);
    const Model model = model_from_checkpoint(c);
    const auto graphs = read_graphs(o.input);

    Output out(o.out);
    auto& os = out.stream();
    os << header("trace", o.seed.value_or(c.config.seed));
    for (const auto& r : graphs) {
        const auto lg = linearize(r.graph, c.vocab.nodes);
        os << "# sample " << r.id << "\n# nodes";
        for (std::size_t i = 0; i < lg.size(); ++i) os << ' ' << c.vocab.nodes.token(lg.token_ids[i]) << ':' << to_string(lg.type_ids[i]);
        os << "\n# mask\n" << format_mask(lg.mask);
        const auto res = decode_greedy(model, lg);
        os << "# word\texpert\talpha_o\talpha_a\talpha_r\n";
        for (std::size_t t = 0; t < res.tokens.size(); ++t) {
            const auto& a = res.routes[t].back();
            os << c.vocab.words.token(res.tokens[t]) << '\t' << expert_name(a.argmax()) << std::fixed << std::setprecision(4)
               << '\t' << a.object << '\t' << a.attribute << '\t' << a.relation << '\n';
        }
        os << '\n';
    }
    return 0;
}

int cmd_gradcheck(const Options& o) {
    const std::uint64_t seed = o.seed.value_or(1);
    const auto rep = tiny_model_gradcheck(seed);
    Output out(o.out);
    out.stream() << header("gradcheck", seed) << "coordinates\t" << rep.coordinates << "\nmax_relative_error\t"
                 << std::scientific << std::setprecision(3) << rep.max_relative_error << "\nkinks_skipped\t"
                 << rep.kinks_skipped << "\nmax_relative_error_at_kinks\t" << rep.max_relative_error_at_kinks << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Scene-graph captioning with a masked-attention graph encoder and a mixture-of-experts decoder"};
    app.require_subcommand(1);
    Options o;

    auto add_config = [&](CLI::App* c) {
        c->add_option("--config", o.config, "key = value configuration file");
        c->add_option("--set", o.sets, "override one configuration key (key=value), repeatable");
        c->add_option("--seed", o.seed, "random seed (overrides the configuration)");
    };

    auto* gen = app.add_subcommand("gen", "write a synthetic dataset (<out>/{train,val,test}.{sg,cap})");
    add_config(gen);
    gen->add_option("--out", o.out, "output directory");

    auto* train = app.add_subcommand("train", "train a model; writes <out>/checkpoint.ckpt and <out>/metrics.tsv");
    add_config(train);
    train->add_option("--data", o.data, "dataset directory written by gen");
    train->add_option("--out", o.out, "output directory");
    train->add_option("--checkpoint", o.checkpoint, "resume from this checkpoint");

    auto* eval = app.add_subcommand("eval", "CIDEr-D, BLEU-1..4 and POS recall of a checkpoint on a split");
    eval->add_option("--checkpoint", o.checkpoint, "model checkpoint");
    eval->add_option("--data", o.data, "dataset directory");
    eval->add_option("--split", o.split, "train, val or test")->capture_default_str();
    eval->add_option("--beam", o.beam, "beam size (1 = greedy; default from the checkpoint)");
    eval->add_option("--seed", o.seed, "seed echoed in the report header");
    eval->add_option("--out", o.out, "report file (default stdout)");

    auto* decode = app.add_subcommand("decode", "caption every graph of an SG file");
    decode->add_option("--checkpoint", o.checkpoint, "model checkpoint");
    decode->add_option("--input", o.input, "SG file, one or more graphs separated by blank lines");
    decode->add_option("--beam", o.beam,
                       "beam size; hypotheses are ranked by summed log-probability without length normalization");
    decode->add_option("--seed", o.seed, "seed echoed in the output header");
    decode->add_option("--out", o.out, "output file (default stdout)");

    auto* trace = app.add_subcommand("trace", "per-word expert attribution and the attention mask");
    trace->add_option("--checkpoint", o.checkpoint, "model checkpoint");
    trace->add_option("--input", o.input, "SG file");
    trace->add_option("--seed", o.seed, "seed echoed in the output header");
    trace->add_option("--out", o.out, "output file (default stdout)");

    auto* grad = app.add_subcommand("gradcheck", "finite-difference check of the full model on a tiny configuration");
    grad->add_option("--seed", o.seed, "initialization and sampling seed");
    grad->add_option("--out", o.out, "output file (default stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (*gen) return cmd_gen(o);
        if (*train) return cmd_train(o);
        if (*eval) return cmd_eval(o);
        if (*decode) return cmd_decode(o);
        if (*trace) return cmd_trace(o);
        if (*grad) return cmd_gradcheck(o);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 1;
}
