// rescomb: command-line driver for LM training, n-best rescoring, system
// combination and scoring.
//
// Exit codes: 0 success, 2 configuration error, 3 data error.

#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "rescomb/concom.hpp"
#include "rescomb/error.hpp"
#include "rescomb/eval.hpp"
#include "rescomb/fusion.hpp"
#include "rescomb/io.hpp"
#include "rescomb/lstm.hpp"
#include "rescomb/ngram.hpp"
#include "rescomb/pipeline.hpp"
#include "rescomb/toy.hpp"

namespace fs = std::filesystem;
using namespace rescomb;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;

std::vector<Tokens> read_corpus(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw DataError("cannot open " + p.string());
    return io::read_text_corpus(in);
}

std::map<std::string, std::vector<TimedUtterance>> by_conversation(const std::vector<TimedUtterance>& utts) {
    std::map<std::string, std::vector<TimedUtterance>> out;
    for (const auto& u : utts) out[u.conversation_id].push_back(u);
    return out;
}

PipelineConfig load_config(const std::string& path, const std::optional<std::uint64_t>& seed) {
    auto c = load_pipeline_config(path);
    if (seed) c.seed = *seed;
    return c;
}

void run_stage(const PipelineConfig& c, const std::string& stage) {
    StageResult r;
    if (stage == "rescore") r = run_rescore(c);
    else if (stage == "combine") r = run_combine(c);
    else if (stage == "select") r = run_select(c);
    else if (stage == "cn_rescore") r = run_cn_rescore(c);
    else r = run_score(c);
    record_manifest(c, stage, r);
    std::cout << stage << ": wrote " << r.outputs.size() << " file(s) under " << c.output_dir.string() << '\n';
}

struct Args {
    std::string config;
    std::optional<std::uint64_t> seed;

    // train-ngram
    std::string text, out;
    int order = 3;
    std::string smoothing = "kn";

    // train-lstm
    std::string stm, encoding = "letter_trigram", direction = "forward";
    int layers = 2, hidden = 64, embed = 64, epochs = 10, unroll = 20, batch = 8;
    double lr = 0.01;
    bool session = false, no_speaker_change = false, no_overlap = false;
    std::size_t min_count = 2;

    // optimize / score / ppl
    std::string nbest, refs, hyp, init, frozen, arpa, lstm, format = "table";
    int restarts = 4, max_iters = 20;

    // make-toy
    int toy_epochs = 5;
    bool no_models = false;
};

int cmd_train_ngram(const Args& a) {
    NGramConfig cfg;
    if (a.smoothing == "ml") cfg.smoothing = Smoothing::MaximumLikelihood;
    else if (a.smoothing != "kn") throw ConfigError("smoothing must be kn or ml");
    const auto corpus = read_corpus(a.text);
    const auto model = train_ngram(corpus, a.order, cfg);
    write_arpa_file(a.out, model);
    std::cout << "trained " << a.order << "-gram on " << corpus.size() << " sentences, " << model.vocab.size()
              << " words\n";
    return 0;
}

int cmd_train_lstm(const Args& a) {
    LstmConfig cfg;
    cfg.encoding = encoding_from_string(a.encoding);
    cfg.direction = direction_from_string(a.direction);
    cfg.num_layers = a.layers;
    cfg.hidden_dim = a.hidden;
    cfg.embed_dim = a.embed;
    cfg.min_word_count = a.min_count;
    cfg.session_mode = a.session;
    cfg.session_flags = {!a.no_speaker_change, !a.no_overlap};
    TrainHyper hyper;
    hyper.learning_rate = a.lr;
    hyper.epochs = a.epochs;
    hyper.unroll = a.unroll;
    hyper.batch = a.batch;
    hyper.seed = a.seed.value_or(1);

    TrainReport report;
    LstmModel model;
    if (a.session) {
        if (a.stm.empty()) throw ConfigError("session training reads conversations from --stm");
        std::vector<SessionTranscript> sessions;
        for (const auto& [conv, utts] : by_conversation(io::read_stm_file(a.stm)))
            sessions.push_back(serialize_session(utts, cfg.session_flags));
        model = train_lstm(sessions, cfg, hyper, &report);
    } else {
        std::vector<Tokens> sentences;
        if (!a.text.empty()) sentences = read_corpus(a.text);
        else if (!a.stm.empty())
            for (const auto& u : io::read_stm_file(a.stm)) sentences.push_back(u.tokens);
        else throw ConfigError("train-lstm needs --text or --stm");
        model = train_lstm(sentences, cfg, hyper, &report);
    }
    save_lstm(a.out, model);
    for (std::size_t e = 0; e < report.epoch_ppl.size(); ++e)
        std::cout << "epoch " << e + 1 << " train ppl " << report.epoch_ppl[e] << '\n';
    return 0;
}

int cmd_optimize(const Args& a) {
    const auto lists = io::read_nbest_file(a.nbest);
    TokenMap refs;
    for (const auto& u : io::read_stm_file(a.refs)) refs[make_utterance_id(u)] = u.tokens;
    std::vector<DevItem> dev;
    for (const auto& l : lists) {
        const auto it = refs.find(l.utterance_id);
        if (it == refs.end()) throw DataError("no reference for utterance " + l.utterance_id);
        dev.push_back({l, it->second});
    }
    if (dev.empty()) throw DataError("no n-best lists to tune on");
    WeightVector init;
    if (!a.init.empty()) {
        init = load_weights(a.init);
    } else {
        for (const auto& d : dev.front().nbest.dimension_names())
            init.weights[d] = (d == dims::kAcoustic || d == dims::kCnPosterior) ? 1.0 : 0.0;
    }
    OptimizeOptions opts;
    opts.restarts = a.restarts;
    opts.max_iters = a.max_iters;
    opts.seed = a.seed.value_or(1);
    if (!a.frozen.empty()) opts.frozen = a.frozen;
    const auto result = optimize_weights(dev, init, opts);
    save_weights(a.out, result.weights);
    std::cout << "dev errors " << result.init_counts.errors() << " -> " << result.counts.errors() << " of "
              << result.counts.n_ref << " words\n";
    return 0;
}

int cmd_score(const Args& a) {
    if (!a.config.empty()) {
        run_stage(load_config(a.config, a.seed), "score");
        return 0;
    }
    if (a.refs.empty() || a.hyp.empty()) throw ConfigError("score needs --config, or --refs and --hyp");
    TokenMap refs;
    for (const auto& u : io::read_stm_file(a.refs)) refs[make_utterance_id(u)] = u.tokens;
    const auto hyps = io::read_transcript_file(a.hyp);
    const auto report = wer(refs, TokenMap(hyps.begin(), hyps.end()));
    std::cout << (a.format == "json" ? report.to_json() : report.to_table());
    return 0;
}

int cmd_ppl(const Args& a) {
    if (a.arpa.empty() == a.lstm.empty()) throw ConfigError("ppl needs exactly one of --arpa or --lstm");
    std::vector<double> lps;
    if (!a.arpa.empty()) {
        const auto model = read_arpa_file(a.arpa);
        for (const auto& s : read_corpus(a.text)) {
            std::vector<std::string> context{"<s>"};
            for (const auto& t : s) {
                lps.push_back(ngram_logprob(model, context, t.surface));
                context.push_back(t.surface);
            }
            lps.push_back(ngram_logprob(model, context, "</s>"));
        }
    } else {
        const auto model = load_lstm(a.lstm);
        auto add = [&](const Tokens& toks, const SessionContext* ctx) {
            const auto scores = lstm_score(model, toks, ctx);
            for (std::size_t i = 0; i < toks.size(); ++i)
                if (!model.is_oov(toks[i].surface)) lps.push_back(scores[i]);
            lps.push_back(scores.back());
        };
        if (model.config.session_mode) {
            if (a.stm.empty()) throw ConfigError("session models read conversations from --stm");
            const auto utts = io::read_stm_file(a.stm);
            const auto history = history_from_references(utts);
            for (const auto& u : utts) {
                const auto ctx = history.context(make_utterance_id(u), model.config.direction, model.config.session_flags);
                if (!ctx) throw DataError("no history for utterance " + make_utterance_id(u));
                add(u.tokens, &*ctx);
            }
        } else if (!a.stm.empty()) {
            for (const auto& u : io::read_stm_file(a.stm)) add(u.tokens, nullptr);
        } else {
            for (const auto& s : read_corpus(a.text)) add(s, nullptr);
        }
    }
    std::cout << "tokens " << lps.size() << " ppl " << perplexity(lps) << '\n';
    return 0;
}

// One line per utterance in onset order: conversation, speaker-change bit,
// overlap bit, words.
int cmd_session_serialize(const Args& a) {
    std::ostringstream out;
    const SessionFlags flags{!a.no_speaker_change, !a.no_overlap};
    for (const auto& [conv, utts] : by_conversation(io::read_stm_file(a.stm))) {
        for (const auto& o : order_conversation(utts, flags)) {
            out << conv << '\t' << o.speaker_change << '\t' << o.overlap << '\t' << join(o.utterance->tokens) << '\n';
        }
    }
    if (a.out.empty()) std::cout << out.str();
    else io::write_file(a.out, out.str());
    return 0;
}

int cmd_report(const Args& a) {
    const auto report = run_report(load_config(a.config, a.seed));
    std::cout << (a.format == "json" ? report.to_json() : report.to_table());
    return 0;
}

int cmd_run(const Args& a) {
    const auto c = load_config(a.config, a.seed);
    run_pipeline(c);
    std::cout << run_report(c).to_table();
    return 0;
}

int cmd_make_toy(const Args& a) {
    toy::ToyOptions opts;
    opts.seed = a.seed.value_or(1);
    const auto data = toy::make_toy(opts);
    toy::write_toy(data, a.out);
    if (!a.no_models) toy::write_toy_models(toy::train_toy_models(data, opts.seed, a.toy_epochs), a.out);
    std::cout << "toy fixture written to " << a.out << "; run: rescomb run --config " << (fs::path(a.out) / "config.json").string()
              << '\n';
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"rescomb: n-best rescoring, system combination and confusion-network rescoring"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);
    Args a;
    std::uint64_t seed_value = 0;
    auto add_seed = [&](CLI::App* sub) {
        sub->add_option("--seed", seed_value, "Random seed")->each([&](const std::string&) { a.seed = seed_value; });
    };
    auto add_config = [&](CLI::App* sub, bool required) {
        auto* opt = sub->add_option("--config", a.config, "Pipeline config (JSON)")->check(CLI::ExistingFile);
        if (required) opt->required();
    };

    auto* train_ngram = app.add_subcommand("train-ngram", "Train an n-gram LM and write ARPA");
    train_ngram->add_option("--text", a.text, "Training text, one sentence per line")->required()->check(CLI::ExistingFile);
    train_ngram->add_option("--order", a.order, "N-gram order")->check(CLI::Range(1, 10));
    train_ngram->add_option("--smoothing", a.smoothing, "kn or ml");
    train_ngram->add_option("--out", a.out, "Output ARPA file")->required();
    add_seed(train_ngram);

    auto* train_lstm_cmd = app.add_subcommand("train-lstm", "Train an LSTM LM checkpoint");
    train_lstm_cmd->add_option("--text", a.text, "Training text")->check(CLI::ExistingFile);
    train_lstm_cmd->add_option("--stm", a.stm, "Timed transcripts (required for --session)")->check(CLI::ExistingFile);
    train_lstm_cmd->add_option("--encoding", a.encoding, "word, letter_trigram or character");
    train_lstm_cmd->add_option("--direction", a.direction, "forward or backward");
    train_lstm_cmd->add_option("--layers", a.layers)->check(CLI::PositiveNumber);
    train_lstm_cmd->add_option("--hidden", a.hidden)->check(CLI::PositiveNumber);
    train_lstm_cmd->add_option("--embed", a.embed)->check(CLI::PositiveNumber);
    train_lstm_cmd->add_option("--epochs", a.epochs)->check(CLI::PositiveNumber);
    train_lstm_cmd->add_option("--lr", a.lr)->check(CLI::PositiveNumber);
    train_lstm_cmd->add_option("--unroll", a.unroll)->check(CLI::PositiveNumber);
    train_lstm_cmd->add_option("--batch", a.batch)->check(CLI::PositiveNumber);
    train_lstm_cmd->add_option("--min-count", a.min_count, "Minimum word count for the output vocabulary");
    train_lstm_cmd->add_flag("--session", a.session, "Condition on the conversation history");
    train_lstm_cmd->add_flag("--no-speaker-change", a.no_speaker_change);
    train_lstm_cmd->add_flag("--no-overlap", a.no_overlap);
    train_lstm_cmd->add_option("--out", a.out, "Output checkpoint")->required();
    add_seed(train_lstm_cmd);

    auto* optimize = app.add_subcommand("optimize", "Tune log-linear weights on dev n-best lists");
    optimize->add_option("--nbest", a.nbest)->required()->check(CLI::ExistingFile);
    optimize->add_option("--refs", a.refs, "Reference STM")->required()->check(CLI::ExistingFile);
    optimize->add_option("--init", a.init, "Initial weights (JSON)")->check(CLI::ExistingFile);
    optimize->add_option("--frozen", a.frozen, "Dimension held at weight 1");
    optimize->add_option("--restarts", a.restarts)->check(CLI::NonNegativeNumber);
    optimize->add_option("--max-iters", a.max_iters)->check(CLI::PositiveNumber);
    optimize->add_option("--out", a.out, "Output weights (JSON)")->required();
    add_seed(optimize);

    auto* score = app.add_subcommand("score", "Score the pipeline output, or a transcript against an STM");
    add_config(score, false);
    score->add_option("--refs", a.refs)->check(CLI::ExistingFile);
    score->add_option("--hyp", a.hyp, "Transcript: '<utterance id> words' per line")->check(CLI::ExistingFile);
    score->add_option("--format", a.format, "table or json");
    add_seed(score);

    auto* ppl = app.add_subcommand("ppl", "Perplexity of an LM on text or STM");
    ppl->add_option("--arpa", a.arpa)->check(CLI::ExistingFile);
    ppl->add_option("--lstm", a.lstm)->check(CLI::ExistingFile);
    ppl->add_option("--text", a.text)->check(CLI::ExistingFile);
    ppl->add_option("--stm", a.stm)->check(CLI::ExistingFile);
    add_seed(ppl);

    auto* serialize = app.add_subcommand("session-serialize", "Print conversations in onset order with indicator bits");
    serialize->add_option("--stm", a.stm)->required()->check(CLI::ExistingFile);
    serialize->add_option("--out", a.out);
    serialize->add_flag("--no-speaker-change", a.no_speaker_change);
    serialize->add_flag("--no-overlap", a.no_overlap);
    add_seed(serialize);

    std::map<std::string, std::string> stage_cmds = {{"rescore", "rescore"},
                                                     {"combine", "combine"},
                                                     {"select", "select"},
                                                     {"cn-rescore", "cn_rescore"}};
    std::map<std::string, CLI::App*> stage_apps;
    for (const auto& [name, stage] : stage_cmds) {
        auto* sub = app.add_subcommand(name, "Run the " + stage + " stage");
        add_config(sub, true);
        add_seed(sub);
        stage_apps[name] = sub;
    }

    auto* report = app.add_subcommand("report", "WER per system and stage");
    add_config(report, true);
    report->add_option("--format", a.format, "table or json");
    add_seed(report);

    auto* run = app.add_subcommand("run", "Run every configured stage and print the report");
    add_config(run, true);
    add_seed(run);

    auto* make_toy = app.add_subcommand("make-toy", "Write the synthetic demo fixture and its LMs");
    make_toy->add_option("--out", a.out, "Output directory")->required();
    make_toy->add_option("--lstm-epochs", a.toy_epochs)->check(CLI::PositiveNumber);
    make_toy->add_flag("--no-models", a.no_models, "Skip LM training");
    add_seed(make_toy);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        if (train_ngram->parsed()) return cmd_train_ngram(a);
        if (train_lstm_cmd->parsed()) return cmd_train_lstm(a);
        if (optimize->parsed()) return cmd_optimize(a);
        if (score->parsed()) return cmd_score(a);
        if (ppl->parsed()) return cmd_ppl(a);
        if (serialize->parsed()) return cmd_session_serialize(a);
        if (report->parsed()) return cmd_report(a);
        if (run->parsed()) return cmd_run(a);
        if (make_toy->parsed()) return cmd_make_toy(a);
        for (const auto& [name, sub] : stage_apps)
            if (sub->parsed()) {
                run_stage(load_config(a.config, a.seed), stage_cmds.at(name));
                return 0;
            }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kExitData;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
