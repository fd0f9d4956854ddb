#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "rescomb/error.hpp"
#include "rescomb/io.hpp"
#include "rescomb/lstm.hpp"
#include "lstm_internal.hpp"

#include <json.hpp>

namespace rescomb {

using Eigen::MatrixXd;
using json = nlohmann::json;

namespace {

Vocabulary training_vocab(const LstmConfig& config, const std::map<std::string, std::size_t, std::less<>>& counts) {
    if (config.vocab) return *config.vocab;
    Vocabulary v;
    v.counts = counts;
    const std::size_t min_count = config.encoding == Encoding::Character ? 1 : config.min_word_count;
    for (const auto& [w, c] : counts)
        if (c >= min_count) v.words.insert(w);
    return v;
}

struct Adam {
    LstmParams m, v;
    long step = 0;
    static constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;

    explicit Adam(const LstmParams& p) : m(p.zeros_like()), v(p.zeros_like()) {}

    void update(LstmParams& params, LstmParams& grad, double lr) {
        ++step;
        const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
        const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
        auto P = params.tensors();
        auto G = grad.tensors();
        auto M = m.tensors();
        auto V = v.tensors();
        for (std::size_t k = 0; k < P.size(); ++k) {
            auto& g = *G[k].second;
            auto& mk = *M[k].second;
            auto& vk = *V[k].second;
            mk = kBeta1 * mk + (1.0 - kBeta1) * g;
            vk = kBeta2 * vk + (1.0 - kBeta2) * g.cwiseProduct(g);
            P[k].second->array() -= lr * (mk.array() / c1) / ((vk.array() / c2).sqrt() + kEps);
        }
    }
};

double global_norm(const LstmParams& g) {
    double sq = 0.0;
    for (const auto& [name, t] : g.tensors()) sq += t->squaredNorm();
    return std::sqrt(sq);
}

void scale(LstmParams& g, double s) {
    for (auto& [name, t] : g.tensors()) *t *= s;
}

void train_sequences(LstmModel& model, const std::vector<LstmSequence>& seqs, const TrainHyper& hyper,
                     TrainReport* report) {
    if (hyper.unroll < 1 || hyper.batch < 1 || hyper.epochs < 0 || hyper.learning_rate <= 0.0)
        throw ConfigError("LSTM training needs unroll, batch >= 1 and a positive learning rate");
    std::mt19937_64 rng(hyper.seed ^ 0x9e3779b97f4a7c15ULL);
    Adam adam(model.params);
    LstmParams grad = model.params.zeros_like();
    std::vector<std::size_t> order(seqs.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_nll = 0.0;
        long epoch_tokens = 0;
        long batch_tokens = 0;
        int chunks = 0;
        auto flush = [&] {
            if (chunks == 0) return;
            if (batch_tokens > 0) {
                scale(grad, 1.0 / static_cast<double>(batch_tokens));
                const double norm = global_norm(grad);
                if (hyper.clip_norm > 0.0 && norm > hyper.clip_norm) scale(grad, hyper.clip_norm / norm);
                adam.update(model.params, grad, hyper.learning_rate);
            }
            grad = model.params.zeros_like();
            batch_tokens = 0;
            chunks = 0;
        };
        for (const std::size_t s : order) {
            const auto& seq = seqs[s];
            detail::LayerStates h(model.config.num_layers, Eigen::VectorXd::Zero(model.config.hidden_dim));
            detail::LayerStates c = h;
            for (std::size_t begin = 0; begin < seq.inputs.size(); begin += hyper.unroll) {
                const std::size_t end = std::min(seq.inputs.size(), begin + hyper.unroll);
                long n = 0;
                epoch_nll += detail::run_chunk(model, seq, begin, end, h, c, &grad, &n);
                epoch_tokens += n;
                batch_tokens += n;
                if (++chunks == hyper.batch) flush();
            }
        }
        flush();
        const double ppl = epoch_tokens > 0 ? std::exp(epoch_nll / static_cast<double>(epoch_tokens)) : 1.0;
        if (report) report->epoch_ppl.push_back(ppl);
        if (hyper.target_ppl > 0.0 && ppl <= hyper.target_ppl) break;
    }
}

} // namespace

LstmModel train_lstm(std::span<const Tokens> sentences, const LstmConfig& config, const TrainHyper& hyper,
                     TrainReport* report) {
    if (sentences.empty()) throw DataError("empty LSTM training corpus");
    std::map<std::string, std::size_t, std::less<>> counts;
    for (const auto& s : sentences)
        for (const auto& t : s) ++counts[t.surface];
    LstmModel model = create_lstm(config, training_vocab(config, counts), hyper.init_scale, hyper.seed);
    std::vector<LstmSequence> seqs;
    seqs.reserve(sentences.size());
    for (const auto& s : sentences) seqs.push_back(make_sequence(model, s, true));
    train_sequences(model, seqs, hyper, report);
    return model;
}

LstmModel train_lstm(std::span<const SessionTranscript> sessions, const LstmConfig& config, const TrainHyper& hyper,
                     TrainReport* report) {
    if (!config.session_mode) throw ConfigError("conversation training needs session_mode");
    if (sessions.empty()) throw DataError("empty LSTM training corpus");
    std::map<std::string, std::size_t, std::less<>> counts;
    for (const auto& s : sessions)
        for (const auto& item : s.items) ++counts[item.token.surface];
    LstmModel model = create_lstm(config, training_vocab(config, counts), hyper.init_scale, hyper.seed);
    std::vector<LstmSequence> seqs;
    seqs.reserve(sessions.size());
    for (const auto& s : sessions)
        seqs.push_back(make_session_sequence(model, config.direction == Direction::Backward ? reverse_session(s) : s));
    train_sequences(model, seqs, hyper, report);
    return model;
}

// ─── Checkpoints ─────────────────────────────────────────────────────────────

std::string lstm_to_json(const LstmModel& model) {
    const auto& c = model.config;
    json j;
    j["format"] = "rescomb-lstm";
    j["version"] = kCheckpointVersion;
    j["config"] = {{"encoding", std::string(to_string(c.encoding))},
                   {"num_layers", c.num_layers},
                   {"hidden_dim", c.hidden_dim},
                   {"embed_dim", c.embed_dim},
                   {"direction", std::string(to_string(c.direction))},
                   {"session_mode", c.session_mode},
                   {"speaker_change", c.session_flags.speaker_change},
                   {"overlap", c.session_flags.overlap},
                   {"stabilizer", c.stabilizer},
                   {"min_word_count", c.min_word_count}};
    j["vocab"] = std::vector<std::string>(model.vocab.words.begin(), model.vocab.words.end());
    j["symbols"] = model.symbols;
    json tensors = json::array();
    for (const auto& [name, m] : model.params.tensors()) {
        std::vector<double> data;
        data.reserve(static_cast<std::size_t>(m->size()));
        for (Eigen::Index r = 0; r < m->rows(); ++r)
            for (Eigen::Index col = 0; col < m->cols(); ++col) data.push_back((*m)(r, col));
        tensors.push_back({{"name", name}, {"shape", {m->rows(), m->cols()}}, {"data", std::move(data)}});
    }
    j["tensors"] = std::move(tensors);
    return j.dump();
}

LstmModel lstm_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw DataError(std::string("LSTM checkpoint is not valid JSON: ") + e.what());
    }
    try {
        if (j.at("format") != "rescomb-lstm") throw DataError("not an LSTM checkpoint");
        if (j.at("version").get<int>() != kCheckpointVersion)
            throw DataError("unsupported LSTM checkpoint version " + j.at("version").dump());
        const auto& jc = j.at("config");
        LstmConfig c;
        c.encoding = encoding_from_string(jc.at("encoding").get<std::string>());
        c.num_layers = jc.at("num_layers").get<int>();
        c.hidden_dim = jc.at("hidden_dim").get<int>();
        c.embed_dim = jc.at("embed_dim").get<int>();
        c.direction = direction_from_string(jc.at("direction").get<std::string>());
        c.session_mode = jc.at("session_mode").get<bool>();
        c.session_flags.speaker_change = jc.at("speaker_change").get<bool>();
        c.session_flags.overlap = jc.at("overlap").get<bool>();
        c.stabilizer = jc.at("stabilizer").get<bool>();
        c.min_word_count = jc.at("min_word_count").get<std::size_t>();
        Vocabulary vocab;
        for (const auto& w : j.at("vocab")) vocab.words.insert(w.get<std::string>());

        LstmModel model = create_lstm(c, vocab, 0.0, 0);
        if (j.at("symbols").get<std::vector<std::string>>() != model.symbols)
            throw DataError("LSTM checkpoint symbol table does not match its vocabulary");
        auto tensors = model.params.tensors();
        const auto& jt = j.at("tensors");
        if (jt.size() != tensors.size()) throw DataError("LSTM checkpoint has the wrong number of tensors");
        for (std::size_t k = 0; k < tensors.size(); ++k) {
            auto& [name, m] = tensors[k];
            const auto& e = jt[k];
            const auto shape = e.at("shape").get<std::vector<long>>();
            if (e.at("name") != name || shape.size() != 2 || shape[0] != m->rows() || shape[1] != m->cols())
                throw DataError("LSTM checkpoint tensor '" + name + "' has the wrong name or shape");
            const auto data = e.at("data").get<std::vector<double>>();
            if (static_cast<Eigen::Index>(data.size()) != m->size())
                throw DataError("LSTM checkpoint tensor '" + name + "' has the wrong size");
            std::size_t i = 0;
            for (Eigen::Index r = 0; r < m->rows(); ++r)
                for (Eigen::Index col = 0; col < m->cols(); ++col) (*m)(r, col) = data[i++];
        }
        return model;
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed LSTM checkpoint: ") + e.what());
    }
}

void save_lstm(const std::filesystem::path& path, const LstmModel& model) {
    io::write_file(path, lstm_to_json(model));
}

LstmModel load_lstm(const std::filesystem::path& path) { return lstm_from_json(io::read_file(path)); }

// ─── History and n-best rescoring ────────────────────────────────────────────

void HistoryIndex::add(const std::string& utterance_id, TimedUtterance utterance) {
    if (where_.contains(utterance_id)) throw DataError("duplicate history utterance " + utterance_id);
    auto& conv = conversations_[utterance.conversation_id];
    where_.emplace(utterance_id, std::make_pair(utterance.conversation_id, conv.size()));
    conv.push_back(std::move(utterance));
}

bool HistoryIndex::contains(const std::string& utterance_id) const { return where_.contains(utterance_id); }

std::optional<SessionContext> HistoryIndex::context(const std::string& utterance_id, Direction direction,
                                                    SessionFlags flags) const {
    const auto it = where_.find(utterance_id);
    if (it == where_.end()) return std::nullopt;
    const auto& conv = conversations_.at(it->second.first);
    const auto ordered = order_conversation(conv, flags);
    std::size_t k = 0;
    while (ordered[k].utterance != &conv[it->second.second]) ++k;

    auto append = [](std::vector<SessionItem>& items, const OrderedUtterance& u) {
        const auto& toks = u.utterance->tokens;
        for (std::size_t i = 0; i < toks.size(); ++i)
            items.push_back({toks[i], i == 0 && u.speaker_change, u.overlap, i == 0});
    };

    SessionContext ctx;
    if (direction == Direction::Forward) {
        for (std::size_t q = 0; q < k; ++q) append(ctx.history, ordered[q]);
        ctx.speaker_change = ordered[k].speaker_change;
        ctx.overlap = ordered[k].overlap;
    } else {
        SessionTranscript later;
        for (std::size_t q = k + 1; q < ordered.size(); ++q) append(later.items, ordered[q]);
        ctx.history = reverse_session(later).items;
        if (k + 1 < ordered.size()) {
            ctx.speaker_change = ordered[k + 1].speaker_change;
            ctx.overlap = ordered[k + 1].overlap;
        }
    }
    return ctx;
}

HistoryIndex history_from_references(const std::vector<TimedUtterance>& utterances) {
    HistoryIndex index;
    for (const auto& u : utterances) index.add(make_utterance_id(u), u);
    return index;
}

HistoryIndex history_from_one_best(const std::vector<NBestList>& lists) {
    HistoryIndex index;
    for (const auto& list : lists) {
        const auto key = parse_utterance_id(list.utterance_id);
        if (!key) throw DataError("utterance id '" + list.utterance_id + "' carries no conversation timing");
        if (list.hypotheses.empty()) throw DataError("empty n-best list for " + list.utterance_id);
        index.add(list.utterance_id,
                  TimedUtterance{key->conversation_id, key->speaker, key->onset, key->end, list.hypotheses[0].tokens});
    }
    return index;
}

namespace {

// Sentence log-probabilities of every hypothesis under one model.
std::vector<double> score_direction(const LstmModel& model, const NBestList& nbest, const HistoryIndex* history) {
    std::optional<SessionContext> ctx;
    if (model.config.session_mode) {
        if (!history) throw DataError("session-mode LSTM rescoring needs a conversation history");
        ctx = history->context(nbest.utterance_id, model.config.direction, model.config.session_flags);
        if (!ctx) throw DataError("no conversation history for utterance " + nbest.utterance_id);
    }
    const SessionContext* sp = ctx ? &*ctx : nullptr;
    const auto [h, c] = detail::consume_history(model, sp);
    std::vector<double> out;
    out.reserve(nbest.hypotheses.size());
    for (const auto& hyp : nbest.hypotheses) {
        const auto lp = detail::score_from_state(model, hyp.tokens, sp, h, c);
        out.push_back(std::accumulate(lp.begin(), lp.end(), 0.0));
    }
    return out;
}

} // namespace

NBestList score_nbest_lstm(std::span<const LstmFamily> families, const NBestList& nbest, const HistoryIndex* history) {
    NBestList out = nbest;
    const LstmModel* word_model = nullptr;
    for (const auto& fam : families) {
        if (!fam.forward && !fam.backward) throw ConfigError("LSTM family '" + fam.name + "' has no model");
        if (fam.name.empty()) throw ConfigError("LSTM family needs a dimension name");
        std::vector<double> fwd, bwd;
        if (fam.forward) fwd = score_direction(*fam.forward, nbest, history);
        if (fam.backward) bwd = score_direction(*fam.backward, nbest, history);
        for (std::size_t k = 0; k < out.hypotheses.size(); ++k) {
            double v;
            if (fam.forward && fam.backward) v = combine_bidirectional(fwd[k], bwd[k]);
            else v = fam.forward ? fwd[k] : bwd[k];
            out.hypotheses[k].scores[fam.name] = v;
        }
        for (const LstmModel* m : {fam.forward, fam.backward})
            if (!word_model && m && m->config.encoding != Encoding::Character) word_model = m;
    }
    if (word_model)
        for (auto& hyp : out.hypotheses)
            hyp.scores[dims::kOovCount] = static_cast<double>(count_oov(*word_model, hyp.tokens));
    return out;
}

} // namespace rescomb
