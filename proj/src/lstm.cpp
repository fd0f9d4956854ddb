#include "rescomb/lstm.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "rescomb/error.hpp"
#include "rescomb/ngram.hpp"
#include "lstm_internal.hpp"

namespace rescomb {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr char kTrigramPad = '#';

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Stabilizer parameter whose gain is exactly 1.
double unit_gain_beta() { return std::log(std::exp(4.0) - 1.0) / 4.0; }

} // namespace

// ─── Names ───────────────────────────────────────────────────────────────────

std::string_view to_string(Encoding e) {
    switch (e) {
        case Encoding::WordOneHotTied: return "word";
        case Encoding::LetterTrigram: return "letter_trigram";
        case Encoding::Character: return "character";
    }
    return "?";
}

std::string_view to_string(Direction d) { return d == Direction::Forward ? "forward" : "backward"; }

Encoding encoding_from_string(std::string_view s) {
    if (s == "word" || s == "word_onehot_tied") return Encoding::WordOneHotTied;
    if (s == "letter_trigram" || s == "trigram") return Encoding::LetterTrigram;
    if (s == "character" || s == "char") return Encoding::Character;
    throw ConfigError("unknown LSTM encoding '" + std::string(s) + "'");
}

Direction direction_from_string(std::string_view s) {
    if (s == "forward" || s == "fwd") return Direction::Forward;
    if (s == "backward" || s == "bwd") return Direction::Backward;
    throw ConfigError("unknown LSTM direction '" + std::string(s) + "'");
}

LstmConfig LstmConfig::word_preset() {
    LstmConfig c;
    c.encoding = Encoding::WordOneHotTied;
    c.num_layers = 3;
    c.hidden_dim = 1000;
    c.embed_dim = 1000;
    return c;
}

LstmConfig LstmConfig::character_preset() {
    LstmConfig c;
    c.encoding = Encoding::Character;
    c.num_layers = 2;
    c.hidden_dim = 1000;
    c.embed_dim = 300;
    return c;
}

// ─── Letter trigrams and stabilizer ──────────────────────────────────────────

std::map<std::string, int> letter_trigrams(std::string_view word) {
    std::string padded;
    padded.reserve(word.size() + 2);
    padded.push_back(kTrigramPad);
    padded.append(word);
    padded.push_back(kTrigramPad);
    std::map<std::string, int> out;
    for (std::size_t i = 0; i + 3 <= padded.size(); ++i) ++out[padded.substr(i, 3)];
    return out;
}

TrigramInventory TrigramInventory::build(const std::set<std::string, std::less<>>& words) {
    std::set<std::string> all;
    for (const auto& w : words)
        for (const auto& [tri, count] : letter_trigrams(w)) all.insert(tri);
    TrigramInventory inv;
    int i = 0;
    for (const auto& tri : all) inv.index.emplace(tri, i++);
    return inv;
}

SparseFeatures encode_word_letter_trigram(std::string_view word, const TrigramInventory& inventory) {
    SparseFeatures out;
    for (const auto& [tri, count] : letter_trigrams(word)) {
        const auto it = inventory.index.find(tri);
        if (it != inventory.index.end()) out.emplace_back(it->second, static_cast<double>(count));
    }
    std::sort(out.begin(), out.end());
    return out;
}

double stabilizer_scale(double beta) {
    const double x = 4.0 * beta;
    const double softplus = x > 30.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
    return 0.25 * softplus;
}

VectorXd stabilize(const VectorXd& x, double beta) { return x * stabilizer_scale(beta); }

// ─── Parameters ──────────────────────────────────────────────────────────────

std::vector<std::pair<std::string, MatrixXd*>> LstmParams::tensors() {
    std::vector<std::pair<std::string, MatrixXd*>> out;
    auto add = [&](std::string name, MatrixXd& m) {
        if (m.size() > 0) out.emplace_back(std::move(name), &m);
    };
    add("embedding", embedding);
    add("projection", projection);
    add("output", output);
    add("output_bias", output_bias);
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        add(p + "w_input", layers[l].w_input);
        add(p + "w_recurrent", layers[l].w_recurrent);
        add(p + "bias", layers[l].bias);
        add(p + "beta", layers[l].beta);
    }
    return out;
}

std::vector<std::pair<std::string, const MatrixXd*>> LstmParams::tensors() const {
    std::vector<std::pair<std::string, const MatrixXd*>> out;
    for (auto& [name, m] : const_cast<LstmParams*>(this)->tensors()) out.emplace_back(name, m);
    return out;
}

LstmParams LstmParams::zeros_like() const {
    LstmParams z = *this;
    for (auto& [name, m] : z.tensors()) m->setZero();
    return z;
}

std::size_t LstmParams::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, m] : tensors()) n += static_cast<std::size_t>(m->size());
    return n;
}

int LstmModel::num_bits() const {
    if (!config.session_mode) return 0;
    return (config.session_flags.speaker_change ? 1 : 0) + (config.session_flags.overlap ? 1 : 0);
}

int LstmModel::input_dim() const {
    const int base = config.encoding == Encoding::LetterTrigram ? trigrams.size() : config.embed_dim;
    return base + num_bits();
}

int LstmModel::symbol(std::string_view s) const {
    const auto it = symbol_index.find(s);
    return it == symbol_index.end() ? -1 : it->second;
}

bool LstmModel::is_oov(std::string_view word) const {
    return config.encoding != Encoding::Character && !vocab.contains(word);
}

LstmModel create_lstm(const LstmConfig& config, const Vocabulary& vocab, double init_scale, std::uint64_t seed) {
    if (config.num_layers < 1 || config.hidden_dim < 1) throw ConfigError("LSTM needs at least one non-empty layer");
    if (config.encoding != Encoding::LetterTrigram && config.embed_dim < 1)
        throw ConfigError("LSTM embedding dimension must be positive");

    LstmModel m;
    m.config = config;
    m.config.vocab.reset();
    for (const auto& w : vocab.words)
        if (w != kSentenceStart && w != kSentenceEnd && w != kUnknownWord && w != kNullWord) m.vocab.words.insert(w);
    m.vocab.counts = vocab.counts;

    if (config.encoding == Encoding::Character) {
        std::set<std::string> chars;
        for (const auto& w : m.vocab.words)
            for (char c : w) chars.insert(std::string(1, c));
        m.symbols.assign(chars.begin(), chars.end());
        m.symbols.push_back(kCharBoundary);
    } else {
        m.symbols.assign(m.vocab.words.begin(), m.vocab.words.end());
    }
    m.symbols.push_back(kSentenceEnd);
    m.symbols.push_back(kUnknownWord);
    for (int i = 0; i < m.num_symbols(); ++i) m.symbol_index.emplace(m.symbols[i], i);

    if (config.encoding == Encoding::LetterTrigram) {
        auto words = m.vocab.words;
        words.insert(kSentenceEnd);
        m.trigrams = TrigramInventory::build(words);
    }

    const int H = config.hidden_dim, S = m.num_symbols(), D = config.embed_dim;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    auto init = [&](MatrixXd& mat, int rows, int cols) {
        mat.resize(rows, cols);
        for (Eigen::Index j = 0; j < mat.cols(); ++j)
            for (Eigen::Index i = 0; i < mat.rows(); ++i) mat(i, j) = init_scale * uni(rng);
    };

    auto& p = m.params;
    switch (config.encoding) {
        case Encoding::WordOneHotTied:
            init(p.embedding, S, D);
            init(p.projection, D, H);
            break;
        case Encoding::Character:
            init(p.embedding, S, D);
            init(p.output, S, H);
            break;
        case Encoding::LetterTrigram:
            init(p.output, S, H);
            break;
    }
    p.output_bias = MatrixXd::Zero(S, 1);
    p.layers.resize(config.num_layers);
    for (int l = 0; l < config.num_layers; ++l) {
        auto& L = p.layers[l];
        init(L.w_input, 4 * H, l == 0 ? m.input_dim() : H);
        init(L.w_recurrent, 4 * H, H);
        L.bias = MatrixXd::Zero(4 * H, 1);
        if (init_scale > 0.0) L.bias.block(H, 0, H, 1).setConstant(1.0);  // forget gate
        if (config.stabilizer) L.beta = MatrixXd::Constant(1, 1, unit_gain_beta());
    }
    return m;
}

// ─── Sequences ───────────────────────────────────────────────────────────────

namespace {

struct UtteranceBits {
    bool speaker_change = false;
    bool overlap = false;
};

std::array<double, 2> pack_bits(const LstmModel& m, UtteranceBits b) {
    std::array<double, 2> out{};
    if (!m.config.session_mode) return out;
    int k = 0;
    if (m.config.session_flags.speaker_change) out[k++] = b.speaker_change ? 1.0 : 0.0;
    if (m.config.session_flags.overlap) out[k++] = b.overlap ? 1.0 : 0.0;
    return out;
}

StepInput word_input(const LstmModel& m, const std::string& word, const std::array<double, 2>& bits) {
    StepInput in;
    in.bits = bits;
    if (m.config.encoding == Encoding::LetterTrigram) {
        in.features = encode_word_letter_trigram(word, m.trigrams);
    } else {
        const int id = m.symbol(word);
        in.symbol = id >= 0 ? id : m.symbol(kUnknownWord);
    }
    return in;
}

StepInput symbol_input(int symbol, const std::array<double, 2>& bits) {
    StepInput in;
    in.bits = bits;
    in.symbol = symbol;
    return in;
}

// Appends one utterance: the boundary input, then one step per target.
void append_utterance(const LstmModel& m, std::span<const Token> tokens, std::span<const int> slots,
                      UtteranceBits ub, bool training, int end_slot, LstmSequence& seq) {
    const auto bits = pack_bits(m, ub);
    const int eos = m.symbol(kSentenceEnd);
    const int unk = m.symbol(kUnknownWord);
    auto push_target = [&](int target, int slot, bool scored) {
        seq.targets.push_back(target);
        seq.slot.push_back(slot);
        seq.scored.push_back(scored);
    };

    if (m.config.encoding == Encoding::Character) {
        const int boundary = m.symbol(kCharBoundary);
        seq.inputs.push_back(symbol_input(eos, bits));
        for (std::size_t k = 0; k < tokens.size(); ++k) {
            for (char c : tokens[k].surface) {
                const int id = m.symbol(std::string_view(&c, 1));
                const int sym = id >= 0 ? id : unk;
                push_target(sym, slots[k], true);
                seq.inputs.push_back(symbol_input(sym, bits));
            }
            push_target(boundary, slots[k], true);
            seq.inputs.push_back(symbol_input(boundary, bits));
        }
        push_target(eos, end_slot, true);
        return;
    }

    StepInput start = word_input(m, kSentenceEnd, bits);
    seq.inputs.push_back(std::move(start));
    for (std::size_t k = 0; k < tokens.size(); ++k) {
        const int id = m.is_oov(tokens[k].surface) ? -1 : m.symbol(tokens[k].surface);
        push_target(id >= 0 ? id : unk, slots[k], id >= 0 || training);
        seq.inputs.push_back(word_input(m, tokens[k].surface, bits));
    }
    push_target(eos, end_slot, true);
}

struct UtteranceGroup {
    Tokens tokens;
    UtteranceBits bits;
};

std::vector<UtteranceGroup> group_items(std::span<const SessionItem> items) {
    std::vector<UtteranceGroup> groups;
    for (const auto& item : items) {
        if (groups.empty() || item.utterance_boundary) {
            groups.emplace_back();
            groups.back().bits = {item.speaker_change, item.overlap};
        }
        groups.back().tokens.push_back(item.token);
    }
    return groups;
}

} // namespace

LstmSequence make_sequence(const LstmModel& model, std::span<const Token> tokens, bool training) {
    const int n = static_cast<int>(tokens.size());
    Tokens reading(tokens.begin(), tokens.end());
    std::vector<int> slots(n);
    for (int k = 0; k < n; ++k) slots[k] = k;
    if (model.config.direction == Direction::Backward) {
        std::reverse(reading.begin(), reading.end());
        std::reverse(slots.begin(), slots.end());
    }
    LstmSequence seq;
    append_utterance(model, reading, slots, {}, training, n, seq);
    return seq;
}

LstmSequence make_session_sequence(const LstmModel& model, const SessionTranscript& transcript) {
    LstmSequence seq;
    for (const auto& g : group_items(transcript.items)) {
        const std::vector<int> slots(g.tokens.size(), -1);
        append_utterance(model, g.tokens, slots, g.bits, true, -1, seq);
    }
    return seq;
}

SessionTranscript reverse_session(const SessionTranscript& transcript) {
    const auto groups = group_items(transcript.items);
    SessionTranscript out;
    out.conversation_id = transcript.conversation_id;
    for (std::size_t r = 0; r < groups.size(); ++r) {
        const std::size_t q = groups.size() - 1 - r;
        // Bits of the pair (q, q + 1), which is read as (q + 1) then q.
        const UtteranceBits bits = q + 1 < groups.size() ? groups[q + 1].bits : UtteranceBits{};
        const auto& toks = groups[q].tokens;
        for (std::size_t k = 0; k < toks.size(); ++k) {
            SessionItem item;
            item.token = toks[toks.size() - 1 - k];
            item.utterance_boundary = k == 0;
            item.speaker_change = k == 0 && bits.speaker_change;
            item.overlap = bits.overlap;
            out.items.push_back(std::move(item));
        }
    }
    return out;
}

// ─── Forward / backward ──────────────────────────────────────────────────────

namespace {

struct State {
    std::vector<VectorXd> h, c;
};

State zero_state(const LstmModel& m) {
    State s;
    s.h.assign(m.config.num_layers, VectorXd::Zero(m.config.hidden_dim));
    s.c = s.h;
    return s;
}

struct LayerCache {
    VectorXd x, h_prev, c_prev, i, f, g, o, c, tanh_c, m;
};

struct StepCache {
    std::vector<LayerCache> layers;
    VectorXd top;   // output of the last layer
    VectorXd proj;  // projection into embedding space (tied model)
    VectorXd probs;
};

// Dense first-layer input for the embedding encodings.
VectorXd dense_input(const LstmModel& m, const StepInput& in) {
    const int nb = m.num_bits();
    VectorXd x(m.config.embed_dim + nb);
    x.head(m.config.embed_dim) = m.params.embedding.row(in.symbol).transpose();
    for (int k = 0; k < nb; ++k) x(m.config.embed_dim + k) = in.bits[k];
    return x;
}

// Advances the state by one input and returns the log-softmax output.
VectorXd step_forward(const LstmModel& m, const StepInput& in, State& st, StepCache* cache) {
    const int H = m.config.hidden_dim;
    const int nb = m.num_bits();
    const auto& P = m.params;
    if (cache) cache->layers.resize(m.config.num_layers);

    VectorXd below;
    for (int l = 0; l < m.config.num_layers; ++l) {
        const auto& L = P.layers[l];
        VectorXd a = L.bias.col(0) + L.w_recurrent * st.h[l];
        VectorXd x;
        if (l == 0 && m.config.encoding == Encoding::LetterTrigram) {
            const int T = m.trigrams.size();
            for (const auto& [j, v] : in.features) a += v * L.w_input.col(j);
            for (int k = 0; k < nb; ++k) a += in.bits[k] * L.w_input.col(T + k);
        } else {
            x = l == 0 ? dense_input(m, in) : below;
            a += L.w_input * x;
        }
        VectorXd i = a.segment(0, H).unaryExpr([](double v) { return sigmoid(v); });
        VectorXd f = a.segment(H, H).unaryExpr([](double v) { return sigmoid(v); });
        VectorXd g = a.segment(2 * H, H).array().tanh();
        VectorXd o = a.segment(3 * H, H).unaryExpr([](double v) { return sigmoid(v); });
        VectorXd c = f.cwiseProduct(st.c[l]) + i.cwiseProduct(g);
        VectorXd tanh_c = c.array().tanh();
        VectorXd mv = o.cwiseProduct(tanh_c);
        VectorXd h = m.config.stabilizer ? VectorXd(mv * stabilizer_scale(L.beta(0, 0))) : mv;
        if (cache) {
            auto& lc = cache->layers[l];
            lc.x = std::move(x);
            lc.h_prev = st.h[l];
            lc.c_prev = st.c[l];
            lc.i = std::move(i);
            lc.f = std::move(f);
            lc.g = std::move(g);
            lc.o = std::move(o);
            lc.c = c;
            lc.tanh_c = std::move(tanh_c);
            lc.m = std::move(mv);
        }
        st.c[l] = std::move(c);
        st.h[l] = h;
        below = std::move(h);
    }

    VectorXd logits;
    if (m.tied()) {
        VectorXd proj = P.projection * below;
        logits = P.embedding * proj + P.output_bias.col(0);
        if (cache) cache->proj = std::move(proj);
    } else {
        logits = P.output * below + P.output_bias.col(0);
    }
    const double mx = logits.maxCoeff();
    const double lse = mx + std::log((logits.array() - mx).exp().sum());
    VectorXd log_probs = logits.array() - lse;
    if (cache) {
        cache->top = std::move(below);
        cache->probs = log_probs.array().exp();
    }
    return log_probs;
}

// Backpropagation through the steps [begin, begin + caches.size()) of seq.
void backward(const LstmModel& m, const LstmSequence& seq, std::size_t begin, std::span<const StepCache> caches,
              LstmParams& grad) {
    const auto& inputs = seq.inputs;
    const int H = m.config.hidden_dim;
    const int nl = m.config.num_layers;
    const int nb = m.num_bits();
    const auto& P = m.params;
    std::vector<VectorXd> dh_next(nl, VectorXd::Zero(H)), dc_next(nl, VectorXd::Zero(H));

    for (std::size_t t = caches.size(); t-- > 0;) {
        const auto& sc = caches[t];
        VectorXd dh_above = VectorXd::Zero(H);
        if (seq.scored[begin + t]) {
            VectorXd dlogits = sc.probs;
            dlogits(seq.targets[begin + t]) -= 1.0;
            grad.output_bias.col(0) += dlogits;
            if (m.tied()) {
                grad.embedding += dlogits * sc.proj.transpose();
                VectorXd dproj = P.embedding.transpose() * dlogits;
                grad.projection += dproj * sc.top.transpose();
                dh_above = P.projection.transpose() * dproj;
            } else {
                grad.output += dlogits * sc.top.transpose();
                dh_above = P.output.transpose() * dlogits;
            }
        }
        for (int l = nl - 1; l >= 0; --l) {
            const auto& lc = sc.layers[l];
            const auto& L = P.layers[l];
            auto& G = grad.layers[l];
            VectorXd dh = dh_above + dh_next[l];
            VectorXd dm;
            if (m.config.stabilizer) {
                const double beta = L.beta(0, 0);
                G.beta(0, 0) += dh.dot(lc.m) * sigmoid(4.0 * beta);
                dm = dh * stabilizer_scale(beta);
            } else {
                dm = dh;
            }
            VectorXd d_o = dm.cwiseProduct(lc.tanh_c);
            VectorXd dc = dc_next[l] + dm.cwiseProduct(lc.o).cwiseProduct((1.0 - lc.tanh_c.array().square()).matrix());
            VectorXd da(4 * H);
            da.segment(0, H) = dc.cwiseProduct(lc.g).cwiseProduct((lc.i.array() * (1.0 - lc.i.array())).matrix());
            da.segment(H, H) = dc.cwiseProduct(lc.c_prev).cwiseProduct((lc.f.array() * (1.0 - lc.f.array())).matrix());
            da.segment(2 * H, H) = dc.cwiseProduct(lc.i).cwiseProduct((1.0 - lc.g.array().square()).matrix());
            da.segment(3 * H, H) = d_o.cwiseProduct((lc.o.array() * (1.0 - lc.o.array())).matrix());
            dc_next[l] = dc.cwiseProduct(lc.f);

            G.w_recurrent += da * lc.h_prev.transpose();
            G.bias.col(0) += da;
            dh_next[l] = L.w_recurrent.transpose() * da;

            if (l == 0 && m.config.encoding == Encoding::LetterTrigram) {
                const int T = m.trigrams.size();
                for (const auto& [j, v] : inputs[begin + t].features) G.w_input.col(j) += v * da;
                for (int k = 0; k < nb; ++k) G.w_input.col(T + k) += inputs[begin + t].bits[k] * da;
            } else {
                G.w_input += da * lc.x.transpose();
                VectorXd dx = L.w_input.transpose() * da;
                if (l == 0) grad.embedding.row(inputs[begin + t].symbol) += dx.head(m.config.embed_dim).transpose();
                else dh_above = std::move(dx);
            }
        }
    }
}

} // namespace

double detail::run_chunk(const LstmModel& m, const LstmSequence& seq, std::size_t begin, std::size_t end,
                         detail::LayerStates& h, detail::LayerStates& c, LstmParams* grad, long* n_scored) {
    State st{std::move(h), std::move(c)};
    std::vector<StepCache> caches(grad ? end - begin : 0);
    double nll = 0.0;
    for (std::size_t t = begin; t < end; ++t) {
        const VectorXd lp = step_forward(m, seq.inputs[t], st, grad ? &caches[t - begin] : nullptr);
        if (seq.scored[t]) {
            nll -= lp(seq.targets[t]);
            if (n_scored) ++*n_scored;
        }
    }
    if (grad) {
        backward(m, seq, begin, caches, *grad);
    }
    h = std::move(st.h);
    c = std::move(st.c);
    return nll;
}

double sequence_loss(const LstmModel& model, const LstmSequence& seq, LstmParams* grad) {
    auto st = zero_state(model);
    return detail::run_chunk(model, seq, 0, seq.inputs.size(), st.h, st.c, grad, nullptr);
}

std::vector<VectorXd> lstm_step_distributions(const LstmModel& model, const LstmSequence& seq) {
    auto st = zero_state(model);
    std::vector<VectorXd> out;
    out.reserve(seq.inputs.size());
    for (const auto& in : seq.inputs) out.push_back(step_forward(model, in, st, nullptr).array().exp());
    return out;
}

// ─── Scoring ─────────────────────────────────────────────────────────────────

int count_oov(const LstmModel& model, std::span<const Token> tokens) {
    return static_cast<int>(
        std::count_if(tokens.begin(), tokens.end(), [&](const Token& t) { return model.is_oov(t.surface); }));
}

std::pair<detail::LayerStates, detail::LayerStates> detail::consume_history(const LstmModel& model,
                                                                           const SessionContext* session) {
    auto st = zero_state(model);
    if (model.config.session_mode && session) {
        LstmSequence seq;
        for (const auto& g : group_items(session->history)) {
            const std::vector<int> slots(g.tokens.size(), -1);
            append_utterance(model, g.tokens, slots, g.bits, false, -1, seq);
        }
        for (const auto& in : seq.inputs) step_forward(model, in, st, nullptr);
    }
    return {std::move(st.h), std::move(st.c)};
}

std::vector<double> detail::score_from_state(const LstmModel& model, std::span<const Token> tokens,
                                             const SessionContext* session, LayerStates h, LayerStates c) {
    const int n = static_cast<int>(tokens.size());
    Tokens reading(tokens.begin(), tokens.end());
    std::vector<int> slots(n);
    for (int k = 0; k < n; ++k) slots[k] = k;
    if (model.config.direction == Direction::Backward) {
        std::reverse(reading.begin(), reading.end());
        std::reverse(slots.begin(), slots.end());
    }
    UtteranceBits bits;
    if (model.config.session_mode && session) bits = {session->speaker_change, session->overlap};
    LstmSequence seq;
    append_utterance(model, reading, slots, bits, false, n, seq);

    State st{std::move(h), std::move(c)};
    std::vector<double> out(n + 1, 0.0);
    for (std::size_t t = 0; t < seq.inputs.size(); ++t) {
        const VectorXd lp = step_forward(model, seq.inputs[t], st, nullptr);
        if (seq.scored[t]) out[seq.slot[t]] += lp(seq.targets[t]);
    }
    return out;
}

std::vector<double> lstm_score(const LstmModel& model, std::span<const Token> tokens, const SessionContext* session) {
    if (model.config.session_mode && !session)
        throw DataError("session-mode LSTM scoring needs a history context");
    auto [h, c] = detail::consume_history(model, session);
    return detail::score_from_state(model, tokens, session, std::move(h), std::move(c));
}

double combine_bidirectional(double fwd_logprob, double bwd_logprob) { return 0.5 * fwd_logprob + 0.5 * bwd_logprob; }

} // namespace rescomb
