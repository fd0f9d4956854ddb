#include "rescomb/ngram.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "rescomb/error.hpp"

namespace rescomb {

namespace {

constexpr double kNegInf = -INFINITY;

double safe_log(double p) { return p > 0.0 ? std::log(p) : kNegInf; }

NGram prefix(const NGram& g) { return NGram(g.begin(), g.end() - 1); }
NGram suffix(const NGram& g) { return NGram(g.begin() + 1, g.end()); }

double discount_for(const std::map<NGram, long>& counts) {
    long n1 = 0, n2 = 0;
    for (const auto& [g, c] : counts) {
        if (c == 1) ++n1;
        if (c == 2) ++n2;
    }
    const double d = (n1 + 2 * n2) > 0 ? static_cast<double>(n1) / static_cast<double>(n1 + 2 * n2) : 0.5;
    return std::max(d, 0.1);
}

// Words the model predicts: the vocabulary minus <s>.
std::vector<std::string> predicted_words(const Vocabulary& vocab) {
    std::vector<std::string> out;
    for (const auto& w : vocab.words)
        if (w != kSentenceStart) out.push_back(w);
    return out;
}

void apply_unk_floor(std::map<NGram, NGramEntry>& unigrams, double floor) {
    if (floor <= 0.0) return;
    auto it = unigrams.find(NGram{kUnknownWord});
    if (it == unigrams.end()) return;
    const double p_unk = std::exp(it->second.log_prob);
    if (p_unk >= floor) return;
    const double scale = std::log((1.0 - floor) / (1.0 - p_unk));
    for (auto& [g, e] : unigrams)
        if (g[0] != kSentenceStart && g[0] != kUnknownWord) e.log_prob += scale;
    it->second.log_prob = std::log(floor);
}

} // namespace

const NGramEntry* NGramModel::find(const NGram& ngram) const {
    if (ngram.empty() || ngram.size() > tables.size()) return nullptr;
    const auto& t = tables[ngram.size() - 1];
    const auto it = t.find(ngram);
    return it == t.end() ? nullptr : &it->second;
}

const std::string& NGramModel::map_word(const std::string& word) const {
    static const std::string unk = kUnknownWord;
    return vocab.contains(word) ? word : unk;
}

void NGramModel::refresh_vocab() {
    vocab.words.clear();
    if (tables.empty()) return;
    for (const auto& [g, e] : tables[0]) vocab.words.insert(g[0]);
}

// ─── Training ────────────────────────────────────────────────────────────────

NGramModel train_ngram(std::span<const Tokens> corpus, int order, const NGramConfig& config) {
    if (order < 1 || order > 4) throw ConfigError("n-gram order must be in [1, 4]");
    if (corpus.empty()) throw DataError("empty n-gram training corpus");
    std::size_t n_words = 0;
    for (const auto& s : corpus) n_words += s.size();
    if (n_words < static_cast<std::size_t>(order))
        throw DataError("n-gram training corpus has fewer tokens than the model order");

    NGramModel model;
    model.tables.resize(order);
    model.counts.resize(order);

    // Vocabulary.
    if (config.vocabulary) {
        model.vocab.words = config.vocabulary->words;
    } else {
        for (const auto& s : corpus)
            for (const auto& t : s) model.vocab.words.insert(t.surface);
    }
    model.vocab.words.insert(kSentenceStart);
    model.vocab.words.insert(kSentenceEnd);
    model.vocab.words.insert(kUnknownWord);

    // Raw counts.
    for (const auto& s : corpus) {
        std::vector<std::string> seq;
        if (config.sentence_boundaries) seq.push_back(kSentenceStart);
        for (const auto& t : s) seq.push_back(model.map_word(t.surface));
        if (config.sentence_boundaries) seq.push_back(kSentenceEnd);
        for (const auto& w : seq) ++model.vocab.counts[w];
        for (int n = 1; n <= order; ++n)
            for (std::size_t i = 0; i + n <= seq.size(); ++i)
                ++model.counts[n - 1][NGram(seq.begin() + i, seq.begin() + i + n)];
    }
    model.counts[0].erase(NGram{kSentenceStart});

    const bool kn = config.smoothing == Smoothing::KneserNey;

    // Counts used for estimation: raw at the top order, continuation counts
    // below it (raw for n-grams starting with <s>, which have no predecessor).
    std::vector<std::map<NGram, long>> est(order);
    est[order - 1] = model.counts[order - 1];
    for (int n = order - 1; n >= 1; --n) {
        auto& e = est[n - 1];
        if (!kn) {
            e = model.counts[n - 1];
            continue;
        }
        for (const auto& [g, c] : model.counts[n - 1]) e[g] = g[0] == kSentenceStart ? c : 0;
        for (const auto& [g, c] : model.counts[n]) {
            auto it = e.find(suffix(g));
            if (it != e.end() && it->first[0] != kSentenceStart) ++it->second;
        }
    }

    // Unigrams.
    {
        const auto words = predicted_words(model.vocab);
        long total = 0, types = 0;
        for (const auto& [g, c] : est[0]) {
            total += c;
            if (c > 0) ++types;
        }
        if (total <= 0) throw DataError("n-gram corpus yields no unigram counts");
        const double d = kn ? discount_for(est[0]) : 0.0;
        const double uniform = kn ? d * static_cast<double>(types) / static_cast<double>(total) /
                                        static_cast<double>(words.size())
                                  : 0.0;
        auto& t = model.tables[0];
        for (const auto& w : words) {
            const auto it = est[0].find(NGram{w});
            const long c = it == est[0].end() ? 0 : it->second;
            const double p = std::max(static_cast<double>(c) - d, 0.0) / static_cast<double>(total) + uniform;
            t[NGram{w}].log_prob = safe_log(p);
        }
        t[NGram{kSentenceStart}].log_prob = kNegInf;
        apply_unk_floor(t, config.unk_floor);
    }

    // Higher orders, each interpolated with the complete lower-order model.
    for (int n = 2; n <= order; ++n) {
        const double d = kn ? discount_for(est[n - 1]) : 0.0;
        std::map<NGram, std::pair<long, long>> context_stats;  // total, types
        for (const auto& [g, c] : est[n - 1]) {
            auto& st = context_stats[prefix(g)];
            st.first += c;
            if (c > 0) ++st.second;
        }
        std::map<NGram, NGramEntry> entries;
        for (const auto& [g, c] : est[n - 1]) {
            const auto& [total, types] = context_stats[prefix(g)];
            double p;
            if (!kn) {
                p = static_cast<double>(c) / static_cast<double>(total);
            } else if (total == 0) {
                p = std::exp(ngram_logprob(model, suffix(prefix(g)), g.back()));
            } else {
                const double gamma = d * static_cast<double>(types) / static_cast<double>(total);
                const NGram lower_ctx(g.begin() + 1, g.end() - 1);
                p = std::max(static_cast<double>(c) - d, 0.0) / static_cast<double>(total) +
                    gamma * std::exp(ngram_logprob(model, lower_ctx, g.back()));
            }
            entries[g].log_prob = safe_log(p);
        }
        for (const auto& [h, st] : context_stats) {
            const auto& [total, types] = st;
            double bow;
            if (!kn) bow = kNegInf;
            else if (total == 0) bow = 0.0;
            else bow = std::log(d * static_cast<double>(types) / static_cast<double>(total));
            auto it = model.tables[n - 2].find(h);
            if (it == model.tables[n - 2].end())
                throw DataError("internal: missing context entry for n-gram");
            it->second.log_backoff = bow;
        }
        model.tables[n - 1] = std::move(entries);
    }

    if (!config.cutoffs.empty()) return prune_ngram(model, config.cutoffs);
    return model;
}

// ─── Scoring ─────────────────────────────────────────────────────────────────

double ngram_logprob(const NGramModel& model, std::span<const std::string> context, const std::string& word) {
    if (model.tables.empty()) throw DataError("n-gram model has no tables");
    const std::size_t keep = std::min<std::size_t>(context.size(), model.order() - 1);
    NGram ctx;
    ctx.reserve(keep + 1);
    for (std::size_t i = context.size() - keep; i < context.size(); ++i) ctx.push_back(model.map_word(context[i]));
    const std::string& w = model.map_word(word);

    double acc = 0.0;
    for (std::size_t start = 0; start <= ctx.size(); ++start) {
        NGram g(ctx.begin() + start, ctx.end());
        g.push_back(w);
        if (const auto* e = model.find(g)) return acc + e->log_prob;
        if (start < ctx.size()) {
            const NGram h(ctx.begin() + start, ctx.end());
            if (const auto* he = model.find(h); he && he->log_backoff) acc += *he->log_backoff;
        }
    }
    // The word is missing from the unigram table (e.g. <unk> absent).
    return kNegInf;
}

double ngram_sentence_logprob(const NGramModel& model, std::span<const Token> tokens) {
    std::vector<std::string> history{kSentenceStart};
    double total = 0.0;
    for (const auto& t : tokens) {
        total += ngram_logprob(model, history, t.surface);
        history.push_back(t.surface);
    }
    return total + ngram_logprob(model, history, kSentenceEnd);
}

Hypothesis score_hypothesis_ngram(const NGramModel& model, const Hypothesis& hyp, const Vocabulary* oov_vocab,
                                  const std::string& dim) {
    const Vocabulary& vocab = oov_vocab ? *oov_vocab : model.vocab;
    Hypothesis out = hyp;
    out.scores[dim] = ngram_sentence_logprob(model, hyp.tokens);
    out.scores[dims::kWordCount] = static_cast<double>(hyp.tokens.size());
    out.scores[dims::kOovCount] = static_cast<double>(
        std::count_if(hyp.tokens.begin(), hyp.tokens.end(), [&](const Token& t) { return !vocab.contains(t.surface); }));
    return out;
}

NBestList score_nbest_ngram(const NGramModel& model, const NBestList& nbest, const Vocabulary* oov_vocab,
                            const std::string& dim) {
    NBestList out{nbest.utterance_id, nbest.system_id, {}};
    out.hypotheses.reserve(nbest.hypotheses.size());
    for (const auto& h : nbest.hypotheses) out.hypotheses.push_back(score_hypothesis_ngram(model, h, oov_vocab, dim));
    return out;
}

// ─── Pruning ─────────────────────────────────────────────────────────────────

NGramModel prune_ngram(const NGramModel& model, std::span<const long> cutoffs) {
    if (!cutoffs.empty() && cutoffs[0] != 0) throw ConfigError("unigrams are never pruned (cutoff for order 1 must be 0)");
    if (cutoffs.size() > static_cast<std::size_t>(model.order()))
        throw ConfigError("more cutoffs than model orders");
    if (std::all_of(cutoffs.begin(), cutoffs.end(), [](long c) { return c <= 0; })) return model;
    if (!model.counts.size()) throw ConfigError("pruning needs training counts (model was loaded from ARPA)");

    NGramModel out = model;
    const int order = model.order();
    auto cutoff = [&](int n) -> long { return n - 1 < static_cast<int>(cutoffs.size()) ? cutoffs[n - 1] : 0; };

    std::set<NGram> needed_contexts;
    for (int n = order; n >= 2; --n) {
        auto& t = out.tables[n - 1];
        std::set<NGram> next_needed;
        for (auto it = t.begin(); it != t.end();) {
            const auto c_it = model.counts[n - 1].find(it->first);
            const long c = c_it == model.counts[n - 1].end() ? 0 : c_it->second;
            if (c < cutoff(n) && !needed_contexts.contains(it->first)) {
                it = t.erase(it);
            } else {
                next_needed.insert(prefix(it->first));
                ++it;
            }
        }
        needed_contexts = std::move(next_needed);
    }

    // Recompute backoff weights, shortest contexts first.
    for (int k = 1; k < order; ++k) {
        std::map<NGram, std::vector<const std::pair<const NGram, NGramEntry>*>> children;
        for (const auto& kv : out.tables[k]) children[prefix(kv.first)].push_back(&kv);
        for (auto& [h, entry] : out.tables[k - 1]) {
            if (!entry.log_backoff) continue;
            const auto ch = children.find(h);
            if (ch == children.end()) {
                entry.log_backoff = 0.0;
                continue;
            }
            double num = 1.0, den = 1.0;
            const NGram lower(h.begin() + 1, h.end());
            for (const auto* kv : ch->second) {
                num -= std::exp(kv->second.log_prob);
                den -= std::exp(ngram_logprob(out, lower, kv->first.back()));
            }
            entry.log_backoff = (num > 0.0 && den > 0.0) ? std::log(num / den) : kNegInf;
        }
    }
    return out;
}

// ─── Vocabulary ──────────────────────────────────────────────────────────────

Vocabulary build_vocabulary(std::span<const Tokens> in_domain, std::span<const std::vector<Tokens>> out_of_domain,
                            std::size_t top_k, std::size_t min_count) {
    Vocabulary vocab;
    std::map<std::string, std::size_t> in_counts, ood_counts;
    for (const auto& s : in_domain)
        for (const auto& t : s) ++in_counts[t.surface];
    for (const auto& corpus : out_of_domain)
        for (const auto& s : corpus)
            for (const auto& t : s) ++ood_counts[t.surface];

    for (const auto& [w, c] : in_counts)
        if (c >= min_count) vocab.words.insert(w);

    std::vector<std::pair<std::string, std::size_t>> ranked(ood_counts.begin(), ood_counts.end());
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    for (std::size_t i = 0; i < std::min(top_k, ranked.size()); ++i) vocab.words.insert(ranked[i].first);

    for (const auto& w : vocab.words) {
        std::size_t c = 0;
        if (auto it = in_counts.find(w); it != in_counts.end()) c += it->second;
        if (auto it = ood_counts.find(w); it != ood_counts.end()) c += it->second;
        vocab.counts[w] = c;
    }
    return vocab;
}

} // namespace rescomb
