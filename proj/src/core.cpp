#include "rescomb/core.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "rescomb/error.hpp"

namespace rescomb {

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

char ascii_lower(char c) {
    return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
}

} // namespace

Token make_token(std::string surface, const NormConfig& config) {
    if (surface.empty()) throw DataError("empty token");
    if (std::any_of(surface.begin(), surface.end(), is_space))
        throw DataError("token contains whitespace: '" + surface + "'");
    Token t;
    t.is_fragment = surface.size() > 1 && surface.back() == config.fragment_marker;
    t.is_backchannel = config.backchannels.contains(surface);
    t.is_filled_pause = config.filled_pauses.contains(surface);
    t.surface = std::move(surface);
    return t;
}

Tokens normalize_text(std::string_view raw, const NormConfig& config) {
    Tokens out;
    std::string word;
    auto flush = [&] {
        if (!word.empty()) out.push_back(make_token(std::move(word), config));
        word.clear();
    };
    for (char c : raw) {
        if (is_space(c)) {
            flush();
            continue;
        }
        if (config.strip_punctuation && c != config.fragment_marker && c != '\'' &&
            config.punctuation.find(c) != std::string::npos)
            continue;
        word.push_back(ascii_lower(c));
    }
    flush();
    return out;
}

Tokens tokens_from_words(std::span<const std::string> words, const NormConfig& config) {
    Tokens out;
    out.reserve(words.size());
    for (const auto& w : words) out.push_back(make_token(w, config));
    return out;
}

std::vector<std::string> surfaces(std::span<const Token> tokens) {
    std::vector<std::string> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) out.push_back(t.surface);
    return out;
}

std::string join(std::span<const Token> tokens, char sep) {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out.push_back(sep);
        out += tokens[i].surface;
    }
    return out;
}

std::vector<std::string> NBestList::dimension_names() const {
    std::vector<std::string> names;
    if (hypotheses.empty()) return names;
    for (const auto& [name, value] : hypotheses.front().scores) names.push_back(name);
    return names;
}

void validate_nbest(const NBestList& nbest) {
    if (nbest.hypotheses.empty())
        throw DataError("empty N-best list for utterance " + nbest.utterance_id);
    const auto names = nbest.dimension_names();
    for (std::size_t k = 0; k < nbest.hypotheses.size(); ++k) {
        const auto& scores = nbest.hypotheses[k].scores;
        bool same = scores.size() == names.size();
        std::size_t i = 0;
        for (const auto& [name, value] : scores) {
            if (!same || name != names[i++]) {
                same = false;
                break;
            }
            if (std::isnan(value) || value == INFINITY)
                throw DataError("invalid score '" + name + "' in " + nbest.utterance_id);
        }
        if (!same)
            throw DataError("hypothesis " + std::to_string(k) + " of " + nbest.utterance_id +
                            " has a different score-dimension set");
    }
}

CnDiagnostics validate_cn(const ConfusionNetwork& cn, double tolerance) {
    CnDiagnostics diag;
    diag.residuals.reserve(cn.bins.size());
    for (std::size_t b = 0; b < cn.bins.size(); ++b) {
        double sum = 0.0;
        bool in_range = !cn.bins[b].empty();
        for (const auto& [word, p] : cn.bins[b]) {
            sum += p;
            if (!(p >= 0.0 && p <= 1.0)) in_range = false;
        }
        const double residual = sum - 1.0;
        diag.residuals.push_back(residual);
        if (!in_range || std::abs(residual) > tolerance) {
            diag.pass = false;
            diag.bad_bins.push_back(b);
        }
    }
    return diag;
}

// ─── Sessions ────────────────────────────────────────────────────────────────

std::string make_utterance_id(std::string_view conversation, std::string_view speaker,
                              double onset, double end) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "_%06lld_%06lld", std::llround(onset * 100.0),
                  std::llround(end * 100.0));
    std::string id(conversation);
    id += '_';
    id += speaker;
    id += buf;
    return id;
}

std::string make_utterance_id(const TimedUtterance& utt) {
    return make_utterance_id(utt.conversation_id, utt.speaker, utt.onset, utt.end);
}

std::optional<UtteranceKey> parse_utterance_id(std::string_view id) {
    // Split from the right: end, onset, speaker; the rest is the conversation.
    std::vector<std::string_view> parts;
    std::string_view rest = id;
    for (int i = 0; i < 3; ++i) {
        const auto pos = rest.rfind('_');
        if (pos == std::string_view::npos) return std::nullopt;
        parts.push_back(rest.substr(pos + 1));
        rest = rest.substr(0, pos);
    }
    if (rest.empty() || parts[2].empty()) return std::nullopt;
    auto centis = [](std::string_view s) -> std::optional<double> {
        if (s.empty() || !std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; }))
            return std::nullopt;
        return std::stoll(std::string(s)) / 100.0;
    };
    const auto end = centis(parts[0]);
    const auto onset = centis(parts[1]);
    if (!end || !onset) return std::nullopt;
    return UtteranceKey{std::string(rest), std::string(parts[2]), *onset, *end};
}

bool onset_order(const TimedUtterance& a, const TimedUtterance& b) {
    if (a.onset != b.onset) return a.onset < b.onset;
    if (a.speaker != b.speaker) return a.speaker < b.speaker;
    return a.end < b.end;
}

std::vector<OrderedUtterance> order_conversation(std::span<const TimedUtterance> utterances,
                                                 SessionFlags flags) {
    std::vector<OrderedUtterance> ordered;
    ordered.reserve(utterances.size());
    for (const auto& u : utterances) ordered.push_back({&u, false, false});
    std::stable_sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) {
        return onset_order(*a.utterance, *b.utterance);
    });
    for (std::size_t i = 1; i < ordered.size(); ++i) {
        const auto& prev = *ordered[i - 1].utterance;
        const auto& cur = *ordered[i].utterance;
        ordered[i].speaker_change = flags.speaker_change && cur.speaker != prev.speaker;
        ordered[i].overlap = flags.overlap && cur.onset < prev.end;
    }
    return ordered;
}

SessionTranscript serialize_session(std::span<const TimedUtterance> utterances,
                                    SessionFlags flags) {
    SessionTranscript out;
    if (utterances.empty()) return out;
    out.conversation_id = utterances.front().conversation_id;
    for (const auto& u : utterances)
        if (u.conversation_id != out.conversation_id)
            throw DataError("serialize_session: mixed conversation ids '" + out.conversation_id +
                            "' and '" + u.conversation_id + "'");
    for (const auto& ou : order_conversation(utterances, flags)) {
        const auto& tokens = ou.utterance->tokens;
        for (std::size_t i = 0; i < tokens.size(); ++i) {
            SessionItem item;
            item.token = tokens[i];
            item.utterance_boundary = i == 0;
            item.speaker_change = i == 0 && ou.speaker_change;
            item.overlap = ou.overlap;
            out.items.push_back(std::move(item));
        }
    }
    return out;
}

bool Vocabulary::contains(std::string_view word) const { return words.find(word) != words.end(); }

} // namespace rescomb
