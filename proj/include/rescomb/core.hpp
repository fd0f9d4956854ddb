#pragma once

#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace rescomb {

// Reserved null word of confusion-network bins.
inline constexpr std::string_view kNullWord = "*DELETE*";

// ─── Text normalization ──────────────────────────────────────────────────────

struct NormConfig {
    char fragment_marker = '-';
    std::set<std::string, std::less<>> backchannels{"uh-huh", "mhm", "uh-hum"};
    std::set<std::string, std::less<>> filled_pauses{"uh", "um", "eh"};
    bool strip_punctuation = true;
    // Characters removed when strip_punctuation is on. The fragment marker
    // and apostrophes are never stripped.
    std::string punctuation = ".,?!;:\"()[]{}";
};

struct Token {
    std::string surface;
    bool is_fragment = false;
    bool is_backchannel = false;
    bool is_filled_pause = false;

    friend bool operator==(const Token& a, const Token& b) { return a.surface == b.surface; }
    friend bool operator<(const Token& a, const Token& b) { return a.surface < b.surface; }
};

using Tokens = std::vector<Token>;

// Builds a token from an already-normalized surface form; throws DataError on
// empty or whitespace-containing input.
Token make_token(std::string surface, const NormConfig& config = {});

// Lowercases (ASCII), optionally strips punctuation, splits on whitespace and
// flags fragments, backchannels and filled pauses.
Tokens normalize_text(std::string_view raw, const NormConfig& config = {});

// Same as normalize_text but for pre-split words; no punctuation handling.
Tokens tokens_from_words(std::span<const std::string> words, const NormConfig& config = {});

std::vector<std::string> surfaces(std::span<const Token> tokens);
std::string join(std::span<const Token> tokens, char sep = ' ');

// ─── Scores and hypotheses ───────────────────────────────────────────────────

// Natural-log scores keyed by dimension name. Count-valued pseudo-scores
// ("wordcount", "oov_count", "backchannel_count") are stored as raw counts.
using ScoreVector = std::map<std::string, double>;

namespace dims {
inline constexpr const char* kAcoustic = "am";
inline constexpr const char* kNgram = "ngram";
inline constexpr const char* kWordCount = "wordcount";
inline constexpr const char* kOovCount = "oov_count";
inline constexpr const char* kBackchannelCount = "backchannel_count";
inline constexpr const char* kCnPosterior = "cn_posterior";
} // namespace dims

struct Hypothesis {
    Tokens tokens;
    ScoreVector scores;
};

struct NBestList {
    std::string utterance_id;
    std::string system_id;
    std::vector<Hypothesis> hypotheses;

    // Dimension names of the first hypothesis (all hypotheses share them).
    std::vector<std::string> dimension_names() const;
};

// Throws DataError when the list is empty, a hypothesis has a different
// dimension set, or a score is NaN / +inf.
void validate_nbest(const NBestList& nbest);

// ─── Confusion networks ──────────────────────────────────────────────────────

using Bin = std::map<std::string, double>;

struct ConfusionNetwork {
    std::string utterance_id;
    std::vector<Bin> bins;
};

struct CnDiagnostics {
    bool pass = true;
    // Signed (sum - 1) per bin.
    std::vector<double> residuals;
    // Indices of bins that violate stochasticity or the [0, 1] range.
    std::vector<std::size_t> bad_bins;
};

inline constexpr double kCnTolerance = 1e-9;

CnDiagnostics validate_cn(const ConfusionNetwork& cn, double tolerance = kCnTolerance);

// ─── Conversations and sessions ──────────────────────────────────────────────

struct TimedUtterance {
    std::string conversation_id;
    std::string speaker;  // channel label, e.g. "A" / "B"
    double onset = 0.0;   // seconds
    double end = 0.0;     // seconds, > onset
    Tokens tokens;
};

// Deterministic utterance id "<conv>_<speaker>_<onset cs>_<end cs>" with
// six-digit centisecond fields; parse_utterance_id inverts it.
std::string make_utterance_id(const TimedUtterance& utt);
std::string make_utterance_id(std::string_view conversation, std::string_view speaker,
                              double onset, double end);

struct UtteranceKey {
    std::string conversation_id;
    std::string speaker;
    double onset = 0.0;
    double end = 0.0;
};

std::optional<UtteranceKey> parse_utterance_id(std::string_view id);

struct SessionItem {
    Token token;
    bool speaker_change = false;
    bool overlap = false;
    bool utterance_boundary = false;  // first token of its utterance
};

struct SessionTranscript {
    std::string conversation_id;
    std::vector<SessionItem> items;
};

struct SessionFlags {
    bool speaker_change = true;
    bool overlap = true;
};

// Onset order used for serialization: onset, then speaker, then end.
bool onset_order(const TimedUtterance& a, const TimedUtterance& b);

// Sorts a copy of the utterances by onset_order and computes per-utterance
// (speaker_change, overlap) against the preceding utterance.
struct OrderedUtterance {
    const TimedUtterance* utterance = nullptr;
    bool speaker_change = false;
    bool overlap = false;
};
std::vector<OrderedUtterance> order_conversation(std::span<const TimedUtterance> utterances,
                                                 SessionFlags flags = {});

// Strings the words of a conversation together in onset order. Throws
// DataError when conversation ids differ.
SessionTranscript serialize_session(std::span<const TimedUtterance> utterances,
                                    SessionFlags flags = {});

// ─── Vocabulary ──────────────────────────────────────────────────────────────

struct Vocabulary {
    std::set<std::string, std::less<>> words;
    std::map<std::string, std::size_t, std::less<>> counts;

    bool contains(std::string_view word) const;
    std::size_t size() const { return words.size(); }
};

} // namespace rescomb
