#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rescomb/core.hpp"

namespace rescomb {

enum class EditOp { Match, Sub, Ins, Del };

struct AlignedPair {
    EditOp op;
    std::optional<std::string> ref;  // absent for Ins
    std::optional<std::string> hyp;  // absent for Del
};

struct ErrorCounts {
    long n_sub = 0;
    long n_ins = 0;
    long n_del = 0;
    long n_ref = 0;

    long errors() const { return n_sub + n_ins + n_del; }
    ErrorCounts& operator+=(const ErrorCounts& o) {
        n_sub += o.n_sub;
        n_ins += o.n_ins;
        n_del += o.n_del;
        n_ref += o.n_ref;
        return *this;
    }
    friend bool operator==(const ErrorCounts&, const ErrorCounts&) = default;
};

struct Alignment {
    std::vector<AlignedPair> ops;
    ErrorCounts counts;
    double cost = 0.0;
};

// sclite weighting by default; unit() gives plain Levenshtein.
struct AlignCosts {
    double sub = 4.0;
    double ins = 3.0;
    double del = 3.0;
    // A hyp word counts as a match of a ref fragment "foo-" when it starts
    // with "foo".
    bool fragment_forgiving = false;

    static AlignCosts unit() { return {1.0, 1.0, 1.0, false}; }
};

// Minimum-cost alignment; equal-cost ties prefer Match/Sub, then Ins, then
// Del (decided backwards from the end of both sequences).
Alignment align(std::span<const Token> ref, std::span<const Token> hyp, const AlignCosts& costs = {});

struct WerOptions {
    AlignCosts costs{};
};

struct WerReport {
    double wer = 0.0;
    ErrorCounts total;
    std::map<std::string, ErrorCounts> per_utterance;

    std::string to_json() const;
    std::string to_table() const;
};

using TokenMap = std::map<std::string, Tokens>;

// Corpus-level WER: counts are pooled over utterances before dividing. Every
// hyp utterance must have a reference (DataError naming the id otherwise);
// references without a hypothesis are scored against an empty hypothesis.
WerReport wer(const TokenMap& refs, const TokenMap& hyps, const WerOptions& options = {});

// Fraction of counted reference tokens outside the vocabulary. Fragments are
// removed from numerator and denominator when exclude_fragments is set.
double oov_rate(const Vocabulary& vocab, std::span<const Tokens> refs, bool exclude_fragments);

// exp(-mean(log_probs)); DataError on empty or non-finite input.
double perplexity(std::span<const double> log_probs);

} // namespace rescomb
