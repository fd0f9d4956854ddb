#pragma once

#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "rescomb/core.hpp"
#include "rescomb/eval.hpp"
#include "rescomb/fusion.hpp"

namespace rescomb {

struct WeightedHypothesis {
    Tokens tokens;
    double posterior = 0.0;
    // Alignment-order tie-breakers.
    std::string system_id;
    std::size_t rank = 0;
};

// Merges weighted hypotheses into a confusion network. Hypotheses are taken
// in order of descending posterior (then system id, then rank) and each is
// aligned to the network built so far; bins are normalized at the end and
// zero-mass entries dropped.
ConfusionNetwork build_cn(std::span<const WeightedHypothesis> hyps, const std::string& utterance_id = {});

// One column-alignment step of build_cn, exposed for testing.
enum class CnOp { Match, Insert, Skip };
struct CnAlignment {
    std::vector<CnOp> ops;
    double cost = 0.0;
};
// Aligns tokens to unnormalized bins whose entries sum to `mass`. Equal-cost
// ties prefer Match, then Insert, then Skip, decided from the end.
CnAlignment align_to_cn(std::span<const Bin> bins, double mass, std::span<const Token> tokens);

struct SystemOutput {
    std::string system_id;
    std::map<std::string, NBestList> lists;  // by utterance id
};

// Equal-weight combination of every system's n-best posteriors for one
// utterance. `weights` holds one vector per system, or a single shared one.
ConfusionNetwork combine_systems(std::span<const SystemOutput> outputs, const std::string& utterance_id,
                                 std::span<const WeightVector> weights);

// Per-bin argmax; ties go to the lexicographically smaller word, the null
// word last. Null bins emit nothing.
Tokens consensus(const ConfusionNetwork& cn, const NormConfig& norm = {});

// The n best distinct word strings by product of bin posteriors, with their
// log path posterior in the "cn_posterior" dimension. ConfigError if n < 1.
NBestList cn_to_nbest(const ConfusionNetwork& cn, int n, const NormConfig& norm = {});

// Sets "backchannel_count" to the number of tokens found in the lexicon.
NBestList add_backchannel_score(const NBestList& nbest, const std::set<std::string, std::less<>>& lexicon);

inline constexpr std::size_t kMaxSelectionCandidates = 16;

struct SubsetResult {
    std::vector<std::string> systems;  // sorted ids
    ErrorCounts counts;
    double wer = 0.0;
};

struct SelectionReport {
    std::vector<std::string> chosen;
    std::vector<SubsetResult> subsets;  // every evaluated subset

    std::string to_json() const;
};

// Consensus WER of every non-empty subset on the dev references; the best
// subset wins, ties going to fewer systems and then to smaller sorted ids.
SelectionReport select_systems(std::span<const SystemOutput> candidates, const TokenMap& dev_refs,
                               std::span<const WeightVector> weights, const WerOptions& options = {});

} // namespace rescomb
