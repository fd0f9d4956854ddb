#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rescomb/core.hpp"

namespace rescomb {

inline constexpr const char* kSentenceStart = "<s>";
inline constexpr const char* kSentenceEnd = "</s>";
inline constexpr const char* kUnknownWord = "<unk>";

using NGram = std::vector<std::string>;

struct NGramEntry {
    double log_prob = 0.0;               // natural log
    std::optional<double> log_backoff;   // natural log; present for contexts
};

enum class Smoothing { KneserNey, MaximumLikelihood };

struct NGramConfig {
    Smoothing smoothing = Smoothing::KneserNey;
    // Wrap every sentence in <s> ... </s>.
    bool sentence_boundaries = true;
    // Unigram probability floor for <unk>, rest renormalized.
    double unk_floor = 1e-7;
    // Closed vocabulary; corpus words outside it map to <unk>. Empty means
    // "every corpus word".
    std::optional<Vocabulary> vocabulary;
    // Minimum training count per order (index 0 = unigrams, must be 0).
    std::vector<long> cutoffs;
};

struct NGramModel {
    // tables[n - 1] holds the n-grams, sorted lexicographically.
    std::vector<std::map<NGram, NGramEntry>> tables;
    // Training counts per order, kept for pruning (empty for ARPA-loaded models).
    std::vector<std::map<NGram, long>> counts;
    Vocabulary vocab;

    int order() const { return static_cast<int>(tables.size()); }
    const NGramEntry* find(const NGram& ngram) const;
    // Maps words outside the vocabulary to <unk>.
    const std::string& map_word(const std::string& word) const;
    // Rebuilds the vocabulary from the unigram table.
    void refresh_vocab();
};

// Interpolated Kneser-Ney training (single discount per order,
// D = n1 / (n1 + 2 n2), floored at 0.1), or plain relative frequencies.
NGramModel train_ngram(std::span<const Tokens> corpus, int order, const NGramConfig& config = {});

// Backoff recursion, natural log. The context is truncated to the order - 1
// most recent words and out-of-vocabulary words map to <unk>.
double ngram_logprob(const NGramModel& model, std::span<const std::string> context, const std::string& word);

// Sum of ngram_logprob over the tokens plus </s>.
double ngram_sentence_logprob(const NGramModel& model, std::span<const Token> tokens);

// Copy of the hypothesis with `dim` (default "ngram"), "wordcount" and
// "oov_count" set; OOV counting uses oov_vocab when given, else the model's
// vocabulary.
Hypothesis score_hypothesis_ngram(const NGramModel& model, const Hypothesis& hyp,
                                  const Vocabulary* oov_vocab = nullptr, const std::string& dim = dims::kNgram);
NBestList score_nbest_ngram(const NGramModel& model, const NBestList& nbest,
                            const Vocabulary* oov_vocab = nullptr, const std::string& dim = dims::kNgram);

// Removes n-grams whose training count is below cutoffs[n-1] (n ≥ 2), keeps
// every n-gram that is a context of a surviving longer n-gram, and recomputes
// backoff weights so each context distribution stays normalized.
NGramModel prune_ngram(const NGramModel& model, std::span<const long> cutoffs);

// Union of in-domain words with count ≥ min_count and the top_k most frequent
// out-of-domain words (ties broken lexicographically).
Vocabulary build_vocabulary(std::span<const Tokens> in_domain, std::span<const std::vector<Tokens>> out_of_domain,
                            std::size_t top_k, std::size_t min_count);

// ARPA text format: base-10 logs, 7 significant digits, entries sorted per
// order, backoff written only where present. read_arpa throws ParseError.
void write_arpa(std::ostream& out, const NGramModel& model);
NGramModel read_arpa(std::istream& in);
void write_arpa_file(const std::filesystem::path& path, const NGramModel& model);
NGramModel read_arpa_file(const std::filesystem::path& path);

} // namespace rescomb
