#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "rescomb/core.hpp"

namespace rescomb {

enum class Encoding { WordOneHotTied, LetterTrigram, Character };
enum class Direction { Forward, Backward };

std::string_view to_string(Encoding e);
std::string_view to_string(Direction d);
Encoding encoding_from_string(std::string_view s);
Direction direction_from_string(std::string_view s);

struct LstmConfig {
    Encoding encoding = Encoding::LetterTrigram;
    int num_layers = 2;
    int hidden_dim = 64;
    int embed_dim = 64;  // word and character encodings only
    Direction direction = Direction::Forward;
    bool session_mode = false;
    SessionFlags session_flags{};
    bool stabilizer = true;
    // Output vocabulary of the word encodings. When absent it is built from
    // the training data: every word seen at least min_word_count times.
    std::optional<Vocabulary> vocab;
    std::size_t min_word_count = 2;

    // Full-scale sizes: three 1000-dim layers with a 1000-dim word embedding,
    // and two 1000-dim layers over a 300-dim character embedding.
    static LstmConfig word_preset();
    static LstmConfig character_preset();
};

// Boundary-padded letter trigrams of the training vocabulary, densely indexed
// in sorted order.
struct TrigramInventory {
    std::map<std::string, int, std::less<>> index;

    int size() const { return static_cast<int>(index.size()); }
    static TrigramInventory build(const std::set<std::string, std::less<>>& words);
};

using SparseFeatures = std::vector<std::pair<int, double>>;

// Count vector of the trigrams of "#word#"; trigrams missing from the
// inventory are dropped. Sorted by index.
SparseFeatures encode_word_letter_trigram(std::string_view word, const TrigramInventory& inventory);

// The trigram strings of "#word#" with their counts.
std::map<std::string, int> letter_trigrams(std::string_view word);

// Self-stabilizer gain ¼·ln(1 + e^{4β}).
double stabilizer_scale(double beta);
Eigen::VectorXd stabilize(const Eigen::VectorXd& x, double beta);

struct LstmLayerParams {
    Eigen::MatrixXd w_input;      // 4H × input   (gate order i, f, g, o)
    Eigen::MatrixXd w_recurrent;  // 4H × H
    Eigen::MatrixXd bias;         // 4H × 1
    Eigen::MatrixXd beta;         // 1 × 1 stabilizer parameter
};

struct LstmParams {
    Eigen::MatrixXd embedding;   // symbols × embed   (word / character)
    Eigen::MatrixXd projection;  // embed × H         (tied word model)
    Eigen::MatrixXd output;      // symbols × H       (untied models; empty when tied)
    Eigen::MatrixXd output_bias; // symbols × 1
    std::vector<LstmLayerParams> layers;

    // Every non-empty tensor with a stable name, in a fixed order.
    std::vector<std::pair<std::string, Eigen::MatrixXd*>> tensors();
    std::vector<std::pair<std::string, const Eigen::MatrixXd*>> tensors() const;
    LstmParams zeros_like() const;
    std::size_t parameter_count() const;
};

inline constexpr const char* kCharBoundary = "<w>";

struct LstmModel {
    LstmConfig config;
    Vocabulary vocab;                  // word-level vocabulary (word encodings)
    std::vector<std::string> symbols;  // output classes
    std::map<std::string, int, std::less<>> symbol_index;
    TrigramInventory trigrams;         // letter-trigram encoding only
    LstmParams params;

    int num_symbols() const { return static_cast<int>(symbols.size()); }
    int num_bits() const;
    int input_dim() const;
    // Symbol id, or -1.
    int symbol(std::string_view s) const;
    // Word-level OOV test (always false for the character encoding).
    bool is_oov(std::string_view word) const;
    // With tied embeddings the output layer reads the input embedding table
    // itself; there is no separate output matrix.
    bool tied() const { return config.encoding == Encoding::WordOneHotTied; }
    const Eigen::MatrixXd& output_embedding() const { return tied() ? params.embedding : params.output; }
};

// Builds an untrained model for the given symbol inventory. init_scale = 0
// gives all-zero weights (uniform output distribution).
// The character encoding takes its inventory from the characters of vocab.
LstmModel create_lstm(const LstmConfig& config, const Vocabulary& vocab, double init_scale, std::uint64_t seed);

// ─── Sequences ───────────────────────────────────────────────────────────────

struct StepInput {
    int symbol = -1;          // embedding row (word / character encodings)
    SparseFeatures features;  // letter-trigram encoding
    std::array<double, 2> bits{};
};

// Input/target stream the network consumes. slot[t] tells which token the
// target at step t belongs to (tokens.size() for the end symbol, -1 for
// session history); scored[t] is false for OOV targets and history.
struct LstmSequence {
    std::vector<StepInput> inputs;
    std::vector<int> targets;
    std::vector<int> slot;
    std::vector<bool> scored;
};

// Utterance-scoped stream for the tokens, in the model's reading direction.
// With training set, OOV targets map to <unk> and are scored.
LstmSequence make_sequence(const LstmModel& model, std::span<const Token> tokens, bool training = false);

// Session context of one utterance: earlier utterances in reading order and
// the utterance's own indicator bits.
struct SessionContext {
    std::vector<SessionItem> history;
    bool speaker_change = false;
    bool overlap = false;
};

// Whole-conversation stream (history and current utterances all scored).
LstmSequence make_session_sequence(const LstmModel& model, const SessionTranscript& transcript);

// Reverses a serialized conversation for backward-running session models:
// utterance order and word order flip; indicator bits describe each
// utterance's relation to the one read before it.
SessionTranscript reverse_session(const SessionTranscript& transcript);

// Negative log-likelihood of the scored targets; accumulates the exact
// gradient into grad when given (no truncation).
double sequence_loss(const LstmModel& model, const LstmSequence& seq, LstmParams* grad = nullptr);

// ─── Scoring ─────────────────────────────────────────────────────────────────

// Per-token natural-log probabilities in the original token order plus the
// end symbol last. OOV tokens get 0 (see count_oov). Session models need a
// context (DataError otherwise); utterance-scoped models ignore it. History
// must already be in the model's reading order.
std::vector<double> lstm_score(const LstmModel& model, std::span<const Token> tokens,
                               const SessionContext* session = nullptr);

int count_oov(const LstmModel& model, std::span<const Token> tokens);

// Per-symbol output distribution at every step (for tests and inspection).
std::vector<Eigen::VectorXd> lstm_step_distributions(const LstmModel& model, const LstmSequence& seq);

// ─── Training ────────────────────────────────────────────────────────────────

struct TrainHyper {
    double learning_rate = 0.01;
    int epochs = 10;
    int batch = 8;   // chunks per Adam update
    int unroll = 20; // truncated-BPTT length
    std::uint64_t seed = 1;
    double init_scale = 0.1;
    double clip_norm = 5.0;
    // Optional early stop once the epoch perplexity is at or below this.
    double target_ppl = 0.0;
};

struct TrainReport {
    std::vector<double> epoch_ppl;
};

LstmModel train_lstm(std::span<const Tokens> sentences, const LstmConfig& config, const TrainHyper& hyper,
                     TrainReport* report = nullptr);
LstmModel train_lstm(std::span<const SessionTranscript> sessions, const LstmConfig& config, const TrainHyper& hyper,
                     TrainReport* report = nullptr);

// Sentence-level equal-weight log-linear combination of both directions.
double combine_bidirectional(double fwd_logprob, double bwd_logprob);

// ─── Checkpoints ─────────────────────────────────────────────────────────────

inline constexpr int kCheckpointVersion = 1;

std::string lstm_to_json(const LstmModel& model);
LstmModel lstm_from_json(const std::string& text);
void save_lstm(const std::filesystem::path& path, const LstmModel& model);
LstmModel load_lstm(const std::filesystem::path& path);

// ─── N-best rescoring ────────────────────────────────────────────────────────

// One rescoring dimension: forward model plus optional backward model.
struct LstmFamily {
    std::string name;
    const LstmModel* forward = nullptr;
    const LstmModel* backward = nullptr;
};

// Conversation history (reference or first-pass 1-best) indexed by utterance.
class HistoryIndex {
public:
    void add(const std::string& utterance_id, TimedUtterance utterance);
    bool contains(const std::string& utterance_id) const;
    // Context for the utterance in the given reading direction; nullopt when
    // the utterance is unknown.
    std::optional<SessionContext> context(const std::string& utterance_id, Direction direction,
                                          SessionFlags flags) const;

private:
    std::map<std::string, std::vector<TimedUtterance>> conversations_;
    std::map<std::string, std::pair<std::string, std::size_t>> where_;
};

HistoryIndex history_from_references(const std::vector<TimedUtterance>& utterances);
// 1-best (rank 0) of every list; timing from the utterance id.
HistoryIndex history_from_one_best(const std::vector<NBestList>& lists);

// Adds one dimension per family (0.5·fwd + 0.5·bwd when both exist) and sets
// "oov_count" from the word-level models' vocabulary. Existing dimensions and
// hypothesis order are kept.
NBestList score_nbest_lstm(std::span<const LstmFamily> families, const NBestList& nbest,
                           const HistoryIndex* history = nullptr);

} // namespace rescomb
