#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rescomb/core.hpp"
#include "rescomb/lstm.hpp"
#include "rescomb/ngram.hpp"

// Synthetic corpora for demos and tests.
namespace rescomb::toy {

// Conversational ASR fixture: LM training text, timed references split into
// dev and test conversations, and first-pass n-best lists (acoustic score
// only) for several systems. Planted confusions:
//   to/two and their/there  (resolved by any n-gram LM)
//   or/nor after either/neither four words earlier  (needs a long-span LM)
//   noun pairs such as dog/frog  (independent per system; combination helps)
//   uh heard as uh-huh  (same in every system; backchannel penalty helps)
struct ToyOptions {
    std::uint64_t seed = 1;
    int train_sentences = 4000;
    int dev_conversations = 8;
    int test_conversations = 8;
    int utterances_per_conversation = 12;
    int systems = 3;
    double noun_error = 0.2;  // per-system chance of preferring the wrong noun
};

struct ToyData {
    std::vector<Tokens> lm_train;
    std::vector<TimedUtterance> references;  // dev and test
    std::vector<std::string> dev_conversations;
    std::vector<std::string> test_conversations;
    std::vector<std::string> system_ids;
    std::vector<std::vector<NBestList>> systems;  // per system, one list per utterance
};

ToyData make_toy(const ToyOptions& options = {});

// Writes train.txt, refs.stm, <system>.nbest and a pipeline config.json that
// expects LMs at models/ngram.arpa and models/lstm_fwd.json /
// models/lstm_bwd.json (see tools/rescomb make-toy).
void write_toy(const ToyData& data, const std::filesystem::path& dir);

// LMs the toy config expects: a Kneser-Ney 3-gram and a small tied-word LSTM
// in both directions, all trained on lm_train.
struct ToyModels {
    NGramModel ngram;
    LstmModel forward;
    LstmModel backward;
};

ToyModels train_toy_models(const ToyData& data, std::uint64_t seed = 1, int lstm_epochs = 5);
void write_toy_models(const ToyModels& models, const std::filesystem::path& dir);

// Conversations over per-topic pseudo-words where each utterance starts with
// the first two words of the previous one.
struct EntrainmentOptions {
    std::uint64_t seed = 7;
    int topics = 10;
    int words_per_topic = 4;
    int train_conversations = 200;
    int test_conversations = 40;
    int utterances_per_conversation = 10;
    int min_length = 4;
    int max_length = 6;
};

struct EntrainmentCorpus {
    std::vector<std::vector<TimedUtterance>> train;
    std::vector<std::vector<TimedUtterance>> test;
    std::vector<std::string> words;  // full vocabulary
};

EntrainmentCorpus make_entrainment_corpus(const EntrainmentOptions& options = {});

// Copy of the conversation with each word replaced, with probability `rate`,
// by a uniformly drawn vocabulary word.
std::vector<TimedUtterance> corrupt(const std::vector<TimedUtterance>& conversation,
                                   const std::vector<std::string>& words, double rate, std::uint64_t seed);

} // namespace rescomb::toy
