#pragma once

#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "rescomb/lstm.hpp"

namespace rescomb::detail {

using LayerStates = std::vector<Eigen::VectorXd>;

// Runs steps [begin, end) of seq from the state (h, c), leaving the state at
// the end of the chunk. Returns the summed NLL of scored targets; with grad
// set, accumulates the gradient of the chunk (truncated at `begin`).
double run_chunk(const LstmModel& m, const LstmSequence& seq, std::size_t begin, std::size_t end, LayerStates& h,
                 LayerStates& c, LstmParams* grad, long* n_scored);

// State after reading the session history (zero state for utterance models).
std::pair<LayerStates, LayerStates> consume_history(const LstmModel& model, const SessionContext* session);

// Per-token scores of one utterance starting from the given state.
std::vector<double> score_from_state(const LstmModel& model, std::span<const Token> tokens,
                                     const SessionContext* session, LayerStates h, LayerStates c);

} // namespace rescomb::detail
