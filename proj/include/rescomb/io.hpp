#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "rescomb/core.hpp"

namespace rescomb::io {

// ─── N-best lists ────────────────────────────────────────────────────────────
//
// One hypothesis per line:
//   <utt_id> <system_id> <k> <dim1=val1> ... <dimM=valM> | w1 w2 ... wn
// Dimension names sorted, values natural-log, printed round-trip exact.
// Lines of the same utterance must be contiguous; k is the 0-based rank.

void write_nbest(std::ostream& out, const NBestList& nbest);
std::vector<NBestList> read_nbest(std::istream& in, const NormConfig& norm = {});

void write_nbest_file(const std::filesystem::path& path, const std::vector<NBestList>& lists);
std::vector<NBestList> read_nbest_file(const std::filesystem::path& path,
                                       const NormConfig& norm = {});

// ─── Confusion networks ──────────────────────────────────────────────────────
//
//   utt <utt_id> numbins <B>
//   bin <i> <word> <posterior>
// Posteriors printed with 12 significant digits; words within a bin in
// lexicographic order.

void write_cn(std::ostream& out, const ConfusionNetwork& cn);
std::vector<ConfusionNetwork> read_cn(std::istream& in);

// ─── References ──────────────────────────────────────────────────────────────
//
// STM-like: <conv_id> <channel> <onset> <end> <word...>; ";;" starts a
// comment line. Utterance ids are derived with make_utterance_id.

std::vector<TimedUtterance> read_stm(std::istream& in, const NormConfig& norm = {});
std::vector<TimedUtterance> read_stm_file(const std::filesystem::path& path,
                                          const NormConfig& norm = {});
void write_stm(std::ostream& out, const std::vector<TimedUtterance>& utterances);

// ─── Transcripts ─────────────────────────────────────────────────────────────
//
// "<utt_id> w1 ... wn" per line.

using Transcript = std::map<std::string, Tokens>;

void write_transcript(std::ostream& out, const Transcript& transcript);
Transcript read_transcript(std::istream& in, const NormConfig& norm = {});
Transcript read_transcript_file(const std::filesystem::path& path, const NormConfig& norm = {});

Transcript transcript_from_stm(const std::vector<TimedUtterance>& utterances);

// Plain text corpus: one sentence per line, normalized with normalize_text.
std::vector<Tokens> read_text_corpus(std::istream& in, const NormConfig& norm = {});

// Whole-file helpers.
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& contents);

// Round-trip exact text form of a double (shortest of %.17g), "-inf" for
// negative infinity.
std::string format_double(double value);
double parse_double(const std::string& text, std::size_t line);

} // namespace rescomb::io
