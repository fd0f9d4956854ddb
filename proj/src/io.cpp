#include "rescomb/io.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "rescomb/error.hpp"

namespace rescomb::io {

namespace {

std::vector<std::string> split_ws(const std::string& line) {
    std::vector<std::string> out;
    std::istringstream ss(line);
    std::string w;
    while (ss >> w) out.push_back(w);
    return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    return in;
}

} // namespace

std::string format_double(double value) {
    if (std::isinf(value)) return value < 0 ? "-inf" : "inf";
    if (std::isnan(value)) return "nan";
    char buf[40];
    for (int prec = 15; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, value);
        if (std::strtod(buf, nullptr) == value) break;
    }
    return buf;
}

double parse_double(const std::string& text, std::size_t line) {
    char* end = nullptr;
    const double v = std::strtod(text.c_str(), &end);
    if (text.empty() || end != text.c_str() + text.size())
        throw ParseError("not a number: '" + text + "'", line);
    return v;
}

std::string read_file(const std::filesystem::path& path) {
    auto in = open_in(path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& contents) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << contents;
}

// ─── N-best ──────────────────────────────────────────────────────────────────

void write_nbest(std::ostream& out, const NBestList& nbest) {
    for (std::size_t k = 0; k < nbest.hypotheses.size(); ++k) {
        const auto& h = nbest.hypotheses[k];
        out << nbest.utterance_id << ' ' << nbest.system_id << ' ' << k;
        for (const auto& [name, value] : h.scores) out << ' ' << name << '=' << format_double(value);
        out << " |";
        for (const auto& t : h.tokens) out << ' ' << t.surface;
        out << '\n';
    }
}

std::vector<NBestList> read_nbest(std::istream& in, const NormConfig& norm) {
    std::vector<NBestList> lists;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto fields = split_ws(line);
        if (fields.empty()) continue;
        if (fields.size() < 4) throw ParseError("truncated N-best line", lineno);
        const auto& utt = fields[0];
        const auto& sys = fields[1];
        char* endp = nullptr;
        const long rank = std::strtol(fields[2].c_str(), &endp, 10);
        if (*endp != '\0' || rank < 0) throw ParseError("bad rank '" + fields[2] + "'", lineno);

        Hypothesis hyp;
        std::size_t i = 3;
        for (; i < fields.size() && fields[i] != "|"; ++i) {
            const auto eq = fields[i].find('=');
            if (eq == std::string::npos || eq == 0)
                throw ParseError("bad score field '" + fields[i] + "'", lineno);
            hyp.scores[fields[i].substr(0, eq)] = parse_double(fields[i].substr(eq + 1), lineno);
        }
        if (i == fields.size()) throw ParseError("missing '|' separator", lineno);
        for (++i; i < fields.size(); ++i) hyp.tokens.push_back(make_token(fields[i], norm));

        if (lists.empty() || lists.back().utterance_id != utt || lists.back().system_id != sys) {
            if (rank != 0) throw ParseError("N-best list does not start at rank 0", lineno);
            lists.push_back(NBestList{utt, sys, {}});
        } else if (static_cast<std::size_t>(rank) != lists.back().hypotheses.size()) {
            throw ParseError("non-consecutive rank " + fields[2], lineno);
        }
        lists.back().hypotheses.push_back(std::move(hyp));
    }
    for (const auto& l : lists) validate_nbest(l);
    return lists;
}

void write_nbest_file(const std::filesystem::path& path, const std::vector<NBestList>& lists) {
    std::ostringstream ss;
    for (const auto& l : lists) write_nbest(ss, l);
    write_file(path, ss.str());
}

std::vector<NBestList> read_nbest_file(const std::filesystem::path& path, const NormConfig& norm) {
    auto in = open_in(path);
    return read_nbest(in, norm);
}

// ─── CN ──────────────────────────────────────────────────────────────────────

void write_cn(std::ostream& out, const ConfusionNetwork& cn) {
    out << "utt " << cn.utterance_id << " numbins " << cn.bins.size() << '\n';
    char buf[40];
    for (std::size_t b = 0; b < cn.bins.size(); ++b) {
        for (const auto& [word, p] : cn.bins[b]) {
            std::snprintf(buf, sizeof buf, "%.12g", p);
            out << "bin " << b << ' ' << word << ' ' << buf << '\n';
        }
    }
}

std::vector<ConfusionNetwork> read_cn(std::istream& in) {
    std::vector<ConfusionNetwork> out;
    std::size_t expected_bins = 0;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto f = split_ws(line);
        if (f.empty()) continue;
        if (f[0] == "utt") {
            if (f.size() != 4 || f[2] != "numbins") throw ParseError("bad CN header", lineno);
            if (!out.empty() && out.back().bins.size() != expected_bins)
                throw ParseError("CN " + out.back().utterance_id + " has wrong bin count", lineno);
            expected_bins = static_cast<std::size_t>(parse_double(f[3], lineno));
            out.push_back(ConfusionNetwork{f[1], {}});
        } else if (f[0] == "bin") {
            if (out.empty() || f.size() != 4) throw ParseError("bad CN bin record", lineno);
            const auto idx = static_cast<std::size_t>(parse_double(f[1], lineno));
            auto& bins = out.back().bins;
            if (idx == bins.size()) bins.emplace_back();
            if (idx + 1 != bins.size() || idx >= expected_bins)
                throw ParseError("CN bin index out of order", lineno);
            bins.back()[f[2]] = parse_double(f[3], lineno);
        } else {
            throw ParseError("unknown CN record '" + f[0] + "'", lineno);
        }
    }
    if (!out.empty() && out.back().bins.size() != expected_bins)
        throw ParseError("CN " + out.back().utterance_id + " has wrong bin count", lineno);
    return out;
}

// ─── STM ─────────────────────────────────────────────────────────────────────

std::vector<TimedUtterance> read_stm(std::istream& in, const NormConfig& norm) {
    std::vector<TimedUtterance> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.rfind(";;", 0) == 0) continue;
        const auto f = split_ws(line);
        if (f.empty()) continue;
        if (f.size() < 4) throw ParseError("truncated reference line", lineno);
        TimedUtterance u;
        u.conversation_id = f[0];
        u.speaker = f[1];
        u.onset = parse_double(f[2], lineno);
        u.end = parse_double(f[3], lineno);
        if (u.onset < 0 || !(u.end > u.onset)) throw ParseError("reference end <= onset", lineno);
        std::string text;
        for (std::size_t i = 4; i < f.size(); ++i) text += f[i] + ' ';
        u.tokens = normalize_text(text, norm);
        out.push_back(std::move(u));
    }
    return out;
}

std::vector<TimedUtterance> read_stm_file(const std::filesystem::path& path, const NormConfig& norm) {
    auto in = open_in(path);
    return read_stm(in, norm);
}

void write_stm(std::ostream& out, const std::vector<TimedUtterance>& utterances) {
    char buf[64];
    for (const auto& u : utterances) {
        std::snprintf(buf, sizeof buf, " %.2f %.2f", u.onset, u.end);
        out << u.conversation_id << ' ' << u.speaker << buf;
        for (const auto& t : u.tokens) out << ' ' << t.surface;
        out << '\n';
    }
}

// ─── Transcripts ─────────────────────────────────────────────────────────────

void write_transcript(std::ostream& out, const Transcript& transcript) {
    for (const auto& [utt, tokens] : transcript) {
        out << utt;
        for (const auto& t : tokens) out << ' ' << t.surface;
        out << '\n';
    }
}

Transcript read_transcript(std::istream& in, const NormConfig& norm) {
    Transcript out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto f = split_ws(line);
        if (f.empty()) continue;
        Tokens tokens;
        for (std::size_t i = 1; i < f.size(); ++i) tokens.push_back(make_token(f[i], norm));
        if (!out.emplace(f[0], std::move(tokens)).second)
            throw ParseError("duplicate utterance " + f[0], lineno);
    }
    return out;
}

Transcript read_transcript_file(const std::filesystem::path& path, const NormConfig& norm) {
    auto in = open_in(path);
    return read_transcript(in, norm);
}

Transcript transcript_from_stm(const std::vector<TimedUtterance>& utterances) {
    Transcript out;
    for (const auto& u : utterances) out[make_utterance_id(u)] = u.tokens;
    return out;
}

std::vector<Tokens> read_text_corpus(std::istream& in, const NormConfig& norm) {
    std::vector<Tokens> out;
    std::string line;
    while (std::getline(in, line)) {
        auto tokens = normalize_text(line, norm);
        if (!tokens.empty()) out.push_back(std::move(tokens));
    }
    return out;
}

} // namespace rescomb::io
