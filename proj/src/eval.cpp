#include "rescomb/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <nlohmann/json.hpp>

#include "rescomb/error.hpp"

namespace rescomb {

namespace {

bool words_match(const Token& ref, const Token& hyp, bool fragment_forgiving) {
    if (ref.surface == hyp.surface) return true;
    if (!fragment_forgiving || !ref.is_fragment) return false;
    const std::string_view stem(ref.surface.data(), ref.surface.size() - 1);
    return hyp.surface.size() >= stem.size() && hyp.surface.compare(0, stem.size(), stem) == 0;
}

} // namespace

Alignment align(std::span<const Token> ref, std::span<const Token> hyp, const AlignCosts& costs) {
    const std::size_t n = ref.size(), m = hyp.size();
    std::vector<double> d((n + 1) * (m + 1));
    auto at = [&](std::size_t i, std::size_t j) -> double& { return d[i * (m + 1) + j]; };
    for (std::size_t i = 0; i <= n; ++i) at(i, 0) = costs.del * static_cast<double>(i);
    for (std::size_t j = 0; j <= m; ++j) at(0, j) = costs.ins * static_cast<double>(j);
    for (std::size_t i = 1; i <= n; ++i)
        for (std::size_t j = 1; j <= m; ++j) {
            const double diag =
                at(i - 1, j - 1) + (words_match(ref[i - 1], hyp[j - 1], costs.fragment_forgiving) ? 0.0 : costs.sub);
            at(i, j) = std::min({diag, at(i, j - 1) + costs.ins, at(i - 1, j) + costs.del});
        }

    Alignment a;
    a.cost = at(n, m);
    std::size_t i = n, j = m;
    while (i > 0 || j > 0) {
        if (i > 0 && j > 0) {
            const bool match = words_match(ref[i - 1], hyp[j - 1], costs.fragment_forgiving);
            if (at(i - 1, j - 1) + (match ? 0.0 : costs.sub) == at(i, j)) {
                a.ops.push_back({match ? EditOp::Match : EditOp::Sub, ref[i - 1].surface, hyp[j - 1].surface});
                --i, --j;
                continue;
            }
        }
        if (j > 0 && at(i, j - 1) + costs.ins == at(i, j)) {
            a.ops.push_back({EditOp::Ins, std::nullopt, hyp[j - 1].surface});
            --j;
            continue;
        }
        a.ops.push_back({EditOp::Del, ref[i - 1].surface, std::nullopt});
        --i;
    }
    std::reverse(a.ops.begin(), a.ops.end());
    a.counts.n_ref = static_cast<long>(n);
    for (const auto& op : a.ops) {
        if (op.op == EditOp::Sub) ++a.counts.n_sub;
        if (op.op == EditOp::Ins) ++a.counts.n_ins;
        if (op.op == EditOp::Del) ++a.counts.n_del;
    }
    return a;
}

WerReport wer(const TokenMap& refs, const TokenMap& hyps, const WerOptions& options) {
    for (const auto& [utt, tokens] : hyps)
        if (!refs.contains(utt)) throw DataError("no reference for utterance " + utt);
    WerReport report;
    static const Tokens kEmpty;
    for (const auto& [utt, ref] : refs) {
        const auto it = hyps.find(utt);
        const auto& hyp = it == hyps.end() ? kEmpty : it->second;
        const auto counts = align(ref, hyp, options.costs).counts;
        report.per_utterance[utt] = counts;
        report.total += counts;
    }
    if (report.total.n_ref <= 0) throw DataError("WER undefined: no reference words");
    report.wer = static_cast<double>(report.total.errors()) / static_cast<double>(report.total.n_ref);
    return report;
}

std::string WerReport::to_json() const {
    nlohmann::ordered_json j;
    auto counts_json = [](const ErrorCounts& c) {
        return nlohmann::ordered_json{{"sub", c.n_sub}, {"ins", c.n_ins}, {"del", c.n_del},
                                      {"ref", c.n_ref}};
    };
    j["wer"] = wer;
    j["total"] = counts_json(total);
    auto& per = j["utterances"] = nlohmann::ordered_json::object();
    for (const auto& [utt, c] : per_utterance) per[utt] = counts_json(c);
    return j.dump(2);
}

std::string WerReport::to_table() const {
    std::ostringstream out;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-32s %6s %6s %6s %6s %8s\n", "utterance", "#ref", "sub", "ins", "del", "WER%");
    out << buf;
    auto row = [&](const std::string& name, const ErrorCounts& c) {
        const double w = c.n_ref > 0 ? 100.0 * static_cast<double>(c.errors()) / static_cast<double>(c.n_ref) : 0.0;
        std::snprintf(buf, sizeof buf, "%-32s %6ld %6ld %6ld %6ld %8.2f\n", name.c_str(), c.n_ref, c.n_sub,
                      c.n_ins, c.n_del, w);
        out << buf;
    };
    for (const auto& [utt, c] : per_utterance) row(utt, c);
    row("TOTAL", total);
    return out.str();
}

double oov_rate(const Vocabulary& vocab, std::span<const Tokens> refs, bool exclude_fragments) {
    long counted = 0, oov = 0;
    for (const auto& sentence : refs)
        for (const auto& t : sentence) {
            if (exclude_fragments && t.is_fragment) continue;
            ++counted;
            if (!vocab.contains(t.surface)) ++oov;
        }
    if (counted == 0) throw DataError("OOV rate undefined: no counted reference tokens");
    return static_cast<double>(oov) / static_cast<double>(counted);
}

double perplexity(std::span<const double> log_probs) {
    if (log_probs.empty()) throw DataError("perplexity of an empty token stream");
    double sum = 0.0;
    for (double lp : log_probs) {
        if (!std::isfinite(lp)) throw DataError("perplexity: non-finite log-probability");
        sum += lp;
    }
    return std::exp(-sum / static_cast<double>(log_probs.size()));
}

} // namespace rescomb
