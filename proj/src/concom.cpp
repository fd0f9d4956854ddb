#include "rescomb/concom.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "rescomb/error.hpp"

#include <json.hpp>

namespace rescomb {

namespace {

constexpr double kTieEps = 1e-12;
const std::string kNull{kNullWord};

double entry(const Bin& bin, const std::string& word) {
    const auto it = bin.find(word);
    return it == bin.end() ? 0.0 : it->second;
}

} // namespace

CnAlignment align_to_cn(std::span<const Bin> bins, double mass, std::span<const Token> tokens) {
    const std::size_t n = tokens.size(), b = bins.size();
    const auto norm = [&](const Bin& bin, const std::string& w) { return mass > 0.0 ? entry(bin, w) / mass : 0.0; };
    const auto match_cost = [&](std::size_t i, std::size_t j) { return 1.0 - norm(bins[j - 1], tokens[i - 1].surface); };
    const auto skip_cost = [&](std::size_t j) { return 1.0 - norm(bins[j - 1], kNull); };
    constexpr double kInsertCost = 1.0;

    std::vector<std::vector<double>> d(n + 1, std::vector<double>(b + 1, 0.0));
    for (std::size_t i = 1; i <= n; ++i) d[i][0] = d[i - 1][0] + kInsertCost;
    for (std::size_t j = 1; j <= b; ++j) d[0][j] = d[0][j - 1] + skip_cost(j);
    for (std::size_t i = 1; i <= n; ++i)
        for (std::size_t j = 1; j <= b; ++j)
            d[i][j] = std::min({d[i - 1][j - 1] + match_cost(i, j), d[i - 1][j] + kInsertCost, d[i][j - 1] + skip_cost(j)});

    CnAlignment out;
    out.cost = d[n][b];
    std::size_t i = n, j = b;
    while (i > 0 || j > 0) {
        if (i > 0 && j > 0 && std::abs(d[i - 1][j - 1] + match_cost(i, j) - d[i][j]) <= kTieEps) {
            out.ops.push_back(CnOp::Match);
            --i;
            --j;
        } else if (i > 0 && std::abs(d[i - 1][j] + kInsertCost - d[i][j]) <= kTieEps) {
            out.ops.push_back(CnOp::Insert);
            --i;
        } else {
            out.ops.push_back(CnOp::Skip);
            --j;
        }
    }
    std::reverse(out.ops.begin(), out.ops.end());
    return out;
}

ConfusionNetwork build_cn(std::span<const WeightedHypothesis> hyps, const std::string& utterance_id) {
    if (hyps.empty()) throw DataError("build_cn needs at least one hypothesis");
    double total = 0.0;
    for (const auto& h : hyps) {
        if (!(h.posterior >= 0.0 && h.posterior <= 1.0 + 1e-6))
            throw DataError("hypothesis posterior outside [0, 1] for " + utterance_id);
        total += h.posterior;
    }
    if (total > 1.0 + 1e-6) throw DataError("hypothesis posteriors sum above 1 for " + utterance_id);
    if (!(total > 0.0)) throw DataError("hypotheses carry no posterior mass for " + utterance_id);

    std::vector<const WeightedHypothesis*> order;
    for (const auto& h : hyps) order.push_back(&h);
    std::stable_sort(order.begin(), order.end(), [](const WeightedHypothesis* a, const WeightedHypothesis* b) {
        if (a->posterior != b->posterior) return a->posterior > b->posterior;
        if (a->system_id != b->system_id) return a->system_id < b->system_id;
        return a->rank < b->rank;
    });

    std::vector<Bin> bins;
    double mass = 0.0;
    for (const auto* h : order) {
        const double p = h->posterior;
        const auto alignment = align_to_cn(bins, mass, h->tokens);
        std::vector<Bin> next;
        next.reserve(bins.size() + h->tokens.size());
        std::size_t i = 0, j = 0;
        for (const CnOp op : alignment.ops) {
            switch (op) {
                case CnOp::Match:
                    next.push_back(std::move(bins[j++]));
                    next.back()[h->tokens[i++].surface] += p;
                    break;
                case CnOp::Insert: {
                    Bin fresh;
                    if (mass > 0.0) fresh[kNull] = mass;
                    fresh[h->tokens[i++].surface] += p;
                    next.push_back(std::move(fresh));
                    break;
                }
                case CnOp::Skip:
                    next.push_back(std::move(bins[j++]));
                    next.back()[kNull] += p;
                    break;
            }
        }
        bins = std::move(next);
        mass += p;
    }

    ConfusionNetwork cn;
    cn.utterance_id = utterance_id;
    for (auto& bin : bins) {
        Bin out;
        for (const auto& [w, m] : bin)
            if (m > 0.0) out[w] = m / mass;
        const bool null_only = out.size() == 1 && out.begin()->first == kNull;
        if (!out.empty() && !null_only) cn.bins.push_back(std::move(out));
    }
    return cn;
}

ConfusionNetwork combine_systems(std::span<const SystemOutput> outputs, const std::string& utterance_id,
                                 std::span<const WeightVector> weights) {
    if (outputs.empty()) throw DataError("combine_systems needs at least one system");
    if (weights.size() != 1 && weights.size() != outputs.size())
        throw ConfigError("combine_systems needs one weight vector per system or a single shared one");
    const double share = 1.0 / static_cast<double>(outputs.size());
    std::vector<WeightedHypothesis> all;
    for (std::size_t s = 0; s < outputs.size(); ++s) {
        const auto& sys = outputs[s];
        const auto it = sys.lists.find(utterance_id);
        if (it == sys.lists.end())
            throw DataError("system " + sys.system_id + " has no n-best list for utterance " + utterance_id);
        const auto post = nbest_posteriors(it->second, weights.size() == 1 ? weights[0] : weights[s]);
        for (std::size_t k = 0; k < post.size(); ++k)
            all.push_back({it->second.hypotheses[k].tokens, post[k] * share, sys.system_id, k});
    }
    return build_cn(all, utterance_id);
}

Tokens consensus(const ConfusionNetwork& cn, const NormConfig& norm) {
    Tokens out;
    for (const auto& bin : cn.bins) {
        const std::string* best = nullptr;
        double best_p = -1.0;
        for (const auto& [w, p] : bin) {
            if (w == kNull) continue;
            if (p > best_p + kTieEps) {
                best = &w;
                best_p = p;
            }
        }
        const double null_p = entry(bin, kNull);
        if (best && !(null_p > best_p + kTieEps)) out.push_back(make_token(*best, norm));
    }
    return out;
}

NBestList cn_to_nbest(const ConfusionNetwork& cn, int n, const NormConfig& norm) {
    if (n < 1) throw ConfigError("cn_to_nbest needs n >= 1");
    using Path = std::pair<std::vector<std::string>, double>;
    std::vector<Path> beam{{{}, 0.0}};
    const auto better = [](const Path& a, const Path& b) {
        return a.second != b.second ? a.second > b.second : a.first < b.first;
    };
    for (const auto& bin : cn.bins) {
        std::map<std::vector<std::string>, double> merged;
        for (const auto& [words, score] : beam) {
            for (const auto& [w, p] : bin) {
                if (!(p > 0.0)) continue;
                auto ext = words;
                if (w != kNull) ext.push_back(w);
                const double s = score + std::log(p);
                auto [it, fresh] = merged.emplace(std::move(ext), s);
                if (!fresh) it->second = std::max(it->second, s);
            }
        }
        beam.assign(merged.begin(), merged.end());
        std::sort(beam.begin(), beam.end(), better);
        if (beam.size() > static_cast<std::size_t>(n)) beam.resize(static_cast<std::size_t>(n));
    }
    NBestList out;
    out.utterance_id = cn.utterance_id;
    out.system_id = "cn";
    for (const auto& [words, score] : beam) {
        Hypothesis h;
        for (const auto& w : words) h.tokens.push_back(make_token(w, norm));
        h.scores[dims::kCnPosterior] = score;
        out.hypotheses.push_back(std::move(h));
    }
    return out;
}

NBestList add_backchannel_score(const NBestList& nbest, const std::set<std::string, std::less<>>& lexicon) {
    NBestList out = nbest;
    for (auto& h : out.hypotheses)
        h.scores[dims::kBackchannelCount] = static_cast<double>(std::count_if(
            h.tokens.begin(), h.tokens.end(), [&](const Token& t) { return lexicon.contains(t.surface); }));
    return out;
}

std::string SelectionReport::to_json() const {
    nlohmann::ordered_json j;
    j["chosen"] = chosen;
    auto rows = nlohmann::ordered_json::array();
    for (const auto& s : subsets)
        rows.push_back({{"systems", s.systems},
                        {"wer", s.wer},
                        {"errors", s.counts.errors()},
                        {"sub", s.counts.n_sub},
                        {"ins", s.counts.n_ins},
                        {"del", s.counts.n_del},
                        {"ref_words", s.counts.n_ref}});
    j["subsets"] = std::move(rows);
    return j.dump(2) + "\n";
}

SelectionReport select_systems(std::span<const SystemOutput> candidates, const TokenMap& dev_refs,
                               std::span<const WeightVector> weights, const WerOptions& options) {
    const std::size_t k = candidates.size();
    if (k < 1 || k > kMaxSelectionCandidates)
        throw ConfigError("system selection takes 1 to " + std::to_string(kMaxSelectionCandidates) + " candidates, got " +
                          std::to_string(k));
    if (weights.size() != 1 && weights.size() != k)
        throw ConfigError("select_systems needs one weight vector per candidate or a single shared one");

    SelectionReport report;
    report.subsets.reserve((std::size_t{1} << k) - 1);
    for (std::size_t mask = 1; mask < (std::size_t{1} << k); ++mask) {
        std::vector<SystemOutput> subset;
        std::vector<WeightVector> sub_w;
        for (std::size_t s = 0; s < k; ++s)
            if (mask & (std::size_t{1} << s)) {
                subset.push_back(candidates[s]);
                sub_w.push_back(weights.size() == 1 ? weights[0] : weights[s]);
            }
        TokenMap hyps;
        for (const auto& [utt, ref] : dev_refs) hyps[utt] = consensus(combine_systems(subset, utt, sub_w));
        const auto rep = wer(dev_refs, hyps, options);
        SubsetResult r;
        for (const auto& s : subset) r.systems.push_back(s.system_id);
        std::sort(r.systems.begin(), r.systems.end());
        r.counts = rep.total;
        r.wer = rep.wer;
        report.subsets.push_back(std::move(r));
    }
    std::sort(report.subsets.begin(), report.subsets.end(), [](const SubsetResult& a, const SubsetResult& b) {
        if (a.counts.errors() != b.counts.errors()) return a.counts.errors() < b.counts.errors();
        if (a.systems.size() != b.systems.size()) return a.systems.size() < b.systems.size();
        return a.systems < b.systems;
    });
    report.chosen = report.subsets.front().systems;
    return report;
}

} // namespace rescomb
