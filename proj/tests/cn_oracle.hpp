#pragma once

// Confusion-network reference built by enumerating every monotone alignment
// of each hypothesis against the bins so far.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "rescomb/concom.hpp"

namespace rescomb::test {

namespace cn_oracle_detail {

enum Move { M = 0, I = 1, S = 2 };  // ordered by tie preference

struct Path {
    std::vector<Move> moves;
    double cost = 0.0;
};

inline double entry(const Bin& b, const std::string& w) {
    const auto it = b.find(w);
    return it == b.end() ? 0.0 : it->second;
}

inline void enumerate(const std::vector<Bin>& bins, double mass, const std::vector<std::string>& words, std::size_t i,
                      std::size_t j, Path& cur, std::vector<Path>& out) {
    if (i == words.size() && j == bins.size()) {
        out.push_back(cur);
        return;
    }
    const auto step = [&](Move m, double c, std::size_t ni, std::size_t nj) {
        cur.moves.push_back(m);
        cur.cost += c;
        enumerate(bins, mass, words, ni, nj, cur, out);
        cur.cost -= c;
        cur.moves.pop_back();
    };
    const std::string null{kNullWord};
    if (i < words.size() && j < bins.size()) step(M, 1.0 - entry(bins[j], words[i]) / mass, i + 1, j + 1);
    if (i < words.size()) step(I, 1.0, i + 1, j);
    if (j < bins.size()) step(S, 1.0 - entry(bins[j], null) / mass, i, j + 1);
}

} // namespace cn_oracle_detail

inline ConfusionNetwork oracle_build_cn(std::vector<WeightedHypothesis> hyps) {
    using namespace cn_oracle_detail;
    std::stable_sort(hyps.begin(), hyps.end(), [](const auto& a, const auto& b) {
        if (a.posterior != b.posterior) return a.posterior > b.posterior;
        if (a.system_id != b.system_id) return a.system_id < b.system_id;
        return a.rank < b.rank;
    });
    const std::string null{kNullWord};
    std::vector<Bin> bins;
    double mass = 0.0;
    for (const auto& h : hyps) {
        std::vector<std::string> words;
        for (const auto& t : h.tokens) words.push_back(t.surface);
        std::vector<Path> paths;
        Path cur;
        enumerate(bins, mass, words, 0, 0, cur, paths);
        double best = INFINITY;
        for (const auto& p : paths) best = std::min(best, p.cost);
        // Among optimal paths, prefer Match, then Insert, then Skip, reading
        // from the last move backwards.
        const Path* pick = nullptr;
        for (const auto& p : paths) {
            if (p.cost > best + 1e-9) continue;
            if (!pick || std::lexicographical_compare(p.moves.rbegin(), p.moves.rend(), pick->moves.rbegin(),
                                                      pick->moves.rend()))
                pick = &p;
        }
        std::vector<Bin> next;
        std::size_t i = 0, j = 0;
        for (const Move m : pick->moves) {
            if (m == M) {
                next.push_back(bins[j++]);
                next.back()[words[i++]] += h.posterior;
            } else if (m == I) {
                Bin b;
                if (mass > 0.0) b[null] = mass;
                b[words[i++]] += h.posterior;
                next.push_back(b);
            } else {
                next.push_back(bins[j++]);
                next.back()[null] += h.posterior;
            }
        }
        bins = next;
        mass += h.posterior;
    }
    ConfusionNetwork cn;
    for (const auto& b : bins) {
        Bin out;
        for (const auto& [w, m] : b)
            if (m > 0.0) out[w] = m / mass;
        if (out.empty() || (out.size() == 1 && out.begin()->first == null)) continue;
        cn.bins.push_back(out);
    }
    return cn;
}

// Same bin count, same words per bin, posteriors within tol.
inline bool same_cn(const ConfusionNetwork& a, const ConfusionNetwork& b, double tol) {
    if (a.bins.size() != b.bins.size()) return false;
    for (std::size_t k = 0; k < a.bins.size(); ++k) {
        if (a.bins[k].size() != b.bins[k].size()) return false;
        for (auto x = a.bins[k].begin(), y = b.bins[k].begin(); x != a.bins[k].end(); ++x, ++y)
            if (x->first != y->first || std::abs(x->second - y->second) > tol) return false;
    }
    return true;
}

// Every word string of length 0..max_len over the alphabet.
inline std::vector<std::string> all_strings(const std::string& alphabet, int max_len) {
    std::vector<std::string> out{""};
    std::vector<std::string> frontier{""};
    for (int len = 1; len <= max_len; ++len) {
        std::vector<std::string> grown;
        for (const auto& s : frontier)
            for (const char c : alphabet) grown.push_back(s.empty() ? std::string(1, c) : s + " " + c);
        out.insert(out.end(), grown.begin(), grown.end());
        frontier = std::move(grown);
    }
    return out;
}

} // namespace rescomb::test
