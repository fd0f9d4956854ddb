#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "rescomb/error.hpp"
#include "rescomb/eval.hpp"
#include "support.hpp"

using namespace rescomb;
using rescomb::test::toks;

namespace {

// Plain recursion over the three edit moves, no memoization.
double brute_cost(const std::vector<std::string>& r, std::size_t i, const std::vector<std::string>& h, std::size_t j,
                  const AlignCosts& c) {
    if (i == r.size()) return static_cast<double>(h.size() - j) * c.ins;
    if (j == h.size()) return static_cast<double>(r.size() - i) * c.del;
    const double diag = (r[i] == h[j] ? 0.0 : c.sub) + brute_cost(r, i + 1, h, j + 1, c);
    return std::min({diag, c.del + brute_cost(r, i + 1, h, j, c), c.ins + brute_cost(r, i, h, j + 1, c)});
}

Tokens random_tokens(std::mt19937_64& rng, int max_len) {
    Tokens out;
    const int n = std::uniform_int_distribution<int>(0, max_len)(rng);
    for (int i = 0; i < n; ++i) out.push_back(make_token(std::string(1, static_cast<char>('a' + rng() % 3))));
    return out;
}

// Replays the ops and checks that both sides are reconstructed.
void check_replay(const Alignment& a, const Tokens& ref, const Tokens& hyp) {
    std::vector<std::string> r, h;
    long matches = 0, subs = 0, ins = 0, dels = 0;
    for (const auto& p : a.ops) {
        if (p.ref) r.push_back(*p.ref);
        if (p.hyp) h.push_back(*p.hyp);
        switch (p.op) {
            case EditOp::Match: ++matches; CHECK(*p.ref == *p.hyp); break;
            case EditOp::Sub: ++subs; break;
            case EditOp::Ins: ++ins; CHECK_FALSE(p.ref); break;
            case EditOp::Del: ++dels; CHECK_FALSE(p.hyp); break;
        }
    }
    CHECK(r == surfaces(ref));
    CHECK(h == surfaces(hyp));
    CHECK(a.counts.n_ref == matches + subs + dels);
    CHECK(a.counts.n_sub == subs);
    CHECK(a.counts.n_ins == ins);
    CHECK(a.counts.n_del == dels);
}

} // namespace

TEST_CASE("align examples") {
    const auto same = align(toks("a b c"), toks("a b c"));
    CHECK(same.counts.errors() == 0);
    CHECK(same.counts.n_ref == 3);

    const auto sub = align(toks("a b c"), toks("a x c"));
    CHECK(sub.counts.n_sub == 1);
    CHECK(sub.counts.errors() == 1);

    const auto del = align(toks("a b"), toks("a"));
    CHECK(del.counts.n_del == 1);
    CHECK(del.counts.errors() == 1);

    const auto empty = align({}, {});
    CHECK(empty.ops.empty());
    CHECK(empty.cost == 0.0);
}

TEST_CASE("align tie-break prefers substitution, then insertion, then deletion") {
    // sub = ins + del: one substitution ties with a deletion plus an insertion.
    const AlignCosts c{2.0, 1.0, 1.0, false};
    const auto a = align(toks("a"), toks("b"), c);
    REQUIRE(a.ops.size() == 1);
    CHECK(a.ops[0].op == EditOp::Sub);

    // Transposition under sclite costs: deletion, match, insertion (6) beats
    // two substitutions (8).
    const auto b = align(toks("a b"), toks("b a"));
    CHECK(b.cost == 6.0);
}

TEST_CASE("align matches the brute-force aligner on random pairs") {
    std::mt19937_64 rng(2024);
    for (const AlignCosts& costs : {AlignCosts{}, AlignCosts::unit()}) {
        for (int trial = 0; trial < 500; ++trial) {
            const auto r = random_tokens(rng, 6), h = random_tokens(rng, 6);
            const auto a = align(r, h, costs);
            CHECK(a.cost == brute_cost(surfaces(r), 0, surfaces(h), 0, costs));
            check_replay(a, r, h);
            const double recomputed = a.counts.n_sub * costs.sub + a.counts.n_ins * costs.ins + a.counts.n_del * costs.del;
            CHECK(recomputed == a.cost);
        }
    }
}

TEST_CASE("fragment-forgiving matching") {
    AlignCosts c;
    CHECK(align(toks("real- okay"), toks("really okay"), c).counts.n_sub == 1);
    c.fragment_forgiving = true;
    CHECK(align(toks("real- okay"), toks("really okay"), c).counts.errors() == 0);
    CHECK(align(toks("real- okay"), toks("rally okay"), c).counts.n_sub == 1);
    // Only reference fragments are forgiven.
    CHECK(align(toks("really okay"), toks("real- okay"), c).counts.n_sub == 1);
}

TEST_CASE("wer pools counts over utterances") {
    const TokenMap refs{{"u1", toks("a b c")}, {"u2", toks("d")}};
    CHECK(wer({{"u1", toks("a b c")}}, {{"u1", toks("a x c")}}).wer == doctest::Approx(1.0 / 3.0));
    const auto r = wer(refs, {{"u1", toks("a x c")}, {"u2", toks("d")}});
    CHECK(r.wer == doctest::Approx(0.25));
    CHECK(r.per_utterance.at("u1").n_sub == 1);
    CHECK(wer(refs, refs).wer == 0.0);

    const auto none = wer(refs, {});
    CHECK(none.wer == 1.0);
    CHECK(none.total.n_del == 4);
}

TEST_CASE("wer rejects hypotheses without a reference") {
    try {
        wer({{"u1", toks("a")}}, {{"zz9", toks("a")}});
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("zz9") != std::string::npos);
    }
}

TEST_CASE("wer does not depend on utterance order") {
    std::mt19937_64 rng(9);
    TokenMap refs, hyps, refs2, hyps2;
    std::vector<std::string> ids;
    for (int i = 0; i < 30; ++i) {
        const std::string id = "u" + std::to_string(i);
        refs[id] = random_tokens(rng, 5);
        hyps[id] = random_tokens(rng, 5);
        ids.push_back(id);
    }
    std::shuffle(ids.begin(), ids.end(), rng);
    // Renaming utterances permutes their order in the maps.
    for (std::size_t k = 0; k < ids.size(); ++k) {
        refs2["v" + std::to_string(k)] = refs[ids[k]];
        hyps2["v" + std::to_string(k)] = hyps[ids[k]];
    }
    CHECK(wer(refs, hyps).total == wer(refs2, hyps2).total);
}

TEST_CASE("WerReport serializations") {
    const auto r = wer({{"u1", toks("a b c")}}, {{"u1", toks("a x c")}});
    CHECK(r.to_json().find("\"u1\"") != std::string::npos);
    CHECK(r.to_table().find("u1") != std::string::npos);
}

TEST_CASE("oov_rate") {
    Vocabulary v;
    v.words = {"a", "b"};
    const std::vector<Tokens> text{toks("a b c")};
    CHECK(oov_rate(v, text, false) == doctest::Approx(1.0 / 3.0));
    const std::vector<Tokens> frag{toks("a c- b")};
    CHECK(oov_rate(v, frag, true) == 0.0);
    CHECK(oov_rate(v, frag, false) == doctest::Approx(1.0 / 3.0));
    const std::vector<Tokens> only_frag{toks("c-")};
    CHECK_THROWS_AS(oov_rate(v, only_frag, true), DataError);

    Vocabulary bigger = v;
    bigger.words.insert("c");
    CHECK(oov_rate(bigger, text, false) <= oov_rate(v, text, false));
}

TEST_CASE("perplexity") {
    const std::vector<double> uniform(7, std::log(0.1));
    CHECK(perplexity(uniform) == doctest::Approx(10.0).epsilon(1e-12));
    CHECK(perplexity(std::vector<double>{0.0}) == 1.0);
    CHECK(perplexity(std::vector<double>{std::log(0.5), std::log(0.125)}) == doctest::Approx(4.0).epsilon(1e-12));
    CHECK(perplexity(std::vector<double>{std::log(0.125), std::log(0.5)}) ==
          perplexity(std::vector<double>{std::log(0.5), std::log(0.125)}));
    CHECK_THROWS_AS(perplexity(std::vector<double>{}), DataError);
    CHECK_THROWS_AS(perplexity(std::vector<double>{-INFINITY}), DataError);
}
