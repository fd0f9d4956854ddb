#include <doctest.h>

#include <cmath>
#include <random>

#include "cn_oracle.hpp"
#include "rescomb/concom.hpp"
#include "rescomb/error.hpp"
#include "selection_fixture.hpp"
#include "support.hpp"

using namespace rescomb;
using rescomb::test::hyp;
using rescomb::test::toks;

namespace {

const std::string kNull{kNullWord};

WeightedHypothesis wh(std::string_view text, double p, std::size_t rank = 0) { return {toks(text), p, "s", rank}; }

void check_bins(const ConfusionNetwork& cn, const std::vector<Bin>& expected) {
    REQUIRE(cn.bins.size() == expected.size());
    for (std::size_t k = 0; k < expected.size(); ++k) {
        REQUIRE(cn.bins[k].size() == expected[k].size());
        for (const auto& [w, p] : expected[k]) CHECK(cn.bins[k].at(w) == doctest::Approx(p).epsilon(1e-12));
    }
}

} // namespace

TEST_CASE("build_cn examples") {
    const std::vector<WeightedHypothesis> one{wh("a b c", 1.0)};
    check_bins(build_cn(one), {{{"a", 1.0}}, {{"b", 1.0}}, {{"c", 1.0}}});

    const std::vector<WeightedHypothesis> sub{wh("a b c", 0.6), wh("a x c", 0.4, 1)};
    check_bins(build_cn(sub), {{{"a", 1.0}}, {{"b", 0.6}, {"x", 0.4}}, {{"c", 1.0}}});

    const std::vector<WeightedHypothesis> del{wh("a b", 0.5), wh("a", 0.5, 1)};
    check_bins(build_cn(del), {{{"a", 1.0}}, {{"b", 0.5}, {kNull, 0.5}}});

    // Bins are renormalized when the posteriors do not sum to 1.
    const std::vector<WeightedHypothesis> partial{wh("a", 0.3), wh("b", 0.1, 1)};
    check_bins(build_cn(partial), {{{"a", 0.75}, {"b", 0.25}}});
}

TEST_CASE("build_cn preconditions") {
    CHECK_THROWS_AS(build_cn({}), DataError);
    const std::vector<WeightedHypothesis> over{wh("a", 0.7), wh("b", 0.7)};
    CHECK_THROWS_AS(build_cn(over), DataError);
    const std::vector<WeightedHypothesis> zero{wh("a", 0.0)};
    CHECK_THROWS_AS(build_cn(zero), DataError);
}

TEST_CASE("build_cn matches the exhaustive-alignment oracle on random sets") {
    const auto strings = test::all_strings("abc", 4);
    std::mt19937_64 rng(31);
    std::uniform_int_distribution<std::size_t> pick(0, strings.size() - 1);
    for (int trial = 0; trial < 400; ++trial) {
        const int n = 1 + static_cast<int>(rng() % 3);
        std::vector<double> p(n);
        double total = 0.0;
        for (auto& x : p) total += x = 0.05 + std::uniform_real_distribution<double>(0, 1)(rng);
        std::vector<WeightedHypothesis> hyps;
        for (int k = 0; k < n; ++k) hyps.push_back(wh(strings[pick(rng)], p[k] / total, k));
        const auto got = build_cn(hyps);
        CHECK(test::same_cn(got, test::oracle_build_cn(hyps), 1e-9));
        CHECK(validate_cn(got).pass);
    }
}

TEST_CASE("build_cn on a single hypothesis is lossless") {
    for (const auto& s : test::all_strings("ab", 4)) {
        if (s.empty()) continue;
        const std::vector<WeightedHypothesis> one{wh(s, 0.7)};
        CHECK(join(consensus(build_cn(one))) == s);
    }
}

TEST_CASE("build_cn conserves word mass") {
    // Σ bins (1 - null mass) equals the posterior-weighted length.
    std::mt19937_64 rng(4);
    const auto strings = test::all_strings("ab", 4);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<WeightedHypothesis> hyps;
        double expected = 0.0;
        for (std::size_t k = 0; k < 3; ++k) {
            const auto& s = strings[rng() % strings.size()];
            hyps.push_back(wh(s, 1.0 / 3.0, k));
            expected += toks(s).size() / 3.0;
        }
        if (expected == 0.0) continue;
        const auto cn = build_cn(hyps);
        double got = 0.0;
        for (const auto& b : cn.bins) got += 1.0 - (b.count(kNull) ? b.at(kNull) : 0.0);
        CHECK(got == doctest::Approx(expected).epsilon(1e-9));
    }
}

TEST_CASE("align_to_cn prefers matches on ties") {
    const std::vector<Bin> bins{{{"a", 1.0}}};
    const auto toks_b = toks("b");
    // Match cost 1 versus insert 1 plus skip 1.
    const auto al = align_to_cn(bins, 1.0, toks_b);
    REQUIRE(al.ops.size() == 1);
    CHECK(al.ops[0] == CnOp::Match);
    CHECK(al.cost == 1.0);
}

TEST_CASE("consensus picks the argmax and drops null bins") {
    ConfusionNetwork cn{"u", {{{"a", 0.6}, {"b", 0.4}}, {{"c", 0.3}, {kNull, 0.7}}, {{"d", 1.0}}}};
    CHECK(join(consensus(cn)) == "a d");
    // Ties go to the smaller word, and words beat the null word.
    ConfusionNetwork tie{"u", {{{"y", 0.5}, {"x", 0.5}}, {{"w", 0.5}, {kNull, 0.5}}}};
    CHECK(join(consensus(tie)) == "x w");
    CHECK(consensus(ConfusionNetwork{"u", {}}).empty());
    // Flags are recomputed from the surface.
    ConfusionNetwork bc{"u", {{{"uh-huh", 1.0}}}};
    CHECK(consensus(bc)[0].is_backchannel);
}

TEST_CASE("cn_to_nbest ranks paths by product of bin posteriors") {
    ConfusionNetwork cn{"u7", {{{"a", 0.9}, {"b", 0.1}}, {{"c", 1.0}}}};
    const auto nb = cn_to_nbest(cn, 5);
    CHECK(nb.utterance_id == "u7");
    REQUIRE(nb.hypotheses.size() == 2);
    CHECK(join(nb.hypotheses[0].tokens) == "a c");
    CHECK(nb.hypotheses[0].scores.at("cn_posterior") == doctest::Approx(std::log(0.9)).epsilon(1e-12));
    CHECK(join(nb.hypotheses[1].tokens) == "b c");
    CHECK(nb.hypotheses[1].scores.at("cn_posterior") == doctest::Approx(std::log(0.1)).epsilon(1e-12));

    CHECK(cn_to_nbest(cn, 1).hypotheses.size() == 1);
    CHECK_THROWS_AS(cn_to_nbest(cn, 0), ConfigError);

    // Paths that differ only in null placement merge, keeping the best score.
    ConfusionNetwork nulls{"u", {{{"a", 0.6}, {kNull, 0.4}}, {{"a", 0.3}, {kNull, 0.7}}}};
    const auto merged = cn_to_nbest(nulls, 10);
    REQUIRE(merged.hypotheses.size() == 3);
    CHECK(join(merged.hypotheses[0].tokens) == "a");
    CHECK(merged.hypotheses[0].scores.at("cn_posterior") == doctest::Approx(std::log(0.42)).epsilon(1e-12));
}

TEST_CASE("add_backchannel_score counts lexicon tokens") {
    NBestList nb{"u", "s", {hyp("uh-huh yeah uh-huh", {{"am", 0}}), hyp("the cat", {{"am", 0}})}};
    const auto out = add_backchannel_score(nb, {"uh-huh", "yeah"});
    CHECK(out.hypotheses[0].scores.at("backchannel_count") == 3);
    CHECK(out.hypotheses[1].scores.at("backchannel_count") == 0);
    CHECK(out.hypotheses[0].scores.at("am") == 0);
}

TEST_CASE("combine_systems is invariant to system order and duplication") {
    const auto f = test::make_selection_fixture();
    const std::vector<WeightVector> shared{f.weights};
    for (const auto& [utt, ref] : f.refs) {
        const auto abc = combine_systems(f.systems, utt, shared);
        const std::vector<SystemOutput> cba{f.systems[2], f.systems[1], f.systems[0]};
        CHECK(test::same_cn(abc, combine_systems(cba, utt, shared), 1e-12));

        const std::vector<SystemOutput> a{f.systems[0]}, aa{f.systems[0], f.systems[0]};
        CHECK(consensus(combine_systems(a, utt, shared)) == consensus(combine_systems(aa, utt, shared)));
    }
}

TEST_CASE("combine_systems errors") {
    const auto f = test::make_selection_fixture();
    const std::vector<WeightVector> shared{f.weights};
    try {
        combine_systems(f.systems, "missing_utt", shared);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("system A") != std::string::npos);
    }
    const std::vector<WeightVector> two{f.weights, f.weights};
    CHECK_THROWS_AS(combine_systems(f.systems, f.refs.begin()->first, two), ConfigError);
}

TEST_CASE("select_systems finds the planted pair") {
    const auto f = test::make_selection_fixture();
    const std::vector<WeightVector> shared{f.weights};
    const auto r = select_systems(f.systems, f.refs, shared);
    CHECK(r.chosen == std::vector<std::string>{"A", "B"});
    CHECK(r.subsets.size() == 7);
    CHECK(r.subsets.front().counts.errors() == 0);
    // Never worse than any singleton.
    for (const auto& s : r.subsets)
        if (s.systems.size() == 1) CHECK(r.subsets.front().wer <= s.wer);
    CHECK(r.to_json().find("\"chosen\"") != std::string::npos);

    CHECK_THROWS_AS(select_systems({}, f.refs, shared), ConfigError);
}
