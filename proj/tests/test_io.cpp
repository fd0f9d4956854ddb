#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "rescomb/error.hpp"
#include "rescomb/io.hpp"
#include "support.hpp"

using namespace rescomb;
using rescomb::test::toks;

TEST_CASE("n-best text form round-trips exactly") {
    NBestList l{"c_A_000000_000100", "sys1", {}};
    l.hypotheses.push_back({toks("a b c"), {{"am", -12.125}, {"ngram", -0.1 - 0.2}, {"wordcount", 3}}});
    l.hypotheses.push_back({{}, {{"am", -INFINITY}, {"ngram", 1e-300}, {"wordcount", 0}}});
    std::ostringstream out;
    io::write_nbest(out, l);
    CHECK(out.str().rfind("c_A_000000_000100 sys1 0 am=-12.125 ngram=", 0) == 0);

    std::istringstream in(out.str());
    const auto back = io::read_nbest(in);
    REQUIRE(back.size() == 1);
    REQUIRE(back[0].hypotheses.size() == 2);
    CHECK(back[0].utterance_id == l.utterance_id);
    CHECK(back[0].system_id == "sys1");
    CHECK(surfaces(back[0].hypotheses[0].tokens) == surfaces(l.hypotheses[0].tokens));
    CHECK(back[0].hypotheses[0].scores == l.hypotheses[0].scores);
    CHECK(back[0].hypotheses[1].tokens.empty());
    CHECK(back[0].hypotheses[1].scores == l.hypotheses[1].scores);

    std::ostringstream again;
    io::write_nbest(again, back[0]);
    CHECK(again.str() == out.str());
}

TEST_CASE("n-best parse errors carry the line number") {
    std::istringstream missing_bar("u s 0 am=-1 | a\nu s 1 am=-2 a\n");
    try {
        io::read_nbest(missing_bar);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line() == 2);
    }
    std::istringstream bad_value("u s 0 am=abc | a\n");
    CHECK_THROWS_AS(io::read_nbest(bad_value), ParseError);
    std::istringstream bad_rank("u s 0 am=-1 | a\nu s 5 am=-1 | b\n");
    CHECK_THROWS_AS(io::read_nbest(bad_rank), ParseError);
}

TEST_CASE("format_double round-trips random doubles") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> mant(-1.0, 1.0);
    std::uniform_int_distribution<int> expo(-300, 300);
    for (int i = 0; i < 2000; ++i) {
        const double v = std::ldexp(mant(rng), expo(rng) / 4);
        CHECK(io::parse_double(io::format_double(v), 1) == v);
    }
    CHECK(io::format_double(-INFINITY) == "-inf");
    CHECK(std::isinf(io::parse_double("-inf", 1)));
}

TEST_CASE("confusion network text form") {
    ConfusionNetwork cn{"u1", {{{"a", 1.0}}, {{"b", 0.6}, {"x", 0.4}}, {{"c", 2.0 / 3.0}, {std::string(kNullWord), 1.0 / 3.0}}}};
    std::ostringstream out;
    io::write_cn(out, cn);
    CHECK(out.str().rfind("utt u1 numbins 3\nbin 0 a 1\n", 0) == 0);
    CHECK(out.str().find("bin 2 c 0.666666666667\n") != std::string::npos);

    std::istringstream in(out.str() + out.str());
    const auto back = io::read_cn(in);
    REQUIRE(back.size() == 2);
    REQUIRE(back[0].bins.size() == 3);
    CHECK(back[0].bins[1].at("x") == doctest::Approx(0.4).epsilon(1e-12));
    CHECK(back[0].bins[2].at(std::string(kNullWord)) == doctest::Approx(1.0 / 3.0).epsilon(1e-11));

    std::istringstream short_cn("utt u numbins 2\nbin 0 a 1\n");
    CHECK_THROWS_AS(io::read_cn(short_cn), ParseError);
}

TEST_CASE("STM and transcripts") {
    std::istringstream stm(";; comment\nconv1 A 0.00 1.50 Hello there\nconv1 B 1.20 2.00 uh-huh\nconv1 A 3 4\n");
    const auto utts = io::read_stm(stm);
    REQUIRE(utts.size() == 3);
    CHECK(utts[0].conversation_id == "conv1");
    CHECK(surfaces(utts[0].tokens) == std::vector<std::string>{"hello", "there"});
    CHECK(utts[1].tokens[0].is_backchannel);
    CHECK(utts[2].tokens.empty());

    std::ostringstream out;
    io::write_stm(out, utts);
    std::istringstream again(out.str());
    const auto back = io::read_stm(again);
    REQUIRE(back.size() == 3);
    CHECK(make_utterance_id(back[1]) == make_utterance_id(utts[1]));

    std::istringstream bad("conv1 A 2.0 1.0 oops\n");
    CHECK_THROWS_AS(io::read_stm(bad), ParseError);

    const auto tx = io::transcript_from_stm(utts);
    std::ostringstream txo;
    io::write_transcript(txo, tx);
    std::istringstream txi(txo.str());
    const auto tx2 = io::read_transcript(txi);
    CHECK(tx2.size() == 3);
    CHECK(surfaces(tx2.at(make_utterance_id(utts[0]))) == surfaces(utts[0].tokens));
}

TEST_CASE("write_file creates parent directories") {
    rescomb::test::TempDir dir("io");
    const auto p = dir.path() / "a" / "b" / "c.txt";
    io::write_file(p, "hello\n");
    CHECK(io::read_file(p) == "hello\n");
    CHECK_THROWS_AS(io::read_file(dir.path() / "missing"), DataError);
}
