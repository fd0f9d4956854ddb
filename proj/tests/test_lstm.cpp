#include <doctest.h>

#include <cmath>
#include <random>

#include "rescomb/error.hpp"
#include "rescomb/eval.hpp"
#include "rescomb/lstm.hpp"
#include "lstm_check.hpp"

using namespace rescomb;
using namespace rescomb::test;

TEST_CASE("letter trigrams of padded words") {
    CHECK(letter_trigrams("cat") == std::map<std::string, int>{{"#ca", 1}, {"cat", 1}, {"at#", 1}});
    CHECK(letter_trigrams("a") == std::map<std::string, int>{{"#a#", 1}});
    CHECK(letter_trigrams("aaa") == std::map<std::string, int>{{"#aa", 1}, {"aaa", 1}, {"aa#", 1}});
    CHECK(letter_trigrams("aaaa").at("aaa") == 2);
}

TEST_CASE("trigram inventory is dense and sorted; unknown trigrams are dropped") {
    const auto inv = TrigramInventory::build({"cat", "a"});
    CHECK(inv.size() == 4);
    int expected = 0;
    for (const auto& [tri, idx] : inv.index) CHECK(idx == expected++);
    const auto enc = encode_word_letter_trigram("cab", inv);
    REQUIRE(enc.size() == 1);
    CHECK(enc[0].first == inv.index.at("#ca"));
    CHECK(enc[0].second == 1.0);
}

TEST_CASE("stabilizer gain") {
    CHECK(stabilizer_scale(0.0) == doctest::Approx(0.25 * std::log(2.0)).epsilon(1e-14));
    CHECK(stabilizer_scale(0.0) == doctest::Approx(0.17329).epsilon(1e-5));
    CHECK(stabilizer_scale(1.0) == doctest::Approx(0.25 * std::log1p(std::exp(4.0))).epsilon(1e-14));
    CHECK(stabilizer_scale(1.0) == doctest::Approx(1.00454).epsilon(1e-5));
    CHECK(std::abs(stabilizer_scale(10.0) - 10.0) < 1e-8);
    CHECK(std::isfinite(stabilizer_scale(1000.0)));
    CHECK(stabilizer_scale(-1000.0) >= 0.0);
    Eigen::VectorXd x(3);
    x << 1.0, -2.0, 0.5;
    CHECK((stabilize(x, 0.0) - x * 0.25 * std::log(2.0)).norm() < 1e-15);
}

TEST_CASE("zero-initialized model is uniform") {
    for (const auto enc : {Encoding::WordOneHotTied, Encoding::LetterTrigram}) {
        const auto m = create_lstm(small_config(enc), vocab_of({"a", "b", "c"}), 0.0, 1);
        CHECK(m.num_symbols() == 5);
        const auto lp = lstm_score(m, toks("a b c"));
        REQUIRE(lp.size() == 4);
        for (double v : lp) CHECK(v == doctest::Approx(std::log(1.0 / 5.0)).epsilon(1e-12));
    }
}

TEST_CASE("softmax outputs sum to one at every step") {
    for (const auto enc : {Encoding::WordOneHotTied, Encoding::LetterTrigram, Encoding::Character}) {
        for (const bool session : {false, true}) {
            const auto m = create_lstm(small_config(enc, session), vocab_of({"a", "b", "c"}), 0.5, 3);
            for (const auto& p : lstm_step_distributions(m, gradient_sequence(m))) {
                CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-12));
                CHECK(p.minCoeff() >= 0.0);
            }
        }
    }
}

TEST_CASE("letter-trigram models have no embedding layer; tied models no output matrix") {
    const auto tri = create_lstm(small_config(Encoding::LetterTrigram), vocab_of({"a", "b"}), 0.1, 1);
    CHECK(tri.params.embedding.size() == 0);
    const auto tied = create_lstm(small_config(Encoding::WordOneHotTied), vocab_of({"a", "b"}), 0.1, 1);
    CHECK(tied.params.output.size() == 0);
    CHECK(&tied.output_embedding() == &tied.params.embedding);
    const auto chr = create_lstm(small_config(Encoding::Character), vocab_of({"ab", "b"}), 0.1, 1);
    CHECK(chr.symbol("a") >= 0);
    CHECK(chr.symbol(kCharBoundary) >= 0);
}

TEST_CASE("analytic gradients match finite differences") {
    for (const auto enc : {Encoding::WordOneHotTied, Encoding::LetterTrigram, Encoding::Character}) {
        for (const bool session : {false, true}) {
            CAPTURE(to_string(enc));
            CAPTURE(session);
            const auto m = create_lstm(small_config(enc, session), vocab_of({"a", "b", "c"}), 0.5, 17);
            CHECK(gradient_error(m, 20, 99) < 1e-4);
        }
    }
}

TEST_CASE("OOV tokens score zero and are counted") {
    const auto m = create_lstm(small_config(Encoding::WordOneHotTied), vocab_of({"a", "b"}), 0.3, 2);
    const auto lp = lstm_score(m, toks("a zz b"));
    REQUIRE(lp.size() == 4);
    CHECK(lp[1] == 0.0);
    CHECK(lp[0] < 0.0);
    CHECK(count_oov(m, toks("a zz b yy")) == 2);
}

TEST_CASE("session models require a context") {
    const auto m = create_lstm(small_config(Encoding::WordOneHotTied, true), vocab_of({"a", "b"}), 0.3, 2);
    CHECK_THROWS_AS(lstm_score(m, toks("a b")), DataError);
    const SessionContext empty;
    CHECK(lstm_score(m, toks("a b"), &empty).size() == 3);
}

TEST_CASE("backward models report scores in original token order") {
    auto cfg = small_config(Encoding::WordOneHotTied);
    cfg.direction = Direction::Backward;
    const auto m = create_lstm(cfg, vocab_of({"a", "b", "c"}), 0.4, 4);
    const auto lp = lstm_score(m, toks("a zz c"));
    REQUIRE(lp.size() == 4);
    CHECK(lp[1] == 0.0);
    // Reading "c zz a" forward with the same weights gives the same numbers, reversed.
    auto fcfg = cfg;
    fcfg.direction = Direction::Forward;
    auto f = m;
    f.config = fcfg;
    const auto rev = lstm_score(f, toks("c zz a"));
    CHECK(lp[0] == doctest::Approx(rev[2]).epsilon(1e-14));
    CHECK(lp[2] == doctest::Approx(rev[0]).epsilon(1e-14));
    CHECK(lp[3] == doctest::Approx(rev[3]).epsilon(1e-14));
}

TEST_CASE("combine_bidirectional") {
    CHECK(combine_bidirectional(-2.5, -2.5) == -2.5);
    CHECK(combine_bidirectional(-2.0, -4.0) == -3.0);
    CHECK(combine_bidirectional(-1.0, -2.0) > combine_bidirectional(-1.5, -2.5));
}

TEST_CASE("training memorizes a repeated sentence") {
    const std::vector<Tokens> text(1000, toks("a b c"));
    auto cfg = small_config(Encoding::WordOneHotTied);
    cfg.hidden_dim = 16;
    cfg.embed_dim = 8;
    cfg.min_word_count = 1;
    TrainHyper hyper;
    hyper.epochs = 50;
    hyper.target_ppl = 1.05;
    TrainReport report;
    const auto m = train_lstm(text, cfg, hyper, &report);
    REQUIRE_FALSE(report.epoch_ppl.empty());
    CHECK(report.epoch_ppl.back() < 1.2);
    const auto lp = lstm_score(m, toks("a b c"));
    CHECK(std::exp(lp[1]) > 0.9);
}

TEST_CASE("training is deterministic and improves over the first epochs") {
    std::vector<Tokens> text;
    std::mt19937_64 rng(8);
    const std::vector<std::string> words{"a", "b", "c", "d", "e"};
    for (int i = 0; i < 200; ++i) {
        std::string s = words[rng() % 2];
        for (int k = 0; k < 4; ++k) s += " " + words[rng() % words.size()];
        text.push_back(toks(s));
    }
    auto cfg = small_config(Encoding::LetterTrigram);
    cfg.hidden_dim = 8;
    TrainHyper hyper;
    hyper.epochs = 3;
    TrainReport r1, r2;
    const auto m1 = train_lstm(text, cfg, hyper, &r1);
    const auto m2 = train_lstm(text, cfg, hyper, &r2);
    CHECK(r1.epoch_ppl == r2.epoch_ppl);
    const auto t1 = m1.params.tensors();
    const auto t2 = m2.params.tensors();
    REQUIRE(t1.size() == t2.size());
    for (std::size_t i = 0; i < t1.size(); ++i) CHECK(*t1[i].second == *t2[i].second);
    REQUIRE(r1.epoch_ppl.size() == 3);
    CHECK(r1.epoch_ppl[1] <= r1.epoch_ppl[0]);
    CHECK(r1.epoch_ppl[2] <= r1.epoch_ppl[1]);
    CHECK_THROWS_AS(train_lstm(std::vector<Tokens>{}, cfg, hyper), DataError);
}

TEST_CASE("forward and backward models agree on a reversal-closed corpus") {
    std::vector<Tokens> text;
    std::mt19937_64 rng(21);
    const std::vector<std::string> words{"p", "q", "r", "s", "t", "u"};
    for (int i = 0; i < 150; ++i) {
        std::vector<std::string> s;
        const int len = 3 + static_cast<int>(rng() % 3);
        s.push_back(words[rng() % 3]);
        for (int k = 1; k < len; ++k) s.push_back(words[(rng() % 2) ? (rng() % words.size()) : 0]);
        text.push_back(tokens_from_words(s));
        std::reverse(s.begin(), s.end());
        text.push_back(tokens_from_words(s));
    }
    auto cfg = small_config(Encoding::WordOneHotTied);
    cfg.hidden_dim = 12;
    cfg.embed_dim = 8;
    cfg.min_word_count = 1;
    TrainHyper hyper;
    hyper.epochs = 4;
    const auto fwd = train_lstm(text, cfg, hyper);
    cfg.direction = Direction::Backward;
    const auto bwd = train_lstm(text, cfg, hyper);
    auto ppl = [&](const LstmModel& m) {
        std::vector<double> lps;
        for (const auto& s : text)
            for (double v : lstm_score(m, s)) lps.push_back(v);
        return perplexity(lps);
    };
    const double pf = ppl(fwd), pb = ppl(bwd);
    CHECK(std::abs(pf - pb) / std::min(pf, pb) < 0.05);
}

TEST_CASE("checkpoints round-trip") {
    for (const auto enc : {Encoding::WordOneHotTied, Encoding::LetterTrigram, Encoding::Character}) {
        const auto m = create_lstm(small_config(enc, true), vocab_of({"a", "b", "c"}), 0.3, 5);
        const auto json = lstm_to_json(m);
        CHECK(json.find("\"version\"") != std::string::npos);
        const auto back = lstm_from_json(json);
        CHECK(lstm_to_json(back) == json);
        const SessionContext ctx{{}, true, false};
        CHECK(lstm_score(back, toks("a b zz"), &ctx) == lstm_score(m, toks("a b zz"), &ctx));
    }
    CHECK_THROWS(lstm_from_json("{\"format\": \"rescomb-lstm\", \"version\": 99}"));
    CHECK_THROWS(lstm_from_json("not json"));
}

TEST_CASE("score_nbest_lstm adds one dimension per family") {
    const auto fwd = create_lstm(small_config(Encoding::WordOneHotTied), vocab_of({"a", "b"}), 0.3, 1);
    auto bcfg = small_config(Encoding::WordOneHotTied);
    bcfg.direction = Direction::Backward;
    const auto bwd = create_lstm(bcfg, vocab_of({"a", "b"}), 0.3, 2);
    NBestList l{"c_A_000000_000100", "s", {{toks("a b"), {{"am", -1}}}, {toks("b zz"), {{"am", -2}}}}};

    const auto same = score_nbest_lstm({}, l);
    CHECK(same.hypotheses[0].scores == l.hypotheses[0].scores);

    const LstmFamily one{"lstm", &fwd, nullptr};
    const auto a = score_nbest_lstm(std::span(&one, 1), l);
    CHECK(a.hypotheses[0].scores.size() == 3);
    CHECK(a.hypotheses[0].scores.at("am") == -1);
    CHECK(a.hypotheses[1].scores.at("oov_count") == 1);
    double expected = 0.0;
    for (double v : lstm_score(fwd, toks("a b"))) expected += v;
    CHECK(a.hypotheses[0].scores.at("lstm") == doctest::Approx(expected).epsilon(1e-14));

    const LstmFamily both{"lstm", &fwd, &bwd};
    const auto b = score_nbest_lstm(std::span(&both, 1), l);
    double back = 0.0;
    for (double v : lstm_score(bwd, toks("a b"))) back += v;
    CHECK(b.hypotheses[0].scores.at("lstm") == doctest::Approx(combine_bidirectional(expected, back)).epsilon(1e-14));
    CHECK(surfaces(b.hypotheses[1].tokens) == surfaces(l.hypotheses[1].tokens));
}

TEST_CASE("session scoring uses the conversation history") {
    const auto m = create_lstm(small_config(Encoding::WordOneHotTied, true), vocab_of({"a", "b", "c"}), 0.5, 6);
    const auto conv = small_conversation();
    const auto index = history_from_references(conv);
    const auto id = make_utterance_id(conv[2]);
    const auto ctx = index.context(id, Direction::Forward, SessionFlags{});
    REQUIRE(ctx);
    CHECK(ctx->history.size() == 5);
    CHECK_FALSE(index.context("nope_A_000000_000100", Direction::Forward, SessionFlags{}));

    NBestList l{id, "s", {{toks("b"), {{"am", -1}}}}};
    const LstmFamily fam{"sess", &m, nullptr};
    CHECK_THROWS_AS(score_nbest_lstm(std::span(&fam, 1), l, nullptr), DataError);
    const auto scored = score_nbest_lstm(std::span(&fam, 1), l, &index);
    double expected = 0.0;
    for (double v : lstm_score(m, toks("b"), &*ctx)) expected += v;
    CHECK(scored.hypotheses[0].scores.at("sess") == doctest::Approx(expected).epsilon(1e-14));
    const SessionContext none;
    double without = 0.0;
    for (double v : lstm_score(m, toks("b"), &none)) without += v;
    CHECK(expected != without);
}

TEST_CASE("training with the stabilizer converges like training without it") {
    std::vector<Tokens> text;
    for (int i = 0; i < 200; ++i) text.push_back(toks(i % 2 ? "a b c" : "c b a"));
    for (const bool stab : {true, false}) {
        CAPTURE(stab);
        auto cfg = small_config(Encoding::WordOneHotTied);
        cfg.stabilizer = stab;
        cfg.min_word_count = 1;
        TrainHyper hyper;
        hyper.epochs = 4;
        TrainReport report;
        train_lstm(text, cfg, hyper, &report);
        REQUIRE(report.epoch_ppl.size() == 4);
        for (double p : report.epoch_ppl) CHECK(std::isfinite(p));
        CHECK(report.epoch_ppl.back() < report.epoch_ppl.front());
    }
}
