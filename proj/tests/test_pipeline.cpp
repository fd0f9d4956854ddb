#include <doctest.h>

#include <algorithm>

#include <json.hpp>

#include "rescomb/error.hpp"
#include "rescomb/io.hpp"
#include "rescomb/ngram.hpp"
#include "rescomb/pipeline.hpp"
#include "rescomb/toy.hpp"
#include "support.hpp"

using namespace rescomb;
using namespace rescomb::io;
using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

// A small toy with an n-gram LM only.
struct SmallToy {
    test::TempDir dir{"pipeline"};
    json config;

    SmallToy() {
        toy::ToyOptions o;
        o.train_sentences = 600;
        o.dev_conversations = 2;
        o.test_conversations = 2;
        o.utterances_per_conversation = 6;
        const auto data = toy::make_toy(o);
        toy::write_toy(data, dir.path());
        write_arpa_file(dir.path() / "models" / "ngram.arpa", train_ngram(data.lm_train, 3));
        config = json::parse(read_file(dir.path() / "config.json"));
        config["lstm"] = json::array();
        config["cn_rescore"]["lstm"] = json::array();
        config["init_weights"].erase("lstm");
        config["cn_rescore"]["init_weights"].erase("lstm");
        config["optimizer"]["restarts"] = 1;
        config["optimizer"]["max_iters"] = 4;
    }

    PipelineConfig parse() const { return parse_pipeline_config(config.dump(), dir.path()); }
    fs::path out() const { return dir.path() / "out"; }
};

std::set<std::string> dev_ids(const PipelineConfig& c) {
    std::set<std::string> ids;
    for (const auto& u : read_stm_file(c.resolve(c.references)))
        if (std::find(c.dev_conversations.begin(), c.dev_conversations.end(), u.conversation_id) !=
            c.dev_conversations.end())
            ids.insert(make_utterance_id(u.conversation_id, u.speaker, u.onset, u.end));
    return ids;
}

} // namespace

TEST_CASE("sha256 of known strings") {
    CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("rescore without LMs copies the n-best lists") {
    SmallToy t;
    t.config["ngram"] = json::array();
    t.config["cn_rescore"]["ngram"] = json::array();
    t.config["stages"] = {"rescore"};
    const auto c = t.parse();
    run_rescore(c);
    for (const auto& s : c.systems) CHECK(read_file(t.out() / "rescore" / (s.id + ".nbest")) == read_file(c.resolve(s.nbest)));
}

TEST_CASE("rescore with an n-gram adds its dimensions") {
    SmallToy t;
    t.config["stages"] = {"rescore"};
    const auto c = t.parse();
    run_rescore(c);
    const auto lists = read_nbest_file(t.out() / "rescore" / "sys1.nbest");
    REQUIRE_FALSE(lists.empty());
    CHECK(lists[0].dimension_names() == std::vector<std::string>{"am", "ngram", "oov_count", "wordcount"});
}

TEST_CASE("config errors") {
    SmallToy t;
    const auto expect_config_error = [&](const json& j) {
        CHECK_THROWS_AS(parse_pipeline_config(j.dump(), t.dir.path()), ConfigError);
    };
    auto j = t.config;
    j["bogus"] = 1;
    expect_config_error(j);

    j = t.config;
    j["stages"] = {"combine"};
    expect_config_error(j);

    j = t.config;
    j["test"].push_back(j["dev"][0]);
    expect_config_error(j);

    j = t.config;
    j["systems"][0]["nbest"] = "missing.nbest";
    expect_config_error(j);

    j = t.config;
    j["systems"][1]["id"] = j["systems"][0]["id"];
    expect_config_error(j);

    j = t.config;
    j["cn_rescore"]["ngram"] = {"nope"};
    expect_config_error(j);

    CHECK_THROWS_AS(load_pipeline_config(t.dir.path() / "absent.json"), ConfigError);
}

TEST_CASE("pipeline runs are deterministic and tune on dev only") {
    SmallToy t;
    const auto c = t.parse();
    const auto results = run_pipeline(c);
    REQUIRE(results.size() == kStageOrder.size());
    const auto dev = dev_ids(c);
    for (const auto& r : results)
        for (const auto& id : r.tuning_access) CHECK(dev.contains(id));
    CHECK_FALSE(results[1].tuning_access.empty());  // combine tunes per-system weights
    CHECK_FALSE(results[2].tuning_access.empty());

    const auto final_txt = read_file(t.out() / "cn_rescore" / "final.txt");
    const auto manifest = read_file(t.out() / "manifest.json");
    fs::remove_all(t.out());
    run_pipeline(c);
    CHECK(read_file(t.out() / "cn_rescore" / "final.txt") == final_txt);
    CHECK(read_file(t.out() / "manifest.json") == manifest);

    // Manifest hashes match the files on disk.
    const auto m = json::parse(manifest);
    for (const auto& [stage, entry] : m.at("stages").items()) {
        for (const auto& in : entry.at("inputs")) {
            std::string p = in.at("path");
            const fs::path full = p.rfind("$OUT/", 0) == 0 ? t.out() / p.substr(5) : t.dir.path() / p;
            CHECK(sha256_file(full) == in.at("sha256").get<std::string>());
        }
        for (const auto& out : entry.at("outputs")) {
            std::string p = out.at("path");
            CHECK(sha256_file(t.out() / p) == out.at("sha256").get<std::string>());
        }
    }
    CHECK(m.at("tool_version") == kToolVersion);
}

TEST_CASE("saved CN weights reproduce the final transcript") {
    SmallToy t;
    const auto c = t.parse();
    run_pipeline(c);
    const auto final_txt = read_file(t.out() / "cn_rescore" / "final.txt");
    fs::copy_file(t.out() / "weights" / "cn_rescore.json", t.dir.path() / "cn_weights.json");
    fs::remove_all(t.out());
    t.config["weights"] = {{"cn_rescore", "cn_weights.json"}};
    run_pipeline(t.parse());
    CHECK(read_file(t.out() / "cn_rescore" / "final.txt") == final_txt);
}

TEST_CASE("report covers completed stages only") {
    SmallToy t;
    t.config["stages"] = json::array();
    const auto empty = run_report(t.parse());
    CHECK(empty.rows.empty());
    const auto table = empty.to_table();
    CHECK(std::count(table.begin(), table.end(), '\n') == 1);

    t.config["stages"] = {"rescore", "combine"};
    const auto c = t.parse();
    run_pipeline(c);
    const auto r = run_report(c);
    std::set<std::string> stages;
    for (const auto& row : r.rows) stages.insert(row.stage);
    CHECK(stages == std::set<std::string>{"first_pass", "ngram", "full_rescore", "combination"});
}
