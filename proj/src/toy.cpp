#include "rescomb/toy.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "rescomb/error.hpp"
#include "rescomb/io.hpp"

#include <json.hpp>

namespace rescomb::toy {

namespace {

using Rng = std::mt19937_64;

const std::vector<std::string> kPlaces = {"store", "park", "beach", "school", "office", "market"};
const std::vector<std::string> kAdjectives = {"big", "small", "red", "old", "new", "happy", "brown", "quiet"};
const std::vector<std::pair<std::string, std::string>> kNounPairs = {
    {"dog", "frog"}, {"cat", "bat"}, {"goat", "boat"}, {"mouse", "house"}, {"bear", "pear"}, {"duck", "truck"}};

std::vector<std::string> all_nouns() {
    std::vector<std::string> out;
    for (const auto& [a, b] : kNounPairs) {
        out.push_back(a);
        out.push_back(b);
    }
    return out;
}

std::string partner(const std::string& noun) {
    for (const auto& [a, b] : kNounPairs) {
        if (a == noun) return b;
        if (b == noun) return a;
    }
    return {};
}

template <class T>
const T& pick(const std::vector<T>& v, Rng& rng) {
    return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
}

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

enum class SiteKind { Homophone, Conjunction, Noun, Backchannel };

// A position where the recognizers may hear a different word.
struct Site {
    std::size_t position;
    std::string alternative;
    SiteKind kind;
};

struct Sentence {
    std::vector<std::string> words;
    std::vector<Site> sites;
};

Sentence generate_sentence(Rng& rng) {
    static const std::vector<std::string> nouns = all_nouns();
    // Template weights out of 100.
    static const std::array<int, 11> weights = {10, 10, 10, 8, 12, 12, 7, 7, 8, 10, 6};
    const int t = std::discrete_distribution<int>(weights.begin(), weights.end())(rng);
    Sentence s;
    auto word = [&](std::string w) { s.words.push_back(std::move(w)); };
    auto site = [&](std::string w, std::string alt, SiteKind kind) {
        s.sites.push_back({s.words.size(), std::move(alt), kind});
        word(std::move(w));
    };
    auto noun = [&] {
        const auto& n = pick(nouns, rng);
        site(n, partner(n), SiteKind::Noun);
    };
    switch (t) {
        case 0:
            word("i"), word("want"), site("to", "two", SiteKind::Homophone), word("go");
            site("to", "two", SiteKind::Homophone), word("the"), word(pick(kPlaces, rng));
            break;
        case 1:
            word("we"), word("have"), site("two", "to", SiteKind::Homophone), word(pick(kAdjectives, rng)), noun();
            break;
        case 2:
            word("i"), word("like"), site("their", "there", SiteKind::Homophone), word(pick(kAdjectives, rng)), noun();
            break;
        case 3:
            word("put"), word("the"), noun(), word("over"), site("there", "their", SiteKind::Homophone);
            break;
        case 4:
        case 5: {
            const bool neither = t == 5;
            word(neither ? "neither" : "either"), word("the"), word(pick(kAdjectives, rng));
            word(pick(kAdjectives, rng)), noun();
            site(neither ? "nor" : "or", neither ? "or" : "nor", SiteKind::Conjunction);
            word("the"), noun();
            break;
        }
        case 6: site("uh-huh", "uh", SiteKind::Backchannel); break;
        case 7: site("uh", "uh-huh", SiteKind::Backchannel); break;
        case 8: word("yeah"), word("the"), noun(), word("is"), word(pick(kAdjectives, rng)); break;
        case 9: word("i"), word("saw"), word("a"), word(pick(kAdjectives, rng)), noun(), word("today"); break;
        default: word("mhm"); break;
    }
    return s;
}

Tokens to_tokens(const std::vector<std::string>& words) { return tokens_from_words(words); }

// Acoustic preference for the true word over the alternative (log domain).
double acoustic_margin(const Site& site, const std::string& truth, bool system_errs, Rng& rng) {
    switch (site.kind) {
        case SiteKind::Homophone:
        case SiteKind::Conjunction: return uniform(rng, -1.0, 1.0);
        case SiteKind::Noun: return system_errs ? -uniform(rng, 0.5, 2.5) : uniform(rng, 0.5, 2.5);
        case SiteKind::Backchannel:
            // Filled pauses come out slightly closer to a backchannel; true
            // backchannels are recognized confidently.
            return truth == "uh" ? -uniform(rng, 0.2, 0.6) : uniform(rng, 1.8, 2.6);
    }
    return 0.0;
}

NBestList first_pass(const Sentence& s, const std::string& utt_id, const std::string& system_id, double noun_error,
                     Rng& rng) {
    std::vector<double> margin;
    for (const auto& site : s.sites) {
        const bool errs = std::bernoulli_distribution(noun_error)(rng);
        margin.push_back(acoustic_margin(site, s.words[site.position], errs, rng));
    }
    const double base = -(3.0 * static_cast<double>(s.words.size()) + uniform(rng, 0.0, 1.0));
    NBestList list;
    list.utterance_id = utt_id;
    list.system_id = system_id;
    const std::size_t n = std::size_t{1} << s.sites.size();
    for (std::size_t mask = 0; mask < n; ++mask) {
        auto words = s.words;
        double am = base;
        for (std::size_t k = 0; k < s.sites.size(); ++k)
            if (mask & (std::size_t{1} << k)) {
                words[s.sites[k].position] = s.sites[k].alternative;
                am -= margin[k];
            }
        Hypothesis h;
        h.tokens = to_tokens(words);
        h.scores[dims::kAcoustic] = am;
        list.hypotheses.push_back(std::move(h));
    }
    std::stable_sort(list.hypotheses.begin(), list.hypotheses.end(), [](const Hypothesis& a, const Hypothesis& b) {
        const double sa = a.scores.at(dims::kAcoustic), sb = b.scores.at(dims::kAcoustic);
        if (sa != sb) return sa > sb;
        return join(a.tokens) < join(b.tokens);
    });
    return list;
}

// Onset/end times of consecutive turns; about one in five overlaps the
// previous turn.
struct Clock {
    double t = 0.0;
    std::pair<double, double> next(std::size_t words, Rng& rng) {
        const double onset = t;
        const double end = onset + 0.5 + 0.3 * static_cast<double>(words);
        t = std::bernoulli_distribution(0.2)(rng) ? end - 0.3 : end + 0.2;
        return {onset, end};
    }
};

std::string two_digits(int i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%02d", i);
    return buf;
}

} // namespace

ToyData make_toy(const ToyOptions& options) {
    if (options.systems < 1 || options.utterances_per_conversation < 1)
        throw ConfigError("toy fixture needs at least one system and one utterance per conversation");
    Rng rng(options.seed);
    ToyData data;
    for (int i = 0; i < options.train_sentences; ++i) data.lm_train.push_back(to_tokens(generate_sentence(rng).words));
    for (int s = 0; s < options.systems; ++s) data.system_ids.push_back("sys" + std::to_string(s + 1));
    data.systems.resize(static_cast<std::size_t>(options.systems));

    auto conversation = [&](const std::string& conv_id) {
        Clock clock;
        for (int u = 0; u < options.utterances_per_conversation; ++u) {
            const Sentence s = generate_sentence(rng);
            const auto [onset, end] = clock.next(s.words.size(), rng);
            TimedUtterance utt{conv_id, u % 2 == 0 ? "A" : "B", onset, end, to_tokens(s.words)};
            const std::string id = make_utterance_id(utt);
            for (int k = 0; k < options.systems; ++k)
                data.systems[static_cast<std::size_t>(k)].push_back(
                    first_pass(s, id, data.system_ids[static_cast<std::size_t>(k)], options.noun_error, rng));
            data.references.push_back(std::move(utt));
        }
    };
    for (int c = 0; c < options.dev_conversations; ++c) {
        data.dev_conversations.push_back("dev" + two_digits(c + 1));
        conversation(data.dev_conversations.back());
    }
    for (int c = 0; c < options.test_conversations; ++c) {
        data.test_conversations.push_back("test" + two_digits(c + 1));
        conversation(data.test_conversations.back());
    }
    return data;
}

void write_toy(const ToyData& data, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    {
        std::ostringstream out;
        for (const auto& s : data.lm_train) out << join(s) << '\n';
        io::write_file(dir / "train.txt", out.str());
    }
    {
        std::ostringstream out;
        io::write_stm(out, data.references);
        io::write_file(dir / "refs.stm", out.str());
    }
    for (std::size_t s = 0; s < data.systems.size(); ++s)
        io::write_nbest_file(dir / (data.system_ids[s] + ".nbest"), data.systems[s]);

    nlohmann::ordered_json cfg;
    cfg["output_dir"] = "out";
    cfg["seed"] = 1;
    cfg["stages"] = {"rescore", "combine", "cn_rescore", "score"};
    cfg["references"] = "refs.stm";
    cfg["dev"] = data.dev_conversations;
    cfg["test"] = data.test_conversations;
    auto systems = nlohmann::ordered_json::array();
    for (const auto& id : data.system_ids) systems.push_back({{"id", id}, {"nbest", id + ".nbest"}});
    cfg["systems"] = std::move(systems);
    cfg["ngram"] = {{{"name", "ngram"}, {"arpa", "models/ngram.arpa"}}};
    cfg["lstm"] = {{{"name", "lstm"},
                    {"forward", "models/lstm_fwd.json"},
                    {"backward", "models/lstm_bwd.json"},
                    {"history", "one_best"}}};
    cfg["init_weights"] = {{"am", 1.0}, {"ngram", 1.0}, {"lstm", 1.0}, {"wordcount", 0.0}, {"oov_count", 0.0},
                           {"__posterior_scale", 1.0}};
    cfg["select_systems"] = false;
    cfg["cn_rescore"] = {{"nbest", 100},
                         {"ngram", {"ngram"}},
                         {"lstm", {"lstm"}},
                         {"init_weights",
                          {{"cn_posterior", 1.0}, {"ngram", 0.0}, {"lstm", 0.0}, {"wordcount", 0.0},
                           {"oov_count", 0.0}, {"backchannel_count", 0.0}, {"__posterior_scale", 1.0}}}};
    cfg["backchannels"] = {"mhm", "uh-huh", "uh-hum"};
    cfg["optimizer"] = {{"restarts", 4}, {"max_iters", 20}};
    io::write_file(dir / "config.json", cfg.dump(2) + "\n");
}

ToyModels train_toy_models(const ToyData& data, std::uint64_t seed, int lstm_epochs) {
    LstmConfig cfg;
    cfg.encoding = Encoding::WordOneHotTied;
    cfg.hidden_dim = 32;
    cfg.embed_dim = 32;
    TrainHyper hyper;
    hyper.epochs = lstm_epochs;
    hyper.seed = seed;
    ToyModels m{train_ngram(data.lm_train, 3), train_lstm(data.lm_train, cfg, hyper), {}};
    cfg.direction = Direction::Backward;
    m.backward = train_lstm(data.lm_train, cfg, hyper);
    return m;
}

void write_toy_models(const ToyModels& models, const std::filesystem::path& dir) {
    write_arpa_file(dir / "models" / "ngram.arpa", models.ngram);
    save_lstm(dir / "models" / "lstm_fwd.json", models.forward);
    save_lstm(dir / "models" / "lstm_bwd.json", models.backward);
}

// ─── Entrainment corpus ──────────────────────────────────────────────────────

namespace {

std::string pseudo_word(int topic, int index) {
    return std::string("x") + static_cast<char>('a' + topic) + static_cast<char>('a' + index);
}

std::vector<TimedUtterance> entrainment_conversation(const EntrainmentOptions& o, const std::string& conv_id,
                                                     Rng& rng) {
    const int topic = std::uniform_int_distribution<int>(0, o.topics - 1)(rng);
    std::vector<TimedUtterance> out;
    Clock clock;
    std::vector<std::string> previous;
    for (int u = 0; u < o.utterances_per_conversation; ++u) {
        const int len = std::uniform_int_distribution<int>(o.min_length, o.max_length)(rng);
        std::vector<std::string> words;
        // Reuse the first half (rounded up) of the previous utterance.
        const std::size_t reuse = (previous.size() + 1) / 2;
        for (std::size_t k = 0; k < reuse && static_cast<int>(words.size()) < len; ++k) words.push_back(previous[k]);
        while (static_cast<int>(words.size()) < len)
            words.push_back(pseudo_word(topic, std::uniform_int_distribution<int>(0, o.words_per_topic - 1)(rng)));
        const auto [onset, end] = clock.next(words.size(), rng);
        out.push_back({conv_id, u % 2 == 0 ? "A" : "B", onset, end, tokens_from_words(words)});
        previous = std::move(words);
    }
    return out;
}

} // namespace

EntrainmentCorpus make_entrainment_corpus(const EntrainmentOptions& o) {
    if (o.topics < 1 || o.topics > 26 || o.words_per_topic < 1 || o.words_per_topic > 26 || o.min_length < 2 ||
        o.max_length < o.min_length)
        throw ConfigError("invalid entrainment corpus options");
    Rng rng(o.seed);
    EntrainmentCorpus c;
    for (int t = 0; t < o.topics; ++t)
        for (int w = 0; w < o.words_per_topic; ++w) c.words.push_back(pseudo_word(t, w));
    for (int i = 0; i < o.train_conversations; ++i)
        c.train.push_back(entrainment_conversation(o, "train" + std::to_string(i), rng));
    for (int i = 0; i < o.test_conversations; ++i)
        c.test.push_back(entrainment_conversation(o, "test" + std::to_string(i), rng));
    return c;
}

std::vector<TimedUtterance> corrupt(const std::vector<TimedUtterance>& conversation,
                                   const std::vector<std::string>& words, double rate, std::uint64_t seed) {
    Rng rng(seed);
    std::bernoulli_distribution flip(rate);
    auto out = conversation;
    for (auto& u : out)
        for (auto& t : u.tokens)
            if (flip(rng)) t = make_token(pick(words, rng), NormConfig{});
    return out;
}

} // namespace rescomb::toy
