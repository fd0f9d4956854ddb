#include "rescomb/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <openssl/evp.h>

#include "rescomb/concom.hpp"
#include "rescomb/error.hpp"
#include "rescomb/io.hpp"
#include "rescomb/lstm.hpp"
#include "rescomb/ngram.hpp"

#include <json.hpp>

namespace rescomb {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ─── Hashing ─────────────────────────────────────────────────────────────────

std::string sha256_hex(std::string_view bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        throw Error("SHA-256 computation failed");
    std::string hex;
    hex.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        char buf[3];
        std::snprintf(buf, sizeof buf, "%02x", digest[i]);
        hex += buf;
    }
    return hex;
}

std::string sha256_file(const fs::path& path) { return sha256_hex(io::read_file(path)); }

// ─── Config ──────────────────────────────────────────────────────────────────

fs::path PipelineConfig::resolve(const fs::path& p) const { return p.is_absolute() ? p : base_dir / p; }

namespace {

template <class T>
T get_or(const json& j, const char* key, T fallback) {
    const auto it = j.find(key);
    return it == j.end() ? fallback : it->get<T>();
}

WeightVector parse_weights(const json& j) {
    if (!j.is_object()) throw ConfigError("weights must be a JSON object");
    return weights_from_json(j.dump());
}

void require_file(const PipelineConfig& c, const fs::path& p, const std::string& what) {
    if (!fs::exists(c.resolve(p))) throw ConfigError(what + " " + c.resolve(p).string() + " does not exist");
}

} // namespace

PipelineConfig parse_pipeline_config(const std::string& json_text, const fs::path& base_dir) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    static const std::set<std::string> known = {"output_dir",  "seed",         "stages",     "references",
                                                "dev",         "test",         "systems",    "ngram",
                                                "lstm",        "init_weights", "weights",    "select_systems",
                                                "cn_rescore",  "backchannels", "optimizer"};
    for (const auto& [key, value] : j.items())
        if (!known.contains(key)) throw ConfigError("unknown config key '" + key + "'");

    PipelineConfig c;
    try {
        c.base_dir = base_dir;
        if (!j.contains("output_dir")) throw ConfigError("config needs output_dir");
        c.output_dir = c.resolve(j.at("output_dir").get<std::string>());
        c.seed = get_or<std::uint64_t>(j, "seed", 1);
        c.stages = get_or<std::vector<std::string>>(j, "stages", kStageOrder);
        if (c.stages.size() > kStageOrder.size() || !std::equal(c.stages.begin(), c.stages.end(), kStageOrder.begin()))
            throw ConfigError("stages must be a prefix of rescore, combine, cn_rescore, score");
        if (!j.contains("references")) throw ConfigError("config needs references");
        c.references = j.at("references").get<std::string>();
        require_file(c, c.references, "references file");
        c.dev_conversations = get_or<std::vector<std::string>>(j, "dev", {});
        c.test_conversations = get_or<std::vector<std::string>>(j, "test", {});
        for (const auto& d : c.dev_conversations)
            if (std::find(c.test_conversations.begin(), c.test_conversations.end(), d) != c.test_conversations.end())
                throw ConfigError("conversation " + d + " is in both dev and test");

        for (const auto& s : j.value("systems", json::array())) {
            SystemSpec spec{s.at("id").get<std::string>(), s.at("nbest").get<std::string>()};
            require_file(c, spec.nbest, "n-best file");
            c.systems.push_back(std::move(spec));
        }
        if (c.systems.empty()) throw ConfigError("config lists no systems");
        std::set<std::string> ids;
        for (const auto& s : c.systems)
            if (!ids.insert(s.id).second) throw ConfigError("duplicate system id " + s.id);

        std::set<std::string> lm_names;
        for (const auto& n : j.value("ngram", json::array())) {
            NgramSpec spec{n.at("name").get<std::string>(), n.at("arpa").get<std::string>()};
            require_file(c, spec.arpa, "ARPA file");
            if (!lm_names.insert(spec.name).second) throw ConfigError("duplicate LM name " + spec.name);
            c.ngrams.push_back(std::move(spec));
        }
        for (const auto& l : j.value("lstm", json::array())) {
            LstmSpec spec;
            spec.name = l.at("name").get<std::string>();
            if (l.contains("forward")) spec.forward = l.at("forward").get<std::string>();
            if (l.contains("backward")) spec.backward = l.at("backward").get<std::string>();
            if (!spec.forward && !spec.backward) throw ConfigError("LSTM entry " + spec.name + " has no checkpoint");
            for (const auto& p : {spec.forward, spec.backward})
                if (p) require_file(c, *p, "LSTM checkpoint");
            const auto history = get_or<std::string>(l, "history", "one_best");
            if (history == "one_best") spec.history = HistorySource::OneBest;
            else if (history == "reference") spec.history = HistorySource::Reference;
            else throw ConfigError("LSTM history must be one_best or reference");
            if (!lm_names.insert(spec.name).second) throw ConfigError("duplicate LM name " + spec.name);
            c.lstms.push_back(std::move(spec));
        }

        c.init_weights = j.contains("init_weights") ? parse_weights(j.at("init_weights")) : WeightVector{};
        if (j.contains("weights")) {
            const auto& w = j.at("weights");
            if (w.contains("rescore")) c.rescore_weights = c.resolve(w.at("rescore").get<std::string>());
            if (w.contains("cn_rescore")) c.cn_weights = c.resolve(w.at("cn_rescore").get<std::string>());
            for (const auto& p : {c.rescore_weights, c.cn_weights})
                if (p) require_file(c, *p, "weights file");
        }
        c.select_systems = get_or<bool>(j, "select_systems", false);
        if (j.contains("cn_rescore")) {
            const auto& cn = j.at("cn_rescore");
            c.cn_nbest = get_or<int>(cn, "nbest", 100);
            c.cn_ngrams = get_or<std::vector<std::string>>(cn, "ngram", {});
            c.cn_lstms = get_or<std::vector<std::string>>(cn, "lstm", {});
            if (cn.contains("init_weights")) c.cn_init_weights = parse_weights(cn.at("init_weights"));
        }
        if (c.cn_nbest < 1) throw ConfigError("cn_rescore.nbest must be at least 1");
        for (const auto& n : c.cn_ngrams)
            if (std::none_of(c.ngrams.begin(), c.ngrams.end(), [&](const NgramSpec& s) { return s.name == n; }))
                throw ConfigError("cn_rescore uses unknown n-gram LM " + n);
        for (const auto& n : c.cn_lstms)
            if (std::none_of(c.lstms.begin(), c.lstms.end(), [&](const LstmSpec& s) { return s.name == n; }))
                throw ConfigError("cn_rescore uses unknown LSTM " + n);
        if (j.contains("backchannels")) {
            for (const auto& w : j.at("backchannels")) c.backchannels.insert(w.get<std::string>());
        } else {
            c.backchannels = NormConfig{}.backchannels;
        }
        if (j.contains("optimizer")) {
            c.restarts = get_or<int>(j.at("optimizer"), "restarts", 4);
            c.max_iters = get_or<int>(j.at("optimizer"), "max_iters", 20);
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad config field: ") + e.what());
    }
    return c;
}

PipelineConfig load_pipeline_config(const fs::path& path) {
    if (!fs::exists(path)) throw ConfigError("config file " + path.string() + " does not exist");
    return parse_pipeline_config(io::read_file(path), fs::absolute(path).parent_path());
}

// ─── Shared stage plumbing ───────────────────────────────────────────────────

namespace {

struct References {
    std::vector<TimedUtterance> utterances;
    TokenMap tokens;  // by utterance id
    std::set<std::string> dev, test;
};

References load_references(const PipelineConfig& c) {
    References r;
    r.utterances = io::read_stm_file(c.resolve(c.references));
    const std::set<std::string> dev(c.dev_conversations.begin(), c.dev_conversations.end());
    const std::set<std::string> test(c.test_conversations.begin(), c.test_conversations.end());
    for (const auto& u : r.utterances) {
        const auto id = make_utterance_id(u);
        if (!r.tokens.emplace(id, u.tokens).second) throw DataError("duplicate reference utterance " + id);
        if (dev.contains(u.conversation_id)) r.dev.insert(id);
        if (test.contains(u.conversation_id)) r.test.insert(id);
    }
    return r;
}

fs::path rescored_path(const PipelineConfig& c, const std::string& system) {
    return c.output_dir / "rescore" / (system + ".nbest");
}
fs::path weights_path(const PipelineConfig& c, const std::string& name) {
    return c.output_dir / "weights" / (name + ".json");
}
fs::path cn_dir(const PipelineConfig& c) { return c.output_dir / "combine" / "cn"; }
fs::path consensus_path(const PipelineConfig& c) { return c.output_dir / "combine" / "consensus.txt"; }
fs::path final_path(const PipelineConfig& c) { return c.output_dir / "cn_rescore" / "final.txt"; }

std::vector<NBestList> read_stage_input(const fs::path& p, const std::string& stage) {
    if (!fs::exists(p)) throw DataError(p.string() + " is missing; run the " + stage + " stage first");
    return io::read_nbest_file(p);
}

std::string render(const std::string& text) { return text; }

void write_text(const PipelineConfig& c, StageResult& res, const fs::path& rel, const std::string& text) {
    io::write_file(c.output_dir / rel, render(text));
    res.outputs.push_back(rel);
}

std::string transcript_text(const io::Transcript& t) {
    std::ostringstream out;
    io::write_transcript(out, t);
    return out.str();
}

std::string nbest_text(const std::vector<NBestList>& lists) {
    std::ostringstream out;
    for (const auto& l : lists) io::write_nbest(out, l);
    return out.str();
}

// Loaded language models, keyed by their dimension name.
struct LanguageModels {
    std::map<std::string, NGramModel> ngrams;
    std::map<std::string, std::pair<std::optional<LstmModel>, std::optional<LstmModel>>> lstms;
    std::map<std::string, HistorySource> history;

    bool any_session(const std::vector<std::string>& names) const {
        for (const auto& n : names) {
            const auto& [f, b] = lstms.at(n);
            if ((f && f->config.session_mode) || (b && b->config.session_mode)) return true;
        }
        return false;
    }
};

LanguageModels load_lms(const PipelineConfig& c, StageResult& res, const std::vector<std::string>* ngram_subset,
                        const std::vector<std::string>* lstm_subset) {
    LanguageModels lms;
    auto wanted = [](const std::vector<std::string>* subset, const std::string& n) {
        return !subset || std::find(subset->begin(), subset->end(), n) != subset->end();
    };
    for (const auto& spec : c.ngrams) {
        if (!wanted(ngram_subset, spec.name)) continue;
        const auto p = c.resolve(spec.arpa);
        try {
            lms.ngrams.emplace(spec.name, read_arpa_file(p));
        } catch (const DataError& e) {
            throw DataError("cannot load n-gram LM " + spec.name + ": " + e.what());
        }
        res.inputs.push_back(p);
    }
    for (const auto& spec : c.lstms) {
        if (!wanted(lstm_subset, spec.name)) continue;
        auto& slot = lms.lstms[spec.name];
        if (spec.forward) {
            slot.first = load_lstm(c.resolve(*spec.forward));
            res.inputs.push_back(c.resolve(*spec.forward));
        }
        if (spec.backward) {
            slot.second = load_lstm(c.resolve(*spec.backward));
            res.inputs.push_back(c.resolve(*spec.backward));
        }
        lms.history[spec.name] = spec.history;
    }
    return lms;
}

// Applies the n-gram LMs and then the LSTM families to one list.
NBestList apply_lms(const LanguageModels& lms, const NBestList& list, const HistoryIndex* one_best,
                    const HistoryIndex* reference) {
    NBestList out = list;
    for (const auto& [name, model] : lms.ngrams) out = score_nbest_ngram(model, out, nullptr, name);
    for (const auto& [name, pair] : lms.lstms) {
        const LstmFamily fam{name, pair.first ? &*pair.first : nullptr, pair.second ? &*pair.second : nullptr};
        const HistoryIndex* h = lms.history.at(name) == HistorySource::Reference ? reference : one_best;
        out = score_nbest_lstm(std::span(&fam, 1), out, h);
    }
    return out;
}

bool is_lm_dimension(const PipelineConfig& c, const std::string& dim) {
    return std::any_of(c.ngrams.begin(), c.ngrams.end(), [&](const NgramSpec& s) { return s.name == dim; }) ||
           std::any_of(c.lstms.begin(), c.lstms.end(), [&](const LstmSpec& s) { return s.name == dim; });
}

// Restricts init to the dimensions of the lists, filling gaps with 1 for the
// base and LM dimensions and 0 for counts.
WeightVector complete_weights(const PipelineConfig& c, const WeightVector& init, const std::vector<std::string>& dims) {
    WeightVector w;
    w.posterior_scale = init.posterior_scale;
    for (const auto& d : dims) {
        const auto it = init.weights.find(d);
        if (it != init.weights.end()) w.weights[d] = it->second;
        else if (d == dims::kAcoustic || d == dims::kCnPosterior || is_lm_dimension(c, d)) w.weights[d] = 1.0;
        else w.weights[d] = 0.0;
    }
    return w;
}

OptimizeOptions optimizer_options(const PipelineConfig& c, std::set<std::string>* access) {
    OptimizeOptions o;
    o.restarts = c.restarts;
    o.max_iters = c.max_iters;
    o.seed = c.seed;
    o.access_log = access;
    return o;
}

std::vector<DevItem> dev_items(const std::vector<NBestList>& lists, const References& refs) {
    std::vector<DevItem> out;
    for (const auto& l : lists)
        if (refs.dev.contains(l.utterance_id)) out.push_back({l, refs.tokens.at(l.utterance_id)});
    return out;
}

// Tuned (or loaded) weights of every system, saved under weights/.
std::map<std::string, WeightVector> system_weights(const PipelineConfig& c, const References& refs,
                                                   const std::map<std::string, std::vector<NBestList>>& systems,
                                                   StageResult& res) {
    std::map<std::string, WeightVector> out;
    std::optional<WeightVector> loaded;
    if (c.rescore_weights) {
        loaded = load_weights(*c.rescore_weights);
        res.inputs.push_back(*c.rescore_weights);
    }
    for (const auto& [id, lists] : systems) {
        WeightVector w;
        if (loaded) {
            w = *loaded;
        } else {
            const auto dims = lists.front().dimension_names();
            const auto dev = dev_items(lists, refs);
            if (dev.empty()) throw DataError("no dev utterances for system " + id);
            w = optimize_weights(dev, complete_weights(c, c.init_weights, dims),
                                 optimizer_options(c, &res.tuning_access)).weights;
        }
        save_weights(weights_path(c, id), w);
        res.outputs.push_back(fs::path("weights") / (id + ".json"));
        out.emplace(id, std::move(w));
    }
    return out;
}

std::map<std::string, std::vector<NBestList>> load_rescored(const PipelineConfig& c, StageResult& res) {
    std::map<std::string, std::vector<NBestList>> out;
    for (const auto& s : c.systems) {
        const auto p = rescored_path(c, s.id);
        auto lists = read_stage_input(p, "rescore");
        if (lists.empty()) throw DataError("system " + s.id + " has no n-best lists");
        res.inputs.push_back(p);
        out.emplace(s.id, std::move(lists));
    }
    return out;
}

std::vector<SystemOutput> to_outputs(const std::map<std::string, std::vector<NBestList>>& systems,
                                     const std::vector<std::string>& chosen) {
    std::vector<SystemOutput> out;
    for (const auto& id : chosen) {
        SystemOutput so{id, {}};
        for (const auto& l : systems.at(id)) so.lists.emplace(l.utterance_id, l);
        out.push_back(std::move(so));
    }
    return out;
}

std::string ctm_text(const std::vector<ConfusionNetwork>& cns) {
    std::ostringstream out;
    char buf[64];
    for (const auto& cn : cns) {
        std::vector<std::pair<std::string, double>> words;
        for (const auto& bin : cn.bins) {
            const auto w = consensus(ConfusionNetwork{cn.utterance_id, {bin}});
            if (!w.empty()) words.emplace_back(w.front().surface, bin.at(w.front().surface));
        }
        const auto key = parse_utterance_id(cn.utterance_id);
        const std::string conv = key ? key->conversation_id : cn.utterance_id;
        const std::string chan = key ? key->speaker : "A";
        const double onset = key ? key->onset : 0.0;
        const double span = key ? key->end - key->onset : static_cast<double>(words.size());
        const double dur = words.empty() ? 0.0 : span / static_cast<double>(words.size());
        for (std::size_t k = 0; k < words.size(); ++k) {
            std::snprintf(buf, sizeof buf, "%.2f %.2f", onset + dur * static_cast<double>(k), dur);
            out << conv << ' ' << chan << ' ' << buf << ' ' << words[k].first << ' ';
            std::snprintf(buf, sizeof buf, "%.4f", words[k].second);
            out << buf << '\n';
        }
    }
    return out.str();
}

std::vector<std::string> selection_for(const PipelineConfig& c, const References& refs,
                                       const std::map<std::string, std::vector<NBestList>>& systems,
                                       const std::map<std::string, WeightVector>& weights, StageResult& res) {
    std::vector<std::string> ids;
    std::vector<WeightVector> ws;
    for (const auto& s : c.systems) {
        ids.push_back(s.id);
        ws.push_back(weights.at(s.id));
    }
    TokenMap dev_refs;
    for (const auto& id : refs.dev) dev_refs[id] = refs.tokens.at(id);
    if (dev_refs.empty()) throw DataError("system selection needs dev utterances");
    // Restrict every system to its dev lists so selection never reads test.
    std::map<std::string, std::vector<NBestList>> dev_only;
    for (const auto& [id, lists] : systems)
        for (const auto& l : lists)
            if (refs.dev.contains(l.utterance_id)) {
                dev_only[id].push_back(l);
                res.tuning_access.insert(l.utterance_id);
            }
    const auto report = select_systems(to_outputs(dev_only, ids), dev_refs, ws);
    write_text(c, res, "combine/selection.json", report.to_json());
    return report.chosen;
}

HistoryIndex one_best_history(const std::vector<NBestList>& lists) { return history_from_one_best(lists); }

} // namespace

// ─── Stages ──────────────────────────────────────────────────────────────────

StageResult run_rescore(const PipelineConfig& c) {
    StageResult res;
    const LanguageModels lms = load_lms(c, res, nullptr, nullptr);
    std::optional<HistoryIndex> reference;
    if (std::any_of(c.lstms.begin(), c.lstms.end(), [](const LstmSpec& s) { return s.history == HistorySource::Reference; })) {
        reference = history_from_references(load_references(c).utterances);
        res.inputs.push_back(c.resolve(c.references));
    }
    for (const auto& s : c.systems) {
        const auto in = c.resolve(s.nbest);
        res.inputs.push_back(in);
        const fs::path rel = fs::path("rescore") / (s.id + ".nbest");
        if (lms.ngrams.empty() && lms.lstms.empty()) {
            write_text(c, res, rel, io::read_file(in));
            continue;
        }
        const auto lists = io::read_nbest_file(in);
        std::optional<HistoryIndex> one_best;
        if (!lms.lstms.empty()) one_best = one_best_history(lists);
        std::vector<NBestList> out;
        out.reserve(lists.size());
        for (const auto& l : lists)
            out.push_back(apply_lms(lms, l, one_best ? &*one_best : nullptr, reference ? &*reference : nullptr));
        write_text(c, res, rel, nbest_text(out));
    }
    return res;
}

StageResult run_select(const PipelineConfig& c) {
    StageResult res;
    const References refs = load_references(c);
    res.inputs.push_back(c.resolve(c.references));
    const auto systems = load_rescored(c, res);
    const auto weights = system_weights(c, refs, systems, res);
    selection_for(c, refs, systems, weights, res);
    return res;
}

StageResult run_combine(const PipelineConfig& c) {
    StageResult res;
    const References refs = load_references(c);
    res.inputs.push_back(c.resolve(c.references));
    const auto systems = load_rescored(c, res);
    const auto weights = system_weights(c, refs, systems, res);

    std::vector<std::string> chosen;
    if (c.select_systems) chosen = selection_for(c, refs, systems, weights, res);
    else
        for (const auto& s : c.systems) chosen.push_back(s.id);
    std::vector<WeightVector> ws;
    for (const auto& id : chosen) ws.push_back(weights.at(id));
    const auto outputs = to_outputs(systems, chosen);

    std::set<std::string> utterances;
    for (const auto& l : systems.at(chosen.front())) utterances.insert(l.utterance_id);
    if (fs::exists(cn_dir(c))) fs::remove_all(cn_dir(c));
    io::Transcript consensus_out;
    std::vector<ConfusionNetwork> cns;
    for (const auto& utt : utterances) {
        auto cn = combine_systems(outputs, utt, ws);
        std::ostringstream out;
        io::write_cn(out, cn);
        write_text(c, res, fs::path("combine") / "cn" / (utt + ".cn"), out.str());
        consensus_out[utt] = consensus(cn);
        cns.push_back(std::move(cn));
    }
    write_text(c, res, "combine/consensus.txt", transcript_text(consensus_out));
    write_text(c, res, "combine/consensus.ctm", ctm_text(cns));
    return res;
}

StageResult run_cn_rescore(const PipelineConfig& c) {
    StageResult res;
    const References refs = load_references(c);
    res.inputs.push_back(c.resolve(c.references));
    if (!fs::exists(cn_dir(c))) throw DataError(cn_dir(c).string() + " is missing; run the combine stage first");
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(cn_dir(c)))
        if (e.path().extension() == ".cn") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::vector<ConfusionNetwork> cns;
    for (const auto& f : files) {
        std::ifstream in(f);
        auto parsed = io::read_cn(in);
        if (parsed.size() != 1) throw DataError(f.string() + " must hold exactly one confusion network");
        cns.push_back(std::move(parsed.front()));
        res.inputs.push_back(f);
    }
    if (cns.empty()) throw DataError("no confusion networks in " + cn_dir(c).string());

    const LanguageModels lms = load_lms(c, res, &c.cn_ngrams, &c.cn_lstms);
    std::optional<HistoryIndex> one_best, reference;
    if (lms.any_session(c.cn_lstms)) {
        const auto consensus_tx = io::read_transcript_file(consensus_path(c));
        res.inputs.push_back(consensus_path(c));
        std::vector<NBestList> lists;
        for (const auto& [utt, toks] : consensus_tx) {
            NBestList l{utt, "consensus", {Hypothesis{toks, {}}}};
            lists.push_back(std::move(l));
        }
        one_best = history_from_one_best(lists);
        reference = history_from_references(refs.utterances);
    }

    std::vector<NBestList> lists;
    for (const auto& cn : cns) {
        auto nb = cn_to_nbest(cn, c.cn_nbest);
        nb = apply_lms(lms, nb, one_best ? &*one_best : nullptr, reference ? &*reference : nullptr);
        lists.push_back(add_backchannel_score(nb, c.backchannels));
    }
    write_text(c, res, "cn_rescore/cn.nbest", nbest_text(lists));

    WeightVector w;
    if (c.cn_weights) {
        w = load_weights(*c.cn_weights);
        res.inputs.push_back(*c.cn_weights);
    } else {
        const auto dev = dev_items(lists, refs);
        if (dev.empty()) throw DataError("no dev utterances for CN rescoring");
        auto opts = optimizer_options(c, &res.tuning_access);
        opts.frozen = dims::kCnPosterior;
        w = optimize_weights(dev, complete_weights(c, c.cn_init_weights, lists.front().dimension_names()), opts)
                .weights;
    }
    save_weights(weights_path(c, "cn_rescore"), w);
    res.outputs.push_back("weights/cn_rescore.json");

    io::Transcript final_tx;
    for (const auto& l : lists) final_tx[l.utterance_id] = l.hypotheses.at(best_hypothesis(l, w)).tokens;
    write_text(c, res, "cn_rescore/final.txt", transcript_text(final_tx));
    return res;
}

namespace {

ErrorCounts split_errors(const References& refs, const std::set<std::string>& ids, const TokenMap& hyps) {
    TokenMap r, h;
    for (const auto& id : ids) {
        r[id] = refs.tokens.at(id);
        const auto it = hyps.find(id);
        if (it != hyps.end()) h[id] = it->second;
    }
    if (r.empty()) return {};
    return wer(r, h).total;
}

json counts_json(const ErrorCounts& e) {
    const double rate = e.n_ref > 0 ? static_cast<double>(e.errors()) / static_cast<double>(e.n_ref) : 0.0;
    return {{"wer", rate}, {"errors", e.errors()}, {"sub", e.n_sub}, {"ins", e.n_ins}, {"del", e.n_del},
            {"ref_words", e.n_ref}};
}

} // namespace

StageResult run_score(const PipelineConfig& c) {
    StageResult res;
    const References refs = load_references(c);
    res.inputs.push_back(c.resolve(c.references));
    if (!fs::exists(final_path(c))) throw DataError(final_path(c).string() + " is missing; run cn_rescore first");
    res.inputs.push_back(final_path(c));
    const auto hyps = io::read_transcript_file(final_path(c));
    for (const auto& [id, toks] : hyps)
        if (!refs.tokens.contains(id)) throw DataError("no reference for utterance " + id);
    const ErrorCounts dev = split_errors(refs, refs.dev, hyps);
    const ErrorCounts test = split_errors(refs, refs.test, hyps);
    json j;
    j["dev"] = counts_json(dev);
    j["test"] = counts_json(test);
    write_text(c, res, "score/wer.json", j.dump(2) + "\n");
    std::ostringstream t;
    char buf[128];
    for (const auto& [name, e] : {std::pair<const char*, ErrorCounts>{"dev", dev}, {"test", test}}) {
        std::snprintf(buf, sizeof buf, "%-5s WER %6.2f%%  (%ld errors / %ld words)\n", name,
                      e.n_ref ? 100.0 * static_cast<double>(e.errors()) / static_cast<double>(e.n_ref) : 0.0,
                      e.errors(), e.n_ref);
        t << buf;
    }
    write_text(c, res, "score/wer.txt", t.str());
    return res;
}

// ─── Report ──────────────────────────────────────────────────────────────────

std::string Report::to_json() const {
    nlohmann::ordered_json j = nlohmann::ordered_json::array();
    for (const auto& r : rows)
        j.push_back({{"system", r.system}, {"stage", r.stage}, {"dev", counts_json(r.dev)}, {"test", counts_json(r.test)}});
    return j.dump(2) + "\n";
}

std::string Report::to_table() const {
    std::ostringstream out;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-10s %-14s %9s %9s\n", "system", "stage", "dev WER", "test WER");
    out << buf;
    auto pct = [](const ErrorCounts& e) {
        return e.n_ref ? 100.0 * static_cast<double>(e.errors()) / static_cast<double>(e.n_ref) : 0.0;
    };
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%-10s %-14s %8.2f%% %8.2f%%\n", r.system.c_str(), r.stage.c_str(), pct(r.dev),
                      pct(r.test));
        out << buf;
    }
    return out.str();
}

Report run_report(const PipelineConfig& c) {
    Report report;
    const auto has = [&](const std::string& s) { return std::find(c.stages.begin(), c.stages.end(), s) != c.stages.end(); };
    if (c.stages.empty()) {
        io::write_file(c.output_dir / "report.json", report.to_json());
        io::write_file(c.output_dir / "report.txt", report.to_table());
        return report;
    }
    const References refs = load_references(c);
    auto add_row = [&](const std::string& system, const std::string& stage, const TokenMap& hyps) {
        report.rows.push_back({system, stage, split_errors(refs, refs.dev, hyps), split_errors(refs, refs.test, hyps)});
    };
    auto pick = [](const std::vector<NBestList>& lists, const WeightVector* w) {
        TokenMap out;
        for (const auto& l : lists) out[l.utterance_id] = l.hypotheses.at(w ? best_hypothesis(l, *w) : 0).tokens;
        return out;
    };

    for (const auto& s : c.systems) {
        add_row(s.id, "first_pass", pick(io::read_nbest_file(c.resolve(s.nbest)), nullptr));
        if (!has("rescore") || !fs::exists(rescored_path(c, s.id))) continue;
        const auto lists = io::read_nbest_file(rescored_path(c, s.id));
        const auto dims = lists.front().dimension_names();
        // N-gram-only rescoring: LSTM dimensions held at 0.
        if (!c.ngrams.empty()) {
            WeightVector init = complete_weights(c, c.init_weights, dims);
            OptimizeOptions o = optimizer_options(c, nullptr);
            for (const auto& l : c.lstms)
                if (init.weights.contains(l.name)) init.weights[l.name] = 0.0;
            for (const auto& d : dims)
                if (std::none_of(c.lstms.begin(), c.lstms.end(), [&](const LstmSpec& l) { return l.name == d; }))
                    o.active.push_back(d);
            const auto dev = dev_items(lists, refs);
            if (!dev.empty()) {
                const auto w = optimize_weights(dev, init, o).weights;
                add_row(s.id, "ngram", pick(lists, &w));
            }
        }
        if (fs::exists(weights_path(c, s.id))) {
            const auto w = load_weights(weights_path(c, s.id));
            add_row(s.id, "full_rescore", pick(lists, &w));
        }
    }
    if (has("combine") && fs::exists(consensus_path(c)))
        add_row("combined", "combination", io::read_transcript_file(consensus_path(c)));
    if (has("cn_rescore") && fs::exists(final_path(c)))
        add_row("combined", "cn_rescore", io::read_transcript_file(final_path(c)));

    io::write_file(c.output_dir / "report.json", report.to_json());
    io::write_file(c.output_dir / "report.txt", report.to_table());
    return report;
}

// ─── Manifest and driver ─────────────────────────────────────────────────────

namespace {

// Stable display form of a path: relative to the output directory
// ("$OUT/..."), else relative to the config directory, else absolute.
std::string display_path(const PipelineConfig& c, const fs::path& p) {
    const auto abs = fs::weakly_canonical(fs::absolute(p));
    const auto out = fs::weakly_canonical(fs::absolute(c.output_dir));
    const auto base = fs::weakly_canonical(fs::absolute(c.base_dir));
    auto under = [&](const fs::path& root) {
        const auto rel = abs.lexically_relative(root);
        return !rel.empty() && *rel.begin() != "..";
    };
    if (under(out)) return "$OUT/" + abs.lexically_relative(out).generic_string();
    if (under(base)) return abs.lexically_relative(base).generic_string();
    return abs.generic_string();
}

} // namespace

void record_manifest(const PipelineConfig& c, const std::string& stage, const StageResult& result) {
    const fs::path path = c.output_dir / "manifest.json";
    json m;
    if (fs::exists(path)) {
        try {
            m = json::parse(io::read_file(path));
        } catch (const json::exception&) {
            m = json::object();
        }
    }
    m["tool_version"] = kToolVersion;
    m["seed"] = c.seed;
    json inputs = json::array(), outputs = json::array();
    std::set<std::string> seen;
    for (const auto& p : result.inputs) {
        const auto shown = display_path(c, p);
        if (!seen.insert(shown).second) continue;
        inputs.push_back({{"path", shown}, {"sha256", sha256_file(p)}});
    }
    for (const auto& rel : result.outputs)
        outputs.push_back({{"path", rel.generic_string()}, {"sha256", sha256_file(c.output_dir / rel)}});
    m["stages"][stage] = {{"inputs", std::move(inputs)}, {"outputs", std::move(outputs)}};
    io::write_file(path, m.dump(2) + "\n");
}

std::vector<StageResult> run_pipeline(const PipelineConfig& c) {
    std::vector<StageResult> out;
    for (const auto& stage : c.stages) {
        StageResult r;
        if (stage == "rescore") r = run_rescore(c);
        else if (stage == "combine") r = run_combine(c);
        else if (stage == "cn_rescore") r = run_cn_rescore(c);
        else r = run_score(c);
        record_manifest(c, stage, r);
        out.push_back(std::move(r));
    }
    return out;
}

} // namespace rescomb
