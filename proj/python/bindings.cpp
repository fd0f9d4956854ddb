#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "rescomb/concom.hpp"
#include "rescomb/error.hpp"
#include "rescomb/eval.hpp"
#include "rescomb/fusion.hpp"
#include "rescomb/io.hpp"
#include "rescomb/lstm.hpp"
#include "rescomb/ngram.hpp"
#include "rescomb/pipeline.hpp"
#include "rescomb/toy.hpp"

namespace py = pybind11;
using namespace rescomb;

namespace {

using Words = std::vector<std::string>;
using Scores = std::map<std::string, double>;

Tokens to_tokens(const Words& words) { return tokens_from_words(words); }

py::dict counts_dict(const ErrorCounts& c) {
    py::dict d;
    d["sub"] = c.n_sub;
    d["ins"] = c.n_ins;
    d["del"] = c.n_del;
    d["ref"] = c.n_ref;
    d["errors"] = c.errors();
    return d;
}

WeightVector to_weights(const Scores& w, double posterior_scale) {
    WeightVector out;
    out.weights = w;
    out.posterior_scale = posterior_scale;
    return out;
}

NBestList to_nbest(const std::vector<std::pair<Words, Scores>>& hyps, const std::string& utt) {
    NBestList l;
    l.utterance_id = utt;
    l.system_id = "py";
    for (const auto& [words, scores] : hyps) l.hypotheses.push_back({to_tokens(words), scores});
    return l;
}

ConfusionNetwork to_cn(const std::vector<Bin>& bins) { return {"py", bins}; }

} // namespace

PYBIND11_MODULE(_rescomb, m) {
    m.doc() = "N-best rescoring, confusion-network combination and the toy pipeline.";
    m.attr("__version__") = kToolVersion;

    // Translators registered later are tried first, so subclasses follow the base.
    const auto& error = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<ConfigError>(m, "ConfigError", error.ptr());
    py::register_exception<DataError>(m, "DataError", error.ptr());

    m.def("normalize", [](const std::string& text) { return surfaces(normalize_text(text)); }, py::arg("text"),
          "Normalized word list of raw text.");

    m.def(
        "align",
        [](const Words& ref, const Words& hyp, bool unit_costs, bool fragment_forgiving) {
            AlignCosts costs = unit_costs ? AlignCosts::unit() : AlignCosts{};
            costs.fragment_forgiving = fragment_forgiving;
            const auto a = align(to_tokens(ref), to_tokens(hyp), costs);
            static const char* names[] = {"match", "sub", "ins", "del"};
            py::list ops;
            for (const auto& p : a.ops)
                ops.append(py::make_tuple(names[static_cast<int>(p.op)], p.ref ? py::cast(*p.ref) : py::none(),
                                          p.hyp ? py::cast(*p.hyp) : py::none()));
            py::dict d = counts_dict(a.counts);
            d["cost"] = a.cost;
            d["ops"] = ops;
            return d;
        },
        py::arg("ref"), py::arg("hyp"), py::arg("unit_costs") = false, py::arg("fragment_forgiving") = false);

    m.def(
        "wer",
        [](const std::map<std::string, Words>& refs, const std::map<std::string, Words>& hyps) {
            TokenMap r, h;
            for (const auto& [k, v] : refs) r[k] = to_tokens(v);
            for (const auto& [k, v] : hyps) h[k] = to_tokens(v);
            const auto rep = wer(r, h);
            py::dict d = counts_dict(rep.total);
            d["wer"] = rep.wer;
            return d;
        },
        py::arg("refs"), py::arg("hyps"), "Pooled WER; utterances missing from hyps count as deleted.");

    m.def("perplexity", [](const std::vector<double>& lps) { return perplexity(lps); }, py::arg("log_probs"));

    py::class_<NGramModel>(m, "NGramModel")
        .def_static(
            "train",
            [](const std::vector<Words>& sentences, int order, const std::string& smoothing) {
                NGramConfig cfg;
                if (smoothing == "ml") cfg.smoothing = Smoothing::MaximumLikelihood;
                else if (smoothing != "kn") throw ConfigError("smoothing must be 'kn' or 'ml'");
                std::vector<Tokens> corpus;
                for (const auto& s : sentences) corpus.push_back(to_tokens(s));
                return train_ngram(corpus, order, cfg);
            },
            py::arg("sentences"), py::arg("order") = 3, py::arg("smoothing") = "kn")
        .def_static("load", &read_arpa_file, py::arg("path"))
        .def("save", [](const NGramModel& self, const std::filesystem::path& p) { write_arpa_file(p, self); },
             py::arg("path"))
        .def_property_readonly("order", &NGramModel::order)
        .def("logprob", [](const NGramModel& self, const Words& context, const std::string& word) {
            return ngram_logprob(self, context, word);
        }, py::arg("context"), py::arg("word"))
        .def("sentence_logprob", [](const NGramModel& self, const Words& words) {
            return ngram_sentence_logprob(self, to_tokens(words));
        }, py::arg("words"));

    py::class_<LstmModel>(m, "LstmModel")
        .def_static(
            "train",
            [](const std::vector<Words>& sentences, const std::string& encoding, const std::string& direction,
               int layers, int hidden, int embed, int epochs, double learning_rate, std::uint64_t seed) {
                LstmConfig cfg;
                cfg.encoding = encoding_from_string(encoding);
                cfg.direction = direction_from_string(direction);
                cfg.num_layers = layers;
                cfg.hidden_dim = hidden;
                cfg.embed_dim = embed;
                TrainHyper hyper;
                hyper.epochs = epochs;
                hyper.learning_rate = learning_rate;
                hyper.seed = seed;
                std::vector<Tokens> corpus;
                for (const auto& s : sentences) corpus.push_back(to_tokens(s));
                py::gil_scoped_release release;
                return train_lstm(corpus, cfg, hyper);
            },
            py::arg("sentences"), py::arg("encoding") = "word", py::arg("direction") = "forward", py::arg("layers") = 1,
            py::arg("hidden") = 32, py::arg("embed") = 32, py::arg("epochs") = 5, py::arg("learning_rate") = 0.01,
            py::arg("seed") = 1)
        .def_static("load", &load_lstm, py::arg("path"))
        .def("save", [](const LstmModel& self, const std::filesystem::path& p) { save_lstm(p, self); }, py::arg("path"))
        .def("score", [](const LstmModel& self, const Words& words) { return lstm_score(self, to_tokens(words)); },
             py::arg("words"), "Per-word log probabilities plus the end symbol; OOV words score 0.");

    m.def("stabilizer_scale", &stabilizer_scale, py::arg("beta"));

    m.def(
        "nbest_posteriors",
        [](const std::vector<std::pair<Words, Scores>>& hyps, const Scores& weights, double posterior_scale) {
            return nbest_posteriors(to_nbest(hyps, "py"), to_weights(weights, posterior_scale));
        },
        py::arg("hyps"), py::arg("weights"), py::arg("posterior_scale") = 0.05);

    m.def(
        "optimize_weights",
        [](const std::vector<std::pair<std::vector<std::pair<Words, Scores>>, Words>>& dev, const Scores& init,
           std::optional<std::string> frozen, int restarts, int max_iters, std::uint64_t seed) {
            std::vector<DevItem> items;
            for (std::size_t i = 0; i < dev.size(); ++i)
                items.push_back({to_nbest(dev[i].first, "u" + std::to_string(i)), to_tokens(dev[i].second)});
            OptimizeOptions o;
            o.frozen = std::move(frozen);
            o.restarts = restarts;
            o.max_iters = max_iters;
            o.seed = seed;
            const auto r = optimize_weights(items, to_weights(init, 1.0), o);
            return py::make_tuple(r.weights.weights, r.counts.errors(), r.init_counts.errors());
        },
        py::arg("dev"), py::arg("init"), py::arg("frozen") = py::none(), py::arg("restarts") = 4,
        py::arg("max_iters") = 20, py::arg("seed") = 1,
        "Tunes weights on [(hypotheses, reference)] items. Returns (weights, errors, initial errors).");

    m.def(
        "frame_combine",
        [](const std::vector<RowMatrix>& inputs, const std::vector<double>& weights, bool geometric) {
            std::vector<PosteriorMatrix> mats;
            for (const auto& x : inputs) mats.push_back({"py", x});
            return frame_combine(mats, weights, geometric ? FrameCombineMode::Geometric : FrameCombineMode::Arithmetic)
                .probs;
        },
        py::arg("inputs"), py::arg("weights") = std::vector<double>{}, py::arg("geometric") = false);

    m.def(
        "build_cn",
        [](const std::vector<std::pair<Words, double>>& hyps) {
            std::vector<WeightedHypothesis> w;
            for (std::size_t k = 0; k < hyps.size(); ++k) w.push_back({to_tokens(hyps[k].first), hyps[k].second, "py", k});
            return build_cn(w).bins;
        },
        py::arg("hyps"), "Confusion network bins from (words, posterior) pairs.");
    m.def("consensus", [](const std::vector<Bin>& bins) { return surfaces(consensus(to_cn(bins))); }, py::arg("bins"));
    m.def(
        "cn_to_nbest",
        [](const std::vector<Bin>& bins, int n) {
            std::vector<std::pair<Words, double>> out;
            for (const auto& h : cn_to_nbest(to_cn(bins), n).hypotheses)
                out.emplace_back(surfaces(h.tokens), h.scores.at(dims::kCnPosterior));
            return out;
        },
        py::arg("bins"), py::arg("n"));

    m.def(
        "make_toy",
        [](const std::filesystem::path& dir, std::uint64_t seed, bool models, int lstm_epochs) {
            py::gil_scoped_release release;
            toy::ToyOptions o;
            o.seed = seed;
            const auto data = toy::make_toy(o);
            toy::write_toy(data, dir);
            if (models) toy::write_toy_models(toy::train_toy_models(data, seed, lstm_epochs), dir);
        },
        py::arg("dir"), py::arg("seed") = 1, py::arg("models") = true, py::arg("lstm_epochs") = 5,
        "Writes the synthetic fixture, its LMs and config.json into dir.");

    m.def(
        "run_pipeline",
        [](const std::filesystem::path& config_path) {
            const auto config = load_pipeline_config(config_path);
            Report report;
            {
                py::gil_scoped_release release;
                run_pipeline(config);
                report = run_report(config);
            }
            py::list rows;
            for (const auto& r : report.rows) {
                py::dict d;
                d["system"] = r.system;
                d["stage"] = r.stage;
                d["dev"] = counts_dict(r.dev);
                d["test"] = counts_dict(r.test);
                rows.append(d);
            }
            return rows;
        },
        py::arg("config"), "Runs every configured stage and returns the report rows.");
}
