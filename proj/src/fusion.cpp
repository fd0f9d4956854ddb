#include "rescomb/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>

#include "rescomb/error.hpp"
#include "rescomb/io.hpp"

#include <json.hpp>

namespace rescomb {

namespace {
constexpr const char* kScaleKey = "__posterior_scale";
}

double WeightVector::at(const std::string& dim) const {
    const auto it = weights.find(dim);
    if (it == weights.end()) throw ConfigError("no weight for score dimension '" + dim + "'");
    return it->second;
}

double combine_scores(const Hypothesis& hyp, const WeightVector& w) {
    double total = 0.0;
    for (const auto& [dim, value] : hyp.scores) total += w.at(dim) * value;
    return total;
}

std::vector<double> nbest_posteriors(const NBestList& nbest, const WeightVector& w) {
    if (nbest.hypotheses.empty()) throw DataError("empty n-best list for " + nbest.utterance_id);
    std::vector<double> s;
    s.reserve(nbest.hypotheses.size());
    for (const auto& h : nbest.hypotheses) s.push_back(w.posterior_scale * combine_scores(h, w));
    const double mx = *std::max_element(s.begin(), s.end());
    double z = 0.0;
    for (double& v : s) z += (v = std::exp(v - mx));
    for (double& v : s) v /= z;
    return s;
}

std::size_t best_hypothesis(const NBestList& nbest, const WeightVector& w) {
    if (nbest.hypotheses.empty()) throw DataError("empty n-best list for " + nbest.utterance_id);
    std::size_t best = 0;
    double best_score = combine_scores(nbest.hypotheses[0], w);
    for (std::size_t k = 1; k < nbest.hypotheses.size(); ++k) {
        const double s = combine_scores(nbest.hypotheses[k], w);
        if (s > best_score) {
            best = k;
            best_score = s;
        }
    }
    return best;
}

std::string weights_to_json(const WeightVector& w) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [dim, v] : w.weights) j[dim] = v;
    j[kScaleKey] = w.posterior_scale;
    return j.dump(2) + "\n";
}

WeightVector weights_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("weights file is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("weights file must hold a JSON object");
    WeightVector w;
    for (const auto& [key, value] : j.items()) {
        if (!value.is_number()) throw ConfigError("weight '" + key + "' is not a number");
        if (key == kScaleKey) w.posterior_scale = value.get<double>();
        else w.weights[key] = value.get<double>();
    }
    if (!(w.posterior_scale > 0.0)) throw ConfigError("posterior scale must be positive");
    return w;
}

void save_weights(const std::filesystem::path& path, const WeightVector& w) { io::write_file(path, weights_to_json(w)); }

WeightVector load_weights(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw ConfigError("weights file " + path.string() + " does not exist");
    return weights_from_json(io::read_file(path));
}

// ─── Frame-level posteriors ──────────────────────────────────────────────────

void validate_posterior_matrix(const PosteriorMatrix& m) {
    for (Eigen::Index r = 0; r < m.probs.rows(); ++r) {
        const auto row = m.probs.row(r);
        if ((row.array() < 0.0).any() || (row.array() > 1.0).any() || !row.allFinite())
            throw DataError("posterior matrix row " + std::to_string(r) + " has entries outside [0, 1]");
        if (std::abs(row.sum() - 1.0) > kRowTolerance)
            throw DataError("posterior matrix row " + std::to_string(r) + " does not sum to 1");
    }
}

PosteriorMatrix frame_combine(std::span<const PosteriorMatrix> inputs, std::span<const double> weights,
                              FrameCombineMode mode) {
    if (inputs.empty()) throw DataError("frame_combine needs at least one input");
    if (!weights.empty() && weights.size() != inputs.size())
        throw ConfigError("frame_combine: one weight per input required");
    const auto& first = inputs.front();
    double wsum = 0.0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const auto& in = inputs[i];
        if (in.senone_set_id != first.senone_set_id)
            throw DataError("senone sets differ: '" + in.senone_set_id + "' vs '" + first.senone_set_id + "'");
        if (in.probs.rows() != first.probs.rows() || in.probs.cols() != first.probs.cols())
            throw DataError("posterior matrices differ in shape");
        const double w = weights.empty() ? 1.0 : weights[i];
        if (!(w >= 0.0)) throw ConfigError("frame_combine weights must be non-negative");
        wsum += w;
    }
    if (!(wsum > 0.0)) throw ConfigError("frame_combine weights must not all be zero");

    PosteriorMatrix out;
    out.senone_set_id = first.senone_set_id;
    out.probs = RowMatrix::Zero(first.probs.rows(), first.probs.cols());
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const double w = (weights.empty() ? 1.0 : weights[i]) / wsum;
        if (w == 0.0) continue;
        if (mode == FrameCombineMode::Arithmetic) out.probs += w * inputs[i].probs;
        else out.probs += w * inputs[i].probs.array().log().matrix();
    }
    for (Eigen::Index r = 0; r < out.probs.rows(); ++r) {
        auto row = out.probs.row(r);
        if (mode == FrameCombineMode::Geometric) {
            const double mx = row.maxCoeff();
            if (std::isinf(mx)) throw DataError("geometric combination of frame " + std::to_string(r) + " is all zero");
            row = (row.array() - mx).exp().matrix();
        }
        const double z = row.sum();
        if (!(z > 0.0)) throw DataError("combined frame " + std::to_string(r) + " has no mass");
        row /= z;
    }
    return out;
}

void write_posterior_matrix(std::ostream& out, const PosteriorMatrix& m) {
    out << "senones " << m.senone_set_id << ' ' << m.probs.rows() << ' ' << m.probs.cols() << '\n';
    for (Eigen::Index r = 0; r < m.probs.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.probs.cols(); ++c) out << (c ? " " : "") << io::format_double(m.probs(r, c));
        out << '\n';
    }
}

PosteriorMatrix read_posterior_matrix(std::istream& in) {
    std::string tag;
    PosteriorMatrix m;
    long rows = 0, cols = 0;
    if (!(in >> tag >> m.senone_set_id >> rows >> cols) || tag != "senones" || rows < 0 || cols < 1)
        throw ParseError("bad posterior matrix header", 1);
    m.probs.resize(rows, cols);
    for (long r = 0; r < rows; ++r)
        for (long c = 0; c < cols; ++c) {
            std::string v;
            if (!(in >> v)) throw ParseError("posterior matrix is truncated", static_cast<std::size_t>(r) + 2);
            m.probs(r, c) = io::parse_double(v, static_cast<std::size_t>(r) + 2);
        }
    validate_posterior_matrix(m);
    return m;
}

// ─── Weight optimization ─────────────────────────────────────────────────────

namespace {

// Dense view of the dev set: one feature row per hypothesis, dimensions in
// the order of `dims`.
struct DevTable {
    std::vector<std::string> dims;
    std::vector<std::size_t> offset;  // first hypothesis row of each utterance
    Eigen::MatrixXd features;         // hypotheses × dims
    std::vector<ErrorCounts> errors;  // per hypothesis
    long n_ref = 0;

    std::size_t utterances() const { return offset.size() - 1; }
};

DevTable build_table(std::span<const DevItem> dev, const WeightVector& init, const AlignCosts& costs,
                     std::set<std::string>* access_log) {
    if (dev.empty()) throw DataError("weight optimization needs a non-empty dev set");
    DevTable t;
    for (const auto& [dim, w] : init.weights) t.dims.push_back(dim);
    std::optional<std::vector<std::string>> shared;
    std::size_t rows = 0;
    for (const auto& item : dev) {
        if (item.nbest.hypotheses.empty()) throw DataError("empty n-best list for " + item.nbest.utterance_id);
        const auto names = item.nbest.dimension_names();
        if (!shared) shared = names;
        else if (*shared != names)
            throw DataError("n-best list " + item.nbest.utterance_id + " has a different set of score dimensions");
        for (const auto& n : names)
            if (!init.weights.contains(n)) throw ConfigError("no weight for score dimension '" + n + "'");
        rows += item.nbest.hypotheses.size();
    }
    t.features = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(t.dims.size()));
    std::size_t row = 0;
    for (const auto& item : dev) {
        if (access_log) access_log->insert(item.nbest.utterance_id);
        t.offset.push_back(row);
        for (const auto& hyp : item.nbest.hypotheses) {
            for (std::size_t d = 0; d < t.dims.size(); ++d) {
                const auto it = hyp.scores.find(t.dims[d]);
                if (it != hyp.scores.end()) t.features(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(d)) = it->second;
            }
            t.errors.push_back(align(item.reference, hyp.tokens, costs).counts);
            ++row;
        }
        t.n_ref += static_cast<long>(item.reference.size());
    }
    t.offset.push_back(row);
    return t;
}

// Total errors of the argmax hypotheses for per-row scores.
ErrorCounts argmax_errors(const DevTable& t, const Eigen::VectorXd& scores) {
    ErrorCounts total;
    for (std::size_t u = 0; u < t.utterances(); ++u) {
        std::size_t best = t.offset[u];
        for (std::size_t k = t.offset[u] + 1; k < t.offset[u + 1]; ++k)
            if (scores(static_cast<Eigen::Index>(k)) > scores(static_cast<Eigen::Index>(best))) best = k;
        total += t.errors[best];
    }
    return total;
}

struct Key {
    long errors;
    double l1;
    bool operator<(const Key& o) const { return errors != o.errors ? errors < o.errors : l1 < o.l1 - 1e-12; }
};

class CoordinateSearch {
public:
    CoordinateSearch(const DevTable& t, const Eigen::VectorXd& init, std::vector<int> active,
                     const OptimizeOptions& opts)
        : t_(t), init_(init), active_(std::move(active)), opts_(opts) {}

    Key key(const Eigen::VectorXd& w) const {
        return {argmax_errors(t_, t_.features * w).errors(), (w - init_).lpNorm<1>()};
    }

    Eigen::VectorXd run(Eigen::VectorXd w) const {
        double radius = opts_.radius;
        Key current = key(w);
        for (int sweep = 0; sweep < opts_.max_iters && radius > 1e-4; ++sweep) {
            bool improved = false;
            for (const int j : active_) improved |= line_search(w, j, radius, current);
            if (!improved) radius *= 0.5;
        }
        return w;
    }

private:
    // Searches coordinate j; updates w and current on improvement.
    bool line_search(Eigen::VectorXd& w, int j, double radius, Key& current) const {
        const Eigen::VectorXd x = t_.features.col(j);
        const Eigen::VectorXd base = t_.features * w - w(j) * x;
        const double l1_rest = (w - init_).lpNorm<1>() - std::abs(w(j) - init_(j));
        auto eval = [&](double v) {
            return Key{argmax_errors(t_, base + v * x).errors(), l1_rest + std::abs(v - init_(j))};
        };

        const double centre = w(j);
        const double half = radius * std::max(1.0, std::abs(centre));
        const int n = std::max(3, opts_.grid_points);
        const double step = 2.0 * half / (n - 1);
        double best_v = centre;
        Key best = current;
        int best_i = -1;
        for (int i = 0; i < n; ++i) {
            const double v = centre - half + i * step;
            const Key k = eval(v);
            if (k < best) {
                best = k;
                best_v = v;
                best_i = i;
            }
        }
        // Golden-section refinement inside the neighbouring grid cells.
        double lo = (best_i < 0 ? centre : best_v) - step;
        double hi = (best_i < 0 ? centre : best_v) + step;
        const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
        double a = hi - phi * (hi - lo), b = lo + phi * (hi - lo);
        Key ka = eval(a), kb = eval(b);
        for (int s = 0; s < opts_.golden_steps; ++s) {
            if (ka < best) { best = ka; best_v = a; }
            if (kb < best) { best = kb; best_v = b; }
            if (kb < ka) {
                lo = a;
                a = b;
                ka = kb;
                b = lo + phi * (hi - lo);
                kb = eval(b);
            } else {
                hi = b;
                b = a;
                kb = ka;
                a = hi - phi * (hi - lo);
                ka = eval(a);
            }
        }
        if (ka < best) { best = ka; best_v = a; }
        if (kb < best) { best = kb; best_v = b; }
        if (!(best < current)) return false;
        w(j) = best_v;
        current = best;
        return true;
    }

    const DevTable& t_;
    const Eigen::VectorXd& init_;
    std::vector<int> active_;
    const OptimizeOptions& opts_;
};

std::string pick_frozen(const WeightVector& init, const OptimizeOptions& opts) {
    if (opts.frozen) {
        if (!init.weights.contains(*opts.frozen))
            throw ConfigError("frozen dimension '" + *opts.frozen + "' has no initial weight");
        return *opts.frozen;
    }
    for (const char* d : {dims::kAcoustic, dims::kCnPosterior})
        if (init.weights.contains(d)) return d;
    return init.weights.begin()->first;
}

} // namespace

ErrorCounts one_best_errors(std::span<const DevItem> dev, const WeightVector& w, const AlignCosts& costs) {
    ErrorCounts total;
    for (const auto& item : dev) {
        const auto& hyp = item.nbest.hypotheses.at(best_hypothesis(item.nbest, w));
        total += align(item.reference, hyp.tokens, costs).counts;
    }
    return total;
}

OptimizeResult optimize_weights(std::span<const DevItem> dev, const WeightVector& init_weights,
                                const OptimizeOptions& opts) {
    if (init_weights.weights.empty()) throw ConfigError("weight optimization needs initial weights");
    if (opts.restarts < 0 || opts.max_iters < 0 || !(opts.radius > 0.0))
        throw ConfigError("invalid optimizer options");
    const DevTable t = build_table(dev, init_weights, opts.costs, opts.access_log);
    if (t.n_ref == 0) throw DataError("dev references are empty");

    // Rescale so the frozen dimension sits at 1; argmax and posteriors are
    // unchanged by this.
    WeightVector init = init_weights;
    const std::string frozen = pick_frozen(init, opts);
    const double wf = init.weights[frozen];
    if (wf > 0.0) {
        for (auto& [d, v] : init.weights) v /= wf;
        init.posterior_scale *= wf;
    }
    init.weights[frozen] = 1.0;

    const auto dim_index = [&](const std::string& d) {
        const auto it = std::find(t.dims.begin(), t.dims.end(), d);
        if (it == t.dims.end()) throw ConfigError("unknown dimension '" + d + "' in optimizer options");
        return static_cast<int>(it - t.dims.begin());
    };
    std::vector<int> active;
    if (opts.active.empty()) {
        for (std::size_t d = 0; d < t.dims.size(); ++d)
            if (t.dims[d] != frozen) active.push_back(static_cast<int>(d));
    } else {
        for (const auto& d : opts.active)
            if (d != frozen) active.push_back(dim_index(d));
        std::sort(active.begin(), active.end());
        active.erase(std::unique(active.begin(), active.end()), active.end());
    }

    Eigen::VectorXd w0(static_cast<Eigen::Index>(t.dims.size()));
    for (std::size_t d = 0; d < t.dims.size(); ++d) w0(static_cast<Eigen::Index>(d)) = init.weights.at(t.dims[d]);

    const CoordinateSearch search(t, w0, active, opts);
    std::mt19937_64 rng(opts.seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    Eigen::VectorXd best_w = search.run(w0);
    Key best_key = search.key(best_w);
    for (int r = 0; r < opts.restarts; ++r) {
        Eigen::VectorXd start = w0;
        for (const int j : active) start(j) += opts.perturb * std::max(1.0, std::abs(w0(j))) * noise(rng);
        const Eigen::VectorXd w = search.run(start);
        const Key k = search.key(w);
        if (k < best_key) {
            best_key = k;
            best_w = w;
        }
    }

    OptimizeResult res;
    res.weights = init;
    for (std::size_t d = 0; d < t.dims.size(); ++d) res.weights.weights[t.dims[d]] = best_w(static_cast<Eigen::Index>(d));
    res.counts = argmax_errors(t, t.features * best_w);
    res.counts.n_ref = t.n_ref;
    res.init_counts = argmax_errors(t, t.features * w0);
    res.init_counts.n_ref = t.n_ref;
    res.wer = static_cast<double>(res.counts.errors()) / static_cast<double>(t.n_ref);
    return res;
}

} // namespace rescomb
