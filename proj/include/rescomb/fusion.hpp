#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rescomb/core.hpp"
#include "rescomb/eval.hpp"

namespace rescomb {

struct WeightVector {
    std::map<std::string, double> weights;
    double posterior_scale = 0.05;

    double at(const std::string& dim) const;
};

// Σ_d w_d · score_d. ConfigError when a hypothesis dimension has no weight.
double combine_scores(const Hypothesis& hyp, const WeightVector& w);

// Softmax of posterior_scale · combined score. DataError on an empty list.
std::vector<double> nbest_posteriors(const NBestList& nbest, const WeightVector& w);

// Rank of the highest combined score (lowest rank on ties).
std::size_t best_hypothesis(const NBestList& nbest, const WeightVector& w);

std::string weights_to_json(const WeightVector& w);
WeightVector weights_from_json(const std::string& text);
void save_weights(const std::filesystem::path& path, const WeightVector& w);
WeightVector load_weights(const std::filesystem::path& path);

// ─── Frame-level posteriors ──────────────────────────────────────────────────

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct PosteriorMatrix {
    std::string senone_set_id;
    RowMatrix probs;  // frames × senones
};

inline constexpr double kRowTolerance = 1e-6;

// DataError unless every entry is in [0, 1] and every row sums to 1.
void validate_posterior_matrix(const PosteriorMatrix& m);

enum class FrameCombineMode { Arithmetic, Geometric };

// Row-wise weighted mean of the inputs, renormalized per row. Empty weights
// mean equal weights. All inputs must share senone set and shape.
PosteriorMatrix frame_combine(std::span<const PosteriorMatrix> inputs, std::span<const double> weights = {},
                              FrameCombineMode mode = FrameCombineMode::Arithmetic);

// Text form: "senones <id> <frames> <senones>" then one row per line.
void write_posterior_matrix(std::ostream& out, const PosteriorMatrix& m);
PosteriorMatrix read_posterior_matrix(std::istream& in);

// ─── Weight optimization ─────────────────────────────────────────────────────

struct DevItem {
    NBestList nbest;
    Tokens reference;
};

struct OptimizeOptions {
    int restarts = 4;  // extra random starts besides init
    std::uint64_t seed = 1;
    int max_iters = 20;  // coordinate sweeps per start
    int grid_points = 41;
    int golden_steps = 24;
    double radius = 2.0;   // initial search half-width, relative to max(1, |w|)
    double perturb = 0.5;  // restart noise, relative to max(1, |w|)
    // Dimension held at weight 1; defaults to "am", then "cn_posterior",
    // then the first dimension.
    std::optional<std::string> frozen;
    // Dimensions to search; empty means every dimension except the frozen one.
    std::vector<std::string> active;
    AlignCosts costs{};
    // Receives the id of every utterance the optimizer reads.
    std::set<std::string>* access_log = nullptr;
};

struct OptimizeResult {
    WeightVector weights;
    ErrorCounts counts;  // dev 1-best errors at the returned weights
    double wer = 0.0;
    ErrorCounts init_counts;
};

// Coordinate search over the dimensions minimizing corpus 1-best WER: a grid
// per dimension followed by golden-section refinement around the best grid
// point. Candidates are accepted on fewer errors, or equal errors with a
// smaller L1 distance from init.
OptimizeResult optimize_weights(std::span<const DevItem> dev, const WeightVector& init,
                                const OptimizeOptions& options = {});

// Corpus 1-best errors of the given weights (no search).
ErrorCounts one_best_errors(std::span<const DevItem> dev, const WeightVector& w, const AlignCosts& costs = {});

} // namespace rescomb
