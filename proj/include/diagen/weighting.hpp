#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "diagen/dataset.hpp"

namespace diagen {

/// Multinomial logistic-regression probe over feature vectors.
struct LinearProbe {
    std::vector<double> weights;  // C x D, row-major
    std::vector<double> bias;     // C
    std::vector<std::string> class_order;
    std::size_t dim = 0;
};

struct ProbeHyperparams {
    double l2 = 1e-4;  // on weights only, never the bias
    int max_iters = 5000;
    double tolerance = 1e-6;  // gradient norm
};

struct Temperature {
    double value = 1.0;
};

using ConfidenceScores = std::map<std::string, double>;  // synthetic id -> q

struct SamplingDistribution {
    struct Entry {
        std::string image_id;
        std::string kind;  // "real" or "synthetic"
        double probability = 0.0;

        bool operator==(const Entry&) const = default;
    };
    std::vector<Entry> entries;

    bool operator==(const SamplingDistribution&) const = default;
};

/// Full-batch gradient descent with backtracking line search from zero
/// initialization, run to the gradient tolerance or the iteration cap.
/// Deterministic for fixed inputs.
LinearProbe train_probe(const FeatureTable& features, const std::vector<std::string>& class_order,
                        const ProbeHyperparams& hp = {});

std::vector<double> logits(const LinearProbe& probe, std::span<const double> feature);

/// Deterministic per-class split of a real-feature table for calibration.
/// Returns (train rows, validation rows). Classes with a single example
/// appear in both halves rather than starving either side.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_validation(
    const FeatureTable& features, double fraction, std::uint64_t seed);

/// Minimizes validation NLL(T) over T in [0.05, 20] by golden-section search
/// on log T (absolute tolerance 1e-4 in log T) after a coarse bracketing
/// scan that always includes T = 1, so NLL(T*) <= NLL(1) holds by
/// construction.
Temperature calibrate_temperature(const std::vector<std::vector<double>>& val_logits,
                                  const std::vector<int>& val_labels);

double nll_at_temperature(const std::vector<std::vector<double>>& val_logits,
                          const std::vector<int>& val_labels, double temperature);

/// softmax(z / T)[class_index], computed with max subtraction.
double confidence(const std::vector<double>& z, Temperature t, std::size_t class_index);

/// Scores every synthetic in the manifest: the calibrated softmax probability
/// of its own class label, evaluated on its feature row.
ConfidenceScores score_synthetics(const DatasetManifest& manifest,
                                  const FeatureTable& synthetic_features, const LinearProbe& probe,
                                  Temperature t);

/// The sampling distribution over all manifest images: reals share mass
/// (1 - alpha) uniformly; each real's alpha / N share is divided among its
/// synthetics proportionally to their scores. A real with no synthetics
/// keeps its full 1 / N; a zero score sum splits the share uniformly.
/// Entries list all reals in manifest order, then all synthetics.
SamplingDistribution build_distribution(const DatasetManifest& manifest,
                                        const ConfidenceScores& scores, double alpha);

/// count i.i.d. draws; deterministic in seed.
std::vector<std::string> sample_stream(const SamplingDistribution& dist, std::uint64_t seed,
                                       std::size_t count);

void save_scores(const ConfidenceScores& scores, const std::filesystem::path& path);
ConfidenceScores load_scores(const std::filesystem::path& path);

void save_distribution(const SamplingDistribution& dist, const std::filesystem::path& path);
SamplingDistribution load_distribution(const std::filesystem::path& path);

}  // namespace diagen
