#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace diagen {

/// One real training image. The actual pixels live behind image_ref and are
/// never decoded here; feature_row optionally points into a FeatureTable.
struct RealImageRecord {
    std::string id;
    std::string class_label;
    std::string image_ref;
    std::optional<std::size_t> feature_row;

    bool operator==(const RealImageRecord&) const = default;
};

/// One generated image plus everything needed to regenerate it: the guiding
/// real image, the prompt, the embedding-noise draw, and the generation seed.
struct SyntheticImageRecord {
    std::string id;
    std::string parent_real_id;
    std::string class_label;
    std::string prompt_id;
    double noise_variance = 0.0;
    std::int64_t noise_seed = 0;
    std::int64_t generation_seed = 0;
    std::optional<double> confidence;

    bool operator==(const SyntheticImageRecord&) const = default;
};

struct DatasetManifest {
    std::vector<std::string> classes;
    std::vector<RealImageRecord> reals;
    std::vector<SyntheticImageRecord> synthetics;
    std::string config_fingerprint;

    bool operator==(const DatasetManifest&) const = default;
};

/// Dense row-major feature matrix keyed by image id. Immutable after load.
class FeatureTable {
public:
    FeatureTable() = default;
    FeatureTable(std::vector<std::string> ids, std::vector<std::string> labels,
                 std::vector<double> matrix, std::size_t dim);

    std::size_t size() const { return ids_.size(); }
    std::size_t dim() const { return dim_; }
    const std::vector<std::string>& ids() const { return ids_; }
    const std::vector<std::string>& labels() const { return labels_; }
    const std::vector<double>& matrix() const { return matrix_; }

    std::span<const double> row(std::size_t i) const {
        return std::span<const double>(matrix_.data() + i * dim_, dim_);
    }
    std::optional<std::size_t> index_of(const std::string& id) const;

    FeatureTable subset(const std::vector<std::size_t>& rows) const;

private:
    std::vector<std::string> ids_;
    std::vector<std::string> labels_;
    std::vector<double> matrix_;  // size() * dim()
    std::size_t dim_ = 0;
    std::map<std::string, std::size_t> index_;
};

/// Pipeline hyperparameters. Defaults are the shipped operating point.
struct PipelineConfig {
    int examples_per_class = 8;
    int synthetics_per_real = 10;
    int prompts_per_class = 10;
    std::vector<double> noise_variances{0.005, 0.01, 0.025};
    double strength = 0.7;
    double guidance_scale = 15.0;
    double synthetic_probability = 0.7;
    int knn_k = 5;
    std::int64_t master_seed = 0;
    // Optional per-class variance schedules; classes not listed use
    // noise_variances.
    std::map<std::string, std::vector<double>> per_class_noise_variances;

    bool operator==(const PipelineConfig&) const = default;
};

// Throws InputError when a field is out of range.
void check_pipeline_config(const PipelineConfig& config);

// Stable hash of the canonical serialization; changes iff a field changes.
std::string config_fingerprint(const PipelineConfig& config);

struct Violation {
    std::string record_id;
    std::string rule;
    std::string detail;
};

// Empty result means every record invariant holds. Violations are values;
// nothing throws here.
std::vector<Violation> validate_manifest(const DatasetManifest& manifest);

// Rejects invalid manifests before touching the filesystem.
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest load_manifest(const std::filesystem::path& path);

std::string manifest_to_json(const DatasetManifest& manifest);
DatasetManifest manifest_from_json(const std::string& text);

FeatureTable load_feature_table(const std::filesystem::path& path);
void save_feature_table(const FeatureTable& table, const std::filesystem::path& path);

}  // namespace diagen
