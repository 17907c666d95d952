#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "diagen/dataset.hpp"

namespace diagen {

/// Union-of-spheres manifold: one closed sphere per point, radius the
/// distance to its k-th nearest neighbor (self excluded). Membership tests
/// compare squared distances against radii_sq so the parallel and serial
/// paths agree bit for bit; radii holds the square roots for reporting.
struct ManifoldModel {
    std::vector<double> points;  // P x D, row-major
    std::size_t dim = 0;
    std::vector<double> radii;
    std::vector<double> radii_sq;
    int k = 0;
};

struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    bool available = false;

    bool operator==(const ClassMetrics&) const = default;
};

struct MetricsReport {
    int k = 0;
    std::size_t n_real = 0;
    std::size_t n_syn = 0;
    double precision = 0.0;
    double recall = 0.0;
    // Present in per-class mode: label -> metrics, plus the unweighted mean
    // over the classes with enough points on both sides.
    std::optional<std::map<std::string, ClassMetrics>> per_class;
    std::optional<ClassMetrics> per_class_mean;
};

ManifoldModel build_manifold(const std::vector<double>& points, std::size_t dim, int k);
bool in_manifold(std::span<const double> point, const ManifoldModel& model);

/// Fraction of synthetic points inside the real manifold (exact rational).
double precision_metric(const std::vector<double>& real_points,
                        const std::vector<double>& syn_points, std::size_t dim, int k);

/// Fraction of real points inside the synthetic manifold.
double recall_metric(const std::vector<double>& real_points, const std::vector<double>& syn_points,
                     std::size_t dim, int k);

MetricsReport evaluate_pair(const FeatureTable& real_table, const FeatureTable& syn_table, int k,
                            bool per_class);

std::string report_to_json(const MetricsReport& report);
void save_report(const MetricsReport& report, const std::filesystem::path& path);

/// Formats a fraction the way the CLI prints it: percent with 2 decimals.
std::string format_percent(double fraction);

namespace serial {

/// Plain single-threaded reference implementations with full sorts and
/// straight loops. They are the correctness baseline the parallel kernels
/// must match exactly, and the benchmark's comparison point.
ManifoldModel build_manifold(const std::vector<double>& points, std::size_t dim, int k);
bool in_manifold(std::span<const double> point, const ManifoldModel& model);
double precision_metric(const std::vector<double>& real_points,
                        const std::vector<double>& syn_points, std::size_t dim, int k);
double recall_metric(const std::vector<double>& real_points, const std::vector<double>& syn_points,
                     std::size_t dim, int k);

}  // namespace serial

}  // namespace diagen
