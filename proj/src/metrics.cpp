#include "diagen/metrics.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "diagen/errors.hpp"
#include "diagen/io_util.hpp"

namespace diagen {

namespace {

void check_matrix(const std::vector<double>& points, std::size_t dim, int k, const char* who) {
    if (dim == 0) throw InputError(std::string(who) + ": dimension must be >= 1");
    if (points.size() % dim != 0) throw InputError(std::string(who) + ": ragged matrix");
    const std::size_t p = points.size() / dim;
    if (k <= 0) throw InputError(std::string(who) + ": k must be positive");
    if (p <= static_cast<std::size_t>(k))
        throw InputError(std::string(who) + ": need more than k=" + std::to_string(k) +
                         " points, got " + std::to_string(p));
    for (double v : points)
        if (!std::isfinite(v)) throw InputError(std::string(who) + ": non-finite coordinate");
}

inline double sq_dist(const double* a, const double* b, std::size_t dim) {
    double acc = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
        const double diff = a[d] - b[d];
        acc += diff * diff;
    }
    return acc;
}

}  // namespace

ManifoldModel build_manifold(const std::vector<double>& points, std::size_t dim, int k) {
    check_matrix(points, dim, k, "manifold");
    const std::size_t p = points.size() / dim;

    ManifoldModel model;
    model.points = points;
    model.dim = dim;
    model.k = k;
    model.radii.resize(p);
    model.radii_sq.resize(p);

#pragma omp parallel
    {
        std::vector<double> dists(p - 1);
#pragma omp for schedule(static)
        for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(p); ++i) {
            const double* self = points.data() + static_cast<std::size_t>(i) * dim;
            std::size_t n = 0;
            for (std::size_t j = 0; j < p; ++j) {
                if (j == static_cast<std::size_t>(i)) continue;
                dists[n++] = sq_dist(self, points.data() + j * dim, dim);
            }
            std::nth_element(dists.begin(), dists.begin() + (k - 1), dists.end());
            const double r_sq = dists[static_cast<std::size_t>(k - 1)];
            model.radii_sq[static_cast<std::size_t>(i)] = r_sq;
            model.radii[static_cast<std::size_t>(i)] = std::sqrt(r_sq);
        }
    }
    return model;
}

bool in_manifold(std::span<const double> point, const ManifoldModel& model) {
    if (point.size() != model.dim)
        throw InputError("manifold: query dimension " + std::to_string(point.size()) +
                         ", model is " + std::to_string(model.dim));
    const std::size_t p = model.radii_sq.size();
    for (std::size_t i = 0; i < p; ++i) {
        if (sq_dist(point.data(), model.points.data() + i * model.dim, model.dim) <=
            model.radii_sq[i])
            return true;
    }
    return false;
}

namespace {

double member_fraction(const ManifoldModel& model, const std::vector<double>& queries,
                       std::size_t dim) {
    const std::size_t q = queries.size() / dim;
    long long hits = 0;
#pragma omp parallel for schedule(static) reduction(+ : hits)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(q); ++i) {
        const std::span<const double> row(queries.data() + static_cast<std::size_t>(i) * dim, dim);
        hits += in_manifold(row, model) ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(q);
}

}  // namespace

namespace {

void check_queries(const std::vector<double>& queries, std::size_t dim, const char* who) {
    if (queries.empty() || queries.size() % dim != 0)
        throw InputError(std::string(who) + ": query matrix is empty or ragged");
    for (double v : queries)
        if (!std::isfinite(v)) throw InputError(std::string(who) + ": non-finite coordinate");
}

}  // namespace

double precision_metric(const std::vector<double>& real_points,
                        const std::vector<double>& syn_points, std::size_t dim, int k) {
    const ManifoldModel model = build_manifold(real_points, dim, k);
    check_queries(syn_points, dim, "precision");
    return member_fraction(model, syn_points, dim);
}

double recall_metric(const std::vector<double>& real_points, const std::vector<double>& syn_points,
                     std::size_t dim, int k) {
    const ManifoldModel model = build_manifold(syn_points, dim, k);
    check_queries(real_points, dim, "recall");
    return member_fraction(model, real_points, dim);
}

namespace {

std::vector<double> rows_for_label(const FeatureTable& table, const std::string& label) {
    std::vector<double> out;
    for (std::size_t i = 0; i < table.size(); ++i)
        if (table.labels()[i] == label) {
            const auto row = table.row(i);
            out.insert(out.end(), row.begin(), row.end());
        }
    return out;
}

}  // namespace

MetricsReport evaluate_pair(const FeatureTable& real_table, const FeatureTable& syn_table, int k,
                            bool per_class) {
    if (real_table.size() == 0 || syn_table.size() == 0)
        throw InputError("evaluate: both tables must be nonempty");
    if (real_table.dim() != syn_table.dim())
        throw InputError("evaluate: feature dimensions differ");

    MetricsReport report;
    report.k = k;
    report.n_real = real_table.size();
    report.n_syn = syn_table.size();
    report.precision = precision_metric(real_table.matrix(), syn_table.matrix(), real_table.dim(), k);
    report.recall = recall_metric(real_table.matrix(), syn_table.matrix(), real_table.dim(), k);

    if (!per_class) return report;

    std::map<std::string, ClassMetrics> classes;
    for (const auto& label : real_table.labels()) classes.emplace(label, ClassMetrics{});
    for (const auto& label : syn_table.labels()) classes.emplace(label, ClassMetrics{});

    double mean_p = 0.0, mean_r = 0.0;
    std::size_t available = 0;
    for (auto& [label, metrics] : classes) {
        const std::vector<double> real_rows = rows_for_label(real_table, label);
        const std::vector<double> syn_rows = rows_for_label(syn_table, label);
        const std::size_t need = static_cast<std::size_t>(k + 1) * real_table.dim();
        if (real_rows.size() < need || syn_rows.size() < need) continue;  // stays unavailable
        metrics.precision = precision_metric(real_rows, syn_rows, real_table.dim(), k);
        metrics.recall = recall_metric(real_rows, syn_rows, real_table.dim(), k);
        metrics.available = true;
        mean_p += metrics.precision;
        mean_r += metrics.recall;
        ++available;
    }
    report.per_class = std::move(classes);
    if (available > 0) {
        ClassMetrics mean;
        mean.precision = mean_p / static_cast<double>(available);
        mean.recall = mean_r / static_cast<double>(available);
        mean.available = true;
        report.per_class_mean = mean;
    }
    return report;
}

std::string report_to_json(const MetricsReport& report) {
    nlohmann::json j;
    j["k"] = report.k;
    j["n_real"] = report.n_real;
    j["n_syn"] = report.n_syn;
    j["precision"] = report.precision;
    j["recall"] = report.recall;
    if (report.per_class) {
        nlohmann::json pc = nlohmann::json::object();
        for (const auto& [label, m] : *report.per_class) {
            nlohmann::json entry{{"available", m.available}};
            if (m.available) {
                entry["precision"] = m.precision;
                entry["recall"] = m.recall;
            }
            pc[label] = std::move(entry);
        }
        j["per_class"] = std::move(pc);
        if (report.per_class_mean)
            j["per_class_mean"] = {{"precision", report.per_class_mean->precision},
                                   {"recall", report.per_class_mean->recall}};
    }
    return j.dump(2) + "\n";
}

void save_report(const MetricsReport& report, const std::filesystem::path& path) {
    atomic_write_file(path, report_to_json(report));
}

std::string format_percent(double fraction) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", fraction * 100.0);
    return buf;
}

namespace serial {

ManifoldModel build_manifold(const std::vector<double>& points, std::size_t dim, int k) {
    check_matrix(points, dim, k, "manifold");
    const std::size_t p = points.size() / dim;

    ManifoldModel model;
    model.points = points;
    model.dim = dim;
    model.k = k;
    model.radii.resize(p);
    model.radii_sq.resize(p);

    std::vector<double> dists;
    for (std::size_t i = 0; i < p; ++i) {
        dists.clear();
        for (std::size_t j = 0; j < p; ++j) {
            if (j == i) continue;
            double acc = 0.0;
            for (std::size_t d = 0; d < dim; ++d) {
                const double diff = points[i * dim + d] - points[j * dim + d];
                acc += diff * diff;
            }
            dists.push_back(acc);
        }
        std::sort(dists.begin(), dists.end());
        model.radii_sq[i] = dists[static_cast<std::size_t>(k - 1)];
        model.radii[i] = std::sqrt(model.radii_sq[i]);
    }
    return model;
}

bool in_manifold(std::span<const double> point, const ManifoldModel& model) {
    if (point.size() != model.dim)
        throw InputError("manifold: query dimension " + std::to_string(point.size()) +
                         ", model is " + std::to_string(model.dim));
    for (std::size_t i = 0; i < model.radii_sq.size(); ++i) {
        double acc = 0.0;
        for (std::size_t d = 0; d < model.dim; ++d) {
            const double diff = point[d] - model.points[i * model.dim + d];
            acc += diff * diff;
        }
        if (acc <= model.radii_sq[i]) return true;
    }
    return false;
}

namespace {

double member_fraction(const ManifoldModel& model, const std::vector<double>& queries,
                       std::size_t dim) {
    const std::size_t q = queries.size() / dim;
    long long hits = 0;
    for (std::size_t i = 0; i < q; ++i) {
        const std::span<const double> row(queries.data() + i * dim, dim);
        if (in_manifold(row, model)) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(q);
}

}  // namespace

double precision_metric(const std::vector<double>& real_points,
                        const std::vector<double>& syn_points, std::size_t dim, int k) {
    const ManifoldModel model = build_manifold(real_points, dim, k);
    if (syn_points.empty() || syn_points.size() % dim != 0)
        throw InputError("precision: synthetic matrix is empty or ragged");
    return member_fraction(model, syn_points, dim);
}

double recall_metric(const std::vector<double>& real_points, const std::vector<double>& syn_points,
                     std::size_t dim, int k) {
    const ManifoldModel model = build_manifold(syn_points, dim, k);
    if (real_points.empty() || real_points.size() % dim != 0)
        throw InputError("recall: real matrix is empty or ragged");
    return member_fraction(model, real_points, dim);
}

}  // namespace serial

}  // namespace diagen
