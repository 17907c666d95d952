#include "diagen/dataset.hpp"

#include <cmath>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "diagen/errors.hpp"
#include "diagen/io_util.hpp"
#include "diagen/rng.hpp"

namespace diagen {

using nlohmann::json;

FeatureTable::FeatureTable(std::vector<std::string> ids, std::vector<std::string> labels,
                           std::vector<double> matrix, std::size_t dim)
    : ids_(std::move(ids)), labels_(std::move(labels)), matrix_(std::move(matrix)), dim_(dim) {
    if (dim_ == 0) throw InputError("feature table: dimension must be >= 1");
    if (ids_.size() != labels_.size() || ids_.size() * dim_ != matrix_.size())
        throw InputError("feature table: inconsistent shapes");
    for (std::size_t i = 0; i < ids_.size(); ++i) {
        if (!index_.emplace(ids_[i], i).second)
            throw InputError("feature table: duplicate id '" + ids_[i] + "'");
    }
}

std::optional<std::size_t> FeatureTable::index_of(const std::string& id) const {
    const auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

FeatureTable FeatureTable::subset(const std::vector<std::size_t>& rows) const {
    std::vector<std::string> ids, labels;
    std::vector<double> matrix;
    ids.reserve(rows.size());
    labels.reserve(rows.size());
    matrix.reserve(rows.size() * dim_);
    for (std::size_t r : rows) {
        ids.push_back(ids_[r]);
        labels.push_back(labels_[r]);
        const auto row_span = row(r);
        matrix.insert(matrix.end(), row_span.begin(), row_span.end());
    }
    return FeatureTable(std::move(ids), std::move(labels), std::move(matrix), dim_);
}

void check_pipeline_config(const PipelineConfig& c) {
    if (c.examples_per_class <= 0) throw InputError("config: examples_per_class must be positive");
    if (c.synthetics_per_real <= 0) throw InputError("config: synthetics_per_real must be positive");
    if (c.prompts_per_class <= 0) throw InputError("config: prompts_per_class must be positive");
    if (c.noise_variances.empty()) throw InputError("config: noise_variances must be nonempty");
    for (double v : c.noise_variances)
        if (!(v >= 0.0)) throw InputError("config: noise variances must be nonnegative");
    for (const auto& [label, list] : c.per_class_noise_variances) {
        if (list.empty()) throw InputError("config: per-class variances empty for '" + label + "'");
        for (double v : list)
            if (!(v >= 0.0)) throw InputError("config: per-class variance negative for '" + label + "'");
    }
    if (!(c.strength >= 0.0 && c.strength <= 1.0)) throw InputError("config: strength must be in [0,1]");
    if (!(c.guidance_scale > 0.0)) throw InputError("config: guidance_scale must be positive");
    if (!(c.synthetic_probability >= 0.0 && c.synthetic_probability <= 1.0))
        throw InputError("config: synthetic_probability must be in [0,1]");
    if (c.knn_k <= 0) throw InputError("config: knn_k must be positive");
}

std::string config_fingerprint(const PipelineConfig& c) {
    std::ostringstream canon;
    canon << "examples_per_class=" << c.examples_per_class
          << "|synthetics_per_real=" << c.synthetics_per_real
          << "|prompts_per_class=" << c.prompts_per_class << "|noise_variances=";
    for (std::size_t i = 0; i < c.noise_variances.size(); ++i) {
        if (i) canon << ',';
        canon << format_double(c.noise_variances[i]);
    }
    canon << "|strength=" << format_double(c.strength)
          << "|guidance_scale=" << format_double(c.guidance_scale)
          << "|synthetic_probability=" << format_double(c.synthetic_probability)
          << "|knn_k=" << c.knn_k << "|master_seed=" << c.master_seed << "|per_class=";
    bool first_class = true;
    for (const auto& [label, list] : c.per_class_noise_variances) {
        if (!first_class) canon << ';';
        first_class = false;
        canon << label << ':';
        for (std::size_t i = 0; i < list.size(); ++i) {
            if (i) canon << ',';
            canon << format_double(list[i]);
        }
    }
    char hex[17];
    std::snprintf(hex, sizeof(hex), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(canon.str())));
    return std::string("fnv1a:") + hex;
}

std::vector<Violation> validate_manifest(const DatasetManifest& m) {
    std::vector<Violation> out;
    const std::set<std::string> classes(m.classes.begin(), m.classes.end());

    std::unordered_set<std::string> seen_ids;
    std::unordered_map<std::string, const RealImageRecord*> reals_by_id;
    for (const auto& r : m.reals) {
        if (r.id.empty()) out.push_back({r.id, "empty-id", "real image with empty id"});
        if (!seen_ids.insert(r.id).second)
            out.push_back({r.id, "duplicate-id", "id appears more than once"});
        else
            reals_by_id.emplace(r.id, &r);
        if (!classes.count(r.class_label))
            out.push_back({r.id, "unknown-class", "class '" + r.class_label + "' not in class list"});
    }
    for (const auto& s : m.synthetics) {
        if (s.id.empty()) out.push_back({s.id, "empty-id", "synthetic image with empty id"});
        if (!seen_ids.insert(s.id).second)
            out.push_back({s.id, "duplicate-id", "id appears more than once"});
        if (!classes.count(s.class_label))
            out.push_back({s.id, "unknown-class", "class '" + s.class_label + "' not in class list"});
        const auto parent = reals_by_id.find(s.parent_real_id);
        if (parent == reals_by_id.end()) {
            out.push_back({s.id, "missing-parent",
                           "parent_real_id '" + s.parent_real_id + "' does not resolve"});
        } else if (parent->second->class_label != s.class_label) {
            out.push_back({s.id, "label-mismatch",
                           "synthetic labeled '" + s.class_label + "' but parent is '" +
                               parent->second->class_label + "'"});
        }
        if (!(s.noise_variance >= 0.0) || !std::isfinite(s.noise_variance))
            out.push_back({s.id, "negative-variance", "noise_variance must be nonnegative"});
        if (s.confidence && !(*s.confidence >= 0.0 && *s.confidence <= 1.0))
            out.push_back({s.id, "confidence-range", "confidence must be in [0,1]"});
    }
    return out;
}

namespace {

json real_to_json(const RealImageRecord& r) {
    json j{{"id", r.id}, {"class_label", r.class_label}, {"image_ref", r.image_ref}};
    if (r.feature_row) j["feature_row"] = *r.feature_row;
    return j;
}

json synthetic_to_json(const SyntheticImageRecord& s) {
    json j{{"id", s.id},
           {"parent_real_id", s.parent_real_id},
           {"class_label", s.class_label},
           {"prompt_id", s.prompt_id},
           {"noise_variance", s.noise_variance},
           {"noise_seed", s.noise_seed},
           {"generation_seed", s.generation_seed}};
    if (s.confidence) j["confidence"] = *s.confidence;
    return j;
}

template <typename T>
T require(const json& j, const char* key) {
    if (!j.contains(key)) throw InputError(std::string("manifest: missing field '") + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw InputError(std::string("manifest: bad type for field '") + key + "'");
    }
}

}  // namespace

std::string manifest_to_json(const DatasetManifest& m) {
    json j;
    j["classes"] = m.classes;
    j["reals"] = json::array();
    for (const auto& r : m.reals) j["reals"].push_back(real_to_json(r));
    j["synthetics"] = json::array();
    for (const auto& s : m.synthetics) j["synthetics"].push_back(synthetic_to_json(s));
    j["config_fingerprint"] = m.config_fingerprint;
    return j.dump(2) + "\n";
}

DatasetManifest manifest_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw InputError(std::string("manifest: invalid JSON: ") + e.what());
    }
    DatasetManifest m;
    m.classes = require<std::vector<std::string>>(j, "classes");
    m.config_fingerprint = require<std::string>(j, "config_fingerprint");
    for (const auto& rj : require<json>(j, "reals")) {
        RealImageRecord r;
        r.id = require<std::string>(rj, "id");
        r.class_label = require<std::string>(rj, "class_label");
        r.image_ref = require<std::string>(rj, "image_ref");
        if (rj.contains("feature_row")) r.feature_row = rj.at("feature_row").get<std::size_t>();
        m.reals.push_back(std::move(r));
    }
    for (const auto& sj : require<json>(j, "synthetics")) {
        SyntheticImageRecord s;
        s.id = require<std::string>(sj, "id");
        s.parent_real_id = require<std::string>(sj, "parent_real_id");
        s.class_label = require<std::string>(sj, "class_label");
        s.prompt_id = require<std::string>(sj, "prompt_id");
        s.noise_variance = require<double>(sj, "noise_variance");
        s.noise_seed = require<std::int64_t>(sj, "noise_seed");
        s.generation_seed = require<std::int64_t>(sj, "generation_seed");
        if (sj.contains("confidence")) s.confidence = sj.at("confidence").get<double>();
        m.synthetics.push_back(std::move(s));
    }
    return m;
}

void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
    const auto violations = validate_manifest(m);
    if (!violations.empty()) {
        std::string msg = "refusing to save invalid manifest:";
        for (const auto& v : violations) msg += "\n  [" + v.record_id + "] " + v.rule + ": " + v.detail;
        throw InputError(msg);
    }
    atomic_write_file(path, manifest_to_json(m));
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
    DatasetManifest m = manifest_from_json(read_file(path));
    const auto violations = validate_manifest(m);
    if (!violations.empty()) {
        std::string msg = "manifest at " + path.string() + " is invalid:";
        for (const auto& v : violations) msg += "\n  [" + v.record_id + "] " + v.rule + ": " + v.detail;
        throw InputError(msg);
    }
    return m;
}

FeatureTable load_feature_table(const std::filesystem::path& path) {
    const std::string content = read_file(path);
    std::istringstream in(content);
    std::string line;
    if (!std::getline(in, line)) throw InputError("feature table: empty file " + path.string());
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = split(line, ',');
    if (header.size() < 3 || header[0] != "id" || header[1] != "label")
        throw InputError("feature table: header must be id,label,f0,...");
    const std::size_t dim = header.size() - 2;

    std::vector<std::string> ids, labels;
    std::vector<double> matrix;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto cells = split(line, ',');
        if (cells.size() != dim + 2)
            throw InputError("feature table: row " + std::to_string(line_no) + " has " +
                             std::to_string(cells.size() - 2) + " features, expected " +
                             std::to_string(dim));
        ids.push_back(cells[0]);
        labels.push_back(cells[1]);
        for (std::size_t i = 2; i < cells.size(); ++i) {
            const auto v = parse_double(trim(cells[i]));
            if (!v)
                throw InputError("feature table: non-numeric cell '" + cells[i] + "' at row " +
                                 std::to_string(line_no));
            matrix.push_back(*v);
        }
    }
    return FeatureTable(std::move(ids), std::move(labels), std::move(matrix), dim);
}

void save_feature_table(const FeatureTable& t, const std::filesystem::path& path) {
    std::ostringstream out;
    out << "id,label";
    for (std::size_t d = 0; d < t.dim(); ++d) out << ",f" << d;
    out << "\n";
    for (std::size_t i = 0; i < t.size(); ++i) {
        out << t.ids()[i] << ',' << t.labels()[i];
        for (double v : t.row(i)) out << ',' << format_double(v);
        out << "\n";
    }
    atomic_write_file(path, out.str());
}

}  // namespace diagen
