#include "diagen/embeddings.hpp"

#include <cmath>
#include <set>

#include <json.hpp>

#include "diagen/errors.hpp"
#include "diagen/io_util.hpp"
#include "diagen/rng.hpp"

namespace diagen {

using nlohmann::json;

std::vector<double> perturb_embedding(const std::vector<double>& base, double variance,
                                      std::uint64_t seed) {
    if (!(variance >= 0.0) || !std::isfinite(variance))
        throw InputError("perturb: variance must be finite and nonnegative");
    if (base.empty()) throw InputError("perturb: embedding vector is empty");
    if (variance == 0.0) return base;
    Rng rng(seed);
    const double sigma = std::sqrt(variance);
    std::vector<double> out(base.size());
    for (std::size_t i = 0; i < base.size(); ++i) out[i] = base[i] + sigma * rng.gaussian();
    return out;
}

double variance_for(const PipelineConfig& config, const std::string& class_label,
                    int synthetic_index) {
    if (synthetic_index < 0) throw InputError("variance_for: synthetic index must be nonnegative");
    const auto it = config.per_class_noise_variances.find(class_label);
    const auto& cycle =
        it != config.per_class_noise_variances.end() ? it->second : config.noise_variances;
    if (cycle.empty()) throw InputError("variance_for: empty variance cycle");
    return cycle[static_cast<std::size_t>(synthetic_index) % cycle.size()];
}

namespace {

// nlohmann's DOM parser keeps the last value for a repeated key, which would
// silently merge two classes. A SAX callback sees every key as it streams by.
class DuplicateKeyGuard : public nlohmann::json_sax_dom_parser<json> {
public:
    explicit DuplicateKeyGuard(json& j) : nlohmann::json_sax_dom_parser<json>(j, true) {}

    bool key(json::string_t& val) {
        if (depth_ == 1 && !top_keys_.insert(val).second)
            throw InputError("embeddings: duplicate class '" + val + "'");
        return nlohmann::json_sax_dom_parser<json>::key(val);
    }
    bool start_object(std::size_t elements) {
        ++depth_;
        return nlohmann::json_sax_dom_parser<json>::start_object(elements);
    }
    bool end_object() {
        --depth_;
        return nlohmann::json_sax_dom_parser<json>::end_object();
    }

private:
    int depth_ = 0;
    std::set<std::string> top_keys_;
};

}  // namespace

EmbeddingStore load_embeddings(const std::filesystem::path& path) {
    const std::string text = read_file(path);
    json j;
    DuplicateKeyGuard guard(j);
    if (!json::sax_parse(text, &guard))
        throw InputError("embeddings: invalid JSON in " + path.string());
    if (!j.is_object()) throw InputError("embeddings: top level must be an object");

    EmbeddingStore store;
    for (const auto& [label, entry] : j.items()) {
        if (!entry.is_object() || !entry.contains("token") || !entry.contains("vector"))
            throw InputError("embeddings: class '" + label + "' needs token and vector");
        ClassEmbedding e;
        try {
            e.token = entry.at("token").get<std::string>();
            e.vector = entry.at("vector").get<std::vector<double>>();
        } catch (const json::exception&) {
            throw InputError("embeddings: bad field types for class '" + label + "'");
        }
        if (e.token.empty()) throw InputError("embeddings: empty token for class '" + label + "'");
        if (e.vector.empty()) throw InputError("embeddings: empty vector for class '" + label + "'");
        for (double v : e.vector)
            if (!std::isfinite(v))
                throw InputError("embeddings: non-finite value for class '" + label + "'");
        store.emplace(label, std::move(e));
    }
    if (store.empty()) throw InputError("embeddings: no classes in " + path.string());
    const std::size_t dim = store.begin()->second.vector.size();
    std::set<std::string> tokens;
    for (const auto& [label, e] : store) {
        if (e.vector.size() != dim)
            throw InputError("embeddings: class '" + label + "' has dimension " +
                             std::to_string(e.vector.size()) + ", expected " + std::to_string(dim));
        if (!tokens.insert(e.token).second)
            throw InputError("embeddings: token '" + e.token + "' is used by two classes");
    }
    return store;
}

void save_embeddings(const EmbeddingStore& store, const std::filesystem::path& path) {
    json j = json::object();
    for (const auto& [label, e] : store) {
        j[label] = json{{"token", e.token}, {"vector", e.vector}};
    }
    atomic_write_file(path, j.dump(2) + "\n");
}

}  // namespace diagen
