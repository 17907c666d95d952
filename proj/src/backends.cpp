#include "diagen/backends.hpp"

#include <atomic>
#include <cmath>
#include <mutex>
#include <semaphore>
#include <sstream>

#include <httplib.h>
#include <json.hpp>

#include "diagen/errors.hpp"
#include "diagen/io_util.hpp"
#include "diagen/rng.hpp"

namespace diagen {

using nlohmann::json;

namespace {

std::size_t count_substring(std::string_view text, std::string_view needle) {
    if (needle.empty()) return 0;
    std::size_t n = 0;
    for (std::size_t pos = text.find(needle); pos != std::string_view::npos;
         pos = text.find(needle, pos + needle.size()))
        ++n;
    return n;
}

}  // namespace

GenerationResult generate_image(TextToImageClient& client, const GenerationRequest& request) {
    if (!(request.strength >= 0.0 && request.strength <= 1.0))
        throw InputError("generate: strength must be in [0,1]");
    if (!(request.guidance_scale > 0.0))
        throw InputError("generate: guidance_scale must be positive");
    if (request.embedding_token.empty()) throw InputError("generate: embedding token is empty");
    if (count_substring(request.prompt_text, request.embedding_token) != 1)
        throw InputError("generate: prompt must contain the embedding token exactly once");
    if (request.embedding_vector.empty()) throw InputError("generate: embedding vector is empty");
    return client.generate(request);
}

std::vector<double> mock_direction(const std::string& prompt_id, std::size_t dim) {
    Rng rng(derive_seed(0, prompt_id, 0, "mock-direction"));
    std::vector<double> v = rng.gaussian_vector(dim);
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm == 0.0) {
        v.assign(dim, 0.0);
        v[0] = 1.0;
        return v;
    }
    for (double& x : v) x /= norm;
    return v;
}

std::vector<double> mock_generate(const GenerationRequest& request,
                                  const std::vector<double>& guiding_feature,
                                  const std::map<std::string, std::vector<double>>& directions,
                                  double lambda, double noise_scale) {
    const std::size_t dim = guiding_feature.size();
    if (dim == 0) throw InputError("mock: guiding feature is empty");

    std::vector<double> dir;
    if (const auto it = directions.find(request.prompt_id); it != directions.end()) {
        dir = it->second;
        if (dir.size() != dim)
            throw InputError("mock: direction for prompt '" + request.prompt_id +
                             "' has dimension " + std::to_string(dir.size()) + ", feature space is " +
                             std::to_string(dim));
    } else {
        dir = mock_direction(request.prompt_id, dim);
    }

    Rng noise_rng(static_cast<std::uint64_t>(request.seed));
    const std::vector<double> noise = noise_rng.gaussian_vector(dim);

    // Fixed pseudo-random projection of the embedding into feature space,
    // regenerated from a constant seed so it needs no shared state.
    const std::vector<double>& e = request.embedding_vector;
    if (e.empty()) throw InputError("mock: embedding vector is empty");
    Rng proj_rng(fnv1a64("mock-projection"));
    const double col_scale = 1.0 / std::sqrt(static_cast<double>(e.size()));
    std::vector<double> proj(dim, 0.0);
    for (std::size_t i = 0; i < dim; ++i) {
        double acc = 0.0;
        for (double ej : e) acc += proj_rng.gaussian() * col_scale * ej;
        proj[i] = acc;
    }

    const double t0 = request.strength;
    std::vector<double> out(dim);
    for (std::size_t i = 0; i < dim; ++i)
        out[i] = guiding_feature[i] + t0 * (lambda * dir[i] + noise_scale * noise[i] + proj[i]);
    return out;
}

MockTextToImageBackend::MockTextToImageBackend(FeatureTable guiding_features,
                                               MockBackendConfig config)
    : features_(std::move(guiding_features)), config_(std::move(config)) {}

GenerationResult MockTextToImageBackend::generate(const GenerationRequest& request) {
    if (config_.fail_prompt_ids.count(request.prompt_id))
        throw GenerationError("injected failure for prompt '" + request.prompt_id + "'");
    const auto row = features_.index_of(request.guiding_image);
    if (!row)
        throw InputError("mock backend: no guiding feature for '" + request.guiding_image + "'");
    const std::vector<double> guiding(features_.row(*row).begin(), features_.row(*row).end());
    GenerationResult result;
    result.feature = mock_generate(request, guiding, config_.directions, config_.lambda,
                                   config_.noise_scale);
    result.seed_used = request.seed;
    return result;
}

namespace {

struct HttpBase {
    std::string endpoint;
    HttpClientOptions options;
    std::counting_semaphore<256> slots;

    HttpBase(std::string ep, HttpClientOptions opt)
        : endpoint(std::move(ep)),
          options(opt),
          slots(std::min(std::max(opt.max_in_flight, 1), 256)) {
        if (endpoint.rfind("http://", 0) != 0)
            throw InputError("backend endpoint must start with http:// or mock:, got '" +
                             endpoint + "'");
        while (!endpoint.empty() && endpoint.back() == '/') endpoint.pop_back();
    }

    // httplib clients are not thread-safe, so each request gets its own.
    json post(const std::string& route, const json& body) {
        slots.acquire();
        httplib::Client client(endpoint);
        client.set_connection_timeout(options.timeout_seconds, 0);
        client.set_read_timeout(options.timeout_seconds, 0);
        client.set_write_timeout(options.timeout_seconds, 0);
        auto res = client.Post(route, body.dump(), "application/json");
        slots.release();
        if (!res)
            throw TransportError("request to " + endpoint + route + " failed: " +
                                 httplib::to_string(res.error()));
        if (res->status != 200)
            throw TransportError("request to " + endpoint + route + " returned HTTP " +
                                 std::to_string(res->status));
        try {
            return json::parse(res->body);
        } catch (const json::exception& ex) {
            throw TransportError(std::string("backend sent invalid JSON: ") + ex.what());
        }
    }
};

}  // namespace

struct HttpTextToImageClient::Impl : HttpBase {
    using HttpBase::HttpBase;
};

HttpTextToImageClient::HttpTextToImageClient(std::string endpoint, HttpClientOptions options)
    : impl_(std::make_unique<Impl>(std::move(endpoint), options)) {}

HttpTextToImageClient::~HttpTextToImageClient() = default;

GenerationResult HttpTextToImageClient::generate(const GenerationRequest& request) {
    const std::vector<std::uint8_t> image_bytes = read_file_bytes(request.guiding_image);
    const json body{{"prompt", request.prompt_text},
                    {"embedding_token", request.embedding_token},
                    {"embedding", request.embedding_vector},
                    {"guiding_image_b64", base64_encode(image_bytes.data(), image_bytes.size())},
                    {"strength", request.strength},
                    {"guidance_scale", request.guidance_scale},
                    {"seed", request.seed}};
    const json reply = impl_->post("/v1/img2img", body);
    if (reply.contains("error"))
        throw GenerationError(reply.at("error").is_string() ? reply.at("error").get<std::string>()
                                                            : reply.at("error").dump());
    if (!reply.contains("image_b64") || !reply.contains("seed_used"))
        throw TransportError("img2img reply lacks image_b64/seed_used");
    GenerationResult result;
    try {
        result.image = base64_decode(reply.at("image_b64").get<std::string>());
        result.seed_used = reply.at("seed_used").get<std::int64_t>();
    } catch (const json::exception& ex) {
        throw TransportError(std::string("malformed img2img reply: ") + ex.what());
    }
    return result;
}

struct HttpTextToTextClient::Impl : HttpBase {
    using HttpBase::HttpBase;
};

HttpTextToTextClient::HttpTextToTextClient(std::string endpoint, HttpClientOptions options)
    : impl_(std::make_unique<Impl>(std::move(endpoint), options)) {}

HttpTextToTextClient::~HttpTextToTextClient() = default;

std::string HttpTextToTextClient::complete(const std::string& instruction, std::uint64_t seed) {
    const json body{{"instruction", instruction}, {"seed", seed}};
    const json reply = impl_->post("/v1/complete", body);
    if (!reply.contains("text") || !reply.at("text").is_string())
        throw TransportError("completion reply lacks a text field");
    return reply.at("text").get<std::string>();
}

std::unique_ptr<TextToImageClient> make_text_to_image_client(const std::string& endpoint,
                                                             const FeatureTable& guiding_features,
                                                             HttpClientOptions options) {
    if (endpoint.rfind("mock:", 0) != 0)
        return std::make_unique<HttpTextToImageClient>(endpoint, options);

    MockBackendConfig config;
    const std::string params = endpoint.substr(5);
    if (!params.empty()) {
        for (const auto& kv : split(params, ',')) {
            const std::size_t eq = kv.find('=');
            if (eq == std::string::npos)
                throw InputError("mock endpoint parameter '" + kv + "' is not key=value");
            const std::string key = trim(kv.substr(0, eq));
            const std::string value = trim(kv.substr(eq + 1));
            if (key == "lambda" || key == "noise_scale") {
                const auto parsed = parse_double(value);
                if (!parsed) throw InputError("mock endpoint: bad number for " + key);
                (key == "lambda" ? config.lambda : config.noise_scale) = *parsed;
            } else if (key == "fail") {
                for (const auto& id : split(value, ';'))
                    if (!id.empty()) config.fail_prompt_ids.insert(id);
            } else {
                throw InputError("mock endpoint: unknown parameter '" + key + "'");
            }
        }
    }
    return std::make_unique<MockTextToImageBackend>(guiding_features, std::move(config));
}

AugmentationOutcome orchestrate_augmentation(
    const DatasetManifest& manifest, const EmbeddingStore& embeddings,
    const std::map<std::string, std::vector<PromptRecord>>& prompts_by_class,
    TextToImageClient& client, const PipelineConfig& config) {
    check_pipeline_config(config);
    const int m_per_real = config.synthetics_per_real;

    std::set<std::string> classes_in_use;
    for (const auto& r : manifest.reals) classes_in_use.insert(r.class_label);
    for (const auto& label : classes_in_use) {
        const auto emb = embeddings.find(label);
        if (emb == embeddings.end())
            throw InputError("augment: no embedding for class '" + label + "'");
        const auto prompts = prompts_by_class.find(label);
        if (prompts == prompts_by_class.end() ||
            static_cast<int>(prompts->second.size()) < m_per_real)
            throw InputError("augment: class '" + label + "' needs at least " +
                             std::to_string(m_per_real) + " prompts");
    }

    struct Slot {
        SyntheticImageRecord record;
        std::optional<std::vector<double>> feature;
        std::vector<std::uint8_t> image;
        std::string failure;  // nonempty means failed
        bool done = false;
    };
    const std::size_t n_reals = manifest.reals.size();
    const std::size_t total = n_reals * static_cast<std::size_t>(m_per_real);
    std::vector<Slot> slots(total);

    std::atomic<bool> fatal{false};
    std::string fatal_message;
    std::mutex fatal_mutex;
    const std::uint64_t master = static_cast<std::uint64_t>(config.master_seed);

#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t task = 0; task < static_cast<std::ptrdiff_t>(total); ++task) {
        if (fatal.load(std::memory_order_relaxed)) continue;
        const std::size_t n = static_cast<std::size_t>(task) / m_per_real;
        const int m = static_cast<int>(static_cast<std::size_t>(task) % m_per_real);
        const RealImageRecord& real = manifest.reals[n];
        Slot& slot = slots[task];
        try {
            const ClassEmbedding& emb = embeddings.at(real.class_label);
            const PromptRecord& prompt = prompts_by_class.at(real.class_label)[m];
            const double variance = variance_for(config, real.class_label, m);
            const std::uint64_t noise_seed = derive_seed(master, real.id, m, "noise");
            const std::uint64_t gen_seed = derive_seed(master, real.id, m, "gen");

            GenerationRequest req;
            req.prompt_text = prompt.text;
            req.prompt_id = prompt.id;
            req.embedding_token = emb.token;
            req.embedding_vector = perturb_embedding(emb.vector, variance, noise_seed);
            req.guiding_image = real.image_ref;
            req.strength = config.strength;
            req.guidance_scale = config.guidance_scale;
            req.seed = static_cast<std::int64_t>(gen_seed);

            SyntheticImageRecord rec;
            rec.id = real.id + "-syn-" + std::to_string(m);
            rec.parent_real_id = real.id;
            rec.class_label = real.class_label;
            rec.prompt_id = prompt.id;
            rec.noise_variance = variance;
            rec.noise_seed = static_cast<std::int64_t>(noise_seed);
            rec.generation_seed = static_cast<std::int64_t>(gen_seed);

            try {
                GenerationResult result = generate_image(client, req);
                slot.record = std::move(rec);
                slot.feature = std::move(result.feature);
                slot.image = std::move(result.image);
                slot.done = true;
            } catch (const GenerationError& ex) {
                slot.failure = ex.what();
                slot.record = std::move(rec);
            } catch (const TransportError& ex) {
                slot.failure = ex.what();
                slot.record = std::move(rec);
            }
        } catch (const std::exception& ex) {
            if (!fatal.exchange(true)) {
                const std::lock_guard<std::mutex> lock(fatal_mutex);
                fatal_message = ex.what();
            }
        }
    }
    if (fatal.load()) throw InputError("augment: " + fatal_message);

    AugmentationOutcome outcome;
    outcome.manifest = manifest;
    outcome.manifest.config_fingerprint = config_fingerprint(config);

    std::vector<std::string> feat_ids, feat_labels;
    std::vector<double> feat_matrix;
    std::size_t feat_dim = 0;
    bool all_have_features = true;
    std::map<std::string, int> successes_by_class;
    for (const auto& label : classes_in_use) successes_by_class[label] = 0;

    for (std::size_t task = 0; task < total; ++task) {
        Slot& slot = slots[task];
        if (!slot.failure.empty()) {
            const std::size_t n = task / m_per_real;
            outcome.failures.push_back({manifest.reals[n].id, slot.record.prompt_id,
                                        static_cast<int>(task % m_per_real), slot.failure});
            continue;
        }
        if (!slot.done) continue;
        ++successes_by_class[slot.record.class_label];
        if (slot.feature) {
            if (feat_dim == 0) feat_dim = slot.feature->size();
            feat_ids.push_back(slot.record.id);
            feat_labels.push_back(slot.record.class_label);
            feat_matrix.insert(feat_matrix.end(), slot.feature->begin(), slot.feature->end());
        } else {
            all_have_features = false;
            if (!slot.image.empty()) outcome.images.emplace_back(slot.record.id, std::move(slot.image));
        }
        outcome.manifest.synthetics.push_back(std::move(slot.record));
    }

    if (all_have_features && !feat_ids.empty())
        outcome.synthetic_features =
            FeatureTable(std::move(feat_ids), std::move(feat_labels), std::move(feat_matrix), feat_dim);

    for (const auto& [label, count] : successes_by_class)
        if (count == 0)
            outcome.warnings.push_back("class '" + label + "' produced no synthetic images");

    return outcome;
}

}  // namespace diagen
