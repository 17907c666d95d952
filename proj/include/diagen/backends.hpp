#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "diagen/dataset.hpp"
#include "diagen/embeddings.hpp"
#include "diagen/prompts.hpp"

namespace diagen {

struct GenerationRequest {
    std::string prompt_text;   // class token already embedded
    std::string prompt_id;     // bookkeeping only; never sent over the wire
    std::string embedding_token;
    std::vector<double> embedding_vector;  // the perturbed embedding
    std::string guiding_image;             // locator: path for HTTP, feature id for the mock
    double strength = 0.7;
    double guidance_scale = 15.0;
    std::int64_t seed = 0;
};

/// Exactly one of image / feature is populated, depending on the backend.
struct GenerationResult {
    std::vector<std::uint8_t> image;
    std::optional<std::vector<double>> feature;
    std::int64_t seed_used = 0;
};

class TextToImageClient {
public:
    virtual ~TextToImageClient() = default;
    /// Throws TransportError if the backend is unreachable and
    /// GenerationError if it reports a failed generation.
    virtual GenerationResult generate(const GenerationRequest& request) = 0;
};

/// Validates the request invariants (strength range, positive guidance,
/// token occurs exactly once in the prompt) and delegates to the client.
GenerationResult generate_image(TextToImageClient& client, const GenerationRequest& request);

/// Feature-space stand-in for the diffusion backend:
///
///   out = guiding + t0 * (lambda * dir(prompt) + noise + proj(embedding))
///
/// where dir is a per-prompt unit direction, noise is gaussian with the
/// configured scale drawn from the request seed, and proj is a fixed random
/// linear map from embedding space to feature space. Every displacement term
/// scales with the strength t0, so t0 = 0 reproduces the guiding feature
/// exactly and the spread of a guiding image's synthetics grows linearly
/// in t0. Deterministic in its inputs.
std::vector<double> mock_generate(const GenerationRequest& request,
                                  const std::vector<double>& guiding_feature,
                                  const std::map<std::string, std::vector<double>>& directions,
                                  double lambda = 2.0, double noise_scale = 0.5);

/// Unit direction for a prompt id; used when no explicit direction is given.
std::vector<double> mock_direction(const std::string& prompt_id, std::size_t dim);

struct MockBackendConfig {
    double lambda = 2.0;
    double noise_scale = 0.5;
    std::set<std::string> fail_prompt_ids;  // injected failures, by prompt id
    std::map<std::string, std::vector<double>> directions;  // optional overrides
};

/// Resolves guiding_image locators against a feature table and answers with
/// feature vectors. Thread-safe; all state is immutable after construction.
class MockTextToImageBackend : public TextToImageClient {
public:
    MockTextToImageBackend(FeatureTable guiding_features, MockBackendConfig config = {});

    GenerationResult generate(const GenerationRequest& request) override;

private:
    FeatureTable features_;
    MockBackendConfig config_;
};

struct HttpClientOptions {
    int timeout_seconds = 120;
    int max_in_flight = 4;
};

/// POST {endpoint}/v1/img2img. guiding_image is read from disk and sent
/// base64-encoded; an {"error": ...} reply becomes a GenerationError.
class HttpTextToImageClient : public TextToImageClient {
public:
    explicit HttpTextToImageClient(std::string endpoint, HttpClientOptions options = {});
    ~HttpTextToImageClient() override;

    GenerationResult generate(const GenerationRequest& request) override;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// POST {endpoint}/v1/complete with {"instruction", "seed"}; returns "text".
class HttpTextToTextClient : public TextToTextClient {
public:
    explicit HttpTextToTextClient(std::string endpoint, HttpClientOptions options = {});
    ~HttpTextToTextClient() override;

    std::string complete(const std::string& instruction, std::uint64_t seed) override;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// Builds a client from an endpoint string. "mock:" selects the feature-space
/// backend; comma-separated parameters lambda=<x>, noise_scale=<x> and
/// fail=<id;id;...> configure it. Anything else is an HTTP base URL.
std::unique_ptr<TextToImageClient> make_text_to_image_client(const std::string& endpoint,
                                                             const FeatureTable& guiding_features,
                                                             HttpClientOptions options = {});

struct GenerationFailureRecord {
    std::string real_id;
    std::string prompt_id;
    int synthetic_index = 0;
    std::string reason;
};

struct AugmentationOutcome {
    DatasetManifest manifest;
    /// Populated when the backend returns features for every success (mock).
    std::optional<FeatureTable> synthetic_features;
    /// Image bytes by synthetic id, for backends that return pixels.
    std::vector<std::pair<std::string, std::vector<std::uint8_t>>> images;
    std::vector<GenerationFailureRecord> failures;
    std::vector<std::string> warnings;
};

/// Runs the generation loop: per real image n, synthetic m (m < M) uses
/// prompt m of its class, the variance cycle value for m, and seeds derived
/// from (master_seed, real id, m). Requests run in parallel; the outcome is
/// assembled in (n, m) order, so results do not depend on scheduling.
/// Failed generations are recorded and skipped, never fatal.
AugmentationOutcome orchestrate_augmentation(
    const DatasetManifest& manifest, const EmbeddingStore& embeddings,
    const std::map<std::string, std::vector<PromptRecord>>& prompts_by_class,
    TextToImageClient& client, const PipelineConfig& config);

}  // namespace diagen
