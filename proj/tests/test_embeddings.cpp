#include <cmath>
#include <filesystem>
#include <fstream>

#include <doctest.h>

#include "diagen/embeddings.hpp"
#include "diagen/errors.hpp"
#include "diagen/rng.hpp"

using namespace diagen;

namespace {

std::filesystem::path temp_dir() {
    const auto dir = std::filesystem::temp_directory_path() / "diagen-test-embeddings";
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("zero variance returns the base vector untouched") {
    const std::vector<double> base{0.5, -1.25, 3.0};
    CHECK(perturb_embedding(base, 0.0, 42) == base);
}

TEST_CASE("perturbation is deterministic in the seed") {
    const std::vector<double> base(16, 1.0);
    const auto a = perturb_embedding(base, 0.01, 7);
    const auto b = perturb_embedding(base, 0.01, 7);
    const auto c = perturb_embedding(base, 0.01, 8);
    CHECK(a == b);
    CHECK(a != c);
    CHECK(a != base);
}

TEST_CASE("each coordinate gets base plus sigma times the seeded gaussian stream") {
    const std::vector<double> base{1.0, -2.0, 0.25, 9.0};
    const double variance = 0.01;
    const std::uint64_t seed = 12345;
    const auto out = perturb_embedding(base, variance, seed);

    Rng rng(seed);
    const auto noise = rng.gaussian_vector(base.size());
    const double sigma = std::sqrt(variance);
    REQUIRE(out.size() == base.size());
    for (std::size_t i = 0; i < base.size(); ++i) {
        CHECK(out[i] == doctest::Approx(base[i] + sigma * noise[i]).epsilon(1e-15));
    }
}

TEST_CASE("sample moments match the requested variance") {
    const std::size_t dim = 4;
    const std::vector<double> base(dim, 2.0);
    const double variance = 0.025;
    const int n = 20000;
    double sum = 0.0;
    double sum_sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const auto v = perturb_embedding(base, variance, static_cast<std::uint64_t>(i));
        for (const double x : v) {
            const double d = x - 2.0;
            sum += d;
            sum_sq += d * d;
        }
    }
    const double count = static_cast<double>(n) * dim;
    const double mean = sum / count;
    const double var = sum_sq / count - mean * mean;
    CHECK(std::abs(mean) < 0.01);
    CHECK(std::abs(var - variance) / variance < 0.1);
}

TEST_CASE("variance schedule cycles and per-class overrides win") {
    PipelineConfig cfg;  // noise_variances = {0.005, 0.01, 0.025}
    CHECK(variance_for(cfg, "cat", 0) == 0.005);
    CHECK(variance_for(cfg, "cat", 1) == 0.01);
    CHECK(variance_for(cfg, "cat", 2) == 0.025);
    CHECK(variance_for(cfg, "cat", 3) == 0.005);
    CHECK(variance_for(cfg, "cat", 5) == 0.025);

    cfg.per_class_noise_variances["cat"] = {0.5};
    CHECK(variance_for(cfg, "cat", 2) == 0.5);
    CHECK(variance_for(cfg, "dog", 2) == 0.025);

    CHECK_THROWS_AS(variance_for(cfg, "cat", -1), InputError);
}

TEST_CASE("embedding store round trips through disk") {
    EmbeddingStore store;
    store["cat"] = {"<cls_cat>", {0.25, -1.5, 3.0}};
    store["dog"] = {"<cls_dog>", {1.0, 2.0, -0.125}};
    const auto path = temp_dir() / "store.json";
    save_embeddings(store, path);
    const EmbeddingStore back = load_embeddings(path);
    REQUIRE(back.size() == 2);
    CHECK(back.at("cat").token == "<cls_cat>");
    CHECK(back.at("cat").vector == store.at("cat").vector);
    CHECK(back.at("dog").vector == store.at("dog").vector);
}

TEST_CASE("embedding file rejections") {
    const auto dir = temp_dir();
    const auto write = [&](const char* name, const std::string& content) {
        const auto p = dir / name;
        std::ofstream(p) << content;
        return p;
    };

    SUBCASE("a class listed twice is an error, not a silent overwrite") {
        const auto p = write("dup_class.json",
                             R"({"cat": {"token": "<a>", "vector": [1.0]},)"
                             R"( "cat": {"token": "<b>", "vector": [2.0]}})");
        CHECK_THROWS_AS(load_embeddings(p), InputError);
    }
    SUBCASE("vectors must share one dimension") {
        const auto p = write("dim.json",
                             R"({"cat": {"token": "<a>", "vector": [1.0, 2.0]},)"
                             R"( "dog": {"token": "<b>", "vector": [2.0]}})");
        CHECK_THROWS_AS(load_embeddings(p), InputError);
    }
    SUBCASE("tokens must be unique across classes") {
        const auto p = write("tok.json",
                             R"({"cat": {"token": "<a>", "vector": [1.0]},)"
                             R"( "dog": {"token": "<a>", "vector": [2.0]}})");
        CHECK_THROWS_AS(load_embeddings(p), InputError);
    }
    SUBCASE("empty vector") {
        const auto p = write("emptyvec.json", R"({"cat": {"token": "<a>", "vector": []}})");
        CHECK_THROWS_AS(load_embeddings(p), InputError);
    }
    SUBCASE("empty token") {
        const auto p = write("emptytok.json", R"({"cat": {"token": "", "vector": [1.0]}})");
        CHECK_THROWS_AS(load_embeddings(p), InputError);
    }
    SUBCASE("non finite entry") {
        const auto p = write("nonfinite.json",
                             R"({"cat": {"token": "<a>", "vector": [1.0, 1e999]}})");
        CHECK_THROWS_AS(load_embeddings(p), InputError);
    }
    SUBCASE("not an object") {
        const auto p = write("array.json", "[1, 2, 3]");
        CHECK_THROWS_AS(load_embeddings(p), InputError);
    }
}
