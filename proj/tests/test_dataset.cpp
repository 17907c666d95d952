#include <filesystem>
#include <fstream>

#include <doctest.h>

#include "diagen/dataset.hpp"
#include "diagen/errors.hpp"
#include "diagen/io_util.hpp"
#include "diagen/rng.hpp"

using namespace diagen;

namespace {

std::filesystem::path temp_dir() {
    const auto dir = std::filesystem::temp_directory_path() / "diagen-test-dataset";
    std::filesystem::create_directories(dir);
    return dir;
}

DatasetManifest small_manifest() {
    DatasetManifest m;
    m.classes = {"cat", "dog"};
    m.reals = {{"r0", "cat", "img/r0.png", std::nullopt}, {"r1", "dog", "img/r1.png", 1}};
    m.synthetics = {{"s0", "r0", "cat", "cat-p0", 0.01, 11, 12, 0.5},
                    {"s1", "r1", "dog", "dog-p0", 0.025, 21, 22, std::nullopt}};
    m.config_fingerprint = config_fingerprint(PipelineConfig{});
    return m;
}

}  // namespace

TEST_CASE("feature table basics") {
    FeatureTable t({"a", "b"}, {"x", "y"}, {1.0, 2.0, 3.0, 4.0}, 2);
    CHECK(t.size() == 2);
    CHECK(t.dim() == 2);
    CHECK(t.row(1)[0] == 3.0);
    CHECK(t.index_of("b") == 1);
    CHECK(!t.index_of("c"));

    const FeatureTable sub = t.subset({1});
    CHECK(sub.size() == 1);
    CHECK(sub.ids()[0] == "b");
    CHECK(sub.row(0)[1] == 4.0);

    CHECK_THROWS_AS(FeatureTable({"a", "a"}, {"x", "x"}, {1, 2, 3, 4}, 2), InputError);
    CHECK_THROWS_AS(FeatureTable({"a"}, {"x"}, {1, 2, 3}, 2), InputError);
    CHECK_THROWS_AS(FeatureTable({"a"}, {"x"}, {1}, 0), InputError);
}

TEST_CASE("feature csv round trip preserves exact values") {
    const auto path = temp_dir() / "round.csv";
    FeatureTable t({"a", "b"}, {"x", "y"}, {0.1, -2.5e-7, 1.0 / 3.0, 12345.678}, 2);
    save_feature_table(t, path);
    const FeatureTable back = load_feature_table(path);
    CHECK(back.ids() == t.ids());
    CHECK(back.labels() == t.labels());
    CHECK(back.matrix() == t.matrix());
    CHECK(back.dim() == 2);
}

TEST_CASE("feature csv rejections") {
    const auto dir = temp_dir();
    const auto write = [&](const char* name, const std::string& content) {
        const auto p = dir / name;
        std::ofstream(p) << content;
        return p;
    };
    CHECK_THROWS_AS(load_feature_table(write("bad_header.csv", "id,f0\nr0,1\n")), InputError);
    CHECK_THROWS_AS(load_feature_table(write("ragged.csv", "id,label,f0,f1\nr0,x,1\n")), InputError);
    CHECK_THROWS_AS(load_feature_table(write("nonnum.csv", "id,label,f0\nr0,x,zebra\n")), InputError);
    CHECK_THROWS_AS(load_feature_table(write("nonfinite.csv", "id,label,f0\nr0,x,inf\n")), InputError);
    CHECK_THROWS_AS(load_feature_table(write("dup.csv", "id,label,f0\nr0,x,1\nr0,x,2\n")), InputError);
    CHECK_THROWS_AS(load_feature_table(write("empty.csv", "")), InputError);
}

TEST_CASE("valid manifest round trips through json and disk") {
    const DatasetManifest m = small_manifest();
    CHECK(validate_manifest(m).empty());

    const DatasetManifest back = manifest_from_json(manifest_to_json(m));
    CHECK(back == m);

    const auto path = temp_dir() / "manifest.json";
    save_manifest(m, path);
    CHECK(load_manifest(path) == m);
}

TEST_CASE("each violation is reported once with the offending id") {
    SUBCASE("synthetic label disagrees with its parent") {
        DatasetManifest m = small_manifest();
        m.synthetics[0].class_label = "dog";  // parent r0 is a cat
        const auto v = validate_manifest(m);
        REQUIRE(v.size() == 1);
        CHECK(v[0].record_id == "s0");
        CHECK(v[0].rule == "label-mismatch");
    }
    SUBCASE("confidence outside [0,1]") {
        DatasetManifest m = small_manifest();
        m.synthetics[0].confidence = 1.3;
        const auto v = validate_manifest(m);
        REQUIRE(v.size() == 1);
        CHECK(v[0].record_id == "s0");
        CHECK(v[0].rule == "confidence-range");
    }
    SUBCASE("duplicate id across kinds") {
        DatasetManifest m = small_manifest();
        m.synthetics[1].id = "r0";
        const auto v = validate_manifest(m);
        REQUIRE(v.size() == 1);
        CHECK(v[0].rule == "duplicate-id");
    }
    SUBCASE("unresolved parent") {
        DatasetManifest m = small_manifest();
        m.synthetics[0].parent_real_id = "ghost";
        const auto v = validate_manifest(m);
        REQUIRE(v.size() == 1);
        CHECK(v[0].rule == "missing-parent");
    }
    SUBCASE("class not in the class list") {
        DatasetManifest m = small_manifest();
        m.reals[0].class_label = "bird";
        const auto v = validate_manifest(m);
        // the real is wrong, and its synthetic now disagrees with it
        CHECK(v.size() == 2);
        CHECK(v[0].rule == "unknown-class");
    }
    SUBCASE("negative noise variance") {
        DatasetManifest m = small_manifest();
        m.synthetics[1].noise_variance = -0.5;
        const auto v = validate_manifest(m);
        REQUIRE(v.size() == 1);
        CHECK(v[0].rule == "negative-variance");
    }
}

TEST_CASE("saving an invalid manifest is refused") {
    DatasetManifest m = small_manifest();
    m.synthetics[0].confidence = 2.0;
    CHECK_THROWS_AS(save_manifest(m, temp_dir() / "never.json"), InputError);
    CHECK(!std::filesystem::exists(temp_dir() / "never.json"));
}

TEST_CASE("manifest json rejects missing fields and garbage") {
    CHECK_THROWS_AS(manifest_from_json("not json at all"), InputError);
    CHECK_THROWS_AS(manifest_from_json("{}"), InputError);
    CHECK_THROWS_AS(manifest_from_json(R"({"classes":[],"reals":[],"synthetics":[]})"), InputError);
    CHECK_THROWS_AS(
        manifest_from_json(
            R"({"classes":["a"],"reals":[{"id":"r0"}],"synthetics":[],"config_fingerprint":"x"})"),
        InputError);
}

TEST_CASE("random manifests survive the json round trip") {
    Rng rng(31337);
    for (int trial = 0; trial < 20; ++trial) {
        DatasetManifest m;
        const int n_classes = 1 + static_cast<int>(rng.uniform_below(4));
        for (int c = 0; c < n_classes; ++c) m.classes.push_back("class" + std::to_string(c));
        const int n_reals = 1 + static_cast<int>(rng.uniform_below(6));
        for (int r = 0; r < n_reals; ++r) {
            RealImageRecord real;
            real.id = "r" + std::to_string(r);
            real.class_label = m.classes[rng.uniform_below(m.classes.size())];
            real.image_ref = "ref/" + real.id;
            if (rng.uniform01() < 0.5) real.feature_row = r;
            const int n_syn = static_cast<int>(rng.uniform_below(4));
            for (int s = 0; s < n_syn; ++s) {
                SyntheticImageRecord syn;
                syn.id = real.id + "-syn-" + std::to_string(s);
                syn.parent_real_id = real.id;
                syn.class_label = real.class_label;
                syn.prompt_id = "p" + std::to_string(s);
                syn.noise_variance = rng.uniform01() * 0.05;
                syn.noise_seed = static_cast<std::int64_t>(rng.next_u64());
                syn.generation_seed = static_cast<std::int64_t>(rng.next_u64());
                if (rng.uniform01() < 0.5) syn.confidence = rng.uniform01();
                m.synthetics.push_back(std::move(syn));
            }
            m.reals.push_back(std::move(real));
        }
        m.config_fingerprint = "fp";
        REQUIRE(validate_manifest(m).empty());
        CHECK(manifest_from_json(manifest_to_json(m)) == m);
    }
}

TEST_CASE("pipeline config validation and fingerprint") {
    PipelineConfig good;
    check_pipeline_config(good);
    CHECK(good.noise_variances == std::vector<double>{0.005, 0.01, 0.025});
    CHECK(good.synthetics_per_real == 10);
    CHECK(good.prompts_per_class == 10);
    CHECK(good.strength == 0.7);
    CHECK(good.guidance_scale == 15.0);
    CHECK(good.synthetic_probability == 0.7);
    CHECK(good.knn_k == 5);

    PipelineConfig bad = good;
    bad.strength = 1.2;
    CHECK_THROWS_AS(check_pipeline_config(bad), InputError);
    bad = good;
    bad.noise_variances = {};
    CHECK_THROWS_AS(check_pipeline_config(bad), InputError);
    bad = good;
    bad.noise_variances = {-0.1};
    CHECK_THROWS_AS(check_pipeline_config(bad), InputError);
    bad = good;
    bad.synthetic_probability = -0.2;
    CHECK_THROWS_AS(check_pipeline_config(bad), InputError);
    bad = good;
    bad.knn_k = 0;
    CHECK_THROWS_AS(check_pipeline_config(bad), InputError);

    CHECK(config_fingerprint(good) == config_fingerprint(PipelineConfig{}));
    PipelineConfig changed = good;
    changed.master_seed = 99;
    CHECK(config_fingerprint(changed) != config_fingerprint(good));
    changed = good;
    changed.per_class_noise_variances["cat"] = {0.01};
    CHECK(config_fingerprint(changed) != config_fingerprint(good));
    changed = good;
    changed.strength = 0.71;
    CHECK(config_fingerprint(changed) != config_fingerprint(good));
}

TEST_CASE("format_double survives the parse round trip") {
    for (const double v : {0.0, -0.0, 1.0 / 3.0, 1e-308, 123456.789, -2.5e17}) {
        const auto text = format_double(v);
        const auto back = parse_double(text);
        REQUIRE(back.has_value());
        CHECK(*back == v);
    }
    CHECK(!parse_double("1.5x"));
    CHECK(!parse_double(""));
    CHECK(!parse_double("nan"));
    CHECK(!parse_double("inf"));
}
