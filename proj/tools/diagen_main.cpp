#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "diagen/backends.hpp"
#include "diagen/dataset.hpp"
#include "diagen/embeddings.hpp"
#include "diagen/errors.hpp"
#include "diagen/io_util.hpp"
#include "diagen/metrics.hpp"
#include "diagen/prompts.hpp"
#include "diagen/rng.hpp"
#include "diagen/weighting.hpp"

namespace {

using diagen::InputError;
using nlohmann::json;

struct RunConfig {
    diagen::PipelineConfig pipeline;
    double validation_split = 0.25;
    bool allow_fallback = true;
    bool per_class = false;
    std::string llm_endpoint;  // empty: grammar fallback only
    std::string t2i_endpoint = "mock:";
    int llm_retries = 3;
    int timeout_seconds = 120;
    int max_in_flight = 4;
    std::string output_dir = "out";
    std::map<std::string, std::string> paths;
};

const std::map<std::string, std::string> kDefaultNames{
    {"manifest", "manifest.json"},
    {"augmented_manifest", "augmented.json"},
    {"embeddings", "embeddings.json"},
    {"prompts", "prompts.json"},
    {"real_features", "features_real.csv"},
    {"synthetic_features", "features_synthetic.csv"},
    {"scores", "scores.csv"},
    {"distribution", "distribution.csv"},
    {"report", "report.json"},
    {"stream", "stream.txt"},
    {"calibration", "calibration.json"},
};

std::filesystem::path resolve(const RunConfig& cfg, const std::string& name) {
    if (const auto it = cfg.paths.find(name); it != cfg.paths.end())
        return std::filesystem::path(it->second);
    return std::filesystem::path(cfg.output_dir) / kDefaultNames.at(name);
}

template <typename T>
void take(const json& j, const char* key, T& into) {
    if (!j.contains(key)) return;
    try {
        into = j.at(key).get<T>();
    } catch (const json::exception&) {
        throw InputError(std::string("config: bad value for '") + key + "'");
    }
}

RunConfig load_run_config(const std::string& path) {
    json j;
    try {
        j = json::parse(diagen::read_file(path));
    } catch (const json::exception& e) {
        throw InputError(std::string("config: invalid JSON: ") + e.what());
    }
    static const std::set<std::string> known{
        "master_seed",      "examples_per_class",  "synthetics_per_real",
        "prompts_per_class", "noise_variances",    "per_class_noise_variances",
        "strength",         "guidance_scale",      "synthetic_probability",
        "knn_k",            "validation_split",    "allow_fallback",
        "per_class",        "llm_endpoint",        "t2i_endpoint",
        "llm_retries",      "timeout_seconds",     "max_in_flight",
        "output_dir",       "paths"};
    for (const auto& [key, value] : j.items())
        if (!known.count(key)) throw InputError("config: unknown key '" + key + "'");

    RunConfig cfg;
    auto& p = cfg.pipeline;
    take(j, "master_seed", p.master_seed);
    take(j, "examples_per_class", p.examples_per_class);
    take(j, "synthetics_per_real", p.synthetics_per_real);
    take(j, "prompts_per_class", p.prompts_per_class);
    take(j, "noise_variances", p.noise_variances);
    take(j, "per_class_noise_variances", p.per_class_noise_variances);
    take(j, "strength", p.strength);
    take(j, "guidance_scale", p.guidance_scale);
    take(j, "synthetic_probability", p.synthetic_probability);
    take(j, "knn_k", p.knn_k);
    take(j, "validation_split", cfg.validation_split);
    take(j, "allow_fallback", cfg.allow_fallback);
    take(j, "per_class", cfg.per_class);
    take(j, "llm_endpoint", cfg.llm_endpoint);
    take(j, "t2i_endpoint", cfg.t2i_endpoint);
    take(j, "llm_retries", cfg.llm_retries);
    take(j, "timeout_seconds", cfg.timeout_seconds);
    take(j, "max_in_flight", cfg.max_in_flight);
    take(j, "output_dir", cfg.output_dir);
    if (j.contains("paths")) {
        std::map<std::string, std::string> paths;
        take(j, "paths", paths);
        for (const auto& [key, value] : paths)
            if (!kDefaultNames.count(key)) throw InputError("config: unknown path '" + key + "'");
        cfg.paths = std::move(paths);
    }
    return cfg;
}

void apply_overrides(RunConfig& cfg, const std::optional<std::int64_t>& seed_flag,
                     const std::string& out_flag) {
    if (const char* ep = std::getenv("DIAGEN_T2I_ENDPOINT"); ep && *ep) cfg.t2i_endpoint = ep;
    if (const char* ep = std::getenv("DIAGEN_LLM_ENDPOINT"); ep && *ep) cfg.llm_endpoint = ep;
    if (const char* seed = std::getenv("DIAGEN_SEED"); seed && *seed) {
        try {
            cfg.pipeline.master_seed = std::stoll(seed);
        } catch (const std::exception&) {
            throw InputError("DIAGEN_SEED is not an integer");
        }
    }
    if (seed_flag) cfg.pipeline.master_seed = *seed_flag;  // flag beats env beats file
    if (!out_flag.empty()) cfg.output_dir = out_flag;
    diagen::check_pipeline_config(cfg.pipeline);
    if (!(cfg.validation_split > 0.0 && cfg.validation_split < 1.0))
        throw InputError("config: validation_split must be in (0,1)");
}

diagen::HttpClientOptions http_options(const RunConfig& cfg) {
    diagen::HttpClientOptions opt;
    opt.timeout_seconds = cfg.timeout_seconds;
    opt.max_in_flight = cfg.max_in_flight;
    return opt;
}

int cmd_prompts(const RunConfig& cfg) {
    const auto embeddings = diagen::load_embeddings(resolve(cfg, "embeddings"));
    const auto seed = static_cast<std::uint64_t>(cfg.pipeline.master_seed);

    std::unique_ptr<diagen::HttpTextToTextClient> client;
    if (!cfg.llm_endpoint.empty())
        client = std::make_unique<diagen::HttpTextToTextClient>(cfg.llm_endpoint, http_options(cfg));

    std::vector<diagen::PromptRecord> all;
    bool degraded = false;
    for (const auto& [label, emb] : embeddings) {
        std::vector<diagen::PromptRecord> prompts;
        if (client) {
            prompts = diagen::request_prompts(*client, label, emb.token, cfg.pipeline.prompts_per_class,
                                              seed, diagen::default_grammar(), cfg.llm_retries,
                                              cfg.allow_fallback);
            for (const auto& p : prompts) degraded |= p.origin == "fallback";
        } else {
            prompts = diagen::generate_prompts_fallback(label, emb.token,
                                                        cfg.pipeline.prompts_per_class, seed);
        }
        all.insert(all.end(), prompts.begin(), prompts.end());
    }
    if (degraded) std::cerr << "warning: LLM returned too few prompts, fallback filled in\n";
    diagen::save_prompts(all, resolve(cfg, "prompts"));
    std::cout << "prompts=" << all.size() << " classes=" << embeddings.size() << "\n";
    return 0;
}

int cmd_augment(const RunConfig& cfg) {
    const auto manifest = diagen::load_manifest(resolve(cfg, "manifest"));
    const auto embeddings = diagen::load_embeddings(resolve(cfg, "embeddings"));
    const auto prompts = diagen::group_prompts_by_class(diagen::load_prompts(resolve(cfg, "prompts")));

    std::unique_ptr<diagen::TextToImageClient> client;
    if (cfg.t2i_endpoint.rfind("mock:", 0) == 0) {
        // The mock resolves guiding_image locators (image_ref) to features,
        // so rekey the real-feature table from record ids to refs.
        const auto by_id = diagen::load_feature_table(resolve(cfg, "real_features"));
        std::vector<std::string> refs, labels;
        std::vector<double> matrix;
        for (const auto& real : manifest.reals) {
            const auto row = by_id.index_of(real.id);
            if (!row) throw InputError("augment: no feature row for real '" + real.id + "'");
            refs.push_back(real.image_ref);
            labels.push_back(real.class_label);
            const auto span = by_id.row(*row);
            matrix.insert(matrix.end(), span.begin(), span.end());
        }
        diagen::FeatureTable by_ref(std::move(refs), std::move(labels), std::move(matrix),
                                    by_id.dim());
        client = diagen::make_text_to_image_client(cfg.t2i_endpoint, by_ref, http_options(cfg));
    } else {
        client = diagen::make_text_to_image_client(cfg.t2i_endpoint, diagen::FeatureTable{},
                                                   http_options(cfg));
    }

    const auto outcome =
        diagen::orchestrate_augmentation(manifest, embeddings, prompts, *client, cfg.pipeline);
    diagen::save_manifest(outcome.manifest, resolve(cfg, "augmented_manifest"));
    if (outcome.synthetic_features)
        diagen::save_feature_table(*outcome.synthetic_features, resolve(cfg, "synthetic_features"));
    for (const auto& [id, bytes] : outcome.images) {
        const auto dir = std::filesystem::path(cfg.output_dir) / "images";
        std::filesystem::create_directories(dir);
        diagen::atomic_write_file(dir / (id + ".img"),
                                  std::string_view(reinterpret_cast<const char*>(bytes.data()),
                                                   bytes.size()));
    }
    for (const auto& w : outcome.warnings) std::cerr << "warning: " << w << "\n";
    for (const auto& f : outcome.failures)
        std::cerr << "warning: generation failed for real=" << f.real_id
                  << " prompt=" << f.prompt_id << ": " << f.reason << "\n";
    std::cout << "reals=" << outcome.manifest.reals.size()
              << " synthetics=" << outcome.manifest.synthetics.size()
              << " failures=" << outcome.failures.size() << "\n";
    return 0;
}

struct Calibrated {
    diagen::LinearProbe probe;
    diagen::Temperature temperature;
    double nll_at_1 = 0.0;
    double nll_at_t = 0.0;
    std::size_t n_validation = 0;
};

Calibrated train_and_calibrate(const RunConfig& cfg, const diagen::DatasetManifest& manifest,
                               const diagen::FeatureTable& real_features) {
    const auto seed = static_cast<std::uint64_t>(cfg.pipeline.master_seed);
    const auto [train_rows, val_rows] =
        diagen::split_validation(real_features, cfg.validation_split, seed);

    Calibrated out;
    out.probe = diagen::train_probe(real_features.subset(train_rows), manifest.classes);

    std::map<std::string, int> class_index;
    for (std::size_t c = 0; c < manifest.classes.size(); ++c)
        class_index[manifest.classes[c]] = static_cast<int>(c);
    std::vector<std::vector<double>> val_logits;
    std::vector<int> val_labels;
    for (const std::size_t row : val_rows) {
        val_logits.push_back(diagen::logits(out.probe, real_features.row(row)));
        val_labels.push_back(class_index.at(real_features.labels()[row]));
    }
    out.temperature = diagen::calibrate_temperature(val_logits, val_labels);
    out.nll_at_1 = diagen::nll_at_temperature(val_logits, val_labels, 1.0);
    out.nll_at_t = diagen::nll_at_temperature(val_logits, val_labels, out.temperature.value);
    out.n_validation = val_rows.size();
    return out;
}

int cmd_calibrate(const RunConfig& cfg) {
    const auto manifest = diagen::load_manifest(resolve(cfg, "manifest"));
    const auto real_features = diagen::load_feature_table(resolve(cfg, "real_features"));
    const Calibrated cal = train_and_calibrate(cfg, manifest, real_features);

    json j{{"temperature", cal.temperature.value},
           {"nll_at_1", cal.nll_at_1},
           {"nll_at_temperature", cal.nll_at_t},
           {"n_validation", cal.n_validation}};
    diagen::atomic_write_file(resolve(cfg, "calibration"), j.dump(2) + "\n");
    std::cout << "T=" << diagen::format_double(cal.temperature.value) << "\n";
    return 0;
}

int cmd_weigh(const RunConfig& cfg) {
    const auto manifest = diagen::load_manifest(resolve(cfg, "augmented_manifest"));
    const auto real_features = diagen::load_feature_table(resolve(cfg, "real_features"));
    const auto syn_features = diagen::load_feature_table(resolve(cfg, "synthetic_features"));
    const Calibrated cal = train_and_calibrate(cfg, manifest, real_features);

    const auto scores = diagen::score_synthetics(manifest, syn_features, cal.probe, cal.temperature);
    diagen::save_scores(scores, resolve(cfg, "scores"));
    const auto dist =
        diagen::build_distribution(manifest, scores, cfg.pipeline.synthetic_probability);
    diagen::save_distribution(dist, resolve(cfg, "distribution"));
    std::cout << "T=" << diagen::format_double(cal.temperature.value) << "\n";
    return 0;
}

int cmd_sample(const RunConfig& cfg, std::size_t count) {
    const auto dist = diagen::load_distribution(resolve(cfg, "distribution"));
    const auto ids =
        diagen::sample_stream(dist, static_cast<std::uint64_t>(cfg.pipeline.master_seed), count);
    std::string text;
    for (const auto& id : ids) {
        text += id;
        text += '\n';
    }
    diagen::atomic_write_file(resolve(cfg, "stream"), text);
    std::cout << "samples=" << ids.size() << "\n";
    return 0;
}

int cmd_evaluate(const RunConfig& cfg) {
    const auto real_features = diagen::load_feature_table(resolve(cfg, "real_features"));
    const auto syn_features = diagen::load_feature_table(resolve(cfg, "synthetic_features"));
    const auto report =
        diagen::evaluate_pair(real_features, syn_features, cfg.pipeline.knn_k, cfg.per_class);
    diagen::save_report(report, resolve(cfg, "report"));
    std::cout << "precision " << diagen::format_percent(report.precision) << " recall "
              << diagen::format_percent(report.recall) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Synthetic data augmentation toolkit"};
    app.require_subcommand(1);
    app.fallthrough();  // global options may follow the subcommand

    std::string config_path, out_flag;
    std::optional<std::int64_t> seed_flag;
    app.add_option("--config", config_path, "Run configuration file (JSON)");
    app.add_option("--seed", seed_flag, "Master seed (beats DIAGEN_SEED and the config file)");
    app.add_option("--out", out_flag, "Output directory (beats the config file)");

    auto* prompts = app.add_subcommand("prompts", "Generate class prompts");
    auto* augment = app.add_subcommand("augment", "Run the generation loop over the manifest");
    auto* calibrate = app.add_subcommand("calibrate", "Train the probe and calibrate T");
    auto* weigh = app.add_subcommand("weigh", "Score synthetics and build the sampling distribution");
    auto* sample = app.add_subcommand("sample", "Draw a training stream from the distribution");
    auto* evaluate = app.add_subcommand("evaluate", "Precision/recall report for two feature tables");
    std::size_t count = 100;
    sample->add_option("--count", count, "Number of draws");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return 2;
    }

    try {
        RunConfig cfg;
        if (!config_path.empty()) cfg = load_run_config(config_path);
        apply_overrides(cfg, seed_flag, out_flag);
        std::filesystem::create_directories(cfg.output_dir);
        if (prompts->parsed()) return cmd_prompts(cfg);
        if (augment->parsed()) return cmd_augment(cfg);
        if (calibrate->parsed()) return cmd_calibrate(cfg);
        if (weigh->parsed()) return cmd_weigh(cfg);
        if (sample->parsed()) return cmd_sample(cfg, count);
        if (evaluate->parsed()) return cmd_evaluate(cfg);
        return 2;
    } catch (const diagen::TransportError& e) {
        std::cerr << "transport error: " << e.what() << "\n";
        return 3;
    } catch (const InputError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
