#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "diagen/dataset.hpp"

namespace diagen {

/// A learned concept embedding: the placeholder token used in prompts plus
/// the vector the text-to-image model conditions on.
struct ClassEmbedding {
    std::string token;
    std::vector<double> vector;

    bool operator==(const ClassEmbedding&) const = default;
};

using EmbeddingStore = std::map<std::string, ClassEmbedding>;

/// Adds i.i.d. zero-mean gaussian noise with the given variance to every
/// coordinate. Draws come from an Rng seeded with `seed`; coordinate i
/// consumes engine draws 2i and 2i+1, so results are reproducible for a
/// fixed seed regardless of caller state. variance == 0 returns the input
/// unchanged without consuming any randomness.
std::vector<double> perturb_embedding(const std::vector<double>& base, double variance,
                                      std::uint64_t seed);

/// Variance used for the m-th synthetic of a class: the configured cycle
/// indexed by m modulo its length. Per-class overrides in the config win
/// over the global cycle.
double variance_for(const PipelineConfig& config, const std::string& class_label,
                    int synthetic_index);

EmbeddingStore load_embeddings(const std::filesystem::path& path);
void save_embeddings(const EmbeddingStore& store, const std::filesystem::path& path);

}  // namespace diagen
