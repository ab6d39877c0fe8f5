#pragma once

// Synthetic labeled bags on the unit sphere. Each class owns one direction
// (an orthonormal set obtained by Gram-Schmidt on Gaussian draws, i.e. a random
// rotation of the first C basis vectors). A slide of class c holds
// ceil(rho * N) informative patches normalize(dir_c + kappa * g) and N minus
// that many background patches normalize(g), with g ~ N(0, I_D), at shuffled
// positions. Everything comes from one mt19937_64 stream seeded with `seed`.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include <json.hpp>

#include "protoshot/embedstore.hpp"

namespace protoshot {

struct SynthConfig {
    std::size_t num_classes = 3;
    std::size_t dim = 64;
    std::size_t slides_per_class = 40;
    std::size_t min_patches = 400;
    std::size_t max_patches = 600;
    double informative_fraction = 0.05;
    double concentration = 1.0;
    std::uint64_t seed = 7;
};

// Throws InvalidConfig.
void validate(const SynthConfig& config);

// ceil(rho * n) with a small tolerance so that e.g. 0.05 * 400 gives 20.
std::size_t informative_count(double rho, std::size_t n);

struct SynthDataset {
    Dataset dataset;
    TextClassifier classifier;  // P = 1, rows are the class directions
    // Per slide, which rows are informative (ascending).
    std::vector<std::vector<std::size_t>> informative_rows;
};

SynthDataset generate(const SynthConfig& config);

nlohmann::json to_json(const SynthConfig& config);

// Writes manifest.jsonl, slides/<id>.pse, classifier.pse + classifier.json and
// synth_config.json under `out_dir` (created if needed).
void write_synth_dataset(const SynthDataset& synth, const SynthConfig& config, const std::filesystem::path& out_dir);

}  // namespace protoshot
