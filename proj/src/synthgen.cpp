#include "protoshot/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "protoshot/error.hpp"
#include "protoshot/rng.hpp"

namespace protoshot {
namespace {

std::vector<double> gaussian(Rng& rng, std::size_t dim) {
    std::vector<double> v(dim);
    for (auto& x : v) x = standard_normal(rng);
    return v;
}

double norm(const std::vector<double>& v) {
    double s = 0.0;
    for (const double x : v) s += x * x;
    return std::sqrt(s);
}

void append_unit(const std::vector<double>& v, std::vector<float>& out) {
    const double n = norm(v);
    for (const double x : v) out.push_back(static_cast<float>(x / n));
}

std::vector<std::vector<double>> class_directions(Rng& rng, std::size_t classes, std::size_t dim) {
    std::vector<std::vector<double>> dirs;
    while (dirs.size() < classes) {
        auto v = gaussian(rng, dim);
        for (const auto& d : dirs) {
            double proj = 0.0;
            for (std::size_t j = 0; j < dim; ++j) proj += v[j] * d[j];
            for (std::size_t j = 0; j < dim; ++j) v[j] -= proj * d[j];
        }
        const double n = norm(v);
        if (n < 1e-6) continue;  // degenerate draw, resample
        for (auto& x : v) x /= n;
        dirs.push_back(std::move(v));
    }
    return dirs;
}

std::string slide_name(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "slide_%04zu", index);
    return buf;
}

}  // namespace

void validate(const SynthConfig& c) {
    auto fail = [](const std::string& why) { throw Error(Errc::InvalidConfig, why); };
    if (c.num_classes < 2) fail("need at least 2 classes");
    if (c.dim < 2) fail("dim must be at least 2");
    if (c.num_classes > c.dim) fail("classes must not exceed dim");
    if (c.slides_per_class < 1) fail("slides_per_class must be positive");
    if (c.min_patches < 1 || c.min_patches > c.max_patches) fail("patch range must satisfy 1 <= min <= max");
    if (!(c.informative_fraction >= 0.0 && c.informative_fraction <= 1.0)) fail("rho must lie in [0, 1]");
    if (!(c.concentration >= 0.0) || !std::isfinite(c.concentration)) fail("kappa must be >= 0");
}

std::size_t informative_count(double rho, std::size_t n) {
    const double exact = rho * static_cast<double>(n);
    const auto count = static_cast<std::size_t>(std::ceil(exact - 1e-9 * std::max(1.0, exact)));
    return std::min(count, n);
}

SynthDataset generate(const SynthConfig& config) {
    validate(config);
    Rng rng(config.seed);
    const std::size_t dim = config.dim;
    const auto dirs = class_directions(rng, config.num_classes, dim);

    Dataset dataset;
    for (std::size_t c = 0; c < config.num_classes; ++c) dataset.manifest.classes.push_back("class_" + std::to_string(c));

    std::vector<std::vector<std::size_t>> informative_rows;
    std::size_t index = 0;
    for (std::size_t c = 0; c < config.num_classes; ++c) {
        for (std::size_t s = 0; s < config.slides_per_class; ++s, ++index) {
            const auto n = static_cast<std::size_t>(uniform_between(rng, config.min_patches, config.max_patches));
            const auto informative = informative_count(config.informative_fraction, n);

            // Row order: a random permutation decides where the informative patches land.
            std::vector<std::size_t> slots(n);
            for (std::size_t i = 0; i < n; ++i) slots[i] = i;
            shuffle(std::span<std::size_t>(slots), rng);
            std::vector<char> is_informative(n, 0);
            for (std::size_t i = 0; i < informative; ++i) is_informative[slots[i]] = 1;

            std::vector<float> values;
            values.reserve(n * dim);
            std::vector<std::size_t> rows;
            for (std::size_t r = 0; r < n; ++r) {
                auto g = gaussian(rng, dim);
                if (is_informative[r]) {
                    for (std::size_t j = 0; j < dim; ++j) g[j] = dirs[c][j] + config.concentration * g[j];
                    rows.push_back(r);
                }
                append_unit(g, values);
            }
            const auto id = slide_name(index);
            dataset.manifest.slides.push_back({id, dataset.manifest.classes[c], "slides/" + id + ".pse", n});
            dataset.bags.push_back({id, static_cast<int>(c), PatchMatrix(n, dim, std::move(values))});
            informative_rows.push_back(std::move(rows));
        }
    }

    std::vector<float> weights;
    for (const auto& d : dirs) append_unit(d, weights);
    TextClassifier classifier(config.num_classes, 1, PatchMatrix(config.num_classes, dim, std::move(weights)),
                              dataset.manifest.classes);
    return SynthDataset{std::move(dataset), std::move(classifier), std::move(informative_rows)};
}

nlohmann::json to_json(const SynthConfig& c) {
    return {{"num_classes", c.num_classes},
            {"dim", c.dim},
            {"slides_per_class", c.slides_per_class},
            {"min_patches", c.min_patches},
            {"max_patches", c.max_patches},
            {"informative_fraction", c.informative_fraction},
            {"concentration", c.concentration},
            {"seed", c.seed},
            {"noise", "g ~ N(0, I_D); informative = normalize(dir_c + kappa * g); background = normalize(g)"},
            {"prng", "std::mt19937_64, single stream"}};
}

void write_synth_dataset(const SynthDataset& synth, const SynthConfig& config, const std::filesystem::path& out_dir) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir / "slides", ec);
    if (ec) throw Error(Errc::IoFailure, "cannot create " + (out_dir / "slides").string() + ": " + ec.message());

    const auto& manifest = synth.dataset.manifest;
    for (std::size_t i = 0; i < synth.dataset.bags.size(); ++i) {
        write_embeddings_file(synth.dataset.bags[i].patches, out_dir / manifest.slides[i].path);
    }
    {
        std::ofstream out(out_dir / "manifest.jsonl", std::ios::trunc);
        if (!out) throw Error(Errc::IoFailure, "cannot write manifest.jsonl");
        write_manifest(manifest, out);
    }
    save_text_classifier(synth.classifier, out_dir / "classifier.pse");
    std::ofstream cfg(out_dir / "synth_config.json", std::ios::trunc);
    cfg << to_json(config).dump(2) << '\n';
    if (!cfg) throw Error(Errc::IoFailure, "cannot write synth_config.json");
}

}  // namespace protoshot
