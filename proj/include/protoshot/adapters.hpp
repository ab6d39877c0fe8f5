#pragma once

// Slide-level classifiers over pooled patch embeddings:
//   visionshot  - prototypes from the top-K patches most similar to the class text vector
//   simpleshot  - prototypes from the mean of all patches
//   mizero      - zero-shot, mean patch-text similarity (average pooling, no smoothing)
//   tip-adapter - slide-level key/value cache blended with the zero-shot text logits

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "protoshot/embedstore.hpp"

namespace protoshot {

enum class Method { VisionShot, SimpleShot, MiZero, TipAdapter };

std::string_view method_name(Method method) noexcept;
// Accepts "visionshot", "simpleshot", "mizero", "tip-adapter" (also "tip"). Throws InvalidConfig.
Method parse_method(std::string_view name);

struct PrototypeSet {
    std::size_t num_classes = 0;
    std::size_t dim = 0;
    std::vector<double> prototypes;  // C x D, row-major
    bool normalized = true;
    // Patches pooled per support slide; 0 means all of them.
    std::size_t top_k = 0;
    std::vector<std::vector<std::string>> support;  // slide ids per class
    std::vector<std::string> class_names;

    std::span<const double> row(std::size_t cls) const noexcept {
        return {prototypes.data() + cls * dim, dim};
    }
};

struct SlidePrediction {
    std::string slide_id;
    std::vector<double> class_scores;
    int predicted = 0;
    Method method = Method::VisionShot;
};

// One-hot values are kept implicitly through `labels`; value(m, c) exposes the matrix.
struct CacheModel {
    std::size_t num_classes = 0;
    std::size_t dim = 0;
    std::vector<double> keys;  // M x D, unit rows
    std::vector<int> labels;   // length M
    double alpha = 1.0;
    double beta = 5.5;

    std::size_t size() const noexcept { return labels.size(); }
    std::span<const double> key(std::size_t m) const noexcept { return {keys.data() + m * dim, dim}; }
    double value(std::size_t m, std::size_t cls) const noexcept {
        return labels[m] == static_cast<int>(cls) ? 1.0 : 0.0;
    }
};

inline constexpr double kDefaultTipAlpha = 1.0;
inline constexpr double kDefaultTipBeta = 5.5;

// Index of the largest score; ties go to the lowest index.
int argmax_lowest(std::span<const double> scores) noexcept;

// Mean of the top-k patches ranked by similarity to `class_vector`.
// The bag must carry a label (this is the support-side embedding).
std::vector<double> visionshot_slide_embedding(const SlideBag& bag, std::span<const double> class_vector,
                                               std::size_t k);

// Prototype W_c = mean over class-c support slides of their VisionShot
// embeddings against the classifier's canonical vector for c.
PrototypeSet build_prototypes(std::span<const SlideBag> support, const TextClassifier& classifier,
                              std::size_t k, bool normalize_prototypes = true);

PrototypeSet simpleshot_prototypes(std::span<const SlideBag> support, std::size_t num_classes,
                                   bool normalize_prototypes = true);

// Builds prototypes from precomputed per-slide embeddings (one per support slide,
// same order). Shared by both builders and by the evaluation grid's cache.
// Every label must lie in [0, num_classes).
PrototypeSet prototypes_from_embeddings(std::span<const std::string> slide_ids, std::span<const int> labels,
                                        std::span<const std::vector<double>> embeddings,
                                        std::size_t num_classes, std::size_t top_k,
                                        bool normalize_prototypes);

// argmax(W Z) with Z the mean of all patches. The bag label is ignored.
SlidePrediction predict_prototype(const SlideBag& bag, const PrototypeSet& prototypes);
SlidePrediction predict_prototype(std::string slide_id, std::span<const double> pooled,
                                  const PrototypeSet& prototypes);

SlidePrediction mizero_predict(const SlideBag& bag, const TextClassifier& classifier, std::size_t prompt_index);
SlidePrediction mizero_predict(std::string slide_id, std::span<const double> pooled,
                               const TextClassifier& classifier, std::size_t prompt_index);

// Cache keys are the re-normalized mean of all patches of each support slide.
CacheModel build_cache(std::span<const SlideBag> support, std::size_t num_classes,
                       double alpha = kDefaultTipAlpha, double beta = kDefaultTipBeta);
CacheModel build_cache(std::span<const int> labels, std::span<const std::vector<double>> pooled,
                       std::size_t num_classes, double alpha, double beta);

// scores_c = alpha * sum_m exp(-beta (1 - <q, key_m>)) value(m, c) + <q, canonical_c>
// with q the re-normalized mean of all patches.
SlidePrediction tip_adapter_predict(const SlideBag& bag, const CacheModel& cache, const TextClassifier& classifier);
SlidePrediction tip_adapter_predict(std::string slide_id, std::span<const double> pooled,
                                    const CacheModel& cache, const TextClassifier& classifier);

// Binary matrix (C rows, float32) plus JSON sidecar.
void save_prototypes(const PrototypeSet& prototypes, const std::filesystem::path& path);
PrototypeSet load_prototypes(const std::filesystem::path& path);

}  // namespace protoshot
