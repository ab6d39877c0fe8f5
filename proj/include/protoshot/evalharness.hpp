#pragma once

// Evaluation protocol: stratified folds, seeded few-shot draws, metrics,
// the (method x fold x seed x k x top-K) grid, and report serialization.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "protoshot/adapters.hpp"
#include "protoshot/embedstore.hpp"

namespace protoshot {

struct FoldAssignment {
    std::size_t num_folds = 0;
    std::uint64_t seed = 0;
    std::map<std::string, std::size_t> fold_of;
};

// Within each class (ascending index), slides are shuffled with a stream seeded
// by mix_seed(seed, {class}) and dealt round-robin; the deal continues across
// classes so overall fold sizes also stay within one of each other.
// Throws ClassTooSmall, LengthMismatch, InvalidConfig.
FoldAssignment stratified_kfold(std::span<const std::string> slide_ids, std::span<const int> labels,
                                std::size_t num_folds, std::uint64_t seed);

struct FewShotDraw {
    std::size_t k = 0;
    std::uint64_t seed = 0;
    std::vector<std::vector<std::string>> by_class;

    std::vector<std::string> support_ids() const;
};

// Uniform sampling without replacement, k ids per class, one stream for all
// classes (class order). Throws InsufficientSupport.
FewShotDraw sample_few_shot(const std::vector<std::vector<std::string>>& train_ids, std::size_t k,
                            std::uint64_t seed);

struct BalancedAccuracy {
    double value = 0.0;
    std::vector<double> recalls;
};

// Mean per-class recall over classes [0, num_classes). Throws LengthMismatch,
// ClassAbsent (a class with no true members), IndexOutOfRange.
BalancedAccuracy balanced_accuracy(std::span<const int> predicted, std::span<const int> labels,
                                   std::size_t num_classes);
BalancedAccuracy balanced_accuracy(std::span<const SlidePrediction> predictions, std::span<const int> labels,
                                   std::size_t num_classes);

struct DenseMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;

    std::span<const double> row(std::size_t i) const noexcept { return {values.data() + i * cols, cols}; }
};

// Mean Euclidean silhouette. Singleton clusters and a == b == 0 score 0.
// Throws TooFewPoints, SingleCluster, LengthMismatch.
double silhouette(const DenseMatrix& points, std::span<const int> labels);

// Projection on the top two principal components of the centered rows
// (covariance eigendecomposition). Each component's sign is fixed so that its
// largest-magnitude loading is positive. Throws TooFewPoints for M < 2.
DenseMatrix pca_2d(const DenseMatrix& points);

enum class EmbeddingKind { Bgap, VisionShot };

struct EmbeddingTable {
    std::vector<std::string> slide_ids;
    std::vector<int> labels;
    DenseMatrix rows;
};

// One pooled row per labeled slide: plain mean of all patches, or the
// VisionShot embedding against the slide's own class vector.
EmbeddingTable embedding_table(std::span<const SlideBag> bags, EmbeddingKind kind,
                               const TextClassifier& classifier, std::size_t top_k);

// CSV `slide_id,label,pc1,pc2`.
void write_embedding_csv(const EmbeddingTable& table, const DenseMatrix& projection, std::ostream& sink);

struct GridConfig {
    std::vector<Method> methods{Method::VisionShot, Method::SimpleShot, Method::MiZero, Method::TipAdapter};
    std::size_t num_folds = 5;
    std::uint64_t base_seed = 0;
    // Empty means default_seeds(base_seed).
    std::vector<std::uint64_t> seeds;
    std::vector<std::size_t> k_grid{2, 4, 8, 16};
    std::vector<std::size_t> topk_grid{2, 20, 200, 2000};
    double tip_alpha = kDefaultTipAlpha;
    double tip_beta = kDefaultTipBeta;
    bool normalize_prototypes = true;
    // Execution only; never affects the report.
    unsigned threads = 1;
};

std::vector<std::uint64_t> default_seeds(std::uint64_t base_seed, std::size_t count = 5);

struct EvalRecord {
    Method method = Method::VisionShot;
    std::size_t fold = 0;
    std::uint64_t seed = 0;  // 0 for mizero
    std::size_t k = 0;       // 0 for mizero
    std::size_t top_k = 0;   // 0 = all patches
    std::optional<std::size_t> prompt;               // mizero only
    std::optional<std::size_t> min_effective_top_k;  // visionshot only
    double balanced_accuracy = 0.0;
    std::vector<double> recalls;
};

struct Aggregate {
    Method method = Method::VisionShot;
    std::size_t k = 0;
    std::size_t top_k = 0;
    double mean = 0.0;
    double std = 0.0;  // sample std over replicates (seeds, or prompts for mizero)
    std::size_t replicates = 0;
    std::size_t records = 0;
};

struct EvalReport {
    nlohmann::json config;
    std::vector<EvalRecord> records;
    std::vector<Aggregate> aggregates;
};

// Fold means per replicate, then mean and sample standard deviation across
// replicates, per (method, k, top_k).
std::vector<Aggregate> aggregate_records(std::span<const EvalRecord> records);

void sort_records(std::vector<EvalRecord>& records);

// The fold assignment and support draws run_grid uses.
FoldAssignment grid_folds(const Dataset& dataset, std::uint64_t base_seed, std::size_t num_folds);
FewShotDraw draw_support(const Dataset& dataset, const FoldAssignment& folds, std::size_t fold, std::uint64_t seed,
                         std::size_t k);

EvalReport run_grid(const Dataset& dataset, const TextClassifier& classifier, const GridConfig& config);

// JSON with sorted keys and 17-significant-digit floats.
void write_report_json(const EvalReport& report, std::ostream& sink);
// CSV `method,fold,seed,k,top_k,balanced_accuracy`, 6 significant digits.
void write_report_csv(const EvalReport& report, std::ostream& sink);
// Throws MalformedReport.
EvalReport read_report_json(std::istream& source);

// Canonical JSON text: sorted keys, %.17g doubles, two-space indent.
std::string canonical_json(const nlohmann::json& value);

}  // namespace protoshot
