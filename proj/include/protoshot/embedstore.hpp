#pragma once

// Core data model and the on-disk formats for patch embeddings.
//
// Embedding file (little-endian):
//   bytes 0-3   magic "PSE1"
//   bytes 4-7   uint32 rows N
//   bytes 8-11  uint32 dim D
//   bytes 12-15 reserved, zero
//   then N*D float32 values, row-major.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace protoshot {

inline constexpr double kUnitNormTolerance = 1e-4;
inline constexpr double kMinRowNorm = 1e-8;
inline constexpr std::size_t kHeaderBytes = 16;

// N x D float32 matrix, row-major. Rows are patches.
class PatchMatrix {
public:
    // Throws InvalidShape (N < 1, D < 2, size mismatch) or NonFiniteValue.
    PatchMatrix(std::size_t rows, std::size_t dim, std::vector<float> values);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t dim() const noexcept { return dim_; }
    std::span<const float> values() const noexcept { return values_; }
    std::span<const float> row(std::size_t i) const noexcept {
        return {values_.data() + i * dim_, dim_};
    }

    // True when every row norm is within `tolerance` of 1.
    bool is_normalized(double tolerance = kUnitNormTolerance) const noexcept;

    friend bool operator==(const PatchMatrix&, const PatchMatrix&) = default;

private:
    std::size_t rows_;
    std::size_t dim_;
    std::vector<float> values_;
};

// Divides every row by its L2 norm (accumulated in double).
// Throws ZeroVectorRow(index) or NonFiniteValue(index).
PatchMatrix normalize(const PatchMatrix& matrix);

struct SlideBag {
    std::string slide_id;
    std::optional<int> label;
    PatchMatrix patches;
};

// P x C x D unit vectors, prompt-major: row p*C + c is prompt p's vector for class c.
class TextClassifier {
public:
    TextClassifier(std::size_t num_classes, std::size_t num_prompts, PatchMatrix weights,
                   std::vector<std::string> class_names = {});

    std::size_t num_classes() const noexcept { return num_classes_; }
    std::size_t num_prompts() const noexcept { return num_prompts_; }
    std::size_t dim() const noexcept { return weights_.dim(); }
    const std::vector<std::string>& class_names() const noexcept { return class_names_; }
    const PatchMatrix& weights() const noexcept { return weights_; }

    std::span<const float> vector(std::size_t prompt, std::size_t cls) const noexcept {
        return weights_.row(prompt * num_classes_ + cls);
    }

    // Per-class mean over prompts, re-normalized. C x D, row-major, double.
    // With one prompt this is the prompt's vectors widened to double.
    const std::vector<double>& canonical() const noexcept { return canonical_; }
    std::span<const double> canonical(std::size_t cls) const noexcept {
        return {canonical_.data() + cls * dim(), dim()};
    }

private:
    std::size_t num_classes_;
    std::size_t num_prompts_;
    PatchMatrix weights_;
    std::vector<std::string> class_names_;
    std::vector<double> canonical_;
};

struct ManifestEntry {
    std::string slide_id;
    std::string class_name;
    std::string path;
    std::size_t num_patches = 0;
};

struct DatasetManifest {
    std::vector<std::string> classes;
    std::vector<ManifestEntry> slides;

    // Position of `name` in `classes`, or nullopt.
    std::optional<int> class_index(const std::string& name) const;
};

struct Dataset {
    DatasetManifest manifest;
    std::vector<SlideBag> bags;  // bags[i] <-> manifest.slides[i]

    std::size_t num_classes() const noexcept { return manifest.classes.size(); }
    std::size_t dim() const noexcept { return bags.empty() ? 0 : bags.front().patches.dim(); }
};

struct LoadOptions {
    // Re-normalize rows instead of rejecting data that is not unit norm.
    bool renormalize = false;
};

// Binary format. Returns bytes written (16 + 4*N*D). Throws IoFailure.
std::size_t write_embeddings(const PatchMatrix& matrix, std::ostream& sink);

// Throws BadMagic, BadHeader, DimensionZero, InvalidShape, TruncatedPayload,
// TrailingBytes, NonFiniteValue, IoFailure.
PatchMatrix read_embeddings(std::istream& source);

std::size_t write_embeddings_file(const PatchMatrix& matrix, const std::filesystem::path& path);
PatchMatrix read_embeddings_file(const std::filesystem::path& path);

// Applies the load-time normalization policy: returns the matrix unchanged if
// it is unit norm, the re-normalized matrix if options.renormalize, otherwise
// throws NotNormalized.
PatchMatrix apply_norm_policy(PatchMatrix matrix, const LoadOptions& options, const std::string& what);

// JSON-lines manifest.
DatasetManifest parse_manifest(std::istream& source);
void write_manifest(const DatasetManifest& manifest, std::ostream& sink);

// Reads the manifest at `path` and every referenced embedding file relative
// to `root`. Bags keep manifest order.
Dataset load_manifest(const std::filesystem::path& path, const std::filesystem::path& root,
                      const LoadOptions& options = {});

// Sidecar for binary matrices: "foo.pse" -> "foo.json".
std::filesystem::path sidecar_path(const std::filesystem::path& matrix_path);

TextClassifier load_text_classifier(const std::filesystem::path& path, const LoadOptions& options = {});
void save_text_classifier(const TextClassifier& classifier, const std::filesystem::path& path);

}  // namespace protoshot
