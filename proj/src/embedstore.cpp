#include "protoshot/embedstore.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "protoshot/error.hpp"

namespace protoshot {
namespace {

constexpr std::array<char, 4> kMagic = {'P', 'S', 'E', '1'};

double row_norm(std::span<const float> row) noexcept {
    double sum = 0.0;
    for (const float v : row) sum += static_cast<double>(v) * static_cast<double>(v);
    return std::sqrt(sum);
}

void put_u32(char* out, std::uint32_t v) {
    if constexpr (std::endian::native == std::endian::big) v = __builtin_bswap32(v);
    std::memcpy(out, &v, 4);
}

std::uint32_t get_u32(const char* in) {
    std::uint32_t v = 0;
    std::memcpy(&v, in, 4);
    if constexpr (std::endian::native == std::endian::big) v = __builtin_bswap32(v);
    return v;
}

}  // namespace

PatchMatrix::PatchMatrix(std::size_t rows, std::size_t dim, std::vector<float> values)
    : rows_(rows), dim_(dim), values_(std::move(values)) {
    if (rows_ < 1 || dim_ < 2) {
        throw Error(Errc::InvalidShape, "patch matrix needs N >= 1 and D >= 2, got N=" +
                                            std::to_string(rows_) + " D=" + std::to_string(dim_));
    }
    if (values_.size() != rows_ * dim_) {
        throw Error(Errc::InvalidShape, "expected " + std::to_string(rows_ * dim_) + " values, got " +
                                            std::to_string(values_.size()));
    }
    for (std::size_t i = 0; i < values_.size(); ++i) {
        if (!std::isfinite(values_[i])) {
            throw Error(Errc::NonFiniteValue, "row " + std::to_string(i / dim_) + " holds NaN or inf",
                        i / dim_);
        }
    }
}

bool PatchMatrix::is_normalized(double tolerance) const noexcept {
    for (std::size_t i = 0; i < rows_; ++i) {
        if (std::abs(row_norm(row(i)) - 1.0) > tolerance) return false;
    }
    return true;
}

PatchMatrix normalize(const PatchMatrix& matrix) {
    std::vector<float> out(matrix.values().begin(), matrix.values().end());
    const std::size_t dim = matrix.dim();
    for (std::size_t i = 0; i < matrix.rows(); ++i) {
        const double norm = row_norm(matrix.row(i));
        if (!std::isfinite(norm)) {
            throw Error(Errc::NonFiniteValue, "row " + std::to_string(i), i);
        }
        if (norm < kMinRowNorm) {
            throw Error(Errc::ZeroVectorRow, "row " + std::to_string(i) + " has zero norm", i);
        }
        for (std::size_t j = 0; j < dim; ++j) {
            out[i * dim + j] = static_cast<float>(static_cast<double>(out[i * dim + j]) / norm);
        }
    }
    return PatchMatrix(matrix.rows(), dim, std::move(out));
}

TextClassifier::TextClassifier(std::size_t num_classes, std::size_t num_prompts, PatchMatrix weights,
                               std::vector<std::string> class_names)
    : num_classes_(num_classes),
      num_prompts_(num_prompts),
      weights_(std::move(weights)),
      class_names_(std::move(class_names)) {
    if (num_classes_ < 2 || num_prompts_ < 1) {
        throw Error(Errc::InvalidShape, "text classifier needs C >= 2 and P >= 1");
    }
    if (weights_.rows() != num_classes_ * num_prompts_) {
        throw Error(Errc::InvalidShape, "text classifier has " + std::to_string(weights_.rows()) +
                                            " rows, expected P*C = " +
                                            std::to_string(num_classes_ * num_prompts_));
    }
    if (!weights_.is_normalized()) {
        throw Error(Errc::NotNormalized, "text classifier vectors must be unit norm");
    }
    if (class_names_.empty()) {
        for (std::size_t c = 0; c < num_classes_; ++c) class_names_.push_back("class_" + std::to_string(c));
    }
    if (class_names_.size() != num_classes_) {
        throw Error(Errc::InvalidShape, "class_names length does not match num_classes");
    }

    const std::size_t d = dim();
    canonical_.assign(num_classes_ * d, 0.0);
    for (std::size_t c = 0; c < num_classes_; ++c) {
        double* dst = canonical_.data() + c * d;
        for (std::size_t p = 0; p < num_prompts_; ++p) {
            const auto v = vector(p, c);
            for (std::size_t j = 0; j < d; ++j) dst[j] += static_cast<double>(v[j]);
        }
        double norm = 0.0;
        for (std::size_t j = 0; j < d; ++j) norm += dst[j] * dst[j];
        norm = std::sqrt(norm);
        if (norm < kMinRowNorm) {
            throw Error(Errc::ZeroVectorRow, "prompt vectors of class " + std::to_string(c) + " cancel out", c);
        }
        for (std::size_t j = 0; j < d; ++j) dst[j] /= norm;
    }
}

std::size_t write_embeddings(const PatchMatrix& matrix, std::ostream& sink) {
    std::array<char, kHeaderBytes> header{};
    std::memcpy(header.data(), kMagic.data(), 4);
    put_u32(header.data() + 4, static_cast<std::uint32_t>(matrix.rows()));
    put_u32(header.data() + 8, static_cast<std::uint32_t>(matrix.dim()));
    sink.write(header.data(), header.size());

    const auto values = matrix.values();
    if constexpr (std::endian::native == std::endian::little) {
        sink.write(reinterpret_cast<const char*>(values.data()),
                   static_cast<std::streamsize>(values.size() * sizeof(float)));
    } else {
        for (const float v : values) {
            char buf[4];
            put_u32(buf, std::bit_cast<std::uint32_t>(v));
            sink.write(buf, 4);
        }
    }
    if (!sink) throw Error(Errc::IoFailure, "failed writing embedding payload");
    return kHeaderBytes + values.size() * sizeof(float);
}

PatchMatrix read_embeddings(std::istream& source) {
    std::array<char, kHeaderBytes> header{};
    source.read(header.data(), header.size());
    if (source.gcount() < 4 || std::memcmp(header.data(), kMagic.data(), 4) != 0) {
        throw Error(Errc::BadMagic, "missing PSE1 magic");
    }
    if (source.gcount() != static_cast<std::streamsize>(kHeaderBytes)) {
        throw Error(Errc::BadHeader, "header shorter than 16 bytes");
    }
    const std::uint32_t rows = get_u32(header.data() + 4);
    const std::uint32_t dim = get_u32(header.data() + 8);
    if (get_u32(header.data() + 12) != 0) throw Error(Errc::BadHeader, "reserved header bytes are not zero");
    if (rows == 0 || dim == 0) {
        throw Error(Errc::DimensionZero, "header declares N=" + std::to_string(rows) + " D=" + std::to_string(dim));
    }

    const std::size_t count = static_cast<std::size_t>(rows) * dim;
    std::vector<float> values(count);
    source.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(count * sizeof(float)));
    const auto got = static_cast<std::size_t>(source.gcount());
    if (got != count * sizeof(float)) {
        throw Error(Errc::TruncatedPayload, "expected " + std::to_string(count * sizeof(float)) +
                                                " payload bytes, got " + std::to_string(got));
    }
    if (source.peek() != std::char_traits<char>::eof()) {
        throw Error(Errc::TrailingBytes, "data after the declared payload");
    }
    if constexpr (std::endian::native == std::endian::big) {
        for (auto& v : values) v = std::bit_cast<float>(__builtin_bswap32(std::bit_cast<std::uint32_t>(v)));
    }
    return PatchMatrix(rows, dim, std::move(values));
}

std::size_t write_embeddings_file(const PatchMatrix& matrix, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::IoFailure, "cannot open " + path.string() + " for writing");
    const auto n = write_embeddings(matrix, out);
    out.close();
    if (!out) throw Error(Errc::IoFailure, "failed closing " + path.string());
    return n;
}

PatchMatrix read_embeddings_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::MissingFile, path.string());
    return read_embeddings(in);
}

PatchMatrix apply_norm_policy(PatchMatrix matrix, const LoadOptions& options, const std::string& what) {
    if (matrix.is_normalized()) return matrix;
    if (options.renormalize) return normalize(matrix);
    throw Error(Errc::NotNormalized, what + " has rows that are not unit norm (pass --normalize to re-normalize)");
}

std::filesystem::path sidecar_path(const std::filesystem::path& matrix_path) {
    auto p = matrix_path;
    p.replace_extension(".json");
    return p;
}

}  // namespace protoshot
