#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace protoshot {

enum class Errc {
    // embedstore
    ZeroVectorRow,
    NonFiniteValue,
    NotNormalized,
    IoFailure,
    BadMagic,
    BadHeader,
    TruncatedPayload,
    TrailingBytes,
    DimensionZero,
    InvalidShape,
    ManifestParse,
    UnknownClass,
    DuplicateSlideId,
    PatchCountMismatch,
    MissingFile,
    // kernels and adapters
    DimensionMismatch,
    EmptySubset,
    IndexOutOfRange,
    MissingLabel,
    EmptyClassSupport,
    PromptIndexOutOfRange,
    EmptyCache,
    // evaluation
    ClassTooSmall,
    InsufficientSupport,
    LengthMismatch,
    ClassAbsent,
    SingleCluster,
    TooFewPoints,
    GridCellFailed,
    MalformedReport,
    // generation / config
    InvalidConfig,
};

std::string_view errc_name(Errc code) noexcept;

// Single exception type for the library; callers switch on code().
class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& message, std::optional<std::size_t> index = std::nullopt);

    Errc code() const noexcept { return code_; }
    // Row / element index for errors that point at one (ZeroVectorRow, NonFiniteValue, ...).
    std::optional<std::size_t> index() const noexcept { return index_; }

private:
    Errc code_;
    std::optional<std::size_t> index_;
};

}  // namespace protoshot
