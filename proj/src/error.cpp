#include "protoshot/error.hpp"

namespace protoshot {

std::string_view errc_name(Errc code) noexcept {
    switch (code) {
        case Errc::ZeroVectorRow: return "ZeroVectorRow";
        case Errc::NonFiniteValue: return "NonFiniteValue";
        case Errc::NotNormalized: return "NotNormalized";
        case Errc::IoFailure: return "IoFailure";
        case Errc::BadMagic: return "BadMagic";
        case Errc::BadHeader: return "BadHeader";
        case Errc::TruncatedPayload: return "TruncatedPayload";
        case Errc::TrailingBytes: return "TrailingBytes";
        case Errc::DimensionZero: return "DimensionZero";
        case Errc::InvalidShape: return "InvalidShape";
        case Errc::ManifestParse: return "ManifestParse";
        case Errc::UnknownClass: return "UnknownClass";
        case Errc::DuplicateSlideId: return "DuplicateSlideId";
        case Errc::PatchCountMismatch: return "PatchCountMismatch";
        case Errc::MissingFile: return "MissingFile";
        case Errc::DimensionMismatch: return "DimensionMismatch";
        case Errc::EmptySubset: return "EmptySubset";
        case Errc::IndexOutOfRange: return "IndexOutOfRange";
        case Errc::MissingLabel: return "MissingLabel";
        case Errc::EmptyClassSupport: return "EmptyClassSupport";
        case Errc::PromptIndexOutOfRange: return "PromptIndexOutOfRange";
        case Errc::EmptyCache: return "EmptyCache";
        case Errc::ClassTooSmall: return "ClassTooSmall";
        case Errc::InsufficientSupport: return "InsufficientSupport";
        case Errc::LengthMismatch: return "LengthMismatch";
        case Errc::ClassAbsent: return "ClassAbsent";
        case Errc::SingleCluster: return "SingleCluster";
        case Errc::TooFewPoints: return "TooFewPoints";
        case Errc::GridCellFailed: return "GridCellFailed";
        case Errc::MalformedReport: return "MalformedReport";
        case Errc::InvalidConfig: return "InvalidConfig";
    }
    return "Unknown";
}

Error::Error(Errc code, const std::string& message, std::optional<std::size_t> index)
    : std::runtime_error(std::string(errc_name(code)) + ": " + message), code_(code), index_(index) {}

}  // namespace protoshot
