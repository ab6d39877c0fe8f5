#pragma once

// Similarity scoring, top-K patch selection and batch global average pooling.
// Reductions run sequentially in row order and accumulate in double.

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "protoshot/embedstore.hpp"

namespace protoshot {

using ScoreVector = std::vector<double>;

struct SelectionResult {
    // Ordered by score descending, then index ascending.
    std::vector<std::size_t> indices;
    // min(k, N); smaller than the requested k when the bag is too small.
    std::size_t effective_k = 0;
};

double dot(std::span<const float> a, std::span<const double> b) noexcept;
double dot(std::span<const double> a, std::span<const double> b) noexcept;

// scores[n] = <patch n, class_vector>. Throws DimensionMismatch.
ScoreVector score_against(const PatchMatrix& bag, std::span<const double> class_vector);

// The k highest scores; k is clamped to N. Throws InvalidConfig for k == 0.
SelectionResult top_k(std::span<const double> scores, std::size_t k);

// Full ranking of all indices (equivalent to top_k(scores, N)).
std::vector<std::size_t> rank_descending(std::span<const double> scores);

// Element-wise mean of the chosen rows (all rows when subset is empty optional).
// Not re-normalized. Throws EmptySubset or IndexOutOfRange.
std::vector<double> bgap(const PatchMatrix& bag, std::optional<std::span<const std::size_t>> subset = std::nullopt);

// Divides by the L2 norm in place. Throws ZeroVectorRow when the norm is < 1e-8.
void normalize_in_place(std::span<double> v);

}  // namespace protoshot
