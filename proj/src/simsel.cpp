#include "protoshot/simsel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "protoshot/error.hpp"

namespace protoshot {
namespace {

// Strict weak order: higher score first, lower index breaks ties.
struct ByScoreThenIndex {
    std::span<const double> scores;
    bool operator()(std::size_t a, std::size_t b) const noexcept {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    }
};

}  // namespace

double dot(std::span<const float> a, std::span<const double> b) noexcept {
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) sum += static_cast<double>(a[i]) * b[i];
    return sum;
}

double dot(std::span<const double> a, std::span<const double> b) noexcept {
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) sum += a[i] * b[i];
    return sum;
}

ScoreVector score_against(const PatchMatrix& bag, std::span<const double> class_vector) {
    if (class_vector.size() != bag.dim()) {
        throw Error(Errc::DimensionMismatch, "bag D=" + std::to_string(bag.dim()) + ", class vector D=" +
                                                 std::to_string(class_vector.size()));
    }
    ScoreVector scores(bag.rows());
    for (std::size_t n = 0; n < bag.rows(); ++n) scores[n] = dot(bag.row(n), class_vector);
    return scores;
}

SelectionResult top_k(std::span<const double> scores, std::size_t k) {
    if (k == 0) throw Error(Errc::InvalidConfig, "top-K must be at least 1");
    SelectionResult result;
    result.effective_k = std::min(k, scores.size());
    result.indices.resize(scores.size());
    std::iota(result.indices.begin(), result.indices.end(), std::size_t{0});
    const auto mid = result.indices.begin() + static_cast<std::ptrdiff_t>(result.effective_k);
    std::partial_sort(result.indices.begin(), mid, result.indices.end(), ByScoreThenIndex{scores});
    result.indices.erase(mid, result.indices.end());
    return result;
}

std::vector<std::size_t> rank_descending(std::span<const double> scores) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), ByScoreThenIndex{scores});
    return order;
}

std::vector<double> bgap(const PatchMatrix& bag, std::optional<std::span<const std::size_t>> subset) {
    const std::size_t dim = bag.dim();
    std::vector<double> mean(dim, 0.0);
    auto accumulate = [&](std::size_t row) {
        const auto r = bag.row(row);
        for (std::size_t j = 0; j < dim; ++j) mean[j] += static_cast<double>(r[j]);
    };

    std::size_t count = 0;
    if (subset) {
        if (subset->empty()) throw Error(Errc::EmptySubset, "bgap over an empty subset");
        for (const auto idx : *subset) {
            if (idx >= bag.rows()) {
                throw Error(Errc::IndexOutOfRange, "patch index " + std::to_string(idx) + " >= N=" +
                                                       std::to_string(bag.rows()), idx);
            }
            accumulate(idx);
        }
        count = subset->size();
    } else {
        for (std::size_t n = 0; n < bag.rows(); ++n) accumulate(n);
        count = bag.rows();
    }
    for (auto& v : mean) v /= static_cast<double>(count);
    return mean;
}

void normalize_in_place(std::span<double> v) {
    const double norm = std::sqrt(dot(v, v));
    if (!(norm >= kMinRowNorm)) throw Error(Errc::ZeroVectorRow, "cannot normalize a zero vector");
    for (auto& x : v) x /= norm;
}

}  // namespace protoshot
