#include <cmath>
#include <limits>
#include <map>

#include "protoshot/error.hpp"
#include "protoshot/evalharness.hpp"

namespace protoshot {

BalancedAccuracy balanced_accuracy(std::span<const int> predicted, std::span<const int> labels,
                                   std::size_t num_classes) {
    if (predicted.size() != labels.size()) {
        throw Error(Errc::LengthMismatch, std::to_string(predicted.size()) + " predictions for " +
                                              std::to_string(labels.size()) + " labels");
    }
    std::vector<std::size_t> total(num_classes, 0);
    std::vector<std::size_t> correct(num_classes, 0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
            throw Error(Errc::IndexOutOfRange, "label " + std::to_string(labels[i]), i);
        }
        const auto c = static_cast<std::size_t>(labels[i]);
        ++total[c];
        if (predicted[i] == labels[i]) ++correct[c];
    }
    BalancedAccuracy result;
    result.recalls.resize(num_classes);
    double sum = 0.0;
    for (std::size_t c = 0; c < num_classes; ++c) {
        if (total[c] == 0) throw Error(Errc::ClassAbsent, "class " + std::to_string(c) + " has no samples", c);
        result.recalls[c] = static_cast<double>(correct[c]) / static_cast<double>(total[c]);
        sum += result.recalls[c];
    }
    result.value = sum / static_cast<double>(num_classes);
    return result;
}

BalancedAccuracy balanced_accuracy(std::span<const SlidePrediction> predictions, std::span<const int> labels,
                                   std::size_t num_classes) {
    std::vector<int> predicted;
    predicted.reserve(predictions.size());
    for (const auto& p : predictions) predicted.push_back(p.predicted);
    return balanced_accuracy(predicted, labels, num_classes);
}

double silhouette(const DenseMatrix& points, std::span<const int> labels) {
    const std::size_t m = points.rows;
    if (m < 2) throw Error(Errc::TooFewPoints, "silhouette needs at least 2 points");
    if (labels.size() != m) throw Error(Errc::LengthMismatch, "one label per point expected");

    // Dense cluster ids in order of first label value.
    std::map<int, std::size_t> cluster_of;
    for (const int l : labels) cluster_of.emplace(l, 0);
    if (cluster_of.size() < 2) throw Error(Errc::SingleCluster, "silhouette needs at least 2 clusters");
    std::size_t next = 0;
    for (auto& [label, id] : cluster_of) id = next++;

    std::vector<std::size_t> cluster(m);
    std::vector<std::size_t> size(cluster_of.size(), 0);
    for (std::size_t i = 0; i < m; ++i) {
        cluster[i] = cluster_of.at(labels[i]);
        ++size[cluster[i]];
    }

    std::vector<double> dist_sum(cluster_of.size());
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        std::fill(dist_sum.begin(), dist_sum.end(), 0.0);
        const auto pi = points.row(i);
        for (std::size_t j = 0; j < m; ++j) {
            if (j == i) continue;
            const auto pj = points.row(j);
            double d2 = 0.0;
            for (std::size_t t = 0; t < points.cols; ++t) {
                const double diff = pi[t] - pj[t];
                d2 += diff * diff;
            }
            dist_sum[cluster[j]] += std::sqrt(d2);
        }
        const std::size_t own = cluster[i];
        if (size[own] == 1) continue;  // s(i) = 0
        const double a = dist_sum[own] / static_cast<double>(size[own] - 1);
        double b = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < size.size(); ++c) {
            if (c != own) b = std::min(b, dist_sum[c] / static_cast<double>(size[c]));
        }
        const double denom = std::max(a, b);
        if (denom > 0.0) total += (b - a) / denom;
    }
    return total / static_cast<double>(m);
}

}  // namespace protoshot
