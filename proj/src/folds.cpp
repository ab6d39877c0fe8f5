#include <algorithm>
#include <cstdlib>
#include <string>

#include "protoshot/error.hpp"
#include "protoshot/evalharness.hpp"
#include "protoshot/parallel.hpp"
#include "protoshot/rng.hpp"

namespace protoshot {

unsigned resolve_threads(unsigned requested) {
    if (requested > 0) return requested;
    if (const char* env = std::getenv("PROTOSHOT_THREADS")) {
        try {
            const long v = std::stol(env);
            if (v > 0) return static_cast<unsigned>(v);
        } catch (const std::exception&) {
            // ignore malformed values and fall through
        }
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

FoldAssignment stratified_kfold(std::span<const std::string> slide_ids, std::span<const int> labels,
                                std::size_t num_folds, std::uint64_t seed) {
    if (num_folds < 2) throw Error(Errc::InvalidConfig, "need at least 2 folds");
    if (slide_ids.size() != labels.size()) throw Error(Errc::LengthMismatch, "one label per slide expected");

    int max_label = -1;
    for (const int l : labels) {
        if (l < 0) throw Error(Errc::MissingLabel, "negative class index in fold assignment");
        max_label = std::max(max_label, l);
    }
    std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(max_label + 1));
    for (std::size_t i = 0; i < labels.size(); ++i) members[static_cast<std::size_t>(labels[i])].push_back(i);

    FoldAssignment assignment;
    assignment.num_folds = num_folds;
    assignment.seed = seed;
    std::size_t dealt = 0;
    for (std::size_t c = 0; c < members.size(); ++c) {
        auto& idx = members[c];
        if (idx.size() < num_folds) {
            throw Error(Errc::ClassTooSmall, "class " + std::to_string(c) + " has " + std::to_string(idx.size()) +
                                                 " slides for " + std::to_string(num_folds) + " folds", c);
        }
        Rng rng(mix_seed(seed, {static_cast<std::uint64_t>(c)}));
        shuffle(std::span<std::size_t>(idx), rng);
        for (const auto i : idx) {
            if (!assignment.fold_of.emplace(slide_ids[i], dealt % num_folds).second) {
                throw Error(Errc::DuplicateSlideId, slide_ids[i]);
            }
            ++dealt;
        }
    }
    return assignment;
}

std::vector<std::string> FewShotDraw::support_ids() const {
    std::vector<std::string> out;
    for (const auto& ids : by_class) out.insert(out.end(), ids.begin(), ids.end());
    return out;
}

FewShotDraw sample_few_shot(const std::vector<std::vector<std::string>>& train_ids, std::size_t k,
                            std::uint64_t seed) {
    if (k == 0) throw Error(Errc::InvalidConfig, "k must be at least 1");
    FewShotDraw draw;
    draw.k = k;
    draw.seed = seed;
    Rng rng(seed);
    for (std::size_t c = 0; c < train_ids.size(); ++c) {
        const auto& pool = train_ids[c];
        if (pool.size() < k) {
            throw Error(Errc::InsufficientSupport, "class " + std::to_string(c) + " has " +
                                                       std::to_string(pool.size()) + " training slides, k=" +
                                                       std::to_string(k), c);
        }
        // Partial Fisher-Yates: the first k positions are a uniform draw.
        std::vector<std::size_t> order(pool.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::vector<std::string> picked;
        picked.reserve(k);
        for (std::size_t i = 0; i < k; ++i) {
            const auto j = i + static_cast<std::size_t>(uniform_below(rng, order.size() - i));
            std::swap(order[i], order[j]);
            picked.push_back(pool[order[i]]);
        }
        draw.by_class.push_back(std::move(picked));
    }
    return draw;
}

}  // namespace protoshot
