#include "protoshot/adapters.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "protoshot/error.hpp"
#include "protoshot/simsel.hpp"

namespace protoshot {
namespace {

using nlohmann::json;

int checked_label(const SlideBag& bag, std::size_t num_classes) {
    if (!bag.label) throw Error(Errc::MissingLabel, "support slide " + bag.slide_id + " has no label");
    const int label = *bag.label;
    if (label < 0 || static_cast<std::size_t>(label) >= num_classes) {
        throw Error(Errc::IndexOutOfRange, "slide " + bag.slide_id + " label " + std::to_string(label) +
                                               " outside [0, " + std::to_string(num_classes) + ")");
    }
    return label;
}

void check_dim(std::size_t got, std::size_t expected, const std::string& what) {
    if (got != expected) {
        throw Error(Errc::DimensionMismatch, what + ": D=" + std::to_string(got) + ", expected " +
                                                 std::to_string(expected));
    }
}

}  // namespace

std::string_view method_name(Method method) noexcept {
    switch (method) {
        case Method::VisionShot: return "visionshot";
        case Method::SimpleShot: return "simpleshot";
        case Method::MiZero: return "mizero";
        case Method::TipAdapter: return "tip-adapter";
    }
    return "unknown";
}

Method parse_method(std::string_view name) {
    if (name == "visionshot") return Method::VisionShot;
    if (name == "simpleshot") return Method::SimpleShot;
    if (name == "mizero") return Method::MiZero;
    if (name == "tip-adapter" || name == "tip") return Method::TipAdapter;
    throw Error(Errc::InvalidConfig, "unknown method '" + std::string(name) + "'");
}

int argmax_lowest(std::span<const double> scores) noexcept {
    std::size_t best = 0;
    for (std::size_t c = 1; c < scores.size(); ++c) {
        if (scores[c] > scores[best]) best = c;
    }
    return static_cast<int>(best);
}

std::vector<double> visionshot_slide_embedding(const SlideBag& bag, std::span<const double> class_vector,
                                               std::size_t k) {
    if (!bag.label) throw Error(Errc::MissingLabel, "slide " + bag.slide_id + " has no label");
    const auto scores = score_against(bag.patches, class_vector);
    auto selected = top_k(scores, k).indices;
    // Pool in row order so k >= N reproduces the plain mean bit for bit.
    std::sort(selected.begin(), selected.end());
    return bgap(bag.patches, std::span<const std::size_t>(selected));
}

PrototypeSet prototypes_from_embeddings(std::span<const std::string> slide_ids, std::span<const int> labels,
                                        std::span<const std::vector<double>> embeddings,
                                        std::size_t num_classes, std::size_t top_k, bool normalize_prototypes) {
    if (slide_ids.size() != embeddings.size() || labels.size() != embeddings.size()) {
        throw Error(Errc::LengthMismatch, "one id, label and embedding per support slide expected");
    }
    if (embeddings.empty()) throw Error(Errc::EmptyClassSupport, "no support slides");

    PrototypeSet set;
    set.num_classes = num_classes;
    set.dim = embeddings.front().size();
    set.normalized = normalize_prototypes;
    set.top_k = top_k;
    set.support.resize(num_classes);
    set.prototypes.assign(num_classes * set.dim, 0.0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
            throw Error(Errc::IndexOutOfRange, "slide " + slide_ids[i] + " label " + std::to_string(labels[i]), i);
        }
    }

    // Class-then-slide order keeps the reduction deterministic.
    for (std::size_t c = 0; c < num_classes; ++c) {
        double* row = set.prototypes.data() + c * set.dim;
        std::size_t count = 0;
        for (std::size_t i = 0; i < embeddings.size(); ++i) {
            if (labels[i] != static_cast<int>(c)) continue;
            check_dim(embeddings[i].size(), set.dim, "support slide " + slide_ids[i]);
            for (std::size_t j = 0; j < set.dim; ++j) row[j] += embeddings[i][j];
            set.support[c].push_back(slide_ids[i]);
            ++count;
        }
        if (count == 0) throw Error(Errc::EmptyClassSupport, "class " + std::to_string(c) + " has no support slide", c);
        for (std::size_t j = 0; j < set.dim; ++j) row[j] /= static_cast<double>(count);
        if (normalize_prototypes) normalize_in_place(std::span<double>(row, set.dim));
    }
    for (std::size_t c = 0; c < num_classes; ++c) set.class_names.push_back("class_" + std::to_string(c));
    return set;
}

namespace {

struct SupportIndex {
    std::vector<std::string> ids;
    std::vector<int> labels;
};

SupportIndex index_support(std::span<const SlideBag> support, std::size_t num_classes) {
    SupportIndex out;
    for (const auto& bag : support) {
        out.ids.push_back(bag.slide_id);
        out.labels.push_back(checked_label(bag, num_classes));
    }
    return out;
}

}  // namespace

PrototypeSet build_prototypes(std::span<const SlideBag> support, const TextClassifier& classifier, std::size_t k,
                              bool normalize_prototypes) {
    const std::size_t num_classes = classifier.num_classes();
    std::vector<std::vector<double>> embeddings;
    embeddings.reserve(support.size());
    for (const auto& bag : support) {
        const int label = checked_label(bag, num_classes);
        check_dim(bag.patches.dim(), classifier.dim(), "support slide " + bag.slide_id);
        embeddings.push_back(visionshot_slide_embedding(bag, classifier.canonical(static_cast<std::size_t>(label)), k));
    }
    const auto index = index_support(support, num_classes);
    auto set = prototypes_from_embeddings(index.ids, index.labels, embeddings, num_classes, k, normalize_prototypes);
    set.class_names = classifier.class_names();
    return set;
}

PrototypeSet simpleshot_prototypes(std::span<const SlideBag> support, std::size_t num_classes,
                                   bool normalize_prototypes) {
    const auto index = index_support(support, num_classes);
    std::vector<std::vector<double>> embeddings;
    embeddings.reserve(support.size());
    for (const auto& bag : support) embeddings.push_back(bgap(bag.patches));
    return prototypes_from_embeddings(index.ids, index.labels, embeddings, num_classes, 0, normalize_prototypes);
}

SlidePrediction predict_prototype(std::string slide_id, std::span<const double> pooled,
                                  const PrototypeSet& prototypes) {
    check_dim(pooled.size(), prototypes.dim, "slide " + slide_id);
    SlidePrediction pred;
    pred.slide_id = std::move(slide_id);
    pred.method = prototypes.top_k == 0 ? Method::SimpleShot : Method::VisionShot;
    pred.class_scores.resize(prototypes.num_classes);
    for (std::size_t c = 0; c < prototypes.num_classes; ++c) pred.class_scores[c] = dot(prototypes.row(c), pooled);
    pred.predicted = argmax_lowest(pred.class_scores);
    return pred;
}

SlidePrediction predict_prototype(const SlideBag& bag, const PrototypeSet& prototypes) {
    check_dim(bag.patches.dim(), prototypes.dim, "slide " + bag.slide_id);
    return predict_prototype(bag.slide_id, bgap(bag.patches), prototypes);
}

SlidePrediction mizero_predict(std::string slide_id, std::span<const double> pooled,
                               const TextClassifier& classifier, std::size_t prompt_index) {
    if (prompt_index >= classifier.num_prompts()) {
        throw Error(Errc::PromptIndexOutOfRange, "prompt " + std::to_string(prompt_index) + " >= P=" +
                                                     std::to_string(classifier.num_prompts()), prompt_index);
    }
    check_dim(pooled.size(), classifier.dim(), "slide " + slide_id);
    SlidePrediction pred;
    pred.slide_id = std::move(slide_id);
    pred.method = Method::MiZero;
    pred.class_scores.resize(classifier.num_classes());
    for (std::size_t c = 0; c < classifier.num_classes(); ++c) {
        pred.class_scores[c] = dot(classifier.vector(prompt_index, c), pooled);
    }
    pred.predicted = argmax_lowest(pred.class_scores);
    return pred;
}

SlidePrediction mizero_predict(const SlideBag& bag, const TextClassifier& classifier, std::size_t prompt_index) {
    check_dim(bag.patches.dim(), classifier.dim(), "slide " + bag.slide_id);
    return mizero_predict(bag.slide_id, bgap(bag.patches), classifier, prompt_index);
}

CacheModel build_cache(std::span<const int> labels, std::span<const std::vector<double>> pooled,
                       std::size_t num_classes, double alpha, double beta) {
    if (pooled.empty()) throw Error(Errc::EmptyCache, "TIP-Adapter cache needs at least one support slide");
    if (labels.size() != pooled.size()) throw Error(Errc::LengthMismatch, "one pooled vector per support slide expected");
    if (!(alpha >= 0.0) || !(beta > 0.0)) {
        throw Error(Errc::InvalidConfig, "TIP-Adapter needs alpha >= 0 and beta > 0");
    }
    CacheModel cache;
    cache.num_classes = num_classes;
    cache.dim = pooled.front().size();
    cache.alpha = alpha;
    cache.beta = beta;
    cache.keys.reserve(pooled.size() * cache.dim);
    for (std::size_t m = 0; m < pooled.size(); ++m) {
        if (labels[m] < 0 || static_cast<std::size_t>(labels[m]) >= num_classes) {
            throw Error(Errc::IndexOutOfRange, "cache label " + std::to_string(labels[m]), m);
        }
        cache.labels.push_back(labels[m]);
        check_dim(pooled[m].size(), cache.dim, "cache entry " + std::to_string(m));
        std::vector<double> key = pooled[m];
        normalize_in_place(key);
        cache.keys.insert(cache.keys.end(), key.begin(), key.end());
    }
    return cache;
}

CacheModel build_cache(std::span<const SlideBag> support, std::size_t num_classes, double alpha, double beta) {
    const auto index = index_support(support, num_classes);
    std::vector<std::vector<double>> pooled;
    pooled.reserve(support.size());
    for (const auto& bag : support) pooled.push_back(bgap(bag.patches));
    return build_cache(index.labels, pooled, num_classes, alpha, beta);
}

SlidePrediction tip_adapter_predict(std::string slide_id, std::span<const double> pooled, const CacheModel& cache,
                                    const TextClassifier& classifier) {
    if (cache.size() == 0) throw Error(Errc::EmptyCache, "empty TIP-Adapter cache");
    check_dim(pooled.size(), cache.dim, "slide " + slide_id);
    check_dim(classifier.dim(), cache.dim, "text classifier");
    if (classifier.num_classes() != cache.num_classes) {
        throw Error(Errc::DimensionMismatch, "cache and classifier disagree on the number of classes");
    }

    std::vector<double> query(pooled.begin(), pooled.end());
    normalize_in_place(query);

    SlidePrediction pred;
    pred.slide_id = std::move(slide_id);
    pred.method = Method::TipAdapter;
    pred.class_scores.assign(cache.num_classes, 0.0);
    for (std::size_t m = 0; m < cache.size(); ++m) {
        const double affinity = std::exp(-cache.beta * (1.0 - dot(query, cache.key(m))));
        pred.class_scores[static_cast<std::size_t>(cache.labels[m])] += affinity;
    }
    for (std::size_t c = 0; c < cache.num_classes; ++c) {
        pred.class_scores[c] = cache.alpha * pred.class_scores[c] + dot(query, classifier.canonical(c));
    }
    pred.predicted = argmax_lowest(pred.class_scores);
    return pred;
}

SlidePrediction tip_adapter_predict(const SlideBag& bag, const CacheModel& cache, const TextClassifier& classifier) {
    if (cache.size() == 0) throw Error(Errc::EmptyCache, "empty TIP-Adapter cache");
    check_dim(bag.patches.dim(), cache.dim, "slide " + bag.slide_id);
    return tip_adapter_predict(bag.slide_id, bgap(bag.patches), cache, classifier);
}

void save_prototypes(const PrototypeSet& prototypes, const std::filesystem::path& path) {
    std::vector<float> values(prototypes.prototypes.begin(), prototypes.prototypes.end());
    write_embeddings_file(PatchMatrix(prototypes.num_classes, prototypes.dim, std::move(values)), path);

    json support = json::object();
    for (std::size_t c = 0; c < prototypes.num_classes; ++c) {
        support[prototypes.class_names.at(c)] = prototypes.support.at(c);
    }
    const json meta = {{"class_names", prototypes.class_names},
                       {"top_k", prototypes.top_k},
                       {"normalized", prototypes.normalized},
                       {"support", support}};
    std::ofstream out(sidecar_path(path), std::ios::trunc);
    out << meta.dump(2) << '\n';
    if (!out) throw Error(Errc::IoFailure, "failed writing " + sidecar_path(path).string());
}

PrototypeSet load_prototypes(const std::filesystem::path& path) {
    const auto matrix = read_embeddings_file(path);
    const auto side = sidecar_path(path);
    std::ifstream in(side);
    if (!in) throw Error(Errc::MissingFile, side.string());

    PrototypeSet set;
    set.num_classes = matrix.rows();
    set.dim = matrix.dim();
    set.prototypes.assign(matrix.values().begin(), matrix.values().end());
    try {
        const json meta = json::parse(in);
        set.class_names = meta.at("class_names").get<std::vector<std::string>>();
        set.top_k = meta.at("top_k").get<std::size_t>();
        set.normalized = meta.at("normalized").get<bool>();
        set.support.resize(set.num_classes);
        if (meta.contains("support")) {
            for (std::size_t c = 0; c < set.class_names.size() && c < set.num_classes; ++c) {
                if (meta["support"].contains(set.class_names[c])) {
                    set.support[c] = meta["support"][set.class_names[c]].get<std::vector<std::string>>();
                }
            }
        }
    } catch (const json::exception& e) {
        throw Error(Errc::ManifestParse, side.string() + ": " + e.what());
    }
    if (set.class_names.size() != set.num_classes) {
        throw Error(Errc::InvalidShape, side.string() + ": class_names length does not match the prototype rows");
    }
    return set;
}

}  // namespace protoshot
