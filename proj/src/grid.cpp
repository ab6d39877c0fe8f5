#include <algorithm>
#include <cmath>
#include <tuple>
#include <unordered_map>

#include "protoshot/error.hpp"
#include "protoshot/evalharness.hpp"
#include "protoshot/parallel.hpp"
#include "protoshot/rng.hpp"
#include "protoshot/simsel.hpp"

namespace protoshot {
namespace {

std::uint64_t replicate_of(const EvalRecord& r) { return r.prompt ? *r.prompt : r.seed; }

auto record_key(const EvalRecord& r) {
    return std::make_tuple(static_cast<int>(r.method), r.k, r.top_k, r.seed, r.prompt.value_or(0), r.fold);
}

bool has(const std::vector<Method>& methods, Method m) {
    return std::find(methods.begin(), methods.end(), m) != methods.end();
}

// One few-shot cell: a (fold, seed, k) support draw shared by every few-shot method.
struct FewShotCell {
    std::size_t fold;
    std::uint64_t seed;
    std::size_t k;
};

class GridRunner {
public:
    GridRunner(const Dataset& dataset, const TextClassifier& classifier, const GridConfig& config)
        : dataset_(dataset), classifier_(classifier), config_(config) {}

    EvalReport run();

private:
    void validate() const;
    std::vector<EvalRecord> run_few_shot(const FewShotCell& cell) const;
    std::vector<EvalRecord> run_zero_shot(std::size_t fold) const;
    EvalRecord score(Method method, std::size_t fold, const std::vector<SlidePrediction>& preds) const;
    nlohmann::json config_echo() const;

    const Dataset& dataset_;
    const TextClassifier& classifier_;
    const GridConfig& config_;

    std::vector<std::uint64_t> seeds_;
    FoldAssignment folds_;
    std::vector<std::size_t> fold_of_;                             // per bag
    std::vector<std::vector<double>> pooled_;                      // per bag, mean of all patches
    std::vector<std::vector<std::vector<double>>> visionshot_;     // [top_k index][bag]
    std::unordered_map<std::string, std::size_t> index_of_;
};

void GridRunner::validate() const {
    if (config_.methods.empty()) throw Error(Errc::InvalidConfig, "no methods requested");
    if (config_.k_grid.empty() || config_.topk_grid.empty()) throw Error(Errc::InvalidConfig, "grids must be nonempty");
    for (const auto k : config_.k_grid) {
        if (k == 0) throw Error(Errc::InvalidConfig, "k grid entries must be positive");
    }
    for (const auto k : config_.topk_grid) {
        if (k == 0) throw Error(Errc::InvalidConfig, "top-K grid entries must be positive");
    }
    if (dataset_.bags.empty()) throw Error(Errc::InvalidConfig, "empty dataset");
    if (classifier_.num_classes() != dataset_.num_classes()) {
        throw Error(Errc::DimensionMismatch, "classifier has " + std::to_string(classifier_.num_classes()) +
                                                 " classes, dataset has " + std::to_string(dataset_.num_classes()));
    }
    if (classifier_.dim() != dataset_.dim()) {
        throw Error(Errc::DimensionMismatch, "classifier D=" + std::to_string(classifier_.dim()) + ", dataset D=" +
                                                 std::to_string(dataset_.dim()));
    }
    for (const auto& bag : dataset_.bags) {
        if (!bag.label) throw Error(Errc::MissingLabel, "slide " + bag.slide_id + " has no label");
    }
}

EvalRecord GridRunner::score(Method method, std::size_t fold, const std::vector<SlidePrediction>& preds) const {
    std::vector<int> labels;
    for (std::size_t i = 0; i < dataset_.bags.size(); ++i) {
        if (fold_of_[i] == fold) labels.push_back(*dataset_.bags[i].label);
    }
    const auto acc = balanced_accuracy(preds, labels, dataset_.num_classes());
    EvalRecord record;
    record.method = method;
    record.fold = fold;
    record.balanced_accuracy = acc.value;
    record.recalls = acc.recalls;
    return record;
}

std::vector<EvalRecord> GridRunner::run_zero_shot(std::size_t fold) const {
    std::vector<EvalRecord> out;
    for (std::size_t p = 0; p < classifier_.num_prompts(); ++p) {
        std::vector<SlidePrediction> preds;
        for (std::size_t i = 0; i < dataset_.bags.size(); ++i) {
            if (fold_of_[i] != fold) continue;
            preds.push_back(mizero_predict(dataset_.bags[i].slide_id, pooled_[i], classifier_, p));
        }
        auto record = score(Method::MiZero, fold, preds);
        record.prompt = p;
        out.push_back(std::move(record));
    }
    return out;
}

std::vector<EvalRecord> GridRunner::run_few_shot(const FewShotCell& cell) const {
    const std::size_t num_classes = dataset_.num_classes();
    const auto draw = draw_support(dataset_, folds_, cell.fold, cell.seed, cell.k);

    const auto support_ids = draw.support_ids();
    std::vector<std::size_t> support_idx;
    std::vector<int> support_labels;
    for (const auto& id : support_ids) {
        support_idx.push_back(index_of_.at(id));
        support_labels.push_back(*dataset_.bags[support_idx.back()].label);
    }

    auto gather = [&](const std::vector<std::vector<double>>& per_bag) {
        std::vector<std::vector<double>> out;
        for (const auto i : support_idx) out.push_back(per_bag[i]);
        return out;
    };
    auto predict_test = [&](auto&& predict) {
        std::vector<SlidePrediction> preds;
        for (std::size_t i = 0; i < dataset_.bags.size(); ++i) {
            if (fold_of_[i] == cell.fold) preds.push_back(predict(i));
        }
        return preds;
    };
    auto stamp = [&](EvalRecord r, std::size_t top_k) {
        r.seed = cell.seed;
        r.k = cell.k;
        r.top_k = top_k;
        return r;
    };

    std::vector<EvalRecord> out;
    if (has(config_.methods, Method::VisionShot)) {
        for (std::size_t t = 0; t < config_.topk_grid.size(); ++t) {
            const auto top_k = config_.topk_grid[t];
            const auto protos = prototypes_from_embeddings(support_ids, support_labels, gather(visionshot_[t]), num_classes, top_k,
                                                           config_.normalize_prototypes);
            const auto preds = predict_test([&](std::size_t i) {
                return predict_prototype(dataset_.bags[i].slide_id, pooled_[i], protos);
            });
            auto record = stamp(score(Method::VisionShot, cell.fold, preds), top_k);
            std::size_t min_eff = top_k;
            for (const auto i : support_idx) min_eff = std::min(min_eff, dataset_.bags[i].patches.rows());
            record.min_effective_top_k = min_eff;
            out.push_back(std::move(record));
        }
    }
    if (has(config_.methods, Method::SimpleShot)) {
        const auto protos =
            prototypes_from_embeddings(support_ids, support_labels, gather(pooled_), num_classes, 0,
                                       config_.normalize_prototypes);
        const auto preds = predict_test([&](std::size_t i) {
            auto p = predict_prototype(dataset_.bags[i].slide_id, pooled_[i], protos);
            p.method = Method::SimpleShot;
            return p;
        });
        out.push_back(stamp(score(Method::SimpleShot, cell.fold, preds), 0));
    }
    if (has(config_.methods, Method::TipAdapter)) {
        const auto cache = build_cache(support_labels, gather(pooled_), num_classes, config_.tip_alpha, config_.tip_beta);
        const auto preds = predict_test([&](std::size_t i) {
            return tip_adapter_predict(dataset_.bags[i].slide_id, pooled_[i], cache, classifier_);
        });
        out.push_back(stamp(score(Method::TipAdapter, cell.fold, preds), 0));
    }
    return out;
}

nlohmann::json GridRunner::config_echo() const {
    nlohmann::json methods = nlohmann::json::array();
    for (const auto m : config_.methods) methods.push_back(method_name(m));
    return {
        {"methods", methods},
        {"num_folds", config_.num_folds},
        {"base_seed", config_.base_seed},
        {"fold_seed", folds_.seed},
        {"seeds", seeds_},
        {"k_grid", config_.k_grid},
        {"topk_grid", config_.topk_grid},
        {"tip_alpha", config_.tip_alpha},
        {"tip_beta", config_.tip_beta},
        {"normalize_prototypes", config_.normalize_prototypes},
        {"prng", kRngName},
        {"seed_mixing", kSeedMixName},
        {"stream_rules",
         {{"folds", "fold_seed = mix_seed(base_seed, {folds}); class c shuffled with mix_seed(fold_seed, {c})"},
          {"support", "mix_seed(seed, {support, fold, k})"},
          {"default_seeds", "seed_i = mix_seed(base_seed, {repl, i})"}}},
        {"aggregation", "per (method, k, top_k): mean over folds per replicate, then mean and sample std "
                        "across replicates (seeds; prompts for mizero)"},
        {"dataset",
         {{"num_slides", dataset_.bags.size()},
          {"num_classes", dataset_.num_classes()},
          {"class_names", dataset_.manifest.classes},
          {"dim", dataset_.dim()}}},
        {"classifier", {{"num_prompts", classifier_.num_prompts()}, {"num_classes", classifier_.num_classes()}}},
    };
}

EvalReport GridRunner::run() {
    validate();
    const unsigned threads = std::max(1u, config_.threads);
    const auto& bags = dataset_.bags;

    seeds_ = config_.seeds.empty() ? default_seeds(config_.base_seed) : config_.seeds;
    if (seeds_.empty()) throw Error(Errc::InvalidConfig, "no seeds");

    for (std::size_t i = 0; i < bags.size(); ++i) index_of_.emplace(bags[i].slide_id, i);
    folds_ = grid_folds(dataset_, config_.base_seed, config_.num_folds);
    for (const auto& bag : bags) fold_of_.push_back(folds_.fold_of.at(bag.slide_id));

    pooled_.resize(bags.size());
    parallel_for(bags.size(), threads, [&](std::size_t i) { pooled_[i] = bgap(bags[i].patches); });

    if (has(config_.methods, Method::VisionShot)) {
        visionshot_.assign(config_.topk_grid.size(), std::vector<std::vector<double>>(bags.size()));
        parallel_for(bags.size(), threads, [&](std::size_t i) {
            const auto cls = static_cast<std::size_t>(*bags[i].label);
            for (std::size_t t = 0; t < config_.topk_grid.size(); ++t) {
                visionshot_[t][i] = visionshot_slide_embedding(bags[i], classifier_.canonical(cls), config_.topk_grid[t]);
            }
        });
    }

    std::vector<FewShotCell> cells;
    const bool few_shot = has(config_.methods, Method::VisionShot) || has(config_.methods, Method::SimpleShot) ||
                          has(config_.methods, Method::TipAdapter);
    if (few_shot) {
        for (std::size_t f = 0; f < config_.num_folds; ++f) {
            for (const auto s : seeds_) {
                for (const auto k : config_.k_grid) cells.push_back({f, s, k});
            }
        }
    }
    const bool zero_shot = has(config_.methods, Method::MiZero);
    const std::size_t zero_cells = zero_shot ? config_.num_folds : 0;

    std::vector<std::vector<EvalRecord>> results(cells.size() + zero_cells);
    parallel_for(results.size(), threads, [&](std::size_t c) {
        try {
            results[c] = c < cells.size() ? run_few_shot(cells[c]) : run_zero_shot(c - cells.size());
        } catch (const Error& e) {
            std::string where = c < cells.size()
                                    ? "fold=" + std::to_string(cells[c].fold) + " seed=" + std::to_string(cells[c].seed) +
                                          " k=" + std::to_string(cells[c].k)
                                    : "method=mizero fold=" + std::to_string(c - cells.size());
            throw Error(Errc::GridCellFailed, "grid cell " + where + ": " + e.what());
        }
    });

    EvalReport report;
    for (auto& r : results) {
        for (auto& rec : r) report.records.push_back(std::move(rec));
    }
    sort_records(report.records);
    report.aggregates = aggregate_records(report.records);
    report.config = config_echo();
    return report;
}

}  // namespace

FoldAssignment grid_folds(const Dataset& dataset, std::uint64_t base_seed, std::size_t num_folds) {
    std::vector<std::string> ids;
    std::vector<int> labels;
    for (const auto& bag : dataset.bags) {
        if (!bag.label) throw Error(Errc::MissingLabel, bag.slide_id);
        ids.push_back(bag.slide_id);
        labels.push_back(*bag.label);
    }
    return stratified_kfold(ids, labels, num_folds,
                            mix_seed(base_seed, {static_cast<std::uint64_t>(SeedPurpose::Folds)}));
}

FewShotDraw draw_support(const Dataset& dataset, const FoldAssignment& folds, std::size_t fold, std::uint64_t seed,
                         std::size_t k) {
    std::vector<std::vector<std::string>> train(dataset.num_classes());
    for (const auto& bag : dataset.bags) {
        if (!bag.label) throw Error(Errc::MissingLabel, bag.slide_id);
        if (folds.fold_of.at(bag.slide_id) != fold) train[static_cast<std::size_t>(*bag.label)].push_back(bag.slide_id);
    }
    return sample_few_shot(train, k,
                           mix_seed(seed, {static_cast<std::uint64_t>(SeedPurpose::Support), fold, k}));
}

std::vector<std::uint64_t> default_seeds(std::uint64_t base_seed, std::size_t count) {
    std::vector<std::uint64_t> seeds;
    for (std::size_t i = 0; i < count; ++i) {
        seeds.push_back(mix_seed(base_seed, {static_cast<std::uint64_t>(SeedPurpose::Replicate), i}));
    }
    return seeds;
}

void sort_records(std::vector<EvalRecord>& records) {
    std::stable_sort(records.begin(), records.end(),
                     [](const EvalRecord& a, const EvalRecord& b) { return record_key(a) < record_key(b); });
}

std::vector<Aggregate> aggregate_records(std::span<const EvalRecord> records) {
    // (method, k, top_k) -> replicate -> fold accuracies, in record order
    std::map<std::tuple<int, std::size_t, std::size_t>, std::map<std::uint64_t, std::vector<double>>> groups;
    for (const auto& r : records) {
        groups[{static_cast<int>(r.method), r.k, r.top_k}][replicate_of(r)].push_back(r.balanced_accuracy);
    }
    std::vector<Aggregate> out;
    for (const auto& [key, replicates] : groups) {
        Aggregate agg;
        agg.method = static_cast<Method>(std::get<0>(key));
        agg.k = std::get<1>(key);
        agg.top_k = std::get<2>(key);
        std::vector<double> means;
        for (const auto& [rep, values] : replicates) {
            double sum = 0.0;
            for (const auto v : values) sum += v;
            means.push_back(sum / static_cast<double>(values.size()));
            agg.records += values.size();
        }
        double sum = 0.0;
        for (const auto v : means) sum += v;
        agg.mean = sum / static_cast<double>(means.size());
        double ss = 0.0;
        for (const auto v : means) ss += (v - agg.mean) * (v - agg.mean);
        agg.std = means.size() > 1 ? std::sqrt(ss / static_cast<double>(means.size() - 1)) : 0.0;
        agg.replicates = means.size();
        out.push_back(agg);
    }
    return out;
}

EvalReport run_grid(const Dataset& dataset, const TextClassifier& classifier, const GridConfig& config) {
    return GridRunner(dataset, classifier, config).run();
}

}  // namespace protoshot
