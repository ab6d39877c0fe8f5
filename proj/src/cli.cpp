#include "protoshot/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "protoshot/adapters.hpp"
#include "protoshot/error.hpp"
#include "protoshot/evalharness.hpp"
#include "protoshot/parallel.hpp"
#include "protoshot/synthgen.hpp"

namespace protoshot {
namespace {

namespace fs = std::filesystem;

// Thrown for flag values CLI11 accepts syntactically but we reject.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

template <typename T>
std::vector<T> parse_list(const std::string& text, const char* what) {
    std::vector<T> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        try {
            std::size_t used = 0;
            const auto v = std::stoull(item, &used);
            if (used != item.size()) throw std::invalid_argument(item);
            out.push_back(static_cast<T>(v));
        } catch (const std::exception&) {
            throw UsageError(std::string("invalid ") + what + " entry '" + item + "'");
        }
    }
    if (out.empty()) throw UsageError(std::string(what) + " must not be empty");
    return out;
}

std::vector<Method> parse_methods(const std::string& text) {
    std::vector<Method> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        try {
            const auto m = parse_method(item);
            if (std::find(out.begin(), out.end(), m) == out.end()) out.push_back(m);
        } catch (const Error& e) {
            throw UsageError(e.what());
        }
    }
    if (out.empty()) throw UsageError("--methods must name at least one method");
    return out;
}

std::string fmt(double v, const char* pattern = "%.6g") {
    char buf[64];
    std::snprintf(buf, sizeof buf, pattern, v);
    return buf;
}

template <typename Fn>
void write_output(const std::string& path, std::ostream& fallback, Fn&& writer) {
    if (path.empty() || path == "-") {
        writer(fallback);
        return;
    }
    const fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::IoFailure, "cannot open " + path);
    writer(out);
    out.close();
    if (!out) throw Error(Errc::IoFailure, "failed writing " + path);
}

// Common dataset flags.
struct DataArgs {
    std::string manifest;
    std::string root;
    bool renormalize = false;

    void add(CLI::App* app) {
        app->add_option("--manifest", manifest, "Dataset manifest (JSON lines)")->required();
        app->add_option("--root", root, "Directory embedding paths are relative to (default: manifest directory)");
        app->add_flag("--normalize", renormalize, "Re-normalize rows that are not unit norm instead of failing");
    }
    Dataset load() const {
        const fs::path m(manifest);
        const fs::path r = root.empty() ? (m.has_parent_path() ? m.parent_path() : fs::path(".")) : fs::path(root);
        return load_manifest(m, r, LoadOptions{renormalize});
    }
};

void write_predictions(const std::vector<SlidePrediction>& preds, std::size_t num_classes, std::ostream& out) {
    out << "slide_id,predicted_class";
    for (std::size_t c = 0; c < num_classes; ++c) out << ",score_" << c;
    out << '\n';
    for (const auto& p : preds) {
        out << p.slide_id << ',' << p.predicted;
        for (const auto s : p.class_scores) out << ',' << fmt(s);
        out << '\n';
    }
}

// Labelled aggregate row for summary tables.
struct TableEntry {
    std::string label;
    Aggregate aggregate;
};

std::string cell(const Aggregate& a) { return fmt(a.mean, "%.3f") + " ± " + fmt(a.std, "%.3f"); }

// Rows: visionshot per top-K, then one row per other few-shot method; columns: k.
// Zero-shot methods get a single line.
void print_table(const std::vector<TableEntry>& entries, std::ostream& out) {
    std::set<std::size_t> ks;
    for (const auto& e : entries) {
        if (e.aggregate.method != Method::MiZero) ks.insert(e.aggregate.k);
    }
    std::map<std::string, std::map<std::size_t, const Aggregate*>> rows;
    std::vector<std::string> order;
    std::vector<const TableEntry*> zero_shot;
    for (const auto& e : entries) {
        if (e.aggregate.method == Method::MiZero) {
            zero_shot.push_back(&e);
            continue;
        }
        std::string name = e.label;
        if (e.aggregate.method == Method::VisionShot) name += " K=" + std::to_string(e.aggregate.top_k);
        if (!rows.count(name)) order.push_back(name);
        rows[name][e.aggregate.k] = &e.aggregate;
    }

    std::size_t width = 12;
    for (const auto& name : order) width = std::max(width, name.size() + 2);
    if (!order.empty()) {
        out << std::left << std::setw(static_cast<int>(width)) << "method";
        for (const auto k : ks) out << std::setw(18) << ("k=" + std::to_string(k));
        out << '\n';
        for (const auto& name : order) {
            out << std::setw(static_cast<int>(width)) << name;
            for (const auto k : ks) {
                const auto it = rows[name].find(k);
                // "±" is two bytes in UTF-8; pad by one extra so columns line up.
                out << std::setw(19) << (it == rows[name].end() ? std::string("-") : cell(*it->second));
            }
            out << '\n';
        }
    }
    for (const auto* e : zero_shot) {
        out << e->label << " (zero-shot, " << e->aggregate.replicates << " prompts): " << cell(e->aggregate) << '\n';
    }
}

std::vector<TableEntry> entries_of(const std::vector<Aggregate>& aggs, const std::string& suffix = "") {
    std::vector<TableEntry> out;
    for (const auto& a : aggs) out.push_back({std::string(method_name(a.method)) + suffix, a});
    return out;
}

int cmd_synth(const SynthConfig& config, const std::string& out_dir, std::ostream& out) {
    const auto synth = generate(config);
    write_synth_dataset(synth, config, out_dir);
    out << "wrote " << synth.dataset.bags.size() << " slides to " << out_dir << '\n';
    return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Training-free few-shot slide classification over precomputed patch embeddings", "protoshot"};
    app.require_subcommand(1);

    // synth
    SynthConfig synth_cfg;
    std::string synth_patches = "400:600";
    std::string synth_out;
    auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
    synth->add_option("--classes", synth_cfg.num_classes, "Number of classes")->capture_default_str();
    synth->add_option("--dim", synth_cfg.dim, "Embedding dimension")->capture_default_str();
    synth->add_option("--slides-per-class", synth_cfg.slides_per_class, "Slides per class")->capture_default_str();
    synth->add_option("--patches", synth_patches, "Patches per slide, N or MIN:MAX")->capture_default_str();
    synth->add_option("--rho", synth_cfg.informative_fraction, "Informative patch fraction")->capture_default_str();
    synth->add_option("--kappa", synth_cfg.concentration, "Noise scale around the class direction")
        ->capture_default_str();
    synth->add_option("--seed", synth_cfg.seed, "Generator seed")->capture_default_str();
    synth->add_option("--out", synth_out, "Output directory")->required();

    // evaluate
    DataArgs eval_data;
    std::string eval_classifier, eval_methods = "visionshot,simpleshot,mizero,tip-adapter";
    std::string eval_k = "2,4,8,16", eval_topk = "2,20,200,2000", eval_seeds, eval_out, eval_csv;
    std::string eval_format = "json";
    GridConfig grid;
    bool no_norm_protos = false;
    unsigned threads = 0;
    auto* evaluate = app.add_subcommand("evaluate", "Run the cross-validated few-shot grid");
    eval_data.add(evaluate);
    evaluate->add_option("--classifier", eval_classifier, "Text classifier (.pse with .json sidecar)")->required();
    evaluate->add_option("--methods", eval_methods, "Comma-separated methods")->capture_default_str();
    evaluate->add_option("--k-grid", eval_k, "Shots per class")->capture_default_str();
    evaluate->add_option("--topk-grid", eval_topk, "Top-K patches for visionshot")->capture_default_str();
    evaluate->add_option("--folds", grid.num_folds, "Cross-validation folds")->capture_default_str();
    evaluate->add_option("--seeds", eval_seeds, "Comma-separated seeds (default: 5 derived from --base-seed)");
    evaluate->add_option("--base-seed", grid.base_seed, "Seed for folds and derived seeds")->capture_default_str();
    evaluate->add_option("--tip-alpha", grid.tip_alpha, "TIP-Adapter blend weight")->capture_default_str();
    evaluate->add_option("--tip-beta", grid.tip_beta, "TIP-Adapter sharpness")->capture_default_str();
    evaluate->add_flag("--no-normalize-prototypes", no_norm_protos, "Keep prototypes un-normalized");
    evaluate->add_option("--threads", threads, "Worker threads (default: PROTOSHOT_THREADS or all cores)");
    evaluate->add_option("--out", eval_out, "Report path")->required();
    evaluate->add_option("--format", eval_format, "Report format")->check(CLI::IsMember({"json", "csv"}))
        ->capture_default_str();
    evaluate->add_option("--csv", eval_csv, "Also write the flat CSV here");

    // build-prototypes
    DataArgs build_data;
    std::string build_classifier, build_method = "visionshot", build_out;
    std::size_t build_topk = 200;
    bool build_no_norm = false;
    auto* build = app.add_subcommand("build-prototypes", "Build class prototypes from labeled support slides");
    build_data.add(build);
    build->add_option("--classifier", build_classifier, "Text classifier (required for visionshot)");
    build->add_option("--method", build_method, "visionshot or simpleshot")
        ->check(CLI::IsMember({"visionshot", "simpleshot"}))
        ->capture_default_str();
    build->add_option("--top-k", build_topk, "Patches pooled per support slide")->capture_default_str();
    build->add_flag("--no-normalize-prototypes", build_no_norm, "Keep prototypes un-normalized");
    build->add_option("--out", build_out, "Prototype file (.pse, sidecar .json)")->required();

    // predict
    DataArgs predict_data;
    std::string predict_protos, predict_out;
    auto* predict = app.add_subcommand("predict", "Classify slides with a prototype file");
    predict_data.add(predict);
    predict->add_option("--prototypes", predict_protos, "Prototype file")->required();
    predict->add_option("--out", predict_out, "Predictions CSV (default: stdout)");

    // zero-shot
    DataArgs zs_data;
    std::string zs_classifier, zs_out;
    std::size_t zs_prompt = 0;
    auto* zero_shot = app.add_subcommand("zero-shot", "MI-Zero predictions with one prompt classifier");
    zs_data.add(zero_shot);
    zero_shot->add_option("--classifier", zs_classifier, "Text classifier")->required();
    zero_shot->add_option("--prompt", zs_prompt, "Prompt index")->capture_default_str();
    zero_shot->add_option("--out", zs_out, "Predictions CSV (default: stdout)");

    // report
    std::vector<std::string> report_inputs;
    std::string report_csv;
    auto* report = app.add_subcommand("report", "Summarize one or more JSON reports");
    report->add_option("reports", report_inputs, "Report files")->required();
    report->add_option("--csv", report_csv, "Plot-ready CSV (method,k,top_k,mean,std)");

    // export-embeddings
    DataArgs export_data;
    std::string export_classifier, export_kind = "visionshot", export_out;
    std::size_t export_topk = 200;
    auto* export_cmd = app.add_subcommand("export-embeddings", "Slide embeddings, silhouette and 2D PCA");
    export_data.add(export_cmd);
    export_cmd->add_option("--classifier", export_classifier, "Text classifier")->required();
    export_cmd->add_option("--kind", export_kind, "bgap or visionshot")
        ->check(CLI::IsMember({"bgap", "visionshot"}))
        ->capture_default_str();
    export_cmd->add_option("--top-k", export_topk, "Top-K for visionshot")->capture_default_str();
    export_cmd->add_option("--out", export_out, "CSV slide_id,label,pc1,pc2 (default: stdout)");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        const CLI::App* target = &app;
        for (auto* sub : app.get_subcommands()) target = sub;
        out << target->help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n";
        const CLI::App* target = &app;
        for (auto* sub : app.get_subcommands()) target = sub;
        err << target->help();
        return 2;
    }

    try {
        if (synth->parsed()) {
            const auto colon = synth_patches.find(':');
            try {
                if (colon == std::string::npos) {
                    synth_cfg.min_patches = synth_cfg.max_patches = std::stoul(synth_patches);
                } else {
                    synth_cfg.min_patches = std::stoul(synth_patches.substr(0, colon));
                    synth_cfg.max_patches = std::stoul(synth_patches.substr(colon + 1));
                }
            } catch (const std::exception&) {
                throw UsageError("--patches expects N or MIN:MAX");
            }
            try {
                validate(synth_cfg);
            } catch (const Error& e) {
                throw UsageError(e.what());
            }
            return cmd_synth(synth_cfg, synth_out, out);
        }

        if (evaluate->parsed()) {
            grid.methods = parse_methods(eval_methods);
            grid.k_grid = parse_list<std::size_t>(eval_k, "--k-grid");
            grid.topk_grid = parse_list<std::size_t>(eval_topk, "--topk-grid");
            if (!eval_seeds.empty()) grid.seeds = parse_list<std::uint64_t>(eval_seeds, "--seeds");
            grid.normalize_prototypes = !no_norm_protos;
            grid.threads = resolve_threads(threads);
            if (grid.num_folds < 2) throw UsageError("--folds must be at least 2");
            if (std::count(grid.k_grid.begin(), grid.k_grid.end(), 0) ||
                std::count(grid.topk_grid.begin(), grid.topk_grid.end(), 0)) {
                throw UsageError("grid entries must be positive");
            }

            const auto dataset = eval_data.load();
            const auto classifier = load_text_classifier(eval_classifier, LoadOptions{eval_data.renormalize});
            const auto result = run_grid(dataset, classifier, grid);
            write_output(eval_out, out, [&](std::ostream& s) {
                if (eval_format == "csv") {
                    write_report_csv(result, s);
                } else {
                    write_report_json(result, s);
                }
            });
            if (!eval_csv.empty()) write_output(eval_csv, out, [&](std::ostream& s) { write_report_csv(result, s); });
            if (eval_out != "-") print_table(entries_of(result.aggregates), out);
            return 0;
        }

        if (build->parsed()) {
            const auto dataset = build_data.load();
            PrototypeSet protos;
            if (build_method == "visionshot") {
                if (build_classifier.empty()) throw UsageError("--classifier is required for visionshot");
                if (build_topk == 0) throw UsageError("--top-k must be positive");
                const auto classifier = load_text_classifier(build_classifier, LoadOptions{build_data.renormalize});
                protos = build_prototypes(dataset.bags, classifier, build_topk, !build_no_norm);
            } else {
                protos = simpleshot_prototypes(dataset.bags, dataset.num_classes(), !build_no_norm);
            }
            protos.class_names = dataset.manifest.classes;
            const fs::path p(build_out);
            if (p.has_parent_path()) fs::create_directories(p.parent_path());
            save_prototypes(protos, p);
            out << "wrote " << protos.num_classes << " prototypes to " << build_out << '\n';
            return 0;
        }

        if (predict->parsed()) {
            const auto dataset = predict_data.load();
            const auto protos = load_prototypes(predict_protos);
            std::vector<SlidePrediction> preds;
            for (const auto& bag : dataset.bags) preds.push_back(predict_prototype(bag, protos));
            write_output(predict_out, out, [&](std::ostream& s) { write_predictions(preds, protos.num_classes, s); });
            return 0;
        }

        if (zero_shot->parsed()) {
            const auto dataset = zs_data.load();
            const auto classifier = load_text_classifier(zs_classifier, LoadOptions{zs_data.renormalize});
            std::vector<SlidePrediction> preds;
            for (const auto& bag : dataset.bags) preds.push_back(mizero_predict(bag, classifier, zs_prompt));
            write_output(zs_out, out, [&](std::ostream& s) { write_predictions(preds, classifier.num_classes(), s); });
            return 0;
        }

        if (report->parsed()) {
            std::vector<std::pair<std::string, EvalReport>> loaded;
            for (const auto& path : report_inputs) {
                std::ifstream in(path);
                if (!in) throw Error(Errc::MissingFile, path);
                auto r = read_report_json(in);
                const auto recomputed = aggregate_records(r.records);
                bool same = recomputed.size() == r.aggregates.size();
                for (std::size_t i = 0; same && i < recomputed.size(); ++i) {
                    const auto& a = recomputed[i];
                    const auto& b = r.aggregates[i];
                    same = a.method == b.method && a.k == b.k && a.top_k == b.top_k && a.mean == b.mean &&
                           a.std == b.std && a.replicates == b.replicates && a.records == b.records;
                }
                if (!same) throw Error(Errc::MalformedReport, path + ": aggregates do not match its records");
                loaded.emplace_back(fs::path(path).stem().string(), std::move(r));
            }

            // Methods present in more than one report are suffixed with the report name.
            std::map<Method, std::size_t> seen;
            for (const auto& [name, r] : loaded) {
                std::set<Method> ms;
                for (const auto& a : r.aggregates) ms.insert(a.method);
                for (const auto m : ms) ++seen[m];
            }
            std::vector<TableEntry> entries;
            for (const auto& [name, r] : loaded) {
                for (const auto& a : r.aggregates) {
                    std::string label(method_name(a.method));
                    if (seen[a.method] > 1) label += "@" + name;
                    entries.push_back({label, a});
                }
            }
            print_table(entries, out);
            if (!report_csv.empty()) {
                write_output(report_csv, out, [&](std::ostream& s) {
                    s << "method,k,top_k,mean,std\n";
                    for (const auto& e : entries) {
                        s << e.label << ',' << e.aggregate.k << ',' << e.aggregate.top_k << ',' << fmt(e.aggregate.mean)
                          << ',' << fmt(e.aggregate.std) << '\n';
                    }
                });
            }
            return 0;
        }

        if (export_cmd->parsed()) {
            const auto dataset = export_data.load();
            const auto classifier = load_text_classifier(export_classifier, LoadOptions{export_data.renormalize});
            const auto kind = export_kind == "bgap" ? EmbeddingKind::Bgap : EmbeddingKind::VisionShot;
            const auto table = embedding_table(dataset.bags, kind, classifier, export_topk);
            const auto projection = pca_2d(table.rows);
            const double score = silhouette(table.rows, table.labels);
            write_output(export_out, out, [&](std::ostream& s) { write_embedding_csv(table, projection, s); });
            if (!export_out.empty() && export_out != "-") out << "silhouette " << fmt(score) << '\n';
            return 0;
        }
    } catch (const UsageError& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}

}  // namespace protoshot
