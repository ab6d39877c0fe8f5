#include <fstream>
#include <istream>
#include <ostream>
#include <unordered_set>

#include <json.hpp>

#include "protoshot/embedstore.hpp"
#include "protoshot/error.hpp"

namespace protoshot {

using nlohmann::json;

std::optional<int> DatasetManifest::class_index(const std::string& name) const {
    for (std::size_t i = 0; i < classes.size(); ++i) {
        if (classes[i] == name) return static_cast<int>(i);
    }
    return std::nullopt;
}

DatasetManifest parse_manifest(std::istream& source) {
    DatasetManifest manifest;
    std::string line;
    std::size_t line_no = 0;
    bool have_header = false;
    std::unordered_set<std::string> seen;

    while (std::getline(source, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;

        json obj;
        try {
            obj = json::parse(line);
        } catch (const json::exception& e) {
            throw Error(Errc::ManifestParse, "line " + std::to_string(line_no) + ": " + e.what());
        }
        try {
            if (!have_header) {
                manifest.classes = obj.at("classes").get<std::vector<std::string>>();
                if (manifest.classes.size() < 2) {
                    throw Error(Errc::ManifestParse, "manifest needs at least two classes");
                }
                have_header = true;
                continue;
            }
            ManifestEntry entry;
            entry.slide_id = obj.at("slide_id").get<std::string>();
            entry.class_name = obj.at("class").get<std::string>();
            entry.path = obj.at("path").get<std::string>();
            const auto n = obj.at("num_patches").get<std::int64_t>();
            if (n < 0) throw Error(Errc::ManifestParse, "negative num_patches on line " + std::to_string(line_no));
            entry.num_patches = static_cast<std::size_t>(n);

            if (entry.slide_id.empty()) {
                throw Error(Errc::ManifestParse, "empty slide_id on line " + std::to_string(line_no));
            }
            if (!seen.insert(entry.slide_id).second) throw Error(Errc::DuplicateSlideId, entry.slide_id);
            if (!manifest.class_index(entry.class_name)) {
                throw Error(Errc::UnknownClass, "slide " + entry.slide_id + " has class '" + entry.class_name + "'");
            }
            manifest.slides.push_back(std::move(entry));
        } catch (const json::exception& e) {
            throw Error(Errc::ManifestParse, "line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (!have_header) throw Error(Errc::ManifestParse, "manifest is empty");
    return manifest;
}

void write_manifest(const DatasetManifest& manifest, std::ostream& sink) {
    sink << json{{"classes", manifest.classes}}.dump() << '\n';
    for (const auto& s : manifest.slides) {
        // Fixed key order so generated manifests are byte-stable.
        sink << "{\"slide_id\": " << json(s.slide_id).dump() << ", \"class\": " << json(s.class_name).dump()
             << ", \"path\": " << json(s.path).dump() << ", \"num_patches\": " << s.num_patches << "}\n";
    }
    if (!sink) throw Error(Errc::IoFailure, "failed writing manifest");
}

Dataset load_manifest(const std::filesystem::path& path, const std::filesystem::path& root,
                      const LoadOptions& options) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::MissingFile, path.string());

    Dataset dataset;
    dataset.manifest = parse_manifest(in);
    dataset.bags.reserve(dataset.manifest.slides.size());

    std::size_t dim = 0;
    for (const auto& entry : dataset.manifest.slides) {
        const auto file = root / entry.path;
        if (!std::filesystem::exists(file)) throw Error(Errc::MissingFile, file.string());
        auto patches = apply_norm_policy(read_embeddings_file(file), options, "slide " + entry.slide_id);
        if (patches.rows() != entry.num_patches) {
            throw Error(Errc::PatchCountMismatch, "slide " + entry.slide_id + ": declared " +
                                                      std::to_string(entry.num_patches) + ", file has " +
                                                      std::to_string(patches.rows()));
        }
        if (dim == 0) dim = patches.dim();
        if (patches.dim() != dim) {
            throw Error(Errc::DimensionMismatch, "slide " + entry.slide_id + " has D=" +
                                                     std::to_string(patches.dim()) + ", expected " +
                                                     std::to_string(dim));
        }
        dataset.bags.push_back(SlideBag{entry.slide_id, dataset.manifest.class_index(entry.class_name),
                                        std::move(patches)});
    }
    return dataset;
}

TextClassifier load_text_classifier(const std::filesystem::path& path, const LoadOptions& options) {
    const auto side = sidecar_path(path);
    std::ifstream in(side);
    if (!in) throw Error(Errc::MissingFile, side.string());
    json meta;
    std::size_t classes = 0;
    std::size_t prompts = 0;
    std::vector<std::string> names;
    try {
        meta = json::parse(in);
        classes = meta.at("num_classes").get<std::size_t>();
        prompts = meta.at("num_prompts").get<std::size_t>();
        if (meta.contains("class_names")) names = meta.at("class_names").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        throw Error(Errc::ManifestParse, side.string() + ": " + e.what());
    }
    auto weights = apply_norm_policy(read_embeddings_file(path), options, "text classifier " + path.string());
    return TextClassifier(classes, prompts, std::move(weights), std::move(names));
}

void save_text_classifier(const TextClassifier& classifier, const std::filesystem::path& path) {
    write_embeddings_file(classifier.weights(), path);
    const json meta = {{"num_classes", classifier.num_classes()},
                       {"num_prompts", classifier.num_prompts()},
                       {"class_names", classifier.class_names()}};
    std::ofstream out(sidecar_path(path), std::ios::trunc);
    out << meta.dump(2) << '\n';
    if (!out) throw Error(Errc::IoFailure, "failed writing " + sidecar_path(path).string());
}

}  // namespace protoshot
