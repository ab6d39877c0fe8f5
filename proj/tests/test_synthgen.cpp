#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "protoshot/adapters.hpp"
#include "protoshot/error.hpp"
#include "protoshot/evalharness.hpp"
#include "protoshot/simsel.hpp"
#include "protoshot/synthgen.hpp"

using namespace protoshot;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

fs::path scratch_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("protoshot_synth_" + name);
    fs::remove_all(dir);
    return dir;
}

}  // namespace

TEST_CASE("informative_count rounds up") {
    CHECK(informative_count(0.05, 400) == 20);
    CHECK(informative_count(0.05, 401) == 21);
    CHECK(informative_count(0.0, 500) == 0);
    CHECK(informative_count(1.0, 500) == 500);
    CHECK(informative_count(0.1, 30) == 3);
}

TEST_CASE("generated slides have unit rows and the exact informative count") {
    SynthConfig cfg;
    cfg.slides_per_class = 5;
    const auto s = generate(cfg);
    REQUIRE(s.dataset.bags.size() == 15);
    REQUIRE(s.informative_rows.size() == 15);
    CHECK(s.dataset.manifest.classes.size() == 3);
    for (std::size_t i = 0; i < s.dataset.bags.size(); ++i) {
        const auto& bag = s.dataset.bags[i];
        const auto n = bag.patches.rows();
        CHECK(n >= 400);
        CHECK(n <= 600);
        CHECK(bag.patches.dim() == 64);
        CHECK(bag.patches.is_normalized(1e-5));
        CHECK(s.informative_rows[i].size() == informative_count(0.05, n));
        CHECK(bag.label.has_value());
    }
    // class directions are orthonormal
    for (std::size_t a = 0; a < 3; ++a) {
        for (std::size_t b = 0; b < 3; ++b) {
            double d = 0.0;
            for (std::size_t j = 0; j < 64; ++j) d += double(s.classifier.canonical(a)[j]) * s.classifier.canonical(b)[j];
            CHECK(d == doctest::Approx(a == b ? 1.0 : 0.0).epsilon(1e-5));
        }
    }
}

TEST_CASE("informative patches align with their class direction") {
    SynthConfig cfg;
    cfg.slides_per_class = 4;
    const auto s = generate(cfg);
    double inf_sum = 0.0, bg_sum = 0.0;
    std::size_t inf_n = 0, bg_n = 0;
    for (std::size_t i = 0; i < s.dataset.bags.size(); ++i) {
        const auto& bag = s.dataset.bags[i];
        const auto scores = score_against(bag.patches, s.classifier.canonical(static_cast<std::size_t>(*bag.label)));
        std::vector<bool> inf(bag.patches.rows(), false);
        for (const auto r : s.informative_rows[i]) inf[r] = true;
        for (std::size_t r = 0; r < scores.size(); ++r) {
            (inf[r] ? inf_sum : bg_sum) += scores[r];
            ++(inf[r] ? inf_n : bg_n);
        }
    }
    // E[<u, (u + g)/|u + g|>] is about 1/sqrt(1 + D) = 0.124 for D = 64, kappa = 1;
    // background mean is 0 with sd 1/sqrt(D) per patch.
    CHECK(inf_sum / inf_n > 0.08);
    CHECK(std::abs(bg_sum / bg_n) < 0.01);
}

TEST_CASE("rho = 1 and kappa = 0 makes every patch the class direction") {
    SynthConfig cfg;
    cfg.num_classes = 3;
    cfg.dim = 8;
    cfg.slides_per_class = 10;
    cfg.min_patches = 5;
    cfg.max_patches = 9;
    cfg.informative_fraction = 1.0;
    cfg.concentration = 0.0;
    const auto s = generate(cfg);
    for (const auto& bag : s.dataset.bags) {
        const auto dir = s.classifier.canonical(static_cast<std::size_t>(*bag.label));
        for (std::size_t r = 0; r < bag.patches.rows(); ++r) {
            for (std::size_t j = 0; j < 8; ++j) CHECK(bag.patches.row(r)[j] == doctest::Approx(dir[j]).epsilon(1e-6));
        }
    }
    GridConfig grid;
    grid.seeds = {1};
    grid.k_grid = {2};
    grid.topk_grid = {3};
    const auto report = run_grid(s.dataset, s.classifier, grid);
    for (const auto& a : report.aggregates) CHECK(a.mean == 1.0);
}

TEST_CASE("rho = 0 leaves zero-shot at chance") {
    SynthConfig cfg;
    cfg.num_classes = 3;
    cfg.dim = 32;
    cfg.slides_per_class = 100;
    cfg.min_patches = 50;
    cfg.max_patches = 80;
    cfg.informative_fraction = 0.0;
    cfg.seed = 11;
    const auto s = generate(cfg);
    for (const auto& rows : s.informative_rows) CHECK(rows.empty());
    std::size_t correct = 0;
    for (const auto& bag : s.dataset.bags) {
        if (mizero_predict(bag, s.classifier, 0).predicted == *bag.label) ++correct;
    }
    const double n = static_cast<double>(s.dataset.bags.size());
    const double p = 1.0 / 3.0;
    CHECK(std::abs(correct / n - p) <= 3 * std::sqrt(p * (1 - p) / n));
}

TEST_CASE("synthetic files are byte-identical per seed") {
    SynthConfig cfg;
    cfg.slides_per_class = 3;
    cfg.min_patches = 10;
    cfg.max_patches = 20;
    const auto a = scratch_dir("a"), b = scratch_dir("b"), c = scratch_dir("c");
    write_synth_dataset(generate(cfg), cfg, a);
    write_synth_dataset(generate(cfg), cfg, b);
    auto other = cfg;
    other.seed = cfg.seed + 1;
    write_synth_dataset(generate(other), other, c);

    std::size_t files = 0;
    for (const auto& entry : fs::recursive_directory_iterator(a)) {
        if (!entry.is_regular_file()) continue;
        const auto rel = fs::relative(entry.path(), a);
        CHECK(slurp(entry.path()) == slurp(b / rel));
        ++files;
    }
    CHECK(files == 9 + 4);
    CHECK(slurp(a / "slides" / "slide_0000.pse") != slurp(c / "slides" / "slide_0000.pse"));

    const auto loaded = load_manifest(a / "manifest.jsonl", a, {});
    CHECK(loaded.bags.size() == 9);
    const auto clf = load_text_classifier(a / "classifier.pse");
    CHECK(clf.num_classes() == 3);
    for (const auto& d : {a, b, c}) fs::remove_all(d);
}

TEST_CASE("invalid synth configs") {
    const auto expect_invalid = [](SynthConfig c) {
        CHECK_THROWS_WITH_AS(validate(c), doctest::Contains("InvalidConfig"), Error);
        CHECK_THROWS_AS(generate(c), Error);
    };
    SynthConfig c;
    c.informative_fraction = 1.5;
    expect_invalid(c);
    c = {};
    c.informative_fraction = -0.1;
    expect_invalid(c);
    c = {};
    c.concentration = -1.0;
    expect_invalid(c);
    c = {};
    c.num_classes = 1;
    expect_invalid(c);
    c = {};
    c.dim = 2;  // fewer dims than classes
    expect_invalid(c);
    c = {};
    c.min_patches = 0;
    expect_invalid(c);
    c = {};
    c.min_patches = 700;
    expect_invalid(c);
    c = {};
    c.slides_per_class = 0;
    expect_invalid(c);
}
