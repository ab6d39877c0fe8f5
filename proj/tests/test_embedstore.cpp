#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "protoshot/embedstore.hpp"
#include "protoshot/error.hpp"
#include "test_support.hpp"

using namespace protoshot;
namespace fs = std::filesystem;

namespace {

template <typename Fn>
Errc error_code_of(Fn&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected protoshot::Error");
    return Errc::InvalidConfig;
}

fs::path scratch_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("protoshot_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string header_bytes(const char* magic, std::uint32_t n, std::uint32_t d, std::uint32_t reserved = 0) {
    std::string s(16, '\0');
    std::memcpy(s.data(), magic, 4);
    std::memcpy(s.data() + 4, &n, 4);
    std::memcpy(s.data() + 8, &d, 4);
    std::memcpy(s.data() + 12, &reserved, 4);
    return s;
}

}  // namespace

TEST_CASE("normalize scales rows to unit norm") {
    const auto out = normalize(PatchMatrix(1, 2, {3.0f, 4.0f}));
    CHECK(out.row(0)[0] == doctest::Approx(0.6).epsilon(1e-7));
    CHECK(out.row(0)[1] == doctest::Approx(0.8).epsilon(1e-7));

    const PatchMatrix eye(2, 2, {1.0f, 0.0f, 0.0f, 1.0f});
    CHECK(normalize(eye) == eye);
}

TEST_CASE("normalize rejects zero rows with their index") {
    try {
        normalize(PatchMatrix(2, 2, {1.0f, 0.0f, 0.0f, 0.0f}));
        FAIL("expected ZeroVectorRow");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::ZeroVectorRow);
        CHECK(e.index() == 1u);
    }
    CHECK(error_code_of([] { normalize(PatchMatrix(1, 2, {0.0f, 0.0f})); }) == Errc::ZeroVectorRow);
}

TEST_CASE("patch matrices reject non-finite values and bad shapes") {
    const float nan = std::numeric_limits<float>::quiet_NaN();
    const float inf = std::numeric_limits<float>::infinity();
    CHECK(error_code_of([&] { PatchMatrix(1, 2, {nan, 1.0f}); }) == Errc::NonFiniteValue);
    CHECK(error_code_of([&] { PatchMatrix(2, 2, {1.0f, 0.0f, inf, 1.0f}); }) == Errc::NonFiniteValue);
    CHECK(error_code_of([] { PatchMatrix(0, 2, {}); }) == Errc::InvalidShape);
    CHECK(error_code_of([] { PatchMatrix(1, 1, {1.0f}); }) == Errc::InvalidShape);
    CHECK(error_code_of([] { PatchMatrix(2, 2, {1.0f, 0.0f}); }) == Errc::InvalidShape);
}

TEST_CASE("normalize is idempotent and preserves direction") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<float> u(-5.0f, 5.0f);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 1 + rng() % 20, d = 2 + rng() % 30;
        std::vector<float> v(n * d);
        for (auto& x : v) x = u(rng);
        const PatchMatrix m(n, d, v);
        const auto once = normalize(m);
        const auto twice = normalize(once);
        CHECK(once.is_normalized(1e-6));
        for (std::size_t i = 0; i < v.size(); ++i) CHECK(std::abs(once.values()[i] - twice.values()[i]) <= 1e-7);
        for (std::size_t r = 0; r < n; ++r) {
            double ratio = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                if (std::abs(m.row(r)[j]) > 1e-3f) {
                    const double q = once.row(r)[j] / static_cast<double>(m.row(r)[j]);
                    CHECK(q > 0.0);
                    if (ratio == 0.0) ratio = q;
                    CHECK(q == doctest::Approx(ratio).epsilon(1e-4));
                }
            }
        }
    }
}

TEST_CASE("write_embeddings byte counts") {
    std::ostringstream small;
    CHECK(write_embeddings(PatchMatrix(1, 2, {0.6f, 0.8f}), small) == 24u);
    CHECK(small.str().size() == 24u);
    CHECK(small.str().substr(0, 4) == "PSE1");

    std::mt19937_64 rng(3);
    std::ostringstream big;
    CHECK(write_embeddings(testing::random_unit_matrix(rng, 100, 512), big) == 204816u);
    CHECK(big.str().size() == 204816u);
}

TEST_CASE("write/read round trip is bit identical") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<float> u(-1e6f, 1e6f);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 1 + rng() % 64, d = 2 + rng() % 64;
        std::vector<float> v(n * d);
        for (auto& x : v) x = u(rng) * (trial % 2 ? 1e-30f : 1.0f);
        const PatchMatrix m(n, d, v);
        std::stringstream buf;
        write_embeddings(m, buf);
        const std::string bytes = buf.str();
        const auto back = read_embeddings(buf);
        REQUIRE(back.rows() == n);
        REQUIRE(back.dim() == d);
        CHECK(std::memcmp(back.values().data(), m.values().data(), n * d * sizeof(float)) == 0);
        CHECK(std::memcmp(bytes.data() + 16, v.data(), n * d * sizeof(float)) == 0);
    }
}

TEST_CASE("read_embeddings rejects malformed input") {
    SUBCASE("wrong magic") {
        std::istringstream in(header_bytes("PSE2", 1, 2) + std::string(8, '\0'));
        CHECK(error_code_of([&] { read_embeddings(in); }) == Errc::BadMagic);
    }
    SUBCASE("empty stream") {
        std::istringstream in("");
        CHECK(error_code_of([&] { read_embeddings(in); }) == Errc::BadMagic);
    }
    SUBCASE("short payload") {
        std::istringstream in(header_bytes("PSE1", 10, 2) + std::string(9 * 2 * 4, '\0'));
        CHECK(error_code_of([&] { read_embeddings(in); }) == Errc::TruncatedPayload);
    }
    SUBCASE("zero dimension") {
        std::istringstream in(header_bytes("PSE1", 3, 0));
        CHECK(error_code_of([&] { read_embeddings(in); }) == Errc::DimensionZero);
        std::istringstream in2(header_bytes("PSE1", 0, 4));
        CHECK(error_code_of([&] { read_embeddings(in2); }) == Errc::DimensionZero);
    }
    SUBCASE("non-finite payload") {
        const float vals[2] = {std::numeric_limits<float>::infinity(), 0.0f};
        std::string bytes = header_bytes("PSE1", 1, 2) + std::string(reinterpret_cast<const char*>(vals), 8);
        std::istringstream in(bytes);
        CHECK(error_code_of([&] { read_embeddings(in); }) == Errc::NonFiniteValue);
    }
    SUBCASE("trailing bytes and reserved field") {
        std::istringstream in(header_bytes("PSE1", 1, 2) + std::string(12, '\0'));
        CHECK(error_code_of([&] { read_embeddings(in); }) == Errc::TrailingBytes);
        std::istringstream in2(header_bytes("PSE1", 1, 2, 7) + std::string(8, '\0'));
        CHECK(error_code_of([&] { read_embeddings(in2); }) == Errc::BadHeader);
    }
}

namespace {

void write_slide(const fs::path& root, const std::string& rel, const PatchMatrix& m) {
    fs::create_directories((root / rel).parent_path());
    write_embeddings_file(m, root / rel);
}

}  // namespace

TEST_CASE("load_manifest resolves labels positionally and keeps order") {
    const auto root = scratch_dir("manifest_ok");
    std::mt19937_64 rng(1);
    write_slide(root, "a.pse", testing::random_unit_matrix(rng, 4, 8));
    write_slide(root, "sub/b.pse", testing::random_unit_matrix(rng, 5, 8));
    write_slide(root, "c.pse", testing::random_unit_matrix(rng, 6, 8));
    {
        std::ofstream m(root / "m.jsonl");
        m << R"({"classes": ["chRCC", "ccRCC", "pRCC"]})" << '\n'
          << R"({"slide_id": "s0", "class": "chRCC", "path": "a.pse", "num_patches": 4})" << '\n'
          << R"({"slide_id": "s1", "class": "ccRCC", "path": "sub/b.pse", "num_patches": 5})" << '\n'
          << R"({"slide_id": "s2", "class": "pRCC", "path": "c.pse", "num_patches": 6})" << '\n';
    }
    const auto ds = load_manifest(root / "m.jsonl", root);
    REQUIRE(ds.bags.size() == 3);
    CHECK(ds.bags[0].slide_id == "s0");
    CHECK(ds.bags[1].slide_id == "s1");
    CHECK(ds.bags[2].slide_id == "s2");
    CHECK(ds.bags[0].label == 0);
    CHECK(ds.bags[1].label == 1);
    CHECK(ds.bags[2].label == 2);
    CHECK(ds.bags[1].patches.rows() == 5);
    CHECK(ds.manifest.class_index("ccRCC") == 1);
}

TEST_CASE("load_manifest errors") {
    const auto root = scratch_dir("manifest_err");
    std::mt19937_64 rng(2);
    write_slide(root, "a.pse", testing::random_unit_matrix(rng, 99, 4));
    auto write = [&](const std::string& body) {
        std::ofstream m(root / "m.jsonl", std::ios::trunc);
        m << R"({"classes": ["x", "y"]})" << '\n' << body << '\n';
    };

    write(R"({"slide_id": "s0", "class": "x", "path": "a.pse", "num_patches": 100})");
    try {
        load_manifest(root / "m.jsonl", root);
        FAIL("expected PatchCountMismatch");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::PatchCountMismatch);
        CHECK(std::string(e.what()).find("s0") != std::string::npos);
    }

    write(R"({"slide_id": "s0", "class": "z", "path": "a.pse", "num_patches": 99})");
    CHECK(error_code_of([&] { load_manifest(root / "m.jsonl", root); }) == Errc::UnknownClass);

    write(R"({"slide_id": "s0", "class": "x", "path": "missing.pse", "num_patches": 99})");
    CHECK(error_code_of([&] { load_manifest(root / "m.jsonl", root); }) == Errc::MissingFile);

    write(R"({"slide_id": "s0", "class": "x", "path": "a.pse", "num_patches": 99})" "\n"
          R"({"slide_id": "s0", "class": "y", "path": "a.pse", "num_patches": 99})");
    CHECK(error_code_of([&] { load_manifest(root / "m.jsonl", root); }) == Errc::DuplicateSlideId);

    write("{not json");
    CHECK(error_code_of([&] { load_manifest(root / "m.jsonl", root); }) == Errc::ManifestParse);
}

TEST_CASE("unnormalized slides are rejected unless renormalization is requested") {
    const auto root = scratch_dir("manifest_norm");
    write_slide(root, "a.pse", PatchMatrix(2, 2, {3.0f, 4.0f, 0.0f, 2.0f}));
    {
        std::ofstream m(root / "m.jsonl");
        m << R"({"classes": ["x", "y"]})" << '\n'
          << R"({"slide_id": "s0", "class": "y", "path": "a.pse", "num_patches": 2})" << '\n';
    }
    CHECK(error_code_of([&] { load_manifest(root / "m.jsonl", root); }) == Errc::NotNormalized);
    const auto ds = load_manifest(root / "m.jsonl", root, LoadOptions{true});
    CHECK(ds.bags[0].patches.row(0)[0] == doctest::Approx(0.6));
    CHECK(ds.bags[0].patches.row(1)[1] == doctest::Approx(1.0));
}

TEST_CASE("text classifier persists with a prompt-major sidecar and canonical vectors") {
    const auto root = scratch_dir("classifier");
    // Two prompts, two classes in D=2.
    const float s = static_cast<float>(std::sqrt(0.5));
    const PatchMatrix w(4, 2, {1.0f, 0.0f, 0.0f, 1.0f, s, s, -s, s});
    const TextClassifier clf(2, 2, w, {"a", "b"});
    save_text_classifier(clf, root / "clf.pse");
    CHECK(fs::exists(root / "clf.json"));

    const auto back = load_text_classifier(root / "clf.pse");
    CHECK(back.num_classes() == 2);
    CHECK(back.num_prompts() == 2);
    CHECK(back.class_names() == std::vector<std::string>{"a", "b"});
    CHECK(back.vector(1, 0)[0] == s);
    CHECK(back.vector(1, 1)[0] == -s);

    // class 0: mean of (1,0) and (s,s), re-normalized.
    const double x = 1.0 + s, y = s, n = std::sqrt(x * x + y * y);
    CHECK(back.canonical(0)[0] == doctest::Approx(x / n).epsilon(1e-7));
    CHECK(back.canonical(0)[1] == doctest::Approx(y / n).epsilon(1e-7));
    const auto c1 = back.canonical(1);
    CHECK(c1[0] * c1[0] + c1[1] * c1[1] == doctest::Approx(1.0).epsilon(1e-12));

    CHECK(error_code_of([] { TextClassifier(2, 1, PatchMatrix(3, 2, {1, 0, 0, 1, 1, 0})); }) == Errc::InvalidShape);
    CHECK(error_code_of([] { TextClassifier(2, 1, PatchMatrix(2, 2, {2, 0, 0, 1})); }) == Errc::NotNormalized);
}
