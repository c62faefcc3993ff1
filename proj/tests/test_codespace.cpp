#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>

#include "codealign/codespace.hpp"

using namespace codealign;
using codespace::Adapter;
using codespace::Codebook;
using codespace::CodeMap;
using core::FeatureMap;
using core::Rng;
using core::RngSeed;

namespace {

Codebook book_2d(const std::string& owner = "m") {
    Codebook b;
    b.owner = owner;
    b.d = 2;
    b.c_z = 2;
    b.codes = {0.0, 0.0, 1.0, 1.0};
    return b;
}

Codebook random_book(std::uint32_t d, int c_z, Rng& rng, const std::string& owner = "m") {
    Codebook b;
    b.owner = owner;
    b.d = d;
    b.c_z = c_z;
    b.codes.resize(static_cast<std::size_t>(d) * c_z);
    for (auto& v : b.codes) v = rng.uniform(-2.0, 2.0);
    return b;
}

}  // namespace

TEST_CASE("quantize picks the nearest code and breaks ties low") {
    const auto book = book_2d();
    const auto adapter = Adapter::identity("m", 2);

    FeatureMap f(1, 2, 2);
    f.at(0, 0, 0) = 0.2;
    f.at(0, 0, 1) = 0.2;  // nearer [0,0]
    f.at(0, 1, 0) = 0.5;
    f.at(0, 1, 1) = 0.5;  // equidistant -> lowest index
    const auto m = codespace::quantize(f, adapter, book);
    CHECK(m.indices[0] == 0);
    CHECK(m.indices[1] == 0);
}

TEST_CASE("decode is a plain lookup") {
    const auto book = book_2d();
    CodeMap m;
    m.height = 1;
    m.width = 2;
    m.indices = {0, 1};
    m.codebook_ref = {"m", 2};
    const auto f = codespace::decode(m, book);
    CHECK(f.channels == 2);
    CHECK(f.at(0, 0, 0) == 0.0);
    CHECK(f.at(0, 1, 0) == 1.0);
    CHECK(f.at(0, 1, 1) == 1.0);

    CodeMap bad = m;
    bad.indices[0] = 5;
    CHECK_THROWS_AS(codespace::decode(bad, book), core::CorruptionError);

    Codebook other = book;
    other.owner = "different";
    CHECK_THROWS_AS(codespace::decode(m, other), core::ConfigError);
}

TEST_CASE("single-code feature maps and fixed points") {
    // D = 1 is not a legal trained codebook, but decode of a constant map is:
    // check the quantize(decode(M)) = M fixed point on random valid books.
    Rng rng(RngSeed{31});
    for (int trial = 0; trial < 100; ++trial) {
        const std::uint32_t d = 2 + static_cast<std::uint32_t>(rng.uniform_int(15));
        const int c_z = 1 + static_cast<int>(rng.uniform_int(6));
        auto book = random_book(d, c_z, rng);
        if (book.min_pairwise_distance() <= 1e-9) continue;

        CodeMap m;
        m.height = 1 + static_cast<int>(rng.uniform_int(6));
        m.width = 1 + static_cast<int>(rng.uniform_int(6));
        m.codebook_ref = {"m", d};
        m.indices.resize(static_cast<std::size_t>(m.height) * m.width);
        for (auto& v : m.indices) v = static_cast<std::uint32_t>(rng.uniform_int(d));

        const auto decoded = codespace::decode(m, book);
        const auto again = codespace::quantize(decoded, Adapter::identity("m", c_z), book);
        CHECK(again == m);
    }
}

TEST_CASE("quantize validates dimensions") {
    const auto book = book_2d();
    const auto adapter = Adapter::identity("m", 3);
    FeatureMap f(1, 1, 3);
    CHECK_THROWS_AS(codespace::quantize(f, adapter, book), core::ShapeError);
}

TEST_CASE("lloyd: hand-computed one-dimensional step") {
    // features {0, 1, 9, 10}, init codes {0, 10} -> means {0.5, 9.5}
    Codebook b;
    b.owner = "m";
    b.d = 2;
    b.c_z = 1;
    b.codes = {0.0, 10.0};
    const std::vector<double> feats{0.0, 1.0, 9.0, 10.0};
    const auto r = codespace::lloyd_update(feats, 4, b);
    CHECK(r.book.codes[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(r.book.codes[1] == doctest::Approx(9.5).epsilon(1e-12));
    CHECK(r.reseeded == 0);
    CHECK(r.distortion_after <= r.distortion_before);
}

TEST_CASE("lloyd: codebook equal to features is a fixed point") {
    Codebook b;
    b.owner = "m";
    b.d = 3;
    b.c_z = 2;
    b.codes = {0.0, 0.0, 3.0, 0.0, 0.0, 3.0};
    const std::vector<double> feats = b.codes;
    const auto r = codespace::lloyd_update(feats, 3, b);
    CHECK(r.book.codes == b.codes);
    CHECK(r.distortion_after == 0.0);
}

TEST_CASE("lloyd: distortion is non-increasing over repeated updates") {
    Rng rng(RngSeed{32});
    for (int trial = 0; trial < 10; ++trial) {
        const int c_z = 3;
        const std::size_t n = 200;
        std::vector<double> feats(n * c_z);
        for (auto& v : feats) v = rng.uniform(-1.0, 1.0);
        auto book = codespace::kmeanspp_init(feats, n, c_z, 8, "m", RngSeed{100 + static_cast<std::uint64_t>(trial)});
        double prev = codespace::distortion(feats, n, book);
        for (int it = 0; it < 10; ++it) {
            const auto r = codespace::lloyd_update(feats, n, book);
            if (r.reseeded == 0) {
                CHECK(r.distortion_after <= prev + 1e-12);
            }
            prev = r.distortion_after;
            book = r.book;
        }
    }
}

TEST_CASE("lloyd: degenerate input is rejected") {
    Codebook b;
    b.owner = "m";
    b.d = 3;
    b.c_z = 1;
    b.codes = {0.0, 1.0, 2.0};
    const std::vector<double> feats{5.0, 5.0, 5.0, 5.0};  // one distinct value
    CHECK_THROWS_AS(codespace::lloyd_update(feats, 4, b), core::DataError);
}

TEST_CASE("lloyd: empty clusters are re-seeded to far features") {
    Codebook b;
    b.owner = "m";
    b.d = 3;
    b.c_z = 1;
    b.codes = {0.0, 0.1, 100.0};  // nothing will claim 100
    const std::vector<double> feats{0.0, 0.05, 0.1, 5.0};
    const auto r = codespace::lloyd_update(feats, 4, b);
    CHECK(r.reseeded == 1);
    // the farthest feature (5.0) becomes the re-seeded code
    bool found = false;
    for (std::uint32_t l = 0; l < 3; ++l) found = found || r.book.codes[l] == 5.0;
    CHECK(found);
}

TEST_CASE("quantization error bound: per-cell error <= max feature-to-code distance") {
    Rng rng(RngSeed{33});
    const auto book = random_book(8, 4, rng);
    const auto adapter = Adapter::identity("m", 4);
    FeatureMap f(6, 6, 4);
    for (auto& v : f.data) v = rng.uniform(-2.0, 2.0);
    const auto m = codespace::quantize(f, adapter, book);
    const auto dec = codespace::decode(m, book);

    double max_cell_err = 0.0, max_nearest = 0.0;
    for (std::size_t cell = 0; cell < f.cell_count(); ++cell) {
        double err = 0.0;
        double nearest = std::numeric_limits<double>::infinity();
        for (std::uint32_t l = 0; l < book.d; ++l) {
            double s = 0.0;
            for (int k = 0; k < 4; ++k) {
                const double dlt = f.cell(cell)[static_cast<std::size_t>(k)] -
                                   book.code(l)[static_cast<std::size_t>(k)];
                s += dlt * dlt;
            }
            nearest = std::min(nearest, s);
        }
        for (int k = 0; k < 4; ++k) {
            const double dlt = f.cell(cell)[static_cast<std::size_t>(k)] -
                               dec.cell(cell)[static_cast<std::size_t>(k)];
            err += dlt * dlt;
        }
        max_cell_err = std::max(max_cell_err, err);
        max_nearest = std::max(max_nearest, nearest);
    }
    CHECK(max_cell_err <= max_nearest + 1e-12);
}

TEST_CASE("kmeans++ seeding covers distinct features deterministically") {
    std::vector<double> feats{0.0, 1.0, 5.0, 5.1, 9.0, 9.05};
    const auto b1 = codespace::kmeanspp_init(feats, 6, 1, 3, "m", RngSeed{9});
    const auto b2 = codespace::kmeanspp_init(feats, 6, 1, 3, "m", RngSeed{9});
    CHECK(b1.codes == b2.codes);
    CHECK(b1.min_pairwise_distance() > 0.5);  // spread across the three clumps
    CHECK_THROWS_AS(codespace::kmeanspp_init(feats, 6, 1, 7, "m", RngSeed{9}), core::DataError);
}

TEST_CASE("codespace artifact round-trips through json") {
    Rng rng(RngSeed{34});
    codespace::CodespaceArtifact a;
    a.owner = "mB";
    a.book = random_book(4, 3, rng, "mB");
    Adapter ad;
    ad.owner = "mB";
    ad.in_dim = 2;
    ad.out_dim = 3;
    ad.weight = {1, 2, 3, 4, 5, 6};
    ad.bias = {0.1, 0.2, 0.3};
    a.adapters["mB"] = ad;
    a.head.owner = "mB";
    a.head.weight = {0.5, -0.5, 0.25};
    a.head.bias = -1.0;
    a.head.frozen = true;
    a.config_hash = 123456789;
    a.seed = 42;
    a.log.push_back({1, 0.5, 0.1, 0.9, 0});

    const auto dir = std::filesystem::temp_directory_path() / "codealign_test_artifact";
    std::filesystem::create_directories(dir);
    const auto path = (dir / "codespace_mB.json").string();
    codespace::save_codespace(a, path);
    const auto b = codespace::load_codespace(path);
    CHECK(b.owner == a.owner);
    CHECK(b.book.codes == a.book.codes);
    CHECK(b.adapters.at("mB").weight == ad.weight);
    CHECK(b.head.weight == a.head.weight);
    CHECK(b.head.frozen == true);
    CHECK(b.config_hash == a.config_hash);
    CHECK(b.log.size() == 1);
    std::filesystem::remove_all(dir);
}
