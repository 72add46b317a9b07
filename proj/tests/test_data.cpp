#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "kafforge/data.hpp"

using namespace kafforge;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    REQUIRE(is);
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

struct TempFile {
    std::string path;
    explicit TempFile(std::string p) : path(std::move(p)) {}
    ~TempFile() { std::remove(path.c_str()); }
};

} // namespace

TEST_CASE("icrd round trips") {
    const Dataset ds = gen_glyphs(5, 3, 8, 8, 0.1, 21);
    TempFile file("icrd_roundtrip.icrd");
    save_icrd(ds, file.path);

    const Dataset loaded = load_icrd(file.path);
    CHECK(loaded.class_count == ds.class_count);
    CHECK(loaded.labels == ds.labels);
    REQUIRE(loaded.images.shape() == ds.images.shape());
    for (std::size_t i = 0; i < ds.images.size(); ++i)
        CHECK(loaded.images[i] == ds.images[i]); // generators stay on the byte grid

    TempFile second("icrd_roundtrip2.icrd");
    save_icrd(loaded, second.path);
    CHECK(slurp(file.path) == slurp(second.path)); // load then save is byte-identical
}

TEST_CASE("empty icrd file is header only") {
    Dataset empty;
    empty.class_count = 4;
    empty.images = Tensor({0, 1, 8, 8});
    TempFile file("icrd_empty.icrd");
    save_icrd(empty, file.path);
    CHECK(slurp(file.path).size() == 25); // 5-byte magic + five u32 fields

    const Dataset loaded = load_icrd(file.path);
    CHECK(loaded.size() == 0);
    CHECK(loaded.class_count == 4);
}

TEST_CASE("pixel byte 255 maps to exactly 1.0") {
    Dataset ds;
    ds.class_count = 1;
    ds.labels = {0};
    ds.images = Tensor({1, 1, 1, 2}, {1.0, 0.0});
    TempFile file("icrd_pixel.icrd");
    save_icrd(ds, file.path);
    const Dataset loaded = load_icrd(file.path);
    CHECK(loaded.images[0] == 1.0);
    CHECK(loaded.images[1] == 0.0);
}

TEST_CASE("icrd format errors carry byte offsets") {
    SECTION("bad magic") {
        TempFile file("icrd_badmagic.icrd");
        std::ofstream(file.path, std::ios::binary) << "NOPE!whatever";
        try {
            load_icrd(file.path);
            FAIL("expected a format error");
        } catch (const FormatError& e) {
            CHECK(std::string(e.what()).find("offset 0") != std::string::npos);
        }
    }

    SECTION("truncated payload") {
        const Dataset ds = gen_glyphs(2, 2, 8, 8, 0.0, 3);
        TempFile file("icrd_trunc.icrd");
        save_icrd(ds, file.path);
        const std::string bytes = slurp(file.path);
        std::ofstream(file.path, std::ios::binary)
            << bytes.substr(0, bytes.size() - 7);
        CHECK_THROWS_AS(load_icrd(file.path), FormatError);
    }

    SECTION("label out of range") {
        const Dataset ds = gen_glyphs(2, 2, 8, 8, 0.0, 3);
        TempFile file("icrd_label.icrd");
        save_icrd(ds, file.path);
        std::string bytes = slurp(file.path);
        bytes[25] = 9; // first label, classes = 2
        std::ofstream(file.path, std::ios::binary) << bytes;
        try {
            load_icrd(file.path);
            FAIL("expected a format error");
        } catch (const FormatError& e) {
            CHECK(std::string(e.what()).find("offset 25") != std::string::npos);
        }
    }
}

TEST_CASE("csv ingestion") {
    SECTION("basic row") {
        TempFile file("csv_basic.csv");
        std::ofstream(file.path) << "3,0,0,0,255\n";
        const Dataset ds = load_csv_dataset(file.path, 5, 2, 2);
        REQUIRE(ds.size() == 1);
        CHECK(ds.labels[0] == 3);
        CHECK(ds.images[0] == 0.0);
        CHECK(ds.images[3] == 1.0);
    }

    SECTION("empty file") {
        TempFile file("csv_empty.csv");
        std::ofstream(file.path) << "";
        const Dataset ds = load_csv_dataset(file.path, 5, 2, 2);
        CHECK(ds.size() == 0);
    }

    SECTION("short row names the line") {
        TempFile file("csv_short.csv");
        std::ofstream(file.path) << "0,1,2,3,4\n1,1,2,3\n";
        try {
            load_csv_dataset(file.path, 5, 2, 2);
            FAIL("expected a format error");
        } catch (const FormatError& e) {
            CHECK(std::string(e.what()).find("line 2") != std::string::npos);
        }
    }

    SECTION("non-numeric cell") {
        TempFile file("csv_nan.csv");
        std::ofstream(file.path) << "0,1,x,3,4\n";
        CHECK_THROWS_AS(load_csv_dataset(file.path, 5, 2, 2), FormatError);
    }

    SECTION("label out of range") {
        TempFile file("csv_label.csv");
        std::ofstream(file.path) << "7,1,2,3,4\n";
        CHECK_THROWS_AS(load_csv_dataset(file.path, 5, 2, 2), FormatError);
    }
}

TEST_CASE("blob generator") {
    const Dataset a = gen_blobs(50, 3, 4, 0.1, 11);
    const Dataset b = gen_blobs(50, 3, 4, 0.1, 11);
    CHECK(a.labels == b.labels);
    for (std::size_t i = 0; i < a.images.size(); ++i) CHECK(a.images[i] == b.images[i]);
    CHECK(a.images.shape() == std::vector<std::size_t>{150, 1, 1, 4});
    CHECK_NOTHROW(a.validate());

    // zero spread collapses each class to a point
    const Dataset degenerate = gen_blobs(10, 2, 4, 0.0, 5);
    for (std::size_t i = 1; i < 10; ++i)
        for (std::size_t d = 0; d < 4; ++d)
            CHECK(degenerate.images[i * 4 + d] == degenerate.images[d]);

    CHECK_THROWS_AS(gen_blobs(10, 1, 4, 0.1, 1), DomainError);
    CHECK_THROWS_AS(gen_blobs(10, 2, 1, 0.1, 1), DomainError);
}

TEST_CASE("glyph generator") {
    const Dataset a = gen_glyphs(20, 8, 16, 16, 0.02, 13);
    const Dataset b = gen_glyphs(20, 8, 16, 16, 0.02, 13);
    for (std::size_t i = 0; i < a.images.size(); ++i) CHECK(a.images[i] == b.images[i]);
    CHECK_NOTHROW(a.validate());
    CHECK(a.size() == 160);

    // noise-free, shift-free samples of a class are identical
    const Dataset clean = gen_glyphs(5, 4, 16, 16, 0.0, 17, 0);
    const std::size_t stride = 16 * 16;
    for (int c = 0; c < 4; ++c)
        for (std::size_t i = 1; i < 5; ++i)
            for (std::size_t p = 0; p < stride; ++p)
                CHECK(clean.images[(c * 5 + i) * stride + p] ==
                      clean.images[(c * 5) * stride + p]);

    // the class patterns are pairwise distinct
    for (int c1 = 0; c1 < 4; ++c1)
        for (int c2 = c1 + 1; c2 < 4; ++c2) {
            bool differs = false;
            for (std::size_t p = 0; p < stride && !differs; ++p)
                differs = clean.images[static_cast<std::size_t>(c1) * 5 * stride + p] !=
                          clean.images[static_cast<std::size_t>(c2) * 5 * stride + p];
            CHECK(differs);
        }

    CHECK_THROWS_AS(gen_glyphs(5, 20, 16, 16, 0.0, 1), DomainError);
    CHECK_THROWS_AS(gen_glyphs(5, 4, 4, 4, 0.0, 1), DomainError);
}

TEST_CASE("one hot") {
    CHECK(one_hot(0, 3) == std::vector<double>{1.0, 0.0, 0.0});
    CHECK(one_hot(2, 5) == std::vector<double>{0.0, 0.0, 1.0, 0.0, 0.0});
    for (int c = 0; c < 5; ++c) {
        double sum = 0.0;
        for (double v : one_hot(c, 5)) sum += v;
        CHECK(sum == 1.0);
    }
    CHECK_THROWS_AS(one_hot(5, 5), DomainError);
    CHECK_THROWS_AS(one_hot(-1, 5), DomainError);
}

TEST_CASE("dataset validation and subsetting") {
    Dataset ds = gen_blobs(10, 2, 4, 0.1, 1);
    const Dataset sub = subset(ds, {0, 5, 19});
    CHECK(sub.size() == 3);
    CHECK(sub.labels[2] == ds.labels[19]);
    CHECK_THROWS_AS(subset(ds, {99}), DomainError);

    ds.labels[0] = 7; // out of range
    CHECK_THROWS_AS(ds.validate(), DomainError);
}
