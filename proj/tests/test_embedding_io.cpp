#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>

#include "gradnormir/embedding_io.hpp"
#include "gradnormir/error.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace gradnormir;

namespace {

EmbeddingSet token_set(std::mt19937_64& rng, std::size_t n, std::size_t dim, Pooling pooling) {
    EmbeddingSet set;
    set.header.retriever_id = "bge-test";
    set.header.dimension = static_cast<std::uint32_t>(dim);
    set.header.pooling = pooling;
    set.header.has_token_states = true;
    std::uniform_int_distribution<int> tokens(1, 6);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::vector<float>> rows;
        const int t = tokens(rng);
        for (int r = 0; r < t; ++r) rows.push_back(fixture::to_f32(fixture::gaussian(rng, dim)));
        DocumentEmbedding d;
        d.doc_id = "doc-" + std::to_string(i);
        d.token_states = TokenMatrix::from_rows(rows);
        const auto pooled = pool(*d.token_states, pooling);
        d.pooled.assign(pooled.begin(), pooled.end());
        set.records.push_back(std::move(d));
    }
    set.header.record_count = set.records.size();
    return set;
}

}  // namespace

TEST_SUITE("embedding-io") {

TEST_CASE("pool: mean and cls on a 2x2 matrix") {
    const auto m = TokenMatrix::from_rows({{1, 3}, {3, 1}});
    CHECK(pool(m, Pooling::Mean) == Vector{2, 2});
    CHECK(pool(m, Pooling::Cls) == Vector{1, 3});
}

TEST_CASE("pool: empty matrix is rejected") {
    CHECK_THROWS_WITH_AS(pool(TokenMatrix{}, Pooling::Mean), "empty token states", Error);
}

TEST_CASE("pool: random 7x16 mean matches per-column summation") {
    std::mt19937_64 rng(7);
    std::vector<std::vector<float>> rows;
    for (int i = 0; i < 7; ++i) rows.push_back(fixture::to_f32(fixture::gaussian(rng, 16)));
    const auto expected = oracle::column_mean(rows);
    const auto got = pool(TokenMatrix::from_rows(rows), Pooling::Mean);
    for (std::size_t j = 0; j < 16; ++j) CHECK(got[j] == doctest::Approx(expected[j]).epsilon(1e-7));
}

TEST_CASE("pool: mean is row-permutation invariant, cls depends only on row 0") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<std::vector<float>> rows;
        for (int i = 0; i < 5; ++i) rows.push_back(fixture::to_f32(fixture::gaussian(rng, 8)));
        auto shuffled = rows;
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        const auto a = pool(TokenMatrix::from_rows(rows), Pooling::Mean);
        const auto b = pool(TokenMatrix::from_rows(shuffled), Pooling::Mean);
        for (std::size_t j = 0; j < a.size(); ++j) CHECK(a[j] == doctest::Approx(b[j]).epsilon(1e-12));

        auto tail_changed = rows;
        for (std::size_t i = 1; i < tail_changed.size(); ++i) tail_changed[i] = fixture::to_f32(fixture::gaussian(rng, 8));
        CHECK(pool(TokenMatrix::from_rows(rows), Pooling::Cls) == pool(TokenMatrix::from_rows(tail_changed), Pooling::Cls));
    }
}

TEST_CASE("binary round trip is the identity, with and without token states") {
    std::mt19937_64 rng(3);
    const auto dir = fixture::temp_dir("io-roundtrip");
    for (auto pooling : {Pooling::Mean, Pooling::Cls}) {
        const auto set = token_set(rng, 25, 12, pooling);
        write_embedding_set(set.header, set.records, dir / "tok.gne");
        const auto back = read_embedding_set(dir / "tok.gne");
        CHECK(back.header == set.header);
        CHECK(back.records == set.records);
    }
    const auto plain = fixture::pre_pooled_set(fixture::random_docs(rng, 40, 9));
    write_embedding_set(plain.header, plain.records, dir / "plain.gne");
    const auto back = read_embedding_set(dir / "plain.gne");
    CHECK(back.header == plain.header);
    CHECK(back.records == plain.records);
}

TEST_CASE("empty set writes a 0-record file that round-trips") {
    const auto dir = fixture::temp_dir("io-empty");
    EmbeddingSetHeader h;
    h.retriever_id = "none";
    h.dimension = 4;
    write_embedding_set(h, {}, dir / "empty.gne");
    const auto back = read_embedding_set(dir / "empty.gne");
    CHECK(back.header == h);
    CHECK(back.records.empty());
}

TEST_CASE("writing twice produces byte-identical files") {
    std::mt19937_64 rng(5);
    const auto dir = fixture::temp_dir("io-determinism");
    const auto set = token_set(rng, 10, 6, Pooling::Mean);
    write_embedding_set(set.header, set.records, dir / "a.gne");
    write_embedding_set(set.header, set.records, dir / "b.gne");
    CHECK(fixture::slurp(dir / "a.gne") == fixture::slurp(dir / "b.gne"));
}

TEST_CASE("100 random records: every pooled vector survives with cosine 1") {
    std::mt19937_64 rng(100);
    const auto dir = fixture::temp_dir("io-cosine");
    const auto set = fixture::pre_pooled_set(fixture::random_docs(rng, 100, 32));
    write_embedding_set(set.header, set.records, dir / "s.gne");
    const auto back = read_embedding_set(dir / "s.gne");
    REQUIRE(back.records.size() == 100);
    for (std::size_t i = 0; i < 100; ++i) {
        const auto a = set.records[i].pooled_f64();
        const auto b = back.records[i].pooled_f64();
        CHECK(oracle::cosine(a, b) == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("header layout matches the documented byte order") {
    const auto dir = fixture::temp_dir("io-layout");
    EmbeddingSetHeader h;
    h.retriever_id = "ab";
    h.dimension = 2;
    h.record_count = 1;
    h.pooling = Pooling::PrePooled;
    const DocumentEmbedding d{"x", {1.0f, -2.0f}, std::nullopt};
    write_embedding_set(h, std::span(&d, 1), dir / "l.gne");
    const std::string bytes = fixture::slurp(dir / "l.gne");
    const std::string expected = std::string("GNE1") +
                                 std::string("\x01\x00", 2) +                   // version
                                 std::string("\x02\x00", 2) +                   // pooling = pre-pooled
                                 std::string("\x02\x00\x00\x00", 4) +           // dimension
                                 std::string("\x01\x00\x00\x00\x00\x00\x00\x00", 8) +  // record_count
                                 std::string("\x00", 1) +                       // has_token_states
                                 std::string("\x02\x00", 2) + "ab" +            // retriever_id
                                 std::string("\x01\x00", 2) + "x" +             // doc_id
                                 std::string("\x00\x00\x80\x3f", 4) +           // 1.0f
                                 std::string("\x00\x00\x00\xc0", 4);            // -2.0f
    CHECK(bytes == expected);
}

TEST_CASE("reader errors: magic, truncation, duplicates, non-finite, trailing bytes") {
    std::mt19937_64 rng(9);
    const auto dir = fixture::temp_dir("io-errors");
    const auto set = fixture::pre_pooled_set(fixture::random_docs(rng, 3, 4));
    write_embedding_set(set.header, set.records, dir / "ok.gne");
    const std::string bytes = fixture::slurp(dir / "ok.gne");

    SUBCASE("magic mismatch") {
        std::ofstream(dir / "bad.gne", std::ios::binary) << "XXXX" << bytes.substr(4);
        CHECK_THROWS_WITH_AS(read_embedding_set(dir / "bad.gne"), doctest::Contains("magic mismatch"), Error);
    }
    SUBCASE("truncated mid-record") {
        std::ofstream(dir / "trunc.gne", std::ios::binary) << bytes.substr(0, bytes.size() - 3);
        CHECK_THROWS_WITH_AS(read_embedding_set(dir / "trunc.gne"), "truncated record at index 2", Error);
    }
    SUBCASE("trailing bytes") {
        std::ofstream(dir / "trail.gne", std::ios::binary) << bytes << "zz";
        CHECK_THROWS_WITH_AS(read_embedding_set(dir / "trail.gne"), doctest::Contains("trailing bytes"), Error);
    }
    SUBCASE("duplicate doc_id") {
        std::string b = bytes;
        const auto at = b.find("d00001");
        REQUIRE(at != std::string::npos);
        b.replace(at, 6, "d00000");
        std::ofstream(dir / "dup.gne", std::ios::binary) << b;
        CHECK_THROWS_WITH_AS(read_embedding_set(dir / "dup.gne"), doctest::Contains("duplicate doc_id 'd00000'"), Error);
    }
    SUBCASE("NaN coordinate") {
        std::string b = bytes;
        const float nan = std::numeric_limits<float>::quiet_NaN();
        std::memcpy(b.data() + b.size() - 4, &nan, 4);
        std::ofstream(dir / "nan.gne", std::ios::binary) << b;
        CHECK_THROWS_WITH_AS(read_embedding_set(dir / "nan.gne"), doctest::Contains("non-finite"), Error);
    }
}

TEST_CASE("writer rejects count mismatch, duplicates and pre-pooled token states") {
    std::mt19937_64 rng(1);
    const auto dir = fixture::temp_dir("io-writer-errors");
    auto set = fixture::pre_pooled_set(fixture::random_docs(rng, 2, 3));
    auto h = set.header;
    h.record_count = 5;
    CHECK_THROWS_WITH_AS(write_embedding_set(h, set.records, dir / "x.gne"), doctest::Contains("count mismatch"), Error);
    set.records[1].doc_id = set.records[0].doc_id;
    CHECK_THROWS_WITH_AS(write_embedding_set(set.header, set.records, dir / "x.gne"),
                         doctest::Contains("duplicate doc_id"), Error);
    h = set.header;
    h.has_token_states = true;
    CHECK_THROWS_AS(h.validate(), Error);
}

TEST_CASE("mean-pooled record must agree with its token states") {
    EmbeddingSetHeader h;
    h.dimension = 2;
    h.pooling = Pooling::Mean;
    h.has_token_states = true;
    DocumentEmbedding d{"a", {2.0f, 2.0f}, TokenMatrix::from_rows({{1, 3}, {3, 1}})};
    CHECK_NOTHROW(validate_record(h, d));
    d.pooled = {2.0f, 2.1f};
    CHECK_THROWS_WITH_AS(validate_record(h, d), doctest::Contains("not the mean"), Error);
}

TEST_CASE("JSONL fallback reader") {
    const auto dir = fixture::temp_dir("io-jsonl");
    {
        std::ofstream out(dir / "e.jsonl");
        out << R"({"_id": "a", "embedding": [1, 0, 0]})" << "\n\n"
            << R"({"_id": "b", "embedding": [0.5, 0.5, 0]})" << "\n";
    }
    const auto set = load_embeddings(dir / "e.jsonl");
    CHECK(set.header.dimension == 3);
    CHECK(set.header.pooling == Pooling::PrePooled);
    REQUIRE(set.records.size() == 2);
    CHECK(set.records[1].doc_id == "b");
    CHECK(set.records[1].pooled == std::vector<float>{0.5f, 0.5f, 0.0f});

    {
        std::ofstream out(dir / "bad.jsonl");
        out << R"({"_id": "a", "embedding": [1, 0, 0]})" << "\n" << R"({"_id": "b", "embedding": [1, 0]})" << "\n";
    }
    CHECK_THROWS_WITH_AS(load_embeddings(dir / "bad.jsonl"), doctest::Contains("bad.jsonl:2: dimension mismatch"), Error);
}

}  // TEST_SUITE
