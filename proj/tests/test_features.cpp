#include "offlang/features.hpp"

#include "offlang/rng.hpp"

#include "catch_amalgamated.hpp"
#include "test_util.hpp"

using namespace offlang;

TEST_CASE("build_vocabulary filters by frequency in first-occurrence order") {
    const auto vocab = build_vocabulary({{"a", "b"}, {"a"}}, 2);
    REQUIRE(vocab.size() == 1);
    CHECK(vocab.token_to_index.at("a") == 0);
    CHECK(vocab.token_to_index.count("b") == 0);

    const auto v1 = build_vocabulary({{"x"}}, 1);
    CHECK(v1.size() == 1);
    CHECK(v1.token_to_index.at("x") == 0);

    const auto ordered = build_vocabulary({{"z", "y"}, {"x", "z"}}, 1);
    CHECK(ordered.token_to_index.at("z") == 0);
    CHECK(ordered.token_to_index.at("y") == 1);
    CHECK(ordered.token_to_index.at("x") == 2);
}

TEST_CASE("build_vocabulary rejects degenerate corpora") {
    CHECK_THROWS_AS(build_vocabulary({}, 1), DataError);
    CHECK_THROWS_AS(build_vocabulary({{}, {}}, 1), DataError);
    CHECK_THROWS_AS(build_vocabulary({{"a"}, {"b"}}, 3), DataError);
    CHECK_THROWS_AS(build_vocabulary({{"a"}}, 0), ConfigError);
}

TEST_CASE("vectorize counts in-vocabulary tokens and drops OOV") {
    const auto vocab = build_vocabulary({{"a", "b"}}, 1);
    const auto vec = vectorize(vocab, {"a", "a", "b"});
    CHECK(vec.dimension == 2);
    REQUIRE(vec.entries.size() == 2);
    CHECK(vec.entries[0] == std::pair<int, int>{0, 2});
    CHECK(vec.entries[1] == std::pair<int, int>{1, 1});

    const auto oov = vectorize(vocab, {"zzz", "qqq"});
    CHECK(oov.entries.empty());
    CHECK(oov.dimension == 2);
}

TEST_CASE("vectorize is order-insensitive and conserves counts") {
    Rng rng(3);
    const auto vocab = build_vocabulary({{"a", "b", "c", "d"}}, 1);
    for (int trial = 0; trial < 30; ++trial) {
        TokenSequence tokens;
        const int len = static_cast<int>(rng.index(20));
        int in_vocab = 0;
        for (int i = 0; i < len; ++i) {
            const int pick = static_cast<int>(rng.index(6));
            if (pick < 4) {
                tokens.push_back(std::string(1, static_cast<char>('a' + pick)));
                ++in_vocab;
            } else {
                tokens.push_back("oov" + std::to_string(pick));
            }
        }
        const auto vec = vectorize(vocab, tokens);
        int total = 0;
        for (const auto& [idx, count] : vec.entries) {
            CHECK(idx < vec.dimension);
            CHECK(count >= 1);
            total += count;
        }
        CHECK(total == in_vocab);

        auto shuffled = tokens;
        rng.shuffle(shuffled);
        const auto vec2 = vectorize(vocab, shuffled);
        CHECK(vec.entries == vec2.entries);
    }
}

TEST_CASE("bow vocabulary file round trip") {
    testutil::TempDir dir("bow");
    const auto vocab = build_vocabulary({{"alpha", "beta", "gamma"}, {"alpha"}}, 1);
    save_bow_vocabulary(vocab, dir.str("bow.tsv"));
    const auto loaded = load_bow_vocabulary(dir.str("bow.tsv"));
    CHECK(loaded.size() == vocab.size());
    for (int i = 0; i < vocab.size(); ++i)
        CHECK(loaded.index_to_token[i] == vocab.index_to_token[i]);
    CHECK_THROWS_AS(load_bow_vocabulary(dir.str("missing.tsv")), DataError);
}
