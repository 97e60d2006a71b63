#include "offlang/textprep.hpp"

#include "offlang/rng.hpp"

#include "catch_amalgamated.hpp"
#include "test_util.hpp"

using namespace offlang;

namespace {

const EmojiTable& table() {
    static const EmojiTable t = load_emoji_table(testutil::emoji_table_path());
    return t;
}

} // namespace

TEST_CASE("emoji table loads with a useful size") {
    CHECK(table().size() > 500);
}

TEST_CASE("convert_emojis produces demoji-style names") {
    CHECK(convert_emojis("\U0001F642", table()).text == "slightly smiling face");
    CHECK(convert_emojis("hello", table()).text == "hello");
    CHECK(convert_emojis("good \U0001F642\U0001F642", table()).text ==
          "good slightly smiling face slightly smiling face");
    CHECK(convert_emojis("a\U0001F642b", table()).text ==
          "a slightly smiling face b");
}

TEST_CASE("strip_emojis deletes sequences and normalizes the gap") {
    CHECK(strip_emojis("good \U0001F642", table()).text == "good");
    CHECK(strip_emojis("\U0001F642", table()).text == "");
    CHECK(strip_emojis("a\U0001F642b", table()).text == "a b");
    CHECK(strip_emojis("a \U0001F642 b", table()).text == "a b");
    CHECK(strip_emojis("plain text", table()).text == "plain text");
    CHECK(strip_emojis("keeps  interior   spacing", table()).text ==
          "keeps  interior   spacing");
}

TEST_CASE("unknown emoji are dropped and tallied") {
    // U+1F7F1 sits in a pictographic block but has no table entry.
    const auto res = convert_emojis("x \U0001F7F1 y", table());
    CHECK(res.text == "x y");
    CHECK(res.unknown_sequences == 1);
    const auto res2 = strip_emojis("\U0001F7F1\U0001F7F2", table());
    CHECK(res2.text == "");
    CHECK(res2.unknown_sequences == 1); // one maximal run
}

TEST_CASE("ZWJ sequences match longest-first") {
    // woman technologist = woman + ZWJ + laptop; must not decompose.
    const std::string woman_tech = "\U0001F469‍\U0001F4BB";
    CHECK(convert_emojis(woman_tech, table()).text == "woman technologist");
    const std::string woman_alone = "\U0001F469";
    const auto alone = convert_emojis(woman_alone, table()).text;
    CHECK(alone == "woman");
}

TEST_CASE("emoji operations are idempotent") {
    const std::vector<std::string> samples = {
        "good \U0001F642", "\U0001F602\U0001F602 text", "no emoji here",
        "mix ❤️ of \U0001F480 things", "\U0001F469‍\U0001F4BB works"};
    for (const auto& s : samples) {
        const auto once = convert_emojis(s, table()).text;
        CHECK(convert_emojis(once, table()).text == once);
        const auto stripped = strip_emojis(s, table()).text;
        CHECK(strip_emojis(stripped, table()).text == stripped);
    }
}

TEST_CASE("remove_punctuation drops P* and splits at the gap") {
    CHECK(remove_punctuation("hello!!!") == "hello");
    CHECK(remove_punctuation("") == "");
    CHECK(remove_punctuation("it's a, test.") == "it s a test");
    CHECK(remove_punctuation("“quoted” — dash") == "quoted dash");
    CHECK(remove_punctuation("under_score") == "under score"); // Pc
}

TEST_CASE("remove_punctuation output never contains P* characters") {
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        std::string s;
        for (int i = 0; i < 40; ++i) {
            const int pick = static_cast<int>(rng.index(5));
            if (pick == 0)
                s += static_cast<char>('a' + rng.index(26));
            else if (pick == 1)
                s += static_cast<char>("!?.,;:'\"-()[]"[rng.index(13)]);
            else if (pick == 2)
                s += ' ';
            else if (pick == 3)
                utf8_append(s, 0x0D15 + static_cast<char32_t>(rng.index(30))); // Malayalam-ish
            else
                utf8_append(s, 0x2010 + static_cast<char32_t>(rng.index(30))); // punctuation block
        }
        const auto cleaned = remove_punctuation(s);
        std::size_t i = 0;
        while (i < cleaned.size()) {
            const char32_t cp = utf8_next(cleaned, i);
            CHECK(!is_punct(cp));
        }
    }
}

TEST_CASE("whitespace_tokenize splits on unicode whitespace runs") {
    CHECK(whitespace_tokenize("a  b") == TokenSequence{"a", "b"});
    CHECK(whitespace_tokenize("") == TokenSequence{});
    CHECK(whitespace_tokenize("a\tb\nc") == TokenSequence{"a", "b", "c"});
    CHECK(whitespace_tokenize("x y") == TokenSequence{"x", "y"});
    CHECK(whitespace_tokenize("  lead trail  ") == TokenSequence{"lead", "trail"});
}

TEST_CASE("lemmatize_english applies the suffix rule table") {
    CHECK(lemmatize_english({"running"}) == TokenSequence{"run"});
    CHECK(lemmatize_english({"buses"}) == TokenSequence{"bus"});
    CHECK(lemmatize_english({"മലയാളം"}) ==
          TokenSequence{"മലയാളം"});
    CHECK(lemmatize_english({"cats"}) == TokenSequence{"cat"});
    CHECK(lemmatize_english({"studies"}) == TokenSequence{"study"});
    CHECK(lemmatize_english({"boxes"}) == TokenSequence{"box"});
    CHECK(lemmatize_english({"making"}) == TokenSequence{"make"});
    CHECK(lemmatize_english({"falling"}) == TokenSequence{"fall"});
    CHECK(lemmatize_english({"hopped"}) == TokenSequence{"hop"});
    CHECK(lemmatize_english({"hoping"}) == TokenSequence{"hope"});
    CHECK(lemmatize_english({"walked"}) == TokenSequence{"walk"});
    CHECK(lemmatize_english({"bus"}) == TokenSequence{"bus"});
    CHECK(lemmatize_english({"class"}) == TokenSequence{"class"});
    CHECK(lemmatize_english({"this"}) == TokenSequence{"this"});
    CHECK(lemmatize_english({"abc123"}) == TokenSequence{"abc123"}); // non-alpha
}

TEST_CASE("classical pipeline composes strip, punctuation, tokenize, lemmatize") {
    const auto tokens =
        classical_preprocess("Running, FAST!! \U0001F642 buses", table(), true);
    CHECK(tokens == TokenSequence{"run", "fast", "bus"});
    const auto kept_case =
        classical_preprocess("Running buses", table(), false);
    CHECK(kept_case == TokenSequence{"run", "bus"});
}

TEST_CASE("transformer pipeline only converts emojis") {
    CHECK(transformer_preprocess("Keep, punct! \U0001F642", table()) ==
          "Keep, punct! slightly smiling face");
}
