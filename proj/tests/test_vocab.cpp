#include "univla/vocab.hpp"

#include "univla/common.hpp"

#include <doctest.h>

#include <sstream>

using namespace univla;

TEST_SUITE_BEGIN("vocab");

TEST_CASE("layout is specials, text, vision, action in fixed order") {
    const Vocabulary v = Vocabulary::build(3, 16, 8, {"go", "left", "stop"});
    CHECK(v.total_size() == 7 + 3 + 16 + 8);
    CHECK(v.text_range().begin == 7);
    CHECK(v.text_range().end == 10);
    CHECK(v.vision_range().begin == 10);
    CHECK(v.vision_range().end == 26);
    CHECK(v.action_range().begin == 26);
    CHECK(v.action_range().end == 34);

    CHECK(v.special(Special::bos) == 0);
    CHECK(v.special(Special::eos) == 1);
    CHECK(v.special(Special::pad) == 2);
    CHECK(v.special(Special::boi) == 3);
    CHECK(v.special(Special::eoi) == 4);
    CHECK(v.special(Special::boa) == 5);
    CHECK(v.special(Special::eoa) == 6);
}

TEST_CASE("every id gets exactly one modality tag") {
    const Vocabulary v = Vocabulary::build(5, 12, 9);
    int counts[4] = {0, 0, 0, 0};
    for (int id = 0; id < v.total_size(); ++id) {
        const Modality m = v.classify(id);
        ++counts[static_cast<int>(m)];
        const bool in_text = v.text_range().contains(id);
        const bool in_vision = v.vision_range().contains(id);
        const bool in_action = v.action_range().contains(id);
        CHECK(static_cast<int>(in_text) + static_cast<int>(in_vision) +
                  static_cast<int>(in_action) + static_cast<int>(id < kNumSpecials) ==
              1);
    }
    CHECK(counts[static_cast<int>(Modality::special)] == kNumSpecials);
    CHECK(counts[static_cast<int>(Modality::text)] == 5);
    CHECK(counts[static_cast<int>(Modality::vision)] == 12);
    CHECK(counts[static_cast<int>(Modality::action)] == 9);
    CHECK_THROWS_AS(v.classify(-1), InvalidArgument);
    CHECK_THROWS_AS(v.classify(v.total_size()), InvalidArgument);
}

TEST_CASE("index and id conversions invert each other") {
    const Vocabulary v = Vocabulary::build(4, 6, 5);
    for (int i = 0; i < 4; ++i) CHECK(v.text_index(v.text_id(i)) == i);
    for (int i = 0; i < 6; ++i) CHECK(v.vision_index(v.vision_id(i)) == i);
    for (int i = 0; i < 5; ++i) CHECK(v.action_index(v.action_id(i)) == i);
    CHECK_THROWS_AS(v.text_id(4), InvalidArgument);
    CHECK_THROWS_AS(v.vision_id(-1), InvalidArgument);
    CHECK_THROWS_AS(v.action_index(v.vision_id(0)), InvalidArgument);
}

TEST_CASE("construction validates sizes and surfaces") {
    CHECK_THROWS_AS(Vocabulary::build(0, 4, 4), InvalidArgument);
    CHECK_THROWS_AS(Vocabulary::build(4, 0, 4), InvalidArgument);
    CHECK_THROWS_AS(Vocabulary::build(4, 4, -1), InvalidArgument);
    CHECK_THROWS_AS(Vocabulary::build(2, 4, 4, {"only"}), InvalidArgument);
}

TEST_CASE("equal sizes produce identical vocabularies") {
    const Vocabulary a = Vocabulary::build(3, 8, 4, {"x", "y", "z"});
    const Vocabulary b = Vocabulary::build(3, 8, 4, {"x", "y", "z"});
    CHECK(a == b);
}

TEST_CASE("surfaces cover every id") {
    const Vocabulary v = Vocabulary::build(2, 3, 2, {"hi", "lo"});
    CHECK(v.surface(v.special(Special::bos)) == "<bos>");
    CHECK(v.surface(v.text_id(0)) == "hi");
    CHECK(v.surface(v.text_id(1)) == "lo");
    CHECK(v.surface(v.vision_id(1)) == "v1");
    CHECK(v.surface(v.action_id(0)) == "a0");
}

TEST_CASE("manifest round trip preserves the vocabulary") {
    const Vocabulary v = Vocabulary::build(3, 10, 6, {"move", "red", "pad"});
    std::stringstream ss;
    v.save_manifest(ss);
    const Vocabulary w = Vocabulary::load_manifest(ss);
    CHECK(v == w);
    CHECK(w.surface(w.text_id(1)) == "red");
}

TEST_CASE("word tokenizer encodes and decodes instructions") {
    const std::vector<std::string> texts = {"move the red block", "lift the blue block"};
    const std::vector<std::string> words = TextTokenizer::collect_words(texts);
    // sorted unique words
    CHECK(words == std::vector<std::string>{"block", "blue", "lift", "move", "red", "the"});

    const Vocabulary v =
        Vocabulary::build(static_cast<int>(words.size()), 4, 4, std::vector<std::string>(words));
    const TextTokenizer tok(v);
    const std::vector<int> ids = tok.encode("move the red block");
    CHECK(ids.size() == 4);
    for (int id : ids) CHECK(v.classify(id) == Modality::text);
    CHECK(tok.decode(ids) == "move the red block");
    CHECK_THROWS_AS(tok.encode("move the green block"), InvalidArgument);
}

TEST_SUITE_END();
