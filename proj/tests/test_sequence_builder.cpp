#include "univla/sequence_builder.hpp"

#include "univla/common.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <numeric>
#include <sstream>

using namespace univla;

namespace {

const Vocabulary& test_vocab() {
    static const Vocabulary v = Vocabulary::build(5, 16, 30);
    return v;
}

TokenGrid grid16(const Vocabulary& v, int salt = 0) {
    TokenGrid g;
    g.rows = 4;
    g.cols = 4;
    for (int i = 0; i < 16; ++i) g.ids.push_back(v.vision_id((i + salt) % v.vision_range().size()));
    return g;
}

std::vector<int> actions_n(const Vocabulary& v, int n, int salt = 0) {
    std::vector<int> out;
    for (int i = 0; i < n; ++i) out.push_back(v.action_id((i + salt) % v.action_range().size()));
    return out;
}

std::vector<int> instr_n(const Vocabulary& v, int n) {
    std::vector<int> out;
    for (int i = 0; i < n; ++i) out.push_back(v.text_id(i % v.text_range().size()));
    return out;
}

int mask_count(const TokenSequence& s) {
    return static_cast<int>(std::accumulate(s.mask.begin(), s.mask.end(), 0));
}

// Invariants shared by every builder output: parallel arrays, spans tiling
// the non-special interior in order, and unmasked structural tokens.
void check_wellformed(const TokenSequence& s, const Vocabulary& v) {
    REQUIRE(s.ids.size() == s.mask.size());
    std::vector<int> cover(s.ids.size(), 0);
    int prev_end = 0;
    for (const Span& sp : s.spans) {
        CHECK(sp.begin >= prev_end);
        CHECK(sp.begin < sp.end);
        prev_end = sp.end;
        for (int p = sp.begin; p < sp.end; ++p) {
            ++cover[static_cast<std::size_t>(p)];
            CHECK(v.classify(s.ids[static_cast<std::size_t>(p)]) == sp.modality);
        }
    }
    for (std::size_t p = 0; p < s.ids.size(); ++p) {
        const bool special = v.classify(s.ids[p]) == Modality::special;
        CHECK(cover[p] == (special ? 0 : 1));
        if (s.mask[p]) CHECK_FALSE(special);
    }
}

} // namespace

TEST_SUITE_BEGIN("sequence_builder");

TEST_CASE("world-model layout: bos, text, bracketed frames, eos") {
    const Vocabulary& v = test_vocab();
    const std::vector<TokenGrid> frames = {grid16(v, 0), grid16(v, 3)};
    const TokenSequence s = build_world_model_seq(instr_n(v, 3), frames, v);
    CHECK(s.size() == 1 + 3 + (16 + 2) * 2 + 1);
    CHECK(mask_count(s) == 16);
    check_wellformed(s, v);

    CHECK(s.ids.front() == v.special(Special::bos));
    CHECK(s.ids.back() == v.special(Special::eos));
    // only the second frame's interior is supervised
    const std::vector<std::uint8_t> want =
        oracle::scan_mask(s.ids, v, {.cond_frames = 1, .mask_vision = true});
    CHECK(s.mask == want);

    CHECK_THROWS_AS(build_world_model_seq(instr_n(v, 3), {grid16(v)}, v), InvalidArgument);
}

TEST_CASE("world-model mask grows with the frame count") {
    const Vocabulary& v = test_vocab();
    std::vector<TokenGrid> frames;
    for (int i = 0; i < 6; ++i) frames.push_back(grid16(v, i));
    const TokenSequence s = build_world_model_seq(instr_n(v, 2), frames, v);
    CHECK(mask_count(s) == 5 * 16);
    check_wellformed(s, v);
}

TEST_CASE("policy window 1+1 supervises only the final action block") {
    const Vocabulary& v = test_vocab();
    std::vector<PolicyStep> steps;
    for (int t : {0, 10, 20}) {
        PolicyStep st;
        st.frame = grid16(v, t);
        st.actions = actions_n(v, 12, t);
        st.timestep = t;
        steps.push_back(st);
    }
    const HistoryConfig hist{1, 1, 10};
    const TokenSequence s = build_policy_seq(instr_n(v, 3), steps, hist, v);
    // two retained steps, each [BOI 16 EOI][BOA 12 EOA]
    CHECK(s.size() == 1 + 3 + (18 + 14) * 2 + 1);
    CHECK(mask_count(s) == 12);
    check_wellformed(s, v);
    CHECK(s.mask == oracle::scan_mask(s.ids, v, {.mask_actions = true}));

    // retained timesteps are the current step and the one nearest t−10
    REQUIRE(s.spans.size() == 5); // text, v, a, v, a
    CHECK(s.spans[1].modality == Modality::vision);
    CHECK(s.spans[1].timestep == 10);
    CHECK(s.spans[2].modality == Modality::action);
    CHECK(s.spans[3].modality == Modality::vision);
    CHECK(s.spans[3].timestep == 20);
    CHECK(s.spans[4].modality == Modality::action);
    // the supervised block belongs to the current step
    for (int p = s.spans[4].begin; p < s.spans[4].end; ++p)
        CHECK(s.mask[static_cast<std::size_t>(p)] == 1);
}

TEST_CASE("policy window 1+0 is the single-step layout") {
    const Vocabulary& v = test_vocab();
    PolicyStep st;
    st.frame = grid16(v);
    st.actions = actions_n(v, 8);
    st.timestep = 42;
    const TokenSequence s = build_policy_seq(instr_n(v, 4), {st}, HistoryConfig{1, 0, 10}, v);
    CHECK(s.size() == 1 + 4 + 18 + 10 + 1);
    CHECK(mask_count(s) == 8);
    check_wellformed(s, v);
    CHECK_THROWS_AS(build_policy_seq(instr_n(v, 4), {}, HistoryConfig{}, v), InvalidArgument);
}

TEST_CASE("history slots pick the step nearest each strided timestep") {
    const Vocabulary& v = test_vocab();
    auto mk = [&](std::vector<int> ts) {
        std::vector<PolicyStep> steps;
        for (int t : ts) {
            PolicyStep st;
            st.frame = grid16(v, t);
            st.actions = actions_n(v, 4);
            st.timestep = t;
            steps.push_back(st);
        }
        return steps;
    };
    auto retained = [&](const TokenSequence& s) {
        std::vector<int> ts;
        for (const Span& sp : s.spans)
            if (sp.modality == Modality::vision) ts.push_back(sp.timestep);
        return ts;
    };

    // nearest to 20−10: step 12 beats step 7
    TokenSequence a = build_policy_seq(instr_n(v, 2), mk({0, 3, 7, 12, 20}),
                                       HistoryConfig{1, 1, 10}, v);
    CHECK(retained(a) == std::vector<int>{12, 20});

    // exact-distance tie resolves to the earlier step
    TokenSequence b =
        build_policy_seq(instr_n(v, 2), mk({10, 20, 30}), HistoryConfig{1, 1, 15}, v);
    CHECK(retained(b) == std::vector<int>{10, 30});

    // more slots than past steps: keep everything, no error
    TokenSequence c = build_policy_seq(instr_n(v, 2), mk({5, 9}), HistoryConfig{1, 3, 10}, v);
    CHECK(retained(c) == std::vector<int>{5, 9});

    CHECK_THROWS_AS(build_policy_seq(instr_n(v, 2), mk({5, 5}), HistoryConfig{}, v),
                    InvalidArgument);
}

TEST_CASE("policy options widen the supervision") {
    const Vocabulary& v = test_vocab();
    std::vector<PolicyStep> steps;
    for (int t : {0, 10, 20}) {
        PolicyStep st;
        st.frame = grid16(v, t);
        st.actions = actions_n(v, 6, t);
        st.timestep = t;
        steps.push_back(st);
    }
    const HistoryConfig hist{1, 2, 10};

    PolicyBuildOptions all_actions;
    all_actions.mask_history_actions = true;
    const TokenSequence a = build_policy_seq(instr_n(v, 3), steps, hist, v, all_actions);
    CHECK(mask_count(a) == 3 * 6);
    CHECK(a.mask ==
          oracle::scan_mask(a.ids, v, {.mask_actions = true, .last_action_only = false}));
    check_wellformed(a, v);

    PolicyBuildOptions joint;
    joint.supervise_vision = true;
    const TokenSequence b = build_policy_seq(instr_n(v, 3), steps, hist, v, joint);
    CHECK(mask_count(b) == 2 * 16 + 6);
    CHECK(b.mask == oracle::scan_mask(b.ids, v,
                                      {.cond_frames = 1, .mask_vision = true,
                                       .mask_actions = true}));
    check_wellformed(b, v);
}

TEST_CASE("policy prompt stops right after the opening action bracket") {
    const Vocabulary& v = test_vocab();
    std::vector<PolicyStep> steps;
    PolicyStep past;
    past.frame = grid16(v, 1);
    past.actions = actions_n(v, 5);
    past.timestep = 0;
    steps.push_back(past);
    PolicyStep cur;
    cur.frame = grid16(v, 2);
    cur.timestep = 10;
    steps.push_back(cur);

    const TokenSequence s = build_policy_prompt(instr_n(v, 3), steps, HistoryConfig{1, 1, 10}, v);
    CHECK(s.ids.back() == v.special(Special::boa));
    CHECK(mask_count(s) == 0);
    CHECK(s.size() == 1 + 3 + (18 + 7) + 18 + 1);

    steps.back().actions = actions_n(v, 2);
    CHECK_THROWS_AS(build_policy_prompt(instr_n(v, 3), steps, HistoryConfig{1, 1, 10}, v),
                    InvalidArgument);
}

TEST_CASE("text-to-image supervises exactly the frame") {
    const Vocabulary& v = test_vocab();
    const TokenSequence s = build_t2i_seq(instr_n(v, 3), grid16(v), v);
    CHECK(s.size() == 1 + 3 + 18 + 1);
    CHECK(mask_count(s) == 16);
    CHECK(s.mask == oracle::scan_mask(s.ids, v, {.mask_vision = true}));
    check_wellformed(s, v);
    CHECK_THROWS_AS(build_t2i_seq({}, grid16(v), v), InvalidArgument);
}

TEST_CASE("video sequences carry no text and mask the continuation") {
    const Vocabulary& v = test_vocab();
    const TokenSequence s = build_video_seq({grid16(v, 0), grid16(v, 1), grid16(v, 2)}, v);
    CHECK(s.size() == 1 + 18 * 3 + 1);
    CHECK(mask_count(s) == 32);
    CHECK(s.mask == oracle::scan_mask(s.ids, v, {.cond_frames = 1, .mask_vision = true}));
    for (const Span& sp : s.spans) CHECK(sp.modality == Modality::vision);
    check_wellformed(s, v);
    CHECK_THROWS_AS(build_video_seq({grid16(v)}, v), InvalidArgument);
}

TEST_CASE("action prediction supervises exactly the action block") {
    const Vocabulary& v = test_vocab();
    const TokenSequence s = build_action_pred_seq(instr_n(v, 3), grid16(v), actions_n(v, 9), v);
    CHECK(s.size() == 1 + 3 + 18 + 11 + 1);
    CHECK(mask_count(s) == 9);
    CHECK(s.mask == oracle::scan_mask(s.ids, v, {.mask_actions = true}));
    check_wellformed(s, v);
    CHECK_THROWS_AS(build_action_pred_seq(instr_n(v, 3), grid16(v), {}, v), InvalidArgument);
}

TEST_CASE("builders reject tokens from the wrong range") {
    const Vocabulary& v = test_vocab();
    CHECK_THROWS_AS(build_t2i_seq({v.vision_id(0)}, grid16(v), v), InvalidArgument);
    TokenGrid bad = grid16(v);
    bad.ids[0] = v.action_id(0);
    CHECK_THROWS_AS(build_t2i_seq(instr_n(v, 2), bad, v), InvalidArgument);
    CHECK_THROWS_AS(build_action_pred_seq(instr_n(v, 2), grid16(v), {v.text_id(0)}, v),
                    InvalidArgument);
}

TEST_CASE("the length cap is enforced") {
    const Vocabulary& v = test_vocab();
    CHECK_THROWS_AS(build_t2i_seq(instr_n(v, 3), grid16(v), v, 20), InvalidArgument);
    CHECK_NOTHROW(build_t2i_seq(instr_n(v, 3), grid16(v), v, 23));
}

TEST_CASE("masks agree with the bracket scanner on randomized inputs") {
    const Vocabulary& v = test_vocab();
    Rng rng(606);
    for (int trial = 0; trial < 50; ++trial) {
        const std::vector<int> instr = instr_n(v, 1 + rng.randint(4));
        const int n_frames = 2 + rng.randint(4);
        std::vector<TokenGrid> frames;
        std::vector<PolicyStep> steps;
        int t = 0;
        for (int i = 0; i < n_frames; ++i) {
            frames.push_back(grid16(v, rng.randint(16)));
            PolicyStep st;
            st.frame = frames.back();
            st.actions = actions_n(v, 1 + rng.randint(12), rng.randint(7));
            st.timestep = t;
            t += 1 + rng.randint(12);
            steps.push_back(st);
        }
        const HistoryConfig hist{1, rng.randint(3), 1 + rng.randint(15)};

        const TokenSequence wm = build_world_model_seq(instr, frames, v);
        CHECK(wm.mask == oracle::scan_mask(wm.ids, v, {.cond_frames = 1, .mask_vision = true}));

        const TokenSequence vid = build_video_seq(frames, v);
        CHECK(vid.mask == oracle::scan_mask(vid.ids, v, {.cond_frames = 1, .mask_vision = true}));

        const TokenSequence t2i = build_t2i_seq(instr, frames[0], v);
        CHECK(t2i.mask == oracle::scan_mask(t2i.ids, v, {.mask_vision = true}));

        const TokenSequence ap =
            build_action_pred_seq(instr, frames[0], steps[0].actions, v);
        CHECK(ap.mask == oracle::scan_mask(ap.ids, v, {.mask_actions = true}));

        const TokenSequence pol = build_policy_seq(instr, steps, hist, v);
        CHECK(pol.mask == oracle::scan_mask(pol.ids, v, {.mask_actions = true}));
    }
}

TEST_CASE("shards preserve ids and masks through disk format") {
    const Vocabulary& v = test_vocab();
    std::vector<TokenSequence> seqs;
    seqs.push_back(build_t2i_seq(instr_n(v, 3), grid16(v, 1), v));
    seqs.push_back(build_video_seq({grid16(v, 0), grid16(v, 5)}, v));
    seqs.push_back(build_action_pred_seq(instr_n(v, 1), grid16(v, 2), actions_n(v, 13), v));

    std::stringstream ss;
    save_shard(ss, seqs);
    const std::vector<TokenSequence> back = load_shard(ss);
    REQUIRE(back.size() == seqs.size());
    for (std::size_t i = 0; i < seqs.size(); ++i) {
        CHECK(back[i].ids == seqs[i].ids);
        CHECK(back[i].mask == seqs[i].mask);
    }

    std::stringstream bad("XXXX nonsense");
    CHECK_THROWS_AS(load_shard(bad), CorruptStream);
}

TEST_SUITE_END();
