#include <doctest.h>

#include <cmath>
#include <sstream>

#include "oracles.hpp"
#include "recrl/decoding.hpp"

using namespace recrl;

namespace {

constexpr double kLnHalf = -0.6931471805599453;

struct Fixture {
    ItemCorpus corpus = ItemCorpus::from_titles({"a", "a b", "b"});
    TitleTrie trie = TitleTrie::build(corpus);
    Prompt prompt;
    Fixture() { prompt = make_prompt(corpus, std::vector<int>{0}, 10); }
    PolicyHyper hyper() const { return PolicyHyper{corpus.vocab_size(), 6, 8, 4}; }
};

// Reimplementation of the dynamic-sampling selection rule, used as an oracle
// against the production path (which shares the RNG stream with the
// over-generation draw).
std::vector<int> select_dynamic(const std::vector<int>& drawn, int target, int count, Rng& rng) {
    std::vector<int> selected;
    std::vector<int> remaining;
    for (int item : drawn) {
        if (item == target && static_cast<int>(selected.size()) < count) {
            selected.push_back(item);
        } else {
            remaining.push_back(item);
        }
    }
    if (static_cast<int>(selected.size()) < count) {
        std::set<int> seen(selected.begin(), selected.end());
        std::vector<int> leftovers;
        for (int item : remaining) {
            if (static_cast<int>(selected.size()) < count && seen.insert(item).second) {
                selected.push_back(item);
            } else {
                leftovers.push_back(item);
            }
        }
        remaining = leftovers;
    }
    while (static_cast<int>(selected.size()) < count) {
        const std::size_t j = rng.index(remaining.size());
        selected.push_back(remaining[j]);
        remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(j));
    }
    return selected;
}

}  // namespace

TEST_CASE("beam search on the uniform three-title corpus") {
    Fixture fx;
    PolicyParams p = PolicyParams::zeros(fx.hyper());
    GenerationGroup group = beam_search(p, fx.prompt, 3, fx.trie);

    REQUIRE(group.size() == 3);
    // "b" wins outright; "a" and "a b" tie and the tie breaks shorter-first.
    CHECK(group.entries[0].item_id == 2);
    CHECK(group.entries[0].logprob == doctest::Approx(kLnHalf).epsilon(1e-12));
    CHECK(group.entries[1].item_id == 0);
    CHECK(group.entries[1].logprob == doctest::Approx(2 * kLnHalf).epsilon(1e-12));
    CHECK(group.entries[2].item_id == 1);
    CHECK(group.entries[2].logprob == doctest::Approx(2 * kLnHalf).epsilon(1e-12));

    SUBCASE("width 1 is greedy by prefix score") {
        // Step one ties between 'a' and 'b' and breaks to the lower token id,
        // so greedy commits to the 'a' branch even though 'b' scores best
        // overall; EOS then wins the 'a' continuations by the shorter-first rule.
        GenerationGroup greedy = beam_search(p, fx.prompt, 1, fx.trie);
        REQUIRE(greedy.size() == 1);
        CHECK(greedy.entries[0].item_id == 0);
    }

    SUBCASE("width beyond the corpus is rejected") {
        CHECK_THROWS_AS(beam_search(p, fx.prompt, 4, fx.trie), ConfigError);
    }
}

TEST_CASE("beam search matches the literal recurrence on random instances") {
    Rng rng(1234);
    int instances = 0;
    while (instances < 30) {
        ItemCorpus corpus = oracles::random_corpus(rng, 30, 20);
        TitleTrie trie = TitleTrie::build(corpus);
        PolicyHyper h{corpus.vocab_size(), 6, 8, 5};
        PolicyParams params = PolicyParams::init(h, rng.next_u64());
        Prompt prompt = make_prompt(
            corpus, std::vector<int>{static_cast<int>(rng.index(
                        static_cast<std::size_t>(corpus.size())))}, 10);
        const int width = 1 + static_cast<int>(rng.index(
            std::min<std::size_t>(8, static_cast<std::size_t>(corpus.size()))));

        GenerationGroup fast = beam_search(params, prompt, width, trie);
        auto naive = oracles::naive_beam_search(params, prompt, width, trie);

        REQUIRE(fast.size() == static_cast<int>(naive.size()));
        for (int i = 0; i < fast.size(); ++i) {
            CHECK(corpus.item(fast.entries[static_cast<std::size_t>(i)].item_id).tokens ==
                  naive[static_cast<std::size_t>(i)].tokens);
            CHECK(std::abs(fast.entries[static_cast<std::size_t>(i)].logprob -
                           naive[static_cast<std::size_t>(i)].score) <= 1e-9);
        }
        ++instances;
    }
}

TEST_CASE("beam search at full width equals the exhaustive ranking") {
    Rng rng(88);
    for (int trial = 0; trial < 10; ++trial) {
        ItemCorpus corpus = oracles::random_corpus(rng, 25, 12);
        TitleTrie trie = TitleTrie::build(corpus);
        PolicyHyper h{corpus.vocab_size(), 6, 8, 5};
        PolicyParams params = PolicyParams::init(h, rng.next_u64());
        Prompt prompt = make_prompt(corpus, std::vector<int>{0}, 10);

        GenerationGroup full = beam_search(params, prompt, corpus.size(), trie);
        auto expected = oracles::exhaustive_ranking(params, prompt, corpus, trie);
        REQUIRE(full.size() == static_cast<int>(expected.size()));
        for (int i = 0; i < full.size(); ++i) {
            CHECK(full.entries[static_cast<std::size_t>(i)].item_id ==
                  expected[static_cast<std::size_t>(i)].first);
            CHECK(std::abs(full.entries[static_cast<std::size_t>(i)].logprob -
                           expected[static_cast<std::size_t>(i)].second) <= 1e-9);
        }
        // Scores are non-increasing and titles distinct.
        std::set<int> seen;
        for (int i = 0; i < full.size(); ++i) {
            CHECK(seen.insert(full.entries[static_cast<std::size_t>(i)].item_id).second);
            if (i > 0) {
                CHECK(full.entries[static_cast<std::size_t>(i - 1)].logprob + 1e-12 >=
                      full.entries[static_cast<std::size_t>(i)].logprob);
            }
        }
    }
}

TEST_CASE("beam trace emits one frontier line per step") {
    Fixture fx;
    PolicyParams p = PolicyParams::zeros(fx.hyper());
    std::ostringstream trace;
    beam_search(p, fx.prompt, 3, fx.trie, &trace);
    int lines = 0;
    std::string line;
    std::istringstream in(trace.str());
    while (std::getline(in, line)) {
        CHECK(line.find("\"beams\"") != std::string::npos);
        ++lines;
    }
    CHECK(lines >= 2);
}

TEST_CASE("common sampling") {
    Fixture fx;

    SUBCASE("temperature zero collapses to the greedy title") {
        PolicyParams p = PolicyParams::init(fx.hyper(), 17);
        Rng rng(3);
        GenerationGroup group = common_sample(p, fx.prompt, 8, 0.0, fx.trie, rng);
        GenerationGroup greedy = beam_search(p, fx.prompt, 1, fx.trie);
        for (const auto& g : group.entries) {
            CHECK(g.item_id == greedy.entries[0].item_id);
        }
        CHECK(diversity(group) == doctest::Approx(1.0 / 8.0));
    }

    SUBCASE("every sampled title is a corpus title and log-probs are consistent") {
        Rng corpus_rng(9);
        ItemCorpus corpus = oracles::random_corpus(corpus_rng, 20, 10);
        TitleTrie trie = TitleTrie::build(corpus);
        PolicyHyper h{corpus.vocab_size(), 6, 8, 5};
        PolicyParams params = PolicyParams::init(h, 5);
        Prompt prompt = make_prompt(corpus, std::vector<int>{0}, 10);
        Rng rng(41);
        GenerationGroup group = common_sample(params, prompt, 200, 1.0, trie, rng);
        for (const auto& g : group.entries) {
            REQUIRE(g.item_id >= 0);
            REQUIRE(g.item_id < corpus.size());
            const double lp = seq_logprob(params, prompt, corpus.item(g.item_id), trie);
            CHECK(std::abs(lp - g.logprob) <= 1e-9);
        }
    }

    SUBCASE("a sharply peaked policy produces duplicates") {
        ItemCorpus corpus = ItemCorpus::from_titles({"a", "a b", "b"});
        TitleTrie trie = TitleTrie::build(corpus);
        PolicyHyper h{corpus.vocab_size(), 6, 8, 4};
        PolicyParams p = PolicyParams::zeros(h);
        // Push nearly all mass onto the title "b".
        p.b2[static_cast<std::size_t>(corpus.tokenize("b")[0])] = 8.0;
        Prompt prompt = make_prompt(corpus, std::vector<int>{0}, 10);
        Rng rng(13);
        GenerationGroup group = common_sample(p, prompt, 16, 1.0, trie, rng);
        CHECK(diversity(group) < 1.0);
    }

    SUBCASE("deterministic given the seed") {
        PolicyParams p = PolicyParams::init(fx.hyper(), 4);
        Rng r1(99), r2(99);
        GenerationGroup g1 = common_sample(p, fx.prompt, 32, 1.0, fx.trie, r1);
        GenerationGroup g2 = common_sample(p, fx.prompt, 32, 1.0, fx.trie, r2);
        for (int i = 0; i < g1.size(); ++i) {
            CHECK(g1.entries[static_cast<std::size_t>(i)].item_id ==
                  g2.entries[static_cast<std::size_t>(i)].item_id);
        }
    }
}

TEST_CASE("dynamic sampling follows the selection rule") {
    Rng corpus_rng(15);
    ItemCorpus corpus = oracles::random_corpus(corpus_rng, 15, 8);
    TitleTrie trie = TitleTrie::build(corpus);
    PolicyHyper h{corpus.vocab_size(), 6, 8, 5};
    PolicyParams params = PolicyParams::init(h, 21);
    Prompt prompt = make_prompt(corpus, std::vector<int>{0}, 10);

    SUBCASE("matches the selection oracle across seeds") {
        for (std::uint64_t seed = 0; seed < 40; ++seed) {
            const int count = 4;
            const int target = static_cast<int>(seed % corpus.size());

            Rng rng_prod(seed);
            GenerationGroup group =
                dynamic_sample(params, prompt, count, target, 1.0, trie, rng_prod);

            // Replay: the over-generation shares the sampling stream, so the
            // same seed reproduces the drawn multiset; selection is replayed
            // with the remainder of the stream.
            Rng rng_replay(seed);
            GenerationGroup drawn = common_sample(params, prompt, 6, 1.0, trie, rng_replay);
            std::vector<int> drawn_items;
            for (const auto& g : drawn.entries) drawn_items.push_back(g.item_id);
            const auto expected = select_dynamic(drawn_items, target, count, rng_replay);

            REQUIRE(group.size() == count);
            std::vector<int> got;
            for (const auto& g : group.entries) got.push_back(g.item_id);
            CHECK(got == expected);

            // If the target was drawn it must be selected, in front.
            if (std::count(drawn_items.begin(), drawn_items.end(), target) > 0) {
                CHECK(got.front() == target);
            }
            // If the draws were all distinct non-targets, output is the first
            // `count` draws in order.
            std::set<int> unique_items(drawn_items.begin(), drawn_items.end());
            if (unique_items.size() == drawn_items.size() &&
                unique_items.count(target) == 0) {
                CHECK(got == std::vector<int>(drawn_items.begin(), drawn_items.begin() + count));
            }
        }
    }

    SUBCASE("degenerate multiset: one item appears once then fills randomly") {
        // Peak the policy on a single title so all 6 draws coincide.
        ItemCorpus small = ItemCorpus::from_titles({"a", "b"});
        TitleTrie small_trie = TitleTrie::build(small);
        PolicyHyper sh{small.vocab_size(), 6, 8, 4};
        PolicyParams peaked = PolicyParams::zeros(sh);
        peaked.b2[static_cast<std::size_t>(small.tokenize("a")[0])] = 30.0;
        Prompt sp = make_prompt(small, std::vector<int>{1}, 10);
        Rng rng(7);
        const int target = 1;  // never drawn
        GenerationGroup group = dynamic_sample(peaked, sp, 4, target, 1.0, small_trie, rng);
        REQUIRE(group.size() == 4);
        for (const auto& g : group.entries) CHECK(g.item_id == 0);
    }
}

TEST_CASE("diversity is the unique-title fraction") {
    GenerationGroup group;
    group.strategy = SamplingStrategy::common;
    for (int i = 0; i < 16; ++i) {
        // 12 unique: items 0..11, then 4 repeats of item 0.
        group.entries.push_back(Generation{i < 12 ? i : 0, -1.0});
    }
    CHECK(diversity(group) == doctest::Approx(0.75).epsilon(1e-12));

    GenerationGroup single;
    single.entries.push_back(Generation{3, -0.5});
    CHECK(diversity(single) == 1.0);
}

TEST_CASE("beam groups always have diversity one") {
    Rng rng(3);
    for (int trial = 0; trial < 5; ++trial) {
        ItemCorpus corpus = oracles::random_corpus(rng, 12, 10);
        TitleTrie trie = TitleTrie::build(corpus);
        PolicyHyper h{corpus.vocab_size(), 6, 8, 5};
        PolicyParams params = PolicyParams::init(h, rng.next_u64());
        Prompt prompt = make_prompt(corpus, std::vector<int>{0}, 10);
        const int width = std::min(6, corpus.size());
        CHECK(diversity(beam_search(params, prompt, width, trie)) == 1.0);
    }
}
