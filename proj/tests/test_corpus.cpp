#include <doctest.h>

#include "oracles.hpp"
#include "recrl/corpus.hpp"

using namespace recrl;
using oracles::TempDir;

namespace {

// Titles {a, a b, b} over single-letter words.
ItemCorpus three_title_corpus() {
    return ItemCorpus::from_titles({"a", "a b", "b"});
}

}  // namespace

TEST_CASE("trie of the three-title corpus matches the prefix map definition") {
    ItemCorpus corpus = three_title_corpus();
    const Token a = corpus.tokenize("a")[0];
    const Token b = corpus.tokenize("b")[0];
    TitleTrie trie = TitleTrie::build(corpus);

    CHECK(trie.valid_next(std::vector<Token>{}) == std::vector<Token>{a, b});
    CHECK(trie.valid_next(std::vector<Token>{a}) == std::vector<Token>{kEos, b});
    CHECK(trie.valid_next(std::vector<Token>{a, b}) == std::vector<Token>{kEos});
    CHECK(trie.valid_next(std::vector<Token>{b}) == std::vector<Token>{kEos});

    SUBCASE("non-prefix and complete titles have no continuations") {
        CHECK(trie.valid_next(std::vector<Token>{b, a}).empty());
        CHECK(trie.valid_next(std::vector<Token>{a, kEos}).empty());
        CHECK(trie.valid_next(std::vector<Token>{kEos}).empty());
    }

    SUBCASE("acceptance resolves item ids") {
        CHECK(trie.accepted_item(corpus.item(0).tokens) == 0);
        CHECK(trie.accepted_item(corpus.item(1).tokens) == 1);
        CHECK(trie.accepted_item(std::vector<Token>{a, b}) == -1);  // no EOS
        CHECK(trie.accepted_item(std::vector<Token>{b, a, kEos}) == -1);
    }
}

TEST_CASE("singleton corpus trie") {
    ItemCorpus corpus = ItemCorpus::from_titles({"x"});
    const Token x = corpus.tokenize("x")[0];
    TitleTrie trie = TitleTrie::build(corpus);
    CHECK(trie.valid_next(std::vector<Token>{}) == std::vector<Token>{x});
    CHECK(trie.valid_next(std::vector<Token>{x}) == std::vector<Token>{kEos});
    CHECK(trie.title_count() == 1);
}

TEST_CASE("duplicate tokenized titles are a corpus-integrity error naming both items") {
    try {
        ItemCorpus::from_titles({"red box", "blue cup", "red box"});
        FAIL("expected DataError");
    } catch (const DataError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("0") != std::string::npos);
        CHECK(msg.find("2") != std::string::npos);
        CHECK(msg.find("red box") != std::string::npos);
    }
}

TEST_CASE("trie matches the brute-force prefix scan on a random corpus") {
    Rng rng(42);
    ItemCorpus corpus = oracles::random_corpus(rng, 30, 12);
    TitleTrie trie = TitleTrie::build(corpus);

    std::vector<std::vector<Token>> titles;
    for (const auto& item : corpus.items()) titles.push_back(item.tokens);

    int checked = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        // Random valid prefix: random title, random cut; occasionally perturbed
        // to produce invalid prefixes as well.
        const auto& title = titles[rng.index(titles.size())];
        std::vector<Token> prefix(title.begin(),
                                  title.begin() + static_cast<std::ptrdiff_t>(
                                                      rng.index(title.size() + 1)));
        if (trial % 5 == 0 && !prefix.empty()) {
            prefix.back() = static_cast<Token>(rng.index(
                static_cast<std::size_t>(corpus.vocab_size())));
        }
        const auto expected = oracles::brute_force_valid_next(titles, prefix);
        const auto got = trie.valid_next(prefix);
        CHECK(std::set<Token>(got.begin(), got.end()) == expected);
        CHECK(std::is_sorted(got.begin(), got.end()));
        ++checked;
    }
    CHECK(checked == 1000);
}

TEST_CASE("trie soundness and completeness by exhaustive path enumeration") {
    Rng rng(7);
    for (int round = 0; round < 5; ++round) {
        ItemCorpus corpus = oracles::random_corpus(rng, 200, 9);
        TitleTrie trie = TitleTrie::build(corpus);

        // Every maximal path ending in EOS spells exactly one corpus title.
        std::set<std::vector<Token>> spelled;
        std::vector<std::pair<int, std::vector<Token>>> stack{{TitleTrie::kRoot, {}}};
        while (!stack.empty()) {
            auto [node, prefix] = stack.back();
            stack.pop_back();
            for (Token t : trie.continuations(node)) {
                auto next = prefix;
                next.push_back(t);
                if (t == kEos) {
                    CHECK(trie.item_at(trie.walk(next)) >= 0);
                    spelled.insert(next);
                } else {
                    stack.emplace_back(trie.step(node, t), next);
                }
            }
        }
        std::set<std::vector<Token>> expected;
        for (const auto& item : corpus.items()) expected.insert(item.tokens);
        CHECK(spelled == expected);
    }
}

TEST_CASE("tokenize round-trips every corpus title") {
    Rng rng(11);
    ItemCorpus corpus = oracles::random_corpus(rng, 60, 15);
    for (const auto& item : corpus.items()) {
        CHECK(corpus.detokenize(corpus.tokenize(item.text)) == item.text);
        CHECK(corpus.tokenize(item.text) == item.tokens);
    }
    CHECK_THROWS_AS(corpus.tokenize("definitely-not-a-word"), DataError);
}

TEST_CASE("make_prompt layout and truncation") {
    ItemCorpus corpus = three_title_corpus();
    const Token a = corpus.tokenize("a")[0];
    const Token b = corpus.tokenize("b")[0];

    SUBCASE("single item: BOS, title without EOS, SEP") {
        Prompt p = make_prompt(corpus, std::vector<int>{1}, 10);
        CHECK(p.tokens == std::vector<Token>{kBos, a, b, kSep});
    }

    SUBCASE("only the last max_hist items are encoded") {
        std::vector<int> history(12, 0);
        history[0] = 1;
        history[1] = 1;  // dropped by truncation
        Prompt truncated = make_prompt(corpus, history, 10);
        Prompt suffix = make_prompt(corpus, std::vector<int>(history.end() - 10, history.end()), 10);
        CHECK(truncated.tokens == suffix.tokens);
        // 10 single-token titles, each followed by SEP, plus BOS.
        CHECK(truncated.tokens.size() == 1 + 10 * 2);
    }

    SUBCASE("identical last-10 suffix gives identical prompts") {
        std::vector<int> h1{2, 2, 0, 1, 2, 0, 1, 2, 0, 1, 2, 0};
        std::vector<int> h2{1, 0, 0, 1, 2, 0, 1, 2, 0, 1, 2, 0};
        CHECK(make_prompt(corpus, h1, 10).tokens == make_prompt(corpus, h2, 10).tokens);
    }

    SUBCASE("unknown item id is an error") {
        CHECK_THROWS_AS(make_prompt(corpus, std::vector<int>{99}, 10), DataError);
        CHECK_THROWS_AS(make_prompt(corpus, std::vector<int>{}, 10), DataError);
    }
}

TEST_CASE("synthetic generator follows the transition rule") {
    SUBCASE("noise 0: every target is the rule applied to the last history item") {
        SyntheticConfig cfg;
        cfg.n_items = 20;
        cfg.n_users = 200;
        cfg.noise_prob = 0.0;
        cfg.seed = 5;
        SyntheticData data = gen_synthetic(cfg);
        for (const auto& rec : data.dataset.records) {
            CHECK(rec.target ==
                  data.rule.transition[static_cast<std::size_t>(rec.history.back())]);
            for (std::size_t i = 0; i + 1 < rec.history.size(); ++i) {
                CHECK(rec.history[i + 1] ==
                      data.rule.transition[static_cast<std::size_t>(rec.history[i])]);
            }
        }
    }

    SUBCASE("noise 0.2: empirical follow fraction near 0.8") {
        SyntheticConfig cfg;
        cfg.n_items = 100;
        cfg.n_users = 5000;
        cfg.noise_prob = 0.2;
        cfg.seed = 9;
        SyntheticData data = gen_synthetic(cfg);
        int follow = 0;
        for (const auto& rec : data.dataset.records) {
            if (rec.target == data.rule.transition[static_cast<std::size_t>(rec.history.back())]) {
                ++follow;
            }
        }
        const double frac = static_cast<double>(follow) / 5000.0;
        CHECK(frac > 0.78);
        CHECK(frac < 0.82);
    }

    SUBCASE("same seed twice: byte-identical files") {
        TempDir tmp("synth_determinism");
        SyntheticConfig cfg;
        cfg.n_items = 40;
        cfg.n_users = 150;
        cfg.seed = 31;
        for (int run = 0; run < 2; ++run) {
            SyntheticData data = gen_synthetic(cfg);
            const std::string suffix = std::to_string(run);
            data.corpus.save(tmp.file("corpus" + suffix));
            data.dataset.save(tmp.file("data" + suffix));
            data.rule.save(tmp.file("rule" + suffix));
        }
        CHECK(oracles::read_bytes(tmp.file("corpus0")) == oracles::read_bytes(tmp.file("corpus1")));
        CHECK(oracles::read_bytes(tmp.file("data0")) == oracles::read_bytes(tmp.file("data1")));
        CHECK(oracles::read_bytes(tmp.file("rule0")) == oracles::read_bytes(tmp.file("rule1")));
    }

    SUBCASE("invalid parameters are rejected") {
        SyntheticConfig cfg;
        cfg.n_items = 1;
        CHECK_THROWS_AS(gen_synthetic(cfg), ConfigError);
        cfg.n_items = 10;
        cfg.noise_prob = 1.0;
        CHECK_THROWS_AS(gen_synthetic(cfg), ConfigError);
        cfg.noise_prob = -0.1;
        CHECK_THROWS_AS(gen_synthetic(cfg), ConfigError);
    }

    SUBCASE("oracle hit rate closed form") {
        SyntheticRule rule;
        rule.transition.assign(100, 0);
        rule.noise_prob = 0.2;
        CHECK(rule.oracle_hr_at_k(5) == doctest::Approx(0.81).epsilon(1e-12));
        CHECK(rule.oracle_hr_at_k(100) == 1.0);
    }
}

TEST_CASE("chronological split counts") {
    auto make_records = [](int n) {
        InteractionDataset ds;
        for (int i = 0; i < n; ++i) {
            InteractionRecord rec;
            rec.user_id = i;
            rec.history = {0};
            rec.target = 0;
            rec.order_index = i;
            ds.records.push_back(rec);
        }
        return ds;
    };
    auto counts = [](const InteractionDataset& ds) {
        int c[3] = {0, 0, 0};
        for (const auto& r : ds.records) c[static_cast<int>(r.split)]++;
        return std::vector<int>{c[0], c[1], c[2]};
    };

    SUBCASE("10 records -> 8/1/1") {
        auto ds = make_records(10);
        split_chrono(ds);
        CHECK(counts(ds) == std::vector<int>{8, 1, 1});
        // Earliest records are train, the last one is test.
        CHECK(ds.records.front().split == Split::train);
        CHECK(ds.records[8].split == Split::valid);
        CHECK(ds.records.back().split == Split::test);
    }

    SUBCASE("100 records -> 80/10/10") {
        auto ds = make_records(100);
        split_chrono(ds);
        CHECK(counts(ds) == std::vector<int>{80, 10, 10});
    }

    SUBCASE("45,324 records reproduce the reference corpus accounting") {
        auto ds = make_records(45324);
        split_chrono(ds);
        CHECK(counts(ds) == std::vector<int>{36259, 4532, 4533});
    }

    SUBCASE("fewer than 3 records is an error") {
        auto ds = make_records(2);
        CHECK_THROWS_AS(split_chrono(ds), DataError);
    }
}

TEST_CASE("corpus and dataset files round-trip") {
    TempDir tmp("roundtrip");
    SyntheticConfig cfg;
    cfg.n_items = 25;
    cfg.n_users = 60;
    cfg.seed = 77;
    SyntheticData data = gen_synthetic(cfg);
    split_chrono(data.dataset);

    data.corpus.save(tmp.file("corpus.tsv"));
    data.dataset.save(tmp.file("data.tsv"));
    data.rule.save(tmp.file("rule.json"));

    ItemCorpus corpus2 = ItemCorpus::load(tmp.file("corpus.tsv"));
    REQUIRE(corpus2.size() == data.corpus.size());
    for (int i = 0; i < corpus2.size(); ++i) {
        CHECK(corpus2.item(i).text == data.corpus.item(i).text);
        CHECK(corpus2.item(i).tokens == data.corpus.item(i).tokens);
    }

    InteractionDataset ds2 = InteractionDataset::load(tmp.file("data.tsv"), corpus2);
    REQUIRE(ds2.records.size() == data.dataset.records.size());
    for (std::size_t i = 0; i < ds2.records.size(); ++i) {
        CHECK(ds2.records[i].user_id == data.dataset.records[i].user_id);
        CHECK(ds2.records[i].history == data.dataset.records[i].history);
        CHECK(ds2.records[i].target == data.dataset.records[i].target);
        CHECK(ds2.records[i].split == data.dataset.records[i].split);
    }

    SyntheticRule rule2 = SyntheticRule::load(tmp.file("rule.json"));
    CHECK(rule2.transition == data.rule.transition);
    CHECK(rule2.noise_prob == data.rule.noise_prob);

    // Saving the reloaded data reproduces the original bytes.
    corpus2.save(tmp.file("corpus2.tsv"));
    ds2.save(tmp.file("data2.tsv"));
    CHECK(oracles::read_bytes(tmp.file("corpus.tsv")) ==
          oracles::read_bytes(tmp.file("corpus2.tsv")));
    CHECK(oracles::read_bytes(tmp.file("data.tsv")) ==
          oracles::read_bytes(tmp.file("data2.tsv")));
}
