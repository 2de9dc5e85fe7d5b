#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "recrl/train.hpp"

using namespace recrl;
using oracles::TempDir;

namespace {

constexpr double kSqrt3 = 1.7320508075688772;

// Batch construction for the objective steps: manual groups with advantages
// computed from the given rewards.
RolloutRecord make_rollout(const ItemCorpus& corpus, const Prompt& prompt,
                           const std::vector<int>& items, const std::vector<double>& rewards,
                           const PolicyParams& sampler, const TitleTrie& trie,
                           double adv_eps = 1e-8) {
    RolloutRecord r;
    r.prompt = prompt;
    r.group.prompt = prompt.tokens;
    r.group.strategy = SamplingStrategy::beam;
    for (int item : items) {
        r.group.entries.push_back(
            Generation{item, seq_logprob(sampler, prompt, corpus.item(item), trie)});
    }
    r.group.rewards = rewards;
    r.group.advantages = group_advantages(rewards, adv_eps).values;
    return r;
}

// Closed-form group-relative gradient: per-token coefficient
// (advantage + beta * (ref/theta - 1)) / (G * |e|), averaged over the batch.
ParamGrad closed_form_gradient(const PolicyParams& theta, const PolicyParams& ref,
                               std::span<const RolloutRecord> batch, double beta,
                               const ItemCorpus& corpus, const TitleTrie& trie) {
    std::vector<GradTerm> terms;
    const double inv_batch = 1.0 / static_cast<double>(batch.size());
    for (const auto& record : batch) {
        const double inv_g = 1.0 / static_cast<double>(record.group.entries.size());
        for (std::size_t k = 0; k < record.group.entries.size(); ++k) {
            const ItemTitle& title = corpus.item(record.group.entries[k].item_id);
            const double inv_len = 1.0 / static_cast<double>(title.tokens.size());
            int node = TitleTrie::kRoot;
            std::vector<Token> prefix;
            for (Token t : title.tokens) {
                GradTerm term;
                term.ctx = make_context(record.prompt.tokens, prefix, theta.hyper.window);
                term.token = t;
                term.valid = trie.continuations(node);
                const double lp_theta = token_logprob(theta, term.ctx, t, term.valid);
                const double lp_ref = token_logprob(ref, term.ctx, t, term.valid);
                const double rho = std::exp(lp_ref - lp_theta);
                term.weight = (record.group.advantages[k] + beta * (rho - 1.0)) * inv_g *
                              inv_len * inv_batch;
                terms.push_back(std::move(term));
                node = trie.step(node, t);
                prefix.push_back(t);
            }
        }
    }
    return grad_weighted_logprob(theta, terms);
}

PolicyParams plus_gradient(const PolicyParams& params, const ParamGrad& grad, double step) {
    PolicyParams out = params;
    apply_gradient(out, grad, step);
    return out;
}

struct StepFixture {
    ItemCorpus corpus = ItemCorpus::from_titles({"a", "b", "c"});
    TitleTrie trie = TitleTrie::build(corpus);
    Prompt prompt;
    PolicyHyper hyper{0, 6, 8, 4};
    StepFixture() {
        hyper.vocab_size = corpus.vocab_size();
        prompt = make_prompt(corpus, std::vector<int>{0}, 10);
    }
};

}  // namespace

TEST_CASE("group advantages standardize with population std") {
    SUBCASE("binary one-hot rewards give the sqrt(3) pattern") {
        auto adv = group_advantages(std::vector<double>{1, 0, 0, 0}, 1e-8);
        CHECK(adv.values[0] == doctest::Approx(kSqrt3).epsilon(1e-12));
        for (int k = 1; k < 4; ++k) {
            CHECK(adv.values[static_cast<std::size_t>(k)] ==
                  doctest::Approx(-1.0 / kSqrt3).epsilon(1e-12));
        }
        CHECK_FALSE(adv.skipped);
    }

    SUBCASE("all-equal rewards are skipped") {
        auto adv = group_advantages(std::vector<double>{0.4, 0.4, 0.4}, 1e-8);
        CHECK(adv.skipped);
        CHECK(adv.values == std::vector<double>{0.0, 0.0, 0.0});
    }

    SUBCASE("combined-reward example sums to zero") {
        auto adv = group_advantages(std::vector<double>{1.0, -2.0 / 3.0, -1.0 / 3.0}, 1e-8);
        double sum = 0.0;
        for (double a : adv.values) sum += a;
        CHECK(std::abs(sum) <= 1e-12);
        CHECK(adv.mean == doctest::Approx(0.0).epsilon(1e-15));
    }

    SUBCASE("random vectors: mean ~ 0, population std ~ 1") {
        Rng rng(12);
        for (int trial = 0; trial < 200; ++trial) {
            const int n = rng.uniform_int(2, 16);
            std::vector<double> rewards(static_cast<std::size_t>(n));
            for (double& r : rewards) r = rng.uniform(-2.0, 2.0);
            auto adv = group_advantages(rewards, 1e-8);
            if (adv.skipped) continue;
            double mean = 0.0, var = 0.0;
            for (double a : adv.values) mean += a;
            mean /= n;
            for (double a : adv.values) var += (a - mean) * (a - mean);
            var /= n;
            CHECK(std::abs(mean) <= 1e-9);
            CHECK(std::abs(std::sqrt(var) - 1.0) <= 1e-6);
        }
    }
}

TEST_CASE("k3 divergence estimator") {
    CHECK(kl_k3(1.0) == 0.0);
    CHECK(kl_k3(2.0) == doctest::Approx(0.3068528194400547).epsilon(1e-12));
    CHECK(kl_k3(0.5) == doctest::Approx(0.19314718055994531).epsilon(1e-12));
    CHECK_THROWS_AS(kl_k3(0.0), NumericError);
    CHECK_THROWS_AS(kl_k3(-1.0), NumericError);

    Rng rng(6);
    for (int i = 0; i < 1000; ++i) {
        const double r = std::exp(rng.uniform(-6.0, 6.0));
        CHECK(kl_k3(r) >= 0.0);
    }
}

TEST_CASE("grpo_step") {
    StepFixture fx;
    TrainConfig cfg;
    cfg.G = 3;
    cfg.lr = 0.1;

    SUBCASE("zero advantages with beta 0 leave parameters unchanged") {
        cfg.beta = 0.0;
        PolicyParams theta = PolicyParams::init(fx.hyper, 1);
        PolicyParams before = theta;
        std::vector<RolloutRecord> batch{make_rollout(
            fx.corpus, fx.prompt, {0, 1, 2}, {0.5, 0.5, 0.5}, theta, fx.trie)};
        grpo_step(theta, before, before, batch, fx.corpus, fx.trie, cfg);
        CHECK(oracles::params_equal(theta, before));
    }

    SUBCASE("on-policy update matches the closed-form gradient") {
        for (double beta : {0.0, 0.5}) {
            cfg.beta = beta;
            PolicyParams theta = PolicyParams::init(fx.hyper, 2);
            const PolicyParams old = snapshot(theta);
            const PolicyParams ref = PolicyParams::init(fx.hyper, 99);

            std::vector<RolloutRecord> batch;
            batch.push_back(make_rollout(fx.corpus, fx.prompt, {0, 1, 2}, {1, 0, 0}, old, fx.trie));
            batch.push_back(make_rollout(fx.corpus, fx.prompt, {2, 0, 1}, {0, 0, 1}, old, fx.trie));

            ParamGrad expected = closed_form_gradient(theta, ref, batch, beta, fx.corpus, fx.trie);
            PolicyParams predicted = plus_gradient(theta, expected, cfg.lr);

            grpo_step(theta, old, ref, batch, fx.corpus, fx.trie, cfg);
            CHECK(oracles::max_abs_diff(theta, predicted) <= 1e-8);
        }
    }

    SUBCASE("KL term alone pulls toward the reference when advantages vanish") {
        cfg.beta = 0.1;
        PolicyParams theta = PolicyParams::init(fx.hyper, 3);
        const PolicyParams old = snapshot(theta);
        const PolicyParams ref = PolicyParams::init(fx.hyper, 4);
        std::vector<RolloutRecord> batch{make_rollout(
            fx.corpus, fx.prompt, {0, 1, 2}, {0.0, 0.0, 0.0}, old, fx.trie)};
        StepStats stats = grpo_step(theta, old, ref, batch, fx.corpus, fx.trie, cfg);
        CHECK(stats.grad_norm > 0.0);
        CHECK(stats.kl_mean > 0.0);
        CHECK_FALSE(oracles::params_equal(theta, old));
    }

    SUBCASE("non-finite parameters abort with diagnostics") {
        PolicyParams theta = PolicyParams::init(fx.hyper, 5);
        const PolicyParams old = snapshot(theta);
        theta.b2[0] = std::numeric_limits<double>::quiet_NaN();
        std::vector<RolloutRecord> batch{make_rollout(
            fx.corpus, fx.prompt, {0, 1, 2}, {1, 0, 0}, old, fx.trie)};
        CHECK_THROWS_AS(grpo_step(theta, old, old, batch, fx.corpus, fx.trie, cfg),
                        NumericError);
    }
}

TEST_CASE("dapo_step") {
    StepFixture fx;
    TrainConfig cfg;
    cfg.G = 3;
    cfg.lr = 0.1;

    SUBCASE("coincides with grpo when lengths are equal, eps symmetric, beta 0") {
        cfg.beta = 0.0;
        cfg.eps_clip = 0.2;
        cfg.eps_low = 0.2;
        cfg.eps_high = 0.2;
        // All titles tokenize to word+EOS, so every |e_k| is 2.
        PolicyParams theta_a = PolicyParams::init(fx.hyper, 7);
        PolicyParams theta_b = theta_a;
        const PolicyParams old = snapshot(theta_a);
        const PolicyParams ref = PolicyParams::init(fx.hyper, 8);
        std::vector<RolloutRecord> batch;
        batch.push_back(make_rollout(fx.corpus, fx.prompt, {0, 1, 2}, {1, 0, 0}, old, fx.trie));
        batch.push_back(make_rollout(fx.corpus, fx.prompt, {1, 2, 0}, {0, 1, 0}, old, fx.trie));

        grpo_step(theta_a, old, ref, batch, fx.corpus, fx.trie, cfg);
        dapo_step(theta_b, old, batch, fx.corpus, fx.trie, cfg);
        CHECK(oracles::max_abs_diff(theta_a, theta_b) <= 1e-9);
    }

    SUBCASE("zero advantages are a no-op") {
        PolicyParams theta = PolicyParams::init(fx.hyper, 9);
        const PolicyParams before = theta;
        std::vector<RolloutRecord> batch{make_rollout(
            fx.corpus, fx.prompt, {0, 1, 2}, {0.3, 0.3, 0.3}, before, fx.trie)};
        dapo_step(theta, before, batch, fx.corpus, fx.trie, cfg);
        CHECK(oracles::params_equal(theta, before));
    }

    SUBCASE("tokens in the clipped regime contribute zero gradient") {
        ItemCorpus two = ItemCorpus::from_titles({"a", "b"});
        TitleTrie trie = TitleTrie::build(two);
        PolicyHyper h{two.vocab_size(), 6, 8, 4};
        Prompt prompt = make_prompt(two, std::vector<int>{0}, 10);
        cfg.G = 2;
        cfg.eps_low = 0.2;
        cfg.eps_high = 0.28;

        // theta shifts mass onto 'a': ratio('a') ~ 1.76 > 1.28, ratio('b') ~ 0.24 < 0.8.
        PolicyParams old_params = PolicyParams::zeros(h);
        PolicyParams theta = PolicyParams::zeros(h);
        theta.b2[static_cast<std::size_t>(two.tokenize("a")[0])] = 2.0;
        const PolicyParams theta_before = theta;

        RolloutRecord rollout;
        rollout.prompt = prompt;
        rollout.group.strategy = SamplingStrategy::beam;
        rollout.group.entries = {
            Generation{0, seq_logprob(old_params, prompt, two.item(0), trie)},
            Generation{1, seq_logprob(old_params, prompt, two.item(1), trie)}};
        rollout.group.rewards = {1.0, 0.0};
        rollout.group.advantages = {1.0, -1.0};  // both land in their clipped branch
        std::vector<RolloutRecord> batch{rollout};

        dapo_step(theta, old_params, batch, two, trie, cfg);
        CHECK(oracles::params_equal(theta, theta_before));

        // Flipping the advantages puts both tokens on the flowing branch.
        batch[0].group.advantages = {-1.0, 1.0};
        dapo_step(theta, old_params, batch, two, trie, cfg);
        CHECK_FALSE(oracles::params_equal(theta, theta_before));
    }
}

TEST_CASE("gspo_step") {
    StepFixture fx;
    TrainConfig cfg;
    cfg.G = 3;
    cfg.lr = 0.1;

    SUBCASE("on-policy gspo equals grpo without KL (all ratios one)") {
        cfg.beta = 0.0;
        PolicyParams theta_a = PolicyParams::init(fx.hyper, 10);
        PolicyParams theta_b = theta_a;
        const PolicyParams old = snapshot(theta_a);
        std::vector<RolloutRecord> batch{make_rollout(
            fx.corpus, fx.prompt, {0, 1, 2}, {1, 0, 0}, old, fx.trie)};
        grpo_step(theta_a, old, old, batch, fx.corpus, fx.trie, cfg);
        gspo_step(theta_b, old, batch, fx.corpus, fx.trie, cfg);
        CHECK(oracles::max_abs_diff(theta_a, theta_b) <= 1e-12);
    }

    SUBCASE("sequence ratio is the geometric mean of token ratios") {
        // Corpus {a, b}: first token free, EOS forced. With
        // p_old(a) = 1/8 and p_theta(a) = 1/2 the token ratios for title 'a'
        // are (4, 1), so s = sqrt(4 * 1) = 2; for 'b' they are (4/7, 1),
        // s = sqrt(4/7).
        ItemCorpus two = ItemCorpus::from_titles({"a", "b"});
        TitleTrie trie = TitleTrie::build(two);
        PolicyHyper h{two.vocab_size(), 6, 8, 4};
        Prompt prompt = make_prompt(two, std::vector<int>{0}, 10);
        cfg.G = 2;
        cfg.eps_clip = 0.3;

        PolicyParams theta = PolicyParams::zeros(h);
        PolicyParams old_params = PolicyParams::zeros(h);
        old_params.b2[static_cast<std::size_t>(two.tokenize("a")[0])] = -std::log(7.0);

        const double s_a = 2.0;
        const double s_b = std::sqrt(4.0 / 7.0);
        // Advantages (-1, +1): 'a' flows on the negative branch (s >= 1+eps),
        // 'b' flows on the positive branch (s <= 1-eps is false, s in range
        // is false: s_b ~ 0.756 < 0.7 is false) -- s_b is inside [0.7, 1.3],
        // so it flows untouched.
        RolloutRecord rollout;
        rollout.prompt = prompt;
        rollout.group.strategy = SamplingStrategy::beam;
        rollout.group.entries = {
            Generation{0, seq_logprob(old_params, prompt, two.item(0), trie)},
            Generation{1, seq_logprob(old_params, prompt, two.item(1), trie)}};
        rollout.group.rewards = {0.0, 1.0};
        rollout.group.advantages = {-1.0, 1.0};
        std::vector<RolloutRecord> batch{rollout};

        // Expected update from the closed form: weight_k = A_k * s_k / (G*|e|).
        std::vector<GradTerm> terms;
        for (std::size_t k = 0; k < 2; ++k) {
            const ItemTitle& title = two.item(static_cast<int>(k));
            const double s_k = k == 0 ? s_a : s_b;
            const double adv = rollout.group.advantages[k];
            int node = TitleTrie::kRoot;
            std::vector<Token> prefix;
            for (Token t : title.tokens) {
                GradTerm term;
                term.ctx = make_context(prompt.tokens, prefix, h.window);
                term.token = t;
                term.valid = trie.continuations(node);
                term.weight = adv * s_k / (2.0 * 2.0);
                terms.push_back(std::move(term));
                node = trie.step(node, t);
                prefix.push_back(t);
            }
        }
        ParamGrad expected = grad_weighted_logprob(theta, terms);
        PolicyParams predicted = plus_gradient(theta, expected, cfg.lr);

        gspo_step(theta, old_params, batch, two, trie, cfg);
        CHECK(oracles::max_abs_diff(theta, predicted) <= 1e-12);
    }
}

TEST_CASE("sft loss and gradient") {
    SUBCASE("a policy deterministic on its targets has ~zero loss") {
        ItemCorpus two = ItemCorpus::from_titles({"a", "b"});
        TitleTrie trie = TitleTrie::build(two);
        PolicyHyper h{two.vocab_size(), 6, 8, 4};
        PolicyParams p = PolicyParams::zeros(h);
        p.b2[static_cast<std::size_t>(two.tokenize("a")[0])] = 40.0;
        std::vector<SftBatchItem> batch{{make_prompt(two, std::vector<int>{1}, 10), 0}};
        CHECK(sft_loss_and_grad(p, batch, two, trie).loss <= 1e-9);
    }

    SUBCASE("uniform policy with four options per step: loss is 2 ln 4") {
        ItemCorpus corpus =
            ItemCorpus::from_titles({"a", "a p", "a q", "a r", "b", "c", "d"});
        TitleTrie trie = TitleTrie::build(corpus);
        PolicyHyper h{corpus.vocab_size(), 6, 8, 4};
        PolicyParams p = PolicyParams::zeros(h);
        std::vector<SftBatchItem> batch{{make_prompt(corpus, std::vector<int>{4}, 10), 0}};
        CHECK(sft_loss_and_grad(p, batch, corpus, trie).loss ==
              doctest::Approx(2.0 * std::log(4.0)).epsilon(1e-12));
    }

    SUBCASE("gradient matches finite differences") {
        Rng rng(31);
        ItemCorpus corpus = oracles::random_corpus(rng, 12, 8);
        TitleTrie trie = TitleTrie::build(corpus);
        PolicyHyper h{corpus.vocab_size(), 5, 6, 4};
        for (int trial = 0; trial < 5; ++trial) {
            PolicyParams p = PolicyParams::init(h, rng.next_u64());
            std::vector<SftBatchItem> batch;
            for (int i = 0; i < 3; ++i) {
                const int hist = static_cast<int>(rng.index(static_cast<std::size_t>(corpus.size())));
                const int target = static_cast<int>(rng.index(static_cast<std::size_t>(corpus.size())));
                batch.push_back({make_prompt(corpus, std::vector<int>{hist}, 10), target});
            }
            LossAndGrad lg = sft_loss_and_grad(p, batch, corpus, trie);
            ParamGrad numeric = oracles::finite_diff_grad(p, [&](const PolicyParams& q) {
                return sft_loss_and_grad(q, batch, corpus, trie).loss;
            });
            CHECK(oracles::max_rel_error(lg.grad, numeric) <= 1e-4);
        }
    }
}

TEST_CASE("dpo loss and gradient") {
    ItemCorpus two = ItemCorpus::from_titles({"a", "b"});
    TitleTrie trie = TitleTrie::build(two);
    PolicyHyper h{two.vocab_size(), 6, 8, 4};
    Prompt prompt = make_prompt(two, std::vector<int>{0}, 10);
    std::vector<DpoTriple> batch{{prompt, 0, 1}};

    SUBCASE("policy equal to the reference gives loss ln 2") {
        PolicyParams p = PolicyParams::init(h, 3);
        CHECK(dpo_loss_and_grad(p, p, batch, 0.1, two, trie).loss ==
              doctest::Approx(std::log(2.0)).epsilon(1e-9));
    }

    SUBCASE("huge margin drives the loss to zero") {
        PolicyParams ref = PolicyParams::zeros(h);
        PolicyParams p = PolicyParams::zeros(h);
        p.b2[static_cast<std::size_t>(two.tokenize("a")[0])] = 300.0;
        CHECK(dpo_loss_and_grad(p, ref, batch, 0.1, two, trie).loss <= 1e-12);
    }

    SUBCASE("log-ratio difference of 10 at beta 0.1 gives -ln sigmoid(1)") {
        PolicyParams ref = PolicyParams::zeros(h);
        PolicyParams p = PolicyParams::zeros(h);
        p.b2[static_cast<std::size_t>(two.tokenize("a")[0])] = 10.0;
        CHECK(dpo_loss_and_grad(p, ref, batch, 0.1, two, trie).loss ==
              doctest::Approx(0.31326168751822286).epsilon(1e-9));
    }

    SUBCASE("negative equal to target is rejected") {
        PolicyParams p = PolicyParams::init(h, 4);
        std::vector<DpoTriple> bad{{prompt, 0, 0}};
        CHECK_THROWS_AS(dpo_loss_and_grad(p, p, bad, 0.1, two, trie), ConfigError);
    }

    SUBCASE("gradient matches finite differences") {
        Rng rng(17);
        ItemCorpus corpus = oracles::random_corpus(rng, 10, 7);
        TitleTrie big_trie = TitleTrie::build(corpus);
        PolicyHyper hh{corpus.vocab_size(), 5, 6, 4};
        PolicyParams ref = PolicyParams::init(hh, 55);
        for (int trial = 0; trial < 5; ++trial) {
            PolicyParams p = PolicyParams::init(hh, rng.next_u64());
            std::vector<DpoTriple> triples;
            for (int i = 0; i < 2; ++i) {
                int target = static_cast<int>(rng.index(static_cast<std::size_t>(corpus.size())));
                int negative;
                do {
                    negative = static_cast<int>(rng.index(static_cast<std::size_t>(corpus.size())));
                } while (negative == target);
                triples.push_back({make_prompt(corpus, std::vector<int>{target}, 10), target,
                                   negative});
            }
            LossAndGrad lg = dpo_loss_and_grad(p, ref, triples, 0.1, corpus, big_trie);
            ParamGrad numeric = oracles::finite_diff_grad(p, [&](const PolicyParams& q) {
                return dpo_loss_and_grad(q, ref, triples, 0.1, corpus, big_trie).loss;
            });
            // The pair shares its prompt, so first-token contributions nearly
            // cancel; entries below the finite-difference noise floor (~1e-11
            // for a loss of size ~1 at step 1e-5) are compared absolutely.
            CHECK(oracles::max_rel_error(lg.grad, numeric, 1e-6) <= 1e-4);
        }
    }
}

TEST_CASE("sdpo margin diagnostic") {
    ItemCorpus two = ItemCorpus::from_titles({"a", "b"});
    TitleTrie trie = TitleTrie::build(two);
    PolicyHyper h{two.vocab_size(), 6, 8, 4};
    Prompt prompt = make_prompt(two, std::vector<int>{0}, 10);
    const std::vector<int> negatives{1};

    SUBCASE("zero at the reference") {
        PolicyParams p = PolicyParams::init(h, 21);
        CHECK(sdpo_margin(p, p, prompt, 0, negatives, 0.1, two, trie) ==
              doctest::Approx(0.0).epsilon(1e-12));
    }

    SUBCASE("log-ratio difference 5 at beta 0.1 gives 0.5") {
        PolicyParams ref = PolicyParams::zeros(h);
        PolicyParams p = PolicyParams::zeros(h);
        p.b2[static_cast<std::size_t>(two.tokenize("a")[0])] = 5.0;
        CHECK(sdpo_margin(p, ref, prompt, 0, negatives, 0.1, two, trie) ==
              doctest::Approx(0.5).epsilon(1e-9));
    }

    SUBCASE("matches the independent formula over random parameters") {
        Rng rng(9);
        for (int trial = 0; trial < 10; ++trial) {
            PolicyParams p = PolicyParams::init(h, rng.next_u64());
            PolicyParams ref = PolicyParams::init(h, rng.next_u64());
            const double got = sdpo_margin(p, ref, prompt, 0, negatives, 0.1, two, trie);
            const double expected =
                0.1 * ((seq_logprob(p, prompt, two.item(0), trie) -
                        seq_logprob(ref, prompt, two.item(0), trie)) -
                       (seq_logprob(p, prompt, two.item(1), trie) -
                        seq_logprob(ref, prompt, two.item(1), trie)));
            CHECK(got == doctest::Approx(expected).epsilon(1e-12));
        }
    }
}

TEST_CASE("train config serialization and validation") {
    SUBCASE("kv round-trip covers every field") {
        TrainConfig cfg;
        cfg.G = 8;
        cfg.beta = 0.01;
        cfg.sampling = SamplingStrategy::dynamic;
        cfg.reward = RewardMode::collab;
        cfg.objective = Objective::gspo;
        cfg.ratio_denominator = RatioDenominator::ref_policy;
        cfg.negative_source = NegativeSource::ref_sampled;
        cfg.seed = 1234567;
        TrainConfig back = TrainConfig::from_kv(cfg.to_kv());
        CHECK(back.to_kv() == cfg.to_kv());
    }

    SUBCASE("file round-trip with comments") {
        TempDir tmp("cfg");
        {
            std::ofstream out(tmp.file("train.cfg"));
            out << "# comment line\n";
            out << "G=4\n";
            out << "lr=0.25  # inline comment\n";
            out << "sampling=common\n";
        }
        TrainConfig cfg = TrainConfig::from_file(tmp.file("train.cfg"));
        CHECK(cfg.G == 4);
        CHECK(cfg.lr == 0.25);
        CHECK(cfg.sampling == SamplingStrategy::common);
        cfg.save(tmp.file("echo.cfg"));
        TrainConfig echoed = TrainConfig::from_file(tmp.file("echo.cfg"));
        CHECK(echoed.to_kv() == cfg.to_kv());
    }

    SUBCASE("unknown keys and invalid ranges are config errors") {
        CHECK_THROWS_AS(TrainConfig::from_kv({{"bogus", "1"}}), ConfigError);
        TrainConfig cfg;
        cfg.G = 0;
        CHECK_THROWS_AS(cfg.validate(), ConfigError);
        cfg = TrainConfig{};
        cfg.eps_clip = 1.0;
        CHECK_THROWS_AS(cfg.validate(), ConfigError);
        cfg = TrainConfig{};
        cfg.beta = -1.0;
        CHECK_THROWS_AS(cfg.validate(), ConfigError);
    }
}

TEST_CASE("metric series round-trips and is stable") {
    TempDir tmp("metrics");
    MetricSeries series;
    IterationStats r1;
    r1.iteration = 1;
    r1.mean_reward = 0.25;
    r1.diversity_mean = 1.0;
    r1.zero_variance_fraction = 0.5;
    r1.grad_norm = 0.125;
    r1.kl_mean = 1e-6;
    r1.wall_ms = 12.5;
    IterationStats r2;
    r2.iteration = 2;
    r2.mean_reward = 0.5;
    r2.hr5 = 0.75;
    r2.ndcg10 = 0.5;
    series.rows = {r1, r2};

    series.save_csv(tmp.file("m.csv"));
    series.save_jsonl(tmp.file("m.jsonl"));
    MetricSeries loaded = MetricSeries::load_csv(tmp.file("m.csv"));
    REQUIRE(loaded.rows.size() == 2);
    CHECK(loaded.rows[0].mean_reward == 0.25);
    CHECK(std::isnan(loaded.rows[0].hr5));
    CHECK(loaded.rows[1].hr5 == 0.75);
    CHECK(std::isnan(loaded.rows[1].kl_mean));

    loaded.save_csv(tmp.file("m2.csv"));
    CHECK(oracles::read_bytes(tmp.file("m.csv")) == oracles::read_bytes(tmp.file("m2.csv")));
}

TEST_CASE("train_loop") {
    SyntheticConfig synth;
    synth.n_items = 15;
    synth.n_users = 60;
    synth.noise_prob = 0.1;
    synth.seed = 42;
    SyntheticData data = gen_synthetic(synth);
    split_chrono(data.dataset);
    TitleTrie trie = TitleTrie::build(data.corpus);
    PolicyHyper h{data.corpus.vocab_size(), 8, 12, 6};

    TrainConfig cfg;
    cfg.G = 4;
    cfg.batch_size = 16;
    cfg.epochs = 1;
    cfg.eval_every = 2;
    cfg.seed = 7;

    SUBCASE("lr 0 leaves parameters at the initialization but logs metrics") {
        cfg.lr = 0.0;
        PolicyParams init = PolicyParams::init(h, 5);
        TrainResult result =
            train_loop(cfg, data.dataset, data.corpus, trie, init, Providers{});
        CHECK(oracles::params_equal(result.params, init));
        CHECK(result.series.rows.size() == 3);  // 48 train records / 16 per batch
        CHECK_FALSE(std::isnan(result.series.rows.back().hr5));
    }

    SUBCASE("same config and seed twice: byte-identical metrics CSV") {
        TempDir tmp("determinism");
        cfg.lr = 0.1;
        for (int run = 0; run < 2; ++run) {
            PolicyParams init = PolicyParams::init(h, 5);
            TrainResult result =
                train_loop(cfg, data.dataset, data.corpus, trie, init, Providers{});
            result.series.save_csv(tmp.file("run" + std::to_string(run) + ".csv"));
        }
        CHECK(oracles::read_bytes(tmp.file("run0.csv")) ==
              oracles::read_bytes(tmp.file("run1.csv")));
    }

    SUBCASE("thread count does not change the result") {
        cfg.lr = 0.1;
        PolicyParams init = PolicyParams::init(h, 5);
        TrainResult serial =
            train_loop(cfg, data.dataset, data.corpus, trie, init, Providers{}, 1);
        TrainResult threaded =
            train_loop(cfg, data.dataset, data.corpus, trie, init, Providers{}, 4);
        CHECK(oracles::params_equal(serial.params, threaded.params));
        REQUIRE(serial.series.rows.size() == threaded.series.rows.size());
        for (std::size_t i = 0; i < serial.series.rows.size(); ++i) {
            CHECK(serial.series.rows[i].mean_reward == threaded.series.rows[i].mean_reward);
            CHECK(serial.series.rows[i].grad_norm == threaded.series.rows[i].grad_norm);
        }
    }

    SUBCASE("dpo objective logs the margin series") {
        cfg.lr = 0.1;
        cfg.objective = Objective::dpo;
        cfg.negative_source = NegativeSource::ref_sampled;
        PolicyParams init = PolicyParams::init(h, 5);
        TrainResult result =
            train_loop(cfg, data.dataset, data.corpus, trie, init, Providers{});
        for (const auto& row : result.series.rows) {
            CHECK_FALSE(std::isnan(row.margin));
            CHECK(std::isnan(row.mean_reward));
        }
    }

    SUBCASE("dense reward modes require their providers") {
        cfg.reward = RewardMode::semantic;
        PolicyParams init = PolicyParams::init(h, 5);
        CHECK_THROWS_AS(train_loop(cfg, data.dataset, data.corpus, trie, init, Providers{}),
                        ConfigError);
    }

    SUBCASE("sampling strategies all run and produce valid groups") {
        cfg.lr = 0.05;
        cfg.epochs = 1;
        for (auto strategy : {SamplingStrategy::beam, SamplingStrategy::dynamic,
                              SamplingStrategy::common}) {
            cfg.sampling = strategy;
            PolicyParams init = PolicyParams::init(h, 5);
            TrainResult result =
                train_loop(cfg, data.dataset, data.corpus, trie, init, Providers{});
            CHECK(result.series.rows.size() == 3);
            if (strategy == SamplingStrategy::beam) {
                for (const auto& row : result.series.rows) CHECK(row.diversity_mean == 1.0);
            }
        }
    }
}

TEST_CASE("sft_train basics") {
    SyntheticConfig synth;
    synth.n_items = 10;
    synth.n_users = 40;
    synth.noise_prob = 0.0;
    synth.seed = 11;
    SyntheticData data = gen_synthetic(synth);
    split_chrono(data.dataset);
    TitleTrie trie = TitleTrie::build(data.corpus);
    PolicyHyper h{data.corpus.vocab_size(), 8, 12, 6};
    PolicyParams init = PolicyParams::init(h, 2);

    SUBCASE("zero epochs returns the initialization") {
        SftConfig cfg;
        cfg.epochs = 0;
        SftResult result = sft_train(cfg, data.dataset, data.corpus, trie, init);
        CHECK(oracles::params_equal(result.params, init));
        CHECK(result.epoch_loss.empty());
    }

    SUBCASE("per-epoch loss is non-increasing early in training") {
        SftConfig cfg;
        cfg.epochs = 3;
        cfg.lr = 0.5;
        cfg.batch_size = 8;
        SftResult result = sft_train(cfg, data.dataset, data.corpus, trie, init);
        REQUIRE(result.epoch_loss.size() == 3);
        CHECK(result.epoch_loss[1] <= result.epoch_loss[0]);
        CHECK(result.epoch_loss[2] <= result.epoch_loss[1]);
    }
}
