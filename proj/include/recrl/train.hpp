#pragma once

#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "recrl/rewards.hpp"

namespace recrl {

enum class Objective { grpo, dapo, gspo, dpo };
enum class RatioDenominator { old_policy, ref_policy };
enum class NegativeSource { random, ref_sampled };

const char* objective_name(Objective o);
Objective objective_from_name(const std::string& name);
const char* ratio_denominator_name(RatioDenominator r);
RatioDenominator ratio_denominator_from_name(const std::string& name);
const char* negative_source_name(NegativeSource n);
NegativeSource negative_source_from_name(const std::string& name);

// Serialized as flat key=value text; keys match the member list below
// (group size uses the key "G"). configs/paper_scale.cfg keeps the
// paper-scale preset values (lr 1e-5, batch_size 512).
struct TrainConfig {
    int G = 16;                  // generations per prompt / beam width
    double beta = 1e-3;          // KL penalty weight (grpo only)
    double eps_clip = 0.2;       // symmetric clip range (grpo, gspo)
    double eps_low = 0.2;        // dapo lower clip
    double eps_high = 0.28;      // dapo upper clip
    double lr = 0.05;            // plain gradient step size at this scale
    int batch_size = 32;
    int epochs = 2;
    SamplingStrategy sampling = SamplingStrategy::beam;
    RewardMode reward = RewardMode::ranking;
    Objective objective = Objective::grpo;
    double sync_alpha = 0.5;     // reference EMA: ref = alpha*policy + (1-alpha)*ref
    int sync_every = 10;         // iterations between reference syncs; 0 = never
    double adv_eps = 1e-8;       // zero-variance guard for group advantages
    std::uint64_t seed = 1;
    double temperature = 1.0;    // common / dynamic sampling
    double overgen_factor = 1.5; // dynamic sampling over-generation
    RatioDenominator ratio_denominator = RatioDenominator::old_policy;
    double beta_dpo = 0.1;       // dpo objective only
    NegativeSource negative_source = NegativeSource::random;
    int max_hist = 10;
    int eval_every = 5;          // iterations between validation evals; 0 = never
    int eval_records = 0;        // cap on validation records; 0 = all
    int checkpoint_every = 0;    // iterations between checkpoint hooks; 0 = off

    void validate() const;

    std::map<std::string, std::string> to_kv() const;
    static TrainConfig from_kv(const std::map<std::string, std::string>& kv);
    static TrainConfig from_file(const std::string& path);
    void save(const std::string& path) const;
};

struct GroupAdvantages {
    std::vector<double> values;
    double mean = 0.0;
    double stddev = 0.0;  // population std (divide by G)
    bool skipped = false; // reward std <= adv_eps: all advantages are zero
};

// Standardized within-group advantages; zero-variance groups come back all
// zero and contribute no policy gradient.
GroupAdvantages group_advantages(std::span<const double> rewards, double adv_eps);

// k3 divergence estimate: ratio - log(ratio) - 1, with ratio = pi_ref/pi_theta
// per token. Nonnegative, zero only at ratio == 1.
double kl_k3(double ratio);

// One prompt's sampled group with advantages filled in.
struct RolloutRecord {
    Prompt prompt;
    GenerationGroup group;  // group.advantages must be set
};

struct StepStats {
    double grad_norm = 0.0;
    double kl_mean = 0.0;  // mean per-token k3 estimate vs the reference
};

// Ascends the clipped group-relative surrogate with per-token importance
// ratios against `old_snapshot`, per-sequence 1/|e| and 1/G normalization,
// and a beta-weighted k3 penalty against `ref`. One plain gradient step;
// params updated in place. NaN/Inf gradients abort with NumericError.
StepStats grpo_step(PolicyParams& params,
                    const PolicyParams& old_snapshot,
                    const PolicyParams& ref,
                    std::span<const RolloutRecord> batch,
                    const ItemCorpus& corpus,
                    const TitleTrie& trie,
                    const TrainConfig& cfg);

// Decoupled clip range [1-eps_low, 1+eps_high], token-level normalization
// over the group's total token count, no KL term.
StepStats dapo_step(PolicyParams& params,
                    const PolicyParams& old_snapshot,
                    std::span<const RolloutRecord> batch,
                    const ItemCorpus& corpus,
                    const TitleTrie& trie,
                    const TrainConfig& cfg);

// Sequence-level ratio s_k = (pi_theta(e)/pi_old(e))^(1/|e|), clipped at
// sequence granularity.
StepStats gspo_step(PolicyParams& params,
                    const PolicyParams& old_snapshot,
                    std::span<const RolloutRecord> batch,
                    const ItemCorpus& corpus,
                    const TitleTrie& trie,
                    const TrainConfig& cfg);

struct SftBatchItem {
    Prompt prompt;
    int target = -1;
};

struct LossAndGrad {
    double loss = 0.0;
    ParamGrad grad;  // gradient of the loss (descend by subtracting)
};

// Mean negative constrained log-likelihood of the target titles.
LossAndGrad sft_loss_and_grad(const PolicyParams& params,
                              std::span<const SftBatchItem> batch,
                              const ItemCorpus& corpus,
                              const TitleTrie& trie);

struct DpoTriple {
    Prompt prompt;
    int target = -1;
    int negative = -1;
};

// -log sigmoid(beta * (log-ratio(target) - log-ratio(negative))), averaged
// over the batch, with sequence log-probs from the constrained softmax.
LossAndGrad dpo_loss_and_grad(const PolicyParams& params,
                              const PolicyParams& ref,
                              std::span<const DpoTriple> batch,
                              double beta_dpo,
                              const ItemCorpus& corpus,
                              const TitleTrie& trie);

// Mean over negatives of beta * (log-ratio(target) - log-ratio(negative)).
// Diagnostic only.
double sdpo_margin(const PolicyParams& params,
                   const PolicyParams& ref,
                   const Prompt& prompt,
                   int target,
                   std::span<const int> negatives,
                   double beta_dpo,
                   const ItemCorpus& corpus,
                   const TitleTrie& trie);

constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

struct IterationStats {
    int iteration = 0;
    double mean_reward = kMissing;
    double diversity_mean = kMissing;
    double zero_variance_fraction = kMissing;
    double grad_norm = kMissing;
    double kl_mean = kMissing;
    double margin = kMissing;  // dpo runs only
    double hr3 = kMissing, hr5 = kMissing, hr10 = kMissing;
    double ndcg3 = kMissing, ndcg5 = kMissing, ndcg10 = kMissing;
    double wall_ms = 0.0;  // kept out of the CSV so reruns are byte-identical
};

struct MetricSeries {
    std::vector<IterationStats> rows;

    // CSV: one row per iteration, missing values empty, no wall time.
    void save_csv(const std::string& path) const;
    static MetricSeries load_csv(const std::string& path);
    // JSONL: full records including wall time.
    void save_jsonl(const std::string& path) const;
};

struct Providers {
    const EmbeddingTable* embeddings = nullptr;
    const ScoreTable* scores = nullptr;
};

struct TrainResult {
    PolicyParams params;
    MetricSeries series;
};

using CheckpointHook = std::function<void(int iteration, const PolicyParams&)>;

// Full optimization loop over the train split: sample groups from the
// pre-update snapshot, score, standardize, step, periodically sync the
// reference and evaluate on the validation split. Reproducible from
// (cfg, seed) in any thread configuration: per-record substreams are derived
// from (seed, iteration, record) and gradients reduce in record order.
// The checkpoint hook also fires right before an abort propagates.
TrainResult train_loop(const TrainConfig& cfg,
                       const InteractionDataset& dataset,
                       const ItemCorpus& corpus,
                       const TitleTrie& trie,
                       PolicyParams init,
                       const Providers& providers,
                       int threads = 1,
                       const CheckpointHook& checkpoint_hook = {});

struct SftConfig {
    int epochs = 12;
    double lr = 0.8;
    int batch_size = 32;
    std::uint64_t seed = 1;
    int max_hist = 10;
};

struct SftResult {
    PolicyParams params;
    std::vector<double> epoch_loss;  // mean loss per epoch
};

SftResult sft_train(const SftConfig& cfg,
                    const InteractionDataset& dataset,
                    const ItemCorpus& corpus,
                    const TitleTrie& trie,
                    PolicyParams init,
                    int threads = 1);

}  // namespace recrl
