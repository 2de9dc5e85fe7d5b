#pragma once

#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "recrl/decoding.hpp"

namespace recrl {

enum class RewardMode { rule, ranking, semantic, collab };

const char* reward_name(RewardMode m);
RewardMode reward_from_name(const std::string& name);

struct RewardVector {
    std::vector<double> values;
    RewardMode mode = RewardMode::rule;
};

// Generation ranks: unique titles ordered by seq_logprob descending get ranks
// 1, 2, 3, ...; duplicates share their title's rank. Exact log-prob ties break
// by ascending token sequence. Beam groups keep their beam order.
std::vector<int> assign_ranks(const GenerationGroup& group, const ItemCorpus& corpus);

// 1 where the entry is the target title, else 0.
RewardVector rule_reward(const GenerationGroup& group, int target_item);

// Harder negatives (lower rank rho) receive more negative rewards:
// raw = -1/log(rho+1), normalized so the group's negatives sum to -1.
// Targets get 0; groups without negatives are all zero.
RewardVector ranking_reward(const GenerationGroup& group,
                            int target_item,
                            std::span<const int> ranks);

// rule_reward + ranking_reward; target entries 1, negatives in [-1, 0).
RewardVector combined_reward(const GenerationGroup& group,
                             int target_item,
                             const ItemCorpus& corpus);

// Offline item embeddings, `item_id<TAB>v1,v2,...,vd` per line.
class EmbeddingTable {
public:
    // Must cover every corpus item; zero-norm or missing vectors fail here.
    static EmbeddingTable load(const std::string& path, const ItemCorpus& corpus);
    void save(const std::string& path) const;

    // Every item's vector equals its cluster centroid (one-hot over clusters),
    // with cluster assignment unrelated to the interaction dynamics. Designed
    // to reward near-misses as much as exact hits within a cluster.
    static EmbeddingTable make_clustered(const ItemCorpus& corpus, int n_clusters,
                                         std::uint64_t seed);
    // Unit-normalized random vectors.
    static EmbeddingTable make_random(const ItemCorpus& corpus, int dim, std::uint64_t seed);

    int dim() const { return dim_; }
    const std::vector<double>& at(int item_id) const;
    double cosine(int item_a, int item_b) const;

private:
    int dim_ = 0;
    std::map<int, std::vector<double>> vectors_;
};

// Offline per-context item scores, `context_key<TAB>item_id<TAB>score`.
class ScoreTable {
public:
    static ScoreTable load(const std::string& path, const ItemCorpus& corpus);
    void save(const std::string& path) const;

    // Score 1 where item == transition[last history item], else 0; contexts
    // keyed by user id. Mirrors the reward a perfect next-item model implies.
    static ScoreTable make_oracle(const InteractionDataset& dataset, const ItemCorpus& corpus,
                                  const SyntheticRule& rule);
    // Same construction but driven by an independent random permutation, so
    // the scores systematically contradict the true dynamics.
    static ScoreTable make_decoy(const InteractionDataset& dataset, const ItemCorpus& corpus,
                                 std::uint64_t seed);

    double score(const std::string& context_key, int item_id) const;
    void set(const std::string& context_key, int item_id, double value);
    std::size_t size() const { return scores_.size(); }

private:
    std::map<std::pair<std::string, int>, double> scores_;
};

// Cosine similarity between each generated item and the target.
RewardVector semantic_reward(const GenerationGroup& group,
                             int target_item,
                             const EmbeddingTable& embeddings);

// External per-(context, item) score lookup, no transformation.
RewardVector collab_reward(const GenerationGroup& group,
                           const std::string& context_key,
                           const ScoreTable& scores);

}  // namespace recrl
