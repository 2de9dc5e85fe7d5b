#pragma once

#include <map>
#include <string>
#include <vector>

#include "recrl/train.hpp"

namespace recrl {

struct RankedItem {
    int item_id = -1;
    double score = 0.0;  // constrained sequence log-prob
};

// Top-k corpus items by score, descending. Produced by beam search at width
// k, so scores carry no length normalization.
using RankedList = std::vector<RankedItem>;

RankedList topk(const PolicyParams& params,
                const Prompt& prompt,
                int k,
                const TitleTrie& trie);

// 1-based rank of target within the first k entries; 0 when absent.
int rank_within(const RankedList& list, int target, int k);

// 1 iff the target appears in the first k entries.
double hr_at_k(const RankedList& list, int target, int k);

// Single-relevant-item NDCG: 1/log2(rank+1) when the target sits at
// rank <= k, else 0.
double ndcg_at_k(const RankedList& list, int target, int k);

struct EvalReport {
    std::map<int, double> hr;    // k -> mean HR@k
    std::map<int, double> ndcg;  // k -> mean NDCG@k
    int record_count = 0;
    std::string split;
    std::map<std::string, std::string> context;  // config echo / sweep axis

    void save_csv(const std::string& path) const;
    void save_json(const std::string& path) const;
};

// Beam-decodes every record of the split at width max(ks) and reads HR/NDCG
// for each k from the prefix. cap limits the record count (0 = all).
EvalReport evaluate_ranking(const PolicyParams& params,
                            const ItemCorpus& corpus,
                            const TitleTrie& trie,
                            const InteractionDataset& dataset,
                            Split split,
                            const std::vector<int>& ks,
                            int cap = 0,
                            int max_hist = 10,
                            int threads = 1);

struct TrendSummary {
    double reward_slope = 0.0;  // least-squares slope of mean reward vs iteration
    double ndcg_slope = 0.0;    // least-squares slope of NDCG@10 vs iteration
    int points = 0;             // iterations where both series are present
    bool aligned = false;       // slopes share sign
    bool misaligned = false;    // reward rises while NDCG@10 does not
};

struct MonitorResult {
    std::vector<int> iterations;
    std::vector<double> reward;
    std::vector<double> ndcg10;
    TrendSummary summary;

    void save_csv(const std::string& path) const;
};

// Pairs the reward and NDCG@10 series of a run and summarizes their trends;
// a rising reward with flat-or-falling NDCG flags proxy-reward misalignment.
MonitorResult hacking_monitor(const MetricSeries& series);

struct SweepRun {
    std::string value;      // axis value as text
    std::string run_dir;
    bool failed = false;
    std::string error;
    double runtime_sec = 0.0;
    EvalReport report;      // test-split metrics; empty when failed
};

struct SweepResult {
    std::string axis;
    std::vector<SweepRun> runs;

    void save_table_csv(const std::string& path) const;
};

// Default axis values: G {4,8,16,32}; beta {1e-1..1e-4}; sampling, reward and
// objective enumerate their modes.
std::vector<std::string> default_axis_values(const std::string& axis);

// Applies `value` to a copy of the base config for the given axis.
TrainConfig apply_axis(const TrainConfig& base, const std::string& axis,
                       const std::string& value);

// One full train+eval per axis value with a shared seed. Each run writes
// config, metrics CSV/JSONL, checkpoint and report into its own directory
// under out_dir; failures are recorded and do not stop the sweep.
SweepResult sweep(const std::string& axis,
                  const std::vector<std::string>& values,
                  const TrainConfig& base,
                  const InteractionDataset& dataset,
                  const ItemCorpus& corpus,
                  const TitleTrie& trie,
                  const PolicyParams& init,
                  const Providers& providers,
                  const std::string& out_dir,
                  int threads = 1);

}  // namespace recrl
