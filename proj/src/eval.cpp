#include "recrl/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace recrl {

RankedList topk(const PolicyParams& params,
                const Prompt& prompt,
                int k,
                const TitleTrie& trie) {
    GenerationGroup group = beam_search(params, prompt, k, trie);
    RankedList list;
    list.reserve(group.entries.size());
    for (const Generation& g : group.entries) {
        list.push_back(RankedItem{g.item_id, g.logprob});
    }
    return list;
}

int rank_within(const RankedList& list, int target, int k) {
    const int limit = std::min<int>(k, static_cast<int>(list.size()));
    for (int i = 0; i < limit; ++i) {
        if (list[static_cast<std::size_t>(i)].item_id == target) return i + 1;
    }
    return 0;
}

double hr_at_k(const RankedList& list, int target, int k) {
    return rank_within(list, target, k) > 0 ? 1.0 : 0.0;
}

double ndcg_at_k(const RankedList& list, int target, int k) {
    const int rank = rank_within(list, target, k);
    if (rank == 0) return 0.0;
    return 1.0 / std::log2(static_cast<double>(rank) + 1.0);
}

void EvalReport::save_csv(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write report CSV: " + path);
    out << "metric,k,value\n";
    for (const auto& [k, v] : hr) out << "hr," << k << ',' << format_double(v) << '\n';
    for (const auto& [k, v] : ndcg) out << "ndcg," << k << ',' << format_double(v) << '\n';
    out << "records,," << record_count << '\n';
}

void EvalReport::save_json(const std::string& path) const {
    nlohmann::json j;
    for (const auto& [k, v] : hr) j["hr"][std::to_string(k)] = v;
    for (const auto& [k, v] : ndcg) j["ndcg"][std::to_string(k)] = v;
    j["record_count"] = record_count;
    j["split"] = split;
    j["context"] = context;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write report JSON: " + path);
    out << j.dump(2) << '\n';
}

EvalReport evaluate_ranking(const PolicyParams& params,
                            const ItemCorpus& corpus,
                            const TitleTrie& trie,
                            const InteractionDataset& dataset,
                            Split split,
                            const std::vector<int>& ks,
                            int cap,
                            int max_hist,
                            int threads) {
    if (ks.empty()) throw ConfigError("evaluate_ranking requires at least one k");
    const int k_max = *std::max_element(ks.begin(), ks.end());
    if (k_max > corpus.size()) throw ConfigError("k exceeds the corpus size");

    std::vector<int> idx = dataset.indices_of(split);
    if (cap > 0 && static_cast<int>(idx.size()) > cap) {
        idx.resize(static_cast<std::size_t>(cap));
    }

    EvalReport report;
    report.split = split_name(split);
    report.record_count = static_cast<int>(idx.size());
    for (int k : ks) {
        report.hr[k] = 0.0;
        report.ndcg[k] = 0.0;
    }
    if (idx.empty()) return report;

    std::vector<int> ranks(idx.size(), 0);
    parallel_for(idx.size(), threads, [&](std::size_t i) {
        const auto& rec = dataset.records[static_cast<std::size_t>(idx[i])];
        const Prompt prompt = make_prompt(corpus, rec.history, max_hist);
        const RankedList list = topk(params, prompt, k_max, trie);
        ranks[i] = rank_within(list, rec.target, k_max);
    });

    for (std::size_t i = 0; i < idx.size(); ++i) {
        for (int k : ks) {
            if (ranks[i] > 0 && ranks[i] <= k) {
                report.hr[k] += 1.0;
                report.ndcg[k] += 1.0 / std::log2(static_cast<double>(ranks[i]) + 1.0);
            }
        }
    }
    for (int k : ks) {
        report.hr[k] /= static_cast<double>(idx.size());
        report.ndcg[k] /= static_cast<double>(idx.size());
    }
    return report;
}

namespace {

double ls_slope(const std::vector<double>& xs, const std::vector<double>& ys) {
    const double n = static_cast<double>(xs.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= n;
    my /= n;
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        num += (xs[i] - mx) * (ys[i] - my);
        den += (xs[i] - mx) * (xs[i] - mx);
    }
    return den == 0.0 ? 0.0 : num / den;
}

int sign_of(double v) { return v > 0.0 ? 1 : (v < 0.0 ? -1 : 0); }

}  // namespace

MonitorResult hacking_monitor(const MetricSeries& series) {
    MonitorResult result;
    for (const auto& row : series.rows) {
        if (std::isnan(row.mean_reward) || std::isnan(row.ndcg10)) continue;
        result.iterations.push_back(row.iteration);
        result.reward.push_back(row.mean_reward);
        result.ndcg10.push_back(row.ndcg10);
    }
    if (result.iterations.size() < 2) {
        throw DataError("missing series: hacking monitor needs >= 2 iterations with both "
                        "mean reward and NDCG@10");
    }
    std::vector<double> xs(result.iterations.begin(), result.iterations.end());
    result.summary.points = static_cast<int>(xs.size());
    result.summary.reward_slope = ls_slope(xs, result.reward);
    result.summary.ndcg_slope = ls_slope(xs, result.ndcg10);
    result.summary.aligned =
        sign_of(result.summary.reward_slope) == sign_of(result.summary.ndcg_slope);
    result.summary.misaligned =
        result.summary.reward_slope > 0.0 && result.summary.ndcg_slope <= 0.0;
    return result;
}

void MonitorResult::save_csv(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write monitor CSV: " + path);
    out << "iteration,mean_reward,ndcg10\n";
    for (std::size_t i = 0; i < iterations.size(); ++i) {
        out << iterations[i] << ',' << format_double(reward[i]) << ','
            << format_double(ndcg10[i]) << '\n';
    }
    out << "# reward_slope=" << format_double(summary.reward_slope)
        << " ndcg_slope=" << format_double(summary.ndcg_slope)
        << " aligned=" << (summary.aligned ? 1 : 0)
        << " misaligned=" << (summary.misaligned ? 1 : 0) << '\n';
}

std::vector<std::string> default_axis_values(const std::string& axis) {
    if (axis == "G") return {"4", "8", "16", "32"};
    if (axis == "beta") return {"0.1", "0.01", "0.001", "0.0001"};
    if (axis == "sampling") return {"beam", "dynamic", "common"};
    if (axis == "reward") return {"rule", "ranking", "semantic", "collab"};
    if (axis == "objective") return {"grpo", "dapo", "gspo"};
    throw ConfigError("unknown sweep axis: '" + axis + "'");
}

TrainConfig apply_axis(const TrainConfig& base, const std::string& axis,
                       const std::string& value) {
    auto kv = base.to_kv();
    if (!kv.count(axis)) throw ConfigError("unknown sweep axis: '" + axis + "'");
    kv[axis] = value;
    TrainConfig cfg = TrainConfig::from_kv(kv);
    cfg.validate();
    return cfg;
}

SweepResult sweep(const std::string& axis,
                  const std::vector<std::string>& values,
                  const TrainConfig& base,
                  const InteractionDataset& dataset,
                  const ItemCorpus& corpus,
                  const TitleTrie& trie,
                  const PolicyParams& init,
                  const Providers& providers,
                  const std::string& out_dir,
                  int threads) {
    namespace fs = std::filesystem;
    SweepResult result;
    result.axis = axis;
    fs::create_directories(out_dir);

    for (const std::string& value : values) {
        SweepRun run;
        run.value = value;
        run.run_dir = (fs::path(out_dir) / (axis + "=" + value)).string();
        fs::create_directories(run.run_dir);
        const auto t0 = std::chrono::steady_clock::now();
        try {
            TrainConfig cfg = apply_axis(base, axis, value);
            cfg.save((fs::path(run.run_dir) / "config.cfg").string());
            TrainResult trained =
                train_loop(cfg, dataset, corpus, trie, init, providers, threads);
            trained.series.save_csv((fs::path(run.run_dir) / "metrics.csv").string());
            trained.series.save_jsonl((fs::path(run.run_dir) / "metrics.jsonl").string());
            save_checkpoint(trained.params,
                            (fs::path(run.run_dir) / "checkpoint.json").string());
            run.report = evaluate_ranking(trained.params, corpus, trie, dataset, Split::test,
                                          {3, 5, 10}, 0, cfg.max_hist, threads);
            run.report.context[axis] = value;
            run.report.save_json((fs::path(run.run_dir) / "report.json").string());
            run.report.save_csv((fs::path(run.run_dir) / "report.csv").string());
        } catch (const std::exception& e) {
            run.failed = true;
            run.error = e.what();
        }
        run.runtime_sec = std::chrono::duration<double>(
                              std::chrono::steady_clock::now() - t0)
                              .count();
        result.runs.push_back(std::move(run));
    }
    return result;
}

void SweepResult::save_table_csv(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write sweep table: " + path);
    out << "axis,value,status,hr3,hr5,hr10,ndcg3,ndcg5,ndcg10,runtime_sec,run_dir\n";
    for (const auto& run : runs) {
        out << axis << ',' << run.value << ',' << (run.failed ? "failed" : "ok") << ',';
        if (run.failed) {
            out << ",,,,,,";
        } else {
            out << format_double(run.report.hr.at(3)) << ','
                << format_double(run.report.hr.at(5)) << ','
                << format_double(run.report.hr.at(10)) << ','
                << format_double(run.report.ndcg.at(3)) << ','
                << format_double(run.report.ndcg.at(5)) << ','
                << format_double(run.report.ndcg.at(10)) << ',';
        }
        out << format_double(run.runtime_sec) << ',' << run.run_dir << '\n';
    }
}

}  // namespace recrl
