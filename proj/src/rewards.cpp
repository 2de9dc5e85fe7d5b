#include "recrl/rewards.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace recrl {

const char* reward_name(RewardMode m) {
    switch (m) {
        case RewardMode::rule: return "rule";
        case RewardMode::ranking: return "ranking";
        case RewardMode::semantic: return "semantic";
        case RewardMode::collab: return "collab";
    }
    return "rule";
}

RewardMode reward_from_name(const std::string& name) {
    if (name == "rule") return RewardMode::rule;
    if (name == "ranking") return RewardMode::ranking;
    if (name == "semantic") return RewardMode::semantic;
    if (name == "collab") return RewardMode::collab;
    throw ConfigError("unknown reward mode: '" + name + "'");
}

std::vector<int> assign_ranks(const GenerationGroup& group, const ItemCorpus& corpus) {
    const int n = group.size();
    std::vector<int> ranks(static_cast<std::size_t>(n), 0);
    if (group.strategy == SamplingStrategy::beam) {
        for (int i = 0; i < n; ++i) ranks[static_cast<std::size_t>(i)] = i + 1;
        return ranks;
    }

    struct UniqueTitle {
        int item_id;
        double logprob;
    };
    std::vector<UniqueTitle> unique;
    for (const Generation& g : group.entries) {
        if (std::none_of(unique.begin(), unique.end(),
                         [&](const UniqueTitle& u) { return u.item_id == g.item_id; })) {
            unique.push_back(UniqueTitle{g.item_id, g.logprob});
        }
    }
    std::sort(unique.begin(), unique.end(), [&](const UniqueTitle& a, const UniqueTitle& b) {
        if (a.logprob != b.logprob) return a.logprob > b.logprob;
        const auto& ta = corpus.item(a.item_id).tokens;
        const auto& tb = corpus.item(b.item_id).tokens;
        return std::lexicographical_compare(ta.begin(), ta.end(), tb.begin(), tb.end());
    });
    std::unordered_map<int, int> rank_of;
    for (std::size_t i = 0; i < unique.size(); ++i) {
        rank_of[unique[i].item_id] = static_cast<int>(i) + 1;
    }
    for (int i = 0; i < n; ++i) {
        ranks[static_cast<std::size_t>(i)] = rank_of[group.entries[static_cast<std::size_t>(i)].item_id];
    }
    return ranks;
}

RewardVector rule_reward(const GenerationGroup& group, int target_item) {
    RewardVector rv;
    rv.mode = RewardMode::rule;
    rv.values.reserve(group.entries.size());
    for (const Generation& g : group.entries) {
        rv.values.push_back(g.item_id == target_item ? 1.0 : 0.0);
    }
    return rv;
}

RewardVector ranking_reward(const GenerationGroup& group,
                            int target_item,
                            std::span<const int> ranks) {
    const std::size_t n = group.entries.size();
    if (ranks.size() != n) throw ConfigError("ranks do not match the group size");
    RewardVector rv;
    rv.mode = RewardMode::ranking;
    rv.values.assign(n, 0.0);

    // raw_k = -1/log(rho_k + 1) for negatives; the log base cancels in the
    // normalization below.
    std::vector<double> raw(n, 0.0);
    double denom = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        if (group.entries[k].item_id == target_item) continue;
        raw[k] = -1.0 / std::log(static_cast<double>(ranks[k]) + 1.0);
        denom += raw[k];
    }
    if (denom == 0.0) return rv;  // no negatives in the group
    for (std::size_t k = 0; k < n; ++k) {
        rv.values[k] = -raw[k] / denom;
    }
    return rv;
}

RewardVector combined_reward(const GenerationGroup& group,
                             int target_item,
                             const ItemCorpus& corpus) {
    const auto ranks = assign_ranks(group, corpus);
    RewardVector rule = rule_reward(group, target_item);
    RewardVector rank = ranking_reward(group, target_item, ranks);
    RewardVector rv;
    rv.mode = RewardMode::ranking;
    rv.values.resize(rule.values.size());
    for (std::size_t k = 0; k < rv.values.size(); ++k) {
        rv.values[k] = rule.values[k] + rank.values[k];
    }
    return rv;
}

namespace {

std::vector<std::string> read_lines_checked(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file: " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) lines.push_back(line);
    }
    return lines;
}

}  // namespace

EmbeddingTable EmbeddingTable::load(const std::string& path, const ItemCorpus& corpus) {
    EmbeddingTable table;
    for (const auto& line : read_lines_checked(path)) {
        const auto tab = line.find('\t');
        if (tab == std::string::npos) throw DataError("malformed embedding line: '" + line + "'");
        const int item_id = std::stoi(line.substr(0, tab));
        if (item_id < 0 || item_id >= corpus.size()) {
            throw DataError("embedding for unknown item id " + std::to_string(item_id));
        }
        std::vector<double> vec;
        std::stringstream ss(line.substr(tab + 1));
        std::string part;
        while (std::getline(ss, part, ',')) vec.push_back(std::stod(part));
        if (vec.empty()) throw DataError("empty embedding for item " + std::to_string(item_id));
        if (table.dim_ == 0) {
            table.dim_ = static_cast<int>(vec.size());
        } else if (static_cast<int>(vec.size()) != table.dim_) {
            throw DataError("inconsistent embedding dimension for item " + std::to_string(item_id));
        }
        double norm = 0.0;
        for (double v : vec) norm += v * v;
        if (norm == 0.0) throw DataError("zero embedding for item " + std::to_string(item_id));
        if (!table.vectors_.emplace(item_id, std::move(vec)).second) {
            throw DataError("duplicate embedding for item " + std::to_string(item_id));
        }
    }
    for (const auto& item : corpus.items()) {
        if (!table.vectors_.count(item.item_id)) {
            throw DataError("missing embedding for item " + std::to_string(item.item_id));
        }
    }
    return table;
}

void EmbeddingTable::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write file: " + path);
    for (const auto& [item_id, vec] : vectors_) {
        out << item_id << '\t';
        for (std::size_t i = 0; i < vec.size(); ++i) {
            if (i) out << ',';
            out << format_double(vec[i]);
        }
        out << '\n';
    }
}

EmbeddingTable EmbeddingTable::make_clustered(const ItemCorpus& corpus, int n_clusters,
                                              std::uint64_t seed) {
    if (n_clusters < 1) throw ConfigError("n_clusters must be >= 1");
    EmbeddingTable table;
    table.dim_ = n_clusters;
    std::vector<int> assignment(static_cast<std::size_t>(corpus.size()));
    for (int i = 0; i < corpus.size(); ++i) {
        assignment[static_cast<std::size_t>(i)] = i % n_clusters;
    }
    Rng rng(seed);
    rng.shuffle(assignment);
    for (int i = 0; i < corpus.size(); ++i) {
        std::vector<double> vec(static_cast<std::size_t>(n_clusters), 0.0);
        vec[static_cast<std::size_t>(assignment[static_cast<std::size_t>(i)])] = 1.0;
        table.vectors_.emplace(i, std::move(vec));
    }
    return table;
}

EmbeddingTable EmbeddingTable::make_random(const ItemCorpus& corpus, int dim, std::uint64_t seed) {
    if (dim < 1) throw ConfigError("embedding dim must be >= 1");
    EmbeddingTable table;
    table.dim_ = dim;
    Rng rng(seed);
    for (int i = 0; i < corpus.size(); ++i) {
        std::vector<double> vec(static_cast<std::size_t>(dim));
        double norm = 0.0;
        for (double& v : vec) {
            v = rng.normal();
            norm += v * v;
        }
        norm = std::sqrt(norm);
        for (double& v : vec) v /= norm;
        table.vectors_.emplace(i, std::move(vec));
    }
    return table;
}

const std::vector<double>& EmbeddingTable::at(int item_id) const {
    auto it = vectors_.find(item_id);
    if (it == vectors_.end()) {
        throw DataError("no embedding for item " + std::to_string(item_id));
    }
    return it->second;
}

double EmbeddingTable::cosine(int item_a, int item_b) const {
    const auto& a = at(item_a);
    const auto& b = at(item_b);
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

ScoreTable ScoreTable::load(const std::string& path, const ItemCorpus& corpus) {
    ScoreTable table;
    for (const auto& line : read_lines_checked(path)) {
        std::vector<std::string> fields;
        std::size_t start = 0;
        while (true) {
            std::size_t pos = line.find('\t', start);
            if (pos == std::string::npos) {
                fields.push_back(line.substr(start));
                break;
            }
            fields.push_back(line.substr(start, pos - start));
            start = pos + 1;
        }
        if (fields.size() != 3) throw DataError("malformed score line: '" + line + "'");
        const int item_id = std::stoi(fields[1]);
        if (item_id < 0 || item_id >= corpus.size()) {
            throw DataError("score for unknown item id " + std::to_string(item_id));
        }
        table.scores_[{fields[0], item_id}] = std::stod(fields[2]);
    }
    return table;
}

void ScoreTable::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write file: " + path);
    for (const auto& [key, value] : scores_) {
        out << key.first << '\t' << key.second << '\t' << format_double(value) << '\n';
    }
}

ScoreTable ScoreTable::make_oracle(const InteractionDataset& dataset, const ItemCorpus& corpus,
                                   const SyntheticRule& rule) {
    ScoreTable table;
    for (const auto& rec : dataset.records) {
        const int predicted = rule.transition[static_cast<std::size_t>(rec.history.back())];
        const std::string key = std::to_string(rec.user_id);
        for (int item = 0; item < corpus.size(); ++item) {
            table.scores_[{key, item}] = (item == predicted) ? 1.0 : 0.0;
        }
    }
    return table;
}

ScoreTable ScoreTable::make_decoy(const InteractionDataset& dataset, const ItemCorpus& corpus,
                                  std::uint64_t seed) {
    std::vector<int> decoy(static_cast<std::size_t>(corpus.size()));
    for (int i = 0; i < corpus.size(); ++i) decoy[static_cast<std::size_t>(i)] = i;
    Rng rng(seed);
    rng.shuffle(decoy);
    ScoreTable table;
    for (const auto& rec : dataset.records) {
        const int predicted = decoy[static_cast<std::size_t>(rec.history.back())];
        const std::string key = std::to_string(rec.user_id);
        for (int item = 0; item < corpus.size(); ++item) {
            table.scores_[{key, item}] = (item == predicted) ? 1.0 : 0.0;
        }
    }
    return table;
}

double ScoreTable::score(const std::string& context_key, int item_id) const {
    auto it = scores_.find({context_key, item_id});
    if (it == scores_.end()) {
        throw DataError("no score for context '" + context_key + "', item " +
                        std::to_string(item_id));
    }
    return it->second;
}

void ScoreTable::set(const std::string& context_key, int item_id, double value) {
    scores_[{context_key, item_id}] = value;
}

RewardVector semantic_reward(const GenerationGroup& group,
                             int target_item,
                             const EmbeddingTable& embeddings) {
    RewardVector rv;
    rv.mode = RewardMode::semantic;
    rv.values.reserve(group.entries.size());
    for (const Generation& g : group.entries) {
        rv.values.push_back(embeddings.cosine(g.item_id, target_item));
    }
    return rv;
}

RewardVector collab_reward(const GenerationGroup& group,
                           const std::string& context_key,
                           const ScoreTable& scores) {
    RewardVector rv;
    rv.mode = RewardMode::collab;
    rv.values.reserve(group.entries.size());
    for (const Generation& g : group.entries) {
        rv.values.push_back(scores.score(context_key, g.item_id));
    }
    return rv;
}

}  // namespace recrl
