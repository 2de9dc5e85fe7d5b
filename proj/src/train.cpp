#include "recrl/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "recrl/eval.hpp"

namespace recrl {

const char* objective_name(Objective o) {
    switch (o) {
        case Objective::grpo: return "grpo";
        case Objective::dapo: return "dapo";
        case Objective::gspo: return "gspo";
        case Objective::dpo: return "dpo";
    }
    return "grpo";
}

Objective objective_from_name(const std::string& name) {
    if (name == "grpo") return Objective::grpo;
    if (name == "dapo") return Objective::dapo;
    if (name == "gspo") return Objective::gspo;
    if (name == "dpo") return Objective::dpo;
    throw ConfigError("unknown objective: '" + name + "'");
}

const char* ratio_denominator_name(RatioDenominator r) {
    return r == RatioDenominator::old_policy ? "old" : "ref";
}

RatioDenominator ratio_denominator_from_name(const std::string& name) {
    if (name == "old") return RatioDenominator::old_policy;
    if (name == "ref") return RatioDenominator::ref_policy;
    throw ConfigError("unknown ratio denominator: '" + name + "'");
}

const char* negative_source_name(NegativeSource n) {
    return n == NegativeSource::random ? "random" : "ref";
}

NegativeSource negative_source_from_name(const std::string& name) {
    if (name == "random") return NegativeSource::random;
    if (name == "ref") return NegativeSource::ref_sampled;
    throw ConfigError("unknown negative source: '" + name + "'");
}

void TrainConfig::validate() const {
    if (G < 1) throw ConfigError("G must be >= 1");
    if (beta < 0.0) throw ConfigError("beta must be >= 0");
    if (eps_clip <= 0.0 || eps_clip >= 1.0) throw ConfigError("eps_clip must be in (0, 1)");
    if (eps_low <= 0.0 || eps_low >= 1.0) throw ConfigError("eps_low must be in (0, 1)");
    if (eps_high <= 0.0 || eps_high >= 1.0) throw ConfigError("eps_high must be in (0, 1)");
    if (lr < 0.0) throw ConfigError("lr must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (sync_alpha < 0.0 || sync_alpha > 1.0) throw ConfigError("sync_alpha must be in [0, 1]");
    if (sync_every < 0) throw ConfigError("sync_every must be >= 0");
    if (adv_eps <= 0.0) throw ConfigError("adv_eps must be > 0");
    if (temperature < 0.0) throw ConfigError("temperature must be >= 0");
    if (overgen_factor < 1.0) throw ConfigError("overgen_factor must be >= 1");
    if (beta_dpo <= 0.0) throw ConfigError("beta_dpo must be > 0");
    if (max_hist < 1) throw ConfigError("max_hist must be >= 1");
    if (eval_every < 0) throw ConfigError("eval_every must be >= 0");
    if (eval_records < 0) throw ConfigError("eval_records must be >= 0");
    if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
}

std::map<std::string, std::string> TrainConfig::to_kv() const {
    std::map<std::string, std::string> kv;
    kv["G"] = std::to_string(G);
    kv["beta"] = format_double(beta);
    kv["eps_clip"] = format_double(eps_clip);
    kv["eps_low"] = format_double(eps_low);
    kv["eps_high"] = format_double(eps_high);
    kv["lr"] = format_double(lr);
    kv["batch_size"] = std::to_string(batch_size);
    kv["epochs"] = std::to_string(epochs);
    kv["sampling"] = sampling_name(sampling);
    kv["reward"] = reward_name(reward);
    kv["objective"] = objective_name(objective);
    kv["sync_alpha"] = format_double(sync_alpha);
    kv["sync_every"] = std::to_string(sync_every);
    kv["adv_eps"] = format_double(adv_eps);
    kv["seed"] = std::to_string(seed);
    kv["temperature"] = format_double(temperature);
    kv["overgen_factor"] = format_double(overgen_factor);
    kv["ratio_denominator"] = ratio_denominator_name(ratio_denominator);
    kv["beta_dpo"] = format_double(beta_dpo);
    kv["negative_source"] = negative_source_name(negative_source);
    kv["max_hist"] = std::to_string(max_hist);
    kv["eval_every"] = std::to_string(eval_every);
    kv["eval_records"] = std::to_string(eval_records);
    kv["checkpoint_every"] = std::to_string(checkpoint_every);
    return kv;
}

namespace {

int parse_int(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        int v = std::stoi(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("invalid integer for " + key + ": '" + value + "'");
    }
}

double parse_dbl(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        double v = std::stod(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("invalid number for " + key + ": '" + value + "'");
    }
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        std::uint64_t v = std::stoull(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("invalid seed for " + key + ": '" + value + "'");
    }
}

}  // namespace

TrainConfig TrainConfig::from_kv(const std::map<std::string, std::string>& kv) {
    TrainConfig cfg;
    for (const auto& [key, value] : kv) {
        if (key == "G") cfg.G = parse_int(key, value);
        else if (key == "beta") cfg.beta = parse_dbl(key, value);
        else if (key == "eps_clip") cfg.eps_clip = parse_dbl(key, value);
        else if (key == "eps_low") cfg.eps_low = parse_dbl(key, value);
        else if (key == "eps_high") cfg.eps_high = parse_dbl(key, value);
        else if (key == "lr") cfg.lr = parse_dbl(key, value);
        else if (key == "batch_size") cfg.batch_size = parse_int(key, value);
        else if (key == "epochs") cfg.epochs = parse_int(key, value);
        else if (key == "sampling") cfg.sampling = sampling_from_name(value);
        else if (key == "reward") cfg.reward = reward_from_name(value);
        else if (key == "objective") cfg.objective = objective_from_name(value);
        else if (key == "sync_alpha") cfg.sync_alpha = parse_dbl(key, value);
        else if (key == "sync_every") cfg.sync_every = parse_int(key, value);
        else if (key == "adv_eps") cfg.adv_eps = parse_dbl(key, value);
        else if (key == "seed") cfg.seed = parse_u64(key, value);
        else if (key == "temperature") cfg.temperature = parse_dbl(key, value);
        else if (key == "overgen_factor") cfg.overgen_factor = parse_dbl(key, value);
        else if (key == "ratio_denominator") cfg.ratio_denominator = ratio_denominator_from_name(value);
        else if (key == "beta_dpo") cfg.beta_dpo = parse_dbl(key, value);
        else if (key == "negative_source") cfg.negative_source = negative_source_from_name(value);
        else if (key == "max_hist") cfg.max_hist = parse_int(key, value);
        else if (key == "eval_every") cfg.eval_every = parse_int(key, value);
        else if (key == "eval_records") cfg.eval_records = parse_int(key, value);
        else if (key == "checkpoint_every") cfg.checkpoint_every = parse_int(key, value);
        else throw ConfigError("unknown config key: '" + key + "'");
    }
    return cfg;
}

TrainConfig TrainConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        while (!line.empty() && (line.back() == ' ' || line.back() == '\t')) line.pop_back();
        std::size_t start = 0;
        while (start < line.size() && (line[start] == ' ' || line[start] == '\t')) ++start;
        line = line.substr(start);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("malformed config line: '" + line + "'");
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return from_kv(kv);
}

void TrainConfig::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write config file: " + path);
    for (const auto& [key, value] : to_kv()) {
        out << key << '=' << value << '\n';
    }
}

GroupAdvantages group_advantages(std::span<const double> rewards, double adv_eps) {
    if (rewards.empty()) throw ConfigError("group_advantages on an empty group");
    GroupAdvantages adv;
    const double n = static_cast<double>(rewards.size());
    double mean = 0.0;
    for (double r : rewards) mean += r;
    mean /= n;
    double var = 0.0;
    for (double r : rewards) var += (r - mean) * (r - mean);
    var /= n;  // population std
    adv.mean = mean;
    adv.stddev = std::sqrt(var);
    adv.values.assign(rewards.size(), 0.0);
    if (adv.stddev <= adv_eps) {
        adv.skipped = true;
        return adv;
    }
    for (std::size_t k = 0; k < rewards.size(); ++k) {
        adv.values[k] = (rewards[k] - mean) / adv.stddev;
    }
    return adv;
}

double kl_k3(double ratio) {
    if (!(ratio > 0.0)) throw NumericError("kl_k3 requires a positive ratio");
    return ratio - std::log(ratio) - 1.0;
}

namespace {

// Per-token data shared by the surrogate objectives.
struct TokenEval {
    GradTerm term;       // ctx, token, valid; weight filled by the objective
    double lp_theta = 0.0;
    double lp_denom = 0.0;  // sampling-time snapshot (or ref, per config)
    double lp_ref = 0.0;    // only filled when a KL term is active
};

struct EntryEval {
    std::vector<TokenEval> tokens;
    double advantage = 0.0;
};

struct RecordEval {
    std::vector<EntryEval> entries;
    int total_tokens = 0;
};

RecordEval evaluate_record(const PolicyParams& params,
                           const PolicyParams& denom,
                           const PolicyParams* ref,
                           const RolloutRecord& record,
                           const ItemCorpus& corpus,
                           const TitleTrie& trie) {
    const auto& group = record.group;
    if (group.advantages.size() != group.entries.size()) {
        throw ConfigError("rollout group without advantages");
    }
    RecordEval ev;
    ev.entries.resize(group.entries.size());
    for (std::size_t k = 0; k < group.entries.size(); ++k) {
        const ItemTitle& title = corpus.item(group.entries[k].item_id);
        EntryEval& entry = ev.entries[k];
        entry.advantage = group.advantages[k];
        int node = TitleTrie::kRoot;
        std::vector<Token> prefix;
        prefix.reserve(title.tokens.size());
        for (Token t : title.tokens) {
            TokenEval te;
            te.term.ctx = make_context(record.prompt.tokens, prefix, params.hyper.window);
            te.term.token = t;
            te.term.valid = trie.continuations(node);
            te.lp_theta = token_logprob(params, te.term.ctx, t, te.term.valid);
            te.lp_denom = token_logprob(denom, te.term.ctx, t, te.term.valid);
            if (ref) te.lp_ref = token_logprob(*ref, te.term.ctx, t, te.term.valid);
            entry.tokens.push_back(std::move(te));
            node = trie.step(node, t);
            prefix.push_back(t);
        }
        ev.total_tokens += static_cast<int>(entry.tokens.size());
    }
    return ev;
}

// min(r*A, clip(r)*A) passes gradient only through the unclipped branch.
bool clip_flows(double ratio, double advantage, double lo, double hi) {
    const double unclipped = ratio * advantage;
    const double clipped = std::clamp(ratio, lo, hi) * advantage;
    return unclipped <= clipped;
}

StepStats finish_step(PolicyParams& params,
                      const std::vector<GradTerm>& terms,
                      double lr,
                      double kl_sum,
                      long kl_count) {
    ParamGrad grad = grad_weighted_logprob(params, terms);
    if (!grad.all_finite()) {
        throw NumericError("non-finite policy gradient (" +
                           std::to_string(terms.size()) + " terms)");
    }
    StepStats stats;
    stats.grad_norm = grad.l2_norm();
    stats.kl_mean = kl_count > 0 ? kl_sum / static_cast<double>(kl_count) : kMissing;
    apply_gradient(params, grad, lr);
    if (!params.all_finite()) throw NumericError("non-finite parameters after update");
    return stats;
}

const PolicyParams& pick_denominator(const PolicyParams& old_snapshot,
                                     const PolicyParams& ref,
                                     const TrainConfig& cfg) {
    return cfg.ratio_denominator == RatioDenominator::old_policy ? old_snapshot : ref;
}

}  // namespace

StepStats grpo_step(PolicyParams& params,
                    const PolicyParams& old_snapshot,
                    const PolicyParams& ref,
                    std::span<const RolloutRecord> batch,
                    const ItemCorpus& corpus,
                    const TitleTrie& trie,
                    const TrainConfig& cfg) {
    if (batch.empty()) throw ConfigError("empty batch");
    const PolicyParams& denom = pick_denominator(old_snapshot, ref, cfg);
    const double inv_batch = 1.0 / static_cast<double>(batch.size());
    const double lo = 1.0 - cfg.eps_clip;
    const double hi = 1.0 + cfg.eps_clip;

    std::vector<GradTerm> terms;
    double kl_sum = 0.0;
    long kl_count = 0;
    for (const RolloutRecord& record : batch) {
        RecordEval ev = evaluate_record(params, denom, &ref, record, corpus, trie);
        const double inv_g = 1.0 / static_cast<double>(ev.entries.size());
        for (EntryEval& entry : ev.entries) {
            const double inv_len = 1.0 / static_cast<double>(entry.tokens.size());
            for (TokenEval& te : entry.tokens) {
                const double ratio = std::exp(te.lp_theta - te.lp_denom);
                const double rho = std::exp(te.lp_ref - te.lp_theta);
                kl_sum += kl_k3(rho);
                ++kl_count;
                double w = 0.0;
                if (entry.advantage != 0.0 && clip_flows(ratio, entry.advantage, lo, hi)) {
                    w += entry.advantage * ratio;
                }
                w += cfg.beta * (rho - 1.0);
                if (w == 0.0) continue;
                te.term.weight = w * inv_g * inv_len * inv_batch;
                terms.push_back(std::move(te.term));
            }
        }
    }
    return finish_step(params, terms, cfg.lr, kl_sum, kl_count);
}

StepStats dapo_step(PolicyParams& params,
                    const PolicyParams& old_snapshot,
                    std::span<const RolloutRecord> batch,
                    const ItemCorpus& corpus,
                    const TitleTrie& trie,
                    const TrainConfig& cfg) {
    if (batch.empty()) throw ConfigError("empty batch");
    const double inv_batch = 1.0 / static_cast<double>(batch.size());
    const double lo = 1.0 - cfg.eps_low;
    const double hi = 1.0 + cfg.eps_high;

    std::vector<GradTerm> terms;
    for (const RolloutRecord& record : batch) {
        RecordEval ev = evaluate_record(params, old_snapshot, nullptr, record, corpus, trie);
        // Token-level normalization: every token in the group weighs the same.
        const double inv_tokens = 1.0 / static_cast<double>(ev.total_tokens);
        for (EntryEval& entry : ev.entries) {
            if (entry.advantage == 0.0) continue;
            for (TokenEval& te : entry.tokens) {
                const double ratio = std::exp(te.lp_theta - te.lp_denom);
                if (!clip_flows(ratio, entry.advantage, lo, hi)) continue;
                te.term.weight = entry.advantage * ratio * inv_tokens * inv_batch;
                terms.push_back(std::move(te.term));
            }
        }
    }
    return finish_step(params, terms, cfg.lr, 0.0, 0);
}

StepStats gspo_step(PolicyParams& params,
                    const PolicyParams& old_snapshot,
                    std::span<const RolloutRecord> batch,
                    const ItemCorpus& corpus,
                    const TitleTrie& trie,
                    const TrainConfig& cfg) {
    if (batch.empty()) throw ConfigError("empty batch");
    const double inv_batch = 1.0 / static_cast<double>(batch.size());
    const double lo = 1.0 - cfg.eps_clip;
    const double hi = 1.0 + cfg.eps_clip;

    std::vector<GradTerm> terms;
    for (const RolloutRecord& record : batch) {
        RecordEval ev = evaluate_record(params, old_snapshot, nullptr, record, corpus, trie);
        const double inv_g = 1.0 / static_cast<double>(ev.entries.size());
        for (EntryEval& entry : ev.entries) {
            if (entry.advantage == 0.0) continue;
            const double inv_len = 1.0 / static_cast<double>(entry.tokens.size());
            double log_ratio_sum = 0.0;
            for (const TokenEval& te : entry.tokens) {
                log_ratio_sum += te.lp_theta - te.lp_denom;
            }
            // Sequence-level ratio: geometric mean of the per-token ratios.
            const double seq_ratio = std::exp(log_ratio_sum * inv_len);
            if (!clip_flows(seq_ratio, entry.advantage, lo, hi)) continue;
            const double w = entry.advantage * seq_ratio * inv_g * inv_len * inv_batch;
            for (TokenEval& te : entry.tokens) {
                te.term.weight = w;
                terms.push_back(std::move(te.term));
            }
        }
    }
    return finish_step(params, terms, cfg.lr, 0.0, 0);
}

LossAndGrad sft_loss_and_grad(const PolicyParams& params,
                              std::span<const SftBatchItem> batch,
                              const ItemCorpus& corpus,
                              const TitleTrie& trie) {
    if (batch.empty()) throw ConfigError("empty batch");
    const double inv_batch = 1.0 / static_cast<double>(batch.size());
    std::vector<GradTerm> terms;
    double loss = 0.0;
    for (const SftBatchItem& item : batch) {
        const ItemTitle& title = corpus.item(item.target);
        int node = TitleTrie::kRoot;
        std::vector<Token> prefix;
        for (Token t : title.tokens) {
            GradTerm term;
            term.ctx = make_context(item.prompt.tokens, prefix, params.hyper.window);
            term.token = t;
            term.valid = trie.continuations(node);
            term.weight = -inv_batch;
            loss -= token_logprob(params, term.ctx, t, term.valid) * inv_batch;
            terms.push_back(std::move(term));
            node = trie.step(node, t);
            prefix.push_back(t);
        }
    }
    LossAndGrad out{loss, grad_weighted_logprob(params, terms)};
    if (!out.grad.all_finite()) throw NumericError("non-finite SFT gradient");
    return out;
}

LossAndGrad dpo_loss_and_grad(const PolicyParams& params,
                              const PolicyParams& ref,
                              std::span<const DpoTriple> batch,
                              double beta_dpo,
                              const ItemCorpus& corpus,
                              const TitleTrie& trie) {
    if (batch.empty()) throw ConfigError("empty batch");
    const double inv_batch = 1.0 / static_cast<double>(batch.size());
    std::vector<GradTerm> terms;
    double loss = 0.0;

    auto token_terms = [&](const Prompt& prompt, int item_id, double weight) {
        const ItemTitle& title = corpus.item(item_id);
        int node = TitleTrie::kRoot;
        std::vector<Token> prefix;
        for (Token t : title.tokens) {
            GradTerm term;
            term.ctx = make_context(prompt.tokens, prefix, params.hyper.window);
            term.token = t;
            term.valid = trie.continuations(node);
            term.weight = weight;
            terms.push_back(std::move(term));
            node = trie.step(node, t);
            prefix.push_back(t);
        }
    };

    for (const DpoTriple& triple : batch) {
        if (triple.negative == triple.target) {
            throw ConfigError("DPO pair with negative == target");
        }
        const ItemTitle& pos = corpus.item(triple.target);
        const ItemTitle& neg = corpus.item(triple.negative);
        const double margin =
            beta_dpo * ((seq_logprob(params, triple.prompt, pos, trie) -
                         seq_logprob(ref, triple.prompt, pos, trie)) -
                        (seq_logprob(params, triple.prompt, neg, trie) -
                         seq_logprob(ref, triple.prompt, neg, trie)));
        // -log sigmoid(m) == softplus(-m), computed stably.
        loss += (std::max(-margin, 0.0) + std::log1p(std::exp(-std::abs(margin)))) * inv_batch;
        const double coeff = 1.0 / (1.0 + std::exp(margin));  // sigmoid(-m)
        token_terms(triple.prompt, triple.target, -coeff * beta_dpo * inv_batch);
        token_terms(triple.prompt, triple.negative, coeff * beta_dpo * inv_batch);
    }
    LossAndGrad out{loss, grad_weighted_logprob(params, terms)};
    if (!out.grad.all_finite()) throw NumericError("non-finite DPO gradient");
    return out;
}

double sdpo_margin(const PolicyParams& params,
                   const PolicyParams& ref,
                   const Prompt& prompt,
                   int target,
                   std::span<const int> negatives,
                   double beta_dpo,
                   const ItemCorpus& corpus,
                   const TitleTrie& trie) {
    if (negatives.empty()) throw ConfigError("sdpo_margin requires at least one negative");
    const ItemTitle& pos = corpus.item(target);
    const double target_ratio = seq_logprob(params, prompt, pos, trie) -
                                seq_logprob(ref, prompt, pos, trie);
    double sum = 0.0;
    for (int item : negatives) {
        const ItemTitle& neg = corpus.item(item);
        const double neg_ratio = seq_logprob(params, prompt, neg, trie) -
                                 seq_logprob(ref, prompt, neg, trie);
        sum += beta_dpo * (target_ratio - neg_ratio);
    }
    return sum / static_cast<double>(negatives.size());
}

namespace {

void csv_cell(std::ostream& out, double v) {
    if (!std::isnan(v)) out << format_double(v);
}

double csv_parse_cell(const std::string& s) {
    if (s.empty()) return kMissing;
    return std::stod(s);
}

}  // namespace

void MetricSeries::save_csv(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write metrics CSV: " + path);
    out << "iteration,mean_reward,diversity,zero_variance_fraction,grad_norm,kl_mean,"
           "margin,hr3,hr5,hr10,ndcg3,ndcg5,ndcg10\n";
    for (const auto& r : rows) {
        out << r.iteration << ',';
        csv_cell(out, r.mean_reward); out << ',';
        csv_cell(out, r.diversity_mean); out << ',';
        csv_cell(out, r.zero_variance_fraction); out << ',';
        csv_cell(out, r.grad_norm); out << ',';
        csv_cell(out, r.kl_mean); out << ',';
        csv_cell(out, r.margin); out << ',';
        csv_cell(out, r.hr3); out << ',';
        csv_cell(out, r.hr5); out << ',';
        csv_cell(out, r.hr10); out << ',';
        csv_cell(out, r.ndcg3); out << ',';
        csv_cell(out, r.ndcg5); out << ',';
        csv_cell(out, r.ndcg10); out << '\n';
    }
}

MetricSeries MetricSeries::load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open metrics CSV: " + path);
    MetricSeries series;
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty metrics CSV: " + path);
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        cells.resize(13);
        IterationStats r;
        r.iteration = std::stoi(cells[0]);
        r.mean_reward = csv_parse_cell(cells[1]);
        r.diversity_mean = csv_parse_cell(cells[2]);
        r.zero_variance_fraction = csv_parse_cell(cells[3]);
        r.grad_norm = csv_parse_cell(cells[4]);
        r.kl_mean = csv_parse_cell(cells[5]);
        r.margin = csv_parse_cell(cells[6]);
        r.hr3 = csv_parse_cell(cells[7]);
        r.hr5 = csv_parse_cell(cells[8]);
        r.hr10 = csv_parse_cell(cells[9]);
        r.ndcg3 = csv_parse_cell(cells[10]);
        r.ndcg5 = csv_parse_cell(cells[11]);
        r.ndcg10 = csv_parse_cell(cells[12]);
        series.rows.push_back(r);
    }
    return series;
}

void MetricSeries::save_jsonl(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write metrics JSONL: " + path);
    auto put = [](nlohmann::json& j, const char* key, double v) {
        if (std::isnan(v)) j[key] = nullptr;
        else j[key] = v;
    };
    for (const auto& r : rows) {
        nlohmann::json j;
        j["iteration"] = r.iteration;
        put(j, "mean_reward", r.mean_reward);
        put(j, "diversity", r.diversity_mean);
        put(j, "zero_variance_fraction", r.zero_variance_fraction);
        put(j, "grad_norm", r.grad_norm);
        put(j, "kl_mean", r.kl_mean);
        put(j, "margin", r.margin);
        put(j, "hr3", r.hr3);
        put(j, "hr5", r.hr5);
        put(j, "hr10", r.hr10);
        put(j, "ndcg3", r.ndcg3);
        put(j, "ndcg5", r.ndcg5);
        put(j, "ndcg10", r.ndcg10);
        j["wall_ms"] = r.wall_ms;
        out << j.dump() << '\n';
    }
}

namespace {

struct RolloutSlot {
    RolloutRecord record;
    double reward_sum = 0.0;
    int reward_count = 0;
    double diversity = 0.0;
    bool zero_variance = false;
};

RewardVector score_group(const GenerationGroup& group,
                         const InteractionRecord& rec,
                         const TrainConfig& cfg,
                         const ItemCorpus& corpus,
                         const Providers& providers) {
    switch (cfg.reward) {
        case RewardMode::rule:
            return rule_reward(group, rec.target);
        case RewardMode::ranking:
            return combined_reward(group, rec.target, corpus);
        case RewardMode::semantic:
            if (!providers.embeddings) {
                throw ConfigError("semantic reward requires an embedding table");
            }
            return semantic_reward(group, rec.target, *providers.embeddings);
        case RewardMode::collab:
            if (!providers.scores) {
                throw ConfigError("collaborative reward requires a score table");
            }
            return collab_reward(group, std::to_string(rec.user_id), *providers.scores);
    }
    throw ConfigError("unhandled reward mode");
}

void fill_validation_metrics(IterationStats& row,
                             const PolicyParams& params,
                             const InteractionDataset& dataset,
                             const ItemCorpus& corpus,
                             const TitleTrie& trie,
                             const TrainConfig& cfg,
                             int threads) {
    const EvalReport report = evaluate_ranking(params, corpus, trie, dataset, Split::valid,
                                               std::vector<int>{3, 5, 10}, cfg.eval_records,
                                               cfg.max_hist, threads);
    if (report.record_count == 0) return;
    row.hr3 = report.hr.at(3);
    row.hr5 = report.hr.at(5);
    row.hr10 = report.hr.at(10);
    row.ndcg3 = report.ndcg.at(3);
    row.ndcg5 = report.ndcg.at(5);
    row.ndcg10 = report.ndcg.at(10);
}

// Uniform non-target item.
int draw_random_negative(Rng& rng, int corpus_size, int target) {
    int item = static_cast<int>(rng.index(static_cast<std::size_t>(corpus_size - 1)));
    if (item >= target) ++item;
    return item;
}

}  // namespace

TrainResult train_loop(const TrainConfig& cfg,
                       const InteractionDataset& dataset,
                       const ItemCorpus& corpus,
                       const TitleTrie& trie,
                       PolicyParams init,
                       const Providers& providers,
                       int threads,
                       const CheckpointHook& checkpoint_hook) {
    cfg.validate();
    if (init.hyper.vocab_size != corpus.vocab_size()) {
        throw ConfigError("policy vocabulary does not match the corpus");
    }
    const std::vector<int> train_idx = dataset.indices_of(Split::train);
    if (train_idx.empty()) throw DataError("dataset has no train records");

    TrainResult result{std::move(init), {}};
    PolicyParams& policy = result.params;
    PolicyParams ref = snapshot(policy);

    const int iters_per_epoch =
        static_cast<int>((train_idx.size() + cfg.batch_size - 1) / cfg.batch_size);
    const int total_iters = iters_per_epoch * cfg.epochs;
    int iteration = 0;

    auto run_iteration = [&](const std::vector<int>& batch_ids) {
        const auto t0 = std::chrono::steady_clock::now();
        IterationStats row;
        row.iteration = iteration;

        if (cfg.objective == Objective::dpo) {
            std::vector<DpoTriple> triples(batch_ids.size());
            parallel_for(batch_ids.size(), threads, [&](std::size_t i) {
                const auto& rec = dataset.records[static_cast<std::size_t>(batch_ids[i])];
                Rng rng(derive_seed(cfg.seed, 0xD0, static_cast<std::uint64_t>(iteration), i));
                DpoTriple t;
                t.prompt = make_prompt(corpus, rec.history, cfg.max_hist);
                t.target = rec.target;
                if (cfg.negative_source == NegativeSource::random) {
                    t.negative = draw_random_negative(rng, corpus.size(), rec.target);
                } else {
                    t.negative = -1;
                    for (int attempt = 0; attempt < 20 && t.negative < 0; ++attempt) {
                        auto draw = common_sample(ref, t.prompt, 1, cfg.temperature, trie, rng);
                        if (draw.entries[0].item_id != rec.target) {
                            t.negative = draw.entries[0].item_id;
                        }
                    }
                    if (t.negative < 0) {
                        t.negative = draw_random_negative(rng, corpus.size(), rec.target);
                    }
                }
                triples[i] = std::move(t);
            });
            LossAndGrad lg = dpo_loss_and_grad(policy, ref, triples, cfg.beta_dpo, corpus, trie);
            row.grad_norm = lg.grad.l2_norm();
            apply_gradient(policy, lg.grad, -cfg.lr);
            if (!policy.all_finite()) throw NumericError("non-finite parameters after update");
            double margin_sum = 0.0;
            for (const auto& t : triples) {
                const int neg[1] = {t.negative};
                margin_sum += sdpo_margin(policy, ref, t.prompt, t.target, neg, cfg.beta_dpo,
                                          corpus, trie);
            }
            row.margin = margin_sum / static_cast<double>(triples.size());
        } else {
            const PolicyParams old = snapshot(policy);
            std::vector<RolloutSlot> slots(batch_ids.size());
            parallel_for(batch_ids.size(), threads, [&](std::size_t i) {
                const auto& rec = dataset.records[static_cast<std::size_t>(batch_ids[i])];
                RolloutSlot& slot = slots[i];
                Prompt prompt = make_prompt(corpus, rec.history, cfg.max_hist);
                Rng rng(derive_seed(cfg.seed, 0x5A, static_cast<std::uint64_t>(iteration), i));
                GenerationGroup group;
                switch (cfg.sampling) {
                    case SamplingStrategy::beam:
                        group = beam_search(old, prompt, cfg.G, trie);
                        break;
                    case SamplingStrategy::dynamic:
                        group = dynamic_sample(old, prompt, cfg.G, rec.target, cfg.temperature,
                                               trie, rng, cfg.overgen_factor);
                        break;
                    case SamplingStrategy::common:
                        group = common_sample(old, prompt, cfg.G, cfg.temperature, trie, rng);
                        break;
                }
                group.ranks = assign_ranks(group, corpus);
                RewardVector rewards = score_group(group, rec, cfg, corpus, providers);
                GroupAdvantages adv = group_advantages(rewards.values, cfg.adv_eps);
                group.rewards = rewards.values;
                group.advantages = adv.values;
                slot.diversity = diversity(group);
                slot.zero_variance = adv.skipped;
                for (double r : rewards.values) slot.reward_sum += r;
                slot.reward_count = group.size();
                slot.record = RolloutRecord{std::move(prompt), std::move(group)};
            });

            std::vector<RolloutRecord> batch;
            batch.reserve(slots.size());
            double reward_sum = 0.0;
            long reward_count = 0;
            double diversity_sum = 0.0;
            int zero_var = 0;
            for (RolloutSlot& slot : slots) {
                reward_sum += slot.reward_sum;
                reward_count += slot.reward_count;
                diversity_sum += slot.diversity;
                zero_var += slot.zero_variance ? 1 : 0;
                batch.push_back(std::move(slot.record));
            }
            row.mean_reward = reward_sum / static_cast<double>(reward_count);
            row.diversity_mean = diversity_sum / static_cast<double>(slots.size());
            row.zero_variance_fraction =
                static_cast<double>(zero_var) / static_cast<double>(slots.size());

            StepStats stats;
            switch (cfg.objective) {
                case Objective::grpo:
                    stats = grpo_step(policy, old, ref, batch, corpus, trie, cfg);
                    break;
                case Objective::dapo:
                    stats = dapo_step(policy, old, batch, corpus, trie, cfg);
                    break;
                case Objective::gspo:
                    stats = gspo_step(policy, old, batch, corpus, trie, cfg);
                    break;
                case Objective::dpo:
                    break;  // handled above
            }
            row.grad_norm = stats.grad_norm;
            row.kl_mean = stats.kl_mean;

            if (cfg.sync_every > 0 && iteration % cfg.sync_every == 0) {
                ref = ema_sync(ref, policy, cfg.sync_alpha);
            }
        }

        const bool last = iteration == total_iters;
        if ((cfg.eval_every > 0 && iteration % cfg.eval_every == 0) || last) {
            fill_validation_metrics(row, policy, dataset, corpus, trie, cfg, threads);
        }
        row.wall_ms = std::chrono::duration<double, std::milli>(
                          std::chrono::steady_clock::now() - t0)
                          .count();
        result.series.rows.push_back(row);
        if (checkpoint_hook && cfg.checkpoint_every > 0 && iteration % cfg.checkpoint_every == 0) {
            checkpoint_hook(iteration, policy);
        }
    };

    try {
        for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
            std::vector<int> order = train_idx;
            Rng shuffle_rng(derive_seed(cfg.seed, 0xE0, static_cast<std::uint64_t>(epoch)));
            shuffle_rng.shuffle(order);
            for (std::size_t start = 0; start < order.size();
                 start += static_cast<std::size_t>(cfg.batch_size)) {
                const std::size_t end =
                    std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
                ++iteration;
                run_iteration(std::vector<int>(order.begin() + static_cast<std::ptrdiff_t>(start),
                                               order.begin() + static_cast<std::ptrdiff_t>(end)));
            }
        }
    } catch (...) {
        if (checkpoint_hook) checkpoint_hook(iteration, policy);
        throw;
    }
    return result;
}

SftResult sft_train(const SftConfig& cfg,
                    const InteractionDataset& dataset,
                    const ItemCorpus& corpus,
                    const TitleTrie& trie,
                    PolicyParams init,
                    int threads) {
    if (cfg.epochs < 0) throw ConfigError("epochs must be >= 0");
    if (cfg.lr < 0.0) throw ConfigError("lr must be >= 0");
    if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (init.hyper.vocab_size != corpus.vocab_size()) {
        throw ConfigError("policy vocabulary does not match the corpus");
    }
    const std::vector<int> train_idx = dataset.indices_of(Split::train);
    if (train_idx.empty()) throw DataError("dataset has no train records");

    SftResult result{std::move(init), {}};
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<int> order = train_idx;
        Rng shuffle_rng(derive_seed(cfg.seed, 0x5F, static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end =
                std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            std::vector<SftBatchItem> batch(end - start);
            parallel_for(end - start, threads, [&](std::size_t i) {
                const auto& rec = dataset.records[static_cast<std::size_t>(order[start + i])];
                batch[i] = SftBatchItem{make_prompt(corpus, rec.history, cfg.max_hist),
                                        rec.target};
            });
            LossAndGrad lg = sft_loss_and_grad(result.params, batch, corpus, trie);
            loss_sum += lg.loss * static_cast<double>(batch.size());
            apply_gradient(result.params, lg.grad, -cfg.lr);
            if (!result.params.all_finite()) {
                throw NumericError("non-finite parameters during SFT");
            }
        }
        result.epoch_loss.push_back(loss_sum / static_cast<double>(order.size()));
    }
    return result;
}

}  // namespace recrl
