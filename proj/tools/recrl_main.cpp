// Command-line front end: data generation, SFT warm-start, RL training,
// evaluation, sweeps, and report rendering. One run = one directory holding
// a manifest, checkpoints, metrics, and reports.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "recrl/eval.hpp"
#include "recrl/manifest.hpp"
#include "recrl/report.hpp"

namespace fs = std::filesystem;
using namespace recrl;

namespace {

constexpr const char* kVersion = "0.1.0";

constexpr int kExitOk = 0;
constexpr int kExitGeneric = 1;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

struct GlobalOpts {
    std::string config_file;
    std::uint64_t seed = 1;
    bool seed_set = false;
    std::string out_dir = "run";
    int threads = 1;
};

struct LoadedData {
    ItemCorpus corpus;
    TitleTrie trie;
    InteractionDataset dataset;
    std::string corpus_path;
    std::string dataset_path;
    std::string rule_path;  // may be empty
};

LoadedData load_data(const std::string& dir) {
    LoadedData d;
    d.corpus_path = (fs::path(dir) / "corpus.tsv").string();
    d.dataset_path = (fs::path(dir) / "interactions.tsv").string();
    d.corpus = ItemCorpus::load(d.corpus_path);
    d.trie = TitleTrie::build(d.corpus);
    d.dataset = InteractionDataset::load(d.dataset_path, d.corpus);
    const std::string rule = (fs::path(dir) / "rule.json").string();
    if (fs::exists(rule)) d.rule_path = rule;
    return d;
}

PolicyParams initial_params(const std::string& init, const ItemCorpus& corpus,
                            const PolicyHyper& hyper_base, std::uint64_t seed) {
    if (init.empty() || init == "none") {
        PolicyHyper hyper = hyper_base;
        hyper.vocab_size = corpus.vocab_size();
        return PolicyParams::init(hyper, seed);
    }
    PolicyParams p = load_checkpoint(init);
    if (p.hyper.vocab_size != corpus.vocab_size()) {
        throw DataError("checkpoint vocabulary does not match the corpus");
    }
    return p;
}

void write_manifest(const GlobalOpts& g, const std::string& command,
                    const std::map<std::string, std::string>& config,
                    const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs) {
    RunManifest m;
    m.command = command;
    m.config = config;
    m.seed = g.seed;
    for (const auto& path : inputs) m.add_input(path);
    m.outputs = outputs;
    m.created_at = iso8601_utc_now();
    m.save((fs::path(g.out_dir) / "manifest.json").string());
}

// ---------------------------------------------------------------------------
// gen-data

struct GenDataOpts {
    int items = 100;
    int users = 2000;
    double noise = 0.2;
    double sharpness = 1.0;
    int min_hist = 3;
    int max_hist_len = 12;
    std::string ratios = "8,1,1";
    std::string embeddings = "none";  // none | random | clustered
    int emb_dim = 16;
    int emb_clusters = 10;
    std::string scores = "none";  // none | oracle | decoy
};

int run_gen_data(const GlobalOpts& g, const GenDataOpts& o) {
    SyntheticConfig cfg;
    cfg.n_items = o.items;
    cfg.n_users = o.users;
    cfg.noise_prob = o.noise;
    cfg.transition_sharpness = o.sharpness;
    cfg.seed = g.seed;
    cfg.min_hist_len = o.min_hist;
    cfg.max_hist_len = o.max_hist_len;

    int r[3] = {0, 0, 0};
    {
        std::stringstream ss(o.ratios);
        std::string part;
        int i = 0;
        while (std::getline(ss, part, ',') && i < 3) r[i++] = std::stoi(part);
        if (i != 3) throw ConfigError("ratios must be three comma-separated integers");
    }

    SyntheticData data = gen_synthetic(cfg);
    split_chrono(data.dataset, r[0], r[1], r[2]);

    fs::create_directories(g.out_dir);
    const std::string corpus_path = (fs::path(g.out_dir) / "corpus.tsv").string();
    const std::string dataset_path = (fs::path(g.out_dir) / "interactions.tsv").string();
    const std::string rule_path = (fs::path(g.out_dir) / "rule.json").string();
    data.corpus.save(corpus_path);
    data.dataset.save(dataset_path);
    data.rule.save(rule_path);
    std::vector<std::string> outputs = {corpus_path, dataset_path, rule_path};

    if (o.embeddings != "none") {
        const std::string emb_path = (fs::path(g.out_dir) / "embeddings.tsv").string();
        EmbeddingTable table =
            o.embeddings == "clustered"
                ? EmbeddingTable::make_clustered(data.corpus, o.emb_clusters,
                                                 derive_seed(g.seed, 0xE1B))
                : EmbeddingTable::make_random(data.corpus, o.emb_dim,
                                              derive_seed(g.seed, 0xE1B));
        table.save(emb_path);
        outputs.push_back(emb_path);
    }
    if (o.scores != "none") {
        const std::string score_path = (fs::path(g.out_dir) / "scores.tsv").string();
        ScoreTable table = o.scores == "oracle"
                               ? ScoreTable::make_oracle(data.dataset, data.corpus, data.rule)
                               : ScoreTable::make_decoy(data.dataset, data.corpus,
                                                        derive_seed(g.seed, 0xDEC));
        table.save(score_path);
        outputs.push_back(score_path);
    }

    std::map<std::string, std::string> cfg_kv = {
        {"items", std::to_string(o.items)},
        {"users", std::to_string(o.users)},
        {"noise", format_double(o.noise)},
        {"sharpness", format_double(o.sharpness)},
        {"min_hist", std::to_string(o.min_hist)},
        {"max_hist_len", std::to_string(o.max_hist_len)},
        {"ratios", o.ratios},
        {"embeddings", o.embeddings},
        {"scores", o.scores},
    };
    write_manifest(g, "gen-data", cfg_kv, {}, outputs);
    std::cout << "wrote " << outputs.size() << " files to " << g.out_dir << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// sft

struct SftOpts {
    std::string data_dir;
    std::string init = "none";
    int epochs = 12;
    double lr = 0.8;
    int batch = 32;
    int embed_dim = 32;
    int hidden_dim = 64;
    int window = 8;
    int max_hist = 10;
};

int run_sft(const GlobalOpts& g, const SftOpts& o) {
    LoadedData data = load_data(o.data_dir);
    PolicyHyper hyper{0, o.embed_dim, o.hidden_dim, o.window};
    PolicyParams init = initial_params(o.init, data.corpus, hyper, g.seed);

    SftConfig cfg;
    cfg.epochs = o.epochs;
    cfg.lr = o.lr;
    cfg.batch_size = o.batch;
    cfg.seed = g.seed;
    cfg.max_hist = o.max_hist;

    SftResult result = sft_train(cfg, data.dataset, data.corpus, data.trie, std::move(init),
                                 g.threads);

    fs::create_directories(g.out_dir);
    const std::string ckpt_path = (fs::path(g.out_dir) / "checkpoint.json").string();
    const std::string loss_path = (fs::path(g.out_dir) / "loss_curve.csv").string();
    save_checkpoint(result.params, ckpt_path);
    {
        std::ofstream out(loss_path, std::ios::binary);
        out << "epoch,mean_loss\n";
        for (std::size_t e = 0; e < result.epoch_loss.size(); ++e) {
            out << e + 1 << ',' << format_double(result.epoch_loss[e]) << '\n';
        }
    }
    std::vector<std::string> inputs = {data.corpus_path, data.dataset_path};
    if (o.init != "none" && !o.init.empty()) inputs.push_back(o.init);
    write_manifest(g, "sft",
                   {{"epochs", std::to_string(o.epochs)},
                    {"lr", format_double(o.lr)},
                    {"batch_size", std::to_string(o.batch)},
                    {"embed_dim", std::to_string(o.embed_dim)},
                    {"hidden_dim", std::to_string(o.hidden_dim)},
                    {"window", std::to_string(o.window)},
                    {"max_hist", std::to_string(o.max_hist)},
                    {"init", o.init}},
                   inputs, {ckpt_path, loss_path});
    if (!result.epoch_loss.empty()) {
        std::cout << "final epoch loss " << format_double(result.epoch_loss.back()) << "\n";
    }
    std::cout << "checkpoint " << ckpt_path << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// train / sweep shared options

struct TrainCliOpts {
    std::string data_dir;
    std::string init = "none";
    std::string embeddings_path;
    std::string scores_path;
    int embed_dim = 32;
    int hidden_dim = 64;
    int window = 8;

    // TrainConfig mirrors; *_set flags track explicit CLI usage.
    TrainConfig cfg;
    std::string sampling, reward, objective, ratio_denominator, negative_source;
};

void add_train_config_flags(CLI::App* cmd, TrainCliOpts& o) {
    cmd->add_option("--G", o.cfg.G, "generations per prompt");
    cmd->add_option("--beta", o.cfg.beta, "KL penalty weight");
    cmd->add_option("--eps-clip", o.cfg.eps_clip, "clip range");
    cmd->add_option("--eps-low", o.cfg.eps_low, "lower clip (dapo)");
    cmd->add_option("--eps-high", o.cfg.eps_high, "upper clip (dapo)");
    cmd->add_option("--lr", o.cfg.lr, "learning rate");
    cmd->add_option("--batch-size", o.cfg.batch_size, "records per iteration");
    cmd->add_option("--epochs", o.cfg.epochs, "passes over the train split");
    cmd->add_option("--sampling", o.sampling, "beam|dynamic|common");
    cmd->add_option("--reward", o.reward, "rule|ranking|semantic|collab");
    cmd->add_option("--objective", o.objective, "grpo|dapo|gspo|dpo");
    cmd->add_option("--sync-alpha", o.cfg.sync_alpha, "reference EMA weight");
    cmd->add_option("--sync-every", o.cfg.sync_every, "iterations between reference syncs");
    cmd->add_option("--adv-eps", o.cfg.adv_eps, "zero-variance guard");
    cmd->add_option("--temperature", o.cfg.temperature, "sampling temperature");
    cmd->add_option("--overgen-factor", o.cfg.overgen_factor, "dynamic over-generation");
    cmd->add_option("--ratio-denominator", o.ratio_denominator, "old|ref");
    cmd->add_option("--beta-dpo", o.cfg.beta_dpo, "DPO temperature");
    cmd->add_option("--negative-source", o.negative_source, "random|ref");
    cmd->add_option("--max-hist", o.cfg.max_hist, "history truncation");
    cmd->add_option("--eval-every", o.cfg.eval_every, "iterations between validation evals");
    cmd->add_option("--eval-records", o.cfg.eval_records, "validation record cap");
    cmd->add_option("--checkpoint-every", o.cfg.checkpoint_every, "checkpoint interval");
}

// Resolution order: defaults < --config file < explicit flags.
TrainConfig resolve_train_config(const GlobalOpts& g, const CLI::App* cmd, TrainCliOpts& o) {
    TrainConfig cfg;
    if (!g.config_file.empty()) cfg = TrainConfig::from_file(g.config_file);

    auto used = [cmd](const std::string& name) { return cmd->count(name) > 0; };
    if (used("--G")) cfg.G = o.cfg.G;
    if (used("--beta")) cfg.beta = o.cfg.beta;
    if (used("--eps-clip")) cfg.eps_clip = o.cfg.eps_clip;
    if (used("--eps-low")) cfg.eps_low = o.cfg.eps_low;
    if (used("--eps-high")) cfg.eps_high = o.cfg.eps_high;
    if (used("--lr")) cfg.lr = o.cfg.lr;
    if (used("--batch-size")) cfg.batch_size = o.cfg.batch_size;
    if (used("--epochs")) cfg.epochs = o.cfg.epochs;
    if (used("--sampling")) cfg.sampling = sampling_from_name(o.sampling);
    if (used("--reward")) cfg.reward = reward_from_name(o.reward);
    if (used("--objective")) cfg.objective = objective_from_name(o.objective);
    if (used("--sync-alpha")) cfg.sync_alpha = o.cfg.sync_alpha;
    if (used("--sync-every")) cfg.sync_every = o.cfg.sync_every;
    if (used("--adv-eps")) cfg.adv_eps = o.cfg.adv_eps;
    if (used("--temperature")) cfg.temperature = o.cfg.temperature;
    if (used("--overgen-factor")) cfg.overgen_factor = o.cfg.overgen_factor;
    if (used("--ratio-denominator")) {
        cfg.ratio_denominator = ratio_denominator_from_name(o.ratio_denominator);
    }
    if (used("--beta-dpo")) cfg.beta_dpo = o.cfg.beta_dpo;
    if (used("--negative-source")) {
        cfg.negative_source = negative_source_from_name(o.negative_source);
    }
    if (used("--max-hist")) cfg.max_hist = o.cfg.max_hist;
    if (used("--eval-every")) cfg.eval_every = o.cfg.eval_every;
    if (used("--eval-records")) cfg.eval_records = o.cfg.eval_records;
    if (used("--checkpoint-every")) cfg.checkpoint_every = o.cfg.checkpoint_every;
    if (g.seed_set || cfg.seed == 0) cfg.seed = g.seed;
    cfg.validate();
    return cfg;
}

struct ProviderFiles {
    std::optional<EmbeddingTable> embeddings;
    std::optional<ScoreTable> scores;
    Providers providers;
    std::vector<std::string> inputs;
};

ProviderFiles load_providers(const TrainConfig& cfg, const TrainCliOpts& o,
                             const ItemCorpus& corpus) {
    ProviderFiles pf;
    if (cfg.reward == RewardMode::semantic) {
        if (o.embeddings_path.empty()) {
            throw ConfigError("--reward semantic requires --embeddings FILE");
        }
        pf.embeddings = EmbeddingTable::load(o.embeddings_path, corpus);
        pf.providers.embeddings = &*pf.embeddings;
        pf.inputs.push_back(o.embeddings_path);
    }
    if (cfg.reward == RewardMode::collab) {
        if (o.scores_path.empty()) {
            throw ConfigError("--reward collab requires --scores FILE");
        }
        pf.scores = ScoreTable::load(o.scores_path, corpus);
        pf.providers.scores = &*pf.scores;
        pf.inputs.push_back(o.scores_path);
    }
    return pf;
}

int run_train(const GlobalOpts& g, const CLI::App* cmd, TrainCliOpts& o) {
    TrainConfig cfg = resolve_train_config(g, cmd, o);
    LoadedData data = load_data(o.data_dir);
    ProviderFiles pf = load_providers(cfg, o, data.corpus);
    PolicyHyper hyper{0, o.embed_dim, o.hidden_dim, o.window};
    PolicyParams init = initial_params(o.init, data.corpus, hyper, cfg.seed);

    fs::create_directories(g.out_dir);
    const std::string ckpt_path = (fs::path(g.out_dir) / "checkpoint.json").string();
    const std::string metrics_csv = (fs::path(g.out_dir) / "metrics.csv").string();
    const std::string metrics_jsonl = (fs::path(g.out_dir) / "metrics.jsonl").string();
    const std::string config_path = (fs::path(g.out_dir) / "config.cfg").string();
    cfg.save(config_path);

    // Fires on the checkpoint_every schedule and right before an abort.
    CheckpointHook hook = [&](int iter, const PolicyParams& params) {
        save_checkpoint(params,
                        (fs::path(g.out_dir) / ("checkpoint_iter" + std::to_string(iter) +
                                                ".json")).string());
    };

    TrainResult result = train_loop(cfg, data.dataset, data.corpus, data.trie,
                                    std::move(init), pf.providers, g.threads, hook);

    save_checkpoint(result.params, ckpt_path);
    result.series.save_csv(metrics_csv);
    result.series.save_jsonl(metrics_jsonl);

    std::vector<std::string> inputs = {data.corpus_path, data.dataset_path};
    if (o.init != "none" && !o.init.empty()) inputs.push_back(o.init);
    for (const auto& p : pf.inputs) inputs.push_back(p);
    write_manifest(g, "train", cfg.to_kv(), inputs,
                   {ckpt_path, metrics_csv, metrics_jsonl, config_path});

    if (!result.series.rows.empty()) {
        const auto& last = result.series.rows.back();
        std::cout << "iterations " << last.iteration;
        if (!std::isnan(last.hr5)) {
            std::cout << "  valid HR@5 " << format_double(last.hr5) << "  NDCG@10 "
                      << format_double(last.ndcg10);
        }
        std::cout << "\n";
    }
    std::cout << "checkpoint " << ckpt_path << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// eval

struct EvalOpts {
    std::string data_dir;
    std::string ckpt;
    std::string split = "test";
    std::string ks = "3,5,10";
    int cap = 0;
    int max_hist = 10;
    std::string trace_beams;
};

int run_eval(const GlobalOpts& g, const EvalOpts& o) {
    LoadedData data = load_data(o.data_dir);
    PolicyParams params = load_checkpoint(o.ckpt);
    if (params.hyper.vocab_size != data.corpus.vocab_size()) {
        throw DataError("checkpoint vocabulary does not match the corpus");
    }
    std::vector<int> ks;
    {
        std::stringstream ss(o.ks);
        std::string part;
        while (std::getline(ss, part, ',')) ks.push_back(std::stoi(part));
    }

    if (!o.trace_beams.empty()) {
        // Debug dump: beam frontier trace for the first record of the split.
        const auto idx = data.dataset.indices_of(split_from_name(o.split));
        if (!idx.empty()) {
            const auto& rec = data.dataset.records[static_cast<std::size_t>(idx[0])];
            std::ofstream trace(o.trace_beams, std::ios::binary);
            beam_search(params, make_prompt(data.corpus, rec.history, o.max_hist),
                        *std::max_element(ks.begin(), ks.end()), data.trie, &trace);
        }
    }

    EvalReport report =
        evaluate_ranking(params, data.corpus, data.trie, data.dataset,
                         split_from_name(o.split), ks, o.cap, o.max_hist, g.threads);

    fs::create_directories(g.out_dir);
    const std::string json_path = (fs::path(g.out_dir) / "report.json").string();
    const std::string csv_path = (fs::path(g.out_dir) / "report.csv").string();
    report.save_json(json_path);
    report.save_csv(csv_path);
    write_manifest(g, "eval",
                   {{"split", o.split}, {"ks", o.ks}, {"cap", std::to_string(o.cap)}},
                   {data.corpus_path, data.dataset_path, o.ckpt}, {json_path, csv_path});

    for (int k : ks) {
        std::cout << "HR@" << k << ' ' << format_double(report.hr.at(k)) << "  NDCG@" << k
                  << ' ' << format_double(report.ndcg.at(k)) << "\n";
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------
// sweep

int run_sweep(const GlobalOpts& g, const CLI::App* cmd, TrainCliOpts& o,
              const std::string& axis, const std::string& values_csv) {
    TrainConfig base = resolve_train_config(g, cmd, o);
    LoadedData data = load_data(o.data_dir);

    std::vector<std::string> values;
    if (!values_csv.empty()) {
        std::stringstream ss(values_csv);
        std::string part;
        while (std::getline(ss, part, ',')) values.push_back(part);
    } else {
        values = default_axis_values(axis);
    }

    // Providers are loaded when any swept or base config needs them.
    bool needs_emb = base.reward == RewardMode::semantic;
    bool needs_scores = base.reward == RewardMode::collab;
    if (axis == "reward") {
        for (const auto& v : values) {
            needs_emb |= v == "semantic";
            needs_scores |= v == "collab";
        }
    }
    ProviderFiles pf;
    if (needs_emb) {
        if (o.embeddings_path.empty()) throw ConfigError("sweep needs --embeddings FILE");
        pf.embeddings = EmbeddingTable::load(o.embeddings_path, data.corpus);
        pf.providers.embeddings = &*pf.embeddings;
        pf.inputs.push_back(o.embeddings_path);
    }
    if (needs_scores) {
        if (o.scores_path.empty()) throw ConfigError("sweep needs --scores FILE");
        pf.scores = ScoreTable::load(o.scores_path, data.corpus);
        pf.providers.scores = &*pf.scores;
        pf.inputs.push_back(o.scores_path);
    }

    PolicyHyper hyper{0, o.embed_dim, o.hidden_dim, o.window};
    PolicyParams init = initial_params(o.init, data.corpus, hyper, base.seed);

    SweepResult result = sweep(axis, values, base, data.dataset, data.corpus, data.trie, init,
                               pf.providers, g.out_dir, g.threads);
    const std::string table_path = (fs::path(g.out_dir) / "sweep_table.csv").string();
    result.save_table_csv(table_path);

    std::vector<std::string> inputs = {data.corpus_path, data.dataset_path};
    for (const auto& p : pf.inputs) inputs.push_back(p);
    auto cfg_kv = base.to_kv();
    cfg_kv["sweep_axis"] = axis;
    write_manifest(g, "sweep", cfg_kv, inputs, {table_path});

    int failures = 0;
    for (const auto& run : result.runs) {
        std::cout << axis << '=' << run.value << (run.failed ? "  FAILED: " + run.error : "")
                  << "\n";
        failures += run.failed ? 1 : 0;
    }
    std::cout << "table " << table_path << "\n";
    return failures == static_cast<int>(result.runs.size()) && failures > 0 ? kExitGeneric
                                                                            : kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale generative recommender trained with verifiable rewards"};
    app.set_version_flag("--version", kVersion);
    app.fallthrough(true);
    app.require_subcommand(1);

    GlobalOpts g;
    app.add_option("--config", g.config_file, "key=value config file");
    auto* seed_opt = app.add_option("--seed", g.seed, "master seed");
    app.add_option("--out", g.out_dir, "run directory");
    app.add_option("--threads", g.threads, "worker threads");

    GenDataOpts gen;
    auto* cmd_gen = app.add_subcommand("gen-data", "generate a synthetic corpus and dataset");
    cmd_gen->add_option("--items", gen.items, "corpus size");
    cmd_gen->add_option("--users", gen.users, "record count");
    cmd_gen->add_option("--noise", gen.noise, "transition noise probability");
    cmd_gen->add_option("--sharpness", gen.sharpness, "first-item popularity skew");
    cmd_gen->add_option("--min-hist", gen.min_hist, "minimum history length");
    cmd_gen->add_option("--max-hist-len", gen.max_hist_len, "maximum history length");
    cmd_gen->add_option("--ratios", gen.ratios, "train,valid,test ratio");
    cmd_gen->add_option("--embeddings", gen.embeddings, "none|random|clustered fixture");
    cmd_gen->add_option("--emb-dim", gen.emb_dim, "random embedding dimension");
    cmd_gen->add_option("--emb-clusters", gen.emb_clusters, "clustered embedding clusters");
    cmd_gen->add_option("--scores", gen.scores, "none|oracle|decoy fixture");

    SftOpts sft;
    auto* cmd_sft = app.add_subcommand("sft", "supervised warm-start training");
    cmd_sft->add_option("--data", sft.data_dir, "data directory")->required();
    cmd_sft->add_option("--init", sft.init, "initial checkpoint or 'none'");
    cmd_sft->add_option("--epochs", sft.epochs, "epochs");
    cmd_sft->add_option("--lr", sft.lr, "learning rate");
    cmd_sft->add_option("--batch-size", sft.batch, "records per step");
    cmd_sft->add_option("--embed-dim", sft.embed_dim, "embedding dimension");
    cmd_sft->add_option("--hidden-dim", sft.hidden_dim, "hidden layer width");
    cmd_sft->add_option("--window", sft.window, "context window");
    cmd_sft->add_option("--max-hist", sft.max_hist, "history truncation");

    TrainCliOpts train_opts;
    auto* cmd_train = app.add_subcommand("train", "reinforcement training");
    cmd_train->add_option("--data", train_opts.data_dir, "data directory")->required();
    cmd_train->add_option("--init", train_opts.init, "initial checkpoint or 'none'");
    cmd_train->add_option("--embeddings", train_opts.embeddings_path, "embedding TSV");
    cmd_train->add_option("--scores", train_opts.scores_path, "score TSV");
    cmd_train->add_option("--embed-dim", train_opts.embed_dim, "embedding dimension");
    cmd_train->add_option("--hidden-dim", train_opts.hidden_dim, "hidden layer width");
    cmd_train->add_option("--window", train_opts.window, "context window");
    add_train_config_flags(cmd_train, train_opts);

    EvalOpts eval_opts;
    auto* cmd_eval = app.add_subcommand("eval", "ranking evaluation of a checkpoint");
    cmd_eval->add_option("--data", eval_opts.data_dir, "data directory")->required();
    cmd_eval->add_option("--ckpt", eval_opts.ckpt, "checkpoint path")->required();
    cmd_eval->add_option("--split", eval_opts.split, "train|valid|test");
    cmd_eval->add_option("--ks", eval_opts.ks, "comma-separated cutoffs");
    cmd_eval->add_option("--cap", eval_opts.cap, "record cap (0 = all)");
    cmd_eval->add_option("--max-hist", eval_opts.max_hist, "history truncation");
    cmd_eval->add_option("--trace-beams", eval_opts.trace_beams,
                         "JSONL beam frontier dump for the first record");

    TrainCliOpts sweep_opts;
    std::string sweep_axis, sweep_values;
    auto* cmd_sweep = app.add_subcommand("sweep", "train+eval across one config axis");
    cmd_sweep->add_option("--data", sweep_opts.data_dir, "data directory")->required();
    cmd_sweep->add_option("--axis", sweep_axis, "G|beta|sampling|reward|objective")->required();
    cmd_sweep->add_option("--values", sweep_values, "override axis values (comma-separated)");
    cmd_sweep->add_option("--init", sweep_opts.init, "initial checkpoint or 'none'");
    cmd_sweep->add_option("--embeddings", sweep_opts.embeddings_path, "embedding TSV");
    cmd_sweep->add_option("--scores", sweep_opts.scores_path, "score TSV");
    cmd_sweep->add_option("--embed-dim", sweep_opts.embed_dim, "embedding dimension");
    cmd_sweep->add_option("--hidden-dim", sweep_opts.hidden_dim, "hidden layer width");
    cmd_sweep->add_option("--window", sweep_opts.window, "context window");
    add_train_config_flags(cmd_sweep, sweep_opts);

    std::string report_run;
    auto* cmd_report = app.add_subcommand("report", "render SVG charts for a run or sweep");
    cmd_report->add_option("--run", report_run, "run or sweep directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    }
    g.seed_set = seed_opt->count() > 0;

    try {
        if (cmd_gen->parsed()) return run_gen_data(g, gen);
        if (cmd_sft->parsed()) return run_sft(g, sft);
        if (cmd_train->parsed()) return run_train(g, cmd_train, train_opts);
        if (cmd_eval->parsed()) return run_eval(g, eval_opts);
        if (cmd_sweep->parsed()) return run_sweep(g, cmd_sweep, sweep_opts, sweep_axis,
                                                  sweep_values);
        if (cmd_report->parsed()) {
            const bool is_sweep = fs::exists(fs::path(report_run) / "sweep_table.csv");
            if (is_sweep) {
                write_sweep_report(report_run, g.out_dir);
            } else {
                write_run_report(report_run, g.out_dir);
            }
            write_manifest(g, "report", {{"run", report_run}}, {}, {});
            std::cout << "charts in " << g.out_dir << "\n";
            return kExitOk;
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitGeneric;
    }
    return kExitGeneric;
}
