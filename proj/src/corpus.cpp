#include "recrl/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

namespace recrl {

namespace {

std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> words;
    std::string cur;
    for (char ch : text) {
        if (ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r') {
            if (!cur.empty()) {
                words.push_back(cur);
                cur.clear();
            }
        } else {
            cur.push_back(ch);
        }
    }
    if (!cur.empty()) words.push_back(cur);
    return words;
}

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file: " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    return lines;
}

std::vector<std::string> split_tabs(const std::string& line) {
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
    return fields;
}

}  // namespace

ItemCorpus ItemCorpus::from_titles(const std::vector<std::string>& titles) {
    if (titles.empty()) throw DataError("corpus must contain at least one item");

    ItemCorpus corpus;
    corpus.vocab_ = {"[BOS]", "[EOS]", "[SEP]"};

    // Deterministic vocabulary: reserved ids, then all words sorted.
    std::set<std::string> words;
    for (const auto& t : titles) {
        for (auto& w : split_words(t)) words.insert(w);
    }
    for (const auto& w : words) {
        corpus.word_ids_[w] = static_cast<Token>(corpus.vocab_.size());
        corpus.vocab_.push_back(w);
    }

    std::map<std::vector<Token>, int> seen;
    for (std::size_t i = 0; i < titles.size(); ++i) {
        const std::string& text = titles[i];
        std::vector<Token> toks = corpus.tokenize(text);
        if (toks.size() < 2) {
            throw DataError("item " + std::to_string(i) + " has an empty title");
        }
        if (corpus.detokenize(toks) != text) {
            throw DataError("item " + std::to_string(i) +
                            " does not round-trip through the tokenizer: '" + text + "'");
        }
        auto [it, inserted] = seen.emplace(toks, static_cast<int>(i));
        if (!inserted) {
            throw DataError("duplicate tokenized title between items " +
                            std::to_string(it->second) + " and " + std::to_string(i) +
                            ": '" + text + "'");
        }
        corpus.items_.push_back(ItemTitle{static_cast<int>(i), std::move(toks), text});
    }
    return corpus;
}

ItemCorpus ItemCorpus::load(const std::string& path) {
    std::vector<std::string> titles;
    int expected = 0;
    for (const auto& line : read_lines(path)) {
        if (line.empty()) continue;
        auto fields = split_tabs(line);
        if (fields.size() != 2) throw DataError("malformed corpus line: '" + line + "'");
        int id = std::stoi(fields[0]);
        if (id != expected) {
            throw DataError("corpus item ids must be consecutive from 0; got " + fields[0]);
        }
        ++expected;
        titles.push_back(fields[1]);
    }
    return from_titles(titles);
}

void ItemCorpus::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write file: " + path);
    for (const auto& it : items_) {
        out << it.item_id << '\t' << it.text << '\n';
    }
}

const ItemTitle& ItemCorpus::item(int item_id) const {
    if (item_id < 0 || item_id >= size()) {
        throw DataError("unknown item id: " + std::to_string(item_id));
    }
    return items_[static_cast<std::size_t>(item_id)];
}

const std::string& ItemCorpus::token_text(Token t) const {
    if (t < 0 || t >= vocab_size()) throw DataError("unknown token id: " + std::to_string(t));
    return vocab_[static_cast<std::size_t>(t)];
}

std::vector<Token> ItemCorpus::tokenize(const std::string& text) const {
    std::vector<Token> toks;
    for (const auto& w : split_words(text)) {
        auto it = word_ids_.find(w);
        if (it == word_ids_.end()) throw DataError("word not in vocabulary: '" + w + "'");
        toks.push_back(it->second);
    }
    toks.push_back(kEos);
    return toks;
}

std::string ItemCorpus::detokenize(std::span<const Token> tokens) const {
    std::string text;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        Token t = tokens[i];
        if (t == kEos && i + 1 == tokens.size()) break;
        if (t < kReservedTokens) {
            throw DataError("reserved token inside a title sequence");
        }
        if (!text.empty()) text.push_back(' ');
        text += token_text(t);
    }
    return text;
}

TitleTrie TitleTrie::build(const ItemCorpus& corpus) {
    TitleTrie trie;
    trie.nodes_.emplace_back();
    for (const auto& item : corpus.items()) {
        int node = kRoot;
        for (Token t : item.tokens) {
            auto& edges = trie.nodes_[static_cast<std::size_t>(node)].edges;
            auto it = std::find_if(edges.begin(), edges.end(),
                                   [t](const auto& e) { return e.first == t; });
            if (it == edges.end()) {
                int child = static_cast<int>(trie.nodes_.size());
                edges.emplace_back(t, child);
                trie.nodes_.emplace_back();
                node = child;
            } else {
                node = it->second;
            }
        }
        auto& terminal = trie.nodes_[static_cast<std::size_t>(node)];
        if (terminal.item_id != -1) {
            // Corpus construction already rejects duplicates; keep the check anyway.
            throw DataError("duplicate tokenized title between items " +
                            std::to_string(terminal.item_id) + " and " +
                            std::to_string(item.item_id) + ": '" + item.text + "'");
        }
        terminal.item_id = item.item_id;
        ++trie.title_count_;
        trie.max_title_len_ = std::max(trie.max_title_len_, static_cast<int>(item.tokens.size()));
    }
    for (auto& node : trie.nodes_) {
        std::sort(node.edges.begin(), node.edges.end());
        node.next.reserve(node.edges.size());
        for (const auto& [tok, child] : node.edges) node.next.push_back(tok);
    }
    return trie;
}

int TitleTrie::step(int node, Token token) const {
    const auto& edges = nodes_[static_cast<std::size_t>(node)].edges;
    auto it = std::lower_bound(edges.begin(), edges.end(), token,
                               [](const auto& e, Token t) { return e.first < t; });
    if (it == edges.end() || it->first != token) return -1;
    return it->second;
}

int TitleTrie::walk(std::span<const Token> prefix) const {
    int node = kRoot;
    for (Token t : prefix) {
        node = step(node, t);
        if (node < 0) return -1;
    }
    return node;
}

const std::vector<Token>& TitleTrie::continuations(int node) const {
    return nodes_[static_cast<std::size_t>(node)].next;
}

std::vector<Token> TitleTrie::valid_next(std::span<const Token> prefix) const {
    int node = walk(prefix);
    if (node < 0) return {};
    return nodes_[static_cast<std::size_t>(node)].next;
}

int TitleTrie::accepted_item(std::span<const Token> seq) const {
    if (seq.empty() || seq.back() != kEos) return -1;
    int node = walk(seq);
    if (node < 0) return -1;
    return nodes_[static_cast<std::size_t>(node)].item_id;
}

int TitleTrie::item_at(int node) const {
    return nodes_[static_cast<std::size_t>(node)].item_id;
}

const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::valid: return "valid";
        case Split::test: return "test";
    }
    return "train";
}

Split split_from_name(const std::string& name) {
    if (name == "train") return Split::train;
    if (name == "valid") return Split::valid;
    if (name == "test") return Split::test;
    throw DataError("unknown split tag: '" + name + "'");
}

std::vector<int> InteractionDataset::indices_of(Split s) const {
    std::vector<int> idx;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (records[i].split == s) idx.push_back(static_cast<int>(i));
    }
    return idx;
}

InteractionDataset InteractionDataset::load(const std::string& path, const ItemCorpus& corpus) {
    InteractionDataset ds;
    int order = 0;
    for (const auto& line : read_lines(path)) {
        if (line.empty()) continue;
        auto fields = split_tabs(line);
        if (fields.size() != 4) throw DataError("malformed dataset line: '" + line + "'");
        InteractionRecord rec;
        rec.user_id = std::stoi(fields[0]);
        std::stringstream hist(fields[1]);
        std::string part;
        while (std::getline(hist, part, ',')) {
            if (part.empty()) continue;
            rec.history.push_back(std::stoi(part));
        }
        rec.target = std::stoi(fields[2]);
        rec.split = split_from_name(fields[3]);
        rec.order_index = order++;
        if (rec.history.empty()) throw DataError("record with empty history: '" + line + "'");
        for (int id : rec.history) corpus.item(id);
        corpus.item(rec.target);
        ds.records.push_back(std::move(rec));
    }
    return ds;
}

void InteractionDataset::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write file: " + path);
    for (const auto& rec : records) {
        out << rec.user_id << '\t';
        for (std::size_t i = 0; i < rec.history.size(); ++i) {
            if (i) out << ',';
            out << rec.history[i];
        }
        out << '\t' << rec.target << '\t' << split_name(rec.split) << '\n';
    }
}

void split_chrono(InteractionDataset& dataset, int train_ratio, int valid_ratio, int test_ratio) {
    const std::size_t n = dataset.records.size();
    if (n < 3) throw DataError("chronological split needs at least 3 records");
    if (train_ratio <= 0 || valid_ratio <= 0 || test_ratio <= 0) {
        throw ConfigError("split ratios must be positive");
    }
    std::vector<int> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<int>(i);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        return dataset.records[static_cast<std::size_t>(a)].order_index <
               dataset.records[static_cast<std::size_t>(b)].order_index;
    });
    const double total = train_ratio + valid_ratio + test_ratio;
    const std::size_t n_train = static_cast<std::size_t>(std::floor(n * train_ratio / total));
    const std::size_t n_valid = static_cast<std::size_t>(std::floor(n * valid_ratio / total));
    for (std::size_t pos = 0; pos < n; ++pos) {
        auto& rec = dataset.records[static_cast<std::size_t>(order[pos])];
        if (pos < n_train) {
            rec.split = Split::train;
        } else if (pos < n_train + n_valid) {
            rec.split = Split::valid;
        } else {
            rec.split = Split::test;
        }
    }
}

Prompt make_prompt(const ItemCorpus& corpus, std::span<const int> history, int max_hist) {
    if (history.empty()) throw DataError("prompt requires a nonempty history");
    if (max_hist < 1) throw ConfigError("max_hist must be >= 1");
    const std::size_t keep = std::min(history.size(), static_cast<std::size_t>(max_hist));
    Prompt p;
    p.tokens.push_back(kBos);
    for (std::size_t i = history.size() - keep; i < history.size(); ++i) {
        const ItemTitle& item = corpus.item(history[i]);
        for (Token t : item.tokens) {
            if (t == kEos) break;
            p.tokens.push_back(t);
        }
        p.tokens.push_back(kSep);
    }
    return p;
}

double SyntheticRule::oracle_hr_at_k(int k) const {
    const double n = static_cast<double>(n_items());
    if (k >= n_items()) return 1.0;
    return (1.0 - noise_prob) + static_cast<double>(k) * noise_prob / n;
}

SyntheticRule SyntheticRule::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open rule sidecar: " + path);
    nlohmann::json j;
    in >> j;
    SyntheticRule rule;
    rule.transition = j.at("transition").get<std::vector<int>>();
    rule.noise_prob = j.at("noise_prob").get<double>();
    rule.transition_sharpness = j.value("transition_sharpness", 1.0);
    rule.seed = j.value("seed", std::uint64_t{0});
    return rule;
}

void SyntheticRule::save(const std::string& path) const {
    nlohmann::json j;
    j["transition"] = transition;
    j["noise_prob"] = noise_prob;
    j["transition_sharpness"] = transition_sharpness;
    j["seed"] = seed;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write rule sidecar: " + path);
    out << j.dump(2) << '\n';
}

namespace {

// Word pools for synthetic titles. The three slots are disjoint so a title's
// word multiset identifies it even under order-insensitive pooling.
const std::vector<std::string>& adjective_pool() {
    static const std::vector<std::string> v = {
        "amber",  "arctic", "bold",   "brass",  "bright", "bronze", "calm",   "cedar",
        "cobalt", "copper", "coral",  "crimson","dapper", "dusty",  "ebony",  "fabled",
        "frosty", "gilded", "golden", "hazel",  "indigo", "ivory",  "jade",   "keen",
        "lively", "lunar",  "maple",  "mellow", "mighty", "misty",  "noble",  "ochre",
        "olive",  "onyx",   "pale",   "plush",  "quartz", "quiet",  "rustic", "sable",
        "scarlet","silver", "sleek",  "solar",  "sturdy", "teal",   "velvet", "vivid",
    };
    return v;
}

const std::vector<std::string>& noun_pool() {
    static const std::vector<std::string> v = {
        "anchor", "badge",  "basket", "beacon", "bell",   "binder", "bottle", "box",
        "brush",  "buckle", "cable",  "candle", "canvas", "carton", "chair",  "chest",
        "clamp",  "clock",  "compass","crate",  "cushion","desk",   "easel",  "flask",
        "frame",  "gadget", "globe",  "hamper", "hinge",  "hook",   "journal","kettle",
        "ladder", "lamp",   "lantern","ledger", "locket", "mallet", "mirror", "mug",
        "pedal",  "pouch",  "prism",  "rack",   "satchel","stool",  "tray",   "trunk",
    };
    return v;
}

const std::vector<std::string>& variant_pool() {
    static const std::vector<std::string> v = {
        "classic", "compact", "deluxe", "duo",    "edition", "elite",  "grande", "junior",
        "kit",     "max",     "mini",   "plus",   "pro",     "set",    "trio",   "ultra",
        "varsity", "vintage", "works",  "xl",     "yearly",  "zen",    "prime",  "nova",
    };
    return v;
}

std::vector<std::string> make_titles(int n_items, Rng& rng) {
    const auto& adj = adjective_pool();
    const auto& noun = noun_pool();
    const auto& var = variant_pool();
    std::set<std::string> seen;
    std::vector<std::string> titles;
    titles.reserve(static_cast<std::size_t>(n_items));
    const std::size_t capacity = adj.size() * noun.size() * (1 + var.size());
    if (static_cast<std::size_t>(n_items) > capacity) {
        throw ConfigError("n_items exceeds the synthetic title capacity of " +
                          std::to_string(capacity));
    }
    while (titles.size() < static_cast<std::size_t>(n_items)) {
        std::string t = adj[rng.index(adj.size())] + " " + noun[rng.index(noun.size())];
        if (rng.next_double() < 0.5) t += " " + var[rng.index(var.size())];
        if (seen.insert(t).second) titles.push_back(t);
    }
    return titles;
}

}  // namespace

SyntheticData gen_synthetic(const SyntheticConfig& cfg) {
    if (cfg.n_items < 2) throw ConfigError("gen_synthetic: n_items must be >= 2");
    if (cfg.n_users < 1) throw ConfigError("gen_synthetic: n_users must be >= 1");
    if (cfg.noise_prob < 0.0 || cfg.noise_prob >= 1.0) {
        throw ConfigError("gen_synthetic: noise_prob must be in [0, 1)");
    }
    if (cfg.transition_sharpness < 0.0) {
        throw ConfigError("gen_synthetic: transition_sharpness must be >= 0");
    }
    if (cfg.min_hist_len < 1 || cfg.max_hist_len < cfg.min_hist_len) {
        throw ConfigError("gen_synthetic: invalid history length range");
    }

    Rng rng(cfg.seed);
    SyntheticData data;
    data.corpus = ItemCorpus::from_titles(make_titles(cfg.n_items, rng));

    // Transition rule: a random permutation keeps every item reachable and the
    // noise-free chain non-degenerate.
    SyntheticRule rule;
    rule.noise_prob = cfg.noise_prob;
    rule.transition_sharpness = cfg.transition_sharpness;
    rule.seed = cfg.seed;
    rule.transition.resize(static_cast<std::size_t>(cfg.n_items));
    for (int i = 0; i < cfg.n_items; ++i) rule.transition[static_cast<std::size_t>(i)] = i;
    rng.shuffle(rule.transition);

    // First-item popularity: p(i) proportional to 1/rank^sharpness over a
    // shuffled popularity order; sharpness 0 is uniform.
    std::vector<int> pop_order(static_cast<std::size_t>(cfg.n_items));
    for (int i = 0; i < cfg.n_items; ++i) pop_order[static_cast<std::size_t>(i)] = i;
    rng.shuffle(pop_order);
    std::vector<double> start_cdf(static_cast<std::size_t>(cfg.n_items));
    double mass = 0.0;
    for (int r = 0; r < cfg.n_items; ++r) {
        mass += std::pow(static_cast<double>(r + 1), -cfg.transition_sharpness);
        start_cdf[static_cast<std::size_t>(r)] = mass;
    }
    auto draw_start = [&]() {
        double u = rng.next_double() * mass;
        auto it = std::lower_bound(start_cdf.begin(), start_cdf.end(), u);
        std::size_t r = std::min(static_cast<std::size_t>(it - start_cdf.begin()),
                                 start_cdf.size() - 1);
        return pop_order[r];
    };

    auto next_item = [&](int cur) {
        if (rng.next_double() < 1.0 - cfg.noise_prob) {
            return rule.transition[static_cast<std::size_t>(cur)];
        }
        return static_cast<int>(rng.index(static_cast<std::size_t>(cfg.n_items)));
    };

    for (int u = 0; u < cfg.n_users; ++u) {
        InteractionRecord rec;
        rec.user_id = u;
        rec.order_index = u;
        const int len = rng.uniform_int(cfg.min_hist_len, cfg.max_hist_len);
        int cur = draw_start();
        rec.history.push_back(cur);
        for (int t = 1; t < len; ++t) {
            cur = next_item(cur);
            rec.history.push_back(cur);
        }
        rec.target = next_item(cur);
        data.dataset.records.push_back(std::move(rec));
    }
    data.rule = rule;
    return data;
}

}  // namespace recrl
