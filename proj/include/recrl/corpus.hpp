#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "recrl/common.hpp"

namespace recrl {

using Token = std::int32_t;

// Reserved token ids, fixed at vocabulary build time.
inline constexpr Token kBos = 0;  // prompt start
inline constexpr Token kEos = 1;  // end of title
inline constexpr Token kSep = 2;  // history separator
inline constexpr int kReservedTokens = 3;

struct ItemTitle {
    int item_id = -1;
    std::vector<Token> tokens;  // word tokens followed by exactly one trailing kEos
    std::string text;
};

// The item universe plus its word-level vocabulary. Immutable after
// construction; safe for concurrent reads.
class ItemCorpus {
public:
    // Builds from title strings; item ids are assigned by position.
    // Titles must round-trip through the whitespace tokenizer (single spaces,
    // no leading/trailing whitespace) and tokenize to distinct sequences.
    static ItemCorpus from_titles(const std::vector<std::string>& titles);

    // Corpus file: one `item_id<TAB>title text` line per item, UTF-8, LF.
    static ItemCorpus load(const std::string& path);
    void save(const std::string& path) const;

    int size() const { return static_cast<int>(items_.size()); }
    int vocab_size() const { return static_cast<int>(vocab_.size()); }
    const ItemTitle& item(int item_id) const;
    const std::vector<ItemTitle>& items() const { return items_; }
    const std::string& token_text(Token t) const;

    // Word tokens of `text` plus trailing kEos; unknown word -> DataError.
    std::vector<Token> tokenize(const std::string& text) const;
    // Inverse of tokenize: joins word tokens with single spaces, ignoring a
    // trailing kEos. Reserved tokens inside the sequence -> DataError.
    std::string detokenize(std::span<const Token> tokens) const;

private:
    std::vector<ItemTitle> items_;
    std::vector<std::string> vocab_;  // index == Token id; [0..2] reserved
    std::unordered_map<std::string, Token> word_ids_;
};

// Prefix map over the title token sequences: node-based trie where every
// root-to-EOS path spells exactly one corpus title.
class TitleTrie {
public:
    static constexpr int kRoot = 0;

    static TitleTrie build(const ItemCorpus& corpus);

    // One-token walk; -1 when `token` does not continue any title from `node`.
    int step(int node, Token token) const;
    // Walks a whole prefix from the root; -1 when invalid.
    int walk(std::span<const Token> prefix) const;
    // Valid continuation tokens at a node, ascending token order.
    const std::vector<Token>& continuations(int node) const;
    // Map lookup by prefix. Empty result iff the prefix is not a proper prefix
    // of any title (including complete titles, which have no continuation).
    std::vector<Token> valid_next(std::span<const Token> prefix) const;
    // Item id when `seq` is exactly a corpus title (ending in kEos), else -1.
    int accepted_item(std::span<const Token> seq) const;
    // Item id recorded at an EOS-terminal node, else -1.
    int item_at(int node) const;

    int node_count() const { return static_cast<int>(nodes_.size()); }
    int title_count() const { return title_count_; }
    int max_title_len() const { return max_title_len_; }

private:
    struct Node {
        std::vector<std::pair<Token, int>> edges;  // sorted by token
        std::vector<Token> next;                   // continuation tokens, sorted
        int item_id = -1;
    };
    std::vector<Node> nodes_;
    int title_count_ = 0;
    int max_title_len_ = 0;
};

enum class Split { train, valid, test };

const char* split_name(Split s);
Split split_from_name(const std::string& name);

struct InteractionRecord {
    int user_id = -1;
    std::vector<int> history;  // chronological item ids, oldest first
    int target = -1;
    Split split = Split::train;
    int order_index = 0;  // generation order, used by the chronological split
};

struct InteractionDataset {
    std::vector<InteractionRecord> records;

    std::vector<int> indices_of(Split s) const;

    // Dataset file: `user_id<TAB>h1,h2,...<TAB>target<TAB>split` per record.
    static InteractionDataset load(const std::string& path, const ItemCorpus& corpus);
    void save(const std::string& path) const;
};

// Tags records by order_index: earliest ratios[0] parts -> train, next
// ratios[1] -> valid, remainder -> test. Counts match the ratios within 1.
void split_chrono(InteractionDataset& dataset, int train_ratio = 8, int valid_ratio = 1, int test_ratio = 1);

struct Prompt {
    std::vector<Token> tokens;  // kBos, then history titles separated by kSep, then kSep
};

// Encodes the last max_hist history items. Unknown item id -> DataError.
Prompt make_prompt(const ItemCorpus& corpus, std::span<const int> history, int max_hist = 10);

// The generating process behind a synthetic dataset: next item follows
// transition[last] with probability 1-noise_prob, else uniform. Stored as a
// JSON sidecar so evaluation can compute the best achievable hit rate.
struct SyntheticRule {
    std::vector<int> transition;
    double noise_prob = 0.0;
    double transition_sharpness = 1.0;
    std::uint64_t seed = 0;

    int n_items() const { return static_cast<int>(transition.size()); }
    // Hit rate of the best possible top-k list (leads with transition[last]).
    double oracle_hr_at_k(int k) const;

    static SyntheticRule load(const std::string& path);
    void save(const std::string& path) const;
};

struct SyntheticConfig {
    int n_items = 100;
    int n_users = 2000;
    double transition_sharpness = 1.0;  // skew of the first-item popularity distribution
    double noise_prob = 0.2;
    std::uint64_t seed = 1;
    int min_hist_len = 3;
    int max_hist_len = 12;
};

struct SyntheticData {
    ItemCorpus corpus;
    InteractionDataset dataset;
    SyntheticRule rule;
};

// Generates distinct multi-word titles and Markov interaction histories,
// fully reproducible from the seed. One record per user; records are not
// split (callers run split_chrono).
SyntheticData gen_synthetic(const SyntheticConfig& cfg);

}  // namespace recrl
