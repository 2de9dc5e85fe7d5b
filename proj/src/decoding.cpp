#include "recrl/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <set>
#include <unordered_set>

#include <json.hpp>

namespace recrl {

const char* sampling_name(SamplingStrategy s) {
    switch (s) {
        case SamplingStrategy::beam: return "beam";
        case SamplingStrategy::dynamic: return "dynamic";
        case SamplingStrategy::common: return "common";
    }
    return "beam";
}

SamplingStrategy sampling_from_name(const std::string& name) {
    if (name == "beam") return SamplingStrategy::beam;
    if (name == "dynamic") return SamplingStrategy::dynamic;
    if (name == "common") return SamplingStrategy::common;
    throw ConfigError("unknown sampling strategy: '" + name + "'");
}

namespace {

struct Beam {
    std::vector<Token> tokens;
    int node = TitleTrie::kRoot;
    double score = 0.0;  // cumulative constrained log-prob
    bool finished = false;
};

// Score descending, then shorter sequence, then ascending token order.
bool beam_before(const Beam& a, const Beam& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.tokens.size() != b.tokens.size()) return a.tokens.size() < b.tokens.size();
    return std::lexicographical_compare(a.tokens.begin(), a.tokens.end(),
                                        b.tokens.begin(), b.tokens.end());
}

void dump_frontier(std::ostream& trace, int step, const std::vector<Beam>& beams) {
    nlohmann::json j;
    j["step"] = step;
    auto& arr = j["beams"] = nlohmann::json::array();
    for (const Beam& b : beams) {
        arr.push_back({{"tokens", b.tokens}, {"score", b.score}, {"finished", b.finished}});
    }
    trace << j.dump() << '\n';
}

}  // namespace

GenerationGroup beam_search(const PolicyParams& params,
                            const Prompt& prompt,
                            int beam_width,
                            const TitleTrie& trie,
                            std::ostream* trace) {
    if (beam_width < 1) throw ConfigError("beam width must be >= 1");
    if (beam_width > trie.title_count()) {
        throw ConfigError("beam width " + std::to_string(beam_width) +
                          " exceeds the corpus size of " + std::to_string(trie.title_count()));
    }

    std::vector<Beam> frontier;
    frontier.push_back(Beam{});

    int step_index = 0;
    bool any_active = true;
    while (any_active) {
        if (step_index > trie.max_title_len() + 1) {
            throw NumericError("beam search failed to terminate");
        }
        std::vector<Beam> candidates;
        for (const Beam& beam : frontier) {
            if (beam.finished) {
                candidates.push_back(beam);
                continue;
            }
            const auto& valid = trie.continuations(beam.node);
            if (valid.empty()) {
                // Unreachable for a well-formed trie: every prefix extends.
                throw DataError("trie prefix with no continuation");
            }
            auto ctx = make_context(prompt.tokens, beam.tokens, params.hyper.window);
            const auto logps = valid_token_logprobs(params, ctx, valid);
            for (std::size_t i = 0; i < valid.size(); ++i) {
                Beam next = beam;
                next.tokens.push_back(valid[i]);
                next.node = trie.step(beam.node, valid[i]);
                next.score += logps[i];
                next.finished = (valid[i] == kEos);
                candidates.push_back(std::move(next));
            }
        }
        std::sort(candidates.begin(), candidates.end(), beam_before);
        if (candidates.size() > static_cast<std::size_t>(beam_width)) {
            candidates.resize(static_cast<std::size_t>(beam_width));
        }
        frontier = std::move(candidates);
        any_active = std::any_of(frontier.begin(), frontier.end(),
                                 [](const Beam& b) { return !b.finished; });
        if (trace) dump_frontier(*trace, step_index, frontier);
        ++step_index;
    }

    GenerationGroup group;
    group.prompt = prompt.tokens;
    group.strategy = SamplingStrategy::beam;
    group.entries.reserve(frontier.size());
    for (const Beam& b : frontier) {
        const int item = trie.item_at(b.node);
        if (item < 0) throw DataError("finished beam does not spell a corpus title");
        group.entries.push_back(Generation{item, b.score});
    }
    return group;
}

namespace {

Generation sample_one(const PolicyParams& params,
                      const Prompt& prompt,
                      double temperature,
                      const TitleTrie& trie,
                      Rng& rng) {
    std::vector<Token> prefix;
    int node = TitleTrie::kRoot;
    double logprob = 0.0;
    while (true) {
        const auto& valid = trie.continuations(node);
        if (valid.empty()) throw DataError("trie prefix with no continuation");
        auto ctx = make_context(prompt.tokens, prefix, params.hyper.window);
        const auto logps = valid_token_logprobs(params, ctx, valid);

        std::size_t pick = 0;
        if (temperature == 0.0) {
            // Greedy mode: argmax, ties to the lowest token id (valid is sorted).
            for (std::size_t i = 1; i < logps.size(); ++i) {
                if (logps[i] > logps[pick]) pick = i;
            }
        } else {
            // Masked softmax at the sampling temperature; the stored log-prob
            // stays at temperature 1 so ranks reflect generation probability.
            std::vector<double> w(logps.size());
            double max_l = -std::numeric_limits<double>::infinity();
            for (std::size_t i = 0; i < logps.size(); ++i) {
                w[i] = logps[i] / temperature;
                max_l = std::max(max_l, w[i]);
            }
            double total = 0.0;
            for (double& x : w) {
                x = std::exp(x - max_l);
                total += x;
            }
            const double u = rng.next_double() * total;
            double acc = 0.0;
            pick = w.size() - 1;
            for (std::size_t i = 0; i < w.size(); ++i) {
                acc += w[i];
                if (u < acc) {
                    pick = i;
                    break;
                }
            }
        }

        const Token chosen = valid[pick];
        logprob += logps[pick];
        node = trie.step(node, chosen);
        prefix.push_back(chosen);
        if (chosen == kEos) {
            const int item = trie.item_at(node);
            if (item < 0) throw DataError("sampled sequence is not a corpus title");
            return Generation{item, logprob};
        }
    }
}

}  // namespace

GenerationGroup common_sample(const PolicyParams& params,
                              const Prompt& prompt,
                              int count,
                              double temperature,
                              const TitleTrie& trie,
                              Rng& rng) {
    if (count < 1) throw ConfigError("sample count must be >= 1");
    if (temperature < 0.0) throw ConfigError("temperature must be >= 0");
    GenerationGroup group;
    group.prompt = prompt.tokens;
    group.strategy = SamplingStrategy::common;
    group.entries.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        group.entries.push_back(sample_one(params, prompt, temperature, trie, rng));
    }
    return group;
}

GenerationGroup dynamic_sample(const PolicyParams& params,
                               const Prompt& prompt,
                               int count,
                               int target_item,
                               double temperature,
                               const TitleTrie& trie,
                               Rng& rng,
                               double overgen_factor) {
    if (count < 1) throw ConfigError("sample count must be >= 1");
    if (overgen_factor < 1.0) throw ConfigError("overgen_factor must be >= 1");
    const int over = std::max(count, static_cast<int>(std::floor(count * overgen_factor)));

    GenerationGroup drawn = common_sample(params, prompt, over, temperature, trie, rng);

    std::vector<Generation> selected;
    selected.reserve(static_cast<std::size_t>(count));
    std::vector<Generation> remaining;
    remaining.reserve(drawn.entries.size());

    // Pass 1: every copy of the ground truth, in draw order.
    for (const Generation& g : drawn.entries) {
        if (g.item_id == target_item && static_cast<int>(selected.size()) < count) {
            selected.push_back(g);
        } else {
            remaining.push_back(g);
        }
    }

    // Pass 2: unique remaining titles, in draw order.
    if (static_cast<int>(selected.size()) < count) {
        std::unordered_set<int> chosen_items;
        for (const Generation& g : selected) chosen_items.insert(g.item_id);
        std::vector<Generation> leftovers;
        leftovers.reserve(remaining.size());
        for (const Generation& g : remaining) {
            if (static_cast<int>(selected.size()) < count &&
                chosen_items.insert(g.item_id).second) {
                selected.push_back(g);
            } else {
                leftovers.push_back(g);
            }
        }
        remaining = std::move(leftovers);
    }

    // Pass 3: random fill without replacement from the leftover multiset.
    while (static_cast<int>(selected.size()) < count) {
        const std::size_t j = rng.index(remaining.size());
        selected.push_back(remaining[j]);
        remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(j));
    }

    GenerationGroup group;
    group.prompt = prompt.tokens;
    group.strategy = SamplingStrategy::dynamic;
    group.entries = std::move(selected);
    return group;
}

double diversity(const GenerationGroup& group) {
    if (group.entries.empty()) throw ConfigError("diversity of an empty group");
    std::set<int> unique;
    for (const Generation& g : group.entries) unique.insert(g.item_id);
    return static_cast<double>(unique.size()) / static_cast<double>(group.entries.size());
}

}  // namespace recrl
