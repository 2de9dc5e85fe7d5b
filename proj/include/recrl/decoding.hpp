#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "recrl/policy.hpp"

namespace recrl {

enum class SamplingStrategy { beam, dynamic, common };

const char* sampling_name(SamplingStrategy s);
SamplingStrategy sampling_from_name(const std::string& name);

struct Generation {
    int item_id = -1;
    double logprob = 0.0;  // constrained sequence log-prob at temperature 1
};

// G generations for one prompt. ranks / rewards / advantages are filled by
// the reward and optimization stages; empty until assigned.
struct GenerationGroup {
    std::vector<Token> prompt;
    SamplingStrategy strategy = SamplingStrategy::beam;
    std::vector<Generation> entries;
    std::vector<int> ranks;
    std::vector<double> rewards;
    std::vector<double> advantages;

    int size() const { return static_cast<int>(entries.size()); }
};

// Exact constrained beam search without length normalization. Completed
// titles keep their frozen cumulative score and compete with active prefixes.
// Ties on the score break by shorter sequence first, then ascending token
// order. Entries come back sorted by score descending; all distinct.
// beam_width > corpus size -> ConfigError.
// `trace` (optional) receives one JSON line per step with the beam frontier.
GenerationGroup beam_search(const PolicyParams& params,
                            const Prompt& prompt,
                            int beam_width,
                            const TitleTrie& trie,
                            std::ostream* trace = nullptr);

// Token-by-token sampling from the masked softmax with logits divided by
// `temperature`; duplicates permitted. temperature == 0 selects the argmax
// token at every step (greedy).
GenerationGroup common_sample(const PolicyParams& params,
                              const Prompt& prompt,
                              int count,
                              double temperature,
                              const TitleTrie& trie,
                              Rng& rng);

// Over-generates floor(count * overgen_factor) titles by common sampling and
// keeps `count`: every copy of the target first, then unique remaining titles
// in draw order, then random fill without replacement from the leftovers.
GenerationGroup dynamic_sample(const PolicyParams& params,
                               const Prompt& prompt,
                               int count,
                               int target_item,
                               double temperature,
                               const TitleTrie& trie,
                               Rng& rng,
                               double overgen_factor = 1.5);

// Unique-title fraction of a group, in (0, 1].
double diversity(const GenerationGroup& group);

}  // namespace recrl
