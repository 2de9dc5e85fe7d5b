#pragma once

#include <span>
#include <string>
#include <vector>

#include "recrl/corpus.hpp"

namespace recrl {

// Logit assigned to tokens outside the valid set before the softmax; their
// probability underflows to exactly zero in double precision.
inline constexpr double kMaskVal = -1e9;

struct PolicyHyper {
    int vocab_size = 0;
    int embed_dim = 32;
    int hidden_dim = 64;
    int window = 8;
};

// Mean-window MLP policy: context = mean of the last `window` token
// embeddings, one tanh hidden layer, linear head over the vocabulary.
// All math in double precision; gradients are hand-derived.
struct PolicyParams {
    PolicyHyper hyper;
    std::vector<double> embed;  // vocab_size x embed_dim, row-major
    std::vector<double> w1;     // hidden_dim x embed_dim
    std::vector<double> b1;     // hidden_dim
    std::vector<double> w2;     // vocab_size x hidden_dim
    std::vector<double> b2;     // vocab_size

    static PolicyParams zeros(const PolicyHyper& hyper);
    // Embeddings and weights uniform in (-0.1, 0.1), biases zero.
    static PolicyParams init(const PolicyHyper& hyper, std::uint64_t seed);

    std::size_t param_count() const;
    bool same_shape(const PolicyParams& other) const;
    bool all_finite() const;
};

// Gradient accumulator, shape-compatible with a PolicyParams.
struct ParamGrad {
    PolicyHyper hyper;
    std::vector<double> embed, w1, b1, w2, b2;

    static ParamGrad zeros(const PolicyHyper& hyper);
    void add(const ParamGrad& other);
    void scale(double c);
    double l2_norm() const;
    bool all_finite() const;
};

// params += step * grad
void apply_gradient(PolicyParams& params, const ParamGrad& grad, double step);

// Last `window` tokens of prompt ++ generated, left-padded with kBos.
std::vector<Token> make_context(std::span<const Token> prompt,
                                std::span<const Token> generated,
                                int window);

// Raw logits over the vocabulary for one context.
std::vector<double> next_logits(const PolicyParams& params, std::span<const Token> ctx);

// Log-probabilities of the valid tokens under the masked softmax (invalid
// logits replaced by kMaskVal). Aligned with `valid`; valid must be nonempty.
std::vector<double> valid_token_logprobs(const PolicyParams& params,
                                         std::span<const Token> ctx,
                                         std::span<const Token> valid);

// Log-probability of one token; token must be in valid.
double token_logprob(const PolicyParams& params,
                     std::span<const Token> ctx,
                     Token token,
                     std::span<const Token> valid);

// Constrained sequence log-probability of a corpus title given a prompt;
// equals the beam-search cumulative score for that title.
double seq_logprob(const PolicyParams& params,
                   const Prompt& prompt,
                   const ItemTitle& title,
                   const TitleTrie& trie);

struct GradTerm {
    std::vector<Token> ctx;
    Token token = -1;
    std::vector<Token> valid;
    double weight = 0.0;
};

// Exact gradient of sum_i weight_i * token_logprob(ctx_i, token_i, valid_i).
// Tokens outside the valid set receive exactly zero gradient.
ParamGrad grad_weighted_logprob(const PolicyParams& params, std::span<const GradTerm> terms);

// Deep copy for pi_old / pi_ref bookkeeping.
inline PolicyParams snapshot(const PolicyParams& params) { return params; }

// ref_new = alpha * policy + (1 - alpha) * ref, elementwise.
PolicyParams ema_sync(const PolicyParams& ref, const PolicyParams& policy, double alpha);

// Versioned JSON checkpoint; parameter values round-trip exactly.
void save_checkpoint(const PolicyParams& params, const std::string& path);
PolicyParams load_checkpoint(const std::string& path);

}  // namespace recrl
