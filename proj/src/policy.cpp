#include "recrl/policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

namespace recrl {

namespace {

void check_hyper(const PolicyHyper& h) {
    if (h.vocab_size < 1 || h.embed_dim < 1 || h.hidden_dim < 1 || h.window < 1) {
        throw ConfigError("policy dimensions must be positive");
    }
}

std::size_t idx(int row, int col, int cols) {
    return static_cast<std::size_t>(row) * static_cast<std::size_t>(cols) +
           static_cast<std::size_t>(col);
}

struct Forward {
    std::vector<double> ctx_mean;  // embed_dim
    std::vector<double> hidden;    // hidden_dim, post-tanh
    std::vector<double> logits;    // vocab_size
};

Forward forward_pass(const PolicyParams& p, std::span<const Token> ctx) {
    const auto& h = p.hyper;
    if (static_cast<int>(ctx.size()) != h.window) {
        throw ConfigError("context length must equal the policy window");
    }
    Forward f;
    f.ctx_mean.assign(static_cast<std::size_t>(h.embed_dim), 0.0);
    for (Token t : ctx) {
        if (t < 0 || t >= h.vocab_size) throw DataError("context token out of range");
        for (int d = 0; d < h.embed_dim; ++d) {
            f.ctx_mean[static_cast<std::size_t>(d)] += p.embed[idx(t, d, h.embed_dim)];
        }
    }
    const double inv_w = 1.0 / static_cast<double>(h.window);
    for (double& v : f.ctx_mean) v *= inv_w;

    f.hidden.resize(static_cast<std::size_t>(h.hidden_dim));
    for (int j = 0; j < h.hidden_dim; ++j) {
        double z = p.b1[static_cast<std::size_t>(j)];
        for (int d = 0; d < h.embed_dim; ++d) {
            z += p.w1[idx(j, d, h.embed_dim)] * f.ctx_mean[static_cast<std::size_t>(d)];
        }
        f.hidden[static_cast<std::size_t>(j)] = std::tanh(z);
    }

    f.logits.resize(static_cast<std::size_t>(h.vocab_size));
    for (int v = 0; v < h.vocab_size; ++v) {
        double z = p.b2[static_cast<std::size_t>(v)];
        for (int j = 0; j < h.hidden_dim; ++j) {
            z += p.w2[idx(v, j, h.hidden_dim)] * f.hidden[static_cast<std::size_t>(j)];
        }
        f.logits[static_cast<std::size_t>(v)] = z;
    }
    return f;
}

// Log-normalizer of the masked softmax: invalid logits are replaced by
// kMaskVal and the log-sum-exp runs over the whole vocabulary.
double masked_logz(const std::vector<double>& logits, std::span<const Token> valid) {
    double max_logit = kMaskVal;
    for (Token t : valid) {
        max_logit = std::max(max_logit, logits[static_cast<std::size_t>(t)]);
    }
    std::vector<bool> is_valid(logits.size(), false);
    for (Token t : valid) is_valid[static_cast<std::size_t>(t)] = true;
    double sum = 0.0;
    for (std::size_t v = 0; v < logits.size(); ++v) {
        const double l = is_valid[v] ? logits[v] : kMaskVal;
        sum += std::exp(l - max_logit);
    }
    return max_logit + std::log(sum);
}

}  // namespace

PolicyParams PolicyParams::zeros(const PolicyHyper& hyper) {
    check_hyper(hyper);
    PolicyParams p;
    p.hyper = hyper;
    p.embed.assign(static_cast<std::size_t>(hyper.vocab_size) * hyper.embed_dim, 0.0);
    p.w1.assign(static_cast<std::size_t>(hyper.hidden_dim) * hyper.embed_dim, 0.0);
    p.b1.assign(static_cast<std::size_t>(hyper.hidden_dim), 0.0);
    p.w2.assign(static_cast<std::size_t>(hyper.vocab_size) * hyper.hidden_dim, 0.0);
    p.b2.assign(static_cast<std::size_t>(hyper.vocab_size), 0.0);
    return p;
}

PolicyParams PolicyParams::init(const PolicyHyper& hyper, std::uint64_t seed) {
    PolicyParams p = zeros(hyper);
    Rng rng(seed);
    for (double& v : p.embed) v = rng.uniform(-0.1, 0.1);
    for (double& v : p.w1) v = rng.uniform(-0.1, 0.1);
    for (double& v : p.w2) v = rng.uniform(-0.1, 0.1);
    return p;
}

std::size_t PolicyParams::param_count() const {
    return embed.size() + w1.size() + b1.size() + w2.size() + b2.size();
}

bool PolicyParams::same_shape(const PolicyParams& other) const {
    return hyper.vocab_size == other.hyper.vocab_size &&
           hyper.embed_dim == other.hyper.embed_dim &&
           hyper.hidden_dim == other.hyper.hidden_dim &&
           hyper.window == other.hyper.window;
}

bool PolicyParams::all_finite() const {
    auto ok = [](const std::vector<double>& v) {
        return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
    };
    return ok(embed) && ok(w1) && ok(b1) && ok(w2) && ok(b2);
}

ParamGrad ParamGrad::zeros(const PolicyHyper& hyper) {
    check_hyper(hyper);
    ParamGrad g;
    g.hyper = hyper;
    g.embed.assign(static_cast<std::size_t>(hyper.vocab_size) * hyper.embed_dim, 0.0);
    g.w1.assign(static_cast<std::size_t>(hyper.hidden_dim) * hyper.embed_dim, 0.0);
    g.b1.assign(static_cast<std::size_t>(hyper.hidden_dim), 0.0);
    g.w2.assign(static_cast<std::size_t>(hyper.vocab_size) * hyper.hidden_dim, 0.0);
    g.b2.assign(static_cast<std::size_t>(hyper.vocab_size), 0.0);
    return g;
}

void ParamGrad::add(const ParamGrad& other) {
    auto axpy = [](std::vector<double>& a, const std::vector<double>& b) {
        if (a.size() != b.size()) throw ConfigError("gradient shape mismatch");
        for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    };
    axpy(embed, other.embed);
    axpy(w1, other.w1);
    axpy(b1, other.b1);
    axpy(w2, other.w2);
    axpy(b2, other.b2);
}

void ParamGrad::scale(double c) {
    for (auto* v : {&embed, &w1, &b1, &w2, &b2}) {
        for (double& x : *v) x *= c;
    }
}

double ParamGrad::l2_norm() const {
    double sum = 0.0;
    for (const auto* v : {&embed, &w1, &b1, &w2, &b2}) {
        for (double x : *v) sum += x * x;
    }
    return std::sqrt(sum);
}

bool ParamGrad::all_finite() const {
    for (const auto* v : {&embed, &w1, &b1, &w2, &b2}) {
        for (double x : *v) {
            if (!std::isfinite(x)) return false;
        }
    }
    return true;
}

void apply_gradient(PolicyParams& params, const ParamGrad& grad, double step) {
    auto axpy = [step](std::vector<double>& a, const std::vector<double>& b) {
        if (a.size() != b.size()) throw ConfigError("gradient shape mismatch");
        for (std::size_t i = 0; i < a.size(); ++i) a[i] += step * b[i];
    };
    axpy(params.embed, grad.embed);
    axpy(params.w1, grad.w1);
    axpy(params.b1, grad.b1);
    axpy(params.w2, grad.w2);
    axpy(params.b2, grad.b2);
}

std::vector<Token> make_context(std::span<const Token> prompt,
                                std::span<const Token> generated,
                                int window) {
    if (window < 1) throw ConfigError("window must be >= 1");
    std::vector<Token> ctx(static_cast<std::size_t>(window), kBos);
    std::size_t pos = static_cast<std::size_t>(window);
    auto take = [&](std::span<const Token> seq) {
        for (std::size_t i = seq.size(); i > 0 && pos > 0; --i) {
            ctx[--pos] = seq[i - 1];
        }
    };
    take(generated);
    take(prompt);
    return ctx;
}

std::vector<double> next_logits(const PolicyParams& params, std::span<const Token> ctx) {
    return forward_pass(params, ctx).logits;
}

std::vector<double> valid_token_logprobs(const PolicyParams& params,
                                         std::span<const Token> ctx,
                                         std::span<const Token> valid) {
    if (valid.empty()) throw DataError("valid token set must be nonempty");
    Forward f = forward_pass(params, ctx);
    const double logz = masked_logz(f.logits, valid);
    std::vector<double> out;
    out.reserve(valid.size());
    for (Token t : valid) {
        out.push_back(f.logits[static_cast<std::size_t>(t)] - logz);
    }
    return out;
}

double token_logprob(const PolicyParams& params,
                     std::span<const Token> ctx,
                     Token token,
                     std::span<const Token> valid) {
    auto it = std::find(valid.begin(), valid.end(), token);
    if (it == valid.end()) {
        throw DataError("attempted invalid continuation: token " + std::to_string(token));
    }
    std::vector<double> lp = valid_token_logprobs(params, ctx, valid);
    return lp[static_cast<std::size_t>(it - valid.begin())];
}

double seq_logprob(const PolicyParams& params,
                   const Prompt& prompt,
                   const ItemTitle& title,
                   const TitleTrie& trie) {
    if (trie.accepted_item(title.tokens) < 0) {
        throw DataError("title is not in the corpus: '" + title.text + "'");
    }
    double total = 0.0;
    int node = TitleTrie::kRoot;
    std::vector<Token> prefix;
    prefix.reserve(title.tokens.size());
    for (Token t : title.tokens) {
        const auto& valid = trie.continuations(node);
        auto ctx = make_context(prompt.tokens, prefix, params.hyper.window);
        total += token_logprob(params, ctx, t, valid);
        node = trie.step(node, t);
        prefix.push_back(t);
    }
    return total;
}

ParamGrad grad_weighted_logprob(const PolicyParams& params, std::span<const GradTerm> terms) {
    const auto& h = params.hyper;
    ParamGrad g = ParamGrad::zeros(h);
    const double inv_w = 1.0 / static_cast<double>(h.window);

    std::vector<double> dlogit(static_cast<std::size_t>(h.vocab_size));
    std::vector<double> da(static_cast<std::size_t>(h.hidden_dim));
    std::vector<double> dz(static_cast<std::size_t>(h.hidden_dim));
    std::vector<double> dc(static_cast<std::size_t>(h.embed_dim));

    for (const GradTerm& term : terms) {
        if (term.valid.empty()) throw DataError("gradient term with empty valid set");
        if (std::find(term.valid.begin(), term.valid.end(), term.token) == term.valid.end()) {
            throw DataError("gradient term token outside its valid set");
        }
        if (term.weight == 0.0) continue;

        Forward f = forward_pass(params, term.ctx);
        const double logz = masked_logz(f.logits, term.valid);

        // dlogit[v] = weight * (1[v == token] - p[v]); zero off the valid set.
        std::fill(dlogit.begin(), dlogit.end(), 0.0);
        for (Token t : term.valid) {
            const double p = std::exp(f.logits[static_cast<std::size_t>(t)] - logz);
            dlogit[static_cast<std::size_t>(t)] = -term.weight * p;
        }
        dlogit[static_cast<std::size_t>(term.token)] += term.weight;

        std::fill(da.begin(), da.end(), 0.0);
        for (Token t : term.valid) {
            const double dl = dlogit[static_cast<std::size_t>(t)];
            if (dl == 0.0) continue;
            g.b2[static_cast<std::size_t>(t)] += dl;
            for (int j = 0; j < h.hidden_dim; ++j) {
                g.w2[idx(t, j, h.hidden_dim)] += dl * f.hidden[static_cast<std::size_t>(j)];
                da[static_cast<std::size_t>(j)] += dl * params.w2[idx(t, j, h.hidden_dim)];
            }
        }

        for (int j = 0; j < h.hidden_dim; ++j) {
            const double a = f.hidden[static_cast<std::size_t>(j)];
            dz[static_cast<std::size_t>(j)] = da[static_cast<std::size_t>(j)] * (1.0 - a * a);
        }

        std::fill(dc.begin(), dc.end(), 0.0);
        for (int j = 0; j < h.hidden_dim; ++j) {
            const double dzj = dz[static_cast<std::size_t>(j)];
            if (dzj == 0.0) continue;
            g.b1[static_cast<std::size_t>(j)] += dzj;
            for (int d = 0; d < h.embed_dim; ++d) {
                g.w1[idx(j, d, h.embed_dim)] += dzj * f.ctx_mean[static_cast<std::size_t>(d)];
                dc[static_cast<std::size_t>(d)] += dzj * params.w1[idx(j, d, h.embed_dim)];
            }
        }

        for (Token t : term.ctx) {
            for (int d = 0; d < h.embed_dim; ++d) {
                g.embed[idx(t, d, h.embed_dim)] += dc[static_cast<std::size_t>(d)] * inv_w;
            }
        }
    }
    return g;
}

PolicyParams ema_sync(const PolicyParams& ref, const PolicyParams& policy, double alpha) {
    if (alpha < 0.0 || alpha > 1.0) throw ConfigError("ema_sync: alpha must be in [0, 1]");
    if (!ref.same_shape(policy)) throw ConfigError("ema_sync: shape mismatch");
    PolicyParams out = ref;
    auto blend = [alpha](std::vector<double>& r, const std::vector<double>& p) {
        for (std::size_t i = 0; i < r.size(); ++i) {
            r[i] = alpha * p[i] + (1.0 - alpha) * r[i];
        }
    };
    blend(out.embed, policy.embed);
    blend(out.w1, policy.w1);
    blend(out.b1, policy.b1);
    blend(out.w2, policy.w2);
    blend(out.b2, policy.b2);
    return out;
}

void save_checkpoint(const PolicyParams& params, const std::string& path) {
    nlohmann::json j;
    j["format"] = "recrl-checkpoint";
    j["version"] = 1;
    j["vocab_size"] = params.hyper.vocab_size;
    j["embed_dim"] = params.hyper.embed_dim;
    j["hidden_dim"] = params.hyper.hidden_dim;
    j["window"] = params.hyper.window;
    j["embed"] = params.embed;
    j["w1"] = params.w1;
    j["b1"] = params.b1;
    j["w2"] = params.w2;
    j["b2"] = params.b2;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint: " + path);
    out << j.dump() << '\n';
}

PolicyParams load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    nlohmann::json j;
    in >> j;
    if (j.value("format", "") != "recrl-checkpoint") {
        throw DataError("not a recrl checkpoint: " + path);
    }
    if (j.value("version", 0) != 1) {
        throw DataError("unsupported checkpoint version in " + path);
    }
    PolicyHyper hyper;
    hyper.vocab_size = j.at("vocab_size").get<int>();
    hyper.embed_dim = j.at("embed_dim").get<int>();
    hyper.hidden_dim = j.at("hidden_dim").get<int>();
    hyper.window = j.at("window").get<int>();
    PolicyParams p = PolicyParams::zeros(hyper);
    p.embed = j.at("embed").get<std::vector<double>>();
    p.w1 = j.at("w1").get<std::vector<double>>();
    p.b1 = j.at("b1").get<std::vector<double>>();
    p.w2 = j.at("w2").get<std::vector<double>>();
    p.b2 = j.at("b2").get<std::vector<double>>();
    PolicyParams shape_check = PolicyParams::zeros(hyper);
    if (p.embed.size() != shape_check.embed.size() || p.w1.size() != shape_check.w1.size() ||
        p.b1.size() != shape_check.b1.size() || p.w2.size() != shape_check.w2.size() ||
        p.b2.size() != shape_check.b2.size()) {
        throw DataError("checkpoint arrays do not match the declared shapes: " + path);
    }
    return p;
}

}  // namespace recrl
