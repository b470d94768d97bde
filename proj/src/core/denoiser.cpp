#include "mcactrl/core/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>

#include "mcactrl/errors.hpp"

namespace mcactrl {

std::string DenoiserConfig::header() const {
    std::ostringstream out;
    out << "mcactrl-toy-denoiser v1"
        << " image_size=" << image_size << " image_channels=" << image_channels << " base=" << base_channels
        << " mid=" << mid_channels << " low=" << low_channels << " lift=" << lift_channels << " heads=" << heads
        << " head_dim=" << head_dim << " context=" << context_dim << " time=" << time_dim << " groups=" << groups
        << " vocab=" << Vocabulary::instance().size() << " max_tokens=" << Vocabulary::kMaxTokens;
    return out.str();
}

DenoiserConfig DenoiserConfig::parse_header(const std::string& line) {
    std::istringstream in(line);
    std::string magic, version;
    in >> magic >> version;
    if (magic != "mcactrl-toy-denoiser" || version != "v1") throw FormatError("not a toy denoiser weights header");
    std::map<std::string, int> kv;
    for (std::string tok; in >> tok;) {
        const auto eq = tok.find('=');
        if (eq == std::string::npos) throw FormatError("malformed header field '" + tok + "'");
        try {
            kv[tok.substr(0, eq)] = std::stoi(tok.substr(eq + 1));
        } catch (const std::exception&) {
            throw FormatError("non-integer header value in '" + tok + "'");
        }
    }
    auto get = [&](const char* key) {
        const auto it = kv.find(key);
        if (it == kv.end()) throw FormatError(std::string("weights header missing '") + key + "'");
        return it->second;
    };
    if (get("vocab") != Vocabulary::instance().size() || get("max_tokens") != Vocabulary::kMaxTokens) {
        throw FormatError("weights were trained against a different vocabulary");
    }
    DenoiserConfig c;
    c.image_size = get("image_size");
    c.image_channels = get("image_channels");
    c.base_channels = get("base");
    c.mid_channels = get("mid");
    c.low_channels = get("low");
    c.lift_channels = get("lift");
    c.heads = get("heads");
    c.head_dim = get("head_dim");
    c.context_dim = get("context");
    c.time_dim = get("time");
    c.groups = get("groups");
    return c;
}

namespace {

class ParamFactory {
public:
    ParamFactory(std::vector<std::pair<std::string, Var>>& out, uint64_t seed) : out_(out), rng_(seed) {}

    Var uniform(const std::string& name, Shape shape, int fan_in, float gain = 1.0f) {
        Tensor t(std::move(shape));
        const float bound = gain / std::sqrt(static_cast<float>(fan_in));
        std::uniform_real_distribution<float> dist(-bound, bound);
        for (auto& v : t.data) v = dist(rng_);
        return add(name, std::move(t));
    }
    Var fill(const std::string& name, Shape shape, float value) { return add(name, Tensor(std::move(shape), value)); }

private:
    Var add(const std::string& name, Tensor t) {
        Var v = parameter(std::move(t));
        out_.emplace_back(name, v);
        return v;
    }
    std::vector<std::pair<std::string, Var>>& out_;
    std::mt19937_64 rng_;
};

struct Conv {
    Var w, b;
    int stride = 1, pad = 1;
    Conv() = default;
    Conv(ParamFactory& f, const std::string& name, int cin, int cout, int k, int stride_, float gain = 1.0f)
        : stride(stride_), pad(k / 2) {
        w = f.uniform(name + ".w", {cout, cin, k, k}, cin * k * k, gain);
        b = f.fill(name + ".b", {cout}, 0.0f);
    }
    Var operator()(const Var& x) const { return ops::conv2d(x, w, b, stride, pad); }
};

struct Dense {
    Var w, b;
    Dense() = default;
    Dense(ParamFactory& f, const std::string& name, int in, int out, bool bias = true, float gain = 1.0f) {
        w = f.uniform(name + ".w", {in, out}, in, gain);
        if (bias) b = f.fill(name + ".b", {out}, 0.0f);
    }
    Var operator()(const Var& x) const { return ops::linear(x, w, b); }
};

struct Norm {
    Var gamma, beta;
    int groups = 1;
    Norm() = default;
    Norm(ParamFactory& f, const std::string& name, int ch, int groups_) : groups(groups_) {
        gamma = f.fill(name + ".gamma", {ch}, 1.0f);
        beta = f.fill(name + ".beta", {ch}, 0.0f);
    }
    Var operator()(const Var& x) const { return ops::group_norm(x, gamma, beta, groups); }
};

struct ResBlock {
    Norm n1, n2;
    Conv c1, c2, skip;
    Dense temb;
    bool has_skip = false;

    ResBlock() = default;
    ResBlock(ParamFactory& f, const std::string& name, int cin, int cout, int time_dim, int groups)
        : n1(f, name + ".n1", cin, groups),
          n2(f, name + ".n2", cout, groups),
          c1(f, name + ".c1", cin, cout, 3, 1),
          c2(f, name + ".c2", cout, cout, 3, 1, 0.5f),
          temb(f, name + ".temb", time_dim, cout),
          has_skip(cin != cout) {
        if (has_skip) skip = Conv(f, name + ".skip", cin, cout, 1, 1);
    }

    Var operator()(const Var& x, const Var& t) const {
        Var h = c1(ops::silu(n1(x)));
        h = ops::add_channel(h, temb(t));
        h = c2(ops::silu(n2(h)));
        return ops::add(has_skip ? skip(x) : x, h);
    }
};

struct AttnBlock {
    AttentionLayerInfo info;
    Norm n_self, n_cross;
    Dense q, k, v, o;
    Dense cq, ck, cv, co;

    AttnBlock() = default;
    AttnBlock(ParamFactory& f, const AttentionLayerInfo& li, int ch, int context_dim, int groups) : info(li) {
        const std::string name = "attn" + std::to_string(li.index);
        const int inner = li.heads * li.head_dim;
        n_self = Norm(f, name + ".norm_self", ch, groups);
        q = Dense(f, name + ".q", ch, inner, false);
        k = Dense(f, name + ".k", ch, inner, false);
        v = Dense(f, name + ".v", ch, inner, false);
        o = Dense(f, name + ".o", inner, ch);
        n_cross = Norm(f, name + ".norm_cross", ch, groups);
        cq = Dense(f, name + ".cq", ch, inner, false);
        ck = Dense(f, name + ".ck", context_dim, inner, false);
        cv = Dense(f, name + ".cv", context_dim, inner, false);
        co = Dense(f, name + ".co", inner, ch);
    }
};

Tensor sinusoid(std::span<const int> timesteps, int dim) {
    Tensor out({static_cast<int>(timesteps.size()), dim});
    const int half = dim / 2;
    for (size_t n = 0; n < timesteps.size(); ++n) {
        for (int i = 0; i < half; ++i) {
            const double freq = std::exp(-std::log(10000.0) * i / half);
            const double arg = timesteps[n] * freq;
            out.data[n * dim + static_cast<size_t>(i)] = static_cast<float>(std::sin(arg));
            out.data[n * dim + static_cast<size_t>(half + i)] = static_cast<float>(std::cos(arg));
        }
    }
    return out;
}

// Inference-only self-attention with taps and override; mirrors ops::attention.
Var self_attention_inference(const AttnBlock& blk, const Var& q, const Var& k, const Var& v, const AttentionHook* hook,
                             ForwardTaps* taps) {
    const int batch = q->value.dim(0), tokens = q->value.dim(1), width = q->value.dim(2);
    const int heads = blk.info.heads, d = blk.info.head_dim;
    std::vector<AttentionTriplet> triplets;
    triplets.reserve(static_cast<size_t>(batch));
    std::vector<Tensor> outputs;
    outputs.reserve(static_cast<size_t>(batch));
    for (int n = 0; n < batch; ++n) {
        const int64_t off = static_cast<int64_t>(n) * tokens * width;
        AttentionTriplet t{split_heads(q->value.ptr() + off, tokens, heads, d),
                           split_heads(k->value.ptr() + off, tokens, heads, d),
                           split_heads(v->value.ptr() + off, tokens, heads, d), blk.info.index, blk.info.height,
                           blk.info.width};
        outputs.push_back(scaled_dot_attention(t.q, t.k, t.v));
        triplets.push_back(std::move(t));
    }
    if (hook) {
        try {
            (*hook)(blk.info.index, triplets, outputs);
        } catch (const std::exception& e) {
            throw std::runtime_error("attention override at layer " + std::to_string(blk.info.index) + ": " +
                                     e.what());
        }
        if (static_cast<int>(outputs.size()) != batch) {
            throw ContractViolation("attention override at layer " + std::to_string(blk.info.index) + " returned " +
                                    std::to_string(outputs.size()) + " outputs for a batch of " +
                                    std::to_string(batch));
        }
        for (const auto& out : outputs) {
            if (out.shape != Shape{heads, tokens, d}) {
                throw ContractViolation("attention override at layer " + std::to_string(blk.info.index) +
                                        " returned shape " + shape_str(out.shape) + ", expected " +
                                        shape_str({heads, tokens, d}));
            }
        }
    }
    Tensor merged({batch, tokens, width});
    for (int n = 0; n < batch; ++n) {
        merge_heads(outputs[static_cast<size_t>(n)], merged.ptr() + static_cast<int64_t>(n) * tokens * width);
    }
    if (taps) taps->self_attention[static_cast<size_t>(blk.info.index)] = std::move(triplets);
    return constant(std::move(merged));
}

Var cross_attention_inference(const AttnBlock& blk, const Var& q, const Var& k, const Var& v, ForwardTaps* taps) {
    const int batch = q->value.dim(0), tokens = q->value.dim(1), width = q->value.dim(2);
    const int ctx = k->value.dim(1);
    const int heads = blk.info.heads, d = blk.info.head_dim;
    Tensor merged({batch, tokens, width});
    Tensor probs_all;
    if (taps) probs_all = Tensor({batch, heads, tokens, ctx});
    for (int n = 0; n < batch; ++n) {
        const Tensor qh = split_heads(q->value.ptr() + static_cast<int64_t>(n) * tokens * width, tokens, heads, d);
        const Tensor kh = split_heads(k->value.ptr() + static_cast<int64_t>(n) * ctx * width, ctx, heads, d);
        const Tensor vh = split_heads(v->value.ptr() + static_cast<int64_t>(n) * ctx * width, ctx, heads, d);
        Tensor probs;
        const Tensor out = scaled_dot_attention(qh, kh, vh, taps ? &probs : nullptr);
        merge_heads(out, merged.ptr() + static_cast<int64_t>(n) * tokens * width);
        if (taps) std::copy(probs.data.begin(), probs.data.end(), probs_all.data.begin() + n * probs.numel());
    }
    if (taps) taps->cross_attention[static_cast<size_t>(blk.info.index)] = std::move(probs_all);
    return constant(std::move(merged));
}

}  // namespace

struct ToyDenoiser::Impl {
    Dense time1, time2;
    Var token_table, token_pos;
    Conv conv_in, down1, down2, lift, fuse, conv_out;
    Norm out_norm;
    ResBlock enc16, enc8, mid, dec8, dec16;
    std::vector<AttnBlock> attn;
};

ToyDenoiser::ToyDenoiser(DenoiserConfig config) : config_(config), impl_(std::make_unique<Impl>()) {
    const auto& c = config_;
    if (c.image_size % 4 != 0 || c.image_size < 8) throw std::invalid_argument("image_size must be a multiple of 4");
    if (c.base_channels % c.groups || c.mid_channels % c.groups || c.low_channels % c.groups) {
        throw std::invalid_argument("channel widths must be divisible by the group count");
    }
    ParamFactory f(params_, c.init_seed);
    Impl& m = *impl_;
    const int s16 = c.image_size / 2, s8 = c.image_size / 4;

    m.time1 = Dense(f, "time1", c.time_dim / 2, c.time_dim);
    m.time2 = Dense(f, "time2", c.time_dim, c.time_dim);
    m.token_table = f.uniform("tokens.table", {Vocabulary::instance().size(), c.context_dim}, 1, 1.0f);
    m.token_pos = f.uniform("tokens.pos", {Vocabulary::kMaxTokens, c.context_dim}, 1, 0.1f);

    m.conv_in = Conv(f, "conv_in", c.image_channels, c.base_channels, 3, 1);
    m.down1 = Conv(f, "down1", c.base_channels, c.mid_channels, 3, 2);
    m.enc16 = ResBlock(f, "enc16", c.mid_channels, c.mid_channels, c.time_dim, c.groups);
    m.down2 = Conv(f, "down2", c.mid_channels, c.low_channels, 3, 2);
    m.enc8 = ResBlock(f, "enc8", c.low_channels, c.low_channels, c.time_dim, c.groups);
    m.mid = ResBlock(f, "mid", c.low_channels, c.low_channels, c.time_dim, c.groups);
    m.dec8 = ResBlock(f, "dec8", 2 * c.low_channels, c.low_channels, c.time_dim, c.groups);
    m.dec16 = ResBlock(f, "dec16", c.low_channels + c.mid_channels, c.mid_channels, c.time_dim, c.groups);
    m.lift = Conv(f, "lift", c.mid_channels, c.lift_channels, 1, 1);
    m.fuse = Conv(f, "fuse", c.lift_channels + c.base_channels, c.base_channels, 3, 1);
    m.out_norm = Norm(f, "out_norm", c.base_channels, c.groups);
    m.conv_out = Conv(f, "conv_out", c.base_channels, c.image_channels, 3, 1);

    // Execution order: enc16 x2, enc8 x2, dec8 x2, dec16 x2.
    const int res[8] = {s16, s16, s8, s8, s8, s8, s16, s16};
    for (int i = 0; i < 8; ++i) {
        AttentionLayerInfo li{i, res[i], res[i], c.heads, c.head_dim, i >= 4};
        layers_.push_back(li);
        const int ch = res[i] == s16 ? c.mid_channels : c.low_channels;
        m.attn.emplace_back(f, li, ch, c.context_dim, c.groups);
    }
}

ToyDenoiser::~ToyDenoiser() = default;
ToyDenoiser::ToyDenoiser(ToyDenoiser&&) noexcept = default;
ToyDenoiser& ToyDenoiser::operator=(ToyDenoiser&&) noexcept = default;

ToyDenoiser ToyDenoiser::clone() const {
    ToyDenoiser copy(config_);
    copy.set_flat_weights(flat_weights());
    return copy;
}

int ToyDenoiser::decoder_start() const {
    for (const auto& l : layers_) {
        if (l.decoder) return l.index;
    }
    return num_attention_layers();
}

std::vector<std::pair<int, int>> ToyDenoiser::attention_resolutions() const {
    std::vector<std::pair<int, int>> out;
    for (const auto& l : layers_) {
        const std::pair<int, int> r{l.height, l.width};
        if (std::find(out.begin(), out.end(), r) == out.end()) out.push_back(r);
    }
    return out;
}

int64_t ToyDenoiser::parameter_count() const {
    int64_t n = 0;
    for (const auto& [name, v] : params_) n += v->value.numel();
    return n;
}

std::vector<float> ToyDenoiser::flat_weights() const {
    std::vector<float> out;
    out.reserve(static_cast<size_t>(parameter_count()));
    for (const auto& [name, v] : params_) out.insert(out.end(), v->value.data.begin(), v->value.data.end());
    return out;
}

void ToyDenoiser::set_flat_weights(std::span<const float> weights) {
    if (static_cast<int64_t>(weights.size()) != parameter_count()) {
        throw std::invalid_argument("weight vector has " + std::to_string(weights.size()) + " entries, model needs " +
                                    std::to_string(parameter_count()));
    }
    size_t off = 0;
    for (auto& [name, v] : params_) {
        std::copy_n(weights.begin() + static_cast<std::ptrdiff_t>(off), v->value.numel(), v->value.data.begin());
        off += static_cast<size_t>(v->value.numel());
    }
}

Var ToyDenoiser::forward(const Var& x, std::span<const int> timesteps, const std::vector<TokenSeq>& tokens) const {
    return run(x, timesteps, tokens, nullptr, nullptr);
}

Tensor ToyDenoiser::predict(const Tensor& x, std::span<const int> timesteps, const std::vector<TokenSeq>& tokens,
                            const AttentionHook* hook, ForwardTaps* taps) const {
    NoGradGuard guard;
    return run(constant(x), timesteps, tokens, hook, taps)->value;
}

Var ToyDenoiser::run(const Var& x, std::span<const int> timesteps, const std::vector<TokenSeq>& tokens,
                     const AttentionHook* hook, ForwardTaps* taps) const {
    const auto& c = config_;
    const Impl& m = *impl_;
    const Tensor& xv = x->value;
    if (xv.rank() != 4 || xv.dim(1) != c.image_channels || xv.dim(2) != c.image_size || xv.dim(3) != c.image_size) {
        throw std::invalid_argument("denoiser input must be [B, " + std::to_string(c.image_channels) + ", " +
                                    std::to_string(c.image_size) + ", " + std::to_string(c.image_size) + "], got " +
                                    shape_str(xv.shape));
    }
    const int batch = xv.dim(0);
    if (static_cast<int>(timesteps.size()) != batch || static_cast<int>(tokens.size()) != batch) {
        throw std::invalid_argument("denoiser needs one timestep and one token sequence per batch item");
    }
    const bool inference = !grad_enabled();
    if ((hook || taps) && !inference) throw std::logic_error("attention hooks and taps are inference-only");
    if (taps) {
        taps->self_attention.assign(layers_.size(), {});
        taps->cross_attention.assign(layers_.size(), Tensor{});
    }

    std::vector<TokenSeq> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) ids.push_back(Vocabulary::instance().padded(t));

    Var temb = m.time2(ops::silu(m.time1(constant(sinusoid(timesteps, c.time_dim / 2)))));
    temb = ops::silu(temb);
    const Var context = ops::add_positional(ops::embedding(m.token_table, ids), m.token_pos);

    auto attend = [&](const Var& h, int index) {
        const AttnBlock& blk = m.attn[static_cast<size_t>(index)];
        const int hh = h->value.dim(2), ww = h->value.dim(3);
        const Var tok = ops::to_tokens(blk.n_self(h));
        const Var q = blk.q(tok), k = blk.k(tok), v = blk.v(tok);
        const Var a = inference ? self_attention_inference(blk, q, k, v, hook, taps)
                                : ops::attention(q, k, v, blk.info.heads);
        Var out = ops::add(h, ops::from_tokens(blk.o(a), hh, ww));

        const Var ctok = ops::to_tokens(blk.n_cross(out));
        const Var cq = blk.cq(ctok), ck = blk.ck(context), cv = blk.cv(context);
        const Var ca = inference ? cross_attention_inference(blk, cq, ck, cv, taps)
                                 : ops::attention(cq, ck, cv, blk.info.heads);
        return ops::add(out, ops::from_tokens(blk.co(ca), hh, ww));
    };

    const Var h0 = m.conv_in(x);
    Var h = m.enc16(m.down1(h0), temb);
    h = attend(h, 0);
    h = attend(h, 1);
    const Var skip16 = h;
    h = m.enc8(m.down2(h), temb);
    h = attend(h, 2);
    h = attend(h, 3);
    const Var skip8 = h;
    h = m.mid(h, temb);
    h = m.dec8(ops::concat_channels(h, skip8), temb);
    h = attend(h, 4);
    h = attend(h, 5);
    h = m.dec16(ops::concat_channels(ops::upsample2x(h), skip16), temb);
    h = attend(h, 6);
    h = attend(h, 7);
    h = ops::upsample2x(m.lift(h));
    h = ops::silu(m.fuse(ops::concat_channels(h, h0)));
    return m.conv_out(ops::silu(m.out_norm(h)));
}

}  // namespace mcactrl
