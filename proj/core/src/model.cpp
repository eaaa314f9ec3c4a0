#include "deskmt/model.hpp"

#include "deskmt/error.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace deskmt::model {

using nn::Graph;
using nn::Var;

namespace {

std::string layer_prefix(const char* side, int i) {
    return std::string(side) + ".layers." + std::to_string(i) + ".";
}

void add_attention(nn::ParameterStore& ps, const std::string& prefix, std::size_t d) {
    for (const char* proj : {"q", "k", "v", "o"}) {
        ps.add(prefix + proj + ".weight", d, d);
        ps.add(prefix + proj + ".bias", 1, d);
    }
}

void add_norm(nn::ParameterStore& ps, const std::string& prefix, std::size_t d) {
    ps.add(prefix + ".gamma", 1, d);
    ps.add(prefix + ".beta", 1, d);
}

void add_ffn(nn::ParameterStore& ps, const std::string& prefix, std::size_t d, std::size_t ff) {
    ps.add(prefix + "fc1.weight", d, ff);
    ps.add(prefix + "fc1.bias", 1, ff);
    ps.add(prefix + "fc2.weight", ff, d);
    ps.add(prefix + "fc2.bias", 1, d);
}

bool ends_with(const std::string& s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

void put_u64_le(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
}

std::uint64_t get_u64_le(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
        v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    }
    return v;
}

constexpr char kMagic[8] = {'D', 'E', 'S', 'K', 'M', 'T', '0', '1'};

}  // namespace

// ---------------------------------------------------------------- shapes

void TransformerShape::validate() const {
    if (model_dim < 1 || ff_dim < 1 || heads < 1 || max_positions < 2) {
        throw InvalidArgument("transformer dimensions must be positive");
    }
    if (model_dim % heads != 0) {
        throw InvalidArgument("model_dim must be divisible by heads");
    }
    if (encoder_layers < 1 || decoder_layers < 1) {
        throw InvalidArgument("need at least one encoder and one decoder layer");
    }
}

nlohmann::ordered_json TransformerShape::to_json() const {
    return {{"model_dim", model_dim},         {"ff_dim", ff_dim},
            {"heads", heads},                 {"encoder_layers", encoder_layers},
            {"decoder_layers", decoder_layers}, {"max_positions", max_positions}};
}

TransformerShape TransformerShape::from_json(const nlohmann::json& j) {
    TransformerShape s;
    s.model_dim = j.value("model_dim", s.model_dim);
    s.ff_dim = j.value("ff_dim", s.ff_dim);
    s.heads = j.value("heads", s.heads);
    s.encoder_layers = j.value("encoder_layers", s.encoder_layers);
    s.decoder_layers = j.value("decoder_layers", s.decoder_layers);
    s.max_positions = j.value("max_positions", s.max_positions);
    s.validate();
    return s;
}

FreezeScope FreezeScope::parse(const std::string& text) {
    if (text.empty() || text == "none") {
        return {};
    }
    if (text == "decoder_only") {
        return {Kind::decoder_only, 0};
    }
    const std::string prefix = "last_k_decoder_layers:";
    if (text.rfind(prefix, 0) == 0) {
        try {
            const int k = std::stoi(text.substr(prefix.size()));
            if (k >= 1) {
                return {Kind::last_k_decoder_layers, k};
            }
        } catch (const std::exception&) {
        }
    }
    throw InvalidArgument("unknown freeze scope '" + text + "'");
}

std::string FreezeScope::str() const {
    switch (kind) {
        case Kind::none:
            return "none";
        case Kind::decoder_only:
            return "decoder_only";
        case Kind::last_k_decoder_layers:
            return "last_k_decoder_layers:" + std::to_string(k);
    }
    return "none";
}

bool FreezeScope::frozen(const std::string& name, const TransformerShape& shape) const {
    switch (kind) {
        case Kind::none:
            return false;
        case Kind::decoder_only:
            return name.rfind("decoder.", 0) == 0;
        case Kind::last_k_decoder_layers: {
            const int first = std::max(0, shape.decoder_layers - k);
            for (int i = first; i < shape.decoder_layers; ++i) {
                if (name.rfind(layer_prefix("decoder", i), 0) == 0) {
                    return true;
                }
            }
            return false;
        }
    }
    return false;
}

// ---------------------------------------------------------------- config

void TrainConfig::validate() const {
    auto fail = [](const std::string& what) { throw InvalidArgument("train config: " + what); };
    if (batch_size < 1) fail("batch_size must be >= 1");
    if (update_freq < 1) fail("update_freq must be >= 1");
    if (!(max_lr > 0.0)) fail("max_lr must be positive");
    if (schedule != "inverse_sqrt") fail("only the inverse_sqrt schedule is supported");
    if (warmup_steps < 1) fail("warmup_steps must be >= 1");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0)) fail("adam betas must lie in [0,1)");
    if (!(adam_eps > 0.0)) fail("adam_eps must be positive");
    if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) fail("label_smoothing must lie in [0,1)");
    if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
    if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0,1)");
    if (!(clip_norm >= 0.0)) fail("clip_norm must be >= 0");
    if (!(pair_temperature > 0.0)) fail("pair_temperature must be positive");
    if (max_updates < 1) fail("max_updates must be >= 1");
    if (valid_freq < 1) fail("valid_freq must be >= 1");
    if (beam_size < 1) fail("beam_size must be >= 1");
}

std::vector<std::string> TrainConfig::overrides() const {
    const TrainConfig d;
    std::vector<std::string> out;
    auto check = [&](const char* name, bool same) {
        if (!same) out.emplace_back(name);
    };
    check("batch_size", batch_size == d.batch_size);
    check("update_freq", update_freq == d.update_freq);
    check("max_lr", max_lr == d.max_lr);
    check("schedule", schedule == d.schedule);
    check("warmup_steps", warmup_steps == d.warmup_steps);
    check("adam_betas", adam_beta1 == d.adam_beta1 && adam_beta2 == d.adam_beta2);
    check("adam_eps", adam_eps == d.adam_eps);
    check("label_smoothing", label_smoothing == d.label_smoothing);
    check("weight_decay", weight_decay == d.weight_decay);
    check("dropout", dropout == d.dropout);
    check("clip_norm", clip_norm == d.clip_norm);
    check("pair_temperature", pair_temperature == d.pair_temperature);
    check("max_updates", max_updates == d.max_updates);
    check("valid_freq", valid_freq == d.valid_freq);
    check("beam_size", beam_size == d.beam_size);
    check("freeze_scope", freeze_scope == d.freeze_scope);
    return out;
}

nlohmann::ordered_json TrainConfig::to_json() const {
    nlohmann::ordered_json j;
    j["batch_size"] = batch_size;
    j["update_freq"] = update_freq;
    j["max_lr"] = max_lr;
    j["schedule"] = schedule;
    j["warmup_steps"] = warmup_steps;
    j["adam_betas"] = {adam_beta1, adam_beta2};
    j["adam_eps"] = adam_eps;
    j["label_smoothing"] = label_smoothing;
    j["weight_decay"] = weight_decay;
    j["dropout"] = dropout;
    j["clip_norm"] = clip_norm;
    j["pair_temperature"] = pair_temperature;
    j["max_updates"] = max_updates;
    j["valid_freq"] = valid_freq;
    j["beam_size"] = beam_size;
    j["seed"] = seed;
    j["freeze_scope"] = freeze_scope.str();
    return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.batch_size = j.value("batch_size", c.batch_size);
    c.update_freq = j.value("update_freq", c.update_freq);
    c.max_lr = j.value("max_lr", c.max_lr);
    c.schedule = j.value("schedule", c.schedule);
    c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
    if (j.contains("adam_betas")) {
        const auto betas = j.at("adam_betas").get<std::vector<double>>();
        if (betas.size() != 2) {
            throw InvalidArgument("adam_betas needs two values");
        }
        c.adam_beta1 = betas[0];
        c.adam_beta2 = betas[1];
    }
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.label_smoothing = j.value("label_smoothing", c.label_smoothing);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.dropout = j.value("dropout", c.dropout);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    c.pair_temperature = j.value("pair_temperature", c.pair_temperature);
    c.max_updates = j.value("max_updates", c.max_updates);
    c.valid_freq = j.value("valid_freq", c.valid_freq);
    c.beam_size = j.value("beam_size", c.beam_size);
    c.seed = j.value("seed", c.seed);
    c.freeze_scope = FreezeScope::parse(j.value("freeze_scope", std::string("none")));
    c.validate();
    return c;
}

TrainConfig TrainConfig::desk_profile() {
    TrainConfig c;
    c.batch_size = 16;
    c.max_lr = 0.005;
    c.warmup_steps = 100;
    c.dropout = 0.1;
    c.clip_norm = 1.0;
    c.max_updates = 2000;
    c.valid_freq = 200;
    return c;
}

double lr_at(long long step, const TrainConfig& config) {
    if (step < 1) {
        throw InvalidArgument("lr_at needs step >= 1");
    }
    const auto s = static_cast<double>(step);
    const auto w = static_cast<double>(config.warmup_steps);
    if (step <= config.warmup_steps) {
        return config.max_lr * (s / w);
    }
    return config.max_lr * std::sqrt(w / s);
}

// ---------------------------------------------------------------- transformer

struct Transformer::Bound {
    const nn::ParameterStore* store = nullptr;
    std::vector<Var> vars;

    Var operator()(const std::string& name) const { return vars[store->index_of(name)]; }
};

Transformer::Transformer(TransformerShape shape, std::size_t vocab_size) : shape_(shape), vocab_size_(vocab_size) {
    shape_.validate();
    if (vocab_size_ < 5) {
        throw InvalidArgument("vocabulary too small for a model");
    }
    const auto d = static_cast<std::size_t>(shape_.model_dim);
    const auto ff = static_cast<std::size_t>(shape_.ff_dim);
    const auto positions = static_cast<std::size_t>(shape_.max_positions);
    params_.add("embed.tokens", vocab_size_, d);
    params_.add("encoder.pos", positions, d);
    params_.add("decoder.pos", positions, d);
    for (int i = 0; i < shape_.encoder_layers; ++i) {
        const std::string p = layer_prefix("encoder", i);
        add_attention(params_, p + "self_attn.", d);
        add_norm(params_, p + "self_attn_norm", d);
        add_ffn(params_, p + "ffn.", d, ff);
        add_norm(params_, p + "ffn_norm", d);
    }
    add_norm(params_, "encoder.norm", d);
    for (int i = 0; i < shape_.decoder_layers; ++i) {
        const std::string p = layer_prefix("decoder", i);
        add_attention(params_, p + "self_attn.", d);
        add_norm(params_, p + "self_attn_norm", d);
        add_attention(params_, p + "cross_attn.", d);
        add_norm(params_, p + "cross_attn_norm", d);
        add_ffn(params_, p + "ffn.", d, ff);
        add_norm(params_, p + "ffn_norm", d);
    }
    add_norm(params_, "decoder.norm", d);
    for (auto& p : params_) {
        if (ends_with(p.name, ".gamma")) {
            std::fill(p.value.data.begin(), p.value.data.end(), 1.0);
        }
    }
}

double Transformer::init_bound(const std::string& name) const {
    const auto& p = params_.at(name);
    if (ends_with(name, ".gamma")) {
        return 1.0;
    }
    if (ends_with(name, ".bias") || ends_with(name, ".beta")) {
        return 0.0;
    }
    if (ends_with(name, ".weight")) {
        return std::sqrt(6.0 / static_cast<double>(p.value.rows + p.value.cols));
    }
    return std::sqrt(3.0 / static_cast<double>(shape_.model_dim));
}

void Transformer::init_random(std::uint64_t seed) {
    Rng rng(seed);
    for (auto& p : params_) {
        const double bound = init_bound(p.name);
        if (ends_with(p.name, ".gamma") || ends_with(p.name, ".bias") || ends_with(p.name, ".beta")) {
            std::fill(p.value.data.begin(), p.value.data.end(), bound);
            continue;
        }
        for (double& v : p.value.data) {
            v = rng.uniform(-bound, bound);
        }
    }
}

Transformer::Batch Transformer::make_batch(std::span<const codec::EncodedPair> pairs) {
    Batch b;
    b.size = pairs.size();
    for (const auto& p : pairs) {
        if (p.target.size() < 2) {
            throw ShapeMismatch("target sequence needs <s> and </s>");
        }
        b.src_len = std::max(b.src_len, p.source.size());
        b.tgt_len = std::max(b.tgt_len, p.target.size() - 1);
    }
    constexpr int pad = codec::Vocabulary::kPad;
    b.src.assign(b.size * b.src_len, pad);
    b.tgt_in.assign(b.size * b.tgt_len, pad);
    b.tgt_out.assign(b.size * b.tgt_len, pad);
    for (std::size_t i = 0; i < b.size; ++i) {
        const auto& p = pairs[i];
        std::copy(p.source.begin(), p.source.end(), b.src.begin() + static_cast<std::ptrdiff_t>(i * b.src_len));
        b.src_lengths.push_back(p.source.size());
        for (std::size_t t = 0; t + 1 < p.target.size(); ++t) {
            b.tgt_in[i * b.tgt_len + t] = p.target[t];
            b.tgt_out[i * b.tgt_len + t] = p.target[t + 1];
        }
    }
    return b;
}

Transformer::Bound Transformer::bind(Graph& g, bool with_grad) const {
    Bound b;
    b.store = &params_;
    b.vars.reserve(params_.size());
    for (const auto& p : params_) {
        // Gradients are only requested through the non-const forward().
        b.vars.push_back(g.parameter(p.value, with_grad ? const_cast<Tensor*>(&p.grad) : nullptr));
    }
    return b;
}

Var Transformer::run_encoder(Graph& g, const Bound& p, std::span<const int> src, std::size_t batch,
                             std::size_t len, const std::vector<std::uint8_t>& valid, double dropout,
                             Rng* rng) const {
    if (len > static_cast<std::size_t>(shape_.max_positions)) {
        throw ShapeMismatch("source length " + std::to_string(len) + " exceeds max_positions");
    }
    const double scale = std::sqrt(static_cast<double>(shape_.model_dim));
    std::vector<int> positions(batch * len);
    for (std::size_t i = 0; i < batch * len; ++i) {
        positions[i] = static_cast<int>(i % len);
    }
    auto drop = [&](Var v) { return rng != nullptr ? nn::dropout(g, v, dropout, *rng) : v; };
    Var x = nn::add(g, nn::embedding(g, p("embed.tokens"), src, scale), nn::embedding(g, p("encoder.pos"), positions));
    x = drop(x);
    const auto heads = static_cast<std::size_t>(shape_.heads);
    for (int i = 0; i < shape_.encoder_layers; ++i) {
        const std::string l = layer_prefix("encoder", i);
        Var h = nn::layer_norm(g, x, p(l + "self_attn_norm.gamma"), p(l + "self_attn_norm.beta"));
        Var q = nn::linear(g, h, p(l + "self_attn.q.weight"), p(l + "self_attn.q.bias"));
        Var k = nn::linear(g, h, p(l + "self_attn.k.weight"), p(l + "self_attn.k.bias"));
        Var v = nn::linear(g, h, p(l + "self_attn.v.weight"), p(l + "self_attn.v.bias"));
        Var a = nn::attention(g, q, k, v, {batch, len, len, heads, valid, false});
        a = nn::linear(g, a, p(l + "self_attn.o.weight"), p(l + "self_attn.o.bias"));
        x = nn::add(g, x, drop(a));
        h = nn::layer_norm(g, x, p(l + "ffn_norm.gamma"), p(l + "ffn_norm.beta"));
        Var f = nn::relu(g, nn::linear(g, h, p(l + "ffn.fc1.weight"), p(l + "ffn.fc1.bias")));
        f = nn::linear(g, f, p(l + "ffn.fc2.weight"), p(l + "ffn.fc2.bias"));
        x = nn::add(g, x, drop(f));
    }
    return nn::layer_norm(g, x, p("encoder.norm.gamma"), p("encoder.norm.beta"));
}

Var Transformer::run_decoder(Graph& g, const Bound& p, std::span<const int> tgt, std::size_t batch, std::size_t len,
                             const std::vector<Var>& cross_k, const std::vector<Var>& cross_v, std::size_t src_len,
                             const std::vector<std::uint8_t>& src_valid, double dropout, Rng* rng) const {
    if (len > static_cast<std::size_t>(shape_.max_positions)) {
        throw ShapeMismatch("target length " + std::to_string(len) + " exceeds max_positions");
    }
    const double scale = std::sqrt(static_cast<double>(shape_.model_dim));
    std::vector<int> positions(batch * len);
    for (std::size_t i = 0; i < batch * len; ++i) {
        positions[i] = static_cast<int>(i % len);
    }
    auto drop = [&](Var v) { return rng != nullptr ? nn::dropout(g, v, dropout, *rng) : v; };
    Var x = nn::add(g, nn::embedding(g, p("embed.tokens"), tgt, scale), nn::embedding(g, p("decoder.pos"), positions));
    x = drop(x);
    const auto heads = static_cast<std::size_t>(shape_.heads);
    for (int i = 0; i < shape_.decoder_layers; ++i) {
        const std::string l = layer_prefix("decoder", i);
        Var h = nn::layer_norm(g, x, p(l + "self_attn_norm.gamma"), p(l + "self_attn_norm.beta"));
        Var q = nn::linear(g, h, p(l + "self_attn.q.weight"), p(l + "self_attn.q.bias"));
        Var k = nn::linear(g, h, p(l + "self_attn.k.weight"), p(l + "self_attn.k.bias"));
        Var v = nn::linear(g, h, p(l + "self_attn.v.weight"), p(l + "self_attn.v.bias"));
        Var a = nn::attention(g, q, k, v, {batch, len, len, heads, {}, true});
        a = nn::linear(g, a, p(l + "self_attn.o.weight"), p(l + "self_attn.o.bias"));
        x = nn::add(g, x, drop(a));

        h = nn::layer_norm(g, x, p(l + "cross_attn_norm.gamma"), p(l + "cross_attn_norm.beta"));
        q = nn::linear(g, h, p(l + "cross_attn.q.weight"), p(l + "cross_attn.q.bias"));
        a = nn::attention(g, q, cross_k[static_cast<std::size_t>(i)], cross_v[static_cast<std::size_t>(i)],
                          {batch, len, src_len, heads, src_valid, false});
        a = nn::linear(g, a, p(l + "cross_attn.o.weight"), p(l + "cross_attn.o.bias"));
        x = nn::add(g, x, drop(a));

        h = nn::layer_norm(g, x, p(l + "ffn_norm.gamma"), p(l + "ffn_norm.beta"));
        Var f = nn::relu(g, nn::linear(g, h, p(l + "ffn.fc1.weight"), p(l + "ffn.fc1.bias")));
        f = nn::linear(g, f, p(l + "ffn.fc2.weight"), p(l + "ffn.fc2.bias"));
        x = nn::add(g, x, drop(f));
    }
    return nn::layer_norm(g, x, p("decoder.norm.gamma"), p("decoder.norm.beta"));
}

Var Transformer::logits_of(Graph& g, const Bound& p, const Batch& batch, double dropout, Rng* rng) const {
    if (batch.src.size() != batch.size * batch.src_len || batch.tgt_in.size() != batch.size * batch.tgt_len ||
        batch.tgt_out.size() != batch.tgt_in.size() ||
        (!batch.src_lengths.empty() && batch.src_lengths.size() != batch.size)) {
        throw ShapeMismatch("batch id matrices do not match their declared shape");
    }
    for (const auto* ids : {&batch.src, &batch.tgt_in, &batch.tgt_out}) {
        for (int id : *ids) {
            if (id < 0 || static_cast<std::size_t>(id) >= vocab_size_) {
                throw ShapeMismatch("token id " + std::to_string(id) + " outside vocabulary");
            }
        }
    }
    std::vector<std::uint8_t> src_valid(batch.src.size());
    for (std::size_t i = 0; i < batch.src.size(); ++i) {
        const std::size_t b = i / std::max<std::size_t>(batch.src_len, 1);
        src_valid[i] = batch.src_lengths.empty() ? (batch.src[i] != codec::Vocabulary::kPad ? 1 : 0)
                                                 : (i % batch.src_len < batch.src_lengths[b] ? 1 : 0);
    }
    const Var enc = run_encoder(g, p, batch.src, batch.size, batch.src_len, src_valid, dropout, rng);
    std::vector<Var> ck;
    std::vector<Var> cv;
    for (int i = 0; i < shape_.decoder_layers; ++i) {
        const std::string l = layer_prefix("decoder", i);
        ck.push_back(nn::linear(g, enc, p(l + "cross_attn.k.weight"), p(l + "cross_attn.k.bias")));
        cv.push_back(nn::linear(g, enc, p(l + "cross_attn.v.weight"), p(l + "cross_attn.v.bias")));
    }
    const Var dec =
        run_decoder(g, p, batch.tgt_in, batch.size, batch.tgt_len, ck, cv, batch.src_len, src_valid, dropout, rng);
    return nn::matmul_nt(g, dec, p("embed.tokens"));
}

Var Transformer::forward(Graph& g, const Batch& batch, double dropout, Rng* rng) {
    const Bound p = bind(g, g.requires_grad());
    return logits_of(g, p, batch, dropout, rng);
}

double Transformer::loss(const Batch& batch, double label_smoothing) const {
    Graph g(false);
    const Bound p = bind(g, false);
    const Var logits = logits_of(g, p, batch, 0.0, nullptr);
    return g.value(nn::label_smoothed_nll(g, logits, batch.tgt_out, label_smoothing, codec::Vocabulary::kPad)).data[0];
}

Transformer::Memory Transformer::encode(std::span<const int> src) const {
    for (int id : src) {
        if (id < 0 || static_cast<std::size_t>(id) >= vocab_size_) {
            throw ShapeMismatch("token id " + std::to_string(id) + " outside vocabulary");
        }
    }
    Graph g(false);
    const Bound p = bind(g, false);
    const std::vector<std::uint8_t> valid(src.size(), 1);
    const Var enc = run_encoder(g, p, src, 1, src.size(), valid, 0.0, nullptr);
    Memory m;
    m.src_len = src.size();
    m.states = g.value(enc);
    for (int i = 0; i < shape_.decoder_layers; ++i) {
        const std::string l = layer_prefix("decoder", i);
        m.cross_keys.push_back(g.value(nn::linear(g, enc, p(l + "cross_attn.k.weight"), p(l + "cross_attn.k.bias"))));
        m.cross_values.push_back(g.value(nn::linear(g, enc, p(l + "cross_attn.v.weight"), p(l + "cross_attn.v.bias"))));
    }
    return m;
}

std::vector<std::vector<double>> Transformer::next_logprobs(const Memory& memory,
                                                            const std::vector<std::vector<int>>& prefixes) const {
    if (prefixes.empty()) {
        return {};
    }
    const std::size_t len = prefixes.front().size();
    std::vector<int> flat;
    flat.reserve(prefixes.size() * len);
    for (const auto& pre : prefixes) {
        if (pre.size() != len || len == 0) {
            throw ShapeMismatch("prefixes must be nonempty and of equal length");
        }
        for (int id : pre) {
            if (id < 0 || static_cast<std::size_t>(id) >= vocab_size_) {
                throw ShapeMismatch("token id " + std::to_string(id) + " outside vocabulary");
            }
        }
        flat.insert(flat.end(), pre.begin(), pre.end());
    }
    Graph g(false);
    const Bound p = bind(g, false);
    std::vector<Var> ck;
    std::vector<Var> cv;
    for (std::size_t i = 0; i < memory.cross_keys.size(); ++i) {
        ck.push_back(g.parameter(memory.cross_keys[i], nullptr));
        cv.push_back(g.parameter(memory.cross_values[i], nullptr));
    }
    const std::vector<std::uint8_t> valid(memory.src_len, 1);
    const Var dec = run_decoder(g, p, flat, prefixes.size(), len, ck, cv, memory.src_len, valid, 0.0, nullptr);
    std::vector<std::size_t> last(prefixes.size());
    for (std::size_t b = 0; b < prefixes.size(); ++b) {
        last[b] = b * len + len - 1;
    }
    const Var logits = nn::matmul_nt(g, nn::select_rows(g, dec, last), p("embed.tokens"));
    const Tensor lp = nn::log_softmax(g.value(logits));
    std::vector<std::vector<double>> out(prefixes.size());
    for (std::size_t b = 0; b < prefixes.size(); ++b) {
        const auto row = lp.row(b);
        out[b].assign(row.begin(), row.end());
    }
    return out;
}

double label_smoothed_loss(const Tensor& logits, std::span<const int> targets, double epsilon, int pad_id) {
    if (!(epsilon >= 0.0 && epsilon < 1.0)) {
        throw InvalidArgument("label smoothing must lie in [0,1)");
    }
    Graph g(false);
    const Var l = g.parameter(logits, nullptr);
    return g.value(nn::label_smoothed_nll(g, l, targets, epsilon, pad_id)).data[0];
}

// ---------------------------------------------------------------- training

AdamState AdamState::zeros_like(const nn::ParameterStore& params) {
    AdamState s;
    for (const auto& p : params) {
        s.m.emplace_back(p.value.rows, p.value.cols);
        s.v.emplace_back(p.value.rows, p.value.cols);
    }
    return s;
}

StepMetrics train_step(TrainState& state, std::span<const Transformer::Batch> batches, const TrainConfig& config) {
    if (batches.empty()) {
        throw InvalidArgument("train_step needs at least one batch");
    }
    auto& params = state.model.params();
    if (state.adam.m.size() != params.size()) {
        state.adam = AdamState::zeros_like(params);
    }
    params.zero_grad();

    StepMetrics metrics;
    double loss_sum = 0.0;
    for (const auto& batch : batches) {
        Graph g;
        const Var logits = state.model.forward(g, batch, config.dropout, &state.rng);
        const Var loss = nn::label_smoothed_nll(g, logits, batch.tgt_out, config.label_smoothing, codec::Vocabulary::kPad);
        const double value = g.value(loss).data[0];
        if (!std::isfinite(value)) {
            params.zero_grad();
            throw NonFiniteLoss("loss " + std::to_string(value) + " at step " + std::to_string(state.step + 1));
        }
        loss_sum += value;
        for (int t : batch.tgt_out) {
            metrics.tokens += t != codec::Vocabulary::kPad ? 1 : 0;
        }
        g.backward(loss);
    }

    const auto& shape = state.model.shape();
    const double inv = 1.0 / static_cast<double>(batches.size());
    double sq = 0.0;
    std::vector<bool> trainable(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i];
        trainable[i] = !config.freeze_scope.frozen(p.name, shape);
        for (double& gval : p.grad.data) {
            gval = trainable[i] ? gval * inv : 0.0;
            sq += gval * gval;
        }
    }
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) {
        params.zero_grad();
        throw NonFiniteLoss("gradient norm is not finite at step " + std::to_string(state.step + 1));
    }
    metrics.grad_norm = norm;
    metrics.clipped_norm = norm;
    if (config.clip_norm > 0.0 && norm > config.clip_norm) {
        const double coef = config.clip_norm / norm;
        double clipped_sq = 0.0;
        for (auto& p : params) {
            for (double& gval : p.grad.data) {
                gval *= coef;
                clipped_sq += gval * gval;
            }
        }
        metrics.clipped_norm = std::sqrt(clipped_sq);
    }

    state.step += 1;
    const double lr = lr_at(state.step, config);
    const double bc1 = 1.0 - std::pow(config.adam_beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(config.adam_beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!trainable[i]) {
            continue;
        }
        auto& p = params[i];
        auto& m = state.adam.m[i].data;
        auto& v = state.adam.v[i].data;
        const double decay = 1.0 - lr * config.weight_decay;
        for (std::size_t j = 0; j < p.value.size(); ++j) {
            const double gval = p.grad.data[j];
            m[j] = config.adam_beta1 * m[j] + (1.0 - config.adam_beta1) * gval;
            v[j] = config.adam_beta2 * v[j] + (1.0 - config.adam_beta2) * gval * gval;
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            p.value.data[j] = p.value.data[j] * decay - lr * mhat / (std::sqrt(vhat) + config.adam_eps);
        }
    }

    metrics.step = state.step;
    metrics.loss = loss_sum * inv;
    metrics.lr = lr;
    return metrics;
}

// ---------------------------------------------------------------- checkpoints

std::string Checkpoint::id() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& p : state.model.params()) {
        h = fnv1a(p.name.data(), p.name.size(), h);
        h = fnv1a(p.value.data.data(), p.value.data.size() * sizeof(double), h);
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return "step-" + std::to_string(state.step) + "-" + std::string(buf, 8);
}

void Checkpoint::save(const std::filesystem::path& path) const {
    struct Entry {
        std::string name;
        const Tensor* tensor;
    };
    std::vector<Entry> entries;
    const auto& params = state.model.params();
    for (const auto& p : params) {
        entries.push_back({"param:" + p.name, &p.value});
    }
    const AdamState adam = state.adam.m.size() == params.size() ? state.adam : AdamState::zeros_like(params);
    for (std::size_t i = 0; i < params.size(); ++i) {
        entries.push_back({"adam_m:" + params[i].name, &adam.m[i]});
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        entries.push_back({"adam_v:" + params[i].name, &adam.v[i]});
    }

    nlohmann::ordered_json directory = nlohmann::ordered_json::array();
    std::uint64_t offset = 0;
    for (const auto& e : entries) {
        const std::uint64_t bytes = e.tensor->size() * 8;
        directory.push_back({{"name", e.name},
                             {"shape", {e.tensor->rows, e.tensor->cols}},
                             {"dtype", "f64"},
                             {"offset", offset},
                             {"bytes", bytes}});
        offset += bytes;
    }
    nlohmann::ordered_json header;
    header["format"] = "deskmt-checkpoint";
    header["version"] = 1;
    header["step"] = state.step;
    header["rng_state"] = state.rng.state();
    header["shape"] = shape.to_json();
    header["config"] = config.to_json();
    header["vocab_fingerprint"] = vocab.fingerprint();
    header["vocab"] = vocab.to_json();
    header["meta"] = meta;
    header["tensors"] = std::move(directory);
    const std::string header_text = header.dump();

    std::string blob;
    blob.reserve(16 + header_text.size() + offset);
    blob.append(kMagic, sizeof kMagic);
    put_u64_le(blob, header_text.size());
    blob += header_text;
    for (const auto& e : entries) {
        for (double v : e.tensor->data) {
            put_u64_le(blob, std::bit_cast<std::uint64_t>(v));
        }
    }
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) {
            throw IoError("cannot write " + tmp.string());
        }
        out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
        if (!out) {
            throw IoError("short write to " + tmp.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint Checkpoint::load(const std::filesystem::path& path, const std::optional<std::string>& expected_fingerprint) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    const std::string blob = ss.str();
    const auto* bytes = reinterpret_cast<const unsigned char*>(blob.data());
    if (blob.size() < 16 || std::memcmp(blob.data(), kMagic, sizeof kMagic) != 0) {
        throw IoError(path.string() + " is not a deskmt checkpoint");
    }
    const std::uint64_t header_len = get_u64_le(bytes + 8);
    if (16 + header_len > blob.size()) {
        throw IoError(path.string() + ": truncated header");
    }
    const auto header = nlohmann::json::parse(blob.substr(16, header_len));
    const std::size_t payload = 16 + header_len;

    codec::Vocabulary vocab = codec::Vocabulary::from_json(header.at("vocab"));
    const std::string fingerprint = header.at("vocab_fingerprint").get<std::string>();
    if (vocab.fingerprint() != fingerprint) {
        throw IncompatibleVocab(path.string() + ": embedded vocabulary does not match its fingerprint");
    }
    if (expected_fingerprint && *expected_fingerprint != fingerprint) {
        throw IncompatibleVocab(path.string() + ": vocabulary " + fingerprint + " != expected " + *expected_fingerprint);
    }
    const TransformerShape shape = TransformerShape::from_json(header.at("shape"));
    const TrainConfig config = TrainConfig::from_json(header.at("config"));

    Transformer model(shape, vocab.size());
    AdamState adam = AdamState::zeros_like(model.params());
    for (const auto& e : header.at("tensors")) {
        const std::string name = e.at("name").get<std::string>();
        const auto colon = name.find(':');
        const std::string kind = name.substr(0, colon);
        const std::string pname = name.substr(colon + 1);
        const std::size_t idx = model.params().index_of(pname);
        Tensor* dst = nullptr;
        if (kind == "param") {
            dst = &model.params()[idx].value;
        } else if (kind == "adam_m") {
            dst = &adam.m[idx];
        } else if (kind == "adam_v") {
            dst = &adam.v[idx];
        } else {
            throw IoError(path.string() + ": unknown tensor kind " + kind);
        }
        const auto dims = e.at("shape").get<std::vector<std::size_t>>();
        if (dims.size() != 2 || dims[0] != dst->rows || dims[1] != dst->cols || e.at("dtype") != "f64") {
            throw IoError(path.string() + ": tensor " + name + " has unexpected shape or dtype");
        }
        const std::uint64_t off = e.at("offset").get<std::uint64_t>();
        if (payload + off + dst->size() * 8 > blob.size()) {
            throw IoError(path.string() + ": truncated tensor " + name);
        }
        for (std::size_t i = 0; i < dst->size(); ++i) {
            dst->data[i] = std::bit_cast<double>(get_u64_le(bytes + payload + off + 8 * i));
        }
    }
    Rng rng;
    rng.set_state(header.at("rng_state").get<std::string>());
    Checkpoint ck{shape, config, std::move(vocab),
                  TrainState{std::move(model), std::move(adam), header.at("step").get<long long>(), rng},
                  nlohmann::ordered_json(header.at("meta"))};
    return ck;
}

Checkpoint init_random(const TransformerShape& shape, const codec::Vocabulary& vocab, std::uint64_t seed,
                       const TrainConfig& config) {
    Transformer model(shape, vocab.size());
    model.init_random(seed);
    AdamState adam = AdamState::zeros_like(model.params());
    return Checkpoint{shape, config, vocab, TrainState{std::move(model), std::move(adam), 0, Rng(seed)}, {}};
}

Checkpoint extend_embeddings(const Checkpoint& ckpt, const codec::Vocabulary& new_vocab, EmbeddingInit init) {
    const auto& old_symbols = ckpt.vocab.symbols();
    const auto& new_symbols = new_vocab.symbols();
    if (new_symbols.size() < old_symbols.size() ||
        !std::equal(old_symbols.begin(), old_symbols.end(), new_symbols.begin())) {
        throw IncompatibleVocab("new vocabulary does not extend the checkpoint vocabulary");
    }
    const auto& old_model = ckpt.state.model;
    Transformer model(ckpt.shape, new_vocab.size());
    AdamState adam = AdamState::zeros_like(model.params());
    const bool have_moments = ckpt.state.adam.m.size() == old_model.params().size();
    for (std::size_t i = 0; i < model.params().size(); ++i) {
        auto& dst = model.params()[i];
        const auto& src = old_model.params()[i];
        std::copy(src.value.data.begin(), src.value.data.end(), dst.value.data.begin());
        if (have_moments) {
            std::copy(ckpt.state.adam.m[i].data.begin(), ckpt.state.adam.m[i].data.end(), adam.m[i].data.begin());
            std::copy(ckpt.state.adam.v[i].data.begin(), ckpt.state.adam.v[i].data.end(), adam.v[i].data.begin());
        }
    }
    auto& table = model.params().at("embed.tokens").value;
    const std::size_t old_rows = old_symbols.size();
    std::vector<double> mean(table.cols, 0.0);
    for (std::size_t r = 0; r < old_rows; ++r) {
        for (std::size_t c = 0; c < table.cols; ++c) {
            mean[c] += table(r, c);
        }
    }
    for (double& m : mean) {
        m /= static_cast<double>(old_rows);
    }
    Rng rng(init.seed);
    for (std::size_t r = old_rows; r < table.rows; ++r) {
        for (std::size_t c = 0; c < table.cols; ++c) {
            table(r, c) = init.noise_std > 0.0 ? mean[c] + init.noise_std * rng.normal() : mean[c];
        }
    }
    Checkpoint out{ckpt.shape, ckpt.config, new_vocab,
                   TrainState{std::move(model), std::move(adam), ckpt.state.step, ckpt.state.rng}, ckpt.meta};
    return out;
}

}  // namespace deskmt::model
