#pragma once

#include <cstring>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "autograd.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace vinsert::nn {

using ag::Tape;
using ag::Var;

struct Param {
    std::string name;
    Tensor value;
    Tensor grad;
    Tensor m, v;  // Adam moments, allocated on first update
    bool trainable = true;
};

struct ParamStore {
    std::vector<Param> params;
    std::unordered_map<std::string, int> by_name;

    int add(const std::string& name, Tensor init, bool trainable = true) {
        VINSERT_FATAL_CHECK(!by_name.count(name), "duplicate parameter '%s'", name.c_str());
        Param p;
        p.name = name;
        p.grad = Tensor(init.shape);
        p.value = std::move(init);
        p.trainable = trainable;
        params.push_back(std::move(p));
        by_name[name] = (int)params.size() - 1;
        return (int)params.size() - 1;
    }

    Param& operator[](int id) { return params[id]; }
    const Param& operator[](int id) const { return params[id]; }

    int find(const std::string& name) const {
        auto it = by_name.find(name);
        return it == by_name.end() ? -1 : it->second;
    }

    size_t n_values() const {
        size_t n = 0;
        for (auto& p : params) n += p.value.numel();
        return n;
    }

    void zero_grad() {
        for (auto& p : params) p.grad.fill(0.0f);
    }

    // merge one tape's gradients; call sequentially per tape for determinism
    void accumulate(const Tape& tape) {
        for (size_t pid = 0; pid < tape.param_grads.size(); pid++) {
            const Tensor& g = tape.param_grads[pid];
            if (g.empty()) continue;
            Tensor& dst = params[pid].grad;
            for (size_t i = 0; i < g.numel(); i++) dst[i] += g[i];
        }
    }

    double grad_norm() const {
        double acc = 0;
        for (auto& p : params) {
            if (!p.trainable) continue;
            for (float g : p.grad.data) acc += (double)g * g;
        }
        return std::sqrt(acc);
    }

    void scale_grad(float s) {
        for (auto& p : params)
            for (auto& g : p.grad.data) g *= s;
    }
};

// Binds parameters to a tape, one node per parameter per pass
struct Ctx {
    Tape& tape;
    ParamStore& store;
    std::vector<int> node_of;

    Ctx(Tape& t, ParamStore& s) : tape(t), store(s), node_of(s.params.size(), -1) {}

    Var p(int pid) {
        if (node_of[pid] < 0) node_of[pid] = tape.param(pid, store[pid].value).id;
        return Var{&tape, node_of[pid]};
    }
};

struct Adam {
    float beta1 = 0.9f, beta2 = 0.999f, eps = 1e-8f;
    long step_count = 0;

    void step(ParamStore& store, float lr) {
        step_count++;
        double bc1 = 1.0 - std::pow((double)beta1, (double)step_count);
        double bc2 = 1.0 - std::pow((double)beta2, (double)step_count);
        for (auto& p : store.params) {
            if (!p.trainable) continue;
            if (p.m.empty()) {
                p.m = Tensor(p.value.shape);
                p.v = Tensor(p.value.shape);
            }
            for (size_t i = 0; i < p.value.numel(); i++) {
                float g = p.grad[i];
                p.m[i] = beta1 * p.m[i] + (1 - beta1) * g;
                p.v[i] = beta2 * p.v[i] + (1 - beta2) * g * g;
                double mh = p.m[i] / bc1, vh = p.v[i] / bc2;
                p.value[i] -= (float)(lr * mh / (std::sqrt(vh) + eps));
            }
        }
    }
};

// ------------------------------------------------------------------- layers

inline Tensor he_init(std::vector<int> shape, int fan_in, Rng& rng) {
    return Tensor::randn(std::move(shape), rng, std::sqrt(2.0f / (float)fan_in));
}

struct LinearM {
    int w = -1, b = -1;
    void init(ParamStore& s, const std::string& name, int in, int out, Rng& rng, bool zero = false) {
        w = s.add(name + ".w", zero ? Tensor::zeros({out, in})
                                    : Tensor::randn({out, in}, rng, std::sqrt(1.0f / (float)in)));
        b = s.add(name + ".b", Tensor::zeros({out}));
    }
    Var fwd(Ctx& c, Var x) const { return ag::linear(x, c.p(w), c.p(b)); }
};

struct Conv2dM {
    int w = -1, b = -1, stride = 1;
    void init(ParamStore& s, const std::string& name, int cin, int cout, int k, Rng& rng,
              int stride_ = 1, bool zero = false) {
        stride = stride_;
        w = s.add(name + ".w", zero ? Tensor::zeros({cout, cin, k, k})
                                    : he_init({cout, cin, k, k}, cin * k * k, rng));
        b = s.add(name + ".b", Tensor::zeros({cout}));
    }
    Var fwd(Ctx& c, Var x) const { return ag::conv2d(x, c.p(w), c.p(b), stride); }
};

inline int gn_groups(int channels) {
    for (int g = std::min(8, channels); g >= 1; g--)
        if (channels % g == 0) return g;
    return 1;
}

struct GroupNormM {
    int g = -1, b = -1, groups = 8;
    void init(ParamStore& s, const std::string& name, int channels) {
        groups = gn_groups(channels);
        g = s.add(name + ".g", Tensor::full({channels}, 1.0f));
        b = s.add(name + ".b", Tensor::zeros({channels}));
    }
    Var fwd(Ctx& c, Var x) const { return ag::group_norm(x, c.p(g), c.p(b), groups); }
};

struct LayerNormM {
    int g = -1, b = -1;
    void init(ParamStore& s, const std::string& name, int dim) {
        g = s.add(name + ".g", Tensor::full({dim}, 1.0f));
        b = s.add(name + ".b", Tensor::zeros({dim}));
    }
    Var fwd(Ctx& c, Var x) const { return ag::layer_norm(x, c.p(g), c.p(b)); }
};

// pre-LN attention with residual; the output projection starts at zero so a
// fresh block is the identity
struct AttnBlockM {
    LayerNormM ln;
    LinearM wq, wk, wv, wo;
    int heads = 4;

    void init(ParamStore& s, const std::string& name, int dim, int ctx_dim, int heads_, Rng& rng) {
        heads = heads_;
        ln.init(s, name + ".ln", dim);
        wq.init(s, name + ".q", dim, dim, rng);
        wk.init(s, name + ".k", ctx_dim, dim, rng);
        wv.init(s, name + ".v", ctx_dim, dim, rng);
        wo.init(s, name + ".o", dim, dim, rng, /*zero=*/true);
    }

    // x: [G*Tq, D] grouped queries; ctx: [G*Tk, D] or shared [Tk, D]
    Var fwd(Ctx& c, Var x, Var ctx_tokens, int n_groups, bool shared_kv) const {
        Var h = ln.fwd(c, x);
        Var q = wq.fwd(c, h);
        Var k = wk.fwd(c, ctx_tokens);
        Var v = wv.fwd(c, ctx_tokens);
        Var o = ag::attention_g(q, k, v, heads, n_groups, shared_kv);
        return ag::add(x, wo.fwd(c, o));
    }

    Var fwd_self(Ctx& c, Var x, int n_groups) const {
        Var h = ln.fwd(c, x);
        Var q = wq.fwd(c, h);
        Var k = wk.fwd(c, h);
        Var v = wv.fwd(c, h);
        Var o = ag::attention_g(q, k, v, heads, n_groups, false);
        return ag::add(x, wo.fwd(c, o));
    }
};

struct ResBlockM {
    GroupNormM gn1, gn2;
    Conv2dM conv1, conv2, skip;
    LinearM emb;
    bool has_skip = false, has_emb = false;

    void init(ParamStore& s, const std::string& name, int cin, int cout, int emb_dim, Rng& rng) {
        gn1.init(s, name + ".gn1", cin);
        conv1.init(s, name + ".conv1", cin, cout, 3, rng);
        gn2.init(s, name + ".gn2", cout);
        conv2.init(s, name + ".conv2", cout, cout, 3, rng);
        if (cin != cout) {
            skip.init(s, name + ".skip", cin, cout, 1, rng);
            has_skip = true;
        }
        if (emb_dim > 0) {
            emb.init(s, name + ".emb", emb_dim, cout, rng);
            has_emb = true;
        }
    }

    // x: [N,C,H,W]; t_emb: [1, emb_dim] shared by all frames
    Var fwd(Ctx& c, Var x, Var t_emb) const {
        Var h = conv1.fwd(c, ag::silu(gn1.fwd(c, x)));
        if (has_emb && t_emb.valid()) {
            Var e = emb.fwd(c, ag::silu(t_emb));                       // [1, cout]
            h = ag::add_bias_ch(h, Var{e.tape, e.id});                 // broadcast over frames+space
        }
        h = conv2.fwd(c, ag::silu(gn2.fwd(c, h)));
        Var sk = has_skip ? skip.fwd(c, x) : x;
        return ag::add(h, sk);
    }
};

// sinusoidal embedding, DDPM-style: [sin(w_i t), cos(w_i t)]
inline Tensor sinusoidal_embedding(float t, int dim) {
    Tensor e({1, dim});
    int half = dim / 2;
    for (int i = 0; i < half; i++) {
        double freq = std::exp(-std::log(10000.0) * i / std::max(1, half - 1));
        e[i] = (float)std::sin(t * freq);
        e[half + i] = (float)std::cos(t * freq);
    }
    return e;
}

// --------------------------------------------------------------- checkpoint

// Single-file container: magic, little-endian u64 header length, JSON header
// {"config": ..., "params": [{"name","shape","offset"}...]}, raw float32 data.
inline void save_checkpoint(const std::string& path, const ParamStore& store,
                            const nlohmann::json& config) {
    nlohmann::json manifest = nlohmann::json::array();
    uint64_t offset = 0;
    for (auto& p : store.params) {
        manifest.push_back({{"name", p.name}, {"shape", p.value.shape}, {"offset", offset}});
        offset += p.value.numel() * sizeof(float);
    }
    nlohmann::json header = {{"config", config}, {"params", manifest}};
    std::string hs = header.dump();
    std::ofstream out(path, std::ios::binary);
    VINSERT_FATAL_CHECK(out.good(), "cannot open checkpoint '%s' for writing", path.c_str());
    out.write("VINSCKP1", 8);
    uint64_t hlen = hs.size();
    out.write(reinterpret_cast<const char*>(&hlen), 8);
    out.write(hs.data(), (std::streamsize)hs.size());
    for (auto& p : store.params)
        out.write(reinterpret_cast<const char*>(p.value.ptr()),
                  (std::streamsize)(p.value.numel() * sizeof(float)));
    VINSERT_FATAL_CHECK(out.good(), "write failed for checkpoint '%s'", path.c_str());
}

struct Checkpoint {
    nlohmann::json config;
    std::unordered_map<std::string, Tensor> tensors;
};

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    VINSERT_FATAL_CHECK(in.good(), "cannot open checkpoint '%s'", path.c_str());
    char magic[8];
    in.read(magic, 8);
    VINSERT_FATAL_CHECK(in.good() && std::memcmp(magic, "VINSCKP1", 8) == 0,
                        "'%s' is not a checkpoint file", path.c_str());
    uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), 8);
    std::string hs(hlen, '\0');
    in.read(hs.data(), (std::streamsize)hlen);
    nlohmann::json header = nlohmann::json::parse(hs);
    Checkpoint ck;
    ck.config = header["config"];
    for (auto& e : header["params"]) {
        Tensor t(e["shape"].get<std::vector<int>>());
        in.read(reinterpret_cast<char*>(t.ptr()), (std::streamsize)(t.numel() * sizeof(float)));
        VINSERT_FATAL_CHECK(in.good(), "truncated checkpoint '%s'", path.c_str());
        ck.tensors[e["name"].get<std::string>()] = std::move(t);
    }
    return ck;
}

// copy tensors by name into an already-built store; missing/mismatched -> fatal
inline void restore_params(ParamStore& store, const Checkpoint& ck, const std::string& prefix = "") {
    for (auto& p : store.params) {
        if (!prefix.empty() && p.name.rfind(prefix, 0) != 0) continue;
        auto it = ck.tensors.find(p.name);
        VINSERT_FATAL_CHECK(it != ck.tensors.end(), "checkpoint missing tensor '%s'", p.name.c_str());
        VINSERT_FATAL_CHECK(it->second.shape == p.value.shape, "checkpoint tensor '%s' shape %s != %s",
                            p.name.c_str(), it->second.shape_str().c_str(), p.value.shape_str().c_str());
        p.value = it->second;
    }
}

}  // namespace vinsert::nn
