// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "pmix/rng.hpp"

namespace pmix {

// Decoder-only transformer dimensions. One config is shared by a router
// ensemble or by the experts+dense pair of an experiment.
struct ModelConfig {
    std::uint32_t layers = 1;
    std::uint32_t hidden = 8;
    std::uint32_t heads = 1;
    std::uint32_t ffn = 32;
    std::uint32_t vocab = 257;
    std::uint32_t seq_len = 16;
    double rope_base = 10000.0;

    std::uint32_t head_dim() const { return hidden / heads; }

    void validate() const {
        if (layers < 1) throw std::invalid_argument("ModelConfig: layers must be >= 1");
        if (seq_len < 2) throw std::invalid_argument("ModelConfig: seq_len must be >= 2");
        if (vocab < 2) throw std::invalid_argument("ModelConfig: vocab must be >= 2");
        if (heads < 1 || hidden % heads != 0)
            throw std::invalid_argument("ModelConfig: hidden must be divisible by heads");
        if ((hidden / heads) % 2 != 0)
            throw std::invalid_argument("ModelConfig: head dimension must be even (rotary pairs)");
        if (ffn < hidden) throw std::invalid_argument("ModelConfig: ffn must be >= hidden");
        if (rope_base <= 1.0) throw std::invalid_argument("ModelConfig: rope_base must be > 1");
    }

    bool operator==(const ModelConfig&) const = default;
};

// All tensors of one model in a single flat buffer, plus a named-entry table
// describing the layout. Optimizer moments, gradients and checkpoints all
// reuse the same layout.
template <class T>
class ModelParams {
public:
    struct Entry {
        std::string name;
        std::size_t offset = 0;
        std::size_t size = 0;
        std::vector<std::size_t> dims;
        bool decay = true;  // weight decay applies (false for norm gains)
    };

    ModelParams() = default;

    explicit ModelParams(const ModelConfig& cfg) : config(cfg) {
        cfg.validate();
        const std::size_t H = cfg.hidden, V = cfg.vocab, F = cfg.ffn;
        add("embed", {V, H}, true);
        for (std::uint32_t l = 0; l < cfg.layers; ++l) {
            std::string p = "layer" + std::to_string(l) + ".";
            add(p + "wq", {H, H}, true);
            add(p + "wk", {H, H}, true);
            add(p + "wv", {H, H}, true);
            add(p + "wo", {H, H}, true);
            add(p + "w_up", {H, F}, true);
            add(p + "w_down", {F, H}, true);
            add(p + "g_att", {H}, false);
            add(p + "g_ffn", {H}, false);
        }
        add("g_final", {H}, false);
        add("w_out", {H, V}, true);
        flat.assign(total_, T(0));
    }

    ModelConfig config;
    std::vector<T> flat;

    const std::vector<Entry>& entries() const { return entries_; }
    std::size_t size() const { return total_; }

    T* data() { return flat.data(); }
    const T* data() const { return flat.data(); }

    T* tensor(const std::string& name) {
        return flat.data() + entry(name).offset;
    }
    const T* tensor(const std::string& name) const {
        return flat.data() + entry(name).offset;
    }

    const Entry& entry(const std::string& name) const {
        for (const auto& e : entries_) {
            if (e.name == name) return e;
        }
        throw std::invalid_argument("ModelParams: no tensor named " + name);
    }

    // hot-path accessors (offsets fixed by construction order)
    const T* embed() const { return flat.data() + entries_[0].offset; }
    T* embed() { return flat.data() + entries_[0].offset; }

    std::size_t layer_entry_index(std::uint32_t l, std::size_t which) const {
        // which: 0 wq, 1 wk, 2 wv, 3 wo, 4 w_up, 5 w_down, 6 g_att, 7 g_ffn
        return 1 + static_cast<std::size_t>(l) * 8 + which;
    }
    const T* layer_tensor(std::uint32_t l, std::size_t which) const {
        return flat.data() + entries_[layer_entry_index(l, which)].offset;
    }
    const T* g_final() const { return flat.data() + entries_[entries_.size() - 2].offset; }
    const T* w_out() const { return flat.data() + entries_[entries_.size() - 1].offset; }

    std::size_t offset_of(std::uint32_t l, std::size_t which) const {
        return entries_[layer_entry_index(l, which)].offset;
    }
    std::size_t g_final_offset() const { return entries_[entries_.size() - 2].offset; }
    std::size_t w_out_offset() const { return entries_[entries_.size() - 1].offset; }

    bool finite() const {
        for (const T& v : flat) {
            if (!std::isfinite(static_cast<double>(v))) return false;
        }
        return true;
    }

private:
    void add(const std::string& name, std::vector<std::size_t> dims, bool decay) {
        Entry e;
        e.name = name;
        e.dims = std::move(dims);
        e.size = 1;
        for (std::size_t d : e.dims) e.size *= d;
        e.offset = total_;
        e.decay = decay;
        total_ += e.size;
        entries_.push_back(std::move(e));
    }

    std::vector<Entry> entries_;
    std::size_t total_ = 0;
};

// Truncated-normal initialization: std 0.02 for embeddings and projections,
// the output projection scaled down by 1/sqrt(2L), gains at 1.
template <class T>
void init_params(ModelParams<T>& p, std::uint64_t seed) {
    const double base_std = 0.02;
    const double out_std = base_std / std::sqrt(2.0 * p.config.layers);
    std::size_t idx = 0;
    for (const auto& e : p.entries()) {
        Rng rng(mix_seed(seed, /*tag=*/1, idx++));
        T* t = p.data() + e.offset;
        if (!e.decay) {
            for (std::size_t i = 0; i < e.size; ++i) t[i] = T(1);
        } else {
            double stddev = (e.name == "w_out") ? out_std : base_std;
            for (std::size_t i = 0; i < e.size; ++i)
                t[i] = static_cast<T>(rng.next_trunc_normal(stddev));
        }
    }
}

template <class T>
std::size_t param_count(const ModelParams<T>& p) {
    return p.size();
}

}  // namespace pmix
