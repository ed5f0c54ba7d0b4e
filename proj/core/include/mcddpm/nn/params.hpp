#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "mcddpm/nn/graph.hpp"
#include "mcddpm/random.hpp"
#include "mcddpm/tensor.hpp"

namespace mcddpm::nn {

/// Named parameter collection. Entry order is registration order and is the
/// canonical order for checkpoints and optimizer state.
template <typename S>
class ParamStore {
public:
    struct Entry {
        std::string name;
        Tensor<S> value;
        Tensor<S> grad;
    };

    int add(std::string name, Tensor<S> init) {
        if (index_.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
        Entry e;
        e.name = std::move(name);
        e.grad = Tensor<S>::zeros(init.shape);
        e.value = std::move(init);
        entries_.push_back(std::move(e));
        index_[entries_.back().name] = static_cast<int>(entries_.size()) - 1;
        return static_cast<int>(entries_.size()) - 1;
    }

    int size() const { return static_cast<int>(entries_.size()); }
    Entry& entry(int i) { return entries_[static_cast<std::size_t>(i)]; }
    const Entry& entry(int i) const { return entries_[static_cast<std::size_t>(i)]; }

    int find(const std::string& name) const {
        auto it = index_.find(name);
        return it == index_.end() ? -1 : it->second;
    }

    std::size_t total_count() const {
        std::size_t n = 0;
        for (const auto& e : entries_) n += e.value.numel();
        return n;
    }

    void zero_grads() {
        for (auto& e : entries_) std::fill(e.grad.data.begin(), e.grad.data.end(), S(0));
    }

    double grad_norm(int i) const {
        double s = 0.0;
        for (S v : entries_[static_cast<std::size_t>(i)].grad.data)
            s += static_cast<double>(v) * static_cast<double>(v);
        return std::sqrt(s);
    }

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, int> index_;
};

/// Per-graph lazy binding of store entries to tape leaves, so that only the
/// parameters actually used by a pass appear on the tape.
template <typename S>
class BoundParams {
public:
    BoundParams(Graph<S>& g, const ParamStore<S>& store)
        : g_(&g), store_(&store), handles_(static_cast<std::size_t>(store.size()), -1) {}

    typename Graph<S>::V operator[](int pid) {
        auto& h = handles_[static_cast<std::size_t>(pid)];
        if (h < 0) h = g_->param(&store_->entry(pid).value);
        return h;
    }

    /// Adds tape gradients into the store's grad buffers (sequential caller).
    void accumulate_grads(ParamStore<S>& store) const {
        for (int pid = 0; pid < store.size(); ++pid) {
            const auto h = handles_[static_cast<std::size_t>(pid)];
            if (h < 0) continue;
            const Tensor<S>* gr = g_->grad(h);
            if (!gr) continue;
            auto& dst = store.entry(pid).grad;
            for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += gr->data[i];
        }
    }

private:
    Graph<S>* g_;
    const ParamStore<S>* store_;
    std::vector<typename Graph<S>::V> handles_;
};

/// Kaiming-style normal init scaled by fan-in.
template <typename S>
Tensor<S> init_conv_weight(int cout, int cin, int k, RandomStream& rng) {
    Tensor<S> w({cout, cin, k, k});
    const double std = std::sqrt(2.0 / (static_cast<double>(cin) * k * k));
    for (auto& v : w.data) v = static_cast<S>(rng.gaussian() * std);
    return w;
}

template <typename S>
Tensor<S> init_linear_weight(int dout, int din, RandomStream& rng) {
    Tensor<S> w({dout, din});
    const double std = std::sqrt(2.0 / static_cast<double>(din));
    for (auto& v : w.data) v = static_cast<S>(rng.gaussian() * std);
    return w;
}

/// Adam with bias correction; state arrays align with store entry order.
template <typename S>
class Adam {
public:
    struct Config {
        double lr = 1e-5;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
    };

    Adam() = default;
    Adam(const ParamStore<S>& store, Config cfg) : cfg_(cfg) { attach(store); }

    void attach(const ParamStore<S>& store) {
        m_.clear();
        v_.clear();
        for (int i = 0; i < store.size(); ++i) {
            m_.push_back(Tensor<S>::zeros(store.entry(i).value.shape));
            v_.push_back(Tensor<S>::zeros(store.entry(i).value.shape));
        }
        step_ = 0;
    }

    void step(ParamStore<S>& store) {
        ++step_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
        for (int i = 0; i < store.size(); ++i) {
            auto& e = store.entry(i);
            auto& m = m_[static_cast<std::size_t>(i)];
            auto& v = v_[static_cast<std::size_t>(i)];
            for (std::size_t j = 0; j < e.value.data.size(); ++j) {
                const double gj = static_cast<double>(e.grad.data[j]);
                const double mj = cfg_.beta1 * static_cast<double>(m.data[j]) + (1.0 - cfg_.beta1) * gj;
                const double vj =
                    cfg_.beta2 * static_cast<double>(v.data[j]) + (1.0 - cfg_.beta2) * gj * gj;
                m.data[j] = static_cast<S>(mj);
                v.data[j] = static_cast<S>(vj);
                const double mhat = mj / bc1;
                const double vhat = vj / bc2;
                e.value.data[j] -= static_cast<S>(cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
            }
        }
    }

    long step_count() const { return step_; }
    Config& config() { return cfg_; }
    const Config& config() const { return cfg_; }

    int state_arrays() const { return static_cast<int>(m_.size()); }
    Tensor<S>& moment1(int i) { return m_[static_cast<std::size_t>(i)]; }
    Tensor<S>& moment2(int i) { return v_[static_cast<std::size_t>(i)]; }
    const Tensor<S>& moment1(int i) const { return m_[static_cast<std::size_t>(i)]; }
    const Tensor<S>& moment2(int i) const { return v_[static_cast<std::size_t>(i)]; }
    void set_step_count(long s) { step_ = s; }

private:
    Config cfg_;
    std::vector<Tensor<S>> m_, v_;
    long step_ = 0;
};

}  // namespace mcddpm::nn
