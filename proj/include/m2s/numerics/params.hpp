#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "m2s/numerics/tape.hpp"

namespace m2s {

/// Named, ordered collection of trainable matrices.
class ParameterStore {
public:
    using Index = std::size_t;

    Index add(std::string name, Matrix init) {
        if (index_.contains(name)) throw InvalidArgument("duplicate parameter name '" + name + "'");
        index_.emplace(name, values_.size());
        names_.push_back(std::move(name));
        values_.push_back(std::move(init));
        return values_.size() - 1;
    }

    std::size_t size() const { return values_.size(); }
    const std::string& name(Index i) const { return names_.at(i); }
    Matrix& operator[](Index i) { return values_[i]; }
    const Matrix& operator[](Index i) const { return values_[i]; }
    std::vector<Matrix>& values() { return values_; }
    const std::vector<Matrix>& values() const { return values_; }

    Index index_of(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw InvalidArgument("unknown parameter '" + name + "'");
        return it->second;
    }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& v : values_) n += static_cast<std::size_t>(v.size());
        return n;
    }

    /// Places every parameter on the tape, in store order.
    std::vector<Var> bind(Tape& tape, bool requires_grad = true) const {
        std::vector<Var> out;
        out.reserve(values_.size());
        for (const auto& v : values_) out.push_back(requires_grad ? tape.parameter(v) : tape.constant(v));
        return out;
    }

    /// Gradients of bound parameters, zero-filled where nothing flowed.
    std::vector<Matrix> gradients(const std::vector<Var>& bound) const {
        std::vector<Matrix> out;
        out.reserve(values_.size());
        for (std::size_t i = 0; i < values_.size(); ++i) {
            const Matrix& g = bound.at(i).grad();
            out.push_back(g.size() == 0 ? Matrix::Zero(values_[i].rows(), values_[i].cols()) : g);
        }
        return out;
    }

    bool same_layout(const ParameterStore& other) const {
        if (other.size() != size()) return false;
        for (std::size_t i = 0; i < size(); ++i) {
            if (names_[i] != other.names_[i] || values_[i].rows() != other.values_[i].rows() ||
                values_[i].cols() != other.values_[i].cols()) {
                return false;
            }
        }
        return true;
    }

    friend bool operator==(const ParameterStore& a, const ParameterStore& b) {
        return a.names_ == b.names_ && a.values_ == b.values_;
    }

private:
    std::vector<std::string> names_;
    std::vector<Matrix> values_;
    std::unordered_map<std::string, Index> index_;
};

/// Linear layer weights: W (fan_in x fan_out) and b (1 x fan_out), both
/// uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
struct LinearIndex {
    ParameterStore::Index weight;
    ParameterStore::Index bias;
};

inline LinearIndex add_linear(ParameterStore& store, const std::string& name, Eigen::Index fan_in,
                              Eigen::Index fan_out, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    LinearIndex idx;
    idx.weight = store.add(name + ".weight", uniform_matrix(fan_in, fan_out, bound, rng));
    idx.bias = store.add(name + ".bias", uniform_matrix(1, fan_out, bound, rng));
    return idx;
}

inline Var apply_linear(const Var& x, const std::vector<Var>& bound, LinearIndex idx) {
    return ad::linear(x, bound[idx.weight], bound[idx.bias]);
}

}  // namespace m2s
