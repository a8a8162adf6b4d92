#pragma once

#include "fseg/tensor/tensor.hpp"

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace fseg::nn {

/// Classification of a registered tensor; the federation strategies partition
/// parameter sets on these tags.
struct ParamTag {
    enum class Kind : std::uint8_t { Normalization, Other };
    enum class Mod : std::uint8_t { Shared, CT, MRI };
    enum class Role : std::uint8_t { Parameter, Statistic };

    Kind kind = Kind::Other;
    Mod modality = Mod::Shared;
    Role role = Role::Parameter;

    bool operator==(const ParamTag&) const = default;
};

inline ParamTag tag_other() { return {}; }
inline ParamTag tag_norm_param() {
    return {ParamTag::Kind::Normalization, ParamTag::Mod::Shared, ParamTag::Role::Parameter};
}
inline ParamTag tag_norm_stat() {
    return {ParamTag::Kind::Normalization, ParamTag::Mod::Shared, ParamTag::Role::Statistic};
}

/// Ordered name -> (tensor, tag) registry. Iteration order is insertion
/// order, which fixes the serialization and aggregation order. The tensors
/// are handles: a layer and the registry share storage, so loading values
/// through the registry updates the layer in place.
template <class S>
class ParamSet {
  public:
    struct Entry {
        std::string name;
        Tensor<S> tensor;
        ParamTag tag;
    };

    int version = 0;

    void add(std::string name, Tensor<S> tensor, ParamTag tag) {
        if (index_.count(name))
            throw std::invalid_argument("ParamSet: duplicate name '" + name + "'");
        // Statistics are definitionally normalization state.
        if (tag.role == ParamTag::Role::Statistic) tag.kind = ParamTag::Kind::Normalization;
        index_.emplace(name, entries_.size());
        entries_.push_back({std::move(name), std::move(tensor), tag});
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    const Entry& at(const std::string& name) const { return entries_[index_of(name)]; }
    Entry& at(const std::string& name) { return entries_[index_of(name)]; }

    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }

    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

    std::int64_t total_numel() const {
        std::int64_t n = 0;
        for (const auto& e : entries_) n += e.tensor.numel();
        return n;
    }

    /// Deep copy; tensors are detached value snapshots.
    ParamSet snapshot() const {
        ParamSet out;
        out.version = version;
        for (const auto& e : entries_) out.add(e.name, e.tensor.detach(), e.tag);
        return out;
    }

    /// Copies values from `src` into this set's tensors, in place (shared
    /// storage with the owning layers). Every entry of `src` must exist here
    /// with the same shape; entries absent from `src` are left untouched.
    void load_values(const ParamSet& src) {
        for (const auto& e : src.entries_) {
            auto& mine = at(e.name);
            if (mine.tensor.shape() != e.tensor.shape())
                throw ShapeError("load_values: shape mismatch for '" + e.name + "': " +
                                 shape_str(mine.tensor.shape()) + " vs " +
                                 shape_str(e.tensor.shape()));
            mine.tensor.values() = e.tensor.values();
        }
    }

    /// Disjoint split on a tag predicate; both halves preserve relative
    /// order, and together they hold every entry exactly once.
    template <class Pred>
    std::pair<ParamSet, ParamSet> partition(Pred&& pred) const {
        ParamSet yes, no;
        yes.version = version;
        no.version = version;
        for (const auto& e : entries_)
            (pred(e.tag) ? yes : no).add(e.name, e.tensor, e.tag);
        return {std::move(yes), std::move(no)};
    }

    void zero_grads() {
        for (auto& e : entries_)
            if (e.tag.role == ParamTag::Role::Parameter) e.tensor.zero_grad();
    }

    /// True when both sets have the same names, shapes and tags in the same
    /// order (values may differ).
    bool same_skeleton(const ParamSet& other) const {
        if (entries_.size() != other.entries_.size()) return false;
        for (std::size_t i = 0; i < entries_.size(); ++i) {
            const auto& a = entries_[i];
            const auto& b = other.entries_[i];
            if (a.name != b.name || a.tag != b.tag || a.tensor.shape() != b.tensor.shape())
                return false;
        }
        return true;
    }

  private:
    std::size_t index_of(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end())
            throw std::out_of_range("ParamSet: no entry named '" + name + "'");
        return it->second;
    }

    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

template <class S, class Pred>
std::pair<ParamSet<S>, ParamSet<S>> registry_partition(const ParamSet<S>& params, Pred&& pred) {
    return params.partition(std::forward<Pred>(pred));
}

}  // namespace fseg::nn
