#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "splitee/error.hpp"
#include "splitee/tensor.hpp"

namespace splitee::nn {

/// Named tensors iterated in lexicographic path order.
class ParameterSet {
public:
  using map_type = std::map<std::string, Tensor>;
  using iterator = map_type::iterator;
  using const_iterator = map_type::const_iterator;

  Tensor &add(const std::string &name, Tensor t) {
    auto [it, inserted] = items_.emplace(name, std::move(t));
    if (!inserted) throw invariant_error("duplicate parameter name '" + name + "'");
    return it->second;
  }

  bool contains(const std::string &name) const { return items_.count(name) != 0; }

  Tensor &at(const std::string &name) {
    auto it = items_.find(name);
    if (it == items_.end()) throw invariant_error("unknown parameter '" + name + "'");
    return it->second;
  }
  const Tensor &at(const std::string &name) const {
    auto it = items_.find(name);
    if (it == items_.end()) throw invariant_error("unknown parameter '" + name + "'");
    return it->second;
  }

  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }

  std::size_t total_numel() const {
    std::size_t n = 0;
    for (const auto &[_, t] : items_) n += t.numel();
    return n;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(items_.size());
    for (const auto &[k, _] : items_) out.push_back(k);
    return out;
  }

  void zero_grad() {
    for (auto &[_, t] : items_) t.zero_grad();
  }
  void drop_grad() {
    for (auto &[_, t] : items_) t.drop_grad();
  }

  iterator begin() { return items_.begin(); }
  iterator end() { return items_.end(); }
  const_iterator begin() const { return items_.begin(); }
  const_iterator end() const { return items_.end(); }

  friend bool operator==(const ParameterSet &a, const ParameterSet &b) {
    if (a.items_.size() != b.items_.size()) return false;
    for (auto ia = a.items_.begin(), ib = b.items_.begin(); ia != a.items_.end(); ++ia, ++ib) {
      if (ia->first != ib->first || ia->second.shape != ib->second.shape ||
          ia->second.values != ib->second.values)
        return false;
    }
    return true;
  }

private:
  map_type items_;
};

} // namespace splitee::nn
