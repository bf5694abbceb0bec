#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "deeppce/error.hpp"

namespace deeppce {

/// Sorted, duplicate-free set of 0-based input variable indices.
class IndexSet {
 public:
  IndexSet() = default;
  IndexSet(std::initializer_list<int> indices) : IndexSet(std::vector<int>(indices)) {}
  explicit IndexSet(std::vector<int> indices) : indices_(std::move(indices)) {
    std::sort(indices_.begin(), indices_.end());
    require(std::adjacent_find(indices_.begin(), indices_.end()) == indices_.end(),
            ErrorCode::InvalidArgument, "index set contains duplicates");
  }

  static IndexSet all(int dim) {
    std::vector<int> v(static_cast<std::size_t>(dim));
    for (int i = 0; i < dim; ++i) v[static_cast<std::size_t>(i)] = i;
    return IndexSet(std::move(v));
  }

  bool contains(int i) const { return std::binary_search(indices_.begin(), indices_.end(), i); }
  bool empty() const noexcept { return indices_.empty(); }
  std::size_t size() const noexcept { return indices_.size(); }
  const std::vector<int>& indices() const noexcept { return indices_; }
  auto begin() const noexcept { return indices_.begin(); }
  auto end() const noexcept { return indices_.end(); }

  void check_range(int dim) const {
    for (int i : indices_) {
      require(i >= 0 && i < dim, ErrorCode::InvalidArgument,
              "variable index " + std::to_string(i + 1) + " out of range 1.." + std::to_string(dim));
    }
  }

 private:
  std::vector<int> indices_;
};

/// Variables fixed to observed values; every other variable stays random.
struct ConditionSpec {
  std::map<int, double> fixed;

  bool empty() const noexcept { return fixed.empty(); }
  bool contains(int i) const { return fixed.count(i) != 0; }

  IndexSet index_set() const {
    std::vector<int> v;
    for (const auto& [i, _] : fixed) v.push_back(i);
    return IndexSet(std::move(v));
  }

  void check_range(int dim) const { index_set().check_range(dim); }
};

}  // namespace deeppce
