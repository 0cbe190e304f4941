/*
 * Copyright 2026 The popr Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cmath>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "popr/error.hpp"

namespace popr {

// Distinct policy ids, best first.
class Ordering {
 public:
  Ordering() = default;
  explicit Ordering(std::vector<std::string> items) : items_(std::move(items)) {
    std::set<std::string> seen;
    for (const auto& id : items_)
      require(seen.insert(id).second, ErrorCode::kInvalidArgument,
              "ordering lists '" + id + "' twice");
  }

  const std::vector<std::string>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }

  // 1-based rank of every item.
  std::map<std::string, int> ranks() const {
    std::map<std::string, int> r;
    for (std::size_t i = 0; i < items_.size(); ++i)
      r[items_[i]] = static_cast<int>(i) + 1;
    return r;
  }

  // Items of this ordering that appear in `keep`, order preserved.
  Ordering restricted_to(const std::set<std::string>& keep) const {
    std::vector<std::string> out;
    for (const auto& id : items_)
      if (keep.count(id)) out.push_back(id);
    return Ordering(std::move(out));
  }

 private:
  std::vector<std::string> items_;
};

namespace detail {

inline void check_comparable(const Ordering& predicted, const Ordering& truth) {
  require(truth.size() >= 2, ErrorCode::kInvalidArgument,
          "ranking metrics need at least 2 items");
  require(std::set<std::string>(predicted.items().begin(),
                                predicted.items().end()) ==
              std::set<std::string>(truth.items().begin(), truth.items().end()),
          ErrorCode::kInvalidArgument,
          "predicted and true orderings contain different items");
}

}  // namespace detail

// Spearman's rank correlation for distinct integer ranks:
// 1 - 6 sum d_i^2 / (n (n^2 - 1)).
inline double srcc(const Ordering& predicted, const Ordering& truth) {
  detail::check_comparable(predicted, truth);
  const auto rp = predicted.ranks();
  const auto rt = truth.ranks();
  double sum_d2 = 0.0;
  for (const auto& [id, r] : rt) {
    const double d = rp.at(id) - r;
    sum_d2 += d * d;
  }
  const double n = static_cast<double>(truth.size());
  return 1.0 - 6.0 * sum_d2 / (n * (n * n - 1.0));
}

// NDCG with relevance n - rank_truth + 1 (n for the true best, 1 for the
// true worst), gains 2^rel - 1 and discount log2(position + 1).
inline double ndcg(const Ordering& predicted, const Ordering& truth) {
  detail::check_comparable(predicted, truth);
  const auto rt = truth.ranks();
  const int n = static_cast<int>(truth.size());
  auto dcg = [&](const Ordering& o) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) {
      const int rel = n - rt.at(o.items()[i]) + 1;
      s += (std::exp2(rel) - 1.0) / std::log2(i + 2.0);
    }
    return s;
  };
  return dcg(predicted) / dcg(truth);
}

}  // namespace popr
