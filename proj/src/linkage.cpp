#include "icce/linkage.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

#include "icce/error.hpp"

namespace icce {

std::vector<Merge> average_linkage(RowMatrix dist) {
  const auto n = static_cast<std::size_t>(dist.rows());
  if (dist.cols() != dist.rows()) throw Error("average_linkage: distance matrix must be square");
  std::vector<Merge> merges;
  if (n <= 1) return merges;
  merges.reserve(n - 1);

  std::vector<std::size_t> size(n, 1);
  std::vector<char> active(n, 1);
  std::vector<std::uint32_t> chain;
  chain.reserve(n);
  std::size_t remaining = n;
  std::size_t next_start = 0;

  while (remaining > 1) {
    if (chain.empty()) {
      while (!active[next_start]) ++next_start;
      chain.push_back(static_cast<std::uint32_t>(next_start));
    }
    const auto a = chain.back();
    const auto prev = chain.size() >= 2 ? static_cast<std::int64_t>(chain[chain.size() - 2]) : -1;
    double best = std::numeric_limits<double>::infinity();
    std::int64_t b = -1;
    if (prev >= 0) {
      best = dist(a, prev);
      b = prev;
    }
    for (std::size_t x = 0; x < n; ++x) {
      if (!active[x] || x == a) continue;
      const double dx = dist(a, x);
      if (dx < best || (b < 0)) {
        best = dx;
        b = static_cast<std::int64_t>(x);
      }
    }
    if (b == prev) {
      chain.pop_back();
      chain.pop_back();
      const auto keep = std::min<std::size_t>(a, static_cast<std::size_t>(b));
      const auto drop = std::max<std::size_t>(a, static_cast<std::size_t>(b));
      merges.push_back({static_cast<std::uint32_t>(keep), static_cast<std::uint32_t>(drop), best});
      const double sk = static_cast<double>(size[keep]);
      const double sd = static_cast<double>(size[drop]);
      for (std::size_t x = 0; x < n; ++x) {
        if (!active[x] || x == keep || x == drop) continue;
        const double v = (sk * dist(keep, x) + sd * dist(drop, x)) / (sk + sd);
        dist(keep, x) = v;
        dist(x, keep) = v;
      }
      size[keep] += size[drop];
      active[drop] = 0;
      --remaining;
    } else {
      chain.push_back(static_cast<std::uint32_t>(b));
    }
  }
  std::stable_sort(merges.begin(), merges.end(),
                   [](const Merge& x, const Merge& y) { return x.height < y.height; });
  return merges;
}

std::vector<std::uint32_t> cut_dendrogram(const std::vector<Merge>& merges, std::size_t n,
                                          std::size_t k) {
  if (k < 1 || k > n) throw Error("cut_dendrogram: need 1 <= k <= n");
  std::vector<std::uint32_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0U);
  auto find = [&parent](std::uint32_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  };
  const std::size_t apply = std::min(merges.size(), n - k);
  for (std::size_t i = 0; i < apply; ++i) {
    const auto ra = find(merges[i].a);
    const auto rb = find(merges[i].b);
    if (ra != rb) parent[std::max(ra, rb)] = std::min(ra, rb);
  }
  std::vector<std::uint32_t> ids(n);
  std::vector<std::int64_t> remap(n, -1);
  std::uint32_t next = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = find(static_cast<std::uint32_t>(i));
    if (remap[r] < 0) remap[r] = next++;
    ids[i] = static_cast<std::uint32_t>(remap[r]);
  }
  return ids;
}

}  // namespace icce
