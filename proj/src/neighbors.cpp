#include "icce/neighbors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "icce/binary_io.hpp"
#include "icce/error.hpp"
#include "icce/parallel.hpp"

namespace icce {

namespace {

// Plain sequential loops: build_neighbor_sets and cosine_similarity must
// agree bit-for-bit so that threshold membership is reproducible.
double dot(const double* u, const double* v, std::size_t d) {
  double s = 0.0;
  for (std::size_t i = 0; i < d; ++i) s += u[i] * v[i];
  return s;
}

double cosine_from(double uv, double nu, double nv) {
  return std::clamp(uv / (nu * nv), -1.0, 1.0);
}

}  // namespace

double cosine_similarity(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) {
    throw Error("cosine_similarity: length mismatch");
  }
  const double nu = std::sqrt(dot(u.data(), u.data(), u.size()));
  const double nv = std::sqrt(dot(v.data(), v.data(), v.size()));
  if (nu == 0.0 || nv == 0.0) {
    throw Error("cosine_similarity: zero-norm vector");
  }
  return cosine_from(dot(u.data(), v.data(), u.size()), nu, nv);
}

NeighborSets build_neighbor_sets(const EmbeddingMatrix& features, double theta,
                                 std::size_t k_min, std::size_t threads) {
  const std::size_t n = features.rows();
  const std::size_t d = features.cols();
  if (n < 2) throw Error("build_neighbor_sets needs n >= 2");
  if (k_min < 1) throw Error("build_neighbor_sets needs k_min >= 1");

  const double* base = features.data().data();
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    norms[i] = std::sqrt(dot(base + i * d, base + i * d, d));
    if (norms[i] == 0.0) {
      throw Error("build_neighbor_sets: sample " + std::to_string(i) +
                  " has a zero feature vector");
    }
  }

  NeighborSets out;
  out.theta = theta;
  out.k_min = k_min;
  out.sets.resize(n);
  const std::size_t floor = std::min(k_min, n - 1);

  parallel_for(n, threads, [&](std::size_t i) {
    std::vector<std::pair<double, std::uint32_t>> scored;
    scored.reserve(n - 1);
    const double* u = base + i * d;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double s = cosine_from(dot(u, base + j * d, d), norms[i], norms[j]);
      scored.emplace_back(s, static_cast<std::uint32_t>(j));
    }
    auto better = [](const auto& a, const auto& b) {
      return a.first > b.first || (a.first == b.first && a.second < b.second);
    };
    auto keep_end = std::partition(scored.begin(), scored.end(),
                                   [theta](const auto& p) { return p.first >= theta; });
    auto count = static_cast<std::size_t>(keep_end - scored.begin());
    if (count < floor) {
      std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(floor),
                        scored.end(), better);
      count = floor;
    } else {
      std::sort(scored.begin(), keep_end, better);
    }
    auto& set = out.sets[i];
    set.reserve(count);
    for (std::size_t r = 0; r < count; ++r) set.push_back(scored[r].second);
  });
  return out;
}

NeighborSets ground_truth_neighbors(const Labeling& labels) {
  const auto dl = dense(labels);
  std::vector<std::vector<std::uint32_t>> members(dl.k);
  for (std::size_t i = 0; i < dl.ids.size(); ++i) {
    members[dl.ids[i]].push_back(static_cast<std::uint32_t>(i));
  }
  NeighborSets out;
  out.theta = std::numeric_limits<double>::quiet_NaN();
  out.k_min = 0;
  out.sets.resize(labels.size());
  for (std::size_t i = 0; i < dl.ids.size(); ++i) {
    const auto& group = members[dl.ids[i]];
    auto& set = out.sets[i];
    set.reserve(group.size() - 1);
    for (const auto j : group) {
      if (j != i) set.push_back(j);
    }
  }
  return out;
}

NeighborStats neighbor_accuracy(const NeighborSets& sets, const Labeling& labels) {
  if (sets.size() != labels.size()) {
    throw Error("neighbor_accuracy: sets cover " + std::to_string(sets.size()) +
                " samples, labels " + std::to_string(labels.size()));
  }
  std::size_t pairs = 0;
  std::size_t agree = 0;
  NeighborStats st;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    if (sets[i].empty()) ++st.empty_sets;
    for (const auto j : sets[i]) {
      ++pairs;
      if (labels[j] == labels[i]) ++agree;
    }
  }
  if (pairs == 0) {
    throw Error("neighbor_accuracy: every neighbor set is empty");
  }
  st.avg_count = static_cast<double>(pairs) / static_cast<double>(sets.size());
  st.pair_accuracy = static_cast<double>(agree) / static_cast<double>(pairs);
  return st;
}

void save_neighbor_sets(const NeighborSets& sets, const std::filesystem::path& path) {
  io::BinaryWriter w(path);
  w.magic("NNS1");
  w.u32(static_cast<std::uint32_t>(sets.size()));
  for (const auto& s : sets.sets) {
    w.u32(static_cast<std::uint32_t>(s.size()));
    for (const auto j : s) w.u32(j);
  }
  w.close();
}

NeighborSets load_neighbor_sets(const std::filesystem::path& path) {
  io::BinaryReader r(path);
  r.expect_magic("NNS1");
  const auto n = r.u32();
  NeighborSets out;
  out.theta = std::numeric_limits<double>::quiet_NaN();
  out.sets.resize(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto count = r.u32();
    if (count >= n && n > 0) {
      throw LoadError(path.string() + ": sample " + std::to_string(i) +
                      " lists more neighbors than samples");
    }
    auto& s = out.sets[i];
    s.resize(count);
    for (auto& j : s) {
      j = r.u32();
      if (j >= n || j == i) {
        throw LoadError(path.string() + ": invalid neighbor index in sample " +
                        std::to_string(i));
      }
    }
  }
  if (!r.at_end()) {
    throw LoadError(path.string() + ": trailing bytes after neighbor sets");
  }
  return out;
}

}  // namespace icce
