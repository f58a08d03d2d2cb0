#include "icce/ensemble.hpp"

#include <algorithm>
#include <cmath>

#include "icce/error.hpp"
#include "icce/linkage.hpp"

namespace icce {

namespace {

void require_same_length(std::span<const Labeling> inputs, const char* who) {
  if (inputs.empty()) throw Error(std::string(who) + ": empty input list");
  for (const auto& l : inputs) {
    if (l.size() != inputs.front().size()) {
      throw Error(std::string(who) + ": labelings differ in length");
    }
  }
  if (inputs.front().empty()) throw Error(std::string(who) + ": empty labelings");
}

}  // namespace

ContingencyTable contingency(const Labeling& a, const Labeling& b) {
  if (a.size() != b.size()) {
    throw Error("contingency: labelings have lengths " + std::to_string(a.size()) + " and " +
                std::to_string(b.size()));
  }
  const auto da = dense(a);
  const auto db = dense(b);
  ContingencyTable t;
  t.rows = da.k;
  t.cols = db.k;
  t.n = a.size();
  t.counts.assign(t.rows * t.cols, 0);
  t.row_sums.assign(t.rows, 0);
  t.col_sums.assign(t.cols, 0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    ++t.counts[da.ids[i] * t.cols + db.ids[i]];
    ++t.row_sums[da.ids[i]];
    ++t.col_sums[db.ids[i]];
  }
  return t;
}

double mutual_information(const ContingencyTable& t) {
  const double n = static_cast<double>(t.n);
  double mi = 0.0;
  for (std::size_t h = 0; h < t.rows; ++h) {
    for (std::size_t l = 0; l < t.cols; ++l) {
      const auto c = t.at(h, l);
      if (c == 0) continue;
      const double nhl = static_cast<double>(c);
      mi += nhl * std::log(n * nhl / (static_cast<double>(t.row_sums[h]) *
                                      static_cast<double>(t.col_sums[l])));
    }
  }
  return mi;
}

double entropy_count(const Labeling& labeling) {
  const auto d = dense(labeling);
  std::vector<std::uint64_t> sizes(d.k, 0);
  for (const auto id : d.ids) ++sizes[id];
  const double n = static_cast<double>(labeling.size());
  double h = 0.0;
  for (const auto s : sizes) {
    const double ns = static_cast<double>(s);
    h += ns * std::log(ns / n);
  }
  return h;
}

double nmi(const Labeling& a, const Labeling& b) {
  // Fixed argument order so that nmi(a, b) == nmi(b, a) bit for bit.
  if (std::lexicographical_compare(b.ids().begin(), b.ids().end(), a.ids().begin(),
                                   a.ids().end())) {
    return nmi(b, a);
  }
  const auto t = contingency(a, b);
  if (t.rows < 2 || t.cols < 2) return 0.0;
  const double ha = entropy_count(a);
  const double hb = entropy_count(b);
  const double v = mutual_information(t) / std::sqrt(ha * hb);
  return std::clamp(v, 0.0, 1.0);
}

double anmi(const Labeling& candidate, std::span<const Labeling> inputs) {
  if (inputs.empty()) throw Error("anmi: empty input list");
  double s = 0.0;
  for (const auto& l : inputs) s += nmi(candidate, l);
  return s;
}

RowMatrix co_association(std::span<const Labeling> inputs) {
  require_same_length(inputs, "co_association");
  const auto n = static_cast<Eigen::Index>(inputs.front().size());
  RowMatrix s = RowMatrix::Zero(n, n);
  for (const auto& l : inputs) {
    const auto d = dense(l);
    std::vector<std::vector<Eigen::Index>> members(d.k);
    for (Eigen::Index i = 0; i < n; ++i) members[d.ids[static_cast<std::size_t>(i)]].push_back(i);
    for (const auto& group : members) {
      for (const auto i : group) {
        for (const auto j : group) s(i, j) += 1.0;
      }
    }
  }
  s /= static_cast<double>(inputs.size());
  return s;
}

Labeling cspa(std::span<const Labeling> inputs, std::size_t k) {
  require_same_length(inputs, "cspa");
  const std::size_t n = inputs.front().size();
  if (k < 1 || k > n) throw Error("cspa: need 1 <= k <= n");
  RowMatrix dist = co_association(inputs);
  dist = (1.0 - dist.array()).matrix();
  const auto merges = average_linkage(std::move(dist));
  auto ids = cut_dendrogram(merges, n, k);
  for (auto& id : ids) ++id;
  return Labeling(std::move(ids));
}

Labeling mcla(std::span<const Labeling> inputs, std::size_t k) {
  require_same_length(inputs, "mcla");
  const std::size_t n = inputs.front().size();
  if (k < 1) throw Error("mcla: need k >= 1");

  std::vector<DenseLabels> dl;
  std::vector<std::size_t> offset;  // first hyperedge index of each input
  std::size_t edges = 0;
  for (const auto& l : inputs) {
    offset.push_back(edges);
    dl.push_back(dense(l));
    edges += dl.back().k;
  }

  // Jaccard between hyperedges from pairwise contingency tables.
  RowMatrix dist = RowMatrix::Zero(static_cast<Eigen::Index>(edges),
                                   static_cast<Eigen::Index>(edges));
  for (std::size_t a = 0; a < inputs.size(); ++a) {
    for (std::size_t b = a; b < inputs.size(); ++b) {
      const auto t = contingency(inputs[a], inputs[b]);
      for (std::size_t h = 0; h < t.rows; ++h) {
        for (std::size_t l = 0; l < t.cols; ++l) {
          const double inter = static_cast<double>(t.at(h, l));
          const double uni = static_cast<double>(t.row_sums[h] + t.col_sums[l]) - inter;
          const double jd = 1.0 - inter / uni;
          const auto i = static_cast<Eigen::Index>(offset[a] + h);
          const auto j = static_cast<Eigen::Index>(offset[b] + l);
          dist(i, j) = jd;
          dist(j, i) = jd;
        }
      }
    }
  }
  const std::size_t meta_k = std::min(k, edges);
  const auto meta = cut_dendrogram(average_linkage(std::move(dist)), edges, meta_k);
  std::vector<double> meta_size(meta_k, 0.0);
  for (const auto m : meta) meta_size[m] += 1.0;

  std::vector<std::uint32_t> ids(n);
  std::vector<double> votes(meta_k);
  for (std::size_t s = 0; s < n; ++s) {
    std::fill(votes.begin(), votes.end(), 0.0);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      votes[meta[offset[i] + dl[i].ids[s]]] += 1.0;
    }
    std::size_t best = 0;
    double best_v = -1.0;
    for (std::size_t m = 0; m < meta_k; ++m) {
      const double v = votes[m] / meta_size[m];
      if (v > best_v) {
        best_v = v;
        best = m;
      }
    }
    ids[s] = static_cast<std::uint32_t>(best);
  }
  return canonicalize(Labeling(std::move(ids)));
}

ConsensusResult supra_consensus(std::span<const Labeling> inputs, std::size_t k,
                                std::span<const Labeling> extra_candidates) {
  require_same_length(inputs, "supra_consensus");
  ConsensusResult r;
  r.candidates.push_back(cspa(inputs, k));
  r.names.emplace_back("cspa");
  r.candidates.push_back(mcla(inputs, k));
  r.names.emplace_back("mcla");
  for (std::size_t i = 0; i < extra_candidates.size(); ++i) {
    if (extra_candidates[i].size() != inputs.front().size()) {
      throw Error("supra_consensus: extra candidate length mismatch");
    }
    r.candidates.push_back(extra_candidates[i]);
    r.names.push_back("extra" + std::to_string(i));
  }
  for (const auto& c : r.candidates) r.anmi.push_back(anmi(c, inputs));
  r.chosen = 0;
  for (std::size_t i = 1; i < r.anmi.size(); ++i) {
    if (r.anmi[i] > r.anmi[r.chosen]) r.chosen = i;
  }
  r.labeling = r.candidates[r.chosen];
  return r;
}

}  // namespace icce
