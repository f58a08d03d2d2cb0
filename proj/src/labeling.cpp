#include "icce/labeling.hpp"

#include <charconv>
#include <fstream>
#include <string>
#include <unordered_map>

#include "icce/binary_io.hpp"
#include "icce/error.hpp"

namespace icce {

std::size_t Labeling::num_clusters() const { return dense(*this).k; }

DenseLabels dense(const Labeling& labeling) {
  DenseLabels out;
  out.ids.reserve(labeling.size());
  std::unordered_map<std::uint32_t, std::uint32_t> remap;
  for (const auto id : labeling.ids()) {
    auto [it, inserted] =
        remap.try_emplace(id, static_cast<std::uint32_t>(remap.size()));
    out.ids.push_back(it->second);
  }
  out.k = remap.size();
  return out;
}

Labeling canonicalize(const Labeling& labeling) {
  auto d = dense(labeling);
  for (auto& id : d.ids) {
    ++id;
  }
  return Labeling(std::move(d.ids));
}

void save_labeling(const Labeling& labeling, const std::filesystem::path& path) {
  io::BinaryWriter w(path);
  w.magic("LBL1");
  w.u32(static_cast<std::uint32_t>(labeling.size()));
  for (const auto id : labeling.ids()) {
    w.u32(id);
  }
  w.close();
}

void save_labeling_text(const Labeling& labeling,
                        const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) {
    throw Error("cannot open " + path.string() + " for writing");
  }
  for (const auto id : labeling.ids()) {
    out << id << '\n';
  }
}

namespace {

Labeling load_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw LoadError("cannot open " + path.string());
  }
  std::vector<std::uint32_t> ids;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') {
      line.pop_back();
    }
    if (line.empty()) {
      continue;
    }
    std::uint32_t v = 0;
    const auto* end = line.data() + line.size();
    auto [ptr, ec] = std::from_chars(line.data(), end, v);
    if (ec != std::errc() || ptr != end) {
      throw LoadError(path.string() + ": bad label at line " +
                      std::to_string(row));
    }
    ids.push_back(v);
  }
  return Labeling(std::move(ids));
}

}  // namespace

Labeling load_labeling(const std::filesystem::path& path) {
  {
    std::ifstream probe(path, std::ios::binary);
    if (!probe) {
      throw LoadError("cannot open " + path.string());
    }
    char head[4] = {};
    probe.read(head, 4);
    if (probe.gcount() != 4 || std::string(head, 4) != "LBL1") {
      return load_text(path);
    }
  }
  io::BinaryReader r(path);
  r.expect_magic("LBL1");
  const auto n = r.u32();
  std::vector<std::uint32_t> ids(n);
  for (auto& id : ids) {
    id = r.u32();
  }
  if (!r.at_end()) {
    throw LoadError(path.string() + ": trailing bytes after labeling payload");
  }
  return Labeling(std::move(ids));
}

}  // namespace icce
