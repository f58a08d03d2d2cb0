#include "icce/featstore.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <regex>

#include <Eigen/QR>

#include "icce/binary_io.hpp"
#include "icce/error.hpp"

namespace icce {

EmbeddingMatrix::EmbeddingMatrix(RowMatrix data) : data_(std::move(data)) {
  if (data_.rows() < 1 || data_.cols() < 1) {
    throw LoadError("embedding matrix must have n >= 1 and d >= 1");
  }
  for (Eigen::Index i = 0; i < data_.rows(); ++i) {
    if (!data_.row(i).allFinite()) {
      throw LoadError("non-finite value in row " + std::to_string(i));
    }
  }
}

FeatureFormat parse_feature_format(const std::string& name) {
  if (name == "featpack" || name == "fpk") return FeatureFormat::featpack;
  if (name == "csv") return FeatureFormat::csv;
  if (name == "npy") return FeatureFormat::npy;
  throw ConfigError("unknown feature format '" + name + "'");
}

FeatureFormat format_from_extension(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".csv") return FeatureFormat::csv;
  if (ext == ".npy") return FeatureFormat::npy;
  return FeatureFormat::featpack;
}

namespace {

void check_row_finite(const RowMatrix& m, Eigen::Index row,
                      const std::filesystem::path& path) {
  if (!m.row(row).allFinite()) {
    throw LoadError(path.string() + ": non-finite value in row " +
                    std::to_string(row));
  }
}

EmbeddingMatrix load_featpack(const std::filesystem::path& path) {
  io::BinaryReader r(path);
  r.expect_magic("FPK1");
  const auto n = r.u32();
  const auto d = r.u32();
  const auto dtype = r.u8();
  if (n == 0 || d == 0) {
    throw LoadError(path.string() + ": header declares an empty matrix");
  }
  if (dtype != 1 && dtype != 2) {
    throw LoadError(path.string() + ": unknown dtype tag " +
                    std::to_string(dtype));
  }
  RowMatrix m(n, d);
  for (std::uint32_t i = 0; i < n; ++i) {
    try {
      for (std::uint32_t j = 0; j < d; ++j) {
        m(i, j) = dtype == 1 ? static_cast<double>(r.f32()) : r.f64();
      }
    } catch (const LoadError&) {
      throw LoadError(path.string() + ": payload shorter than header (row " +
                      std::to_string(i) + ")");
    }
    check_row_finite(m, i, path);
  }
  if (!r.at_end()) {
    throw LoadError(path.string() + ": payload longer than header n*d");
  }
  return EmbeddingMatrix(std::move(m));
}

EmbeddingMatrix load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw LoadError("cannot open " + path.string());
  }
  std::vector<double> values;
  std::size_t cols = 0;
  std::size_t rows = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::size_t count = 0;
    const char* p = line.data();
    const char* end = p + line.size();
    while (true) {
      while (p < end && (*p == ' ' || *p == '\t')) ++p;
      double v = 0.0;
      auto [next, ec] = std::from_chars(p, end, v);
      if (ec != std::errc()) {
        throw LoadError(path.string() + ": unparsable value in row " +
                        std::to_string(rows));
      }
      if (!std::isfinite(v)) {
        throw LoadError(path.string() + ": non-finite value in row " +
                        std::to_string(rows));
      }
      values.push_back(v);
      ++count;
      p = next;
      while (p < end && (*p == ' ' || *p == '\t')) ++p;
      if (p == end) break;
      if (*p != ',') {
        throw LoadError(path.string() + ": bad separator in row " +
                        std::to_string(rows));
      }
      ++p;
    }
    if (rows == 0) {
      cols = count;
    } else if (count != cols) {
      throw LoadError(path.string() + ": row " + std::to_string(rows) +
                      " has " + std::to_string(count) + " columns, expected " +
                      std::to_string(cols));
    }
    ++rows;
  }
  if (rows == 0) {
    throw LoadError(path.string() + ": empty csv");
  }
  RowMatrix m = Eigen::Map<RowMatrix>(values.data(), static_cast<Eigen::Index>(rows),
                                      static_cast<Eigen::Index>(cols));
  return EmbeddingMatrix(std::move(m));
}

EmbeddingMatrix load_npy(const std::filesystem::path& path) {
  io::BinaryReader r(path);
  r.expect_magic("\x93NUMPY");
  const auto major = r.u8();
  const auto minor = r.u8();
  if (major != 1 || minor != 0) {
    throw LoadError(path.string() + ": only npy version 1.0 is supported");
  }
  const std::uint16_t header_len =
      static_cast<std::uint16_t>(r.u8() | (static_cast<std::uint16_t>(r.u8()) << 8));
  std::string header(header_len, '\0');
  r.read_bytes(header.data(), header_len);

  std::smatch match;
  static const std::regex descr_re(R"('descr'\s*:\s*'([^']*)')");
  static const std::regex order_re(R"('fortran_order'\s*:\s*(True|False))");
  static const std::regex shape_re(R"('shape'\s*:\s*\(\s*(\d+)\s*,\s*(\d*)\s*\))");
  if (!std::regex_search(header, match, descr_re)) {
    throw LoadError(path.string() + ": npy header lacks descr");
  }
  const std::string descr = match[1];
  if (descr != "<f4" && descr != "<f8") {
    throw LoadError(path.string() + ": unsupported dtype '" + descr +
                    "' (little-endian float32/float64 only)");
  }
  if (!std::regex_search(header, match, order_re) || match[1] != "False") {
    throw LoadError(path.string() + ": only C-order npy arrays are supported");
  }
  if (!std::regex_search(header, match, shape_re)) {
    throw LoadError(path.string() + ": npy shape must be 1-D or 2-D");
  }
  const auto n = std::stoull(match[1]);
  const auto d = match[2].length() == 0 ? 1ULL : std::stoull(match[2]);
  if (n == 0 || d == 0) {
    throw LoadError(path.string() + ": npy array is empty");
  }
  RowMatrix m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  const bool f32 = descr == "<f4";
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    try {
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        m(i, j) = f32 ? static_cast<double>(r.f32()) : r.f64();
      }
    } catch (const LoadError&) {
      throw LoadError(path.string() + ": npy payload shorter than shape (row " +
                      std::to_string(i) + ")");
    }
    check_row_finite(m, i, path);
  }
  if (!r.at_end()) {
    throw LoadError(path.string() + ": npy payload longer than shape");
  }
  return EmbeddingMatrix(std::move(m));
}

}  // namespace

EmbeddingMatrix load_features(const std::filesystem::path& path,
                              FeatureFormat format) {
  switch (format) {
    case FeatureFormat::featpack:
      return load_featpack(path);
    case FeatureFormat::csv:
      return load_csv(path);
    case FeatureFormat::npy:
      return load_npy(path);
  }
  throw LoadError("unknown feature format");
}

void save_features(const EmbeddingMatrix& features,
                   const std::filesystem::path& path, FeatpackDtype dtype) {
  io::BinaryWriter w(path);
  w.magic("FPK1");
  w.u32(static_cast<std::uint32_t>(features.rows()));
  w.u32(static_cast<std::uint32_t>(features.cols()));
  w.u8(static_cast<std::uint8_t>(dtype));
  const auto& m = features.data();
  if (dtype == FeatpackDtype::float64) {
    w.f64s(std::span<const double>(m.data(), static_cast<std::size_t>(m.size())));
  } else {
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      w.f32(static_cast<float>(m.data()[i]));
    }
  }
  w.close();
}

void save_features_csv(const EmbeddingMatrix& features,
                       const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) {
    throw Error("cannot open " + path.string() + " for writing");
  }
  out.precision(17);
  const auto& m = features.data();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) out << ',';
      out << m(i, j);
    }
    out << '\n';
  }
}

NormStats fit_standardizer(const EmbeddingMatrix& features, double momentum) {
  if (features.rows() < 2) {
    throw Error("fit_standardizer needs at least two rows");
  }
  const auto& m = features.data();
  NormStats s;
  s.momentum = momentum;
  s.mean = m.colwise().mean().transpose();
  s.var = (m.rowwise() - s.mean.transpose()).array().square().colwise().mean().transpose();
  for (Eigen::Index j = 0; j < s.var.size(); ++j) {
    if (s.var[j] < kVarianceEpsilon) {
      s.warnings.push_back("dimension " + std::to_string(j) +
                           " has near-zero variance; clamped to 1e-5");
      s.var[j] = kVarianceEpsilon;
    }
  }
  s.gamma = Eigen::VectorXd::Ones(s.mean.size());
  s.beta = Eigen::VectorXd::Zero(s.mean.size());
  return s;
}

RowMatrix normalize_only(const RowMatrix& features, const NormStats& stats) {
  if (static_cast<std::size_t>(features.cols()) != stats.dim()) {
    throw Error("standardizer dimension mismatch: features have " +
                std::to_string(features.cols()) + " columns, stats " +
                std::to_string(stats.dim()));
  }
  const Eigen::RowVectorXd inv_sd = stats.var.array().sqrt().inverse().transpose();
  return ((features.rowwise() - stats.mean.transpose()).array().rowwise() *
          inv_sd.array())
      .matrix();
}

RowMatrix apply_standardizer(const RowMatrix& features, const NormStats& stats) {
  RowMatrix z = normalize_only(features, stats);
  z.array().rowwise() *= stats.gamma.transpose().array();
  z.rowwise() += stats.beta.transpose();
  return z;
}

EmbeddingMatrix apply_standardizer(const EmbeddingMatrix& features,
                                   const NormStats& stats) {
  return EmbeddingMatrix(apply_standardizer(features.data(), stats));
}

std::pair<EmbeddingMatrix, Labeling> gen_synthetic(const SynthSpec& spec) {
  if (spec.n < 1 || spec.d < 1 || spec.k < 1 || spec.k > spec.n ||
      !(spec.separation > 0.0)) {
    throw ConfigError("invalid synthetic spec: need 1 <= k <= n, d >= 1, separation > 0");
  }
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto d = static_cast<Eigen::Index>(spec.d);
  const auto k = static_cast<Eigen::Index>(spec.k);

  Eigen::MatrixXd dirs(d, k);
  for (Eigen::Index j = 0; j < k; ++j) {
    for (Eigen::Index i = 0; i < d; ++i) {
      dirs(i, j) = normal(rng);
    }
  }
  if (k <= d) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(dirs);
    dirs = qr.householderQ() * Eigen::MatrixXd::Identity(d, k);
  } else {
    dirs.colwise().normalize();
  }
  const double radius =
      spec.separation * std::sqrt(static_cast<double>(spec.d)) / std::sqrt(2.0);

  std::vector<std::uint32_t> labels(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    labels[i] = static_cast<std::uint32_t>(i % spec.k) + 1;
  }
  std::shuffle(labels.begin(), labels.end(), rng);

  RowMatrix m(static_cast<Eigen::Index>(spec.n), d);
  for (std::size_t i = 0; i < spec.n; ++i) {
    const auto c = static_cast<Eigen::Index>(labels[i] - 1);
    for (Eigen::Index j = 0; j < d; ++j) {
      m(static_cast<Eigen::Index>(i), j) = radius * dirs(j, c) + normal(rng);
    }
  }
  return {EmbeddingMatrix(std::move(m)), Labeling(std::move(labels))};
}

}  // namespace icce
