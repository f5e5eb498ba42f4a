#pragma once

// Corpus ingestion (IDX, CSV), random-feature maps, moment summaries,
// random-teacher labels and single-Gaussian surrogates.

#include "gmix/model.hpp"

#include <nlohmann/json.hpp>

#include <Eigen/Eigenvalues>

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

namespace gmix {

class DataError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// IDX
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kIdxImages = 0x00000803;
inline constexpr std::uint32_t kIdxLabels = 0x00000801;

struct IdxFile {
  std::uint32_t magic = 0;
  std::vector<std::uint32_t> dims;
  std::vector<unsigned char> payload;
};

namespace detail {

inline std::vector<unsigned char> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t off,
                               const std::string& path) {
  if (off + 4 > b.size())
    throw DataError(path + ": truncated IDX header at byte offset " + std::to_string(off));
  return (std::uint32_t(b[off]) << 24) | (std::uint32_t(b[off + 1]) << 16) |
         (std::uint32_t(b[off + 2]) << 8) | std::uint32_t(b[off + 3]);
}

}  // namespace detail

/// Unsigned-byte IDX file (magic 0x0000080N, N dimensions, big-endian sizes).
inline IdxFile read_idx(const std::string& path) {
  const auto bytes = detail::read_bytes(path);
  IdxFile f;
  f.magic = detail::read_be32(bytes, 0, path);
  if ((f.magic >> 8) != 0x08 || (f.magic & 0xff) == 0)
    throw DataError(path + ": bad IDX magic at byte offset 0");
  const std::size_t ndim = f.magic & 0xff;
  std::size_t count = 1;
  for (std::size_t k = 0; k < ndim; ++k) {
    f.dims.push_back(detail::read_be32(bytes, 4 + 4 * k, path));
    count *= f.dims.back();
  }
  const std::size_t off = 4 + 4 * ndim;
  if (bytes.size() < off + count)
    throw DataError(path + ": truncated IDX payload at byte offset " + std::to_string(bytes.size()) +
                    " (expected " + std::to_string(off + count) + " bytes)");
  f.payload.assign(bytes.begin() + std::ptrdiff_t(off), bytes.begin() + std::ptrdiff_t(off + count));
  return f;
}

/// Image file: one row per image, pixels scaled by 1/255.
inline Matrix load_idx_images(const std::string& path) {
  const auto f = read_idx(path);
  if (f.magic != kIdxImages)
    throw DataError(path + ": expected image IDX magic 0x00000803 at byte offset 0");
  const Index n = f.dims[0];
  const Index cols = Index(f.dims[1]) * Index(f.dims[2]);
  Matrix X(n, cols);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < cols; ++j) X(i, j) = double(f.payload[std::size_t(i * cols + j)]) / 255.0;
  return X;
}

inline std::vector<int> load_idx_labels(const std::string& path) {
  const auto f = read_idx(path);
  if (f.magic != kIdxLabels)
    throw DataError(path + ": expected label IDX magic 0x00000801 at byte offset 0");
  return {f.payload.begin(), f.payload.end()};
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

/// Rectangular numeric CSV. Lines starting with '#' are skipped; rows are 1-based in errors.
inline Matrix load_csv_matrix(const std::string& path, bool has_header = false) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::vector<double> values;
  Index cols = -1, rows = 0, line_no = 0;
  std::string line;
  bool header_pending = has_header;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (header_pending) {
      header_pending = false;
      continue;
    }
    ++rows;
    Index c = 0;
    std::string_view rest(line);
    while (true) {
      const auto comma = rest.find(',');
      std::string_view cell = rest.substr(0, comma);
      while (!cell.empty() && cell.front() == ' ') cell.remove_prefix(1);
      while (!cell.empty() && cell.back() == ' ') cell.remove_suffix(1);
      if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (cell.empty() || ec != std::errc() || ptr != cell.data() + cell.size())
        throw DataError(path + ": non-numeric cell at row " + std::to_string(rows) + ", column " +
                        std::to_string(c + 1) + " (line " + std::to_string(line_no) + ")");
      values.push_back(v);
      ++c;
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (cols < 0) cols = c;
    if (c != cols)
      throw DataError(path + ": ragged row " + std::to_string(rows) + " has " + std::to_string(c) +
                      " columns, expected " + std::to_string(cols));
  }
  if (rows == 0) throw DataError(path + ": no data rows");
  Matrix M(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) M(i, j) = values[std::size_t(i * cols + j)];
  return M;
}

/// Shortest decimal that parses back to the same double.
inline std::string format_double(double x) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, ptr);
}

inline void save_csv_matrix(const std::string& path, const Matrix& M,
                            const std::string& header_comment = {}) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  if (!header_comment.empty()) out << header_comment << '\n';
  for (Index i = 0; i < M.rows(); ++i) {
    for (Index j = 0; j < M.cols(); ++j) {
      if (j) out << ',';
      out << format_double(M(i, j));
    }
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Random features
// ---------------------------------------------------------------------------

enum class Activation { Erf, Tanh, Sign };

inline Activation activation_from_string(const std::string& s) {
  if (s == "erf") return Activation::Erf;
  if (s == "tanh") return Activation::Tanh;
  if (s == "sign") return Activation::Sign;
  throw DomainError("unknown activation '" + s + "' (expected erf, tanh or sign)");
}

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::Erf: return "erf";
    case Activation::Tanh: return "tanh";
    default: return "sign";
  }
}

struct FeatureMapSpec {
  Index output_dim = 0;
  Activation activation = Activation::Erf;
  std::uint64_t seed = 0;
  bool standardize = true;
};

/// Projection F (d x d') with i.i.d. N(0,1) entries, drawn row by row.
inline Matrix feature_projection(const FeatureMapSpec& spec, Index input_dim) {
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal;
  Matrix F(spec.output_dim, input_dim);
  for (Index i = 0; i < F.rows(); ++i)
    for (Index j = 0; j < F.cols(); ++j) F(i, j) = normal(rng);
  return F;
}

/// Columnwise zero mean / unit variance; constant columns are only centered.
inline Matrix standardize_columns(const Matrix& raw) {
  Matrix Z = raw.rowwise() - raw.colwise().mean();
  for (Index j = 0; j < Z.cols(); ++j) {
    const double sd = std::sqrt(Z.col(j).squaredNorm() / double(Z.rows()));
    if (sd > 0.0) Z.col(j) /= sd;
  }
  return Z;
}

/// x = sigma(F w / sqrt(d')) per row.
inline Matrix apply_feature_map(const FeatureMapSpec& spec, const Matrix& raw) {
  if (spec.output_dim < 1) throw DomainError("feature map output_dim must be >= 1");
  if (raw.rows() < 1 || raw.cols() < 1) throw DimensionError("feature map input is empty");
  const Matrix Z = spec.standardize ? standardize_columns(raw) : raw;
  const Matrix F = feature_projection(spec, raw.cols());
  Matrix X = Z * F.transpose() / std::sqrt(double(raw.cols()));
  switch (spec.activation) {
    case Activation::Erf: X = X.unaryExpr([](double t) { return std::erf(t); }); break;
    case Activation::Tanh: X = X.unaryExpr([](double t) { return std::tanh(t); }); break;
    case Activation::Sign: X = X.unaryExpr([](double t) { return sign_pm(t); }); break;
  }
  return X;
}

// ---------------------------------------------------------------------------
// Moments, labels, surrogates
// ---------------------------------------------------------------------------

struct MomentSummary {
  Vector mean;
  Matrix covariance;  // centered, 1/n
  Index sample_count = 0;
};

inline MomentSummary moment_summary(const Matrix& X) {
  if (X.rows() < 2) throw DomainError("moment summary needs at least two rows");
  MomentSummary s;
  s.sample_count = X.rows();
  s.mean = X.colwise().mean().transpose();
  const Matrix C = X.rowwise() - s.mean.transpose();
  s.covariance = C.transpose() * C / double(X.rows());
  s.covariance = 0.5 * (s.covariance + s.covariance.transpose());
  return s;
}

struct SynthLabels {
  Vector y;
  Vector theta0;
};

/// theta0 ~ N(0, I_d) from teacher_seed, then y = theta0'x/sqrt(d) + sqrt(Delta) xi per row
/// (its sign for classification channels).
inline SynthLabels synth_labels(const Matrix& X, std::uint64_t teacher_seed, const TeacherChannel& channel) {
  const Index d = X.cols();
  std::mt19937_64 rng(teacher_seed);
  std::normal_distribution<double> normal;
  SynthLabels out;
  out.theta0.resize(d);
  for (Index j = 0; j < d; ++j) out.theta0[j] = normal(rng);
  const Vector tau = X * out.theta0 / std::sqrt(double(d));
  const double s = std::sqrt(channel.delta);
  out.y.resize(X.rows());
  for (Index i = 0; i < X.rows(); ++i) {
    const double field = tau[i] + s * normal(rng);
    out.y[i] = channel.is_classification() ? sign_pm(field) : field;
  }
  return out;
}

enum class SurrogateMode { Identity, Matched };

/// Identity: N(0, I). Matched: N(mean, Sigma_hat), mean stored as sqrt(d) * empirical mean
/// to follow the mu/sqrt(d) convention. A singular Sigma_hat gets a 1e-10 tr/d ridge.
inline MixtureModel gcm_surrogate(const MomentSummary& summary, const TeacherSpec& teacher,
                                  SurrogateMode mode) {
  const Index d = summary.mean.size();
  if (teacher.theta0.size() != d || summary.covariance.rows() != d)
    throw DimensionError("surrogate: summary and teacher dimensions differ");
  if (mode == SurrogateMode::Identity)
    return MixtureModel::gaussian(Vector::Zero(d), Covariance::isotropic(1.0));
  Matrix S = summary.covariance;
  Eigen::SelfAdjointEigenSolver<Matrix> es(S, Eigen::EigenvaluesOnly);
  if (!(es.eigenvalues().minCoeff() > 0.0))
    S.diagonal().array() += 1e-10 * std::max(S.trace() / double(d), 1e-300);
  return MixtureModel::gaussian(std::sqrt(double(d)) * summary.mean, Covariance::dense(S));
}

/// Mean as JSON, covariance as CSV.
inline void save_summary(const MomentSummary& s, const std::string& json_path, const std::string& csv_path,
                         const std::string& header_comment = {}) {
  nlohmann::json j;
  j["sample_count"] = s.sample_count;
  j["dimension"] = s.mean.size();
  j["mean"] = std::vector<double>(s.mean.data(), s.mean.data() + s.mean.size());
  j["covariance_csv"] = csv_path;
  std::ofstream out(json_path);
  if (!out) throw DataError("cannot write " + json_path);
  out << j.dump(2) << '\n';
  save_csv_matrix(csv_path, s.covariance, header_comment);
}

inline MomentSummary load_summary(const std::string& json_path, const std::string& csv_path) {
  std::ifstream in(json_path);
  if (!in) throw DataError("cannot open " + json_path);
  const auto j = nlohmann::json::parse(in);
  MomentSummary s;
  s.sample_count = j.at("sample_count").get<Index>();
  const auto m = j.at("mean").get<std::vector<double>>();
  s.mean = Eigen::Map<const Vector>(m.data(), Index(m.size()));
  s.covariance = load_csv_matrix(csv_path);
  if (s.covariance.rows() != s.mean.size() || s.covariance.cols() != s.mean.size())
    throw DataError(csv_path + ": covariance does not match mean dimension");
  return s;
}

/// Per class k: |mean_k - mean| / sqrt(tr Sigma_hat), the class-mean size relative to feature scale.
inline std::vector<std::pair<int, double>> class_mean_ratios(const Matrix& X, const std::vector<int>& labels) {
  if (Index(labels.size()) != X.rows()) throw DimensionError("labels/features length mismatch");
  const auto s = moment_summary(X);
  const double scale = std::sqrt(s.covariance.trace());
  std::vector<int> classes(labels);
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  std::vector<std::pair<int, double>> out;
  for (int k : classes) {
    Vector mk = Vector::Zero(X.cols());
    Index cnt = 0;
    for (Index i = 0; i < X.rows(); ++i)
      if (labels[std::size_t(i)] == k) {
        mk += X.row(i).transpose();
        ++cnt;
      }
    mk /= double(cnt);
    out.emplace_back(k, scale > 0.0 ? (mk - s.mean).norm() / scale : 0.0);
  }
  return out;
}

}  // namespace gmix
