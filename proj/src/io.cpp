#include "her/data.hpp"

#include "her/error.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_set>

namespace her {

namespace {

constexpr std::uint32_t kVersion = 1;

class ByteWriter {
 public:
  explicit ByteWriter(std::ostream& out) : out_(out) {}

  void raw(const char* bytes, std::size_t n) { out_.write(bytes, static_cast<std::streamsize>(n)); }

  void u8(std::uint8_t v) { raw(reinterpret_cast<const char*>(&v), 1); }

  void u32(std::uint32_t v) {
    std::array<char, 4> b{};
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
    raw(b.data(), b.size());
  }

  void u64(std::uint64_t v) {
    std::array<char, 8> b{};
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
    raw(b.data(), b.size());
  }

  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

 private:
  std::ostream& out_;
};

class ByteReader {
 public:
  ByteReader(std::istream& in, const char* what) : in_(in), what_(what) {
    const auto here = in_.tellg();
    if (here != std::streampos(-1)) {
      in_.seekg(0, std::ios::end);
      const auto end = in_.tellg();
      in_.seekg(here);
      if (end != std::streampos(-1)) remaining_ = static_cast<std::uint64_t>(end - here);
    }
  }

  std::uint64_t offset() const { return offset_; }

  // Fails early when the stream is known to be shorter than the payload
  // about to be read.
  void require(std::uint64_t bytes, const std::string& section) {
    if (remaining_ && bytes > *remaining_ - offset_)
      fail(ErrorCode::format_error,
           std::string(what_) + ": truncated " + section + " at byte offset " +
               std::to_string(offset_) + ": expected " + std::to_string(bytes) +
               " more bytes, found " + std::to_string(*remaining_ - offset_) + " (file length " +
               std::to_string(*remaining_) + ", expected " + std::to_string(offset_ + bytes) + ")");
  }

  void raw(char* dst, std::size_t n) {
    in_.read(dst, static_cast<std::streamsize>(n));
    const auto got = static_cast<std::size_t>(in_.gcount());
    if (got != n)
      fail(ErrorCode::format_error, std::string(what_) + ": unexpected end of data at byte offset " +
                                        std::to_string(offset_ + got) + " (needed " +
                                        std::to_string(n) + " bytes, got " + std::to_string(got) + ")");
    offset_ += n;
  }

  std::uint8_t u8() {
    char c = 0;
    raw(&c, 1);
    return static_cast<std::uint8_t>(c);
  }

  std::uint32_t u32() {
    std::array<unsigned char, 4> b{};
    raw(reinterpret_cast<char*>(b.data()), b.size());
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b[static_cast<std::size_t>(i)];
    return v;
  }

  std::uint64_t u64() {
    std::array<unsigned char, 8> b{};
    raw(reinterpret_cast<char*>(b.data()), b.size());
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[static_cast<std::size_t>(i)];
    return v;
  }

  double f64() { return std::bit_cast<double>(u64()); }
  float f32() { return std::bit_cast<float>(u32()); }

  void magic(const char (&expected)[5]) {
    const std::uint64_t at = offset_;
    std::array<char, 4> m{};
    raw(m.data(), m.size());
    if (std::memcmp(m.data(), expected, 4) != 0)
      fail(ErrorCode::format_error, std::string(what_) + ": bad magic at byte offset " +
                                        std::to_string(at) + ", expected \"" + expected + "\"");
  }

  void version() {
    const std::uint64_t at = offset_;
    const std::uint32_t v = u32();
    if (v != kVersion)
      fail(ErrorCode::format_error, std::string(what_) + ": unsupported version " +
                                        std::to_string(v) + " at byte offset " + std::to_string(at));
  }

  // Guard against sizes whose product overflows before it reaches require().
  static std::uint64_t checked_mul(std::uint64_t a, std::uint64_t b, const char* what) {
    if (a != 0 && b > std::numeric_limits<std::uint64_t>::max() / a)
      fail(ErrorCode::format_error, std::string(what) + ": size fields overflow");
    return a * b;
  }

 private:
  std::istream& in_;
  const char* what_;
  std::uint64_t offset_ = 0;
  std::optional<std::uint64_t> remaining_;
};

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io_error, "cannot open '" + path.string() + "' for reading");
  return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::io_error, "cannot open '" + path.string() + "' for writing");
  return out;
}

void finish(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) fail(ErrorCode::io_error, "write to '" + path.string() + "' failed");
}

}  // namespace

void write_features(const FeatureMatrix& features, std::ostream& out, Dtype dtype) {
  features.validate();
  ByteWriter w(out);
  w.raw("HERF", 4);
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(dtype));
  w.u64(static_cast<std::uint64_t>(features.dim()));
  w.u64(static_cast<std::uint64_t>(features.size()));
  const double* v = features.values.data();
  const auto count = static_cast<std::size_t>(features.values.size());
  for (std::size_t i = 0; i < count; ++i) {
    if (dtype == Dtype::f64)
      w.f64(v[i]);
    else
      w.f32(static_cast<float>(v[i]));
  }
  for (IdentityId l : features.labels) w.u32(l);
  for (View view : features.views) w.u8(static_cast<std::uint8_t>(view));
}

FeatureMatrix read_features(std::istream& in) {
  ByteReader r(in, "HERF");
  r.require(kFeatureHeaderBytes, "header");
  r.magic("HERF");
  r.version();
  const std::uint64_t dtype_at = r.offset();
  const std::uint32_t dtype = r.u32();
  if (dtype > 1)
    fail(ErrorCode::format_error,
         "HERF: unknown dtype " + std::to_string(dtype) + " at byte offset " + std::to_string(dtype_at));
  const std::uint64_t d = r.u64();
  const std::uint64_t n = r.u64();
  if (d == 0 || n == 0) fail(ErrorCode::format_error, "HERF: zero feature dimension or sample count");

  const std::uint64_t width = dtype == 1 ? 8 : 4;
  const std::uint64_t values = ByteReader::checked_mul(d, n, "HERF");
  const std::uint64_t payload = ByteReader::checked_mul(values, width, "HERF");
  r.require(payload + ByteReader::checked_mul(n, 5, "HERF"), "payload");

  FeatureMatrix f;
  f.values.resize(static_cast<Index>(d), static_cast<Index>(n));
  double* v = f.values.data();
  for (std::uint64_t i = 0; i < values; ++i) v[i] = dtype == 1 ? r.f64() : static_cast<double>(r.f32());
  f.labels.resize(static_cast<std::size_t>(n));
  for (auto& l : f.labels) l = r.u32();
  f.views.resize(static_cast<std::size_t>(n));
  for (auto& view : f.views) {
    const std::uint64_t at = r.offset();
    const std::uint8_t b = r.u8();
    if (b > 1)
      fail(ErrorCode::format_error,
           "HERF: invalid view tag " + std::to_string(b) + " at byte offset " + std::to_string(at));
    view = static_cast<View>(b);
  }
  if (!f.values.allFinite()) fail(ErrorCode::format_error, "HERF: payload contains non-finite values");
  return f;
}

void save_features(const FeatureMatrix& features, const std::filesystem::path& path, Dtype dtype) {
  std::ofstream out = open_out(path);
  write_features(features, out, dtype);
  finish(out, path);
}

FeatureMatrix load_features(const std::filesystem::path& path) {
  std::ifstream in = open_in(path);
  return read_features(in);
}

void write_model(const HerModel& model, std::ostream& out) {
  const Index d = model.feature_dim();
  const Index c = model.class_count();
  if (static_cast<Index>(model.class_registry.size()) != c)
    fail(ErrorCode::invalid_input, "class registry does not match projection columns");
  ByteWriter w(out);
  w.raw("HERM", 4);
  w.u32(kVersion);
  w.u64(static_cast<std::uint64_t>(d));
  w.u64(static_cast<std::uint64_t>(c));
  w.f64(model.lambda);
  w.u8(model.t_inverse ? 1 : 0);
  for (IdentityId id : model.class_registry) w.u32(id);
  const double* p = model.projection.data();
  for (Index i = 0; i < d * c; ++i) w.f64(p[i]);
  if (model.t_inverse) {
    const double* t = model.t_inverse->data();
    for (Index i = 0; i < d * d; ++i) w.f64(t[i]);
  }
}

HerModel read_model(std::istream& in) {
  ByteReader r(in, "HERM");
  r.require(kModelHeaderBytes, "header");
  r.magic("HERM");
  r.version();
  const std::uint64_t d = r.u64();
  const std::uint64_t c = r.u64();
  const std::uint64_t lambda_at = r.offset();
  const double lambda = r.f64();
  const std::uint64_t flag_at = r.offset();
  const std::uint8_t has_t = r.u8();
  if (d == 0) fail(ErrorCode::format_error, "HERM: zero feature dimension");
  if (!(lambda > 0.0) || !std::isfinite(lambda))
    fail(ErrorCode::format_error,
         "HERM: lambda must be positive at byte offset " + std::to_string(lambda_at));
  if (has_t > 1)
    fail(ErrorCode::format_error, "HERM: invalid inverse flag at byte offset " + std::to_string(flag_at));

  std::uint64_t body = ByteReader::checked_mul(c, 4, "HERM");
  body += ByteReader::checked_mul(ByteReader::checked_mul(d, c, "HERM"), 8, "HERM");
  if (has_t) body += ByteReader::checked_mul(ByteReader::checked_mul(d, d, "HERM"), 8, "HERM");
  r.require(body, "class registry / payload");

  HerModel m;
  m.lambda = lambda;
  m.class_registry.resize(static_cast<std::size_t>(c));
  std::unordered_set<IdentityId> seen;
  for (auto& id : m.class_registry) {
    const std::uint64_t at = r.offset();
    id = r.u32();
    if (!seen.insert(id).second)
      fail(ErrorCode::format_error,
           "HERM: duplicate class id " + std::to_string(id) + " at byte offset " + std::to_string(at));
  }
  m.class_sizes.assign(static_cast<std::size_t>(c), 0);
  m.projection.resize(static_cast<Index>(d), static_cast<Index>(c));
  double* p = m.projection.data();
  for (std::uint64_t i = 0; i < d * c; ++i) p[i] = r.f64();
  if (!m.projection.allFinite()) fail(ErrorCode::format_error, "HERM: projection contains non-finite values");

  if (has_t) {
    Eigen::MatrixXd t(static_cast<Index>(d), static_cast<Index>(d));
    double* tp = t.data();
    for (std::uint64_t i = 0; i < d * d; ++i) tp[i] = r.f64();
    if (!t.allFinite()) fail(ErrorCode::format_error, "HERM: inverse contains non-finite values");
    const double scale = std::max(1.0, t.cwiseAbs().maxCoeff());
    if ((t - t.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale)
      fail(ErrorCode::format_error, "HERM: stored inverse is not symmetric");
    Eigen::LLT<Eigen::MatrixXd> llt(t);
    if (llt.info() != Eigen::Success)
      fail(ErrorCode::format_error, "HERM: stored inverse is not positive definite");
    m.regularized_gram = llt.solve(Eigen::MatrixXd::Identity(t.rows(), t.cols()));
    m.t_inverse = std::move(t);
  }
  return m;
}

void save_model(const HerModel& model, const std::filesystem::path& path) {
  std::ofstream out = open_out(path);
  write_model(model, out);
  finish(out, path);
}

HerModel load_model(const std::filesystem::path& path) {
  std::ifstream in = open_in(path);
  return read_model(in);
}

FeatureMatrix parse_text(std::istream& in) {
  std::vector<std::vector<double>> rows;
  FeatureMatrix f;
  std::string line;
  std::size_t line_no = 0;
  std::size_t dim = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    long long label = 0;
    std::string view;
    if (!(ls >> label >> view) || label < 0 || label > std::numeric_limits<IdentityId>::max())
      fail(ErrorCode::format_error, "text import: line " + std::to_string(line_no) +
                                        ": expected a non-negative label and a view");
    View v;
    if (view == "probe" || view == "0")
      v = View::probe;
    else if (view == "gallery" || view == "1")
      v = View::gallery;
    else
      fail(ErrorCode::format_error,
           "text import: line " + std::to_string(line_no) + ": unknown view '" + view + "'");
    std::vector<double> values;
    std::string tok;
    while (ls >> tok) {
      std::size_t used = 0;
      double x = 0.0;
      try {
        x = std::stod(tok, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != tok.size() || !std::isfinite(x))
        fail(ErrorCode::format_error,
             "text import: line " + std::to_string(line_no) + ": bad value '" + tok + "'");
      values.push_back(x);
    }
    if (values.empty())
      fail(ErrorCode::format_error, "text import: line " + std::to_string(line_no) + ": no feature values");
    if (dim == 0) dim = values.size();
    if (values.size() != dim)
      fail(ErrorCode::format_error, "text import: line " + std::to_string(line_no) + ": expected " +
                                        std::to_string(dim) + " values, found " +
                                        std::to_string(values.size()));
    rows.push_back(std::move(values));
    f.labels.push_back(static_cast<IdentityId>(label));
    f.views.push_back(v);
  }
  if (rows.empty()) fail(ErrorCode::format_error, "text import: no samples");
  f.values.resize(static_cast<Index>(dim), static_cast<Index>(rows.size()));
  for (std::size_t j = 0; j < rows.size(); ++j)
    for (std::size_t i = 0; i < dim; ++i)
      f.values(static_cast<Index>(i), static_cast<Index>(j)) = rows[j][i];
  return f;
}

FeatureMatrix import_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io_error, "cannot open '" + path.string() + "' for reading");
  return parse_text(in);
}

}  // namespace her
