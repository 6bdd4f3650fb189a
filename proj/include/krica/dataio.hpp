#pragma once

// KMX matrix files, PNM images, CIFAR-10 binaries, image folders and model
// bundles.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "krica/error.hpp"
#include "krica/objective.hpp"
#include "krica/pipeline.hpp"
#include "krica/whitening.hpp"

namespace krica {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

// ----------------------------------------------------------------------------
// KMX

/// Read/write failure of a KMX file; `kind` tells the cases apart.
class KmxError : public IoError {
 public:
  enum class Kind { open_failed, bad_magic, truncated, overflow, trailing_bytes, write_failed };

  KmxError(Kind kind, const std::string& message) : IoError(message), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

namespace detail {

inline constexpr std::array<char, 4> kKmxMagic{'K', 'M', 'X', '1'};

template <typename T>
T from_le(const unsigned char* bytes) {
  T value{};
  std::memcpy(&value, bytes, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    auto* raw = reinterpret_cast<unsigned char*>(&value);
    std::reverse(raw, raw + sizeof(T));
  }
  return value;
}

template <typename T>
void to_le(T value, unsigned char* out) {
  std::memcpy(out, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(out, out + sizeof(T));
}

inline std::vector<unsigned char> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace detail

/// Decodes a KMX byte buffer; `name` only labels error messages.
inline Eigen::MatrixXd parse_kmx(const std::vector<unsigned char>& bytes, const std::string& name = "<buffer>") {
  using Kind = KmxError::Kind;
  if (bytes.size() < 4 || !std::equal(detail::kKmxMagic.begin(), detail::kKmxMagic.end(), bytes.begin())) {
    throw KmxError(Kind::bad_magic, "'" + name + "' is not a KMX1 file (bad magic)");
  }
  if (bytes.size() < 12) throw KmxError(Kind::truncated, "'" + name + "' is truncated in its header");
  const auto rows = detail::from_le<std::uint32_t>(bytes.data() + 4);
  const auto cols = detail::from_le<std::uint32_t>(bytes.data() + 8);
  const std::uint64_t count = static_cast<std::uint64_t>(rows) * cols;
  constexpr auto max_entries =
      static_cast<std::uint64_t>(std::numeric_limits<std::ptrdiff_t>::max()) / sizeof(double);
  if (count > max_entries) {
    throw KmxError(Kind::overflow, "'" + name + "': " + std::to_string(rows) + " x " + std::to_string(cols) +
                                       " entries overflow the addressable size");
  }
  const std::uint64_t payload = bytes.size() - 12;
  if (payload < count * 8) {
    throw KmxError(Kind::truncated, "'" + name + "' is truncated: expected " + std::to_string(count * 8) +
                                        " payload bytes, found " + std::to_string(payload));
  }
  if (payload > count * 8) {
    throw KmxError(Kind::trailing_bytes, "'" + name + "' has " + std::to_string(payload - count * 8) +
                                             " trailing bytes");
  }
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  const unsigned char* p = bytes.data() + 12;
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    for (Eigen::Index c = 0; c < out.cols(); ++c, p += 8) out(r, c) = detail::from_le<double>(p);
  }
  return out;
}

inline Eigen::MatrixXd read_kmx(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw KmxError(KmxError::Kind::open_failed, "cannot open '" + path.string() + "'");
  const std::vector<unsigned char> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return parse_kmx(bytes, path.string());
}

inline std::vector<unsigned char> serialize_kmx(const Eigen::MatrixXd& m) {
  if (m.rows() > std::numeric_limits<std::uint32_t>::max() || m.cols() > std::numeric_limits<std::uint32_t>::max()) {
    throw KmxError(KmxError::Kind::overflow, "matrix is too large for KMX");
  }
  std::vector<unsigned char> bytes(12 + 8 * static_cast<std::size_t>(m.size()));
  std::copy(detail::kKmxMagic.begin(), detail::kKmxMagic.end(), bytes.begin());
  detail::to_le(static_cast<std::uint32_t>(m.rows()), bytes.data() + 4);
  detail::to_le(static_cast<std::uint32_t>(m.cols()), bytes.data() + 8);
  unsigned char* p = bytes.data() + 12;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c, p += 8) detail::to_le(m(r, c), p);
  }
  return bytes;
}

inline void write_kmx(const fs::path& path, const Eigen::MatrixXd& m) {
  const auto bytes = serialize_kmx(m);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw KmxError(KmxError::Kind::write_failed, "cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw KmxError(KmxError::Kind::write_failed, "write to '" + path.string() + "' failed");
}

/// Labels are stored as an m x 1 KMX column.
inline void write_labels(const fs::path& path, std::span<const int> labels) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(labels.size()), 1);
  for (std::size_t i = 0; i < labels.size(); ++i) m(static_cast<Eigen::Index>(i), 0) = labels[i];
  write_kmx(path, m);
}

inline std::vector<int> read_labels(const fs::path& path) {
  const Eigen::MatrixXd m = read_kmx(path);
  if (m.cols() != 1 && m.size() != 0) throw IoError("'" + path.string() + "' is not a label column");
  std::vector<int> out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double v = m(i, 0);
    if (!(v >= 0.0 && v <= std::numeric_limits<int>::max()) || v != std::floor(v)) {
      throw IoError("'" + path.string() + "' row " + std::to_string(i) + " is not a class label");
    }
    out[static_cast<std::size_t>(i)] = static_cast<int>(v);
  }
  return out;
}

// ----------------------------------------------------------------------------
// PNM

namespace detail {

class PnmReader {
 public:
  PnmReader(const std::vector<unsigned char>& bytes, std::string name) : bytes_(bytes), name_(std::move(name)) {}

  unsigned long header_number() {
    skip_space_and_comments();
    unsigned long value = 0;
    std::size_t digits = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      value = value * 10 + (bytes_[pos_++] - '0');
      if (++digits > 9) fail("header number too large");
    }
    if (digits == 0) fail("malformed header");
    return value;
  }

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  [[noreturn]] void fail(const std::string& why) const { throw IoError("'" + name_ + "': " + why); }

  const std::vector<unsigned char>& bytes_;
  std::string name_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// Reads a binary PGM (P5) or PPM (P6) image, scaling samples by 1/maxval.
inline ImageTensor read_pnm(const fs::path& path) {
  const std::string name = path.string();
  std::vector<unsigned char> bytes;
  try {
    bytes = detail::read_bytes(path);
  } catch (const IoError&) {
    throw IoError("cannot open image '" + name + "'");
  }
  detail::PnmReader rd(bytes, name);
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    rd.fail("not a binary PNM image (expected P5 or P6)");
  }
  rd.pos_ = 2;
  const Eigen::Index channels = bytes[1] == '5' ? 1 : 3;
  const auto width = static_cast<Eigen::Index>(rd.header_number());
  const auto height = static_cast<Eigen::Index>(rd.header_number());
  const auto maxval = rd.header_number();
  if (width < 1 || height < 1) rd.fail("zero image dimension");
  if (maxval < 1 || maxval > 65535) rd.fail("maxval outside [1, 65535]");
  if (rd.pos_ >= bytes.size() || !std::isspace(bytes[rd.pos_])) rd.fail("malformed header");
  ++rd.pos_;
  const std::size_t sample_bytes = maxval < 256 ? 1 : 2;
  const auto samples = static_cast<std::size_t>(width * height * channels);
  if (bytes.size() - rd.pos_ < samples * sample_bytes) rd.fail("truncated pixel data");

  ImageTensor img(height, width, channels);
  const unsigned char* p = bytes.data() + rd.pos_;
  for (std::size_t i = 0; i < samples; ++i) {
    const unsigned v = sample_bytes == 1 ? p[i] : (static_cast<unsigned>(p[2 * i]) << 8) | p[2 * i + 1];
    if (v > maxval) rd.fail("sample exceeds maxval");
    img.pixels[i] = static_cast<double>(v) / static_cast<double>(maxval);
  }
  return img;
}

/// Writes an 8-bit P5 (1 channel) or P6 (3 channels) image; values are
/// clamped to [0, 1].
inline void write_pnm(const fs::path& path, const ImageTensor& img) {
  img.validate();
  detail::require(img.channels == 1 || img.channels == 3, "write_pnm: need 1 or 3 channels");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << (img.channels == 1 ? "P5" : "P6") << '\n' << img.width << ' ' << img.height << "\n255\n";
  std::vector<unsigned char> data(img.pixels.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    data[i] = static_cast<unsigned char>(std::lround(std::clamp(img.pixels[i], 0.0, 1.0) * 255.0));
  }
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

/// Min-max scales a matrix to an 8-bit grayscale PGM; a constant matrix renders black.
inline void write_pgm_matrix(const fs::path& path, const Eigen::MatrixXd& m) {
  detail::require(m.size() > 0 && m.allFinite(), "write_pgm_matrix: need a non-empty finite matrix");
  const double lo = m.minCoeff();
  const double span = m.maxCoeff() - lo;
  ImageTensor img(m.rows(), m.cols(), 1);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) img.at(r, c, 0) = span > 0.0 ? (m(r, c) - lo) / span : 0.0;
  }
  write_pnm(path, img);
}

// ----------------------------------------------------------------------------
// Datasets

struct Dataset {
  std::vector<ImageTensor> images;
  std::vector<int> labels;
  std::vector<std::string> class_names;  // empty when classes are plain indices
};

/// Reads CIFAR-10 binary batches: 3073-byte records of one label byte and
/// 3072 channel-major pixel bytes. Records keep file order; `classes_filter`
/// keeps only the listed labels and `limit_per_class` the first records of each.
inline Dataset load_cifar10_binary(const std::vector<fs::path>& paths,
                                   const std::optional<std::vector<int>>& classes_filter = std::nullopt,
                                   std::optional<std::size_t> limit_per_class = std::nullopt) {
  constexpr std::size_t record = 3073;
  constexpr Eigen::Index side = 32;
  Dataset out;
  std::array<std::size_t, 10> taken{};
  for (const auto& path : paths) {
    const auto bytes = detail::read_bytes(path);
    if (bytes.size() % record != 0) {
      throw IoError("'" + path.string() + "': size " + std::to_string(bytes.size()) +
                    " is not a multiple of the 3073-byte CIFAR-10 record");
    }
    for (std::size_t off = 0; off < bytes.size(); off += record) {
      const int label = bytes[off];
      if (label > 9) {
        throw IoError("'" + path.string() + "': record " + std::to_string(off / record) + " has label " +
                      std::to_string(label) + " > 9");
      }
      if (classes_filter &&
          std::find(classes_filter->begin(), classes_filter->end(), label) == classes_filter->end()) {
        continue;
      }
      if (limit_per_class && taken[static_cast<std::size_t>(label)] >= *limit_per_class) continue;
      ++taken[static_cast<std::size_t>(label)];
      ImageTensor img(side, side, 3);
      for (Eigen::Index ch = 0; ch < 3; ++ch) {
        for (Eigen::Index r = 0; r < side; ++r) {
          for (Eigen::Index c = 0; c < side; ++c) {
            img.at(r, c, ch) = bytes[off + 1 + static_cast<std::size_t>((ch * side + r) * side + c)] / 255.0;
          }
        }
      }
      out.images.push_back(std::move(img));
      out.labels.push_back(label);
    }
  }
  return out;
}

/// One sub-folder per class under `root`, holding .pgm/.ppm images. Labels
/// follow the sorted folder names; images within a folder are sorted by name.
inline Dataset load_image_dir(const fs::path& root) {
  if (!fs::is_directory(root)) throw IoError("'" + root.string() + "' is not a directory");
  std::vector<fs::path> classes;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) classes.push_back(entry.path());
  }
  if (classes.empty()) throw IoError("no classes found under '" + root.string() + "'");
  std::sort(classes.begin(), classes.end());
  Dataset out;
  for (std::size_t label = 0; label < classes.size(); ++label) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(classes[label])) {
      const auto ext = entry.path().extension().string();
      if (entry.is_regular_file() && (ext == ".pgm" || ext == ".ppm" || ext == ".pnm")) {
        files.push_back(entry.path());
      }
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      out.images.push_back(read_pnm(f));
      out.labels.push_back(static_cast<int>(label));
    }
    out.class_names.push_back(classes[label].filename().string());
  }
  return out;
}

// ----------------------------------------------------------------------------
// Model bundles

namespace detail {

using nlohmann::json;

inline void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

inline json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw IoError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

template <typename T>
T manifest_get(const json& j, const char* key, const fs::path& where) {
  if (!j.contains(key)) throw IoError("'" + where.string() + "' lacks field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw IoError("'" + where.string() + "' field '" + key + "' has the wrong type");
  }
}

inline Eigen::MatrixXd read_blob(const fs::path& dir, const json& blobs, const char* key) {
  if (!blobs.contains(key)) throw IoError("manifest in '" + dir.string() + "' does not reference blob '" + key + "'");
  const fs::path p = dir / blobs.at(key).get<std::string>();
  if (!fs::exists(p)) throw IoError("blob '" + p.string() + "' referenced by the manifest is missing");
  return read_kmx(p);
}

inline Eigen::VectorXd as_vector(const Eigen::MatrixXd& m) {
  if (m.cols() != 1 && m.size() != 0) throw IoError("expected a column blob");
  return m.size() == 0 ? Eigen::VectorXd() : Eigen::VectorXd(m.col(0));
}

// Scalars live in a KMX row so they round-trip bit-exactly.
enum ModelParam : Eigen::Index { p_gamma, p_b, p_lambda, p_alpha, p_eta, p_epsilon, p_regularizer, p_grand_mean, p_count };

}  // namespace detail

inline constexpr int kManifestVersion = 1;

/// Writes `model` into `dir` (created if needed): manifest.json plus KMX blobs.
inline void save_model(const fs::path& dir, const BasisModel& model) {
  using detail::json;
  model.validate();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());

  Eigen::MatrixXd params(1, detail::p_count);
  params(0, detail::p_gamma) = model.kernel.gamma;
  params(0, detail::p_b) = model.kernel.b;
  params(0, detail::p_lambda) = model.lambda;
  params(0, detail::p_alpha) = model.alpha;
  params(0, detail::p_eta) = model.eta;
  params(0, detail::p_epsilon) = model.pooling.epsilon;
  params(0, detail::p_regularizer) = model.whitener.regularizer;
  params(0, detail::p_grand_mean) = model.whitener.gram_grand_mean;

  json blobs = {{"W", "W.kmx"}, {"params", "params.kmx"}, {"pooling", "pooling.kmx"}};
  write_kmx(dir / "W.kmx", model.w);
  write_kmx(dir / "params.kmx", params);
  write_kmx(dir / "pooling.kmx", model.pooling.h);

  const auto& wt = model.whitener;
  json whitener = {{"kind", to_string(wt.kind)},
                   {"input_dim", wt.input_dim},
                   {"retained", wt.retained()},
                   {"dropped", wt.dropped},
                   {"kernel", {{"kind", to_string(wt.kernel.kind)}, {"gamma", wt.kernel.gamma}, {"b", wt.kernel.b}}}};
  auto whitener_blob = [&](const char* key, const Eigen::MatrixXd& m) {
    const std::string file = std::string("whiten_") + key + ".kmx";
    write_kmx(dir / file, m);
    blobs[std::string("whiten_") + key] = file;
  };
  whitener_blob("mean", wt.mean);
  whitener_blob("projection", wt.projection);
  whitener_blob("eigenvalues", wt.eigenvalues);
  whitener_blob("landmarks", wt.landmarks);
  whitener_blob("gram_row_means", wt.gram_row_means);
  // The whitening kernel's parameters, also kept exact.
  Eigen::MatrixXd wk(1, 2);
  wk << wt.kernel.gamma, wt.kernel.b;
  whitener_blob("kernel", wk);

  json manifest = {{"format", "krica-model"},
                   {"version", kManifestVersion},
                   {"mode", to_string(model.mode)},
                   {"kernel", {{"kind", to_string(model.kernel.kind)}, {"gamma", model.kernel.gamma}, {"b", model.kernel.b}}},
                   {"lambda", model.lambda},
                   {"alpha", model.alpha},
                   {"eta", model.eta},
                   {"gamma", model.kernel.gamma},
                   {"K", model.basis_size()},
                   {"n", model.input_dim()},
                   {"pooling", {{"topology", to_string(model.pooling.topology)}, {"epsilon", model.pooling.epsilon}}},
                   {"center_patches", model.center_patches},
                   {"seed", model.seed},
                   {"whitener", whitener}};
  if (model.selectors) {
    const auto& sel = *model.selectors;
    Eigen::MatrixXd layout(sel.class_count, sel.basis_size());
    for (Eigen::Index c = 0; c < sel.class_count; ++c) layout.row(c) = sel.d_plus(static_cast<int>(c)).transpose();
    write_kmx(dir / "selectors.kmx", layout);
    blobs["selectors"] = "selectors.kmx";
    manifest["k"] = sel.per_class_size;
    manifest["c"] = sel.class_count;
    manifest["selector_reading"] = to_string(sel.reading);
  } else {
    manifest["k"] = nullptr;
    manifest["c"] = nullptr;
  }
  manifest["blobs"] = blobs;
  detail::write_json(dir / "manifest.json", manifest);
}

inline BasisModel load_model(const fs::path& dir) {
  using detail::json;
  using detail::manifest_get;
  const fs::path mpath = dir / "manifest.json";
  const json manifest = detail::read_json(mpath);
  if (manifest.value("format", "") != "krica-model") throw IoError("'" + mpath.string() + "' is not a model manifest");
  if (manifest_get<int>(manifest, "version", mpath) != kManifestVersion) {
    throw IoError("'" + mpath.string() + "' has unsupported version");
  }
  const json& blobs = manifest.at("blobs");

  BasisModel model;
  const auto mode = mode_from_string(manifest_get<std::string>(manifest, "mode", mpath));
  if (!mode) throw IoError("'" + mpath.string() + "' has an unknown mode");
  model.mode = *mode;
  const json& kernel = manifest.at("kernel");
  const auto kind = kernel_kind_from_string(manifest_get<std::string>(kernel, "kind", mpath));
  if (!kind) throw IoError("'" + mpath.string() + "' has an unknown kernel kind");

  const Eigen::MatrixXd params = detail::read_blob(dir, blobs, "params");
  if (params.rows() != 1 || params.cols() != detail::p_count) throw IoError("params blob has the wrong shape");
  model.kernel = {*kind, params(0, detail::p_gamma), params(0, detail::p_b)};
  model.lambda = params(0, detail::p_lambda);
  model.alpha = params(0, detail::p_alpha);
  model.eta = params(0, detail::p_eta);
  model.w = detail::read_blob(dir, blobs, "W");

  const json& pooling = manifest.at("pooling");
  const auto topology = pooling_topology_from_string(manifest_get<std::string>(pooling, "topology", mpath));
  if (!topology) throw IoError("'" + mpath.string() + "' has an unknown pooling topology");
  model.pooling = {detail::read_blob(dir, blobs, "pooling"), *topology, params(0, detail::p_epsilon)};
  model.center_patches = manifest_get<bool>(manifest, "center_patches", mpath);
  model.seed = manifest_get<std::uint64_t>(manifest, "seed", mpath);

  const json& wj = manifest.at("whitener");
  auto& wt = model.whitener;
  const auto wkind = whiten_kind_from_string(manifest_get<std::string>(wj, "kind", mpath));
  if (!wkind) throw IoError("'" + mpath.string() + "' has an unknown whitening kind");
  wt.kind = *wkind;
  wt.input_dim = manifest_get<Eigen::Index>(wj, "input_dim", mpath);
  wt.dropped = manifest_get<Eigen::Index>(wj, "dropped", mpath);
  const auto wkernel = kernel_kind_from_string(manifest_get<std::string>(wj.at("kernel"), "kind", mpath));
  if (!wkernel) throw IoError("'" + mpath.string() + "' has an unknown whitening kernel");
  const Eigen::MatrixXd wk = detail::read_blob(dir, blobs, "whiten_kernel");
  if (wk.rows() != 1 || wk.cols() != 2) throw IoError("whitening kernel blob has the wrong shape");
  wt.kernel = {*wkernel, wk(0, 0), wk(0, 1)};
  wt.regularizer = params(0, detail::p_regularizer);
  wt.gram_grand_mean = params(0, detail::p_grand_mean);
  wt.mean = detail::as_vector(detail::read_blob(dir, blobs, "whiten_mean"));
  wt.projection = detail::read_blob(dir, blobs, "whiten_projection");
  wt.eigenvalues = detail::as_vector(detail::read_blob(dir, blobs, "whiten_eigenvalues"));
  wt.landmarks = detail::read_blob(dir, blobs, "whiten_landmarks");
  wt.gram_row_means = detail::as_vector(detail::read_blob(dir, blobs, "whiten_gram_row_means"));

  if (is_discriminative(model.mode) || blobs.contains("selectors")) {
    Selectors sel;
    sel.per_class_size = manifest_get<Eigen::Index>(manifest, "k", mpath);
    sel.class_count = manifest_get<Eigen::Index>(manifest, "c", mpath);
    const std::string reading = manifest.value("selector_reading", "rank_one");
    sel.reading = reading == "mask" ? SelectorReading::mask : SelectorReading::rank_one;
    const Eigen::MatrixXd layout = detail::read_blob(dir, blobs, "selectors");
    if (layout.rows() != sel.class_count || layout.cols() != sel.basis_size()) {
      throw IoError("selector layout blob does not match k and c");
    }
    for (Eigen::Index c = 0; c < sel.class_count; ++c) {
      if (layout.row(c) != sel.d_plus(static_cast<int>(c)).transpose()) {
        throw IoError("selector layout blob is not the contiguous block layout");
      }
    }
    model.selectors = sel;
  }
  try {
    model.validate();
  } catch (const InvalidArgument& e) {
    throw IoError("model in '" + dir.string() + "' is inconsistent: " + e.what());
  }
  return model;
}

/// Classifier bundle: manifest.json plus KMX blobs for weights, biases and
/// the standardization statistics.
inline void save_classifier(const fs::path& dir, const LinearClassifier& clf) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
  write_kmx(dir / "weights.kmx", clf.weights);
  write_kmx(dir / "biases.kmx", clf.biases);
  write_kmx(dir / "feature_mean.kmx", clf.feature_mean);
  write_kmx(dir / "feature_scale.kmx", clf.feature_scale);
  Eigen::MatrixXd params(1, 1);
  params(0, 0) = clf.reg;
  write_kmx(dir / "params.kmx", params);
  const detail::json manifest = {{"format", "krica-classifier"},
                                 {"version", kManifestVersion},
                                 {"classes", clf.class_count()},
                                 {"dims", clf.input_dim()},
                                 {"reg", clf.reg},
                                 {"epochs", clf.epochs},
                                 {"seed", clf.seed},
                                 {"blobs",
                                  {{"weights", "weights.kmx"},
                                   {"biases", "biases.kmx"},
                                   {"feature_mean", "feature_mean.kmx"},
                                   {"feature_scale", "feature_scale.kmx"},
                                   {"params", "params.kmx"}}}};
  detail::write_json(dir / "manifest.json", manifest);
}

inline LinearClassifier load_classifier(const fs::path& dir) {
  const fs::path mpath = dir / "manifest.json";
  const auto manifest = detail::read_json(mpath);
  if (manifest.value("format", "") != "krica-classifier") {
    throw IoError("'" + mpath.string() + "' is not a classifier manifest");
  }
  if (detail::manifest_get<int>(manifest, "version", mpath) != kManifestVersion) {
    throw IoError("'" + mpath.string() + "' has unsupported version");
  }
  const auto& blobs = manifest.at("blobs");
  LinearClassifier clf;
  clf.weights = detail::read_blob(dir, blobs, "weights");
  clf.biases = detail::as_vector(detail::read_blob(dir, blobs, "biases"));
  clf.feature_mean = detail::as_vector(detail::read_blob(dir, blobs, "feature_mean"));
  clf.feature_scale = detail::as_vector(detail::read_blob(dir, blobs, "feature_scale"));
  const Eigen::MatrixXd params = detail::read_blob(dir, blobs, "params");
  if (params.size() != 1) throw IoError("classifier params blob has the wrong shape");
  clf.reg = params(0, 0);
  clf.epochs = detail::manifest_get<int>(manifest, "epochs", mpath);
  clf.seed = detail::manifest_get<std::uint64_t>(manifest, "seed", mpath);
  const Eigen::Index c = clf.weights.rows();
  const Eigen::Index d = clf.weights.cols();
  if (clf.biases.size() != c || clf.feature_mean.size() != d || clf.feature_scale.size() != d) {
    throw IoError("classifier blobs in '" + dir.string() + "' have inconsistent shapes");
  }
  return clf;
}

}  // namespace krica
