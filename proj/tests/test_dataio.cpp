#include <gtest/gtest.h>

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>

#include "krica/dataio.hpp"
#include "krica/solver.hpp"
#include "support/synthetic.hpp"

namespace krica {
namespace {

namespace fs = std::filesystem;
using Eigen::MatrixXd;
using Eigen::VectorXd;

class TempDir {
 public:
  TempDir() {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    path_ = fs::temp_directory_path() / (std::string("krica_") + info->test_suite_name() + "_" + info->name());
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

void write_bytes(const fs::path& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<unsigned char> file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

KmxError::Kind kmx_kind(const std::vector<unsigned char>& bytes) {
  try {
    parse_kmx(bytes);
  } catch (const KmxError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected a KmxError";
  return KmxError::Kind::open_failed;
}

TEST(Kmx, ByteLayout) {
  MatrixXd m(2, 3);
  m << 1, 2, 3, 4, 5, 6;
  const auto bytes = serialize_kmx(m);
  ASSERT_EQ(bytes.size(), 12u + 6 * 8);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "KMX1");
  EXPECT_EQ(bytes[4], 2);
  EXPECT_EQ(bytes[8], 3);
  EXPECT_EQ(bytes[5] | bytes[6] | bytes[7] | bytes[9] | bytes[10] | bytes[11], 0);
  // Row-major payload: the second value written is m(0, 1) = 2.0 = 0x4000000000000000.
  EXPECT_EQ(bytes[12 + 8 + 7], 0x40);
  for (int i = 0; i < 7; ++i) EXPECT_EQ(bytes[12 + 8 + i], 0);
  // Fourth value is m(1, 0) = 4.0 = 0x4010000000000000.
  EXPECT_EQ(bytes[12 + 24 + 6], 0x10);
}

TEST(Kmx, RoundTripIsBitExact) {
  TempDir dir;
  std::mt19937_64 rng(1);
  MatrixXd m = testing::gaussian_matrix(7, 5, rng);
  m(0, 0) = -0.0;
  m(1, 1) = std::numeric_limits<double>::infinity();
  m(2, 2) = std::numeric_limits<double>::denorm_min();
  m(3, 3) = std::numeric_limits<double>::quiet_NaN();
  write_kmx(dir.path() / "m.kmx", m);
  const MatrixXd back = read_kmx(dir.path() / "m.kmx");
  ASSERT_EQ(back.rows(), 7);
  ASSERT_EQ(back.cols(), 5);
  EXPECT_EQ(std::memcmp(back.data(), m.data(), sizeof(double) * 35), 0);
}

TEST(Kmx, EmptyMatrix) {
  const MatrixXd back = parse_kmx(serialize_kmx(MatrixXd(0, 4)));
  EXPECT_EQ(back.rows(), 0);
  EXPECT_EQ(back.cols(), 4);
}

TEST(Kmx, RejectsMalformedInput) {
  const auto good = serialize_kmx(MatrixXd::Ones(2, 2));
  auto bad = good;
  bad[3] = '2';
  EXPECT_EQ(kmx_kind(bad), KmxError::Kind::bad_magic);
  EXPECT_EQ(kmx_kind({'K', 'M'}), KmxError::Kind::bad_magic);
  EXPECT_EQ(kmx_kind(std::vector<unsigned char>(good.begin(), good.begin() + 10)), KmxError::Kind::truncated);
  EXPECT_EQ(kmx_kind(std::vector<unsigned char>(good.begin(), good.end() - 1)), KmxError::Kind::truncated);
  auto longer = good;
  longer.push_back(0);
  EXPECT_EQ(kmx_kind(longer), KmxError::Kind::trailing_bytes);
  std::vector<unsigned char> huge{'K', 'M', 'X', '1', 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff};
  EXPECT_EQ(kmx_kind(huge), KmxError::Kind::overflow);
}

TEST(Kmx, MissingFile) {
  try {
    read_kmx("/nonexistent/krica/file.kmx");
    FAIL();
  } catch (const KmxError& e) {
    EXPECT_EQ(e.kind(), KmxError::Kind::open_failed);
  }
}

TEST(Labels, RoundTrip) {
  TempDir dir;
  const std::vector<int> labels{3, 0, 1, 1, 9};
  write_labels(dir.path() / "y.kmx", labels);
  EXPECT_EQ(read_labels(dir.path() / "y.kmx"), labels);
  write_kmx(dir.path() / "bad.kmx", (MatrixXd(2, 1) << 1, 0.5).finished());
  EXPECT_THROW(read_labels(dir.path() / "bad.kmx"), IoError);
}

TEST(Pnm, GrayRoundTrip) {
  TempDir dir;
  ImageTensor img(3, 4, 1);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<double>(i * 20) / 255.0;
  write_pnm(dir.path() / "a.pgm", img);
  const auto back = read_pnm(dir.path() / "a.pgm");
  EXPECT_EQ(back.height, 3);
  EXPECT_EQ(back.width, 4);
  EXPECT_EQ(back.channels, 1);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) EXPECT_DOUBLE_EQ(back.pixels[i], img.pixels[i]);
}

TEST(Pnm, ColorWithCommentsAndSixteenBitSamples) {
  TempDir dir;
  std::vector<unsigned char> bytes;
  const std::string header = "P6\n# a comment\n2 1\n# another\n65535\n";
  bytes.assign(header.begin(), header.end());
  for (unsigned v : {0u, 65535u, 32768u, 1u, 2u, 3u}) {
    bytes.push_back(static_cast<unsigned char>(v >> 8));
    bytes.push_back(static_cast<unsigned char>(v & 0xff));
  }
  write_bytes(dir.path() / "c.ppm", bytes);
  const auto img = read_pnm(dir.path() / "c.ppm");
  EXPECT_EQ(img.channels, 3);
  EXPECT_EQ(img.width, 2);
  EXPECT_EQ(img.at(0, 0, 1), 1.0);
  EXPECT_DOUBLE_EQ(img.at(0, 0, 2), 32768.0 / 65535.0);
  EXPECT_DOUBLE_EQ(img.at(0, 1, 2), 3.0 / 65535.0);
}

TEST(Pnm, RejectsBadFiles) {
  TempDir dir;
  const std::string ascii = "P2\n1 1\n255\n0\n";
  write_bytes(dir.path() / "ascii.pgm", {ascii.begin(), ascii.end()});
  EXPECT_THROW(read_pnm(dir.path() / "ascii.pgm"), IoError);
  const std::string truncated = "P5\n4 4\n255\n";
  write_bytes(dir.path() / "short.pgm", {truncated.begin(), truncated.end()});
  EXPECT_THROW(read_pnm(dir.path() / "short.pgm"), IoError);
  const std::string big = "P5\n1 1\n70000\n";
  write_bytes(dir.path() / "big.pgm", {big.begin(), big.end()});
  EXPECT_THROW(read_pnm(dir.path() / "big.pgm"), IoError);
  EXPECT_THROW(read_pnm(dir.path() / "missing.pgm"), IoError);
}

TEST(Pnm, MatrixRenderingIsMinMaxScaled) {
  TempDir dir;
  write_pgm_matrix(dir.path() / "m.pgm", (MatrixXd(1, 3) << -2, 0, 2).finished());
  const auto img = read_pnm(dir.path() / "m.pgm");
  EXPECT_EQ(img.pixels[0], 0.0);
  EXPECT_DOUBLE_EQ(img.pixels[1], 128.0 / 255.0);
  EXPECT_EQ(img.pixels[2], 1.0);
}

std::vector<unsigned char> cifar_record(unsigned char label, unsigned char seed) {
  std::vector<unsigned char> rec(3073);
  rec[0] = label;
  for (std::size_t i = 1; i < rec.size(); ++i) rec[i] = static_cast<unsigned char>((i + seed) % 256);
  return rec;
}

TEST(Cifar, ReadsChannelMajorRecords) {
  TempDir dir;
  std::vector<unsigned char> bytes;
  for (unsigned char label : {3, 5, 3, 1}) {
    const auto rec = cifar_record(label, label);
    bytes.insert(bytes.end(), rec.begin(), rec.end());
  }
  write_bytes(dir.path() / "batch.bin", bytes);
  const auto all = load_cifar10_binary({dir.path() / "batch.bin"});
  ASSERT_EQ(all.images.size(), 4u);
  EXPECT_EQ(all.labels, (std::vector<int>{3, 5, 3, 1}));
  const auto& img = all.images[1];
  EXPECT_EQ(img.channels, 3);
  // Green channel, row 2, column 7 sits at byte 1 + 1024 + 2 * 32 + 7 of the record.
  EXPECT_DOUBLE_EQ(img.at(2, 7, 1), static_cast<double>((1 + 1024 + 64 + 7 + 5) % 256) / 255.0);

  const auto filtered = load_cifar10_binary({dir.path() / "batch.bin"}, std::vector<int>{3, 1}, 1);
  EXPECT_EQ(filtered.labels, (std::vector<int>{3, 1}));
}

TEST(Cifar, RejectsBadFiles) {
  TempDir dir;
  auto rec = cifar_record(2, 0);
  rec.pop_back();
  write_bytes(dir.path() / "short.bin", rec);
  EXPECT_THROW(load_cifar10_binary({dir.path() / "short.bin"}), IoError);
  write_bytes(dir.path() / "label.bin", cifar_record(10, 0));
  EXPECT_THROW(load_cifar10_binary({dir.path() / "label.bin"}), IoError);
  EXPECT_THROW(load_cifar10_binary({dir.path() / "missing.bin"}), IoError);
}

TEST(ImageDir, LabelsFollowSortedFolders) {
  TempDir dir;
  fs::create_directories(dir.path() / "zebra");
  fs::create_directories(dir.path() / "apple");
  write_pnm(dir.path() / "zebra" / "b.pgm", ImageTensor(4, 4, 1, 0.5));
  write_pnm(dir.path() / "zebra" / "a.pgm", ImageTensor(4, 4, 1, 0.0));
  write_pnm(dir.path() / "apple" / "x.pgm", ImageTensor(4, 4, 1, 1.0));
  write_bytes(dir.path() / "apple" / "notes.txt", {'h', 'i'});
  const auto set = load_image_dir(dir.path());
  EXPECT_EQ(set.class_names, (std::vector<std::string>{"apple", "zebra"}));
  EXPECT_EQ(set.labels, (std::vector<int>{0, 1, 1}));
  EXPECT_EQ(set.images[1].pixels[0], 0.0);
  EXPECT_EQ(set.images[2].pixels[0], 128.0 / 255.0);
}

TEST(ImageDir, EmptyRootIsAnError) {
  TempDir dir;
  try {
    load_image_dir(dir.path());
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("no classes found under"), std::string::npos);
  }
}

TrainResult small_model(Mode mode, std::optional<WhitenKind> whitening) {
  const auto set = testing::gratings(2, 4, 10, 3);
  MatrixXd x;
  std::vector<int> labels;
  testing::patch_dataset(set, 4, 12, 5, x, labels);
  Hyperparams hp;
  hp.mode = mode;
  hp.kernel = is_kernel_mode(mode) ? KernelSpec::gaussian(0.3) : KernelSpec::linear();
  hp.basis_size = 6;
  hp.class_count = is_discriminative(mode) ? 2 : 1;
  hp.whitening = whitening;
  SolveConfig cfg;
  cfg.max_outer_iters = 3;
  cfg.seed = 4;
  return train(x, labels, hp, cfg);
}

class ModelRoundTrip : public ::testing::TestWithParam<std::pair<Mode, WhitenKind>> {};

TEST_P(ModelRoundTrip, EncodingIsBitIdentical) {
  TempDir dir;
  const auto [mode, whitening] = GetParam();
  const auto trained = small_model(mode, whitening);
  save_model(dir.path() / "model", trained.model);
  const auto back = load_model(dir.path() / "model");
  EXPECT_EQ(back.mode, trained.model.mode);
  EXPECT_EQ(back.w, trained.model.w);
  EXPECT_EQ(back.eta, trained.model.eta);
  EXPECT_EQ(back.selectors.has_value(), trained.model.selectors.has_value());
  const auto set = testing::gratings(2, 2, 10, 9);
  const MatrixXd a = encode_images(trained.model, set.images, 4, 1);
  const MatrixXd b = encode_images(back, set.images, 4, 1);
  EXPECT_EQ(std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())), 0);
}

INSTANTIATE_TEST_SUITE_P(Modes, ModelRoundTrip,
                         ::testing::Values(std::pair{Mode::krica, WhitenKind::kpca},
                                           std::pair{Mode::d_krica, WhitenKind::kpca},
                                           std::pair{Mode::rica, WhitenKind::pca},
                                           std::pair{Mode::d_rica, WhitenKind::none}),
                         [](const auto& info) {
                           std::string name = std::string(to_string(info.param.first)) + "_" +
                                              std::string(to_string(info.param.second));
                           std::replace(name.begin(), name.end(), '-', '_');
                           return name;
                         });

TEST(ModelBundle, ManifestDescribesTheModel) {
  TempDir dir;
  save_model(dir.path(), small_model(Mode::d_krica, WhitenKind::kpca).model);
  std::ifstream in(dir.path() / "manifest.json");
  const auto j = nlohmann::json::parse(in);
  EXPECT_EQ(j.at("format"), "krica-model");
  EXPECT_EQ(j.at("version"), 1);
  EXPECT_EQ(j.at("mode"), "d-krica");
  EXPECT_EQ(j.at("K"), 6);
  EXPECT_EQ(j.at("k"), 3);
  EXPECT_EQ(j.at("c"), 2);
  EXPECT_EQ(j.at("eta"), 4.0);
  for (const auto& [key, file] : j.at("blobs").items()) {
    EXPECT_TRUE(fs::exists(dir.path() / file.get<std::string>())) << key;
  }
  const MatrixXd layout = read_kmx(dir.path() / "selectors.kmx");
  EXPECT_EQ(layout, (MatrixXd(2, 6) << 1, 1, 1, 0, 0, 0, 0, 0, 0, 1, 1, 1).finished());
}

TEST(ModelBundle, RejectsDamagedBundles) {
  TempDir dir;
  save_model(dir.path(), small_model(Mode::krica, WhitenKind::kpca).model);
  fs::remove(dir.path() / "pooling.kmx");
  EXPECT_THROW(load_model(dir.path()), IoError);

  save_model(dir.path(), small_model(Mode::krica, WhitenKind::kpca).model);
  auto bytes = file_bytes(dir.path() / "W.kmx");
  bytes.pop_back();
  write_bytes(dir.path() / "W.kmx", bytes);
  EXPECT_THROW(load_model(dir.path()), IoError);

  save_model(dir.path(), small_model(Mode::krica, WhitenKind::kpca).model);
  std::ifstream in(dir.path() / "manifest.json");
  auto j = nlohmann::json::parse(in);
  in.close();
  j["version"] = 2;
  std::ofstream(dir.path() / "manifest.json") << j.dump();
  EXPECT_THROW(load_model(dir.path()), IoError);

  EXPECT_THROW(load_model(dir.path() / "nothing"), IoError);
}

TEST(ClassifierBundle, RoundTrip) {
  TempDir dir;
  std::mt19937_64 rng(3);
  const MatrixXd d = testing::gaussian_matrix(30, 4, rng);
  const auto labels = testing::random_labels(30, 3, rng);
  const auto clf = train_classifier(d, labels);
  save_classifier(dir.path(), clf);
  const auto back = load_classifier(dir.path());
  EXPECT_EQ(back.weights, clf.weights);
  EXPECT_EQ(back.biases, clf.biases);
  EXPECT_EQ(back.feature_mean, clf.feature_mean);
  EXPECT_EQ(back.feature_scale, clf.feature_scale);
  EXPECT_EQ(decision_scores(back, d), decision_scores(clf, d));
  EXPECT_THROW(load_model(dir.path()), IoError);
}

}  // namespace
}  // namespace krica
