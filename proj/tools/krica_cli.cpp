// krica: learn (discriminative) kernel RICA bases and run the patch-based
// image classification pipeline from the command line.
//
// Exit codes: 0 success, 2 usage or validation error, 3 training finished
// without converging (outputs still written), 4 I/O failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "krica/krica.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNotConverged = 3;
constexpr int kExitIo = 4;

struct Globals {
  std::uint64_t seed = 0;
  int threads = 1;
  bool verbose = false;
};

struct DatasetArgs {
  std::vector<std::string> input;
  std::string format = "pnm-dir";
  std::optional<std::size_t> per_class;
};

void add_dataset_options(CLI::App* cmd, DatasetArgs& args) {
  cmd->add_option("--input", args.input, "Image folder (one sub-folder per class) or CIFAR-10 batch files")
      ->required();
  cmd->add_option("--format", args.format, "Dataset format")->check(CLI::IsMember({"pnm-dir", "cifar10"}));
  cmd->add_option("--per-class", args.per_class, "Keep only the first N images of each class")
      ->check(CLI::PositiveNumber);
}

krica::Dataset load_dataset(const DatasetArgs& args) {
  krica::Dataset set;
  if (args.format == "cifar10") {
    std::vector<fs::path> paths(args.input.begin(), args.input.end());
    set = krica::load_cifar10_binary(paths, std::nullopt, args.per_class);
  } else {
    if (args.input.size() != 1) throw krica::InvalidArgument("--format pnm-dir takes exactly one --input folder");
    set = krica::load_image_dir(args.input.front());
    if (args.per_class) {
      krica::Dataset kept;
      kept.class_names = set.class_names;
      std::map<int, std::size_t> taken;
      for (std::size_t i = 0; i < set.images.size(); ++i) {
        if (taken[set.labels[i]]++ >= *args.per_class) continue;
        kept.images.push_back(std::move(set.images[i]));
        kept.labels.push_back(set.labels[i]);
      }
      set = std::move(kept);
    }
  }
  if (set.images.empty()) throw krica::IoError("dataset contains no images");
  return set;
}

/// Records every option of `cmd` (given or defaulted) plus the globals and
/// any values resolved at run time.
json config_echo(const CLI::App* cmd, const Globals& g, const json& resolved = json::object()) {
  json flags = json::object();
  for (const CLI::App* app = cmd; app != nullptr; app = app->get_parent()) {
    for (const CLI::Option* opt : app->get_options()) {
      const auto& names = opt->get_lnames();
      if (names.empty() || names.front() == "help") continue;
      if (flags.contains(names.front())) continue;
      if (opt->count() > 0) {
        const auto& results = opt->results();
        flags[names.front()] = results.size() == 1 ? json(results.front()) : json(results);
      } else {
        flags[names.front()] = opt->get_default_str();
      }
    }
  }
  std::string path = cmd->get_name();
  for (const CLI::App* app = cmd->get_parent(); app != nullptr && app->get_parent() != nullptr;
       app = app->get_parent()) {
    path = app->get_name() + " " + path;
  }
  return {{"command", path},
          {"seed", g.seed},
          {"threads", g.threads},
          {"flags", flags},
          {"resolved", resolved},
          {"version", krica::kManifestVersion}};
}

void write_echo(const fs::path& path, const json& echo) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw krica::IoError("cannot write '" + path.string() + "'");
  out << echo.dump(2) << '\n';
}

fs::path sidecar(const std::string& out) { return fs::path(out + ".config.json"); }

// ----------------------------------------------------------------------------
// extract

struct ExtractArgs {
  DatasetArgs data;
  Eigen::Index patch = 6;
  Eigen::Index stride = 1;
  std::optional<Eigen::Index> limit;
  std::string out;
  std::string labels_out;
};

int run_extract(const CLI::App* cmd, const ExtractArgs& a, const Globals& g) {
  const auto set = load_dataset(a.data);
  std::vector<Eigen::MatrixXd> blocks(set.images.size());
  krica::detail::parallel_for(static_cast<Eigen::Index>(blocks.size()), g.threads, [&](Eigen::Index i) {
    const auto k = static_cast<std::size_t>(i);
    blocks[k] = krica::extract_patches(set.images[k], a.patch, a.stride, a.limit, g.seed + k);
  });
  Eigen::Index rows = 0;
  for (const auto& b : blocks) rows += b.rows();
  Eigen::MatrixXd patches(rows, blocks.front().cols());
  std::vector<int> labels;
  labels.reserve(static_cast<std::size_t>(rows));
  Eigen::Index at = 0;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    patches.middleRows(at, blocks[i].rows()) = blocks[i];
    at += blocks[i].rows();
    labels.insert(labels.end(), static_cast<std::size_t>(blocks[i].rows()), set.labels[i]);
  }
  krica::write_kmx(a.out, patches);
  if (!a.labels_out.empty()) krica::write_labels(a.labels_out, labels);
  write_echo(sidecar(a.out), config_echo(cmd, g, {{"images", set.images.size()}, {"patches", rows},
                                                  {"dims", patches.cols()}, {"class_names", set.class_names}}));
  if (g.verbose) std::cerr << "extracted " << rows << " patches of dimension " << patches.cols() << '\n';
  return kExitOk;
}

// ----------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string patches;
  std::string labels;
  std::string mode = "krica";
  std::string kernel;
  std::optional<double> gamma;
  std::optional<double> b;
  double lambda = 1e-2;
  double alpha = 1e-1;
  std::string eta = "auto";
  Eigen::Index basis_size = 0;
  Eigen::Index classes = 1;
  std::string whiten;
  double retained = 1.0;
  Eigen::Index kpca_components = 0;
  std::string pooling;
  double epsilon = 1e-6;
  int max_iters = 100;
  double tol = 1e-5;
  bool no_center = false;
  std::string out;
};

krica::KernelSpec resolve_kernel(const std::string& name, std::optional<double> gamma, std::optional<double> b,
                                 krica::Mode mode) {
  std::string kind_name = name;
  if (kind_name.empty()) kind_name = krica::is_kernel_mode(mode) ? "gaussian" : "linear";
  const auto kind = krica::kernel_kind_from_string(kind_name);
  if (!kind) throw krica::InvalidArgument("unknown kernel '" + kind_name + "'");
  auto spec = krica::KernelSpec::with_defaults(*kind);
  if (gamma) spec.gamma = *gamma;
  if (b) spec.b = *b;
  spec.validate();
  return spec;
}

int run_train(const CLI::App* cmd, const TrainArgs& a, const Globals& g) {
  krica::Hyperparams hp;
  hp.mode = *krica::mode_from_string(a.mode);
  hp.kernel = resolve_kernel(a.kernel, a.gamma, a.b, hp.mode);
  hp.basis_size = a.basis_size;
  hp.class_count = a.classes;
  hp.lambda = a.lambda;
  hp.alpha = a.alpha;
  if (a.eta != "auto") {
    try {
      std::size_t used = 0;
      hp.eta = std::stod(a.eta, &used);
      if (used != a.eta.size()) throw std::invalid_argument(a.eta);
    } catch (const std::logic_error&) {
      throw krica::InvalidArgument("--eta must be 'auto' or a number, got '" + a.eta + "'");
    }
  }
  if (!a.pooling.empty()) hp.pooling = *krica::pooling_topology_from_string(a.pooling);
  hp.epsilon = a.epsilon;
  if (!a.whiten.empty()) hp.whitening = *krica::whiten_kind_from_string(a.whiten);
  hp.retained_energy = a.retained;
  hp.kpca_retained = a.kpca_components;
  hp.center_patches = !a.no_center;

  const bool discriminative = krica::is_discriminative(hp.mode);
  if (discriminative && a.labels.empty()) throw krica::InvalidArgument("--mode " + a.mode + " requires --labels");
  if (discriminative && hp.basis_size % hp.class_count != 0) {
    throw krica::InvalidArgument("--basis-size must be divisible by --classes");
  }
  if (!krica::is_kernel_mode(hp.mode) && hp.kernel.kind != krica::KernelKind::linear) {
    throw krica::InvalidArgument("--mode " + a.mode + " requires --kernel linear");
  }

  const Eigen::MatrixXd x = krica::read_kmx(a.patches);
  std::vector<int> labels;
  if (!a.labels.empty()) labels = krica::read_labels(a.labels);
  if (!labels.empty() && static_cast<Eigen::Index>(labels.size()) != x.rows()) {
    throw krica::InvalidArgument("--labels has " + std::to_string(labels.size()) + " rows, --patches has " +
                                 std::to_string(x.rows()));
  }
  if (discriminative) {
    for (int y : labels) {
      if (y < 0 || y >= hp.class_count) {
        throw krica::InvalidArgument("label " + std::to_string(y) + " outside [0, " +
                                     std::to_string(hp.class_count) + ")");
      }
    }
  }

  krica::SolveConfig cfg;
  cfg.max_outer_iters = a.max_iters;
  cfg.tol = a.tol;
  cfg.seed = g.seed;
  const auto result = krica::train(x, discriminative ? std::span<const int>(labels) : std::span<const int>(), hp, cfg);

  krica::save_model(a.out, result.model);
  const auto& trace = result.report.objective_trace;
  krica::write_kmx(fs::path(a.out) / "trace.kmx",
                   Eigen::Map<const Eigen::VectorXd>(trace.data(), static_cast<Eigen::Index>(trace.size())));
  const auto& r = result.report;
  const json resolved = {{"kernel", {{"kind", krica::to_string(result.model.kernel.kind)},
                                     {"gamma", result.model.kernel.gamma},
                                     {"b", result.model.kernel.b}}},
                         {"eta", result.model.eta},
                         {"whitening", krica::to_string(result.model.whitener.kind)},
                         {"whitened_dims", result.model.input_dim()},
                         {"pooling", krica::to_string(result.model.pooling.topology)},
                         {"converged", r.converged},
                         {"iterations", r.iterations_used},
                         {"rejected_iterations", r.rejected_iterations},
                         {"stalled_rows", r.stalled_rows},
                         {"final_objective", trace.empty() ? 0.0 : trace.back()},
                         {"final_grad_norm", r.final_grad_norm},
                         {"max_row_change", r.max_row_change}};
  write_echo(fs::path(a.out) / "config.json", config_echo(cmd, g, resolved));
  if (g.verbose) {
    std::cerr << "objective " << trace.front() << " -> " << trace.back() << " in " << r.iterations_used
              << " iterations (" << (r.converged ? "converged" : "not converged") << ")\n";
  }
  if (!r.converged) {
    std::cerr << "warning: iteration budget exhausted before convergence (max row change " << r.max_row_change
              << ")\n";
    return kExitNotConverged;
  }
  return kExitOk;
}

// ----------------------------------------------------------------------------
// encode / similarity

struct EncodeArgs {
  std::string model;
  DatasetArgs data;
  Eigen::Index patch = 6;
  std::string pooling = "sum";
  std::string out;
  std::string labels_out;
  std::string render;
};

krica::QuadrantPooling quadrant_pooling(const std::string& name) {
  return name == "max" ? krica::QuadrantPooling::max : krica::QuadrantPooling::sum;
}

int run_encode(const CLI::App* cmd, const EncodeArgs& a, const Globals& g) {
  const auto model = krica::load_model(a.model);
  const auto set = load_dataset(a.data);
  const Eigen::MatrixXd d = krica::encode_images(model, set.images, a.patch, g.threads, quadrant_pooling(a.pooling));
  krica::write_kmx(a.out, d);
  if (!a.labels_out.empty()) krica::write_labels(a.labels_out, set.labels);
  write_echo(sidecar(a.out), config_echo(cmd, g, {{"images", set.images.size()}, {"descriptor_dims", d.cols()}}));
  if (g.verbose) std::cerr << "encoded " << d.rows() << " images into " << d.cols() << "-dim descriptors\n";
  return kExitOk;
}

int run_similarity(const CLI::App* cmd, const EncodeArgs& a, const Globals& g) {
  const auto model = krica::load_model(a.model);
  const auto set = load_dataset(a.data);
  const Eigen::MatrixXd dist =
      krica::similarity_matrix(model, set.images, a.patch, g.threads, quadrant_pooling(a.pooling));
  krica::write_kmx(a.out, dist);
  if (!a.render.empty()) krica::write_pgm_matrix(a.render, krica::similarity_rendering(dist));
  const auto blocks = krica::block_distances(dist, set.labels);
  write_echo(sidecar(a.out), config_echo(cmd, g, {{"images", set.images.size()},
                                                  {"within", blocks.within},
                                                  {"between", blocks.between}}));
  std::cout << "within\t" << blocks.within << "\nbetween\t" << blocks.between << "\nratio\t" << blocks.ratio()
            << '\n';
  return kExitOk;
}

// ----------------------------------------------------------------------------
// classify

struct ClassifyArgs {
  std::string descriptors;
  std::string labels;
  std::string model_out;
  std::string model_in;
  double reg = 1e-3;
  int epochs = 2000;
  double tol = 1e-10;
  std::string config_out;
};

std::pair<Eigen::MatrixXd, std::vector<int>> read_labelled(const ClassifyArgs& a) {
  Eigen::MatrixXd d = krica::read_kmx(a.descriptors);
  std::vector<int> labels = krica::read_labels(a.labels);
  if (static_cast<Eigen::Index>(labels.size()) != d.rows()) {
    throw krica::InvalidArgument("--labels has " + std::to_string(labels.size()) + " rows, --descriptors has " +
                                 std::to_string(d.rows()));
  }
  return {std::move(d), std::move(labels)};
}

int run_classify_train(const CLI::App* cmd, const ClassifyArgs& a, const Globals& g) {
  const auto [d, labels] = read_labelled(a);
  krica::ClassifierConfig cfg;
  cfg.reg = a.reg;
  cfg.epochs = a.epochs;
  cfg.tol = a.tol;
  cfg.seed = g.seed;
  const auto clf = krica::train_classifier(d, labels, cfg);
  krica::save_classifier(a.model_out, clf);
  write_echo(fs::path(a.model_out) / "config.json",
             config_echo(cmd, g, {{"classes", clf.class_count()}, {"epochs_run", clf.epochs}}));
  if (g.verbose) std::cerr << "trained " << clf.class_count() << " one-vs-rest scorers\n";
  return kExitOk;
}

int run_classify_eval(const CLI::App* cmd, const ClassifyArgs& a, const Globals& g) {
  const auto [d, labels] = read_labelled(a);
  const auto clf = krica::load_classifier(a.model_in);
  const auto report = krica::accuracy(labels, krica::predict(clf, d), clf.class_count());
  std::cout << "overall\t" << report.overall << '\n';
  for (std::size_t c = 0; c < report.per_class.size(); ++c) {
    std::cout << "class_" << c << '\t' << report.per_class[c] << '\n';
  }
  const fs::path echo = a.config_out.empty() ? fs::path("krica_classify_eval.config.json") : fs::path(a.config_out);
  write_echo(echo, config_echo(cmd, g, {{"overall", report.overall}, {"per_class", report.per_class}}));
  return kExitOk;
}

// ----------------------------------------------------------------------------
// gradcheck

struct GradcheckArgs {
  std::string mode = "d-krica";
  std::string kernel;
  std::optional<double> gamma;
  Eigen::Index n = 8;
  Eigen::Index m = 20;
  Eigen::Index k = 12;
  Eigen::Index classes = 3;
  double lambda = 1e-2;
  double alpha = 1e-1;
  double step = 1e-3;
  std::string config_out;
};

int run_gradcheck(const CLI::App* cmd, const GradcheckArgs& a, const Globals& g) {
  const krica::Mode mode = *krica::mode_from_string(a.mode);
  if (a.n < 1 || a.m < 1 || a.k < 1 || a.classes < 1) {
    throw krica::InvalidArgument("--n, --m, --K and --classes must all be >= 1");
  }
  std::optional<double> gamma = a.gamma;
  if (!gamma) gamma = 0.5;
  krica::BasisModel model;
  model.mode = mode;
  model.kernel = resolve_kernel(a.kernel, gamma, std::nullopt, mode);
  model.lambda = a.lambda;
  model.alpha = a.alpha;
  model.pooling = krica::PoolingMatrix::make(krica::default_pooling(mode, a.k), a.k);
  model.whitener = krica::WhitenTransform::identity(a.n);
  model.seed = g.seed;

  std::mt19937_64 rng(g.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto random = [&](Eigen::Index rows, Eigen::Index cols, double sd) {
    Eigen::MatrixXd out(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index j = 0; j < cols; ++j) out(i, j) = sd * normal(rng);
    }
    return out;
  };
  const Eigen::MatrixXd x = random(a.m, a.n, 1.0);
  model.w = random(a.k, a.n, 0.5);
  std::vector<int> labels;
  if (krica::is_discriminative(mode)) {
    if (a.k % a.classes != 0) throw krica::InvalidArgument("--K must be divisible by --classes");
    model.selectors = krica::Selectors{a.classes, a.k / a.classes};
    model.eta = model.selectors->convex_eta();
    for (Eigen::Index i = 0; i < a.m; ++i) labels.push_back(static_cast<int>(i % a.classes));
    std::shuffle(labels.begin(), labels.end(), rng);
  }
  model.validate();
  const double err = krica::grad_check(model, x, labels, a.step, g.seed);
  std::cout << "max_relative_error\t" << err << '\n';
  const fs::path echo = a.config_out.empty() ? fs::path("krica_gradcheck.config.json") : fs::path(a.config_out);
  write_echo(echo, config_echo(cmd, g, {{"kernel", krica::to_string(model.kernel.kind)},
                                        {"gamma", model.kernel.gamma},
                                        {"eta", model.eta},
                                        {"max_relative_error", err}}));
  return err < 1e-4 ? kExitOk : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Kernel reconstruction ICA: feature learning and patch-based image classification"};
  app.require_subcommand(1);
  app.fallthrough();
  app.option_defaults()->always_capture_default();
  Globals g;
  app.add_option("--seed", g.seed, "Seed for every random choice");
  app.add_option("--threads", g.threads, "Worker threads (never changes results)")->check(CLI::PositiveNumber);
  app.add_flag("--verbose,-v", g.verbose, "Progress on standard error");

  const std::vector<std::string> modes{"rica", "krica", "d-rica", "d-krica"};

  ExtractArgs ex;
  auto* extract = app.add_subcommand("extract", "Cut images into patches");
  add_dataset_options(extract, ex.data);
  extract->add_option("--patch-size,-p", ex.patch, "Receptive field size")->check(CLI::PositiveNumber);
  extract->add_option("--stride", ex.stride, "Patch stride")->check(CLI::PositiveNumber);
  extract->add_option("--limit", ex.limit, "Random patches kept per image")->check(CLI::PositiveNumber);
  extract->add_option("--out", ex.out, "Patch matrix (KMX)")->required();
  extract->add_option("--labels-out", ex.labels_out, "Per-patch labels (KMX)");

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "Learn a basis from patches");
  train->add_option("--patches", tr.patches, "Patch matrix (KMX)")->required();
  train->add_option("--labels", tr.labels, "Per-patch labels (KMX), required by d-modes");
  train->add_option("--mode", tr.mode, "Learner")->check(CLI::IsMember(modes));
  train->add_option("--kernel", tr.kernel, "Kernel (default gaussian, linear for linear modes)");
  train->add_option("--gamma", tr.gamma, "Gaussian bandwidth (default 0.1)");
  train->add_option("--b", tr.b, "Polynomial degree / distance kernel offset");
  train->add_option("--lambda", tr.lambda, "Sparsity weight")->check(CLI::NonNegativeNumber);
  train->add_option("--alpha", tr.alpha, "Discrimination weight")->check(CLI::NonNegativeNumber);
  train->add_option("--eta", tr.eta, "Discrimination ridge: 'auto' (k + 1) or a number");
  train->add_option("--basis-size,-K", tr.basis_size, "Number of basis vectors")->required()->check(CLI::PositiveNumber);
  train->add_option("--classes", tr.classes, "Class count for d-modes")->check(CLI::PositiveNumber);
  train->add_option("--whiten", tr.whiten, "Whitening (default kpca for kernel modes, pca otherwise)")
      ->check(CLI::IsMember({"none", "pca", "kpca"}));
  train->add_option("--retained", tr.retained, "PCA energy fraction kept")->check(CLI::Range(1e-12, 1.0));
  train->add_option("--kpca-components", tr.kpca_components, "KPCA components kept (0: input dimension)")
      ->check(CLI::NonNegativeNumber);
  train->add_option("--pooling", tr.pooling, "Pooling topology")->check(CLI::IsMember({"identity", "grid3x3"}));
  train->add_option("--epsilon", tr.epsilon, "Pooling smoothing")->check(CLI::PositiveNumber);
  train->add_option("--max-iters", tr.max_iters, "Outer iteration budget")->check(CLI::PositiveNumber);
  train->add_option("--tol", tr.tol, "Relative row-change tolerance")->check(CLI::PositiveNumber);
  train->add_flag("--no-center", tr.no_center, "Keep each patch's mean");
  train->add_option("--out", tr.out, "Model directory")->required();

  EncodeArgs en;
  auto* encode = app.add_subcommand("encode", "Pooled 4K-dim descriptors for a dataset");
  encode->add_option("--model", en.model, "Model directory")->required();
  add_dataset_options(encode, en.data);
  encode->add_option("--patch-size,-p", en.patch, "Receptive field size")->check(CLI::PositiveNumber);
  encode->add_option("--pooling", en.pooling, "Quadrant pooling")->check(CLI::IsMember({"sum", "max"}));
  encode->add_option("--out", en.out, "Descriptor matrix (KMX)")->required();
  encode->add_option("--labels-out", en.labels_out, "Per-image labels (KMX)");

  EncodeArgs si;
  auto* similarity = app.add_subcommand("similarity", "Pairwise descriptor distances");
  similarity->add_option("--model", si.model, "Model directory")->required();
  add_dataset_options(similarity, si.data);
  similarity->add_option("--patch-size,-p", si.patch, "Receptive field size")->check(CLI::PositiveNumber);
  similarity->add_option("--pooling", si.pooling, "Quadrant pooling")->check(CLI::IsMember({"sum", "max"}));
  similarity->add_option("--out", si.out, "Distance matrix (KMX)")->required();
  similarity->add_option("--render", si.render, "exp(-d / median d) rendering (PGM)");

  ClassifyArgs ct;
  ClassifyArgs ce;
  auto* classify = app.add_subcommand("classify", "Linear one-vs-rest classifier");
  classify->require_subcommand(1);
  auto* ctrain = classify->add_subcommand("train", "Fit on descriptors");
  ctrain->add_option("--descriptors", ct.descriptors, "Descriptor matrix (KMX)")->required();
  ctrain->add_option("--labels", ct.labels, "Labels (KMX)")->required();
  ctrain->add_option("--model-out", ct.model_out, "Classifier directory")->required();
  ctrain->add_option("--reg", ct.reg, "L2 regularization")->check(CLI::PositiveNumber);
  ctrain->add_option("--epochs", ct.epochs, "Epoch budget")->check(CLI::PositiveNumber);
  ctrain->add_option("--tol", ct.tol, "Relative duality-gap tolerance")->check(CLI::PositiveNumber);
  auto* ceval = classify->add_subcommand("eval", "Accuracy as TSV on standard output");
  ceval->add_option("--descriptors", ce.descriptors, "Descriptor matrix (KMX)")->required();
  ceval->add_option("--labels", ce.labels, "Labels (KMX)")->required();
  ceval->add_option("--model-in", ce.model_in, "Classifier directory")->required();
  ceval->add_option("--config-out", ce.config_out, "Config echo path");

  GradcheckArgs gc;
  auto* gradcheck = app.add_subcommand("gradcheck", "Compare the analytic gradient with finite differences");
  gradcheck->add_option("--mode", gc.mode, "Learner")->check(CLI::IsMember(modes));
  gradcheck->add_option("--kernel", gc.kernel, "Kernel (default gaussian, linear for linear modes)");
  gradcheck->add_option("--gamma", gc.gamma, "Gaussian bandwidth (default 0.5)");
  gradcheck->add_option("--n", gc.n, "Input dimension");
  gradcheck->add_option("--m", gc.m, "Sample count");
  gradcheck->add_option("--K", gc.k, "Basis size");
  gradcheck->add_option("--classes", gc.classes, "Class count for d-modes");
  gradcheck->add_option("--lambda", gc.lambda, "Sparsity weight")->check(CLI::NonNegativeNumber);
  gradcheck->add_option("--alpha", gc.alpha, "Discrimination weight")->check(CLI::NonNegativeNumber);
  gradcheck->add_option("--step", gc.step, "Relative finite-difference step")->check(CLI::PositiveNumber);
  gradcheck->add_option("--config-out", gc.config_out, "Config echo path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*extract) return run_extract(extract, ex, g);
    if (*train) return run_train(train, tr, g);
    if (*encode) return run_encode(encode, en, g);
    if (*similarity) return run_similarity(similarity, si, g);
    if (*ctrain) return run_classify_train(ctrain, ct, g);
    if (*ceval) return run_classify_eval(ceval, ce, g);
    if (*gradcheck) return run_gradcheck(gradcheck, gc, g);
  } catch (const krica::IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const krica::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}
