#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "convnorm/convnorm.hpp"
#include "convnorm/spectral.hpp"
#include "convnorm/tensor_io.hpp"
#include "convnorm/train.hpp"
#include "convnorm/verify.hpp"

namespace fs = std::filesystem;
using namespace convnorm;

namespace {

constexpr int kOk = 0;
constexpr int kDomainError = 1;
constexpr int kUsageError = 2;

struct CliConfig {
  std::string subcommand;
  std::string in, out, report;
  std::vector<std::size_t> hw;
  std::optional<double> eps;
  std::size_t stride = 1;
  std::uint64_t seed = 0;
  std::string mode = "convnorm-affine";
};

class UsageError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Flag beats CONVNORM_EPS beats the library default.
double resolve_epsilon(const CliConfig& cfg) {
  if (cfg.eps) return *cfg.eps;
  if (const char* env = std::getenv("CONVNORM_EPS")) {
    char* end = nullptr;
    const double v = std::strtod(env, &end);
    if (end == env || *end != '\0' || !(v >= 0.0)) throw UsageError(std::string("CONVNORM_EPS is not a non-negative number: ") + env);
    return v;
  }
  return kDefaultEpsilon;
}

void require_input(const std::string& path) {
  if (path.empty()) throw UsageError("--in is required");
  if (!fs::is_regular_file(path)) throw UsageError(path + ": no such file");
}

void require_output_parent(const std::string& path, const char* flag) {
  if (path.empty()) throw UsageError(std::string(flag) + " is required");
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty() && !fs::is_directory(parent)) throw UsageError(path + ": parent directory does not exist");
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw UsageError(path + ": cannot open for writing");
  os << text << '\n';
  if (!os) throw UsageError(path + ": write failed");
}

KernelStack load_kernels(const CliConfig& cfg, SpatialExtent& extent) {
  require_input(cfg.in);
  Tensor t = read_tensor(fs::path(cfg.in));
  if (t.rank() != 4) throw FormatError(cfg.in + ": expected a (C_O,C_I,k1,k2) kernel tensor, got shape " + shape_string(t.shape()));
  KernelStack kernels(std::move(t));
  if (cfg.hw.empty()) {
    extent = {kernels.k1(), kernels.k2()};
  } else {
    extent = {cfg.hw[0], cfg.hw[1]};
    if (extent.height < kernels.k1() || extent.width < kernels.k2())
      throw UsageError("--hw " + std::to_string(extent.height) + " " + std::to_string(extent.width) +
                       " is smaller than the kernel extent " + std::to_string(kernels.k1()) + "x" +
                       std::to_string(kernels.k2()));
  }
  return kernels;
}

int run_analyze(const CliConfig& cfg) {
  if (!cfg.out.empty()) require_output_parent(cfg.out, "--out");
  SpatialExtent extent;
  const auto kernels = load_kernels(cfg, extent);
  const auto json = report_to_json(analyze_layer(kernels, extent));
  if (cfg.out.empty())
    std::cout << json << '\n';
  else
    write_text(cfg.out, json);
  return kOk;
}

int run_normalize(const CliConfig& cfg) {
  require_output_parent(cfg.out, "--out");
  if (!cfg.report.empty()) require_output_parent(cfg.report, "--report");
  SpatialExtent extent;
  const auto kernels = load_kernels(cfg, extent);
  const double eps = resolve_epsilon(cfg);
  // Normalization happens before downsampling, so the kernels do not depend on the stride.
  const auto g = reparam_kernels(kernels, extent, eps);
  write_tensor(fs::path(cfg.out), g.weights());
  if (!cfg.report.empty()) {
    nlohmann::ordered_json j;
    j["epsilon"] = eps;
    j["stride"] = cfg.stride;
    j["height"] = extent.height;
    j["width"] = extent.width;
    j["before"] = nlohmann::ordered_json::parse(report_to_json(analyze_layer(kernels, extent)));
    j["after"] = nlohmann::ordered_json::parse(report_to_json(analyze_layer(g, extent)));
    write_text(cfg.report, j.dump(2));
  }
  return kOk;
}

int run_train_demo(const CliConfig& cfg) {
  if (cfg.out.empty()) throw UsageError("--out DIR is required");
  const NormMode mode = parse_norm_mode(cfg.mode);
  if (mode == NormMode::none) throw UsageError("--mode for train-demo must be convnorm or convnorm-affine");
  fs::create_directories(cfg.out);
  auto demo = make_convergence_demo(cfg.seed, mode, resolve_epsilon(cfg));
  run_convergence_demo(demo);
  const fs::path dir(cfg.out);
  const auto base = std::string(to_string(demo.baseline.mode));
  const auto norm = std::string(to_string(demo.normalized.mode));
  write_text((dir / (base + ".csv")).string(), trace_to_csv(demo.baseline_trace));
  write_text((dir / (base + ".json")).string(), trace_header_json(demo.baseline_trace));
  write_text((dir / (norm + ".csv")).string(), trace_to_csv(demo.normalized_trace));
  write_text((dir / (norm + ".json")).string(), trace_header_json(demo.normalized_trace));
  write_text((dir / "comparison.json").string(), demo.comparison_json());
  std::cout << demo.comparison_json() << '\n';
  return kOk;
}

int run_verify() {
  bool all = true;
  for (const auto& r : run_verification_suite()) {
    std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << '\n';
    all = all && r.passed;
  }
  return all ? kOk : kDomainError;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spectral analysis and ConvNorm reparametrization of convolution kernels"};
  app.require_subcommand(1);
  CliConfig cfg;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--in", cfg.in, "Input CNT1 kernel tensor (C_O,C_I,k1,k2)");
    sub->add_option("--hw", cfg.hw, "Spatial grid H W")->expected(2);
    sub->add_option("--eps", cfg.eps, "Epsilon inside the preconditioner (overrides CONVNORM_EPS)")
        ->check(CLI::NonNegativeNumber);
    sub->add_option("--stride", cfg.stride, "Layer stride")->check(CLI::PositiveNumber);
  };
  auto* analyze = app.add_subcommand("analyze", "Write a spectral report for a kernel file");
  add_common(analyze);
  analyze->add_option("--out", cfg.out, "Report JSON path (stdout if omitted)");
  auto* normalize = app.add_subcommand("normalize", "Write reparametrized kernels");
  add_common(normalize);
  normalize->add_option("--out", cfg.out, "Output CNT1 path");
  normalize->add_option("--report", cfg.report, "Before/after report JSON path");
  auto* demo = app.add_subcommand("train-demo", "Train the toy net with and without ConvNorm");
  demo->add_option("--out", cfg.out, "Output directory");
  demo->add_option("--seed", cfg.seed, "Task, init and shuffle seed");
  demo->add_option("--mode", cfg.mode, "Normalized arm")->check(CLI::IsMember({"convnorm", "convnorm-affine"}));
  demo->add_option("--eps", cfg.eps, "Epsilon inside the preconditioner")->check(CLI::NonNegativeNumber);
  app.add_subcommand("verify", "Run the oracle equivalence suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsageError;
  }
  cfg.subcommand = app.get_subcommands().front()->get_name();

  try {
    if (cfg.subcommand == "analyze") return run_analyze(cfg);
    if (cfg.subcommand == "normalize") return run_normalize(cfg);
    if (cfg.subcommand == "train-demo") return run_train_demo(cfg);
    return run_verify();
  } catch (const SingularSpectrumError& e) {
    std::cerr << "error: " << cfg.in << ": " << e.what() << '\n';
    return kDomainError;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const ArgumentError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  }
}
