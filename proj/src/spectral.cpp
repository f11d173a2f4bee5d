#include "convnorm/spectral.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <functional>
#include <json.hpp>

namespace convnorm {
namespace {

void check_fits(const KernelStack& kernels, SpatialExtent extent) {
  if (extent.height < kernels.k1() || extent.width < kernels.k2())
    throw ArgumentError("spectral analysis: grid " + std::to_string(extent.height) + "x" +
                        std::to_string(extent.width) + " smaller than kernel " + std::to_string(kernels.k1()) +
                        "x" + std::to_string(kernels.k2()));
}

// spectra[k * c_in + j] = a_kj_hat on the grid.
std::vector<std::vector<Complex>> kernel_spectra(const KernelStack& kernels, SpatialExtent e) {
  check_fits(kernels, e);
  std::vector<std::vector<Complex>> s(kernels.c_out() * kernels.c_in());
  for (std::size_t k = 0; k < kernels.c_out(); ++k)
    for (std::size_t j = 0; j < kernels.c_in(); ++j)
      s[k * kernels.c_in() + j] = padded_spectrum(kernels.kernel(k, j), kernels.k1(), kernels.k2(), e.height, e.width);
  return s;
}

std::vector<double> channel_gains(const std::vector<std::vector<Complex>>& spectra, std::size_t c_in,
                                  std::size_t channel) {
  std::vector<double> power(spectra[0].size(), 0.0);
  for (std::size_t j = 0; j < c_in; ++j)
    for (std::size_t i = 0; i < power.size(); ++i) power[i] += std::norm(spectra[channel * c_in + j][i]);
  for (auto& p : power) p = std::sqrt(p);
  return power;
}

double condition_of(double largest, double smallest) {
  return smallest <= kZeroSingularValue ? kInfiniteCondition : largest / smallest;
}

void sort_descending(std::vector<double>& v) { std::ranges::sort(v, std::greater<>()); }

}  // namespace

std::vector<double> layer_singular_values(const KernelStack& kernels, SpatialExtent extent) {
  const auto spectra = kernel_spectra(kernels, extent);
  const std::size_t co = kernels.c_out(), ci = kernels.c_in(), n = extent.height * extent.width;
  std::vector<double> values;
  values.reserve(n * std::min(co, ci));

  if (co == 1 || ci == 1) {
    // Each block is a row or column vector: its one singular value is its norm.
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (const auto& spec : spectra) s += std::norm(spec[i]);
      values.push_back(std::sqrt(s));
    }
  } else {
    Eigen::MatrixXcd block(co, ci);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < co; ++k)
        for (std::size_t j = 0; j < ci; ++j) block(k, j) = spectra[k * ci + j][i];
      Eigen::JacobiSVD<Eigen::MatrixXcd> svd(block);
      const auto& sv = svd.singularValues();
      values.insert(values.end(), sv.data(), sv.data() + sv.size());
    }
  }
  sort_descending(values);
  return values;
}

std::vector<double> channel_singular_values(const KernelStack& kernels, std::size_t channel,
                                            SpatialExtent extent) {
  if (channel >= kernels.c_out()) throw ArgumentError("channel out of range");
  auto gains = channel_gains(kernel_spectra(kernels, extent), kernels.c_in(), channel);
  sort_descending(gains);
  return gains;
}

double channel_spectral_norm(const KernelStack& kernels, std::size_t channel, SpatialExtent extent) {
  return channel_singular_values(kernels, channel, extent).front();
}

double channel_condition_number(const KernelStack& kernels, std::size_t channel, SpatialExtent extent) {
  const auto sv = channel_singular_values(kernels, channel, extent);
  return condition_of(sv.front(), sv.back());
}

double layer_condition_number(const KernelStack& kernels, SpatialExtent extent) {
  const auto sv = layer_singular_values(kernels, extent);
  return condition_of(sv.front(), sv.back());
}

double tight_frame_residual(const KernelStack& kernels, std::size_t channel, SpatialExtent extent) {
  if (channel >= kernels.c_out()) throw ArgumentError("channel out of range");
  const auto gains = channel_gains(kernel_spectra(kernels, extent), kernels.c_in(), channel);
  double r = 0.0;
  for (double g : gains) r = std::max(r, std::abs(g * g - 1.0));
  return r;
}

Prop31Check check_prop31(const KernelStack& kernels, SpatialExtent extent) {
  const auto spectra = kernel_spectra(kernels, extent);
  double sum_sq = 0.0;
  for (std::size_t k = 0; k < kernels.c_out(); ++k) {
    const auto gains = channel_gains(spectra, kernels.c_in(), k);
    const double norm_k = *std::ranges::max_element(gains);
    sum_sq += norm_k * norm_k;
  }
  Prop31Check c;
  c.norm = layer_singular_values(kernels, extent).front();
  c.bound = std::sqrt(sum_sq);
  c.slack = c.bound - c.norm;
  return c;
}

RhoMetric condition_ratio_rho(std::span<const double> baseline, std::span<const double> method) {
  if (baseline.size() != method.size())
    throw ArgumentError("condition_ratio_rho: " + std::to_string(baseline.size()) + " baseline layers vs " +
                        std::to_string(method.size()) + " method layers");
  RhoMetric m;
  double sum = 0.0;
  for (std::size_t i = 0; i < baseline.size(); ++i) {
    if (!(baseline[i] > 0.0) || !(method[i] > 0.0))
      throw ArgumentError("condition_ratio_rho: condition numbers must be positive");
    if (std::isinf(baseline[i]) && std::isinf(method[i])) {
      ++m.excluded;
      continue;
    }
    const double r = baseline[i] / method[i];
    m.ratios.push_back(r);
    sum += r;
  }
  m.rho = m.ratios.empty() ? 0.0 : sum / static_cast<double>(m.ratios.size());
  return m;
}

SpectralReport analyze_layer(const KernelStack& kernels, SpatialExtent extent) {
  const auto spectra = kernel_spectra(kernels, extent);
  SpectralReport r;
  double sum_sq = 0.0;
  for (std::size_t k = 0; k < kernels.c_out(); ++k) {
    const auto gains = channel_gains(spectra, kernels.c_in(), k);
    const auto [lo, hi] = std::ranges::minmax_element(gains);
    r.channel_spectral_norms.push_back(*hi);
    r.channel_condition_numbers.push_back(condition_of(*hi, *lo));
    sum_sq += *hi * *hi;
  }
  r.layer_singular_values = layer_singular_values(kernels, extent);
  r.spectral_norm = r.layer_singular_values.front();
  r.prop31_bound = std::sqrt(sum_sq);
  r.prop31_slack = r.prop31_bound - r.spectral_norm;
  r.zero_sv_count = static_cast<std::size_t>(
      std::ranges::count_if(r.layer_singular_values, [](double s) { return s <= kZeroSingularValue; }));
  return r;
}

std::string report_to_json(const SpectralReport& report, int indent) {
  nlohmann::ordered_json kappa = nlohmann::ordered_json::array();
  for (double k : report.channel_condition_numbers) {
    if (std::isinf(k))
      kappa.push_back("inf");
    else
      kappa.push_back(k);
  }
  nlohmann::ordered_json j;
  j["channel_condition_numbers"] = std::move(kappa);
  j["channel_spectral_norms"] = report.channel_spectral_norms;
  j["layer_singular_values"] = report.layer_singular_values;
  j["spectral_norm"] = report.spectral_norm;
  j["prop31_bound"] = report.prop31_bound;
  j["prop31_slack"] = report.prop31_slack;
  j["zero_sv_count"] = report.zero_sv_count;
  return j.dump(indent);
}

SpectralReport report_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("spectral report: ") + e.what());
  }
  SpectralReport r;
  try {
    for (const auto& k : j.at("channel_condition_numbers")) {
      if (k.is_string()) {
        if (k.get<std::string>() != "inf") throw FormatError("spectral report: bad condition number " + k.dump());
        r.channel_condition_numbers.push_back(kInfiniteCondition);
      } else {
        r.channel_condition_numbers.push_back(k.get<double>());
      }
    }
    r.channel_spectral_norms = j.at("channel_spectral_norms").get<std::vector<double>>();
    r.layer_singular_values = j.at("layer_singular_values").get<std::vector<double>>();
    r.spectral_norm = j.at("spectral_norm").get<double>();
    r.prop31_bound = j.at("prop31_bound").get<double>();
    r.prop31_slack = j.at("prop31_slack").get<double>();
    r.zero_sv_count = j.at("zero_sv_count").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("spectral report: ") + e.what());
  }
  return r;
}

}  // namespace convnorm
