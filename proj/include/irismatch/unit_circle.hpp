#pragma once

// Unit-Circle feature layers: single-input, two-output convolutions whose
// per-pixel response vector is scaled to unit length. A bank of such filters
// replaces the Gabor filtering stage of a classical iris pipeline.

#include <cmath>
#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "irismatch/ops.hpp"
#include "irismatch/random.hpp"

namespace irismatch {

struct KernelSize {
  std::size_t height = 3;
  std::size_t width = 3;

  friend bool operator==(const KernelSize&, const KernelSize&) = default;
};

/// Response nonlinearity applied after each filter. unit_circle is the
/// method itself; relu and elu exist for the ablation comparison.
enum class BankActivation { unit_circle, relu, elu };

inline std::string to_string(BankActivation a) {
  switch (a) {
    case BankActivation::unit_circle: return "unit_circle";
    case BankActivation::relu: return "relu";
    case BankActivation::elu: return "elu";
  }
  return "unknown";
}

inline BankActivation parse_bank_activation(const std::string& text) {
  if (text == "unit_circle") return BankActivation::unit_circle;
  if (text == "relu") return BankActivation::relu;
  if (text == "elu") return BankActivation::elu;
  throw std::invalid_argument("unknown bank activation '" + text + "'");
}

/// One filter: weight [2,1,kh,kw] and optional bias [2], stride 1.
struct UnitCircleFilter {
  Tensor weight;
  Tensor bias;  // undefined in bias-free mode

  KernelSize kernel() const { return {weight.dim(2), weight.dim(3)}; }

  void validate() const {
    if (!weight.defined() || weight.rank() != 4 || weight.dim(0) != 2 || weight.dim(1) != 1) {
      throw ShapeError("UnitCircleFilter: weight must be [2,1,kh,kw]");
    }
    if (weight.dim(2) % 2 == 0 || weight.dim(3) % 2 == 0) {
      throw ShapeError("UnitCircleFilter: kernel extents must be odd");
    }
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != 2)) {
      throw ShapeError("UnitCircleFilter: bias must be [2]");
    }
  }
};

/// He-uniform weights (bound sqrt(6 / fan_in)), bias uniform in
/// +-1/sqrt(fan_in).
inline UnitCircleFilter make_unit_circle_filter(KernelSize k, bool with_bias, Rng& rng) {
  if (k.height % 2 == 0 || k.width % 2 == 0 || k.height == 0 || k.width == 0) {
    throw ShapeError("make_unit_circle_filter: kernel extents must be odd and positive");
  }
  const double fan_in = static_cast<double>(k.height * k.width);
  const double bound = std::sqrt(6.0 / fan_in);
  std::vector<double> w(2 * k.height * k.width);
  for (double& v : w) v = rng.uniform(-bound, bound);
  UnitCircleFilter f;
  f.weight = Tensor({2, 1, k.height, k.width}, std::move(w), true);
  if (with_bias) {
    const double b = 1.0 / std::sqrt(fan_in);
    f.bias = Tensor({2}, {rng.uniform(-b, b), rng.uniform(-b, b)}, true);
  }
  return f;
}

/// Raw two-channel response with wrap padding; output keeps the input size.
inline Tensor unit_circle_response(const Tensor& x, const UnitCircleFilter& f) {
  f.validate();
  const KernelSize k = f.kernel();
  return conv2d(x, f.weight, f.bias, {}, PaddingSpec::wrap(k.height, k.width));
}

/// x [B,1,H,W] -> [B,2,H,W] with every non-degenerate pixel on the unit circle.
inline Tensor uc_forward(const Tensor& x, const UnitCircleFilter& f) {
  return unit_circle_normalize(unit_circle_response(x, f));
}

/// Default filter geometry, height x width.
inline std::vector<KernelSize> default_bank_kernels() {
  return {{7, 9}, {7, 17}, {11, 17}, {11, 33}, {15, 33}};
}

struct UnitCircleBank {
  std::vector<UnitCircleFilter> filters;
  BankActivation activation = BankActivation::unit_circle;

  std::size_t size() const { return filters.size(); }
  std::size_t output_channels() const { return 2 * filters.size(); }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (const auto& f : filters) {
      out.push_back(f.weight);
      if (f.bias.defined()) out.push_back(f.bias);
    }
    return out;
  }

  UnitCircleBank clone() const {
    UnitCircleBank copy;
    copy.activation = activation;
    for (const auto& f : filters) {
      copy.filters.push_back({f.weight.clone(), f.bias.defined() ? f.bias.clone() : Tensor{}});
    }
    return copy;
  }
};

inline UnitCircleBank make_unit_circle_bank(const std::vector<KernelSize>& kernels, bool with_bias,
                                            Rng& rng,
                                            BankActivation activation = BankActivation::unit_circle) {
  if (kernels.empty()) throw std::invalid_argument("make_unit_circle_bank: empty kernel list");
  UnitCircleBank bank;
  bank.activation = activation;
  for (const auto& k : kernels) bank.filters.push_back(make_unit_circle_filter(k, with_bias, rng));
  return bank;
}

/// Concatenated filter responses: [B,1,H,W] -> [B,2F,H,W] in filter order.
inline Tensor bank_forward(const Tensor& x, const UnitCircleBank& bank) {
  if (bank.filters.empty()) throw std::invalid_argument("bank_forward: empty bank");
  if (x.rank() != 4 || x.dim(1) != 1) {
    throw ShapeError("bank_forward: expected [B,1,H,W], got " + shape_string(x.shape()));
  }
  std::vector<Tensor> responses;
  responses.reserve(bank.filters.size());
  for (const auto& f : bank.filters) {
    Tensor raw = unit_circle_response(x, f);
    switch (bank.activation) {
      case BankActivation::unit_circle: responses.push_back(unit_circle_normalize(raw)); break;
      case BankActivation::relu: responses.push_back(relu(raw)); break;
      case BankActivation::elu: responses.push_back(elu(raw)); break;
    }
  }
  if (responses.size() == 1) return responses.front();
  return concat_channels(responses);
}

}  // namespace irismatch
