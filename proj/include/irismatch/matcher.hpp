#pragma once

// The Matcher network and the assembled iris-matching model.
//
// A pair of normalized irises goes through one shared Unit-Circle bank; the two
// 2F-channel responses are stacked into a 4F-channel input for a fully
// convolutional Matcher whose 1-channel head is averaged over space and
// squashed to a match probability.

#include <charconv>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "irismatch/image.hpp"
#include "irismatch/ops.hpp"
#include "irismatch/random.hpp"
#include "irismatch/unit_circle.hpp"

namespace irismatch {

struct ConvBlockSpec {
  std::size_t out_channels = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  bool batch_norm = true;
  double dropout = 0.0;

  friend bool operator==(const ConvBlockSpec&, const ConvBlockSpec&) = default;
};

namespace detail {

inline std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, sep)) out.push_back(item);
  if (!text.empty() && text.back() == sep) out.emplace_back();
  return out;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::size_t parse_size(const std::string& text, const char* what) {
  std::size_t value = 0;
  const std::string t = trim(text);
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
  if (ec != std::errc{} || ptr != t.data() + t.size() || t.empty()) {
    throw std::invalid_argument(std::string("invalid ") + what + " '" + text + "'");
  }
  return value;
}

inline double parse_real(const std::string& text, const char* what) {
  const std::string t = trim(text);
  try {
    std::size_t used = 0;
    const double v = std::stod(t, &used);
    if (used != t.size()) throw std::invalid_argument(t);
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument(std::string("invalid ") + what + " '" + text + "'");
  }
}

inline std::string format_real(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace detail

/// Ordered conv blocks; the 1x1 head, pooling and sigmoid are implied.
struct MatcherSpec {
  std::vector<ConvBlockSpec> blocks;

  friend bool operator==(const MatcherSpec&, const MatcherSpec&) = default;

  /// Five [conv 3x3, ELU, batch-norm] blocks 32-64-96-128-160, stride 2 from
  /// the second block on, dropout 0.3 after blocks 3 and 4.
  static MatcherSpec defaults() {
    return {{{32, 3, 1, true, 0.0},
             {64, 3, 2, true, 0.0},
             {96, 3, 2, true, 0.3},
             {128, 3, 2, true, 0.3},
             {160, 3, 2, true, 0.0}}};
  }

  /// "out:kernel:stride:bn|nobn:dropout" entries separated by commas.
  std::string to_string() const {
    std::string out;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const auto& b = blocks[i];
      if (i) out += ',';
      out += std::to_string(b.out_channels) + ':' + std::to_string(b.kernel) + ':' +
             std::to_string(b.stride) + ':' + (b.batch_norm ? "bn" : "nobn") + ':' +
             detail::format_real(b.dropout);
    }
    return out;
  }

  static MatcherSpec parse(const std::string& text) {
    MatcherSpec spec;
    if (detail::trim(text).empty()) return spec;
    for (const auto& entry : detail::split(text, ',')) {
      const auto fields = detail::split(detail::trim(entry), ':');
      if (fields.size() != 5) {
        throw std::invalid_argument("matcher block '" + entry + "' needs out:kernel:stride:bn:dropout");
      }
      ConvBlockSpec b;
      b.out_channels = detail::parse_size(fields[0], "block channels");
      b.kernel = detail::parse_size(fields[1], "block kernel");
      b.stride = detail::parse_size(fields[2], "block stride");
      if (fields[3] == "bn") {
        b.batch_norm = true;
      } else if (fields[3] == "nobn") {
        b.batch_norm = false;
      } else {
        throw std::invalid_argument("matcher block '" + entry + "': expected bn or nobn");
      }
      b.dropout = detail::parse_real(fields[4], "block dropout");
      if (b.out_channels == 0 || b.kernel % 2 == 0 || b.stride == 0 || b.dropout < 0.0 || b.dropout >= 1.0) {
        throw std::invalid_argument("matcher block '" + entry + "' is out of range");
      }
      spec.blocks.push_back(b);
    }
    return spec;
  }
};

inline std::string kernels_to_string(const std::vector<KernelSize>& kernels) {
  std::string out;
  for (std::size_t i = 0; i < kernels.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(kernels[i].height) + 'x' + std::to_string(kernels[i].width);
  }
  return out;
}

inline std::vector<KernelSize> parse_kernels(const std::string& text) {
  std::vector<KernelSize> out;
  for (const auto& entry : detail::split(text, ',')) {
    const auto hw = detail::split(detail::trim(entry), 'x');
    if (hw.size() != 2) throw std::invalid_argument("kernel '" + entry + "' must be HxW");
    KernelSize k{detail::parse_size(hw[0], "kernel height"), detail::parse_size(hw[1], "kernel width")};
    if (k.height % 2 == 0 || k.width % 2 == 0) {
      throw std::invalid_argument("kernel '" + entry + "' must have odd extents");
    }
    out.push_back(k);
  }
  if (out.empty()) throw std::invalid_argument("empty kernel list");
  return out;
}

/// Everything needed to rebuild a model's shape; stored in checkpoints.
struct ArchitectureSpec {
  std::size_t height = kNormalizedHeight;
  std::size_t width = kNormalizedWidth;
  std::vector<KernelSize> bank_kernels = default_bank_kernels();
  bool bank_bias = true;
  BankActivation bank_activation = BankActivation::unit_circle;
  MatcherSpec matcher = MatcherSpec::defaults();

  friend bool operator==(const ArchitectureSpec&, const ArchitectureSpec&) = default;

  std::string to_string() const {
    std::ostringstream os;
    os << "input=" << height << 'x' << width << '\n'
       << "bank=" << kernels_to_string(bank_kernels) << '\n'
       << "bank_bias=" << (bank_bias ? 1 : 0) << '\n'
       << "bank_activation=" << irismatch::to_string(bank_activation) << '\n'
       << "matcher=" << matcher.to_string() << '\n';
    return os.str();
  }

  static ArchitectureSpec parse(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
      line = detail::trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw std::invalid_argument("architecture line '" + line + "' lacks '='");
      kv[detail::trim(line.substr(0, eq))] = detail::trim(line.substr(eq + 1));
    }
    ArchitectureSpec spec;
    for (const auto& [key, value] : kv) {
      if (key == "input") {
        const auto hw = detail::split(value, 'x');
        if (hw.size() != 2) throw std::invalid_argument("architecture input must be HxW");
        spec.height = detail::parse_size(hw[0], "input height");
        spec.width = detail::parse_size(hw[1], "input width");
      } else if (key == "bank") {
        spec.bank_kernels = parse_kernels(value);
      } else if (key == "bank_bias") {
        spec.bank_bias = detail::parse_size(value, "bank_bias") != 0;
      } else if (key == "bank_activation") {
        spec.bank_activation = parse_bank_activation(value);
      } else if (key == "matcher") {
        spec.matcher = MatcherSpec::parse(value);
      } else {
        throw std::invalid_argument("unknown architecture key '" + key + "'");
      }
    }
    return spec;
  }
};

/// A named view of one piece of model state, used by checkpointing.
struct StateEntry {
  std::string name;
  Shape shape;
  std::span<double> values;
  bool trainable = true;
};

struct ConvBlock {
  ConvBlockSpec spec;
  Tensor weight;
  Tensor bias;
  Tensor gamma;
  Tensor beta;
  BatchNormStats stats;
};

class MatcherModel {
 public:
  MatcherModel() = default;

  MatcherModel(std::size_t in_channels, const MatcherSpec& spec, Rng& rng) : in_channels_(in_channels) {
    if (in_channels == 0) throw std::invalid_argument("MatcherModel: zero input channels");
    std::size_t channels = in_channels;
    for (const auto& b : spec.blocks) {
      ConvBlock block;
      block.spec = b;
      block.weight = he_uniform({b.out_channels, channels, b.kernel, b.kernel}, rng);
      block.bias = bias_uniform(b.out_channels, channels * b.kernel * b.kernel, rng);
      if (b.batch_norm) {
        block.gamma = Tensor::full({b.out_channels}, 1.0, true);
        block.beta = Tensor::zeros({b.out_channels}, true);
        block.stats = BatchNormStats(b.out_channels);
      }
      blocks_.push_back(std::move(block));
      channels = b.out_channels;
    }
    head_weight_ = he_uniform({1, channels, 1, 1}, rng);
    head_bias_ = bias_uniform(1, channels, rng);
  }

  std::size_t in_channels() const { return in_channels_; }
  const std::vector<ConvBlock>& blocks() const { return blocks_; }
  Tensor& head_weight() { return head_weight_; }
  Tensor& head_bias() { return head_bias_; }

  /// x [B,4F,H,W] -> match probabilities [B]. Train mode uses batch
  /// statistics (and updates running ones) and applies dropout from `rng`.
  Tensor forward(const Tensor& x, bool train, Rng* rng = nullptr) {
    return sigmoid(logits(x, train, rng));
  }

  Tensor logits(const Tensor& x, bool train, Rng* rng = nullptr) {
    if (x.rank() != 4 || x.dim(1) != in_channels_) {
      throw ShapeError("Matcher: expected [B," + std::to_string(in_channels_) + ",H,W], got " +
                       shape_string(x.shape()));
    }
    Tensor h = x;
    for (auto& block : blocks_) {
      const auto& s = block.spec;
      h = conv2d(h, block.weight, block.bias, {s.stride, s.stride}, PaddingSpec::same(s.kernel, s.kernel));
      h = elu(h);
      if (s.batch_norm) h = batch_norm(h, block.gamma, block.beta, block.stats, train);
      if (s.dropout > 0.0 && train) {
        if (!rng) throw std::invalid_argument("Matcher: train-mode dropout needs an rng");
        h = dropout(h, s.dropout, true, *rng);
      }
    }
    h = conv2d(h, head_weight_, head_bias_);
    h = global_avg_pool(h);
    return reshape(h, {h.dim(0)});
  }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (const auto& b : blocks_) {
      out.push_back(b.weight);
      out.push_back(b.bias);
      if (b.spec.batch_norm) {
        out.push_back(b.gamma);
        out.push_back(b.beta);
      }
    }
    out.push_back(head_weight_);
    out.push_back(head_bias_);
    return out;
  }

  void append_state(std::vector<StateEntry>& out, const std::string& prefix) {
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      auto& b = blocks_[i];
      const std::string p = prefix + "block" + std::to_string(i) + '.';
      out.push_back({p + "conv.weight", b.weight.shape(), b.weight.mutable_data()});
      out.push_back({p + "conv.bias", b.bias.shape(), b.bias.mutable_data()});
      if (b.spec.batch_norm) {
        out.push_back({p + "bn.gamma", b.gamma.shape(), b.gamma.mutable_data()});
        out.push_back({p + "bn.beta", b.beta.shape(), b.beta.mutable_data()});
        out.push_back({p + "bn.running_mean", {b.stats.mean.size()}, b.stats.mean, false});
        out.push_back({p + "bn.running_var", {b.stats.var.size()}, b.stats.var, false});
      }
    }
    out.push_back({prefix + "head.weight", head_weight_.shape(), head_weight_.mutable_data()});
    out.push_back({prefix + "head.bias", head_bias_.shape(), head_bias_.mutable_data()});
  }

  MatcherModel clone() const {
    MatcherModel copy;
    copy.in_channels_ = in_channels_;
    for (const auto& b : blocks_) {
      ConvBlock c;
      c.spec = b.spec;
      c.weight = b.weight.clone();
      c.bias = b.bias.clone();
      if (b.spec.batch_norm) {
        c.gamma = b.gamma.clone();
        c.beta = b.beta.clone();
      }
      c.stats = b.stats;
      copy.blocks_.push_back(std::move(c));
    }
    copy.head_weight_ = head_weight_.clone();
    copy.head_bias_ = head_bias_.clone();
    return copy;
  }

 private:
  static Tensor he_uniform(Shape shape, Rng& rng) {
    const double fan_in = static_cast<double>(shape[1] * shape[2] * shape[3]);
    const double bound = std::sqrt(6.0 / fan_in);
    std::vector<double> w(shape_numel(shape));
    for (double& v : w) v = rng.uniform(-bound, bound);
    return Tensor(std::move(shape), std::move(w), true);
  }

  static Tensor bias_uniform(std::size_t n, std::size_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<double> b(n);
    for (double& v : b) v = rng.uniform(-bound, bound);
    return Tensor({n}, std::move(b), true);
  }

  std::size_t in_channels_ = 0;
  std::vector<ConvBlock> blocks_;
  Tensor head_weight_;
  Tensor head_bias_;
};

/// Number of scalar trainable values.
inline std::size_t parameter_count(const std::vector<Tensor>& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.numel();
  return n;
}

/// Channel stack of the bank responses of both images: [B,4F,H,W].
inline Tensor pair_input(const Tensor& xq, const Tensor& xr, const UnitCircleBank& bank) {
  if (xq.shape() != xr.shape()) {
    throw ShapeError("pair_input: image shapes differ " + shape_string(xq.shape()) + " vs " +
                     shape_string(xr.shape()));
  }
  return concat_channels({bank_forward(xq, bank), bank_forward(xr, bank)});
}

inline Tensor pair_input(const NormalizedIris& q, const NormalizedIris& r, const UnitCircleBank& bank) {
  if (q.height != r.height || q.width != r.width) {
    throw ShapeError("pair_input: iris shapes differ");
  }
  return pair_input(to_tensor(q), to_tensor(r), bank);
}

class IrisMatchModel {
 public:
  IrisMatchModel() = default;

  IrisMatchModel(const ArchitectureSpec& arch, std::uint64_t seed) : arch_(arch) {
    Rng bank_rng(derive_seed(seed, 1));
    Rng matcher_rng(derive_seed(seed, 2));
    bank_ = make_unit_circle_bank(arch.bank_kernels, arch.bank_bias, bank_rng, arch.bank_activation);
    matcher_ = MatcherModel(4 * arch.bank_kernels.size(), arch.matcher, matcher_rng);
  }

  const ArchitectureSpec& architecture() const { return arch_; }
  UnitCircleBank& bank() { return bank_; }
  const UnitCircleBank& bank() const { return bank_; }
  MatcherModel& matcher() { return matcher_; }
  const MatcherModel& matcher() const { return matcher_; }

  /// Match probabilities [B] for image batches [B,1,H,W].
  Tensor forward(const Tensor& xq, const Tensor& xr, bool train, Rng* rng = nullptr) {
    check_geometry(xq);
    return matcher_.forward(pair_input(xq, xr, bank_), train, rng);
  }

  /// Eval-mode probability for one pair; deterministic.
  double match_probability(const NormalizedIris& q, const NormalizedIris& r) {
    NoGradGuard no_grad;
    return forward(to_tensor(q), to_tensor(r), false).item();
  }

  /// Bank responses [B,2F,H,W] for a batch; lets callers reuse responses
  /// across many pairs.
  Tensor features(const Tensor& x) const {
    check_geometry(x);
    return bank_forward(x, bank_);
  }

  std::vector<Tensor> bank_parameters() const { return bank_.parameters(); }
  std::vector<Tensor> matcher_parameters() const { return matcher_.parameters(); }

  std::vector<Tensor> parameters() const {
    auto out = bank_parameters();
    for (auto& p : matcher_parameters()) out.push_back(p);
    return out;
  }

  std::size_t parameter_count() const { return irismatch::parameter_count(parameters()); }

  std::vector<StateEntry> state() {
    std::vector<StateEntry> out;
    for (std::size_t i = 0; i < bank_.filters.size(); ++i) {
      auto& f = bank_.filters[i];
      const std::string p = "bank." + std::to_string(i) + '.';
      out.push_back({p + "weight", f.weight.shape(), f.weight.mutable_data()});
      if (f.bias.defined()) out.push_back({p + "bias", f.bias.shape(), f.bias.mutable_data()});
    }
    matcher_.append_state(out, "matcher.");
    return out;
  }

  IrisMatchModel clone() const {
    IrisMatchModel copy;
    copy.arch_ = arch_;
    copy.bank_ = bank_.clone();
    copy.matcher_ = matcher_.clone();
    return copy;
  }

 private:
  void check_geometry(const Tensor& x) const {
    if (x.rank() != 4 || x.dim(1) != 1 || x.dim(2) != arch_.height || x.dim(3) != arch_.width) {
      throw ShapeError("IrisMatchModel: expected [B,1," + std::to_string(arch_.height) + "," +
                       std::to_string(arch_.width) + "] input, got " + shape_string(x.shape()));
    }
  }

  ArchitectureSpec arch_;
  UnitCircleBank bank_;
  MatcherModel matcher_;
};

}  // namespace irismatch
