#pragma once

// Pair-based training: identity-disjoint train/validation split, per-epoch
// negative subsampling, Adam, the two-stage schedule (matcher first with the
// bank frozen, then everything), and best-validation model selection.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "irismatch/binary_io.hpp"
#include "irismatch/checkpoint.hpp"
#include "irismatch/dataset.hpp"
#include "irismatch/evaluation.hpp"
#include "irismatch/matcher.hpp"
#include "irismatch/random.hpp"

namespace irismatch {

// RNG sub-streams derived from the training seed.
namespace streams {
inline constexpr std::uint64_t kModelInit = 10;
inline constexpr std::uint64_t kSplit = 11;
inline constexpr std::uint64_t kEpochSample = 12;
inline constexpr std::uint64_t kDropout = 13;
inline constexpr std::uint64_t kValidationSubsample = 14;
}  // namespace streams

template <class T>
void shuffle_in_place(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

struct TrainValSplit {
  PairSet train;
  PairSet val;
  std::vector<std::size_t> train_identities;
  std::vector<std::size_t> val_identities;
};

/// Holds out whole identities so that the authentic-pair ratio between the
/// sides is as close to `ratio`:1 as identity granularity allows. Pairs that
/// straddle the two sides are dropped.
inline TrainValSplit split_train_val(const IdentityStore& store, const PairSet& pairs, std::uint64_t seed,
                                     double ratio = 10.0) {
  const std::size_t L = store.identity_count();
  if (L < 4) throw std::invalid_argument("split_train_val: need at least 2 identities per side (4 in total)");
  std::vector<std::size_t> order(L);
  for (std::size_t i = 0; i < L; ++i) order[i] = i;
  Rng rng(derive_seed(seed, streams::kSplit));
  shuffle_in_place(order, rng);

  const auto authentic_of = [&](std::size_t t) {
    const double n = static_cast<double>(store.tuples[t].images.size());
    return n * (n - 1.0) / 2.0;
  };
  std::size_t best_v = 2;
  double best_gap = std::numeric_limits<double>::infinity();
  for (std::size_t v = 2; v + 2 <= L; ++v) {
    double val = 0.0, train = 0.0;
    for (std::size_t k = 0; k < L; ++k) (k < v ? val : train) += authentic_of(order[k]);
    const double gap = val > 0.0 ? std::abs(train / val - ratio) : std::numeric_limits<double>::infinity();
    if (gap < best_gap) {
      best_gap = gap;
      best_v = v;
    }
  }
  TrainValSplit out;
  out.val_identities.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(best_v));
  out.train_identities.assign(order.begin() + static_cast<std::ptrdiff_t>(best_v), order.end());
  std::sort(out.val_identities.begin(), out.val_identities.end());
  std::sort(out.train_identities.begin(), out.train_identities.end());

  const auto owner = store.identity_of_images();
  std::vector<bool> held_out(L, false);
  for (std::size_t t : out.val_identities) held_out[t] = true;
  const auto route = [&](const std::vector<ImagePair>& src, std::vector<ImagePair>& tr, std::vector<ImagePair>& va) {
    for (const auto& p : src) {
      const bool a = held_out[owner[p.first]], b = held_out[owner[p.second]];
      if (a && b) {
        va.push_back(p);
      } else if (!a && !b) {
        tr.push_back(p);
      }
    }
  };
  route(pairs.authentic, out.train.authentic, out.val.authentic);
  route(pairs.imposter, out.train.imposter, out.val.imposter);
  if (out.train.authentic.empty() || out.val.authentic.empty() || out.train.imposter.empty() ||
      out.val.imposter.empty()) {
    throw std::invalid_argument("split_train_val: a side ends up without authentic or imposter pairs");
  }
  return out;
}

struct EpochSample {
  std::vector<ImagePair> pairs;
  std::vector<double> labels;  // 1 authentic, 0 imposter
  bool undersampled = false;   // fewer imposters than authentic pairs existed
};

/// All authentic pairs plus an equal number of imposters drawn without
/// replacement, shuffled together.
inline EpochSample rebalance_epoch(const PairSet& pairs, Rng& rng) {
  const std::size_t np = pairs.authentic.size();
  std::vector<std::size_t> pick(pairs.imposter.size());
  for (std::size_t i = 0; i < pick.size(); ++i) pick[i] = i;
  const std::size_t take = std::min(np, pick.size());
  for (std::size_t i = 0; i < take; ++i) std::swap(pick[i], pick[i + rng.below(pick.size() - i)]);

  EpochSample out;
  out.undersampled = pairs.imposter.size() < np;
  std::vector<std::pair<ImagePair, double>> items;
  items.reserve(np + take);
  for (const auto& p : pairs.authentic) items.emplace_back(p, 1.0);
  for (std::size_t i = 0; i < take; ++i) items.emplace_back(pairs.imposter[pick[i]], 0.0);
  shuffle_in_place(items, rng);
  for (const auto& [p, y] : items) {
    out.pairs.push_back(p);
    out.labels.push_back(y);
  }
  return out;
}

struct AdamOptions {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  friend bool operator==(const AdamState&, const AdamState&) = default;
};

inline void adam_step(const std::vector<Tensor>& params, const std::vector<std::span<const double>>& grads,
                      AdamState& state, const AdamOptions& o) {
  if (grads.size() != params.size()) throw ShapeError("adam_step: one gradient per parameter expected");
  if (state.m.empty() && state.step == 0) {
    for (const auto& p : params) {
      state.m.emplace_back(p.numel(), 0.0);
      state.v.emplace_back(p.numel(), 0.0);
    }
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError("adam_step: optimizer state does not match the parameter list");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].size() != params[i].numel() || state.v[i].size() != params[i].numel() ||
        grads[i].size() != params[i].numel()) {
      throw ShapeError("adam_step: shape mismatch for parameter " + std::to_string(i));
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(o.beta1, t), c2 = 1.0 - std::pow(o.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i];
    auto w = p.mutable_data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double g = grads[i][k];
      m[k] = o.beta1 * m[k] + (1.0 - o.beta1) * g;
      v[k] = o.beta2 * v[k] + (1.0 - o.beta2) * g * g;
      w[k] -= o.lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + o.epsilon);
    }
  }
}

/// Uses each parameter's accumulated gradient (zero when it has none).
inline void adam_step(const std::vector<Tensor>& params, AdamState& state, const AdamOptions& o) {
  std::vector<std::vector<double>> zeros(params.size());
  std::vector<std::span<const double>> grads;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].has_grad()) {
      grads.push_back(params[i].grad());
    } else {
      zeros[i].assign(params[i].numel(), 0.0);
      grads.emplace_back(zeros[i]);
    }
  }
  adam_step(params, grads, state, o);
}

struct TrainConfig {
  double lr = 0.01;
  std::size_t batch_size = 32;
  std::size_t stage1_epochs = 100;
  std::size_t total_epochs = 1000;
  std::uint64_t seed = 1;
  double selection_far = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double split_ratio = 10.0;
  std::size_t val_max_imposters = 0;  // 0 keeps every validation imposter
  bool record_wall_time = true;
  std::size_t feature_budget_bytes = kDefaultFeatureBudgetBytes;

  AdamOptions adam() const { return {lr, beta1, beta2, epsilon}; }

  void validate() const {
    if (!(lr > 0.0) || batch_size == 0 || stage1_epochs == 0 || total_epochs == 0 || !(split_ratio > 0.0)) {
      throw std::invalid_argument("TrainConfig: lr, batch size, epochs and split ratio must be positive");
    }
    if (stage1_epochs > total_epochs) throw std::invalid_argument("TrainConfig: stage-1 epochs exceed total epochs");
    if (!(selection_far > 0.0 && selection_far <= 1.0)) {
      throw std::invalid_argument("TrainConfig: selection FAR must lie in (0, 1]");
    }
    if (!(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0 && epsilon > 0.0)) {
      throw std::invalid_argument("TrainConfig: Adam coefficients must lie in (0, 1) and epsilon must be positive");
    }
  }
};

struct TrainLogRow {
  std::size_t epoch = 0;  // 1-based, continues across resumes
  int stage = 1;
  double train_loss = 0.0;
  double val_tar_at_far = 0.0;
  double wall_seconds = 0.0;
  // Not part of the CSV; breaks ties between equal validation TARs.
  double val_auc = 0.0;
};

inline constexpr const char* kTrainLogHeader = "epoch,stage,train_loss,val_tar_at_far,wall_seconds";

inline std::string format_log_row(const TrainLogRow& r) {
  return std::to_string(r.epoch) + ',' + std::to_string(r.stage) + ',' + format_g17(r.train_loss) + ',' +
         format_g17(r.val_tar_at_far) + ',' + format_g17(r.wall_seconds);
}

inline void write_train_log(std::ostream& out, const std::vector<TrainLogRow>& rows, bool header = true) {
  if (header) out << kTrainLogHeader << '\n';
  for (const auto& r : rows) out << format_log_row(r) << '\n';
}

/// Everything needed to continue a run where it stopped.
struct TrainState {
  IrisMatchModel model;
  IrisMatchModel best;
  AdamState matcher_opt;
  AdamState bank_opt;
  std::size_t epochs_done = 0;
  std::size_t best_epoch = 0;
  double best_tar = -1.0;
  double best_auc = -1.0;
};

struct TrainResult {
  TrainState state;  // state.best is the selected model
  std::vector<TrainLogRow> log;
  TrainValSplit split;
  bool diverged = false;
  std::string message;
};

namespace detail {

inline std::vector<std::span<const double>> grads_of(const std::vector<Tensor>& params,
                                                     std::vector<std::vector<double>>& zeros) {
  zeros.assign(params.size(), {});
  std::vector<std::span<const double>> out;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].has_grad()) {
      out.push_back(params[i].grad());
    } else {
      zeros[i].assign(params[i].numel(), 0.0);
      out.emplace_back(zeros[i]);
    }
  }
  return out;
}

inline PairSet subsample_imposters(PairSet pairs, std::size_t cap, std::uint64_t seed) {
  if (cap == 0 || pairs.imposter.size() <= cap) return pairs;
  Rng rng(derive_seed(seed, streams::kValidationSubsample));
  shuffle_in_place(pairs.imposter, rng);
  pairs.imposter.resize(cap);
  std::sort(pairs.imposter.begin(), pairs.imposter.end());
  return pairs;
}

}  // namespace detail

/// Runs the two-stage schedule. With `resume`, training continues after
/// `resume->epochs_done` epochs using its model and optimizer state.
inline TrainResult train(const IdentityStore& store, const ArchitectureSpec& arch, const TrainConfig& config,
                         const TrainState* resume = nullptr,
                         const std::function<void(const TrainLogRow&)>& on_epoch = {}) {
  config.validate();
  store.validate();
  const auto start_time = std::chrono::steady_clock::now();
  TrainResult result;
  const PairSet all_pairs = enumerate_pairs(store);
  result.split = split_train_val(store, all_pairs, config.seed, config.split_ratio);
  const PairSet val_pairs = detail::subsample_imposters(result.split.val, config.val_max_imposters, config.seed);

  TrainState& st = result.state;
  if (resume) {
    st = TrainState{resume->model.clone(), resume->best.clone(), resume->matcher_opt, resume->bank_opt,
                    resume->epochs_done, resume->best_epoch, resume->best_tar, resume->best_auc};
    if (!(st.model.architecture() == arch)) throw std::invalid_argument("train: resume state has a different architecture");
  } else {
    st.model = IrisMatchModel(arch, derive_seed(config.seed, streams::kModelInit));
    st.best = st.model.clone();
  }
  const bool cache_fits = FeatureCache::bytes_needed(arch, store.images.size()) <= config.feature_budget_bytes;
  FeatureCache frozen_cache;
  const AdamOptions adam = config.adam();

  for (std::size_t epoch = st.epochs_done + 1; epoch <= config.total_epochs; ++epoch) {
    const int stage = epoch <= config.stage1_epochs ? 1 : 2;
    IrisMatchModel& model = st.model;
    const IrisMatchModel snapshot = model.clone();
    const AdamState matcher_snapshot = st.matcher_opt, bank_snapshot = st.bank_opt;

    if (stage == 1 && cache_fits && frozen_cache.empty()) frozen_cache = FeatureCache(model, store.images);
    if (stage == 2) frozen_cache = FeatureCache();

    Rng sample_rng(derive_seed(config.seed, streams::kEpochSample, epoch));
    Rng dropout_rng(derive_seed(config.seed, streams::kDropout, epoch));
    const EpochSample sample = rebalance_epoch(result.split.train, sample_rng);

    // Batch norm needs two samples per batch, so a trailing single pair joins
    // the previous batch.
    std::vector<std::size_t> bounds{0};
    while (bounds.back() < sample.pairs.size()) {
      std::size_t next = std::min(sample.pairs.size(), bounds.back() + config.batch_size);
      if (sample.pairs.size() - next == 1) next = sample.pairs.size();
      bounds.push_back(next);
    }

    const auto matcher_params = model.matcher_parameters();
    const auto bank_params = model.bank_parameters();
    double loss_sum = 0.0;
    bool finite = true;
    for (std::size_t b = 0; b + 1 < bounds.size() && finite; ++b) {
      const std::size_t lo = bounds[b], hi = bounds[b + 1];
      for (const auto& p : matcher_params) Tensor(p).zero_grad();
      for (const auto& p : bank_params) Tensor(p).zero_grad();
      Tensor prob;
      if (stage == 1) {
        Tensor input;
        if (!frozen_cache.empty()) {
          input = frozen_cache.pair_features(sample.pairs, lo, hi);
        } else {
          std::vector<const NormalizedIris*> q, r;
          for (std::size_t k = lo; k < hi; ++k) {
            q.push_back(&store.images[sample.pairs[k].first]);
            r.push_back(&store.images[sample.pairs[k].second]);
          }
          NoGradGuard frozen;
          input = pair_input(to_tensor(q), to_tensor(r), model.bank());
        }
        prob = model.matcher().forward(input, true, &dropout_rng);
      } else {
        std::vector<const NormalizedIris*> q, r;
        for (std::size_t k = lo; k < hi; ++k) {
          q.push_back(&store.images[sample.pairs[k].first]);
          r.push_back(&store.images[sample.pairs[k].second]);
        }
        prob = model.forward(to_tensor(q), to_tensor(r), true, &dropout_rng);
      }
      const Tensor y({hi - lo}, std::vector<double>(sample.labels.begin() + static_cast<std::ptrdiff_t>(lo),
                                                    sample.labels.begin() + static_cast<std::ptrdiff_t>(hi)));
      Tensor loss = bce_loss(prob, y);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        finite = false;
        break;
      }
      loss_sum += value * static_cast<double>(hi - lo);
      backward(loss);
      std::vector<std::vector<double>> zeros;
      adam_step(matcher_params, detail::grads_of(matcher_params, zeros), st.matcher_opt, adam);
      if (stage == 2) adam_step(bank_params, detail::grads_of(bank_params, zeros), st.bank_opt, adam);
    }
    if (finite) {
      for (const auto& p : model.parameters()) {
        for (double v : p.data()) finite = finite && std::isfinite(v);
      }
    }
    if (!finite) {
      st.model = snapshot.clone();
      st.matcher_opt = matcher_snapshot;
      st.bank_opt = bank_snapshot;
      result.diverged = true;
      result.message = "training diverged in epoch " + std::to_string(epoch) + " (non-finite loss or parameters)";
      return result;
    }

    FeatureCache val_cache;
    if (stage == 1 && !frozen_cache.empty()) {
      val_cache = frozen_cache;
    } else if (cache_fits) {
      val_cache = FeatureCache(model, store.images);
    }
    ScoreSet val;
    val.polarity = Polarity::higher_is_match;
    val.authentic = score_pairs(model, store.images, val_pairs.authentic, &val_cache);
    val.imposter = score_pairs(model, store.images, val_pairs.imposter, &val_cache);

    TrainLogRow row;
    row.epoch = epoch;
    row.stage = stage;
    row.train_loss = loss_sum / static_cast<double>(sample.pairs.size());
    row.val_tar_at_far = tar_at_far(val, config.selection_far).tar;
    row.val_auc = auc(val);
    if (config.record_wall_time) {
      row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_time).count();
    }
    result.log.push_back(row);
    st.epochs_done = epoch;
    if (row.val_tar_at_far > st.best_tar || (row.val_tar_at_far == st.best_tar && row.val_auc > st.best_auc)) {
      st.best_tar = row.val_tar_at_far;
      st.best_auc = row.val_auc;
      st.best_epoch = epoch;
      st.best = model.clone();
    }
    if (on_epoch) on_epoch(row);
  }
  return result;
}

// Optimizer sidecar: "IMOS" | u16 version | u64 epochs done | u64 best epoch |
// f64 best TAR | f64 best AUC | matcher block | bank block, where a block is
// u64 step | u32 tensor count | per tensor: u64 n, n f64 first moments,
// n f64 second moments.
inline constexpr std::uint16_t kOptimizerStateVersion = 1;

namespace detail {

inline void write_adam(std::ostream& out, const AdamState& s) {
  io::write_le<std::uint64_t>(out, s.step);
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.m.size()));
  for (std::size_t i = 0; i < s.m.size(); ++i) {
    io::write_le<std::uint64_t>(out, s.m[i].size());
    for (double x : s.m[i]) io::write_f64(out, x);
    for (double x : s.v[i]) io::write_f64(out, x);
  }
}

inline AdamState read_adam(std::istream& in) {
  AdamState s;
  s.step = io::read_le<std::uint64_t>(in);
  const auto count = io::read_le<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto n = static_cast<std::size_t>(io::read_le<std::uint64_t>(in));
    std::vector<double> m(n), v(n);
    for (double& x : m) x = io::read_f64(in);
    for (double& x : v) x = io::read_f64(in);
    s.m.push_back(std::move(m));
    s.v.push_back(std::move(v));
  }
  return s;
}

}  // namespace detail

inline void save_optimizer_state(const TrainState& st, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  io::write_magic(out, "IMOS");
  io::write_le<std::uint16_t>(out, kOptimizerStateVersion);
  io::write_le<std::uint64_t>(out, st.epochs_done);
  io::write_le<std::uint64_t>(out, st.best_epoch);
  io::write_f64(out, st.best_tar);
  io::write_f64(out, st.best_auc);
  detail::write_adam(out, st.matcher_opt);
  detail::write_adam(out, st.bank_opt);
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

/// Fills the optimizer fields of `st` from a sidecar file.
inline void load_optimizer_state(TrainState& st, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  io::expect_magic(in, "IMOS", "optimizer state");
  const auto version = io::read_le<std::uint16_t>(in);
  if (version != kOptimizerStateVersion) throw FormatError("optimizer state: unsupported version");
  st.epochs_done = static_cast<std::size_t>(io::read_le<std::uint64_t>(in));
  st.best_epoch = static_cast<std::size_t>(io::read_le<std::uint64_t>(in));
  st.best_tar = io::read_f64(in);
  st.best_auc = io::read_f64(in);
  st.matcher_opt = detail::read_adam(in);
  st.bank_opt = detail::read_adam(in);
}

}  // namespace irismatch
