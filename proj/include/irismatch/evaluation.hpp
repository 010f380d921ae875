#pragma once

// Verification metrics: score collection, TAR at a target FAR, ROC curves,
// area under the curve, and the ROC CSV format.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "irismatch/dataset.hpp"
#include "irismatch/matcher.hpp"

namespace irismatch {

enum class Polarity { higher_is_match, lower_is_match };

inline std::string to_string(Polarity p) { return p == Polarity::higher_is_match ? "higher" : "lower"; }

inline Polarity parse_polarity(const std::string& s) {
  if (s == "higher") return Polarity::higher_is_match;
  if (s == "lower") return Polarity::lower_is_match;
  throw std::invalid_argument("polarity must be 'higher' or 'lower', got '" + s + "'");
}

struct ScoreSet {
  std::vector<double> authentic;
  std::vector<double> imposter;
  Polarity polarity = Polarity::higher_is_match;

  void require_nonempty(const char* op) const {
    if (authentic.empty() || imposter.empty()) {
      throw std::invalid_argument(std::string(op) + ": needs at least one authentic and one imposter score");
    }
  }
};

/// Whether `score` falls on the match side of `threshold` (equality never matches).
inline bool on_match_side(double score, double threshold, Polarity polarity) {
  return polarity == Polarity::higher_is_match ? score > threshold : score < threshold;
}

inline double accept_rate(const std::vector<double>& scores, double threshold, Polarity polarity) {
  std::size_t n = 0;
  for (double s : scores) n += on_match_side(s, threshold, polarity) ? 1 : 0;
  return static_cast<double>(n) / static_cast<double>(scores.size());
}

struct TarAtFar {
  double tar = 0.0;
  double threshold = 0.0;
  double far = 0.0;          // empirical FAR at the threshold
  bool resolvable = true;    // false when fewer than 1/far imposters exist
};

/// Picks the threshold admitting the most matches whose empirical FAR stays
/// at or below `far`, and reports the TAR there.
inline TarAtFar tar_at_far(const ScoreSet& scores, double far) {
  scores.require_nonempty("tar_at_far");
  if (!(far > 0.0 && far <= 1.0)) throw std::invalid_argument("tar_at_far: far must lie in (0, 1]");
  const bool higher = scores.polarity == Polarity::higher_is_match;
  std::vector<double> imp = scores.imposter;
  // Walk imposter values from the strict end towards the lenient end.
  if (higher) {
    std::sort(imp.begin(), imp.end(), std::greater<>());
  } else {
    std::sort(imp.begin(), imp.end());
  }
  const double n = static_cast<double>(imp.size());
  double threshold = higher ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
  // Threshold at imp[k] accepts exactly the imposters strictly beyond it, i.e.
  // those before the first occurrence of imp[k]'s value.
  for (std::size_t k = 0; k < imp.size(); ++k) {
    if (k > 0 && imp[k] == imp[k - 1]) continue;
    if (static_cast<double>(k) / n <= far) threshold = imp[k];
  }
  if (static_cast<double>(imp.size()) / n <= far) {
    threshold = higher ? -std::numeric_limits<double>::infinity() : std::numeric_limits<double>::infinity();
  }
  TarAtFar out;
  out.threshold = threshold;
  out.tar = accept_rate(scores.authentic, threshold, scores.polarity);
  out.far = accept_rate(scores.imposter, threshold, scores.polarity);
  out.resolvable = n * far >= 1.0;
  return out;
}

struct RocPoint {
  double threshold = 0.0;
  double far = 0.0;
  double tar = 0.0;
  friend bool operator==(const RocPoint&, const RocPoint&) = default;
};

/// Points ordered by non-decreasing FAR, one per distinct score threshold,
/// closed by the accept-everything point (1, 1).
struct RocCurve {
  std::vector<RocPoint> points;
};

inline RocCurve roc(const ScoreSet& scores) {
  scores.require_nonempty("roc");
  const bool higher = scores.polarity == Polarity::higher_is_match;
  std::vector<double> all = scores.authentic;
  all.insert(all.end(), scores.imposter.begin(), scores.imposter.end());
  if (higher) {
    std::sort(all.begin(), all.end(), std::greater<>());
  } else {
    std::sort(all.begin(), all.end());
  }
  all.erase(std::unique(all.begin(), all.end()), all.end());
  all.push_back(higher ? -std::numeric_limits<double>::infinity() : std::numeric_limits<double>::infinity());

  std::vector<double> auth = scores.authentic, imp = scores.imposter;
  std::sort(auth.begin(), auth.end());
  std::sort(imp.begin(), imp.end());
  const auto rate = [&](const std::vector<double>& sorted, double t) {
    const auto n = static_cast<double>(sorted.size());
    const auto accepted = higher ? static_cast<double>(sorted.end() - std::upper_bound(sorted.begin(), sorted.end(), t))
                                 : static_cast<double>(std::lower_bound(sorted.begin(), sorted.end(), t) - sorted.begin());
    return accepted / n;
  };
  RocCurve curve;
  curve.points.reserve(all.size());
  for (double t : all) curve.points.push_back({t, rate(imp, t), rate(auth, t)});
  return curve;
}

/// Trapezoidal area under the curve, starting from (0, 0).
inline double auc(const RocCurve& curve) {
  double area = 0.0, far = 0.0, tar = 0.0;
  for (const auto& p : curve.points) {
    area += (p.far - far) * (p.tar + tar) / 2.0;
    far = p.far;
    tar = p.tar;
  }
  return area;
}

inline double auc(const ScoreSet& scores) { return auc(roc(scores)); }

inline std::string format_g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_roc_csv(std::ostream& out, const RocCurve& curve) {
  out << "threshold,far,tar\n";
  for (const auto& p : curve.points) {
    out << format_g17(p.threshold) << ',' << format_g17(p.far) << ',' << format_g17(p.tar) << '\n';
  }
}

inline void emit_roc_csv(const RocCurve& curve, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_roc_csv(out, curve);
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

inline double parse_csv_real(const std::string& field, std::size_t line) {
  const std::string t = detail::trim(field);
  char* end = nullptr;
  const double v = std::strtod(t.c_str(), &end);
  if (t.empty() || end != t.c_str() + t.size()) {
    throw FormatError("csv line " + std::to_string(line) + ": '" + t + "' is not a number");
  }
  return v;
}

inline RocCurve read_roc_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || detail::trim(line) != "threshold,far,tar") {
    throw FormatError("roc csv: expected header 'threshold,far,tar'");
  }
  RocCurve curve;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto f = detail::split(line, ',');
    if (f.size() != 3) throw FormatError("roc csv line " + std::to_string(lineno) + ": expected 3 fields");
    curve.points.push_back({parse_csv_real(f[0], lineno), parse_csv_real(f[1], lineno), parse_csv_real(f[2], lineno)});
  }
  return curve;
}

inline RocCurve read_roc_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  return read_roc_csv(in);
}

/// Scores every pair with `score(a, b)`.
inline ScoreSet collect_scores(const std::function<double(const NormalizedIris&, const NormalizedIris&)>& score,
                               const PairSet& pairs, const IdentityStore& store, Polarity polarity) {
  ScoreSet out;
  out.polarity = polarity;
  const auto run = [&](const std::vector<ImagePair>& list, std::vector<double>& dst) {
    dst.reserve(list.size());
    for (const auto& p : list) {
      if (p.first >= store.images.size() || p.second >= store.images.size()) {
        throw std::out_of_range("collect_scores: pair references a missing image");
      }
      dst.push_back(score(store.images[p.first], store.images[p.second]));
    }
  };
  run(pairs.authentic, out.authentic);
  run(pairs.imposter, out.imposter);
  return out;
}

/// Bank responses are the expensive half of a forward pass and depend on one
/// image only; caching them lets every pair reuse them.
inline constexpr std::size_t kDefaultFeatureBudgetBytes = std::size_t{1} << 30;

class FeatureCache {
 public:
  FeatureCache() = default;

  FeatureCache(const IrisMatchModel& model, const std::vector<NormalizedIris>& images, std::size_t chunk = 32) {
    NoGradGuard no_grad;
    std::vector<double> values;
    for (std::size_t start = 0; start < images.size(); start += chunk) {
      std::vector<const NormalizedIris*> batch;
      for (std::size_t i = start; i < std::min(images.size(), start + chunk); ++i) batch.push_back(&images[i]);
      const Tensor f = model.features(to_tensor(batch));
      if (shape_.empty()) shape_ = f.shape();
      values.insert(values.end(), f.data().begin(), f.data().end());
    }
    if (!images.empty()) {
      shape_[0] = images.size();
      features_ = Tensor(shape_, std::move(values));
    }
  }

  static std::size_t bytes_needed(const ArchitectureSpec& arch, std::size_t images) {
    return images * 2 * arch.bank_kernels.size() * arch.height * arch.width * sizeof(double);
  }

  bool empty() const { return !features_.defined(); }

  /// Matcher input [n,4F,H,W] for pairs[begin, end).
  Tensor pair_features(const std::vector<ImagePair>& pairs, std::size_t begin, std::size_t end) const {
    std::vector<std::size_t> a, b;
    for (std::size_t k = begin; k < end; ++k) {
      a.push_back(pairs[k].first);
      b.push_back(pairs[k].second);
    }
    return concat_channels({gather_batch(features_, a), gather_batch(features_, b)});
  }

 private:
  Shape shape_;
  Tensor features_;
};

/// Eval-mode match probabilities for pairs of `images`, in order.
inline std::vector<double> score_pairs(IrisMatchModel& model, const std::vector<NormalizedIris>& images,
                                       const std::vector<ImagePair>& pairs, const FeatureCache* cache = nullptr,
                                       std::size_t batch = 64) {
  NoGradGuard no_grad;
  std::vector<double> out;
  out.reserve(pairs.size());
  for (std::size_t start = 0; start < pairs.size(); start += batch) {
    const std::size_t end = std::min(pairs.size(), start + batch);
    Tensor p;
    if (cache && !cache->empty()) {
      p = model.matcher().forward(cache->pair_features(pairs, start, end), false);
    } else {
      std::vector<const NormalizedIris*> q, r;
      for (std::size_t k = start; k < end; ++k) {
        q.push_back(&images.at(pairs[k].first));
        r.push_back(&images.at(pairs[k].second));
      }
      p = model.forward(to_tensor(q), to_tensor(r), false);
    }
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  return out;
}

/// Model scores for a PairSet; features are cached when they fit the budget.
inline ScoreSet collect_model_scores(IrisMatchModel& model, const IdentityStore& store, const PairSet& pairs,
                                     std::size_t budget_bytes = kDefaultFeatureBudgetBytes) {
  FeatureCache cache;
  if (FeatureCache::bytes_needed(model.architecture(), store.images.size()) <= budget_bytes) {
    cache = FeatureCache(model, store.images);
  }
  ScoreSet out;
  out.polarity = Polarity::higher_is_match;
  out.authentic = score_pairs(model, store.images, pairs.authentic, &cache);
  out.imposter = score_pairs(model, store.images, pairs.imposter, &cache);
  return out;
}

}  // namespace irismatch
