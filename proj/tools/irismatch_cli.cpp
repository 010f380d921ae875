// irismatch command-line tool: synth, train, eval, roc, match, baseline.
//
// Exit codes: 0 success (or match), 1 non-match, 2 usage or data error,
// 3 numerical abort.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "irismatch/irismatch.hpp"

namespace fs = std::filesystem;
using namespace irismatch;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitNonMatch = 1;
constexpr int kExitUsage = 2;
constexpr int kExitNumerical = 3;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

const std::string& required(const RunConfig& cfg, const std::string& key) {
  const std::string& v = cfg.str(key);
  if (v.empty()) throw UsageError("missing required setting '" + key + "' (use --" + key + " or the config file)");
  return v;
}

fs::path prepare_out(const RunConfig& cfg, const std::string& command) {
  const fs::path out = cfg.str("out");
  fs::create_directories(out);
  cfg.write_snapshot(command, out / (command + ".config"));
  return out;
}

/// Adapts images to the model's height; width must already agree.
void adapt_geometry(std::vector<NormalizedIris>& images, const ArchitectureSpec& arch) {
  bool noticed = false;
  for (auto& img : images) {
    if (img.width != arch.width) {
      throw UsageError("image width " + std::to_string(img.width) + " does not match the model width " +
                       std::to_string(arch.width));
    }
    if (img.height != arch.height) {
      if (!noticed) {
        std::cerr << "notice: resizing images from " << img.height << " to " << arch.height << " rows\n";
        noticed = true;
      }
      img = resize_vertical(img, arch.height);
    }
  }
}

PairSet evaluation_pairs(const IdentityStore& store, const RunConfig& cfg) {
  PairSet pairs = enumerate_pairs(store);
  const std::size_t cap = cfg.size("max_imposters");
  if (cap > 0 && pairs.imposter.size() > cap) {
    Rng rng(derive_seed(cfg.size("seed"), streams::kValidationSubsample));
    shuffle_in_place(pairs.imposter, rng);
    pairs.imposter.resize(cap);
    std::sort(pairs.imposter.begin(), pairs.imposter.end());
  }
  return pairs;
}

void write_tar_table(const fs::path& path, const std::vector<double>& fars, const std::vector<TarAtFar>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "far,tar,threshold\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out << format_g17(fars[i]) << ',' << format_g17(rows[i].tar) << ',' << format_g17(rows[i].threshold) << '\n';
  }
}

void print_tar_table(const std::vector<double>& fars, const std::vector<TarAtFar>& rows, double area) {
  std::printf("%-10s %-10s %s\n", "FAR", "TAR", "threshold");
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::printf("%-10g %-10.4f %.6g%s\n", fars[i], rows[i].tar, rows[i].threshold,
                rows[i].resolvable ? "" : "  (too few imposters to resolve this FAR)");
  }
  std::printf("AUC %.6f\n", area);
}

/// Shared tail of eval, baseline and roc: tables, ROC CSV, stdout summary.
void report_scores(const ScoreSet& scores, const RunConfig& cfg, const fs::path& out, const std::string& command) {
  const auto fars = cfg.reals("far");
  std::vector<TarAtFar> rows;
  for (double f : fars) rows.push_back(tar_at_far(scores, f));
  const RocCurve curve = roc(scores);
  emit_roc_csv(curve, out / (command + "_roc.csv"));
  write_tar_table(out / (command + "_tar.csv"), fars, rows);
  std::printf("%zu authentic / %zu imposter pairs\n", scores.authentic.size(), scores.imposter.size());
  print_tar_table(fars, rows, auc(curve));
}

int cmd_synth(const RunConfig& cfg) {
  const SynthSpec spec = cfg.synth_spec();
  spec.validate();
  const IdentityStore store = generate(spec);
  const fs::path out = prepare_out(cfg, "synth");
  save_store(store, out);
  std::printf("wrote %zu identities x %zu images (%zux%zu) to %s\n", spec.identities, spec.images_per_identity,
              spec.height, spec.width, out.string().c_str());
  return kExitOk;
}

int cmd_train(const RunConfig& cfg) {
  const IdentityStore store = load_store(required(cfg, "data"));
  if (store.images.empty()) throw UsageError("dataset has no images");
  const TrainConfig tc = cfg.train_config();
  tc.validate();
  ArchitectureSpec arch = cfg.architecture(store.images.front().height, store.images.front().width);
  const fs::path out = prepare_out(cfg, "train");
  const fs::path best_path = out / "model.imcn", last_path = out / "last.imcn", opt_path = out / "last.imos";
  const fs::path log_path = out / "train_log.csv";

  std::optional<TrainState> resume;
  if (cfg.flag("resume")) {
    TrainState st;
    st.model = load_checkpoint(last_path);
    st.best = load_checkpoint(best_path);
    load_optimizer_state(st, opt_path);
    arch = st.model.architecture();
    resume = std::move(st);
    std::printf("resuming after epoch %zu\n", resume->epochs_done);
  }
  std::printf("%zu identities, %zu images, %zu parameters\n", store.identity_count(), store.images.size(),
              IrisMatchModel(arch, 0).parameter_count());

  const TrainResult result = train(store, arch, tc, resume ? &*resume : nullptr, [](const TrainLogRow& r) {
    std::printf("epoch %zu stage %d loss %.5f val_tar %.4f\n", r.epoch, r.stage, r.train_loss, r.val_tar_at_far);
    std::fflush(stdout);
  });

  {
    std::ofstream log(log_path, resume ? std::ios::app : std::ios::trunc);
    if (!log) throw std::runtime_error("cannot write " + log_path.string());
    write_train_log(log, result.log, !resume);
  }
  save_checkpoint(result.state.best, best_path);
  save_checkpoint(result.state.model, last_path);
  save_optimizer_state(result.state, opt_path);
  if (result.diverged) {
    std::cerr << "error: " << result.message << "; kept the last finite state\n";
    return kExitNumerical;
  }
  std::printf("best epoch %zu, validation TAR %.4f at FAR %g\n", result.state.best_epoch, result.state.best_tar,
              tc.selection_far);
  return kExitOk;
}

int cmd_eval(const RunConfig& cfg) {
  IrisMatchModel model = load_checkpoint(required(cfg, "model"));
  IdentityStore store = load_store(required(cfg, "data"));
  adapt_geometry(store.images, model.architecture());
  const fs::path out = prepare_out(cfg, "eval");
  const ScoreSet scores = collect_model_scores(model, store, evaluation_pairs(store, cfg));
  report_scores(scores, cfg, out, "eval");
  return kExitOk;
}

int cmd_baseline(const RunConfig& cfg) {
  const IdentityStore store = load_store(required(cfg, "data"));
  const LogGaborSpec spec = cfg.log_gabor();
  spec.validate();
  const auto max_shift = static_cast<long>(cfg.size("max_shift"));
  const fs::path out = prepare_out(cfg, "baseline");
  std::vector<Bitcode> codes;
  std::vector<ShiftedBitcodes> shifted;
  for (const auto& img : store.images) {
    codes.push_back(encode(img, spec));
    shifted.push_back(precompute_shifts(codes.back(), max_shift));
  }
  const PairSet pairs = evaluation_pairs(store, cfg);
  ScoreSet scores;
  scores.polarity = Polarity::lower_is_match;
  for (const auto& p : pairs.authentic) scores.authentic.push_back(match_with_shifts(codes[p.first], shifted[p.second]).score);
  for (const auto& p : pairs.imposter) scores.imposter.push_back(match_with_shifts(codes[p.first], shifted[p.second]).score);
  report_scores(scores, cfg, out, "baseline");
  return kExitOk;
}

int cmd_roc(const RunConfig& cfg) {
  const fs::path input = required(cfg, "input");
  std::ifstream in(input);
  if (!in) throw FormatError("cannot open " + input.string());
  std::string header;
  std::getline(in, header);
  header = detail::trim(header);
  const fs::path out = prepare_out(cfg, "roc");
  if (header == "label,score") {
    ScoreSet scores;
    scores.polarity = parse_polarity(cfg.str("polarity"));
    std::string line;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
      ++lineno;
      if (detail::trim(line).empty()) continue;
      const auto f = detail::split(line, ',');
      if (f.size() != 2) throw FormatError("scores line " + std::to_string(lineno) + ": expected 'label,score'");
      const double label = parse_csv_real(f[0], lineno);
      if (label != 0.0 && label != 1.0) throw FormatError("scores line " + std::to_string(lineno) + ": label must be 0 or 1");
      (label == 1.0 ? scores.authentic : scores.imposter).push_back(parse_csv_real(f[1], lineno));
    }
    report_scores(scores, cfg, out, "roc");
    return kExitOk;
  }
  if (header != "threshold,far,tar") {
    throw FormatError(input.string() + ": expected a 'label,score' or 'threshold,far,tar' header");
  }
  in.clear();
  in.seekg(0);
  const RocCurve curve = read_roc_csv(in);
  if (curve.points.empty()) throw FormatError(input.string() + ": empty ROC");
  const auto fars = cfg.reals("far");
  std::vector<TarAtFar> rows;
  for (double f : fars) {
    TarAtFar r;
    r.tar = -1.0;
    for (const auto& p : curve.points) {
      if (p.far <= f && p.tar >= r.tar) r = TarAtFar{p.tar, p.threshold, p.far, true};
    }
    if (r.tar < 0.0) throw FormatError(input.string() + ": no ROC point satisfies FAR <= " + format_g17(f));
    rows.push_back(r);
  }
  write_tar_table(out / "roc_tar.csv", fars, rows);
  print_tar_table(fars, rows, auc(curve));
  return kExitOk;
}

int cmd_match(RunConfig cfg, const std::vector<std::string>& images) {
  if (images.size() == 2) {
    cfg.set("query", images[0]);
    cfg.set("reference", images[1]);
  } else if (!images.empty()) {
    throw UsageError("match expects exactly two images");
  }
  const double threshold = cfg.real("threshold");
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw UsageError("threshold must lie in [0, 1]");
  IrisMatchModel model = load_checkpoint(required(cfg, "model"));
  std::vector<NormalizedIris> pair{load_normalized_iris(required(cfg, "query")),
                                   load_normalized_iris(required(cfg, "reference"))};
  adapt_geometry(pair, model.architecture());
  prepare_out(cfg, "match");
  const double p = model.match_probability(pair[0], pair[1]);
  const bool match = p > threshold;
  std::printf("probability %.17g\nverdict %s\n", p, match ? "match" : "non-match");
  return match ? kExitOk : kExitNonMatch;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"irismatch: iris verification with unit-circle CNN features and a bitcode baseline"};
  app.require_subcommand(1);
  const std::vector<std::pair<std::string, std::string>> commands{
      {"synth", "generate a synthetic dataset"},
      {"train", "train a model on a dataset"},
      {"eval", "score all pairs of a dataset with a checkpoint"},
      {"roc", "summarize a scores or ROC CSV"},
      {"match", "compare two normalized irises"},
      {"baseline", "score all pairs of a dataset with the log-Gabor bitcode baseline"},
  };
  std::map<std::string, std::string> values;
  std::map<std::string, std::string> config_files;
  std::vector<std::string> match_images;
  for (const auto& [name, description] : commands) {
    CLI::App* sub = app.add_subcommand(name, description);
    sub->add_option("--config", config_files[name], "key = value config file");
    for (const auto& key : config_keys()) {
      sub->add_option("--" + key.name, values[name + "/" + key.name], key.help);
    }
    if (name == "match") sub->add_option("images", match_images, "query and reference image");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }

  try {
    for (CLI::App* sub : app.get_subcommands()) {
      const std::string name = sub->get_name();
      RunConfig cfg;
      if (!config_files[name].empty()) cfg.merge_file(config_files[name]);
      for (const auto& key : config_keys()) {
        if (sub->get_option("--" + key.name)->count() > 0) cfg.set(key.name, values[name + "/" + key.name]);
      }
      if (name == "synth") return cmd_synth(cfg);
      if (name == "train") return cmd_train(cfg);
      if (name == "eval") return cmd_eval(cfg);
      if (name == "roc") return cmd_roc(cfg);
      if (name == "match") return cmd_match(cfg, match_images);
      if (name == "baseline") return cmd_baseline(cfg);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}
