#pragma once

// End-to-end desk-scale experiment: synthetic corpus -> gray and FM block
// datasets -> reduced LeNet on each -> ROC comparison.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include "amfm/blocks.hpp"
#include "amfm/dca.hpp"
#include "amfm/eval.hpp"
#include "amfm/filterbank.hpp"
#include "amfm/nn.hpp"
#include "amfm/synth.hpp"
#include "amfm/train.hpp"
#include "json.hpp"

namespace amfm {

inline constexpr std::size_t kClaimedParamCount = 9775;

struct ReproduceConfig {
  std::uint64_t seed = 7;
  unsigned threads = 1;
  FacesConfig faces;
  TrainConfig train;  // mode is overridden per run
  double tau_gt = kDefaultTauGt;
  DcaOptions dca = [] {
    DcaOptions o;
    o.include_baseband = false;
    return o;
  }();
  bool write_corpus = false;
  std::size_t overlays = 6;  // test frames rendered per mode
};

struct ModeRun {
  BlockMode mode;
  TrainHistory history;
  RocReport roc;
  std::size_t params = 0;
  std::size_t train_blocks = 0, val_blocks = 0, test_blocks = 0;
};

struct ReproduceResult {
  nlohmann::json summary;
  nlohmann::json timing;
  std::vector<ModeRun> runs;
};

/// Writes summary.json, history.csv, timing.json, roc_comparison.svg and
/// per-mode model/roc/report/overlay outputs under `out`.
/// summary.json and history.csv depend only on the seed and configuration;
/// wall-clock measurements live in timing.json.
inline ReproduceResult run_reproduce(const std::filesystem::path& out, const ReproduceConfig& cfg,
                                     std::ostream* log = nullptr) {
  namespace fs = std::filesystem;
  const auto t_start = std::chrono::steady_clock::now();
  auto say = [&](const std::string& s) {
    if (log) *log << s << std::endl;
  };
  fs::create_directories(out);

  const auto fb = build_filterbank();
  export_filterbank(fb, out / "filterbank");
  say("filterbank: " + std::to_string(fb.size()) + " channels, hash " + fb.config_hash());

  const auto corpus = gen_face_corpus(cfg.faces, derive_seed(cfg.seed, "synth.faces"), cfg.threads);
  if (cfg.write_corpus) write_corpus(out / "corpus", corpus);
  std::vector<FrameRecord> train_frames, test_frames;
  for (const auto& f : corpus) (f.split == Split::train ? train_frames : test_frames).push_back(f.record);
  const double rate_train = block_positive_rate(train_frames, cfg.tau_gt);
  const double rate_test = block_positive_rate(test_frames, cfg.tau_gt);
  say("corpus: " + std::to_string(corpus.size()) + " frames, positive rate train " + std::to_string(rate_train) +
      " test " + std::to_string(rate_test));

  const DcaProcessor proc(fb, cfg.dca);
  ReproduceResult res;
  std::ofstream hist(out / "history.csv");
  hist << "mode,epoch,train_loss,val_loss,train_mse\n";

  std::vector<RealImage> gray_frames;  // padded gray planes of test frames, for overlays
  for (BlockMode mode : {BlockMode::gray, BlockMode::fm}) {
    const std::string name = to_string(mode);
    const auto ds = build_dataset(corpus, mode, &proc, cfg.threads);
    auto [train_set, val_set] = split_validation(ds.samples(Split::train), cfg.train.val_fraction);
    const auto test_set = ds.samples(Split::test);

    TrainConfig tc = cfg.train;
    tc.mode = mode;
    tc.seed = derive_seed(cfg.seed, "train." + name);
    tc.threads = cfg.threads;
    say(name + ": train " + std::to_string(train_set.size()) + " val " + std::to_string(val_set.size()) + " test " +
        std::to_string(test_set.size()) + " blocks");
    auto tr = train(tc, train_set, val_set, [&](const EpochRecord& r) {
      say("  " + name + " epoch " + std::to_string(r.epoch) + " loss " + std::to_string(r.train_loss) + " val " +
          std::to_string(r.val_loss) + " " + std::to_string(r.seconds) + "s");
    });
    for (const auto& r : tr.history)
      hist << name << ',' << r.epoch << ',' << detail::fmt_double(r.train_loss) << ','
           << detail::fmt_double(r.val_loss) << ',' << detail::fmt_double(r.train_mse) << '\n';

    const auto preds = predict_all(tr.model, test_set, cfg.threads);
    std::vector<float> labels;
    labels.reserve(test_set.size());
    for (const auto& s : test_set) labels.push_back(s.label);
    const auto roc = roc_curve(preds, labels, cfg.tau_gt);
    const double thr = youden_threshold(roc);
    say(name + ": test AUC " + std::to_string(roc.auc));

    const auto dir = out / name;
    fs::create_directories(dir / "overlays");
    nn::save_model(tr.model, dir / "model");
    write_roc_csv(dir / "roc.csv", roc);
    std::ofstream(dir / "report.json") << report_json(roc, thr, confusion_at(preds, labels, cfg.tau_gt, thr)).dump(2)
                                       << '\n';

    // Overlays on the reduced gray frame, one per test frame up to the limit.
    std::size_t offset = 0, drawn = 0;
    std::size_t gi = 0;
    for (const auto& f : ds.frames) {
      if (f.split != Split::test) continue;
      const std::size_t n = f.blocks.size();
      if (mode == BlockMode::gray) gray_frames.push_back(reassemble(f.blocks, f.grid_rows, f.grid_cols));
      if (drawn < cfg.overlays) {
        const std::vector<float> p(preds.begin() + static_cast<std::ptrdiff_t>(offset),
                                   preds.begin() + static_cast<std::ptrdiff_t>(offset + n));
        const std::vector<float> l(labels.begin() + static_cast<std::ptrdiff_t>(offset),
                                   labels.begin() + static_cast<std::ptrdiff_t>(offset + n));
        write_png(dir / "overlays" / (f.session_id + "_" + f.frame_id + ".png"),
                  render_overlay(gray_frames.at(gi), p, l, f.grid_rows, f.grid_cols, thr, cfg.tau_gt));
        ++drawn;
      }
      offset += n;
      ++gi;
    }

    res.runs.push_back({mode, tr.history, roc, tr.model.param_count(), train_set.size(), val_set.size(),
                        test_set.size()});
  }

  const auto& gray = res.runs[0];
  const auto& fm = res.runs[1];
  write_roc_svg(out / "roc_comparison.svg",
                {{"FM", "red", &fm.roc}, {"gray", "blue", &gray.roc}},
                "ROC: FM component vs original image");

  nlohmann::json& s = res.summary;
  s["seed"] = cfg.seed;
  s["auc_gray"] = gray.roc.auc;
  s["auc_fm"] = fm.roc.auc;
  s["auc_gap"] = fm.roc.auc - gray.roc.auc;
  s["tau_gt"] = cfg.tau_gt;
  s["params"] = {{"gray", gray.params}, {"fm", fm.params}};
  s["paper_param_claim"] = kClaimedParamCount;
  s["measured"] = fm.params;
  s["sec_per_epoch"] = {{"file", "timing.json"}, {"key", "sec_per_epoch"}};
  s["blocks"] = {{"train", fm.train_blocks}, {"val", fm.val_blocks}, {"test", fm.test_blocks}};
  s["positive_rate"] = {{"train", rate_train}, {"test", rate_test}};
  s["frames"] = corpus.size();
  s["train"] = cfg.train;
  s["train"].erase("mode");
  s["faces"] = cfg.faces;
  s["dca"] = {{"include_baseband", cfg.dca.include_baseband},
              {"include_bandpass", cfg.dca.include_bandpass},
              {"boundary", cfg.dca.boundary == Boundary::reflect ? "reflect" : "zero"},
              {"analytic_axis", cfg.dca.axis == AnalyticAxis::rows ? "rows" : "cols"}};
  s["filterbank_hash"] = fb.config_hash();
  std::ofstream(out / "summary.json") << s.dump(2) << '\n';

  nlohmann::json& t = res.timing;
  for (const auto& r : res.runs) {
    std::vector<double> secs;
    for (const auto& e : r.history) secs.push_back(e.seconds);
    t["sec_per_epoch"][to_string(r.mode)] = mean_epoch_seconds(r.history);
    t["epochs"][to_string(r.mode)] = secs;
    t["max_deviation_from_median"][to_string(r.mode)] = epoch_time_deviation(r.history);
  }
  t["threads"] = cfg.threads;
  t["total_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  std::ofstream(out / "timing.json") << t.dump(2) << '\n';
  return res;
}

}  // namespace amfm
