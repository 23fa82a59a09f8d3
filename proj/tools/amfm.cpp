// amfm: command-line front end for the AM-FM block face detection pipeline.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <string>

#include "CLI11.hpp"
#include "amfm/amfm.hpp"

namespace fs = std::filesystem;
using namespace amfm;

namespace {

struct DcaFlags {
  std::string channels = "all";
  std::string boundary = "reflect";
  std::string axis = "rows";

  void add(CLI::App* app) {
    app->add_option("--dca-channels", channels, "Channels competing in the argmax")
        ->check(CLI::IsMember({"all", "bandpass", "baseband"}));
    app->add_option("--boundary", boundary, "Convolution boundary")->check(CLI::IsMember({"reflect", "zero"}));
    app->add_option("--axis", axis, "Analytic-image axis")->check(CLI::IsMember({"rows", "cols"}));
  }

  DcaOptions options() const {
    DcaOptions o;
    o.include_baseband = channels != "bandpass";
    o.include_bandpass = channels != "baseband";
    o.boundary = boundary == "zero" ? Boundary::zero : Boundary::reflect;
    o.axis = axis == "cols" ? AnalyticAxis::cols : AnalyticAxis::rows;
    return o;
  }
};

GaborFilterbank load_or_build(const std::string& dir) {
  return dir.empty() ? build_filterbank() : import_filterbank(dir);
}

std::vector<float> labels_of(const std::vector<BlockSample>& s) {
  std::vector<float> out;
  out.reserve(s.size());
  for (const auto& b : s) out.push_back(b.label);
  return out;
}

void write_json(const fs::path& p, const nlohmann::json& j) {
  std::ofstream os(p);
  if (!os) throw ValidationError("cannot write " + p.string());
  os << j.dump(2) << '\n';
}

int fail(const char* kind, int code, const std::string& msg) {
  std::cerr << "error: kind=" << kind << " code=" << code << " message=" << nlohmann::json(msg).dump() << std::endl;
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"AM-FM block face detection: filterbank, DCA, datasets, reduced LeNet training and ROC evaluation"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.fallthrough();
  unsigned threads = 1;
  app.add_option("--threads", threads, "Worker threads (1 = bit-reproducible)")->check(CLI::Range(1u, 256u));

  // filterbank
  auto* c_fb = app.add_subcommand("filterbank", "Build the Gabor filterbank and export kernels");
  FilterbankConfig fbc;
  std::string fb_out;
  std::size_t fb_grid = 256;
  c_fb->add_option("--out", fb_out, "Output directory")->required();
  c_fb->add_option("--size", fbc.size, "Kernel size (odd)");
  c_fb->add_option("--sigma-x", fbc.sigma_x, "Envelope sigma along the carrier");
  c_fb->add_option("--sigma-y", fbc.sigma_y, "Envelope sigma across the carrier");
  c_fb->add_option("--theta-step", fbc.theta_step, "Orientation step (rad)");
  c_fb->add_option("--scales", fbc.scales, "Number of scales (1 or 2)");
  c_fb->add_option("--orientations", fbc.orientations, "Orientations per scale");
  c_fb->add_option("--omega2", fbc.omega2, "Band-pass radial frequency (rad/px)");
  c_fb->add_option("--grid", fb_grid, "DFT grid for the response preview");

  // decompose
  auto* c_dec = app.add_subcommand("decompose", "Run DCA on one grayscale frame");
  std::string dec_in, dec_out, dec_fb;
  DcaFlags dec_dca;
  c_dec->add_option("--input", dec_in, "PGM or PNG frame")->required();
  c_dec->add_option("--out", dec_out, "Output directory")->required();
  c_dec->add_option("--filterbank", dec_fb, "Exported filterbank directory (default: built-in)");
  dec_dca.add(c_dec);

  // synth
  auto* c_syn = app.add_subcommand("synth", "Generate a synthetic corpus");
  std::string syn_kind = "faces", syn_out;
  std::size_t syn_frames = FacesConfig{}.frames();
  std::uint64_t syn_seed = 7;
  FacesConfig syn_fc;
  double syn_w0 = 0.5 * std::numbers::pi, syn_rate = 0.0;
  std::size_t syn_test_sessions = syn_fc.test_sessions;
  c_syn->add_option("--kind", syn_kind, "Corpus kind")->check(CLI::IsMember({"chirp", "faces"}));
  c_syn->add_option("--frames", syn_frames, "Number of frames")->check(CLI::PositiveNumber);
  c_syn->add_option("--seed", syn_seed, "Root seed");
  c_syn->add_option("--out", syn_out, "Output directory")->required();
  c_syn->add_option("--rows", syn_fc.rows, "Frame rows");
  c_syn->add_option("--cols", syn_fc.cols, "Frame cols");
  c_syn->add_option("--frames-per-session", syn_fc.frames_per_session, "Frames per session (faces)");
  c_syn->add_option("--test-sessions", syn_test_sessions, "Trailing sessions assigned to the test split (faces)");
  c_syn->add_option("--omega0", syn_w0, "Chirp start frequency (rad/px)");
  c_syn->add_option("--chirp-rate", syn_rate, "Chirp rate (rad/px^2)");

  // dataset
  auto* c_ds = app.add_subcommand("dataset", "Tile a manifest into a 50x50 block dataset cache");
  std::string ds_manifest, ds_mode = "fm", ds_out, ds_fb;
  DcaFlags ds_dca;
  ds_dca.channels = "bandpass";
  c_ds->add_option("--manifest", ds_manifest, "Manifest JSON")->required();
  c_ds->add_option("--mode", ds_mode, "Network input")->check(CLI::IsMember({"gray", "ia", "fm", "ia_fm"}));
  c_ds->add_option("--out", ds_out, "Output directory")->required();
  c_ds->add_option("--filterbank", ds_fb, "Exported filterbank directory (default: built-in)");
  ds_dca.add(c_ds);

  // train
  auto* c_tr = app.add_subcommand("train", "Train the reduced LeNet on a dataset cache");
  TrainConfig tc;
  std::string tr_mode = to_string(tc.mode), tr_loss = to_string(tc.loss), tr_opt = to_string(tc.optimizer);
  std::string tr_pool = nn::to_string(tc.pool), tr_data, tr_out;
  c_tr->add_option("--dataset", tr_data, "Dataset index.json")->required();
  c_tr->add_option("--out", tr_out, "Output directory")->required();
  c_tr->add_option("--mode", tr_mode, "Must match the dataset")->check(CLI::IsMember({"gray", "ia", "fm", "ia_fm"}));
  c_tr->add_option("--epochs", tc.epochs, "Epochs");
  c_tr->add_option("--batch-size", tc.batch_size, "Mini-batch size");
  c_tr->add_option("--lr", tc.learning_rate, "Learning rate");
  c_tr->add_option("--loss", tr_loss, "Loss")->check(CLI::IsMember({"mse", "bce"}));
  c_tr->add_option("--optimizer", tr_opt, "Optimizer")->check(CLI::IsMember({"sgd", "adam"}));
  c_tr->add_option("--seed", tc.seed, "Seed for init and shuffling");
  c_tr->add_option("--pool", tr_pool, "Pooling geometry")->check(CLI::IsMember({"padded", "valid"}));
  c_tr->add_option("--val-fraction", tc.val_fraction, "Trailing share of training sessions held out");

  // eval
  auto* c_ev = app.add_subcommand("eval", "ROC/AUC and overlays for a trained model");
  std::string ev_model, ev_data, ev_out, ev_split = "test";
  double ev_tau = kDefaultTauGt;
  double ev_thr = -1.0;
  c_ev->add_option("--model", ev_model, "Model directory (model.json)")->required();
  c_ev->add_option("--dataset", ev_data, "Dataset index.json")->required();
  c_ev->add_option("--out", ev_out, "Output directory")->required();
  c_ev->add_option("--split", ev_split, "Split to evaluate")->check(CLI::IsMember({"train", "test"}));
  c_ev->add_option("--tau-gt", ev_tau, "Face fraction at which a block counts as positive");
  c_ev->add_option("--threshold", ev_thr, "Overlay threshold (negative: Youden optimum)");

  // reproduce
  auto* c_rep = app.add_subcommand("reproduce", "Full synthetic experiment: gray vs FM input");
  std::string rep_out;
  ReproduceConfig rc;
  bool rep_quiet = false;
  c_rep->add_option("--out", rep_out, "Output directory")->required();
  c_rep->add_option("--seed", rc.seed, "Root seed");
  c_rep->add_option("--epochs", rc.train.epochs, "Epochs per model");
  c_rep->add_option("--tau-gt", rc.tau_gt, "Face fraction at which a block counts as positive");
  c_rep->add_flag("--write-corpus", rc.write_corpus, "Also write the synthetic frames and manifest");
  c_rep->add_flag("--quiet", rep_quiet, "No progress output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", static_cast<int>(ExitCode::usage), e.what());
  }

  try {
    if (*c_fb) {
      const auto fb = build_filterbank(fbc);
      export_filterbank(fb, fb_out);
      Image<double> best(fb_grid, fb_grid, 0.0);
      for (const auto& ch : fb.channels()) {
        const auto r = frequency_response(ch.kernel, fb_grid);
        for (std::size_t i = 0; i < best.size(); ++i) best.data()[i] = std::max(best.data()[i], r.data()[i]);
      }
      write_png(fs::path(fb_out) / "response_max.png",
                map_image(best, [](double v) { return static_cast<float>(std::min(v, 1.0)); }));
      std::cout << "wrote " << fb.size() << " channels to " << fb_out << "\n";
    } else if (*c_dec) {
      const auto fb = load_or_build(dec_fb);
      const DcaProcessor proc(fb, dec_dca.options());
      const auto d = proc.decompose(read_gray(dec_in));
      const fs::path out(dec_out);
      fs::create_directories(out);
      write_tensor(out / "ia.aft", to_tensor(d.ia));
      write_tensor(out / "fm.aft", to_tensor(d.fm));
      write_tensor(out / "phase.aft", to_tensor(d.phase));
      write_tensor(out / "channel_index.aft", to_tensor(d.channel_index));
      write_png(out / "ia.png", ia_image_normalized(d));
      write_png(out / "fm.png", fm_image_unit(d));
      write_png(out / "phase.png", stretch(d.phase, -static_cast<float>(std::numbers::pi), static_cast<float>(std::numbers::pi)));
      write_png(out / "channel_index.png",
                stretch(map_image(d.channel_index, [](int v) { return static_cast<float>(v); }), 0.0f,
                        static_cast<float>(fb.size() - 1)));
      std::cout << "decomposed " << d.rows() << "x" << d.cols() << " frame into " << out << "\n";
    } else if (*c_syn) {
      const fs::path out(syn_out);
      if (syn_kind == "chirp") {
        fs::create_directories(out / "frames");
        fs::create_directories(out / "labels");
        DatasetManifest m;
        m.base_dir = out;
        for (std::size_t i = 0; i < syn_frames; ++i) {
          const auto f = gen_chirp_frame(syn_fc.rows, syn_fc.cols, syn_w0, syn_rate, {}, derive_seed(syn_seed, "chirp", i));
          const std::string stem = "chirp_" + frame_name(i);
          write_pgm(out / "frames" / (stem + ".pgm"), map_image(f.image, [](float v) { return 0.5f * (v + 1.0f); }));
          write_tensor(out / "frames" / (stem + "_phase.aft"), to_tensor(map_image(f.phase, [](double v) { return static_cast<float>(v); })));
          save_boxes(out / "labels" / (stem + ".json"), {});
          m.entries.push_back({fs::path("frames") / (stem + ".pgm"), fs::path("labels") / (stem + ".json"), "chirp",
                               frame_name(i), Split::train});
        }
        save_manifest(out / "manifest.json", m);
      } else {
        syn_fc.test_sessions = syn_test_sessions;
        const std::size_t sessions = (syn_frames + syn_fc.frames_per_session - 1) / syn_fc.frames_per_session;
        if (syn_test_sessions >= sessions) throw ParameterError("--test-sessions must leave at least one training session");
        syn_fc.train_sessions = sessions - syn_test_sessions;
        auto frames = gen_face_dataset(syn_frames, syn_fc, derive_seed(syn_seed, "synth.faces"), threads);
        std::vector<LabeledFrame> lf;
        for (std::size_t i = 0; i < frames.size(); ++i)
          lf.push_back({std::move(frames[i]), i / syn_fc.frames_per_session >= syn_fc.train_sessions ? Split::test : Split::train});
        write_corpus(out, lf);
        std::vector<FrameRecord> recs;
        for (const auto& f : lf) recs.push_back(f.record);
        std::cout << "positive block rate " << block_positive_rate(recs, kDefaultTauGt) << "\n";
      }
      std::cout << "wrote " << syn_frames << " " << syn_kind << " frames to " << out << "\n";
    } else if (*c_ds) {
      const auto fb = load_or_build(ds_fb);
      const DcaProcessor proc(fb, ds_dca.options());
      const auto ds = build_dataset(load_manifest(ds_manifest), parse_mode(ds_mode), &proc, threads);
      write_dataset_cache(ds_out, ds, fb.config_hash());
      std::cout << "train " << ds.count(Split::train) << " test " << ds.count(Split::test) << " blocks -> "
                << (fs::path(ds_out) / "index.json").string() << "\n";
    } else if (*c_tr) {
      tc.mode = parse_mode(tr_mode);
      tc.loss = parse_loss(tr_loss);
      tc.optimizer = parse_optimizer(tr_opt);
      tc.pool = nn::parse_pool_geometry(tr_pool);
      tc.threads = threads;
      const auto ds = read_dataset_cache(tr_data);
      if (ds.mode != tc.mode) throw ValidationError("dataset mode " + to_string(ds.mode) + " does not match --mode " + tr_mode);
      auto [train_set, val_set] = split_validation(ds.samples(Split::train), tc.val_fraction);
      const auto res = train(tc, train_set, val_set, [](const EpochRecord& r) {
        std::cout << "epoch " << r.epoch << " train_loss " << r.train_loss << " val_loss " << r.val_loss << " "
                  << r.seconds << "s" << std::endl;
      });
      const fs::path out(tr_out);
      fs::create_directories(out);
      nn::save_model(res.model, out / "model");
      write_history_csv(out / "history.csv", res.history);
      write_json(out / "train_config.json", tc);
    } else if (*c_ev) {
      const auto model = nn::load_model<float>(ev_model);
      const auto ds = read_dataset_cache(ev_data);
      if (mode_channels(ds.mode) != model.config().in_channels)
        throw ValidationError("model input channels do not match the dataset mode");
      const Split split = parse_split(ev_split);
      const auto samples = ds.samples(split);
      const auto preds = predict_all(model, samples, threads);
      const auto labels = labels_of(samples);
      const auto roc = roc_curve(preds, labels, ev_tau);
      const double thr = ev_thr >= 0.0 ? ev_thr : youden_threshold(roc);
      const fs::path out(ev_out);
      fs::create_directories(out / "overlays");
      write_roc_csv(out / "roc.csv", roc);
      write_json(out / "report.json", report_json(roc, thr, confusion_at(preds, labels, ev_tau, thr)));
      write_roc_svg(out / "roc.svg", {{to_string(ds.mode), "red", &roc}}, "ROC (" + to_string(ds.mode) + ")");
      std::size_t offset = 0;
      for (const auto& f : ds.frames) {
        if (f.split != split) continue;
        const std::size_t n = f.blocks.size();
        const std::vector<float> p(preds.begin() + static_cast<std::ptrdiff_t>(offset),
                                   preds.begin() + static_cast<std::ptrdiff_t>(offset + n));
        const std::vector<float> l(labels.begin() + static_cast<std::ptrdiff_t>(offset),
                                   labels.begin() + static_cast<std::ptrdiff_t>(offset + n));
        write_png(out / "overlays" / (f.session_id + "_" + f.frame_id + ".png"),
                  render_overlay(reassemble(f.blocks, f.grid_rows, f.grid_cols), p, l, f.grid_rows, f.grid_cols, thr, ev_tau));
        offset += n;
      }
      std::cout << "AUC " << roc.auc << " (tau_gt " << ev_tau << ", " << roc.positives << " positive / "
                << roc.negatives << " negative blocks)\n";
    } else if (*c_rep) {
      rc.threads = threads;
      const auto res = run_reproduce(rep_out, rc, rep_quiet ? nullptr : &std::cerr);
      std::cout << res.summary.dump(2) << "\n";
    }
  } catch (const Error& e) {
    return fail(e.kind(), static_cast<int>(e.code()), e.what());
  } catch (const nlohmann::json::exception& e) {
    return fail("validation", static_cast<int>(ExitCode::validation), e.what());
  } catch (const fs::filesystem_error& e) {
    return fail("validation", static_cast<int>(ExitCode::validation), e.what());
  } catch (const std::exception& e) {
    return fail("internal", 1, e.what());
  }
  return 0;
}
