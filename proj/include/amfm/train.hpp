#pragma once

// Mini-batch training of the reduced LeNet on block samples.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "amfm/blocks.hpp"
#include "amfm/error.hpp"
#include "amfm/nn.hpp"
#include "amfm/parallel.hpp"
#include "amfm/rng.hpp"
#include "json.hpp"

namespace amfm {

enum class LossKind { mse, bce };
enum class OptimizerKind { sgd, adam };

inline std::string to_string(LossKind k) { return k == LossKind::mse ? "mse" : "bce"; }
inline std::string to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

inline LossKind parse_loss(const std::string& s) {
  if (s == "mse") return LossKind::mse;
  if (s == "bce") return LossKind::bce;
  throw ParameterError("unknown loss '" + s + "' (expected mse|bce)");
}

inline OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw ParameterError("unknown optimizer '" + s + "' (expected sgd|adam)");
}

/// Per-sample loss on a prediction in (0, 1).
template <typename T>
T loss_value(T pred, T label, LossKind kind) {
  if (kind == LossKind::mse) return (pred - label) * (pred - label);
  return -(label * std::log(pred) + (T(1) - label) * std::log(T(1) - pred));
}

/// dLoss/dpred.
template <typename T>
T loss_grad(T pred, T label, LossKind kind) {
  if (kind == LossKind::mse) return T(2) * (pred - label);
  return (pred - label) / (pred * (T(1) - pred));
}

/// Loss from the pre-sigmoid logit; finite even where the sigmoid saturates.
template <typename T>
T loss_from_logit(T logit, T label, LossKind kind) {
  if (kind == LossKind::mse) return loss_value(nn::sigmoid(logit), label, kind);
  const T softplus = logit > T(0) ? logit + std::log1p(std::exp(-logit)) : std::log1p(std::exp(logit));
  return softplus - label * logit;
}

/// dLoss/dlogit.
template <typename T>
T loss_grad_logit(T logit, T label, LossKind kind) {
  const T p = nn::sigmoid(logit);
  if (kind == LossKind::mse) return T(2) * (p - label) * p * (T(1) - p);
  return p - label;
}

struct TrainConfig {
  BlockMode mode = BlockMode::fm;
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::adam;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  std::uint64_t seed = 7;
  LossKind loss = LossKind::bce;
  nn::PoolGeometry pool = nn::PoolGeometry::padded;
  double val_fraction = 0.1;  // trailing share of training sessions held out
  unsigned threads = 1;

  void validate() const {
    if (epochs < 1) throw ParameterError("epochs must be >= 1");
    if (batch_size < 1) throw ParameterError("batch size must be >= 1");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ParameterError("learning rate must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && adam_eps > 0.0))
      throw ParameterError("invalid Adam hyper-parameters");
    if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ParameterError("val fraction must be in [0, 1)");
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"mode", to_string(c.mode)},       {"epochs", c.epochs}, {"batch_size", c.batch_size},
       {"learning_rate", c.learning_rate}, {"optimizer", to_string(c.optimizer)},
       {"beta1", c.beta1},                 {"beta2", c.beta2},   {"adam_eps", c.adam_eps},
       {"seed", c.seed},                   {"loss", to_string(c.loss)},
       {"pool", nn::to_string(c.pool)},    {"val_fraction", c.val_fraction}};
}

struct EpochRecord {
  std::size_t epoch = 0;      // 1-based
  double train_loss = 0.0;    // mean over the epoch, measured during the pass
  double train_mse = 0.0;
  double val_loss = std::numeric_limits<double>::quiet_NaN();
  double seconds = 0.0;       // training pass only
};

using TrainHistory = std::vector<EpochRecord>;

struct TrainResult {
  nn::ReducedLeNet<float> model;
  TrainHistory history;
};

/// Whole trailing sessions (in first-appearance order) become validation.
inline std::pair<std::vector<BlockSample>, std::vector<BlockSample>> split_validation(
    const std::vector<BlockSample>& samples, double fraction) {
  std::vector<std::string> order;
  std::set<std::string> seen;
  for (const auto& s : samples)
    if (seen.insert(s.session_id).second) order.push_back(s.session_id);
  std::size_t n_val = 0;
  if (fraction > 0.0 && order.size() >= 2)
    n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(fraction * static_cast<double>(order.size()))));
  n_val = std::min(n_val, order.size() - (order.empty() ? 0 : 1));
  const std::set<std::string> val_sessions(order.end() - static_cast<std::ptrdiff_t>(n_val), order.end());
  std::vector<BlockSample> tr, va;
  for (const auto& s : samples) (val_sessions.count(s.session_id) ? va : tr).push_back(s);
  return {std::move(tr), std::move(va)};
}

inline std::vector<float> predict_all(const nn::ReducedLeNet<float>& model, const std::vector<BlockSample>& samples,
                                      unsigned threads = 1) {
  std::vector<float> out(samples.size());
  const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(threads, samples.size()));
  parallel_for(workers, static_cast<unsigned>(workers), [&](std::size_t w) {
    nn::Workspace<float> ws(model.config());
    for (std::size_t i = w; i < samples.size(); i += workers)
      out[i] = model.forward<float>(samples[i].channels.data(), ws);
  });
  return out;
}

inline double mean_loss(const nn::ReducedLeNet<float>& model, const std::vector<BlockSample>& samples, LossKind kind,
                        unsigned threads = 1) {
  if (samples.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::vector<double> per(samples.size());
  const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(threads, samples.size()));
  parallel_for(workers, static_cast<unsigned>(workers), [&](std::size_t w) {
    nn::Workspace<float> ws(model.config());
    for (std::size_t i = w; i < samples.size(); i += workers) {
      model.forward<float>(samples[i].channels.data(), ws);
      per[i] = loss_from_logit<double>(ws.out_pre, samples[i].label, kind);
    }
  });
  return std::accumulate(per.begin(), per.end(), 0.0) / static_cast<double>(per.size());
}

class Optimizer {
 public:
  Optimizer(const TrainConfig& c, std::size_t n) : cfg_(c), m_(n, 0.0f), v_(n, 0.0f) {}

  void step(std::vector<float>& params, std::span<const float> grad) {
    ++t_;
    const float lr = static_cast<float>(cfg_.learning_rate);
    if (cfg_.optimizer == OptimizerKind::sgd) {
      for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grad[i];
      return;
    }
    const float b1 = static_cast<float>(cfg_.beta1), b2 = static_cast<float>(cfg_.beta2);
    const float eps = static_cast<float>(cfg_.adam_eps);
    const float c1 = static_cast<float>(1.0 - std::pow(cfg_.beta1, static_cast<double>(t_)));
    const float c2 = static_cast<float>(1.0 - std::pow(cfg_.beta2, static_cast<double>(t_)));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = b1 * m_[i] + (1.0f - b1) * grad[i];
      v_[i] = b2 * v_[i] + (1.0f - b2) * grad[i] * grad[i];
      params[i] -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps);
    }
  }

 private:
  TrainConfig cfg_;
  std::vector<float> m_, v_;
  std::size_t t_ = 0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Trains from a seeded initialization. Per-sample gradients are reduced in
/// batch order, so results do not depend on the thread count.
inline TrainResult train(const TrainConfig& config, const std::vector<BlockSample>& train_set,
                         const std::vector<BlockSample>& val_set, const EpochCallback& on_epoch = {}) {
  config.validate();
  if (train_set.empty()) throw ValidationError("training set is empty");
  const std::size_t channels = mode_channels(config.mode);
  for (const auto* set : {&train_set, &val_set})
    for (const auto& s : *set)
      if (s.channel_count() != channels || s.channels.size() != kBlockSize * kBlockSize * channels)
        throw ValidationError("sample channel count does not match mode " + to_string(config.mode));

  const nn::LeNetConfig net_cfg{channels, config.pool};
  TrainResult result{nn::ReducedLeNet<float>::initialized(net_cfg, derive_seed(config.seed, "train.init")), {}};
  auto& model = result.model;
  const std::size_t np = model.param_count();
  Optimizer opt(config, np);

  const std::size_t batch = std::min(config.batch_size, train_set.size());
  const unsigned threads = std::max(1u, config.threads);
  const std::size_t slots = threads == 1 ? 1 : batch;
  std::vector<std::vector<float>> sample_grad(slots, std::vector<float>(np));
  std::vector<float> grad(np);
  std::vector<double> sample_loss(batch), sample_sq(batch);
  std::vector<nn::Workspace<float>> workspaces;
  for (unsigned w = 0; w < (threads == 1 ? 1u : std::min<unsigned>(threads, static_cast<unsigned>(batch))); ++w)
    workspaces.emplace_back(net_cfg);

  std::vector<std::size_t> order(train_set.size());
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto rng = make_rng(config.seed, "train.shuffle", epoch);
    std::shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0.0, sq_sum = 0.0;
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t nb = std::min(batch, order.size() - start);
      auto run_sample = [&](std::size_t k, nn::Workspace<float>& ws, std::vector<float>& g) {
        const auto& s = train_set[order[start + k]];
        std::fill(g.begin(), g.end(), 0.0f);
        const float p = model.forward<float>(s.channels.data(), ws);
        sample_loss[k] = loss_from_logit<double>(ws.out_pre, s.label, config.loss);
        sample_sq[k] = (static_cast<double>(p) - s.label) * (static_cast<double>(p) - s.label);
        model.backward_from_logit(ws, loss_grad_logit<float>(ws.out_pre, s.label, config.loss), g);
      };
      std::fill(grad.begin(), grad.end(), 0.0f);
      if (threads == 1) {
        for (std::size_t k = 0; k < nb; ++k) {
          run_sample(k, workspaces[0], sample_grad[0]);
          for (std::size_t i = 0; i < np; ++i) grad[i] += sample_grad[0][i];
        }
      } else {
        const std::size_t workers = std::min(workspaces.size(), nb);
        parallel_for(workers, static_cast<unsigned>(workers), [&](std::size_t w) {
          for (std::size_t k = w; k < nb; k += workers) run_sample(k, workspaces[w], sample_grad[k]);
        });
        for (std::size_t k = 0; k < nb; ++k)
          for (std::size_t i = 0; i < np; ++i) grad[i] += sample_grad[k][i];
      }
      const float inv = 1.0f / static_cast<float>(nb);
      for (auto& g : grad) g *= inv;
      for (std::size_t k = 0; k < nb; ++k) {
        loss_sum += sample_loss[k];
        sq_sum += sample_sq[k];
      }
      if (!std::isfinite(loss_sum)) throw NumericError("non-finite training loss in epoch " + std::to_string(epoch));
      opt.step(model.params(), grad);
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!model.all_finite()) throw NumericError("non-finite parameters after epoch " + std::to_string(epoch));

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    rec.train_mse = sq_sum / static_cast<double>(order.size());
    rec.val_loss = mean_loss(model, val_set, config.loss, threads);
    rec.seconds = seconds;
    if (!val_set.empty() && !std::isfinite(rec.val_loss))
      throw NumericError("non-finite validation loss in epoch " + std::to_string(epoch));
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

namespace detail {

inline std::string fmt_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace detail

/// epoch,train_loss,val_loss,seconds,train_mse. Without seconds the file is a
/// pure function of seed, config and data.
inline void write_history_csv(const std::filesystem::path& path, const TrainHistory& h, bool with_seconds = true,
                              const std::string& mode = {}) {
  std::ofstream os(path);
  if (!os) throw ValidationError("cannot write " + path.string());
  if (!mode.empty()) os << "mode,";
  os << "epoch,train_loss,val_loss" << (with_seconds ? ",seconds" : "") << ",train_mse\n";
  for (const auto& r : h) {
    if (!mode.empty()) os << mode << ',';
    os << r.epoch << ',' << detail::fmt_double(r.train_loss) << ',' << detail::fmt_double(r.val_loss);
    if (with_seconds) os << ',' << detail::fmt_double(r.seconds);
    os << ',' << detail::fmt_double(r.train_mse) << '\n';
  }
}

/// Largest relative deviation of an epoch time from the median over epochs
/// 2..N (epoch 1 carries warm-up). 0 with fewer than two such epochs.
inline double epoch_time_deviation(const TrainHistory& h) {
  if (h.size() < 3) return 0.0;
  std::vector<double> t;
  for (std::size_t i = 1; i < h.size(); ++i) t.push_back(h[i].seconds);
  std::vector<double> sorted = t;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  const double median = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  if (!(median > 0.0)) return std::numeric_limits<double>::infinity();
  double worst = 0.0;
  for (double v : t) worst = std::max(worst, std::abs(v / median - 1.0));
  return worst;
}

/// Mean epoch time over epochs 2..N (all epochs when N < 2).
inline double mean_epoch_seconds(const TrainHistory& h) {
  if (h.empty()) return 0.0;
  const std::size_t first = h.size() >= 2 ? 1 : 0;
  double s = 0.0;
  for (std::size_t i = first; i < h.size(); ++i) s += h[i].seconds;
  return s / static_cast<double>(h.size() - first);
}

}  // namespace amfm
