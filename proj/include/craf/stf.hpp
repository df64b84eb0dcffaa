// Spatiotemporal forecaster: rainfall temporal encoder fused with the ZFL
// history, two ST-Conv blocks (gated temporal conv -> graph conv -> gated
// temporal conv) and a gated output head; one-step training, autoregressive
// rollout for multi-step forecasts.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "craf/adam.hpp"
#include "craf/autodiff.hpp"
#include "craf/checkpoint.hpp"
#include "craf/fragility.hpp"
#include "craf/graphs.hpp"
#include "craf/matrix.hpp"
#include "craf/rng.hpp"
#include "craf/worldgen.hpp"

namespace craf::stf {

enum class SourceTag { ground_truth_sim, sa_inferred, model_predicted };

struct HistoryEntry {
  std::vector<double> z;
  SourceTag tag = SourceTag::ground_truth_sim;
  int t = 0;
  double rain_mm_h = 0.0;  // rain during hour t
};

// last H states in time order, timestamps strictly increasing by one hour
struct HistoryBuffer {
  int capacity = 12;
  std::deque<HistoryEntry> entries;

  void push(HistoryEntry e) {
    if (!entries.empty() && e.t != entries.back().t + 1)
      throw std::invalid_argument("history: timestamps must advance by 1 hour, got " +
                                  std::to_string(e.t) + " after " +
                                  std::to_string(entries.back().t));
    entries.push_back(std::move(e));
    while (static_cast<int>(entries.size()) > capacity) entries.pop_front();
  }

  // replace the state at absolute hour t (keeps rain), e.g. with an SA snapshot
  bool replace(int t, const std::vector<double>& z, SourceTag tag) {
    for (HistoryEntry& e : entries)
      if (e.t == t) {
        e.z = z;
        e.tag = tag;
        return true;
      }
    return false;
  }
};

struct StfHyperParams {
  int history = 12;      // H
  int kernel_t = 3;      // K_t, odd
  int channels = 16;     // ST-Conv width
  int rain_channels = 4;
  double lr = 3e-3;
  int max_epochs = 100;
  int patience = 12;
  int batch = 8;
  double val_fraction = 0.3;
  double clip_norm = 1.0;
};

// one training sample: H history frames, the aligned rain window, the target
struct Window {
  std::vector<std::vector<double>> history;  // H x M, oldest first
  std::vector<double> rain;                  // H+1 values, rain[h] drives frame h
  std::vector<double> target;                // M
  std::string scenario_id;
  int target_hour = 0;
};

// rainfall enters the encoder in units of 100 mm/h so the tanh stays unsaturated
inline constexpr double kRainScale = 0.01;

struct StfModel {
  int history = 12;
  int kernel_t = 3;
  int channels = 16;
  int rain_channels = 4;
  bool no_rainfall = false;  // STF-NR ablation: rainfall zeroed at train and test
  std::vector<std::string> param_names;
  std::vector<Matrix> params;
  bool trained = false;

  // temporal conv stages: (name, kernel, in, out_gated)
  struct Stage {
    std::string name;
    int kernel;
    int cin;
    int cout;
    bool gated;
    bool squash;  // bounded tanh on the stage output keeps the stack stable
  };

  std::vector<Stage> stages() const {
    const int c = channels;
    const int fused = 1 + rain_channels;
    return {
        {"b1.t1", kernel_t, fused, c, true, false}, {"b1.s", 1, c, c, false, false},
        {"b1.t2", kernel_t, c, c, true, true},      {"b2.t1", kernel_t, c, c, true, false},
        {"b2.s", 1, c, c, false, false},            {"b2.t2", kernel_t, c, c, true, true},
        {"out.t1", kernel_t, c, c, true, false},    {"out.t2", 2, c, c, true, true},
        {"out.fc", 1, c, 1, false, false},
    };
  }

  static StfModel init(const StfHyperParams& hp, Rng& rng, bool no_rain) {
    if (hp.kernel_t % 2 == 0) throw std::invalid_argument("stf: kernel_t must be odd");
    if (hp.history < hp.kernel_t) throw std::invalid_argument("stf: history shorter than kernel");
    StfModel m;
    m.history = hp.history;
    m.kernel_t = hp.kernel_t;
    m.channels = hp.channels;
    m.rain_channels = hp.rain_channels;
    m.no_rainfall = no_rain;

    // Biases start at zero except GLU gate halves, which start open (+1) so
    // early optimization pressure cannot slam every gate shut and dead-end the
    // stack; the output head starts small so its sigmoid stays responsive.
    const auto add = [&](const std::string& name, std::size_t rows, std::size_t cols,
                         int gate_cols = 0) {
      Matrix w(rows, cols);
      if (!name.ends_with(".b")) {
        double limit = std::sqrt(6.0 / (rows + cols));
        if (name.rfind("out.fc", 0) == 0) limit *= 0.1;
        for (double& v : w.raw()) v = rng.uniform(-limit, limit);
      } else if (gate_cols > 0) {
        for (std::size_t j = cols - gate_cols; j < cols; ++j) w(0, j) = 1.0;
      }
      m.param_names.push_back(name);
      m.params.push_back(std::move(w));
    };

    // rainfall encoder: kernel-2 temporal conv over the scalar rain series
    add("rain.w", 2, hp.rain_channels);
    add("rain.b", 1, hp.rain_channels);

    for (const Stage& st : m.stages()) {
      const int cout = st.gated ? 2 * st.cout : st.cout;
      for (int k = 0; k < st.kernel; ++k)
        add(st.name + ".k" + std::to_string(k), st.cin, cout);
      add(st.name + ".b", 1, cout, st.gated ? st.cout : 0);
    }
    return m;
  }

  int param_index(const std::string& name) const {
    for (std::size_t i = 0; i < param_names.size(); ++i)
      if (param_names[i] == name) return static_cast<int>(i);
    throw std::invalid_argument("stf: unknown parameter " + name);
  }
};

// temporal convolution over a frame list; frames shrink by kernel-1
inline std::vector<ad::Var> temporal_conv(ad::Tape& t, const std::vector<ad::Var>& frames,
                                          std::span<const ad::Var> kernel, ad::Var bias,
                                          bool gated) {
  const int k = static_cast<int>(kernel.size());
  if (static_cast<int>(frames.size()) < k)
    throw std::invalid_argument("temporal_conv: " + std::to_string(frames.size()) +
                                " frames for kernel " + std::to_string(k));
  std::vector<ad::Var> out;
  for (std::size_t s = 0; s + k <= frames.size(); ++s) {
    ad::Var acc = t.matmul(frames[s], kernel[0]);
    for (int j = 1; j < k; ++j) acc = t.add(acc, t.matmul(frames[s + j], kernel[j]));
    acc = t.add_row(acc, bias);
    out.push_back(gated ? t.glu_cols(acc) : acc);
  }
  return out;
}

// first-order graph convolution per frame: leaky(A_hat X Theta + b)
inline std::vector<ad::Var> spatial_conv(ad::Tape& t, const std::vector<ad::Var>& frames,
                                         ad::Var a_hat, ad::Var theta, ad::Var bias) {
  std::vector<ad::Var> out;
  out.reserve(frames.size());
  for (ad::Var f : frames)
    out.push_back(t.leaky_relu(t.add_row(t.matmul(t.matmul(a_hat, f), theta), bias)));
  return out;
}

// Forward pass for one step. history: H frames (M values each, oldest first),
// rain: H+1 values. Returns the M x 1 forecast for the next hour.
inline ad::Var stf_forward(ad::Tape& t, std::span<const ad::Var> params, const StfModel& model,
                           const std::vector<std::vector<double>>& history,
                           const std::vector<double>& rain, const Matrix& a_hat_m) {
  const int h = model.history;
  if (static_cast<int>(history.size()) != h)
    throw std::invalid_argument("stf_forward: history length " +
                                std::to_string(history.size()) + ", want " + std::to_string(h));
  if (static_cast<int>(rain.size()) != h + 1)
    throw std::invalid_argument("stf_forward: rain window " + std::to_string(rain.size()) +
                                ", want " + std::to_string(h + 1));
  const std::size_t m = history.front().size();

  ad::Var ones_col = t.leaf(Matrix::ones(m, 1));
  ad::Var a_hat = t.leaf(a_hat_m);
  ad::Var rain_w = params[model.param_index("rain.w")];
  ad::Var rain_b = params[model.param_index("rain.b")];

  // fuse each ZFL frame with broadcast rainfall features (channel concat)
  std::vector<ad::Var> frames;
  frames.reserve(h);
  for (int s = 0; s < h; ++s) {
    Matrix zf(m, 1);
    for (std::size_t i = 0; i < m; ++i) zf(i, 0) = history[s][i];
    ad::Var frame = t.leaf(zf);

    Matrix rpair(1, 2);
    if (!model.no_rainfall) {
      rpair(0, 0) = rain[s] * kRainScale;
      rpair(0, 1) = rain[s + 1] * kRainScale;
    }
    ad::Var feat = t.tanh(t.add(t.matmul(t.leaf(rpair), rain_w), rain_b));
    frames.push_back(t.concat_cols(frame, t.matmul(ones_col, feat)));
  }

  for (const StfModel::Stage& st : model.stages()) {
    if (st.name.ends_with(".s")) {
      frames = spatial_conv(t, frames, a_hat, params[model.param_index(st.name + ".k0")],
                            params[model.param_index(st.name + ".b")]);
    } else if (st.name == "out.fc") {
      ad::Var acc = t.add_row(t.matmul(frames[0], params[model.param_index(st.name + ".k0")]),
                              params[model.param_index(st.name + ".b")]);
      return t.sigmoid(acc);
    } else {
      std::vector<ad::Var> kernel;
      for (int k = 0; k < st.kernel; ++k)
        kernel.push_back(params[model.param_index(st.name + ".k" + std::to_string(k))]);
      frames = temporal_conv(t, frames, kernel, params[model.param_index(st.name + ".b")],
                             st.gated);
      if (st.squash)
        for (ad::Var& f : frames) f = t.tanh(f);
    }
  }
  throw std::logic_error("stf_forward: missing output stage");
}

// A T-hour trajectory yields exactly T windows; histories reaching before the
// first hour are zero-padded in both ZFL and rainfall.
inline std::vector<Window> make_training_windows(const fragility::ZflTrajectory& traj,
                                                 const worldgen::Hyetograph& rain, int history) {
  const int hours = traj.hours();
  if (hours == 0) throw std::invalid_argument("make_training_windows: empty trajectory");
  if (rain.duration() != hours)
    throw std::invalid_argument("make_training_windows: rain length " +
                                std::to_string(rain.duration()) + " vs trajectory " +
                                std::to_string(hours));
  const int m = traj.zones();

  std::vector<Window> out;
  out.reserve(hours);
  for (int target = 0; target < hours; ++target) {
    Window w;
    w.scenario_id = traj.scenario_id;
    w.target_hour = target;
    w.target.resize(m);
    for (int j = 0; j < m; ++j) w.target[j] = traj.z(target, j);
    for (int s = target - history; s < target; ++s) {
      std::vector<double> frame(m, 0.0);
      if (s >= 0)
        for (int j = 0; j < m; ++j) frame[j] = traj.z(s, j);
      w.history.push_back(std::move(frame));
    }
    for (int s = target - history; s <= target; ++s)
      w.rain.push_back(s >= 0 ? rain.mm_per_h[s] : 0.0);
    out.push_back(std::move(w));
  }
  return out;
}

inline std::vector<double> stf_step(const std::vector<double>& rain_window,
                                    const std::vector<std::vector<double>>& history,
                                    const graphs::ErzGraph& g2, const StfModel& model) {
  if (!model.trained) throw std::invalid_argument("stf_step: model is untrained");
  ad::Tape tape;
  std::vector<ad::Var> pvars;
  pvars.reserve(model.params.size());
  for (const Matrix& p : model.params) pvars.push_back(tape.leaf(p));
  ad::Var out = stf_forward(tape, pvars, model, history, rain_window, g2.normalized);
  std::vector<double> z(tape.value(out).rows());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = tape.value(out)(i, 0);
  return z;
}

// convenience over a HistoryBuffer: zero-pads short histories at the front
inline std::vector<double> stf_step(const HistoryBuffer& buffer, double next_hour_rain,
                                    const graphs::ErzGraph& g2, const StfModel& model,
                                    std::size_t zones) {
  const int h = model.history;
  std::vector<std::vector<double>> history;
  std::vector<double> rain;
  const int have = static_cast<int>(buffer.entries.size());
  for (int s = 0; s < h - have; ++s) {
    history.emplace_back(zones, 0.0);
    rain.push_back(0.0);
  }
  for (const HistoryEntry& e : buffer.entries) {
    history.push_back(e.z);
    rain.push_back(e.rain_mm_h);
  }
  rain.push_back(next_hour_rain);
  return stf_step(rain, history, g2, model);
}

// Autoregressive rollout: rain covers hours t-H+1 .. t+F (H history values then
// F forecast values); each prediction is appended as model-predicted history.
inline std::vector<std::vector<double>> stf_rollout(const std::vector<double>& rain,
                                                    const std::vector<std::vector<double>>& history,
                                                    int f, const graphs::ErzGraph& g2,
                                                    const StfModel& model) {
  const int h = model.history;
  if (f < 1) throw std::invalid_argument("stf_rollout: horizon must be >= 1");
  if (static_cast<int>(rain.size()) < h + f)
    throw std::invalid_argument("stf_rollout: rain covers " + std::to_string(rain.size()) +
                                " hours, need " + std::to_string(h + f));
  std::vector<std::vector<double>> hist = history;
  std::vector<std::vector<double>> out;
  out.reserve(f);
  for (int step = 0; step < f; ++step) {
    std::vector<double> window(rain.begin() + step, rain.begin() + step + h + 1);
    std::vector<double> z = stf_step(window, hist, g2, model);
    hist.erase(hist.begin());
    hist.push_back(z);
    out.push_back(std::move(z));
  }
  return out;
}

struct StfTrainReport {
  std::vector<double> epoch_train_loss;
  std::vector<double> epoch_val_loss;
  int best_epoch = -1;
};

inline StfModel stf_train(const std::vector<Window>& windows, const graphs::ErzGraph& g2,
                          const StfHyperParams& hp, std::uint64_t seed, bool no_rain = false,
                          StfTrainReport* report = nullptr) {
  if (windows.empty()) throw std::invalid_argument("stf_train: empty window dataset");
  const std::size_t m = windows.front().target.size();

  Rng init_rng = Rng(seed).fork(11);
  StfModel model = StfModel::init(hp, init_rng, no_rain);

  // start the output head at the target mean so the early epochs are not
  // spent pushing every layer toward a constant
  {
    double mean = 0.0;
    std::size_t n = 0;
    for (const Window& w : windows)
      for (double v : w.target) {
        mean += v;
        ++n;
      }
    mean = std::clamp(mean / static_cast<double>(n), 0.01, 0.99);
    Matrix& out_bias = model.params[model.param_index("out.fc.b")];
    out_bias(0, 0) = std::log(mean / (1.0 - mean));
  }

  // split by scenario so validation storms are unseen
  std::vector<std::string> scenarios;
  for (const Window& w : windows)
    if (std::find(scenarios.begin(), scenarios.end(), w.scenario_id) == scenarios.end())
      scenarios.push_back(w.scenario_id);
  Rng split_rng = Rng(seed).fork(12);
  split_rng.shuffle(scenarios);
  const std::size_t val_scen = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::lround(hp.val_fraction * scenarios.size())));
  std::vector<std::string> val_set(scenarios.end() - val_scen, scenarios.end());
  const auto is_val = [&](const std::string& id) {
    return std::find(val_set.begin(), val_set.end(), id) != val_set.end();
  };

  std::vector<std::size_t> train_idx, val_idx;
  for (std::size_t i = 0; i < windows.size(); ++i)
    (is_val(windows[i].scenario_id) ? val_idx : train_idx).push_back(i);
  if (train_idx.empty()) throw std::invalid_argument("stf_train: no training windows after split");

  ad::AdamState adam;
  adam.lr = hp.lr;
  const Matrix ones_mask(m, 1, 1.0);

  std::vector<Matrix> grad_sum(model.params.size());
  const auto zero_grads = [&]() {
    for (std::size_t i = 0; i < model.params.size(); ++i)
      grad_sum[i] = Matrix(model.params[i].rows(), model.params[i].cols());
  };

  const auto run_window = [&](const Window& w, bool with_grad) {
    std::vector<double> rain = w.rain;
    if (model.no_rainfall) std::fill(rain.begin(), rain.end(), 0.0);
    ad::Tape tape;
    std::vector<ad::Var> pvars;
    for (const Matrix& p : model.params) pvars.push_back(tape.leaf(p));
    ad::Var out = stf_forward(tape, pvars, model, w.history, rain, g2.normalized);
    Matrix target(m, 1);
    for (std::size_t i = 0; i < m; ++i) target(i, 0) = w.target[i];
    ad::Var loss = tape.masked_mse(out, target, ones_mask);
    const double lv = tape.value(loss)(0, 0);
    if (!std::isfinite(lv))
      throw std::runtime_error("stf_train: non-finite loss on scenario " + w.scenario_id +
                               " hour " + std::to_string(w.target_hour));
    if (with_grad) {
      tape.backward(loss);
      for (std::size_t i = 0; i < model.params.size(); ++i) {
        const Matrix& g = tape.grad(pvars[i]);
        for (std::size_t k = 0; k < g.size(); ++k) grad_sum[i].raw()[k] += g.raw()[k];
      }
    }
    return lv;
  };

  Rng epoch_rng = Rng(seed).fork(13);
  std::vector<Matrix> best_params = model.params;
  double best_val = 1e300;
  int best_epoch = -1, stall = 0;
  model.trained = true;  // forward passes during training are fine

  for (int epoch = 0; epoch < hp.max_epochs; ++epoch) {
    epoch_rng.shuffle(train_idx);
    double epoch_loss = 0.0;
    std::size_t in_batch = 0;
    zero_grads();
    for (std::size_t k = 0; k < train_idx.size(); ++k) {
      epoch_loss += run_window(windows[train_idx[k]], true);
      ++in_batch;
      if (in_batch == static_cast<std::size_t>(hp.batch) || k + 1 == train_idx.size()) {
        for (std::size_t i = 0; i < model.params.size(); ++i)
          for (double& gv : grad_sum[i].raw()) gv /= static_cast<double>(in_batch);
        ad::clip_gradients(grad_sum, hp.clip_norm);
        std::vector<ad::ParamRef> refs;
        for (std::size_t i = 0; i < model.params.size(); ++i)
          refs.push_back({model.param_names[i], &model.params[i], &grad_sum[i]});
        ad::adam_step(refs, adam);
        zero_grads();
        in_batch = 0;
      }
    }
    epoch_loss /= static_cast<double>(train_idx.size());

    double val_loss = 0.0;
    for (std::size_t i : val_idx) val_loss += run_window(windows[i], false);
    val_loss /= static_cast<double>(std::max<std::size_t>(val_idx.size(), 1));

    if (report) {
      report->epoch_train_loss.push_back(epoch_loss);
      report->epoch_val_loss.push_back(val_loss);
    }
    if (val_loss < best_val - 1e-9) {
      best_val = val_loss;
      best_params = model.params;
      best_epoch = epoch;
      stall = 0;
    } else if (++stall >= hp.patience) {
      break;
    }
  }

  model.params = std::move(best_params);
  if (report) report->best_epoch = best_epoch;
  return model;
}

// identical architecture and training with rainfall inputs forced to zero
inline StfModel ablate_rainfall(const std::vector<Window>& windows, const graphs::ErzGraph& g2,
                                const StfHyperParams& hp, std::uint64_t seed,
                                StfTrainReport* report = nullptr) {
  return stf_train(windows, g2, hp, seed, true, report);
}

inline ckpt::Checkpoint to_checkpoint(const StfModel& m) {
  ckpt::Checkpoint ck;
  ck.header["kind"] = "stf";
  ck.header["history"] = std::to_string(m.history);
  ck.header["kernel_t"] = std::to_string(m.kernel_t);
  ck.header["channels"] = std::to_string(m.channels);
  ck.header["rain_channels"] = std::to_string(m.rain_channels);
  ck.header["no_rainfall"] = m.no_rainfall ? "1" : "0";
  for (std::size_t i = 0; i < m.params.size(); ++i)
    ck.params.emplace_back(m.param_names[i], m.params[i]);
  return ck;
}

inline StfModel from_checkpoint(const ckpt::Checkpoint& ck) {
  if (ck.header_at("kind") != "stf") throw std::runtime_error("checkpoint kind is not stf");
  StfModel m;
  m.history = std::stoi(ck.header_at("history"));
  m.kernel_t = std::stoi(ck.header_at("kernel_t"));
  m.channels = std::stoi(ck.header_at("channels"));
  m.rain_channels = std::stoi(ck.header_at("rain_channels"));
  m.no_rainfall = ck.header_at("no_rainfall") == "1";
  for (const auto& [name, mat] : ck.params) {
    m.param_names.push_back(name);
    m.params.push_back(mat);
  }
  m.trained = true;
  return m;
}

}  // namespace craf::stf
