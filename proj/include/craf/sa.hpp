// Situational awareness: spatial completion of sparse ZFL observations by a
// multi-head graph attention network trained with masked node regression.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
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

namespace craf::sa {

// sparse ERZ-level observation at one timestamp; zone ids are 1-based
struct Observation {
  int t = 0;
  std::map<int, double> entries;
  bool empty() const { return entries.empty(); }
  double coverage(int zone_count) const {
    return static_cast<double>(entries.size()) / zone_count;
  }
};

// standardization statistics frozen from the training ensemble
struct FeatureScaler {
  std::vector<double> mean;  // one per static feature column
  std::vector<double> stdev;
  double mean_zfl = 0.0;     // prior fallback when nothing is observed
};

struct SaHyperParams {
  int hidden_layers = 2;
  int heads = 4;
  int hidden = 32;  // concatenated width; per-head width = hidden / heads
  double lr = 5e-3;
  int max_epochs = 60;
  int patience = 8;
  int batch = 8;
  double val_fraction = 0.3;
  double clip_norm = 1.0;
};

inline constexpr int kConditioningCols = 4;  // elevation, curvature, river and outlet distance
inline constexpr int kStaticCols = worldgen::kArchetypeCount + kConditioningCols;
inline constexpr int kInputCols = 1 + kStaticCols;

// columns of the full d_w=7 conditioning matrix used by SA
inline Matrix select_conditioning(const Matrix& w_full) {
  static constexpr int kPick[kConditioningCols] = {0, 2, 5, 6};
  Matrix out(w_full.rows(), kConditioningCols);
  for (std::size_t i = 0; i < w_full.rows(); ++i)
    for (int j = 0; j < kConditioningCols; ++j) out(i, j) = w_full(i, kPick[j]);
  return out;
}

struct SaModel {
  int heads = 0;
  int hidden = 0;
  int hidden_layers = 0;
  double ratio_tag = 0.0;
  FeatureScaler scaler;
  std::vector<std::string> param_names;
  std::vector<Matrix> params;
  bool trained = false;

  int layer_count() const { return hidden_layers + 1; }
  int head_width() const { return hidden / heads; }

  int layer_in(int layer) const { return layer == 0 ? kInputCols : hidden; }
  int layer_out(int layer) const { return layer == hidden_layers ? 1 : head_width(); }

  static SaModel init(const SaHyperParams& hp, Rng& rng) {
    if (hp.hidden % hp.heads != 0)
      throw std::invalid_argument("sa: hidden width must divide evenly into heads");
    SaModel m;
    m.heads = hp.heads;
    m.hidden = hp.hidden;
    m.hidden_layers = hp.hidden_layers;
    for (int l = 0; l < m.layer_count(); ++l) {
      const int din = m.layer_in(l), dout = m.layer_out(l);
      const double limit = std::sqrt(6.0 / (din + dout));
      for (int h = 0; h < m.heads; ++h) {
        const std::string base = "l" + std::to_string(l) + ".h" + std::to_string(h) + ".";
        Matrix w(din, dout), a_src(dout, 1), a_dst(dout, 1);
        for (double& v : w.raw()) v = rng.uniform(-limit, limit);
        for (double& v : a_src.raw()) v = rng.uniform(-limit, limit);
        for (double& v : a_dst.raw()) v = rng.uniform(-limit, limit);
        m.param_names.insert(m.param_names.end(), {base + "w", base + "a_src", base + "a_dst"});
        m.params.push_back(std::move(w));
        m.params.push_back(std::move(a_src));
        m.params.push_back(std::move(a_dst));
      }
    }
    return m;
  }
};

inline FeatureScaler fit_scaler(const Matrix& static_features, double mean_zfl) {
  FeatureScaler s;
  const std::size_t m = static_features.rows(), d = static_features.cols();
  s.mean.assign(d, 0.0);
  s.stdev.assign(d, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t i = 0; i < m; ++i) s.mean[j] += static_features(i, j);
    s.mean[j] /= static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i) {
      const double dv = static_features(i, j) - s.mean[j];
      s.stdev[j] += dv * dv;
    }
    s.stdev[j] = std::sqrt(s.stdev[j] / static_cast<double>(m));
  }
  s.mean_zfl = mean_zfl;
  return s;
}

inline Matrix static_features_raw(const Matrix& e, const Matrix& w_star) {
  if (e.rows() != w_star.rows())
    throw std::invalid_argument("sa: E and W* row counts differ");
  Matrix out(e.rows(), kStaticCols);
  for (std::size_t i = 0; i < e.rows(); ++i) {
    for (std::size_t j = 0; j < e.cols(); ++j) out(i, j) = e(i, j);
    for (std::size_t j = 0; j < w_star.cols(); ++j) out(i, e.cols() + j) = w_star(i, j);
  }
  return out;
}

// Node feature matrix: column 0 carries the observed ZFL where available and
// an inverse-distance-weighted (power 2) prior elsewhere; the static columns
// are standardized with the frozen training statistics.
inline std::pair<Matrix, std::vector<std::uint8_t>> assemble_node_features(
    const Observation& obs, const Matrix& static_raw,
    const std::vector<std::pair<double, double>>& centroids, const FeatureScaler& scaler) {
  const int m = static_cast<int>(static_raw.rows());
  std::vector<std::uint8_t> observed(m, 0);
  for (const auto& [zone, value] : obs.entries) {
    if (zone < 1 || zone > m)
      throw std::invalid_argument("assemble_node_features: unknown zone id " +
                                  std::to_string(zone));
    observed[zone - 1] = 1;
  }

  Matrix x(m, kInputCols);
  for (int i = 0; i < m; ++i) {
    if (observed[i]) {
      x(i, 0) = obs.entries.at(i + 1);
    } else if (obs.entries.empty()) {
      x(i, 0) = scaler.mean_zfl;
    } else {
      double num = 0.0, den = 0.0;
      for (const auto& [zone, value] : obs.entries) {
        const double dx = centroids[i].first - centroids[zone - 1].first;
        const double dy = centroids[i].second - centroids[zone - 1].second;
        const double w = 1.0 / std::max(dx * dx + dy * dy, 1e-9);
        num += w * value;
        den += w;
      }
      x(i, 0) = num / den;
    }
    for (int j = 0; j < kStaticCols; ++j) {
      const double sd = scaler.stdev[j];
      x(i, 1 + j) = sd > 1e-12 ? (static_raw(i, j) - scaler.mean[j]) / sd : 0.0;
    }
  }
  return {std::move(x), std::move(observed)};
}

// attention participation mask: A + I > 0
inline Matrix attention_mask(const graphs::ErzGraph& g) {
  const std::size_t m = g.adjacency.rows();
  Matrix mask(m, m);
  for (std::size_t i = 0; i < m; ++i) {
    mask(i, i) = 1.0;
    for (std::size_t j = 0; j < m; ++j)
      if (g.adjacency(i, j) > 0.0) mask(i, j) = 1.0;
  }
  return mask;
}

// One multi-head GAT layer on the tape. params are grouped per head as
// (w, a_src, a_dst). Hidden layers concatenate heads and apply a smooth
// exponential-linear activation; the output layer averages heads.
inline ad::Var gat_layer(ad::Tape& t, ad::Var h, std::span<const ad::Var> head_params, int heads,
                         const Matrix& att_mask, bool output_layer) {
  const std::size_t m = t.value(h).rows();
  ad::Var ones_col = t.leaf(Matrix::ones(m, 1));
  ad::Var ones_row = t.leaf(Matrix::ones(1, m));

  ad::Var combined;
  for (int head = 0; head < heads; ++head) {
    ad::Var w = head_params[head * 3 + 0];
    ad::Var a_src = head_params[head * 3 + 1];
    ad::Var a_dst = head_params[head * 3 + 2];

    ad::Var hw = t.matmul(h, w);                      // M x dout
    ad::Var s1 = t.matmul(hw, a_src);                 // M x 1
    ad::Var s2 = t.matmul(hw, a_dst);                 // M x 1
    // e_ij = leaky(a_src . Wh_i + a_dst . Wh_j) over the masked neighborhood
    ad::Var e = t.add(t.matmul(s1, ones_row), t.matmul(ones_col, t.transpose(s2)));
    ad::Var alpha = t.masked_row_softmax(t.leaky_relu(e), att_mask);
    ad::Var out = t.matmul(alpha, hw);

    if (head == 0)
      combined = out;
    else
      combined = output_layer ? t.add(combined, out) : t.concat_cols(combined, out);
  }
  if (output_layer) return t.scale(combined, 1.0 / heads);
  return t.elu(combined);
}

inline ad::Var sa_forward(ad::Tape& t, std::span<const ad::Var> params, const SaModel& dims,
                          const Matrix& features, const Matrix& att_mask) {
  ad::Var h = t.leaf(features);
  for (int l = 0; l < dims.layer_count(); ++l) {
    const bool out_layer = l == dims.hidden_layers;
    auto layer_params = params.subspan(static_cast<std::size_t>(l) * dims.heads * 3,
                                       static_cast<std::size_t>(dims.heads) * 3);
    h = gat_layer(t, h, layer_params, dims.heads, att_mask, out_layer);
  }
  return t.sigmoid(h);
}

// uniform sample of ceil(ratio * M) observed zones; the rest form the hidden set
inline std::pair<Observation, std::vector<std::uint8_t>> mask_observations(
    const fragility::ZflSnapshot& snapshot, double ratio, std::uint64_t seed) {
  if (ratio <= 0.0 || ratio > 1.0)
    throw std::invalid_argument("mask_observations: ratio must be in (0, 1]");
  const int m = static_cast<int>(snapshot.z.size());
  const int k = static_cast<int>(std::ceil(ratio * m));
  Rng rng(seed);
  auto keep = rng.sample_without_replacement(m, std::min(k, m));
  Observation obs;
  obs.t = snapshot.t;
  std::vector<std::uint8_t> hidden(m, 1);
  for (std::size_t idx : keep) {
    obs.entries[static_cast<int>(idx) + 1] = snapshot.z[idx];
    hidden[idx] = 0;
  }
  return {std::move(obs), std::move(hidden)};
}

// zone centroids (meters) feed the IDW prior for unobserved nodes
inline fragility::ZflSnapshot sa_infer(const Observation& obs, const Matrix& w_star,
                                       const Matrix& e,
                                       const std::vector<std::pair<double, double>>& centroids,
                                       const graphs::ErzGraph& g1, const SaModel& model) {
  if (!model.trained) throw std::invalid_argument("sa_infer: model is untrained");
  const Matrix static_raw = static_features_raw(e, w_star);
  auto [features, observed] = assemble_node_features(obs, static_raw, centroids, model.scaler);

  ad::Tape tape;
  std::vector<ad::Var> pvars;
  pvars.reserve(model.params.size());
  for (const Matrix& p : model.params) pvars.push_back(tape.leaf(p));
  const Matrix mask = attention_mask(g1);
  ad::Var out = sa_forward(tape, pvars, model, features, mask);

  fragility::ZflSnapshot snap;
  snap.t = obs.t;
  snap.z.resize(static_raw.rows());
  for (std::size_t i = 0; i < snap.z.size(); ++i) snap.z[i] = tape.value(out)(i, 0);
  // observed zones are clamped to the reported values bit-exactly
  for (const auto& [zone, value] : obs.entries) snap.z[zone - 1] = value;
  return snap;
}

struct SaTrainReport {
  std::vector<double> epoch_train_loss;
  std::vector<double> epoch_val_mae;
  int best_epoch = -1;
};

inline SaModel sa_train(const std::vector<fragility::ZflTrajectory>& trajectories, double ratio,
                        const graphs::ErzGraph& g1, const Matrix& w_star, const Matrix& e,
                        const std::vector<std::pair<double, double>>& centroids,
                        const SaHyperParams& hp, std::uint64_t seed,
                        SaTrainReport* report = nullptr) {
  if (ratio <= 0.0 || ratio >= 1.0)
    throw std::invalid_argument("sa_train: ratio must be in (0, 1)");
  if (trajectories.empty()) throw std::invalid_argument("sa_train: no training trajectories");

  // 7:3 storm-level split
  Rng split_rng = Rng(seed).fork(1);
  std::vector<std::size_t> order(trajectories.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  split_rng.shuffle(order);
  const std::size_t val_count = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::lround(hp.val_fraction * trajectories.size())));
  const std::size_t train_count = trajectories.size() - val_count;

  std::vector<fragility::ZflSnapshot> train_snaps, val_snaps;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto& traj = trajectories[order[i]];
    for (int h = 0; h < traj.hours(); ++h) {
      if (i < train_count)
        train_snaps.push_back(traj.snapshot(h));
      else
        val_snaps.push_back(traj.snapshot(h));
    }
  }

  double mean_zfl = 0.0;
  std::size_t n_vals = 0;
  for (const auto& s : train_snaps)
    for (double v : s.z) {
      mean_zfl += v;
      ++n_vals;
    }
  mean_zfl /= static_cast<double>(n_vals);

  Rng init_rng = Rng(seed).fork(2);
  SaModel model = SaModel::init(hp, init_rng);
  model.ratio_tag = ratio;
  const Matrix static_raw = static_features_raw(e, w_star);
  model.scaler = fit_scaler(static_raw, mean_zfl);

  const Matrix att_mask = attention_mask(g1);
  const int m = static_cast<int>(static_raw.rows());

  ad::AdamState adam;
  adam.lr = hp.lr;

  std::vector<Matrix> grad_sum(model.params.size());
  const auto zero_grads = [&]() {
    for (std::size_t i = 0; i < model.params.size(); ++i)
      grad_sum[i] = Matrix(model.params[i].rows(), model.params[i].cols());
  };

  // loss over the hidden nodes of one snapshot; adds gradients into grad_sum
  const auto run_sample = [&](const fragility::ZflSnapshot& snap, std::uint64_t mask_seed,
                              bool with_grad) {
    auto [obs, hidden] = mask_observations(snap, ratio, mask_seed);
    auto [features, observed] =
        assemble_node_features(obs, static_raw, centroids, model.scaler);
    ad::Tape tape;
    std::vector<ad::Var> pvars;
    for (const Matrix& p : model.params) pvars.push_back(tape.leaf(p));
    ad::Var out = sa_forward(tape, pvars, model, features, att_mask);
    Matrix target(m, 1), loss_mask(m, 1);
    for (int i = 0; i < m; ++i) {
      target(i, 0) = snap.z[i];
      loss_mask(i, 0) = hidden[i] ? 1.0 : 0.0;
    }
    ad::Var loss = tape.masked_mse(out, target, loss_mask);
    const double lv = tape.value(loss)(0, 0);
    if (!std::isfinite(lv))
      throw std::runtime_error("sa_train: non-finite loss at snapshot t=" +
                               std::to_string(snap.t));
    if (with_grad) {
      tape.backward(loss);
      for (std::size_t i = 0; i < model.params.size(); ++i) {
        const Matrix& g = tape.grad(pvars[i]);
        for (std::size_t k = 0; k < g.size(); ++k) grad_sum[i].raw()[k] += g.raw()[k];
      }
    }
    return lv;
  };

  const auto val_mae = [&]() {
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t s = 0; s < val_snaps.size(); ++s) {
      auto [obs, hidden] = mask_observations(val_snaps[s], ratio, seed ^ (0xabcd0000 + s));
      auto [features, observed] =
          assemble_node_features(obs, static_raw, centroids, model.scaler);
      ad::Tape tape;
      std::vector<ad::Var> pvars;
      for (const Matrix& p : model.params) pvars.push_back(tape.leaf(p));
      ad::Var out = sa_forward(tape, pvars, model, features, att_mask);
      for (int i = 0; i < m; ++i)
        if (hidden[i]) {
          total += std::abs(tape.value(out)(i, 0) - val_snaps[s].z[i]);
          ++count;
        }
    }
    return total / std::max<std::size_t>(count, 1);
  };

  Rng epoch_rng = Rng(seed).fork(3);
  std::vector<Matrix> best_params = model.params;
  double best_val = 1e300;
  int best_epoch = -1, stall = 0;

  std::vector<std::size_t> idx(train_snaps.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;

  for (int epoch = 0; epoch < hp.max_epochs; ++epoch) {
    epoch_rng.shuffle(idx);
    double epoch_loss = 0.0;
    std::size_t in_batch = 0;
    zero_grads();
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const std::uint64_t mask_seed =
          seed ^ (static_cast<std::uint64_t>(epoch) << 32) ^ (idx[k] * 2654435761ULL);
      epoch_loss += run_sample(train_snaps[idx[k]], mask_seed, true);
      ++in_batch;
      if (in_batch == static_cast<std::size_t>(hp.batch) || k + 1 == idx.size()) {
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
    epoch_loss /= static_cast<double>(idx.size());

    const double vm = val_mae();
    if (report) {
      report->epoch_train_loss.push_back(epoch_loss);
      report->epoch_val_mae.push_back(vm);
    }
    if (vm < best_val - 1e-6) {
      best_val = vm;
      best_params = model.params;
      best_epoch = epoch;
      stall = 0;
    } else if (++stall >= hp.patience) {
      break;
    }
  }

  model.params = std::move(best_params);
  model.trained = true;
  if (report) report->best_epoch = best_epoch;
  return model;
}

inline ckpt::Checkpoint to_checkpoint(const SaModel& m) {
  ckpt::Checkpoint ck;
  ck.header["kind"] = "sa";
  ck.header["heads"] = std::to_string(m.heads);
  ck.header["hidden"] = std::to_string(m.hidden);
  ck.header["hidden_layers"] = std::to_string(m.hidden_layers);
  ck.header["ratio"] = io::fmt_g17(m.ratio_tag);
  ck.header["scaler_mean"] = ckpt::vec_to_str(m.scaler.mean);
  ck.header["scaler_std"] = ckpt::vec_to_str(m.scaler.stdev);
  ck.header["scaler_mean_zfl"] = io::fmt_g17(m.scaler.mean_zfl);
  for (std::size_t i = 0; i < m.params.size(); ++i)
    ck.params.emplace_back(m.param_names[i], m.params[i]);
  return ck;
}

inline SaModel from_checkpoint(const ckpt::Checkpoint& ck) {
  if (ck.header_at("kind") != "sa") throw std::runtime_error("checkpoint kind is not sa");
  SaModel m;
  m.heads = std::stoi(ck.header_at("heads"));
  m.hidden = std::stoi(ck.header_at("hidden"));
  m.hidden_layers = std::stoi(ck.header_at("hidden_layers"));
  m.ratio_tag = io::parse_double(ck.header_at("ratio"));
  m.scaler.mean = ckpt::str_to_vec(ck.header_at("scaler_mean"));
  m.scaler.stdev = ckpt::str_to_vec(ck.header_at("scaler_std"));
  m.scaler.mean_zfl = io::parse_double(ck.header_at("scaler_mean_zfl"));
  for (const auto& [name, mat] : ck.params) {
    m.param_names.push_back(name);
    m.params.push_back(mat);
  }
  m.trained = true;
  return m;
}

}  // namespace craf::sa
